use std::collections::BTreeMap;
use std::fmt;

use candle_core::{DType, Device};
use serde::Serialize;

use crate::network::{ModelConfig, ParamStore, VaeUnet};
use crate::Result;

/// Trainable scalar counts grouped by module.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParameterTable {
    /// `(module, count)` in name order, e.g. `("q_heads.level1", 74)`.
    pub modules: Vec<(String, usize)>,
    pub total: usize,
}

/// Parameter names minus their trailing component, with the layer inside
/// an encoder level folded into the level.
fn module_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    let keep = match parts.first() {
        Some(&"classifier") => 1,
        _ => 2.min(parts.len() - 1).max(1),
    };
    parts[..keep].join(".")
}

pub fn count_store(store: &ParamStore) -> ParameterTable {
    let mut groups: BTreeMap<String, usize> = BTreeMap::new();
    for (name, var) in store.iter() {
        *groups.entry(module_of(name)).or_default() += var.elem_count();
    }
    let total = groups.values().sum();
    ParameterTable {
        modules: groups.into_iter().collect(),
        total,
    }
}

pub fn count_parameters(model: &VaeUnet) -> ParameterTable {
    count_store(model.params())
}

/// Counts by instantiating the architecture; weights are never trained.
pub fn count_parameters_for(cfg: &ModelConfig) -> Result<ParameterTable> {
    let model = VaeUnet::with_dtype(cfg.clone(), 0, DType::F32, Device::Cpu)?;
    Ok(count_parameters(&model))
}

impl fmt::Display for ParameterTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.modules.iter().map(|(m, _)| m.len()).max().unwrap_or(5).max(5);
        for (m, n) in &self.modules {
            writeln!(f, "{m:<width$}  {n:>12}")?;
        }
        writeln!(f, "{:<width$}  {:>12}", "total", self.total)?;
        write!(f, "{:<width$}  {:>12.2}M", "", self.total as f64 / 1e6)
    }
}
