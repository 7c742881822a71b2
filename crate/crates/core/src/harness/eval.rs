use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensors::image_tensor;
use crate::data::{preprocess, ModelPair, SegmentationCase};
use crate::metrics::{
    dice_coefficient, ged_squared_class, hausdorff_distance, ncc_score_class, Aggregate, LabelMap, MetricRecord,
    SampleSet, Spacing,
};
use crate::network::VaeUnet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvalMode {
    /// One prediction from mean latents.
    Prior,
    /// `n` predictions from independent latent draws.
    Sample { n: usize },
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalMode::Prior => write!(f, "prior"),
            EvalMode::Sample { n } => write!(f, "sample({n})"),
        }
    }
}

/// Per-sample and per-case metric records with their aggregates.
///
/// Records with `sample = Some(i)` carry Dice and Hausdorff distances of
/// prediction `i`. Records with `sample = None` summarise a case's whole
/// prediction set with GED² and NCC against all annotations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub seed: u64,
    pub records: Vec<MetricRecord>,
    pub aggregates: BTreeMap<String, Aggregate>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportLine<'a> {
    Header { mode: String, seed: u64 },
    Record(&'a MetricRecord),
    Aggregate { metric: &'a str, mean: f64, variance: f64, count: usize, undefined: usize },
}

impl EvalReport {
    pub fn new(mode: EvalMode, seed: u64, records: Vec<MetricRecord>) -> Self {
        let aggregates = Self::aggregate(&records);
        Self {
            mode,
            seed,
            records,
            aggregates,
        }
    }

    /// Means and variances over records: overlap and boundary metrics from
    /// per-sample records, distribution metrics from per-case ones.
    pub fn aggregate(records: &[MetricRecord]) -> BTreeMap<String, Aggregate> {
        let per_sample = || records.iter().filter(|r| r.sample.is_some());
        let per_case = || records.iter().filter(|r| r.sample.is_none());
        let mut out = BTreeMap::new();
        out.insert("dice".into(), Aggregate::from_values(per_sample().map(|r| r.dice)));
        out.insert("hd".into(), Aggregate::from_values(per_sample().map(|r| r.hd)));
        out.insert("hd95".into(), Aggregate::from_values(per_sample().map(|r| r.hd95)));
        out.insert("ged2".into(), Aggregate::from_values(per_case().map(|r| r.ged2)));
        out.insert("ncc".into(), Aggregate::from_values(per_case().map(|r| r.ncc)));
        out
    }

    /// One JSON object per line: a header, every record, then aggregates.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut lines = vec![serde_json::to_string(&ReportLine::Header {
            mode: self.mode.to_string(),
            seed: self.seed,
        })?];
        for r in &self.records {
            lines.push(serde_json::to_string(&ReportLine::Record(r))?);
        }
        for (metric, a) in &self.aggregates {
            lines.push(serde_json::to_string(&ReportLine::Aggregate {
                metric,
                mean: a.mean,
                variance: a.variance,
                count: a.count,
                undefined: a.undefined,
            })?);
        }
        Ok(lines.join("\n") + "\n")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregates.get(metric).map(|a| a.mean)
    }
}

/// Per-case noise seed, distinct for every case position.
pub(crate) fn case_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Pixel spacing of the output grid, given the spacing of the original.
fn output_spacing(case: &SegmentationCase, output_size: [usize; 2]) -> Option<Spacing> {
    case.spacing.map(|s| Spacing {
        row: s.row * case.height() as f64 / output_size[0] as f64,
        col: s.col * case.width() as f64 / output_size[1] as f64,
    })
}

pub(crate) fn check_classes(model: &VaeUnet, cases: &[SegmentationCase]) -> Result<()> {
    let k = model.config().class_count;
    for c in cases {
        if c.label_bound() > k {
            return Err(Error::Case {
                case_id: c.case_id.clone(),
                message: format!("labels reach {} but the model predicts {k} classes", c.label_bound() - 1),
            });
        }
        if c.image.dim().0 != model.config().in_channels {
            return Err(Error::Case {
                case_id: c.case_id.clone(),
                message: format!(
                    "image has {} channels, model expects {}",
                    c.image.dim().0,
                    model.config().in_channels
                ),
            });
        }
    }
    Ok(())
}

/// Maps a prediction is scored against: the reference when known,
/// otherwise every annotation.
fn truths(pair: &ModelPair) -> Vec<&LabelMap> {
    match &pair.reference {
        Some(r) => vec![r],
        None => pair.annotations.iter().collect(),
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Predictions for one preprocessed case under `mode`.
pub(crate) fn predict(model: &VaeUnet, pair: &ModelPair, mode: EvalMode, seed: u64) -> Result<SampleSet> {
    let x = image_tensor(&[&pair.image], model.dtype(), model.device())?;
    match mode {
        EvalMode::Prior => SampleSet::new(model.predict_prior(&x)?),
        EvalMode::Sample { n } => model.predict_samples(&x, n, seed),
    }
}

/// Records for one case given its predictions.
pub fn case_scores(
    pair: &ModelPair,
    preds: &SampleSet,
    class_count: usize,
    spacing: Option<Spacing>,
) -> Result<Vec<MetricRecord>> {
    let truth = truths(pair);
    let annotations = SampleSet::new(pair.annotations.clone())?;
    let mut records = Vec::new();
    for class in 1..class_count as u8 {
        for (i, s) in preds.samples().iter().enumerate() {
            let mut r = MetricRecord::new(&pair.case_id, class, Some(i));
            let dice: Vec<Option<f64>> = truth
                .iter()
                .map(|t| dice_coefficient(s, t, class).map(Some))
                .collect::<Result<_>>()?;
            r.dice = mean_defined(dice.into_iter());
            let hd = |p: f64| -> Result<Option<f64>> {
                let v = truth
                    .iter()
                    .map(|t| hausdorff_distance(s, t, class, p, spacing))
                    .collect::<Result<Vec<_>>>()?;
                Ok(mean_defined(v.into_iter()))
            };
            r.hd = hd(100.0)?;
            r.hd95 = hd(95.0)?;
            records.push(r);
        }
        let mut summary = MetricRecord::new(&pair.case_id, class, None);
        summary.ged2 = Some(ged_squared_class(preds, &annotations, class)?);
        summary.ncc = Some(ncc_score_class(preds, &annotations, class)?);
        records.push(summary);
    }
    Ok(records)
}

/// Scores `model` on every case. The class count is checked for all cases
/// before any inference runs.
pub fn evaluate(model: &VaeUnet, cases: &[SegmentationCase], mode: EvalMode, seed: u64) -> Result<EvalReport> {
    if let EvalMode::Sample { n: 0 } = mode {
        return Err(Error::invalid("sample mode needs n >= 1"));
    }
    check_classes(model, cases)?;
    let cfg = model.config();
    let mut records = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        case.validate()?;
        let pair = preprocess(case, cfg.input_size, cfg.output_size);
        let preds = predict(model, &pair, mode, case_seed(seed, i))?;
        records.extend(case_scores(&pair, &preds, cfg.class_count, output_spacing(case, cfg.output_size))?);
    }
    Ok(EvalReport::new(mode, seed, records))
}

/// Mean foreground Dice of prior predictions, batched.
pub(crate) fn prior_dice(model: &VaeUnet, pairs: &[ModelPair], batch: usize) -> Result<f64> {
    let k = model.config().class_count;
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in pairs.chunks(batch.max(1)) {
        let images: Vec<_> = chunk.iter().map(|p| &p.image).collect();
        let x = image_tensor(&images, model.dtype(), model.device())?;
        for (pair, pred) in chunk.iter().zip(model.predict_prior(&x)?) {
            for class in 1..k as u8 {
                for t in truths(pair) {
                    sum += dice_coefficient(&pred, t, class)?;
                    count += 1;
                }
            }
        }
    }
    Ok(if count == 0 { f64::NAN } else { sum / count as f64 })
}
