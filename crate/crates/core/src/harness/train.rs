use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AnnotatorPolicy, TrainConfig};
use super::eval::{check_classes, prior_dice};
use super::optim::Sgd;
use super::tensors::{image_tensor, one_hot_tensor};
use crate::data::{preprocess, ModelPair, SegmentationCase};
use crate::latent::{scalar_value, SeededNoise};
use crate::losses::elbo_loss;
use crate::network::{save_checkpoint, VaeUnet};
use crate::{Error, Result};

/// Epoch means of the loss terms plus validation Dice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub total: f64,
    pub cross_entropy: f64,
    pub dice: f64,
    pub kl: f64,
    /// Prior-mode foreground Dice on the held-out cases.
    pub val_dice: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Weights after the final step.
    pub model: VaeUnet,
    pub history: Vec<EpochStats>,
    /// Epoch (1-based) with the highest validation Dice.
    pub best_epoch: Option<usize>,
    pub best_val_dice: Option<f64>,
}

/// Sorts by case id and holds out the trailing `val_fraction`, always
/// leaving at least one training case.
pub fn split_cases(cases: &[SegmentationCase], val_fraction: f64) -> (Vec<&SegmentationCase>, Vec<&SegmentationCase>) {
    let mut sorted: Vec<&SegmentationCase> = cases.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let n = sorted.len();
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    let val = sorted.split_off(n - n_val);
    (sorted, val)
}

fn pick_annotation<R: Rng>(pair: &ModelPair, policy: AnnotatorPolicy, rng: &mut R) -> usize {
    let n = pair.annotations.len();
    match policy {
        AnnotatorPolicy::Random => rng.gen_range(0..n),
        AnnotatorPolicy::Fixed(k) => k.min(n - 1),
    }
}

/// Trains a fresh model. With `out_dir`, writes `loss_curve.jsonl` as
/// epochs finish, `best.safetensors` whenever validation Dice improves,
/// and `last.safetensors` plus `config.toml` at the end.
pub fn train(cfg: &TrainConfig, cases: &[SegmentationCase], out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::invalid("training needs at least one case"));
    }
    for c in cases {
        c.validate()?;
    }
    let model = VaeUnet::new(cfg.model.clone(), cfg.seed)?;
    check_classes(&model, cases)?;

    let (train_cases, val_cases) = split_cases(cases, cfg.val_fraction);
    let [ih, iw] = cfg.model.input_size;
    let [oh, ow] = cfg.model.output_size;
    let train_pairs: Vec<ModelPair> = train_cases.iter().map(|c| preprocess(c, [ih, iw], [oh, ow])).collect();
    let val_pairs: Vec<ModelPair> = val_cases.iter().map(|c| preprocess(c, [ih, iw], [oh, ow])).collect();

    let mut curve = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("config.toml"), cfg.to_text())?;
            Some(File::create(dir.join("loss_curve.jsonl"))?)
        }
        None => None,
    };
    let ckpt = |name: &str| -> Option<PathBuf> { out_dir.map(|d| d.join(name)) };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut noise = SeededNoise::new(cfg.seed.wrapping_add(2));
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let steps_per_epoch = train_pairs.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let k = cfg.model.class_count;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut seen = 0usize;
        let mut lr = cfg.learning_rate;
        for batch in order.chunks(cfg.batch_size) {
            lr = cfg.lr_schedule.rate(cfg.learning_rate, cfg.lr_decay, step, total_steps);
            let pairs: Vec<&ModelPair> = batch.iter().map(|&i| &train_pairs[i]).collect();
            let images: Vec<_> = pairs.iter().map(|p| &p.image).collect();
            let labels: Vec<_> = pairs
                .iter()
                .map(|p| &p.annotations[pick_annotation(p, cfg.annotator, &mut rng)])
                .collect();
            let x = image_tensor(&images, model.dtype(), model.device())?;
            let y = one_hot_tensor(&labels, k, model.dtype(), model.device())?;

            let trace = model.forward_train(&x, &y, &mut noise)?;
            let logit_peak = scalar_value(&trace.logits.abs()?.max_all()?)?;
            if !logit_peak.is_finite() {
                return Err(Error::Diverged { step, loss: f64::NAN });
            }
            let loss = elbo_loss(&trace, &y, &cfg.loss)?;
            let v = loss.values(&cfg.loss)?;
            if !v.total.is_finite() {
                return Err(Error::Diverged { step, loss: v.total });
            }
            let grads = loss.total.backward()?;
            opt.step(model.params(), &grads, lr)?;

            let b = batch.len() as f64;
            for (s, x) in sums.iter_mut().zip([v.total, v.cross_entropy, v.dice, v.kl]) {
                *s += x * b;
            }
            seen += batch.len();
            step += 1;
        }

        let val_dice = if val_pairs.is_empty() {
            None
        } else {
            Some(prior_dice(&model, &val_pairs, cfg.batch_size)?)
        };
        let n = seen as f64;
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            total: sums[0] / n,
            cross_entropy: sums[1] / n,
            dice: sums[2] / n,
            kl: sums[3] / n,
            val_dice,
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.4} (ce {:.4}, dice {:.4}, kl {:.4}) val dice {}",
            cfg.epochs,
            stats.total,
            stats.cross_entropy,
            stats.dice,
            stats.kl,
            val_dice.map_or("-".into(), |d| format!("{d:.4}"))
        );
        if let Some(f) = curve.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&stats)?)?;
        }
        if let Some(d) = val_dice {
            if best.is_none_or(|(_, b)| d > b) {
                best = Some((epoch, d));
                if let Some(p) = ckpt("best.safetensors") {
                    save_checkpoint(&model, p)?;
                }
            }
        }
        history.push(stats);
    }

    if let Some(p) = ckpt("last.safetensors") {
        save_checkpoint(&model, &p)?;
        if best.is_none() {
            std::fs::copy(&p, ckpt("best.safetensors").expect("out dir set"))?;
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: best.map(|b| b.0),
        best_val_dice: best.map(|b| b.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_toy_dataset, ToySpec};
    use crate::network::{load_checkpoint, ModelConfig};

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            epochs,
            learning_rate: 0.05,
            val_fraction: 0.25,
            model: ModelConfig {
                encoder_channels: vec![4, 8, 16],
                input_size: [16, 16],
                output_size: [16, 16],
                ..ModelConfig::toy()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn split_is_sorted_and_keeps_training_cases() {
        let mut cases = make_toy_dataset(&ToySpec::new(0, 5, 16, 0.0)).unwrap();
        cases.reverse();
        let (tr, va) = split_cases(&cases, 0.2);
        assert_eq!(tr.iter().map(|c| c.case_id.as_str()).collect::<Vec<_>>(), ["toy_0000", "toy_0001", "toy_0002", "toy_0003"]);
        assert_eq!(va[0].case_id, "toy_0004");
        let (tr, va) = split_cases(&cases[..1], 0.9);
        assert_eq!((tr.len(), va.len()), (1, 0));
    }

    #[test]
    fn one_epoch_smoke_writes_loadable_checkpoints() {
        let cases = make_toy_dataset(&ToySpec::new(3, 4, 16, 0.5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = train(&small_cfg(1), &cases, Some(dir.path())).unwrap();
        assert_eq!(out.history.len(), 1);
        assert!(out.history[0].total.is_finite());
        for name in ["last.safetensors", "best.safetensors"] {
            load_checkpoint(dir.path().join(name), Some(2)).unwrap();
        }
        let curve = std::fs::read_to_string(dir.path().join("loss_curve.jsonl")).unwrap();
        assert_eq!(curve.lines().count(), 1);
    }

    #[test]
    fn training_is_seeded() {
        let cases = make_toy_dataset(&ToySpec::new(3, 4, 16, 0.5)).unwrap();
        let a = train(&small_cfg(2), &cases, None).unwrap();
        let b = train(&small_cfg(2), &cases, None).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn divergence_reports_step() {
        let cases = make_toy_dataset(&ToySpec::new(3, 4, 16, 0.5)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e30,
            ..small_cfg(3)
        };
        match train(&cfg, &cases, None) {
            Err(Error::Diverged { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
