use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use vae_unet::data::{load_case, load_cases, make_toy_dataset, write_case, Layout, ToySpec};
use vae_unet::harness::{
    count_parameters, count_parameters_for, evaluate, export_latent_stats, export_uncertainty, ood_battery, train,
    EvalMode, OodKind, OodParams, TrainConfig,
};
use vae_unet::network::load_checkpoint;

#[derive(Parser)]
#[command(name = "vae-unet", version, about = "VAE U-net segmentation with uncertainty estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Prior,
    Sample,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic disk dataset in the standard layout.
    MakeToy {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        cases: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0.5)]
        ambiguity: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoints and a loss curve into --out.
    Train {
        /// Flat key/value config; omitted keys take the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Prior)]
        mode: Mode,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "multi_annotator")]
        layout: Layout,
    },
    /// Export the sample-variance heatmap of one case.
    Uncertainty {
        #[arg(long)]
        ckpt: PathBuf,
        /// Case directory.
        #[arg(long)]
        case: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "multi_annotator")]
        layout: Layout,
    },
    /// Uncertainty under blur, pasted patches and foreign images.
    Ood {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        case: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "blur,patch")]
        kinds: Vec<OodKind>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        sigma: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        ratio: f64,
        /// Image used by the `external` kind.
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "multi_annotator")]
        layout: Layout,
    },
    /// Count trainable parameters per module.
    Params {
        #[arg(long, conflicts_with = "ckpt", required_unless_present = "ckpt")]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Export per-level latent means and log-variances of one case.
    Latents {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "multi_annotator")]
        layout: Layout,
    },
}

fn read_dataset(root: &Path, layout: Layout) -> anyhow::Result<Vec<vae_unet::data::SegmentationCase>> {
    let cases = load_cases(root, layout)
        .with_context(|| format!("reading {}", root.display()))?
        .collect::<Result<Vec<_>, _>>()?;
    if cases.is_empty() {
        bail!("no cases under {}", root.display());
    }
    Ok(cases)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::MakeToy {
            seed,
            cases,
            size,
            ambiguity,
            out,
        } => {
            let set = make_toy_dataset(&ToySpec::new(seed, cases, size, ambiguity))?;
            std::fs::create_dir_all(&out)?;
            for c in &set {
                write_case(&out, c, Layout::MultiAnnotator)?;
            }
            println!("wrote {} cases to {}", set.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            seed,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::from_file(&p).with_context(|| format!("config {}", p.display()))?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let cases = read_dataset(&data, cfg.layout)?;
            let outcome = train(&cfg, &cases, Some(&out))?;
            let last = outcome.history.last().expect("at least one epoch");
            println!(
                "trained {} epochs: final loss {:.5}, best val dice {}",
                outcome.history.len(),
                last.total,
                outcome.best_val_dice.map_or("-".into(), |d| format!("{d:.4}"))
            );
        }
        Command::Eval {
            ckpt,
            data,
            mode,
            n,
            seed,
            report,
            layout,
        } => {
            let model = load_checkpoint(&ckpt, None)?;
            let cases = read_dataset(&data, layout)?;
            let mode = match mode {
                Mode::Prior => EvalMode::Prior,
                Mode::Sample => EvalMode::Sample { n },
            };
            let r = evaluate(&model, &cases, mode, seed)?;
            r.write(&report)?;
            for (metric, a) in &r.aggregates {
                println!("{metric:<5} mean {:.5} var {:.5} (n={})", a.mean, a.variance, a.count);
            }
        }
        Command::Uncertainty {
            ckpt,
            case,
            n,
            seed,
            out,
            layout,
        } => {
            let model = load_checkpoint(&ckpt, None)?;
            let case = load_case(&case, layout)?;
            let map = export_uncertainty(&model, &case, n, seed, &out)?;
            println!("mean uncertainty {:.5}, written to {}", map.mean(), out.display());
        }
        Command::Ood {
            ckpt,
            case,
            kinds,
            sigma,
            ratio,
            external,
            n,
            seed,
            out,
            layout,
        } => {
            let model = load_checkpoint(&ckpt, None)?;
            let case = load_case(&case, layout)?;
            let params = OodParams {
                sigmas: sigma,
                ratio,
                external,
                samples: n,
                ..OodParams::default()
            };
            std::fs::create_dir_all(&out)?;
            let report = ood_battery(&model, &case, &kinds, &params, seed, Some(&out))?;
            for e in &report.entries {
                println!(
                    "{:<16} {:<15} inside {:.5} outside {:.5}",
                    e.label, e.region, e.inside_mean, e.outside_mean
                );
            }
        }
        Command::Params { config, ckpt } => {
            let table = match (config, ckpt) {
                (_, Some(p)) => count_parameters(&load_checkpoint(&p, None)?),
                (Some(p), None) => count_parameters_for(&TrainConfig::from_file(&p)?.model)?,
                (None, None) => unreachable!("clap requires one source"),
            };
            println!("{table}");
        }
        Command::Latents {
            ckpt,
            case,
            out,
            layout,
        } => {
            let model = load_checkpoint(&ckpt, None)?;
            let case = load_case(&case, layout)?;
            for p in export_latent_stats(&model, &case, &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
