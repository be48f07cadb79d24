//! Command-line front end for the anticipation experiments.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use anticipate_core::datagen::{generate, read_dataset, write_dataset};
use anticipate_core::harness::{
    ablate_arch, ablate_features, cam_demo, compare_losses, evaluate_curve, run_training,
    write_csv, CsvRow, ExperimentConfig, ExperimentResult, FeatureMode, summarize,
};
use anticipate_core::model::{load_model, save_model};

#[derive(Parser)]
#[command(name = "anticipate", about = "Early action anticipation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (`key = value` lines); defaults apply if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override temporal average pooling at inference.
    #[arg(long, value_parser = ["on", "off"])]
    avg_pool: Option<String>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(pool) = &self.avg_pool {
            cfg.avg_pool = pool == "on";
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset; writes train.txt and test.txt.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train one model (first configured loss and variant) and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path.
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split; writes an accuracy-curve CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (falls back to the config's `checkpoint`).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long, default_value = "eval.csv")]
        out: PathBuf,
    },
    /// Train every configured loss across seeds; report pooled and unpooled curves.
    CompareLosses {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "compare_losses.csv")]
        out: PathBuf,
    },
    /// Compare context-only and action-only baselines with the full model.
    AblateFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ablate_features.csv")]
        out: PathBuf,
    },
    /// Compare the four stream-fusion architectures.
    AblateArch {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ablate_arch.csv")]
        out: PathBuf,
    },
    /// Run class-activation mapping on a stored activation volume.
    CamDemo {
        /// Activation volume file (`H W L` header).
        #[arg(long)]
        volume: PathBuf,
        /// Classifier weight file (`L N` header).
        #[arg(long)]
        weights: PathBuf,
        /// Output directory for cam.txt, masked.txt, cam.pgm.
        #[arg(long, default_value = "cam_out")]
        out: PathBuf,
    },
}

fn splits(
    cfg: &ExperimentConfig,
    seed: u64,
) -> anyhow::Result<(
    Vec<anticipate_core::datagen::LabeledSequence>,
    Vec<anticipate_core::datagen::LabeledSequence>,
)> {
    match &cfg.dataset {
        Some(dir) => {
            let train = read_dataset(&dir.join("train.txt"))?;
            let test = read_dataset(&dir.join("test.txt"))?;
            Ok((train, test))
        }
        None => Ok(generate(&cfg.data, seed)?),
    }
}

fn report(result: &ExperimentResult, out: &PathBuf) -> anyhow::Result<()> {
    write_csv(result, out)?;
    println!("wrote {} rows to {}", result.rows.len(), out.display());
    for s in &result.summary {
        println!(
            "{} / {}: earliest {:.4}, latest {:.4}",
            s.loss, s.variant, s.earliest, s.latest
        );
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Gen { common, out } => {
            let cfg = common.load()?;
            let seed = cfg.seeds[0];
            let (train, test) = generate(&cfg.data, seed)?;
            std::fs::create_dir_all(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            write_dataset(&train, &out.join("train.txt"))?;
            write_dataset(&test, &out.join("test.txt"))?;
            println!(
                "wrote {} train / {} test sequences to {}",
                train.len(),
                test.len(),
                out.display()
            );
        }
        Command::Train { common, out } => {
            let cfg = common.load()?;
            let seed = cfg.seeds[0];
            let kind = cfg.kinds[0];
            let mode = FeatureMode::Combined(cfg.variants[0]);
            let (train, _) = splits(&cfg, seed)?;
            let (model, log) = run_training(&cfg, &train, kind, mode, seed)?;
            save_model(&model, &out)?;
            for (epoch, loss) in log.iter().enumerate() {
                println!("epoch {:>3}  loss {loss:.6}", epoch + 1);
            }
            println!("saved checkpoint to {}", out.display());
        }
        Command::Eval { common, model, out } => {
            let cfg = common.load()?;
            let seed = cfg.seeds[0];
            let path = match model.or_else(|| cfg.checkpoint.clone()) {
                Some(p) => p,
                None => bail!("no checkpoint given; pass --model or set `checkpoint` in config"),
            };
            let model = load_model(&path)?;
            let mode = FeatureMode::Combined(model.variant);
            let (_, test) = splits(&cfg, seed)?;
            let curve = evaluate_curve(&model, &test, mode, cfg.avg_pool)?;
            let tag = if cfg.avg_pool { "pooled" } else { "unpooled" };
            let rows: Vec<CsvRow> = curve
                .iter()
                .enumerate()
                .map(|(i, acc)| CsvRow {
                    loss: "eval".to_string(),
                    variant: tag.to_string(),
                    seed,
                    k: i + 1,
                    accuracy: *acc,
                })
                .collect();
            let summary = summarize(&rows);
            report(&ExperimentResult { rows, summary }, &out)?;
        }
        Command::CompareLosses { common, out } => {
            report(&compare_losses(&common.load()?)?, &out)?;
        }
        Command::AblateFeatures { common, out } => {
            report(&ablate_features(&common.load()?)?, &out)?;
        }
        Command::AblateArch { common, out } => {
            report(&ablate_arch(&common.load()?)?, &out)?;
        }
        Command::CamDemo { volume, weights, out } => {
            let r = cam_demo(&volume, &weights, &out)?;
            println!(
                "class {}  score {}  map sum {}  (identity gap {:e})",
                r.class,
                r.score,
                r.map_sum,
                (r.score - r.map_sum).abs()
            );
            println!("wrote cam.txt, masked.txt, cam.pgm to {}", out.display());
        }
    }
    Ok(())
}
