//! The `bgsplit` command line. Exit codes: 0 success, 1 usage error,
//! 2 runtime error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use bgsplit_core::dataset::{
    build_bg_manifest, downsample_background, generate_synthetic_longtail, manifest_stats,
    SyntheticSpec,
};
use bgsplit_core::metrics::evaluate;
use bgsplit_core::trainer::{
    freeze_trunk_and_retrain_head, train, Sampling, TrainConfig,
};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::manifest::{read_manifest, write_manifest};
use crate::report::{write_report_csv, write_report_json, write_train_log_csv, ReportFile};
use crate::runner::{self, RunRecord};
use crate::spec::{ExperimentSpec, PseudoLabelSpec};
use crate::{presets, Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "bgsplit",
    about = "Train and evaluate rare-category classifiers against a dominant background",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic long-tail source manifest.
    Synth(SynthArgs),
    /// Remap a source manifest onto foreground categories + background.
    Build(BuildArgs),
    /// Downsample background training examples.
    Downsample(DownsampleArgs),
    /// Attach auxiliary pseudo-labels to a manifest.
    Pseudolabel(PseudolabelArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Re-initialize and retrain the main head of a checkpoint with the
    /// trunk frozen.
    RetrainHead(RetrainHeadArgs),
    /// Evaluate a checkpoint on a manifest's test split.
    Eval(EvalArgs),
    /// Print manifest statistics as JSON.
    Stats(StatsArgs),
    /// Write a bundled experiment spec to a file.
    Spec(SpecArgs),
    /// Run the ft/aux/thresh/both factor analysis from a spec file.
    FactorAnalysis(RunArgs),
    /// Run the pseudo-label source study from a spec file.
    PseudolabelStudy(RunArgs),
    /// Run a one-axis sweep from a spec file.
    Sweep(RunArgs),
    /// Run the feature-transfer study from a spec file.
    TransferStudy(RunArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 55)]
    pub categories: usize,
    #[arg(long, default_value_t = 1.0)]
    pub zipf_s: f64,
    #[arg(long, default_value_t = 23_530)]
    pub total: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 5.0)]
    pub center_distance: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Foreground categories in label order (comma separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub foreground: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DownsampleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PseudolabelArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Label source: none, random, cluster, or external.
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub kmeans_iters: usize,
    #[arg(long, default_value_t = 1024)]
    pub kmeans_batch: usize,
    /// Prediction file for the external source.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 0.1)]
    pub lambda_g: f64,
    #[arg(long, default_value_t = 0.1)]
    pub b0: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 12)]
    pub epochs: usize,
    /// uniform or class-balanced.
    #[arg(long, default_value = "uniform")]
    pub sampling: String,
    #[arg(long, default_value_t = false)]
    pub thresholding: bool,
    #[arg(long, default_value_t = false)]
    pub aux: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trunk hidden widths, comma separated; empty = identity trunk.
    #[arg(long, value_delimiter = ',', num_args = 0.., default_value = "32")]
    pub trunk: Vec<usize>,
}

impl TrainFlags {
    pub fn to_config(&self) -> Result<TrainConfig> {
        let sampling = match self.sampling.as_str() {
            "uniform" => Sampling::Uniform,
            "class-balanced" => Sampling::ClassBalanced,
            other => {
                return Err(Error::Format(format!(
                    "unknown sampling strategy: {other} (expected uniform or class-balanced)"
                )))
            }
        };
        Ok(TrainConfig {
            lambda_g: self.lambda_g,
            b0: self.b0,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            sampling,
            use_thresholding: self.thresholding,
            use_aux: self.aux,
            seed: self.seed,
            trunk_shape: self.trunk.clone(),
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-epoch training log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct RetrainHeadArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint supplying the frozen trunk.
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Structured report output (JSON).
    #[arg(long)]
    pub report: PathBuf,
    /// Flat per-class CSV output.
    #[arg(long)]
    pub csv: PathBuf,
    /// Override the scoring rule; defaults to thresholded iff the
    /// checkpoint has a clamped background slot.
    #[arg(long)]
    pub thresholding: Option<bool>,
    #[arg(long, default_value_t = 0.1)]
    pub b0: f64,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    /// One of: factor, extreme, pseudolabel, sweep-batch, sweep-bg,
    /// sweep-n, transfer.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment spec file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the spec's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let manifest = generate_synthetic_longtail(&SyntheticSpec {
                categories: args.categories,
                zipf_s: args.zipf_s,
                examples_total: args.total,
                dim: args.dim,
                spread: args.spread,
                center_distance: args.center_distance,
                seed: args.seed,
            })?;
            write_manifest(&args.out, &manifest)
        }
        Command::Build(args) => {
            let source = read_manifest(&args.manifest)?;
            let built = build_bg_manifest(&source, &args.foreground)?;
            write_manifest(&args.out, &built)
        }
        Command::Downsample(args) => {
            let manifest = read_manifest(&args.manifest)?;
            let reduced = downsample_background(&manifest, args.fraction, args.seed)?;
            write_manifest(&args.out, &reduced)
        }
        Command::Pseudolabel(args) => {
            let manifest = read_manifest(&args.manifest)?;
            let spec = match args.source.as_str() {
                "none" => PseudoLabelSpec::None,
                "random" => PseudoLabelSpec::Random {
                    k: args.k.ok_or_else(|| Error::Format("--k is required for random".into()))?,
                    seed: args.seed,
                },
                "cluster" => PseudoLabelSpec::Cluster {
                    k: args.k.ok_or_else(|| Error::Format("--k is required for cluster".into()))?,
                    max_iters: args.kmeans_iters,
                    minibatch_size: args.kmeans_batch,
                    seed: args.seed,
                },
                "external" => PseudoLabelSpec::External {
                    path: args
                        .labels
                        .as_ref()
                        .ok_or_else(|| Error::Format("--labels is required for external".into()))?
                        .display()
                        .to_string(),
                    k: args.k,
                },
                other => {
                    return Err(Error::Format(format!(
                        "unknown pseudo-label source: {other}"
                    )))
                }
            };
            let labeled = bgsplit_core::pseudo::attach_pseudolabels(&manifest, &spec.resolve()?)?;
            write_manifest(&args.out, &labeled)
        }
        Command::Train(args) => {
            let manifest = read_manifest(&args.manifest)?;
            let config = args.flags.to_config()?;
            let (params, log) = train(&manifest, &config)?;
            save_checkpoint(&args.out, &params)?;
            if let Some(log_path) = &args.log {
                write_train_log_csv(log_path, &log)?;
            }
            Ok(())
        }
        Command::RetrainHead(args) => {
            let manifest = read_manifest(&args.manifest)?;
            let trunk = load_checkpoint(&args.from)?;
            let config = args.flags.to_config()?;
            let (params, log) = freeze_trunk_and_retrain_head(&trunk, &manifest, &config)?;
            save_checkpoint(&args.out, &params)?;
            if let Some(log_path) = &args.log {
                write_train_log_csv(log_path, &log)?;
            }
            Ok(())
        }
        Command::Eval(args) => {
            let manifest = read_manifest(&args.manifest)?;
            let params = load_checkpoint(&args.model)?;
            let config = TrainConfig {
                use_thresholding: args
                    .thresholding
                    .unwrap_or(params.background_clamp.is_some()),
                b0: params.background_clamp.unwrap_or(args.b0),
                ..TrainConfig::default()
            };
            let report = evaluate(&params, &manifest, &config)?;
            write_report_json(
                &args.report,
                &ReportFile {
                    config,
                    report: report.clone(),
                },
            )?;
            write_report_csv(&args.csv, &report)
        }
        Command::Stats(args) => {
            let manifest = read_manifest(&args.manifest)?;
            let stats = manifest_stats(&manifest);
            let json = serde_json::to_string_pretty(&stats)
                .map_err(|e| Error::Format(e.to_string()))?;
            println!("{json}");
            Ok(())
        }
        Command::Spec(args) => {
            let spec = match args.kind.as_str() {
                "factor" => presets::factor_spec(),
                "extreme" => presets::extreme_spec(),
                "pseudolabel" => presets::pseudolabel_spec(),
                "sweep-batch" => presets::sweep_batch_spec(),
                "sweep-bg" => presets::sweep_bg_fraction_spec(),
                "sweep-n" => presets::sweep_subsets_spec(),
                "transfer" => presets::transfer_spec(),
                other => return Err(Error::Format(format!("unknown spec kind: {other}"))),
            };
            spec.to_file(&args.out)
        }
        Command::FactorAnalysis(args) => {
            let spec = ExperimentSpec::from_file(&args.config)?;
            let record = runner::run_factor_analysis(&spec, args.out.as_deref())?;
            print_summary(&record);
            Ok(())
        }
        Command::PseudolabelStudy(args) => {
            let spec = ExperimentSpec::from_file(&args.config)?;
            let record = runner::run_pseudolabel_study(&spec, args.out.as_deref())?;
            print_summary(&record);
            Ok(())
        }
        Command::Sweep(args) => {
            let spec = ExperimentSpec::from_file(&args.config)?;
            let record = runner::run_sweep(&spec, args.out.as_deref())?;
            print_summary(&record);
            Ok(())
        }
        Command::TransferStudy(args) => {
            let spec = ExperimentSpec::from_file(&args.config)?;
            let record = runner::run_transfer_study(&spec, args.out.as_deref())?;
            print_summary(&record);
            Ok(())
        }
    }
}

fn print_summary(record: &RunRecord) {
    println!("variant            mAP      meanF1");
    for (variant, ap, f1) in record.seed_means() {
        println!("{variant:<16} {ap:>8.4} {f1:>8.4}");
    }
}
