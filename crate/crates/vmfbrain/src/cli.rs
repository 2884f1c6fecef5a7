//! Command-line pipeline: `synth-data`, `train`, `eval`, and
//! `viz-activations`.
//!
//! Every command reads one optional TOML config
//! (see [`crate::config`]), applies flag overrides, validates, echoes
//! the resolved config into its output directory, and writes all
//! artifacts under the resolved output root:
//!
//! ```text
//! <out>/dataset/   volumes + manifest.json        (synth-data, or --data)
//! <out>/train/     model.vmfc, bank.vmfk, train_log.jsonl, summary.json
//! <out>/eval/      metrics.json, metrics.csv, table.txt
//! <out>/viz/       channel/modality/mask PNGs, channels.json
//! ```
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing artifact,
//! 4 runtime failure.

use crate::checkpoint::{arch_hash, load_model, save_kernel_bank, save_model};
use crate::config::{
    load_run_config, resolve_data_dir, resolve_out_root, RunConfig,
};
use crate::data::{
    generate_synthetic_dataset, load_dataset, make_split_samples, sample_labeled_subset,
    save_dataset, DatasetManifest, Split, VolumeRecord,
};
use crate::error::{Result, VmfError};
use crate::metrics::{evaluate_model, MetricsReport};
use crate::supervision::{train, SliceSample, TaskMode, TrainOutcome, TrainingConfig};
use crate::viz::{export_slice_visualization, VizManifest};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Segmentation task selector for `--task`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    /// Background vs tumour (2 classes).
    Whole,
    /// Background / ED / ET / NE (4 classes).
    Sub,
}

impl From<TaskArg> for TaskMode {
    fn from(value: TaskArg) -> Self {
        match value {
            TaskArg::Whole => TaskMode::WholeTumour,
            TaskArg::Sub => TaskMode::SubRegion,
        }
    }
}

/// Top-level argument grammar.
#[derive(Debug, Parser)]
#[command(
    name = "vmfbrain",
    version,
    about = "Compositional tumour segmentation with von-Mises-Fisher kernels"
)]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "path")]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root override (falls back to config, then $VMFBRAIN_OUT).
    #[arg(long, global = true, value_name = "dir")]
    pub out: Option<PathBuf>,
    /// Dataset directory override.
    #[arg(long, global = true, value_name = "dir")]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (volumes + manifest).
    SynthData(SynthDataArgs),
    /// Train the compositional model with mixed supervision.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Export per-kernel activation images for one slice.
    VizActivations(VizArgs),
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    /// Total volume count, split at the published subject ratio.
    #[arg(long)]
    pub volumes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Segmentation task.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Fraction of training slices with pixel masks, in (0, 1].
    #[arg(long, value_name = "f")]
    pub label_fraction: Option<f64>,
    /// Weak-loss weight override.
    #[arg(long, value_name = "w", conflicts_with = "no_weak")]
    pub lambda_weak: Option<f64>,
    /// Disable weak supervision entirely (lambda_weak = 0).
    #[arg(long)]
    pub no_weak: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model checkpoint (defaults to <out>/train/model.vmfc).
    #[arg(long, value_name = "path")]
    pub checkpoint: Option<PathBuf>,
    /// Segmentation task (must match the checkpoint).
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    /// Model checkpoint (defaults to <out>/train/model.vmfc).
    #[arg(long, value_name = "path")]
    pub checkpoint: Option<PathBuf>,
    /// Test-split volume index.
    #[arg(long)]
    pub volume: Option<usize>,
    /// Slice index (defaults to the volume's middle slice).
    #[arg(long)]
    pub slice: Option<usize>,
}

/// Everything `summary.json` records about a finished training run.
#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    best_epoch: usize,
    best_val_dice: f64,
    kmeans_iterations: usize,
    pretrain_losses: &'a [f64],
    epochs: usize,
    labeled_slices: usize,
    total_slices: usize,
    training: &'a TrainingConfig,
}

fn load_and_override(cli: &Cli) -> Result<RunConfig> {
    let mut config = load_run_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match &cli.command {
        Command::SynthData(args) => {
            if let Some(total) = args.volumes {
                config.synth = config.synth.with_total_volumes(total);
            }
        }
        Command::Train(args) => {
            if let Some(task) = args.task {
                config.train.task = task.into();
                // granularity follows the task unless set explicitly
                if config.train.weak_granularity == Some(config.train.task) {
                    config.train.weak_granularity = None;
                }
            }
            if let Some(fraction) = args.label_fraction {
                config.train.label_fraction = fraction;
            }
            if let Some(lambda) = args.lambda_weak {
                config.train.lambda_weak = Some(lambda);
            }
            if args.no_weak {
                config.train.lambda_weak = Some(0.0);
            }
        }
        Command::Eval(args) => {
            if let Some(task) = args.task {
                config.train.task = task.into();
            }
            if let Some(path) = &args.checkpoint {
                config.eval.checkpoint = Some(path.clone());
            }
        }
        Command::VizActivations(args) => {
            if let Some(path) = &args.checkpoint {
                config.viz.checkpoint = Some(path.clone());
            }
            if let Some(volume) = args.volume {
                config.viz.volume = volume;
            }
            if args.slice.is_some() {
                config.viz.slice = args.slice;
            }
        }
    }
    config.validate()?;
    Ok(config)
}

/// Generates and persists the synthetic dataset.
pub fn cmd_synth_data(config: &RunConfig, data_dir: &Path) -> Result<DatasetManifest> {
    let spec = config.synth_spec();
    let volumes = generate_synthetic_dataset(&spec)?;
    let manifest = save_dataset(data_dir, &volumes, &spec)?;
    config.echo_into(data_dir)?;
    Ok(manifest)
}

fn load_volumes(data_dir: &Path) -> Result<Vec<VolumeRecord>> {
    let (volumes, _) = load_dataset(data_dir)?;
    Ok(volumes)
}

fn checked_samples(
    volumes: &[VolumeRecord],
    split: Split,
    cfg: &TrainingConfig,
) -> Result<Vec<SliceSample>> {
    // weak labels are assembled at the configured granularity, which
    // may be coarser than the segmentation task
    let samples = make_split_samples(volumes, split, cfg.weak_mode)?;
    if let Some(sample) = samples.first() {
        let (_, h, w) = sample.image.dim();
        if h != cfg.arch.input_size || w != cfg.arch.input_size {
            return Err(VmfError::InvalidConfig(format!(
                "dataset slices are {h}x{w} but the architecture expects {0}x{0}; \
                 set train.reduced to match the dataset resolution",
                cfg.arch.input_size
            )));
        }
    }
    Ok(samples)
}

/// Trains a model and writes checkpoint, log, and summary into
/// `run_dir`.
pub fn cmd_train(config: &RunConfig, data_dir: &Path, run_dir: &Path) -> Result<TrainOutcome> {
    let cfg = config.train.to_training_config(config.seed)?;
    let volumes = load_volumes(data_dir)?;
    let train_all = checked_samples(&volumes, Split::Train, &cfg)?;
    let train_samples = sample_labeled_subset(train_all, cfg.label_fraction, cfg.seed)?;
    let val_samples = checked_samples(&volumes, Split::Val, &cfg)?;

    let outcome = train(&train_samples, &val_samples, &cfg)?;

    std::fs::create_dir_all(run_dir)?;
    config.echo_into(run_dir)?;
    save_model(&run_dir.join("model.vmfc"), &outcome.bundle)?;
    save_kernel_bank(&run_dir.join("bank.vmfk"), &outcome.bundle.bank())?;

    let mut log_lines = String::new();
    for record in &outcome.log {
        let line = serde_json::to_string(record)
            .map_err(|e| VmfError::InvalidConfig(format!("serializing log: {e}")))?;
        log_lines.push_str(&line);
        log_lines.push('\n');
    }
    std::fs::write(run_dir.join("train_log.jsonl"), log_lines)?;

    let labeled = train_samples.iter().filter(|s| s.has_pixel_label).count();
    let summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        best_val_dice: outcome.best_val_dice,
        kmeans_iterations: outcome.kmeans_iterations,
        pretrain_losses: &outcome.pretrain_losses,
        epochs: outcome.log.len(),
        labeled_slices: labeled,
        total_slices: train_samples.len(),
        training: &cfg,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| VmfError::InvalidConfig(format!("serializing summary: {e}")))?;
    std::fs::write(run_dir.join("summary.json"), json)?;
    Ok(outcome)
}

fn resolve_checkpoint(explicit: Option<&Path>, out_root: &Path) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_root.join("train").join("model.vmfc"))
}

fn load_checked_model(path: &Path, expected: &TrainingConfig) -> Result<crate::model::ModelBundle> {
    if !path.exists() {
        return Err(VmfError::MissingArtifact(format!(
            "checkpoint {}",
            path.display()
        )));
    }
    let bundle = load_model(path)?;
    let stored = arch_hash(&bundle.arch)?;
    let actual = arch_hash(&expected.arch)?;
    if stored != actual {
        return Err(VmfError::ConfigHashMismatch { stored, actual });
    }
    Ok(bundle)
}

/// Evaluates a checkpoint on the test split and writes the reports.
pub fn cmd_eval(
    config: &RunConfig,
    data_dir: &Path,
    checkpoint: &Path,
    out_dir: &Path,
) -> Result<MetricsReport> {
    let cfg = config.train.to_training_config(config.seed)?;
    let bundle = load_checked_model(checkpoint, &cfg)?;
    let volumes = load_volumes(data_dir)?;
    let test: Vec<VolumeRecord> = volumes
        .into_iter()
        .filter(|v| v.split == Split::Test)
        .collect();
    let report = evaluate_model(&bundle, &test, cfg.mode, config.eval.batch_size)?;

    std::fs::create_dir_all(out_dir)?;
    config.echo_into(out_dir)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| VmfError::InvalidConfig(format!("serializing report: {e}")))?;
    std::fs::write(out_dir.join("metrics.json"), json)?;
    std::fs::write(out_dir.join("metrics.csv"), report.to_csv())?;
    std::fs::write(out_dir.join("table.txt"), report.table())?;
    Ok(report)
}

/// Exports activation images for the configured test volume/slice.
pub fn cmd_viz_activations(
    config: &RunConfig,
    data_dir: &Path,
    checkpoint: &Path,
    out_dir: &Path,
) -> Result<VizManifest> {
    let cfg = config.train.to_training_config(config.seed)?;
    let bundle = load_checked_model(checkpoint, &cfg)?;
    let volumes = load_volumes(data_dir)?;
    let test: Vec<VolumeRecord> = volumes
        .into_iter()
        .filter(|v| v.split == Split::Test)
        .collect();
    let volume = test.get(config.viz.volume).ok_or_else(|| {
        VmfError::InvalidConfig(format!(
            "viz.volume {} out of range: test split has {} volumes",
            config.viz.volume,
            test.len()
        ))
    })?;
    let slice_index = config.viz.slice.unwrap_or(volume.slice_count() / 2);
    let manifest = export_slice_visualization(&bundle, volume, slice_index, out_dir)?;
    config.echo_into(out_dir)?;
    Ok(manifest)
}

/// Executes one parsed command line; the binary maps errors to exit
/// codes via [`VmfError::exit_code`].
pub fn run(cli: &Cli) -> Result<()> {
    let config = load_and_override(cli)?;
    let out_root = resolve_out_root(cli.out.clone(), &config);
    let data_dir = resolve_data_dir(cli.data.clone(), &config, &out_root);
    match &cli.command {
        Command::SynthData(_) => {
            let manifest = cmd_synth_data(&config, &data_dir)?;
            println!(
                "wrote {} volumes ({} train / {} val / {} test) to {}",
                manifest.volumes.len(),
                config.synth.train_volumes,
                config.synth.val_volumes,
                config.synth.test_volumes,
                data_dir.display()
            );
        }
        Command::Train(_) => {
            let run_dir = out_root.join("train");
            let outcome = cmd_train(&config, &data_dir, &run_dir)?;
            println!(
                "trained {} epochs; best validation Dice {:.2} at epoch {}; checkpoint {}",
                outcome.log.len(),
                outcome.best_val_dice,
                outcome.best_epoch,
                run_dir.join("model.vmfc").display()
            );
        }
        Command::Eval(args) => {
            let checkpoint = resolve_checkpoint(
                args.checkpoint
                    .as_deref()
                    .or(config.eval.checkpoint.as_deref()),
                &out_root,
            );
            let out_dir = out_root.join("eval");
            let report = cmd_eval(&config, &data_dir, &checkpoint, &out_dir)?;
            print!("{}", report.table());
            println!("reports written to {}", out_dir.display());
        }
        Command::VizActivations(args) => {
            let checkpoint = resolve_checkpoint(
                args.checkpoint
                    .as_deref()
                    .or(config.viz.checkpoint.as_deref()),
                &out_root,
            );
            let out_dir = out_root.join("viz");
            let manifest = cmd_viz_activations(&config, &data_dir, &checkpoint, &out_dir)?;
            println!(
                "exported {} channel images for {} slice {} to {}",
                manifest.channels.len(),
                manifest.volume_id,
                manifest.slice_index,
                out_dir.display()
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn grammar_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn all_documented_flags_parse() {
        parse(&["vmfbrain", "synth-data", "--volumes", "10", "--seed", "3"]);
        parse(&[
            "vmfbrain",
            "train",
            "--task",
            "whole",
            "--label-fraction",
            "0.01",
            "--lambda-weak",
            "0.25",
            "--data",
            "/ds",
            "--out",
            "/runs",
        ]);
        parse(&["vmfbrain", "train", "--task", "sub", "--no-weak"]);
        parse(&["vmfbrain", "eval", "--checkpoint", "/m.vmfc", "--config", "/c.toml"]);
        parse(&["vmfbrain", "viz-activations", "--volume", "1", "--slice", "4"]);
    }

    #[test]
    fn no_weak_conflicts_with_lambda_weak() {
        assert!(Cli::try_parse_from([
            "vmfbrain",
            "train",
            "--no-weak",
            "--lambda-weak",
            "0.5"
        ])
        .is_err());
    }

    #[test]
    fn overrides_reach_the_config() {
        let cli = parse(&[
            "vmfbrain",
            "train",
            "--task",
            "sub",
            "--label-fraction",
            "0.05",
            "--no-weak",
            "--seed",
            "77",
        ]);
        let config = load_and_override(&cli).unwrap();
        assert_eq!(config.seed, 77);
        assert_eq!(config.train.task, TaskMode::SubRegion);
        assert_eq!(config.train.label_fraction, 0.05);
        assert_eq!(config.train.lambda_weak, Some(0.0));
    }

    #[test]
    fn volume_override_reapportions_the_splits() {
        let cli = parse(&["vmfbrain", "synth-data", "--volumes", "10"]);
        let config = load_and_override(&cli).unwrap();
        assert_eq!(config.synth.volume_count(), 10);
    }

    #[test]
    fn invalid_fraction_fails_before_any_work() {
        let cli = parse(&["vmfbrain", "train", "--label-fraction", "1.5"]);
        match load_and_override(&cli) {
            Err(VmfError::InvalidConfig(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_defaults_inside_the_out_root() {
        assert_eq!(
            resolve_checkpoint(None, Path::new("/runs/a")),
            PathBuf::from("/runs/a/train/model.vmfc")
        );
        assert_eq!(
            resolve_checkpoint(Some(Path::new("/m.vmfc")), Path::new("/runs/a")),
            PathBuf::from("/m.vmfc")
        );
    }

    #[test]
    fn missing_checkpoint_is_a_missing_artifact() {
        let cfg = TrainingConfig::reduced(TaskMode::WholeTumour);
        match load_checked_model(Path::new("/nonexistent/model.vmfc"), &cfg) {
            Err(VmfError::MissingArtifact(_)) => {}
            other => panic!("expected missing artifact, got {other:?}"),
        }
    }
}
