//! Run configuration: one TOML file drives every command, with
//! command-line flags overriding individual fields.
//!
//! # Schema
//!
//! ```toml
//! seed = 0                    # master seed (--seed overrides)
//! out = "runs/demo"           # output root; --out > this > $VMFBRAIN_OUT > "."
//! # data = "runs/demo/dataset"  # dataset dir; --data > this > "<out>/dataset"
//!
//! [synth]                     # synthetic dataset spec (all fields optional)
//! train_volumes = 30
//! val_volumes = 2
//! test_volumes = 8
//! slice_count = 12
//! image_size = 16
//! tumour_probability = 0.9
//! noise_level = 0.04
//! # geometry.* and contrast.* may be overridden field by field
//!
//! [train]
//! task = "whole"              # "whole" | "sub" (--task overrides)
//! label_fraction = 1.0        # (--label-fraction overrides)
//! # lambda_weak = 0.5         # default depends on task (--lambda-weak/--no-weak)
//! # weak_granularity = "whole"  # weak-label width; defaults to the task's own
//! reduced = true              # small architecture for 16x16 inputs
//! epochs = 50
//! batch_size = 32
//! learning_rate = 1e-4
//! pretrain_epochs = 10
//! pretrain_learning_rate = 1e-3
//! kmeans_iters = 100
//! kmeans_vectors_per_image = 100
//!
//! [eval]
//! # checkpoint = "runs/demo/train/model.vmfc"   # (--checkpoint overrides)
//! batch_size = 8
//!
//! [viz]
//! # checkpoint = "runs/demo/train/model.vmfc"   # (--checkpoint overrides)
//! volume = 0                  # test-split volume index
//! # slice = 6                 # defaults to the middle slice
//! ```
//!
//! Every command echoes the fully resolved configuration into its
//! output directory so a run can be reproduced from its artifacts
//! alone.

use crate::data::SyntheticSpec;
use crate::error::{Result, VmfError};
use crate::supervision::{TaskMode, TrainingConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "VMFBRAIN_OUT";

/// File name of the resolved-config echo inside an output directory.
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

/// Training section of the run configuration; field-for-field mirror
/// of [`TrainingConfig`] minus the architecture (derived from `task`
/// and `reduced`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub task: TaskMode,
    pub label_fraction: f64,
    /// None = the task's published default (0.5 whole / 0.1 sub).
    pub lambda_weak: Option<f64>,
    /// Granularity of the weak labels; None = same as `task`. Setting
    /// `"whole"` on the sub-region task trains with coarse slice
    /// labels.
    pub weak_granularity: Option<TaskMode>,
    /// Use the reduced architecture (16x16 inputs) instead of the full
    /// 128x128 one.
    pub reduced: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub kmeans_iters: usize,
    pub kmeans_vectors_per_image: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainingConfig::new(TaskMode::WholeTumour);
        Self {
            task: base.mode,
            label_fraction: base.label_fraction,
            lambda_weak: None,
            weak_granularity: None,
            reduced: true,
            epochs: base.epochs,
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            pretrain_epochs: base.pretrain_epochs,
            pretrain_learning_rate: base.pretrain_learning_rate,
            kmeans_iters: base.kmeans_iters,
            kmeans_vectors_per_image: base.kmeans_vectors_per_image,
        }
    }
}

impl TrainSection {
    /// Materializes a validated [`TrainingConfig`].
    pub fn to_training_config(&self, seed: u64) -> Result<TrainingConfig> {
        let mut cfg = if self.reduced {
            TrainingConfig::reduced(self.task)
        } else {
            TrainingConfig::new(self.task)
        };
        cfg.label_fraction = self.label_fraction;
        if let Some(lambda) = self.lambda_weak {
            cfg.lambda_weak = lambda;
        }
        cfg.epochs = self.epochs;
        cfg.batch_size = self.batch_size;
        cfg.learning_rate = self.learning_rate;
        cfg.pretrain_epochs = self.pretrain_epochs;
        cfg.pretrain_learning_rate = self.pretrain_learning_rate;
        cfg.kmeans_iters = self.kmeans_iters;
        cfg.kmeans_vectors_per_image = self.kmeans_vectors_per_image;
        cfg.seed = seed;
        if let Some(granularity) = self.weak_granularity {
            cfg = cfg.with_weak_mode(granularity);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Evaluation section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            batch_size: 8,
        }
    }
}

/// Activation-visualization section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VizSection {
    pub checkpoint: Option<PathBuf>,
    /// Index into the test split.
    pub volume: usize,
    /// Slice index; None = the middle slice of the selected volume.
    pub slice: Option<usize>,
}

impl Default for VizSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            volume: 0,
            slice: None,
        }
    }
}

/// Root of the documented TOML schema; every command reads the
/// sections it needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output root; overridden by `--out`, falls back to `$VMFBRAIN_OUT`.
    pub out: Option<PathBuf>,
    /// Dataset directory; overridden by `--data`, defaults to
    /// `<out root>/dataset`.
    pub data: Option<PathBuf>,
    pub synth: SyntheticSpec,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub viz: VizSection,
}

impl RunConfig {
    /// Full validation before any computation: every section must be
    /// internally consistent even if the current command ignores it.
    pub fn validate(&self) -> Result<()> {
        let mut synth = self.synth.clone();
        synth.seed = self.seed;
        synth.validate()?;
        self.train.to_training_config(self.seed)?;
        if self.eval.batch_size == 0 {
            return Err(VmfError::InvalidConfig(
                "eval.batch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The synthetic-data spec with the master seed applied.
    pub fn synth_spec(&self) -> SyntheticSpec {
        let mut spec = self.synth.clone();
        spec.seed = self.seed;
        spec
    }

    /// Serializes the resolved configuration into `dir/config.toml`.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| VmfError::InvalidConfig(format!("serializing config: {e}")))?;
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RESOLVED_CONFIG_FILE), text)?;
        Ok(())
    }
}

/// Loads a config file, or the defaults when no path is given.
pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let config = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                VmfError::MissingArtifact(format!("config file {}: {e}", p.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| VmfError::InvalidConfig(format!("{}: {e}", p.display())))?
        }
    };
    Ok(config)
}

/// Output-root resolution: explicit flag, then the config file, then
/// the environment variable, then the current directory.
pub fn resolve_out_root(flag: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    flag.or_else(|| config.out.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Dataset-directory resolution: explicit flag, then the config file,
/// then `<out root>/dataset`.
pub fn resolve_data_dir(flag: Option<PathBuf>, config: &RunConfig, out_root: &Path) -> PathBuf {
    flag.or_else(|| config.data.clone())
        .unwrap_or_else(|| out_root.join("dataset"))
}
