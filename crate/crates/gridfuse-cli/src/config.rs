//! Run configuration: one TOML file drives every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gridfuse_core::error::{Error, Result};
use gridfuse_core::grid::dataset::DatasetConfig;
use gridfuse_core::model::ModelConfig;
use gridfuse_core::train::SliceTable;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Built-in grid name or path to a grid description file.
    pub grid: String,
    pub n_samples: usize,
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_range")]
    pub range_frac: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub local_dim: usize,
    pub seed: u64,
    /// Estimator window length for unmeasured devices.
    pub window: usize,
    /// Device indices whose states are treated as unmeasurable.
    pub unmeasured: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: 16,
            local_dim: 4,
            seed: 7,
            window: 2,
            unmeasured: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub lr: f64,
    pub slices_per_epoch: usize,
    pub batch: usize,
    pub seed: u64,
    /// (window length, weight) rows; empty means the built-in default.
    pub slice_table: Vec<(usize, f64)>,
    pub val_slices: usize,
    pub stage1_frac: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: 3000,
            lr: 1e-2,
            slices_per_epoch: 96,
            batch: 8,
            seed: 11,
            slice_table: Vec::new(),
            val_slices: 16,
            stage1_frac: 0.4,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Artifact directory; falls back to $GRIDFUSE_OUT, then ".".
    pub dir: Option<PathBuf>,
}

fn d_steps() -> usize {
    1000
}

fn d_dt() -> f64 {
    0.01
}

fn d_range() -> f64 {
    0.3
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config '{}': {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.n_samples == 0 {
            return Err(Error::Config("dataset.n_samples must be positive".into()));
        }
        if self.dataset.steps < 2 {
            return Err(Error::Config("dataset.steps must be at least 2".into()));
        }
        if !(self.dataset.dt > 0.0) {
            return Err(Error::Config("dataset.dt must be positive".into()));
        }
        if !(0.0..=0.9).contains(&self.dataset.range_frac) {
            return Err(Error::Config(
                "dataset.range_frac must lie in [0, 0.9]".into(),
            ));
        }
        if self.model.window < 1 {
            return Err(Error::Config("model.window must be at least 1".into()));
        }
        if self.training.epochs == 0 {
            return Err(Error::Config("training.epochs must be positive".into()));
        }
        if !(self.training.lr > 0.0) {
            return Err(Error::Config("training.lr must be positive".into()));
        }
        if self.training.batch == 0 || self.training.slices_per_epoch == 0 {
            return Err(Error::Config(
                "training.batch and training.slices_per_epoch must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            n_samples: self.dataset.n_samples,
            steps: self.dataset.steps,
            dt: self.dataset.dt,
            range_frac: self.dataset.range_frac,
            seed: self.dataset.seed,
            ..DatasetConfig::benchmark(
                &self.dataset.grid,
                self.dataset.n_samples,
                self.dataset.seed,
            )
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.model.hidden,
            local_dim: self.model.local_dim,
            seed: self.model.seed,
        }
    }

    pub fn slice_table(&self) -> SliceTable {
        if self.training.slice_table.is_empty() {
            SliceTable::default()
        } else {
            SliceTable {
                entries: self.training.slice_table.clone(),
            }
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .or_else(|| std::env::var_os("GRIDFUSE_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}
