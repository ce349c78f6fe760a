//! Ablation arms over the training objective: every arm consumes the same
//! dataset, seed, and step budget; only the loss-weight schedule differs.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{DeviceDims, ModelConfig};
use crate::train::curriculum::{train_curriculum, CurriculumMode, TrainConfig, TrainReport};
use crate::train::loss::LearnedSystem;
use crate::train::normalize::Dataset;

use super::derivative_error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    LocalOnly,
    SingleStage,
    MultiStage,
}

impl Arm {
    pub fn mode(self) -> CurriculumMode {
        match self {
            Arm::LocalOnly => CurriculumMode::LocalOnly,
            Arm::SingleStage => CurriculumMode::SingleStage,
            Arm::MultiStage => CurriculumMode::MultiStage,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::LocalOnly => "local-only",
            Arm::SingleStage => "single-stage",
            Arm::MultiStage => "multi-stage",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    /// Mean per-device relative derivative error on the test split.
    pub local_error: f64,
    /// Whole-system relative derivative error on the test split.
    pub global_error: f64,
    pub report: TrainReport,
    /// Budget actually consumed, for the fairness assertion.
    pub epochs: usize,
    pub seed: u64,
}

/// Train one arm from scratch and measure it. The caller passes the same
/// `cfg` (budget, seed, batch sizes) for every arm; only `arm` varies.
pub fn run_ablation(
    ds: &Dataset,
    arm: Arm,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
) -> Result<ArmResult> {
    let dims: Vec<DeviceDims> = (0..ds.raw.n_devices())
        .map(|_| DeviceDims { n: 2, m: 2, q: 2 })
        .collect();
    let measured = ds.measured.clone();
    let mut sys = LearnedSystem::new(&dims, ds.raw.cond_dim(), model_cfg.clone(), &measured, 2);
    let mut cfg = cfg.clone();
    cfg.mode = arm.mode();
    let report = train_curriculum(&mut sys, ds, &cfg)?;
    let e = derivative_error(&sys, ds, &ds.test_idx)?;
    let local = e.per_device.iter().sum::<f64>() / e.per_device.len() as f64;
    Ok(ArmResult {
        arm,
        local_error: local,
        global_error: e.global,
        report,
        epochs: cfg.epochs,
        seed: cfg.seed,
    })
}
