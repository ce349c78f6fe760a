//! Randomized dataset generation: sample operating points around nominal,
//! solve each one, and record perturbation trajectories with the matched
//! small-signal truth.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linearize::linearize_all;
use super::powerflow::{newton_power_flow, Equilibrium};
use super::simulate::{simulate_truth, SimulatedTrajectory};
use super::{BusKind, GridModel, OperatingPoint};
use crate::error::{Error, Result};
use crate::fusion::{
    block_diag_assemble, fuse_global, ComponentMatrices, Frame, NetworkMatrix, Provenance,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub grid: String,
    pub n_samples: usize,
    pub steps: usize,
    pub dt: f64,
    /// Uniform half-width of the multiplicative draw around nominal.
    pub range_frac: f64,
    pub seed: u64,
    pub angle_perturb: f64,
    pub speed_perturb: f64,
}

impl DatasetConfig {
    pub fn benchmark(grid: &str, n_samples: usize, seed: u64) -> DatasetConfig {
        DatasetConfig {
            grid: grid.to_string(),
            n_samples,
            steps: 1000,
            dt: 0.01,
            range_frac: 0.3,
            seed,
            angle_perturb: 1e-2,
            speed_perturb: 1e-4,
        }
    }
}

/// Small-signal ground truth attached to a sample.
#[derive(Debug, Clone)]
pub struct TruthInfo {
    pub components: Vec<ComponentMatrices>,
    pub m_net: Tensor,
    pub a_sys: Tensor,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub op: OperatingPoint,
    /// Global conditioning vector derived from the operating point.
    pub cond: Vec<f64>,
    pub eq: Equilibrium,
    pub truth: TruthInfo,
    pub traj: SimulatedTrajectory,
}

#[derive(Debug, Clone)]
pub struct RawDataset {
    pub grid: GridModel,
    pub config: DatasetConfig,
    pub samples: Vec<Sample>,
}

impl RawDataset {
    pub fn n_devices(&self) -> usize {
        self.grid.machines.len()
    }

    pub fn cond_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.cond.len())
    }
}

fn draw_op(
    grid: &GridModel,
    base: &OperatingPoint,
    r: f64,
    rng: &mut ChaCha8Rng,
) -> OperatingPoint {
    let mut op = base.clone();
    for (k, m) in grid.machines.iter().enumerate() {
        // The slack machine absorbs the mismatch, so only the set machines draw.
        let f: f64 = rng.gen_range(1.0 - r..=1.0 + r);
        if grid.buses[m.bus].kind != BusKind::Slack {
            op.gen_p[k] = base.gen_p[k] * f;
        }
    }
    for i in 0..op.load_p.len() {
        let fp: f64 = rng.gen_range(1.0 - r..=1.0 + r);
        let fq: f64 = rng.gen_range(1.0 - r..=1.0 + r);
        op.load_p[i] = base.load_p[i] * fp;
        op.load_q[i] = base.load_q[i] * fq;
    }
    op
}

fn draw_perturbation(n_machines: usize, cfg: &DatasetConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let mut x0 = Tensor::zeros(&[2 * n_machines]);
    for i in 0..n_machines {
        x0.data_mut()[2 * i] = rng.gen_range(-cfg.angle_perturb..=cfg.angle_perturb);
        x0.data_mut()[2 * i + 1] = rng.gen_range(-cfg.speed_perturb..=cfg.speed_perturb);
    }
    x0
}

/// Solve one operating point end to end.
pub fn build_sample(
    grid: &GridModel,
    op: &OperatingPoint,
    x0: &Tensor,
    steps: usize,
    dt: f64,
) -> Result<Sample> {
    let eq = newton_power_flow(grid, op)?;
    let components = linearize_all(grid, &eq);
    let stacked = block_diag_assemble(&components);
    let net = NetworkMatrix {
        m: eq.m_net.clone(),
    };
    let global = fuse_global(&stacked, &net, Frame::Physical, Provenance::Truth)?;
    let traj = simulate_truth(grid, &eq, x0, steps, dt)?;
    Ok(Sample {
        op: op.clone(),
        cond: op.to_vector(grid),
        truth: TruthInfo {
            components,
            m_net: eq.m_net.clone(),
            a_sys: global.a_sys,
        },
        eq,
        traj,
    })
}

/// Generate the full dataset. Draws are sequential and seeded, so the same
/// config always reproduces the same samples. An operating point whose
/// power flow fails is redrawn; every draw consumes the stream in order so
/// rejections do not shift later samples across configs with equal seeds.
pub fn generate_dataset(grid: &GridModel, cfg: &DatasetConfig) -> Result<RawDataset> {
    grid.validate()?;
    let base = grid.nominal_op();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut rejected = 0usize;
    while samples.len() < cfg.n_samples {
        let op = draw_op(grid, &base, cfg.range_frac, &mut rng);
        let x0 = draw_perturbation(grid.machines.len(), cfg, &mut rng);
        match build_sample(grid, &op, &x0, cfg.steps, cfg.dt) {
            Ok(s) => samples.push(s),
            Err(Error::PowerFlowDiverged { .. }) | Err(Error::InfeasibleOperatingPoint(_)) => {
                rejected += 1;
                if rejected > 20 * cfg.n_samples.max(1) {
                    return Err(Error::InfeasibleOperatingPoint(format!(
                        "rejected {rejected} draws; the sampling range is too wide for this grid"
                    )));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RawDataset {
        grid: grid.clone(),
        config: cfg.clone(),
        samples,
    })
}
