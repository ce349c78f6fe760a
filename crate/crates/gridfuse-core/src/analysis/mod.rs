//! Evaluation of a trained system against the simulator truth: physical
//! frame prediction, eigen-reports, mode pairing, the relative derivative
//! error, parameter sweeps, ablation arms, and the whole-system baseline.

pub mod ablation;
pub mod baseline;
pub mod locus;

pub use ablation::{run_ablation, Arm, ArmResult};
pub use baseline::{epochs_to_converge, train_monolithic, MonoConfig, MonoModel, MonoResult};
pub use locus::{max_pairing_jump, root_locus, LocusPoint};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    block_diag_assemble, fuse_global, ComponentMatrices, Frame, GlobalModel, Provenance,
};
use crate::tensor::Tensor;
use crate::train::loss::LearnedSystem;
use crate::train::normalize::{denormalize_component, denormalize_global, Dataset, NormStats};

/// The learned whole-system matrix at one raw (physical-units) operating
/// point: condition, fuse in the normalized frame, then undo the scaling.
pub fn predict_global(
    sys: &LearnedSystem,
    stats: &NormStats,
    cond_raw: &[f64],
) -> Result<GlobalModel> {
    let cond_n = stats.cond.normalize_vec(&Tensor::vector(cond_raw.to_vec()));
    let comps = sys.model.components(&cond_n);
    let stacked = block_diag_assemble(&comps);
    let net = sys.model.network();
    let g = fuse_global(&stacked, &net, Frame::Normalized, Provenance::Learned)?;
    denormalize_global(&g, stats)
}

/// Per-device matrices in physical units at one raw operating point.
pub fn predict_components(
    sys: &LearnedSystem,
    stats: &NormStats,
    cond_raw: &[f64],
) -> Result<Vec<ComponentMatrices>> {
    let cond_n = stats.cond.normalize_vec(&Tensor::vector(cond_raw.to_vec()));
    sys.model
        .components(&cond_n)
        .iter()
        .enumerate()
        .map(|(d, c)| denormalize_component(c, &stats.device(d)))
        .collect()
}

/// One eigenvalue of the system matrix, conjugates collapsed to im >= 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Mode {
    pub re: f64,
    pub im: f64,
    /// Oscillation frequency in Hz, |im| / 2 pi.
    pub freq_hz: f64,
    /// Damping ratio -re/|lambda|; zero for the zero eigenvalue.
    pub damping: f64,
}

pub fn eigen_report(a: &Tensor) -> Result<Vec<Mode>> {
    let eigs = crate::eig::eig_dense(a)?;
    let mut modes: Vec<Mode> = eigs
        .into_iter()
        .filter(|l| l.im >= 0.0)
        .map(|l| {
            let mag = l.norm();
            Mode {
                re: l.re,
                im: l.im,
                freq_hz: l.im / std::f64::consts::TAU,
                damping: if mag > 0.0 {
                    (-l.re / mag).clamp(-1.0, 1.0)
                } else {
                    0.0
                },
            }
        })
        .collect();
    modes.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    Ok(modes)
}

/// Greedy nearest-neighbor bijection between two equal-length spectra:
/// repeatedly match the globally closest unmatched pair. Returns
/// `pairs[i] = j` meaning `pred[i]` is matched to `truth[j]`.
pub fn pair_modes(pred: &[Complex64], truth: &[Complex64]) -> Vec<usize> {
    assert_eq!(pred.len(), truth.len(), "pair_modes: spectra sizes differ");
    let n = pred.len();
    let mut pairs = vec![usize::MAX; n];
    let mut used_p = vec![false; n];
    let mut used_t = vec![false; n];
    for _ in 0..n {
        let mut best = (f64::INFINITY, 0usize, 0usize);
        for i in 0..n {
            if used_p[i] {
                continue;
            }
            for j in 0..n {
                if used_t[j] {
                    continue;
                }
                let d = (pred[i] - truth[j]).norm();
                // Deterministic tie-break on indices.
                if d < best.0 - 1e-15 {
                    best = (d, i, j);
                }
            }
        }
        pairs[best.1] = best.2;
        used_p[best.1] = true;
        used_t[best.2] = true;
    }
    pairs
}

/// Mismatch of one matched mode against its truth counterpart.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModeDeviation {
    pub truth: (f64, f64),
    pub pred: (f64, f64),
    pub d_re: f64,
    pub d_im: f64,
    /// Reference frequency for the relative imaginary-part test. Real truth
    /// modes borrow the largest oscillatory frequency in the spectrum, since
    /// a tolerance relative to zero admits nothing.
    pub im_ref: f64,
}

pub fn eigen_deviation(pred: &Tensor, truth: &Tensor) -> Result<Vec<ModeDeviation>> {
    let ep = crate::eig::eig_dense(pred)?;
    let et = crate::eig::eig_dense(truth)?;
    if ep.len() != et.len() {
        return Err(Error::ShapeMismatch {
            op: "eigen_deviation",
            detail: format!("{} vs {} eigenvalues", ep.len(), et.len()),
        });
    }
    let max_im = et.iter().fold(0.0_f64, |m, l| m.max(l.im.abs()));
    let pairs = pair_modes(&ep, &et);
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let im_abs = et[j].im.abs();
            ModeDeviation {
                truth: (et[j].re, et[j].im),
                pred: (ep[i].re, ep[i].im),
                d_re: (ep[i].re - et[j].re).abs(),
                d_im: (ep[i].im - et[j].im).abs(),
                im_ref: if im_abs > 1e-6 {
                    im_abs
                } else {
                    max_im.max(1.0)
                },
            }
        })
        .collect())
}

/// True when every matched mode is inside the given tolerances:
/// imaginary part relative to the mode's reference frequency, real part
/// absolute.
pub fn modes_within(devs: &[ModeDeviation], im_rel: f64, re_abs: f64) -> bool {
    devs.iter()
        .all(|d| d.d_im <= im_rel * d.im_ref && d.d_re <= re_abs)
}

/// Average relative derivative error of the learned system on the given
/// dataset samples, per device and for the fused whole-system model. The
/// truth derivative field comes from the simulator's Jacobians, not from
/// differencing trajectories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivativeError {
    pub per_device: Vec<f64>,
    pub global: f64,
}

const REL_EPS: f64 = 1e-12;

/// Energy-weighted relative error: ||pred - truth|| / ||truth|| with the
/// norms taken over every step of every selected trajectory. A per-step
/// ratio would be dominated by the trajectory tails where the true
/// derivative decays to zero and any bias residual divides by almost
/// nothing.
#[derive(Default, Clone, Copy)]
struct RelAcc {
    err_sq: f64,
    ref_sq: f64,
}

impl RelAcc {
    fn push(&mut self, err: &Tensor, reference: &Tensor) {
        self.err_sq += err.norm2().powi(2);
        self.ref_sq += reference.norm2().powi(2);
    }

    fn ratio(&self) -> f64 {
        (self.err_sq / (self.ref_sq + REL_EPS)).sqrt()
    }
}

fn rows(t: &Tensor, r: usize) -> Tensor {
    Tensor::vector(t.data()[r * t.cols()..(r + 1) * t.cols()].to_vec())
}

fn cols_slice(v: &Tensor, start: usize, len: usize) -> Tensor {
    Tensor::vector(v.data()[start..start + len].to_vec())
}

pub fn derivative_error(
    sys: &LearnedSystem,
    ds: &Dataset,
    indices: &[usize],
) -> Result<DerivativeError> {
    let n_dev = ds.raw.n_devices();
    let mut dev_acc = vec![RelAcc::default(); n_dev];
    let mut glob_acc = RelAcc::default();
    let mut seen = false;
    for &i in indices {
        let s = &ds.raw.samples[i];
        let cond = &s.cond;
        let pred_g = predict_global(sys, &ds.stats, cond)?;
        let pred_c = predict_components(sys, &ds.stats, cond)?;
        let t = &s.traj;
        for k in 0..t.states.rows() {
            let x = rows(&t.states, k);
            let u = rows(&t.inputs, k);
            let xdot_t = s.truth.a_sys.matvec(&x);
            let xdot_p = pred_g.a_sys.matvec(&x).add(&pred_g.b_sys);
            glob_acc.push(&xdot_p.sub(&xdot_t), &xdot_t);
            seen = true;
            for d in 0..n_dev {
                let xd = cols_slice(&x, 2 * d, 2);
                let ud = cols_slice(&u, 2 * d, 2);
                let td = &s.truth.components[d];
                let dot_t = td.derivative(&xd, &ud);
                let dot_p = pred_c[d].derivative(&xd, &ud);
                dev_acc[d].push(&dot_p.sub(&dot_t), &dot_t);
            }
        }
    }
    if !seen {
        return Err(Error::Config(
            "derivative_error: no samples selected".into(),
        ));
    }
    Ok(DerivativeError {
        per_device: dev_acc.iter().map(RelAcc::ratio).collect(),
        global: glob_acc.ratio(),
    })
}

/// Same metric for an arbitrary whole-system matrix (used by the
/// monolithic baseline and self-tests).
pub fn global_derivative_error(
    predict: impl Fn(&[f64]) -> Result<GlobalModel>,
    ds: &Dataset,
    indices: &[usize],
) -> Result<f64> {
    let mut acc = RelAcc::default();
    let mut seen = false;
    for &i in indices {
        let s = &ds.raw.samples[i];
        let pred = predict(&s.cond)?;
        let t = &s.traj;
        for k in 0..t.states.rows() {
            let x = rows(&t.states, k);
            let xdot_t = s.truth.a_sys.matvec(&x);
            let xdot_p = pred.a_sys.matvec(&x).add(&pred.b_sys);
            acc.push(&xdot_p.sub(&xdot_t), &xdot_t);
            seen = true;
        }
    }
    if !seen {
        return Err(Error::Config(
            "derivative_error: no samples selected".into(),
        ));
    }
    Ok(acc.ratio())
}

/// Plot-ready triples (x, y, series label), one row per point.
pub fn write_series_csv(path: &std::path::Path, rows: &[(f64, f64, String)]) -> Result<()> {
    use std::io::Write as _;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "x,y,series")?;
    for (x, y, s) in rows {
        writeln!(f, "{x:.12e},{y:.12e},{s}")?;
    }
    Ok(())
}
