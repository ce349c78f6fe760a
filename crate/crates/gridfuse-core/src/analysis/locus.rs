//! Eigenvalue paths under a swept load: at each sweep point the simulator
//! gives the truth spectrum and the trained system gives its prediction,
//! matched mode-by-mode.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::linearize::truth_global;
use crate::grid::powerflow::newton_power_flow;
use crate::grid::GridModel;
use crate::train::loss::LearnedSystem;
use crate::train::normalize::NormStats;

use super::{pair_modes, predict_global};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocusPoint {
    /// Swept load active power, p.u.
    pub param: f64,
    pub truth: Vec<Complex64>,
    pub pred: Vec<Complex64>,
    /// `pairing[i] = j`: predicted mode i matches truth mode j.
    pub pairing: Vec<usize>,
    /// Power flow failed here; spectra are empty and the point is skipped
    /// in continuity checks.
    pub infeasible: bool,
}

/// Sweep the active power of the load at `bus` from `range.0` to `range.1`
/// over `n_points` evenly spaced points. A predictor is optional so the
/// truth locus can be produced on its own.
pub fn root_locus(
    grid: &GridModel,
    bus: usize,
    range: (f64, f64),
    n_points: usize,
    predictor: Option<(&LearnedSystem, &NormStats)>,
) -> Result<Vec<LocusPoint>> {
    if n_points < 2 {
        return Err(Error::Config("root locus needs at least 2 points".into()));
    }
    let load_idx = grid
        .loads
        .iter()
        .position(|l| l.bus == bus)
        .ok_or_else(|| Error::Config(format!("no load at bus {bus}")))?;
    let mut points = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let p = range.0 + (range.1 - range.0) * k as f64 / (n_points - 1) as f64;
        let mut op = grid.nominal_op();
        op.load_p[load_idx] = p;
        let eq = match newton_power_flow(grid, &op) {
            Ok(eq) => eq,
            Err(Error::PowerFlowDiverged { .. }) | Err(Error::InfeasibleOperatingPoint(_)) => {
                points.push(LocusPoint {
                    param: p,
                    truth: Vec::new(),
                    pred: Vec::new(),
                    pairing: Vec::new(),
                    infeasible: true,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let truth = truth_global(grid, &eq)?;
        let truth_eigs = crate::eig::eig_dense(&truth.a_sys)?;
        let (pred_eigs, pairing) = match predictor {
            None => (truth_eigs.clone(), (0..truth_eigs.len()).collect()),
            Some((sys, stats)) => {
                let cond = op.to_vector(grid);
                let g = predict_global(sys, stats, &cond)?;
                let pe = crate::eig::eig_dense(&g.a_sys)?;
                let pairing = pair_modes(&pe, &truth_eigs);
                (pe, pairing)
            }
        };
        points.push(LocusPoint {
            param: p,
            truth: truth_eigs,
            pred: pred_eigs,
            pairing,
            infeasible: false,
        });
    }
    Ok(points)
}

/// Continuity statistics for matched paths: the largest single-step motion
/// of any predicted mode along the sweep, and the largest single-step
/// motion of any truth mode. Pairing swaps show up as predicted jumps far
/// exceeding the truth movement.
pub fn max_pairing_jump(points: &[LocusPoint]) -> (f64, f64) {
    let mut max_pred = 0.0_f64;
    let mut max_truth = 0.0_f64;
    let feasible: Vec<&LocusPoint> = points.iter().filter(|p| !p.infeasible).collect();
    for w in feasible.windows(2) {
        let (a, b) = (w[0], w[1]);
        // Track truth modes across the step by nearest neighbor.
        let step_pairs = super::pair_modes(&a.truth, &b.truth);
        for (i, &j) in step_pairs.iter().enumerate() {
            max_truth = max_truth.max((a.truth[i] - b.truth[j]).norm());
            // Predicted modes follow their matched truth indices.
            let pi = a.pairing.iter().position(|&t| t == i);
            let pj = b.pairing.iter().position(|&t| t == j);
            if let (Some(pi), Some(pj)) = (pi, pj) {
                max_pred = max_pred.max((a.pred[pi] - b.pred[pj]).norm());
            }
        }
    }
    (max_pred, max_truth)
}
