//! Channel normalization by mean and mean absolute deviation, computed on
//! the training split only, plus the frame transforms that move learned
//! matrices back to physical coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{ComponentMatrices, Frame, GlobalModel};
use crate::grid::dataset::RawDataset;
use crate::tensor::Tensor;

pub const S_FLOOR: f64 = 1e-9;

/// Per-channel affine statistics for one variable family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mu: Vec<f64>,
    pub s: Vec<f64>,
    /// Channels whose deviation hit the floor (constant channels).
    pub floored: Vec<usize>,
}

impl ChannelStats {
    pub fn normalize_vec(&self, v: &Tensor) -> Tensor {
        let data = v
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| (x - self.mu[k]) / self.s[k])
            .collect();
        Tensor::new(v.shape().to_vec(), data)
    }

    pub fn denormalize_vec(&self, v: &Tensor) -> Tensor {
        let data = v
            .data()
            .iter()
            .enumerate()
            .map(|(k, &x)| x * self.s[k] + self.mu[k])
            .collect();
        Tensor::new(v.shape().to_vec(), data)
    }

    fn normalize_rows(&self, m: &Tensor) -> Tensor {
        let mut out = m.clone();
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                out.set(r, c, (m.get(r, c) - self.mu[c]) / self.s[c]);
            }
        }
        out
    }
}

/// Statistics for every family: states, port inputs, port outputs, and the
/// conditioning vector. States of unmeasured devices keep identity stats
/// because their trajectories are off-limits during training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    pub x: ChannelStats,
    pub u: ChannelStats,
    pub y: ChannelStats,
    pub cond: ChannelStats,
}

fn family_stats(columns: usize, rows: impl Iterator<Item = Vec<f64>> + Clone) -> ChannelStats {
    let mut mu = vec![0.0; columns];
    let mut count = 0usize;
    for row in rows.clone() {
        for (k, v) in row.iter().enumerate() {
            mu[k] += v;
        }
        count += 1;
    }
    for m in &mut mu {
        *m /= count as f64;
    }
    let mut s = vec![0.0; columns];
    for row in rows {
        for (k, v) in row.iter().enumerate() {
            s[k] += (v - mu[k]).abs();
        }
    }
    let mut floored = Vec::new();
    for (k, v) in s.iter_mut().enumerate() {
        *v /= count as f64;
        if *v < S_FLOOR {
            *v = S_FLOOR;
            floored.push(k);
        }
    }
    ChannelStats { mu, s, floored }
}

fn matrix_rows<'a>(ts: &'a [&'a Tensor]) -> impl Iterator<Item = Vec<f64>> + Clone + 'a {
    ts.iter().flat_map(|t| {
        let c = t.cols();
        (0..t.rows()).map(move |r| t.data()[r * c..(r + 1) * c].to_vec())
    })
}

/// One normalized sample: same layout as the raw trajectory matrices.
#[derive(Debug, Clone)]
pub struct NormSample {
    pub states: Tensor,
    pub inputs: Tensor,
    pub outputs: Tensor,
    pub cond: Tensor,
}

/// The training view of a dataset: normalized series plus split indices.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub raw: RawDataset,
    pub samples: Vec<NormSample>,
    pub stats: NormStats,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    /// Per-device measured flag, in device order.
    pub measured: Vec<bool>,
}

/// Deterministic 80/20 split by index order (generation is already random).
pub fn split_indices(n: usize, train_frac: f64) -> (Vec<usize>, Vec<usize>) {
    let cut = ((n as f64) * train_frac).round() as usize;
    ((0..cut).collect(), (cut..n).collect())
}

pub fn normalize(raw: RawDataset, measured: Vec<bool>, train_frac: f64) -> Result<Dataset> {
    let n_dev = raw.grid.machines.len();
    if measured.len() != n_dev {
        return Err(Error::Config(format!(
            "measured flags cover {} devices, grid has {n_dev}",
            measured.len()
        )));
    }
    if raw.samples.is_empty() {
        return Err(Error::Config("dataset has no samples".into()));
    }
    let (train_idx, test_idx) = split_indices(raw.samples.len(), train_frac);
    if train_idx.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }

    let train: Vec<_> = train_idx.iter().map(|&i| &raw.samples[i]).collect();
    let xs: Vec<&Tensor> = train.iter().map(|s| &s.traj.states).collect();
    let us: Vec<&Tensor> = train.iter().map(|s| &s.traj.inputs).collect();
    let ys: Vec<&Tensor> = train.iter().map(|s| &s.traj.outputs).collect();
    let n_states = xs[0].cols();
    let mut x_stats = family_stats(n_states, matrix_rows(&xs));
    let u_stats = family_stats(us[0].cols(), matrix_rows(&us));
    let y_stats = family_stats(ys[0].cols(), matrix_rows(&ys));
    // Unmeasured device states are never inspected: identity stats.
    for (d, &m) in measured.iter().enumerate() {
        if !m {
            for j in 2 * d..2 * d + 2 {
                x_stats.mu[j] = 0.0;
                x_stats.s[j] = 1.0;
            }
        }
    }
    let cond_dim = raw.samples[0].cond.len();
    let cond_stats = family_stats(cond_dim, train.iter().map(|s| s.cond.clone()));

    let stats = NormStats {
        x: x_stats,
        u: u_stats,
        y: y_stats,
        cond: cond_stats,
    };
    let samples = raw
        .samples
        .iter()
        .map(|s| NormSample {
            states: stats.x.normalize_rows(&s.traj.states),
            inputs: stats.u.normalize_rows(&s.traj.inputs),
            outputs: stats.y.normalize_rows(&s.traj.outputs),
            cond: stats.cond.normalize_vec(&Tensor::vector(s.cond.clone())),
        })
        .collect();
    Ok(Dataset {
        raw,
        samples,
        stats,
        train_idx,
        test_idx,
        measured,
    })
}

fn diag_apply(s: &[f64], m: &Tensor, from_left: bool, invert: bool) -> Tensor {
    let mut out = m.clone();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let f = if from_left { s[i] } else { s[j] };
            let f = if invert { 1.0 / f } else { f };
            out.set(i, j, m.get(i, j) * f);
        }
    }
    out
}

/// Slices of the global stats belonging to one device.
#[derive(Debug, Clone)]
pub struct DeviceStats {
    pub x_mu: Vec<f64>,
    pub x_s: Vec<f64>,
    pub u_mu: Vec<f64>,
    pub u_s: Vec<f64>,
    pub y_mu: Vec<f64>,
    pub y_s: Vec<f64>,
}

impl NormStats {
    /// Device d owns two state and two port channels in this pipeline.
    pub fn device(&self, d: usize) -> DeviceStats {
        let r = 2 * d..2 * d + 2;
        DeviceStats {
            x_mu: self.x.mu[r.clone()].to_vec(),
            x_s: self.x.s[r.clone()].to_vec(),
            u_mu: self.u.mu[r.clone()].to_vec(),
            u_s: self.u.s[r.clone()].to_vec(),
            y_mu: self.y.mu[r.clone()].to_vec(),
            y_s: self.y.s[r].to_vec(),
        }
    }
}

/// Physical matrices from normalized ones. With x = S_x x_n + M_x (same for
/// u, y), the normalized dynamics x_n' = A_n x_n + B_n u_n + b_n transform as
/// A_p = S_x A_n S_x^-1, B_p = S_x B_n S_u^-1,
/// b_p = S_x b_n - A_p M_x - B_p M_u, and the output map picks up
/// b_out_p = M_y + S_y b_out_n - C_p M_x - D_p M_u.
pub fn denormalize_component(c: &ComponentMatrices, ds: &DeviceStats) -> Result<ComponentMatrices> {
    if c.frame != Frame::Normalized {
        return Err(Error::FrameMismatch {
            expected: "normalized",
        });
    }
    let a_p = diag_apply(
        &ds.x_s,
        &diag_apply(&ds.x_s, &c.a, true, false),
        false,
        true,
    );
    let b_p = diag_apply(
        &ds.u_s,
        &diag_apply(&ds.x_s, &c.b, true, false),
        false,
        true,
    );
    let c_p = diag_apply(
        &ds.x_s,
        &diag_apply(&ds.y_s, &c.c, true, false),
        false,
        true,
    );
    let d_p = diag_apply(
        &ds.u_s,
        &diag_apply(&ds.y_s, &c.d, true, false),
        false,
        true,
    );
    let m_x = Tensor::vector(ds.x_mu.clone());
    let m_u = Tensor::vector(ds.u_mu.clone());
    let mut b_state = c.b_state.clone();
    for (k, v) in b_state.data_mut().iter_mut().enumerate() {
        *v *= ds.x_s[k];
    }
    let b_state = b_state.sub(&a_p.matvec(&m_x)).sub(&b_p.matvec(&m_u));
    let mut b_output = c.b_output.clone();
    for (k, v) in b_output.data_mut().iter_mut().enumerate() {
        *v = *v * ds.y_s[k] + ds.y_mu[k];
    }
    let b_output = b_output.sub(&c_p.matvec(&m_x)).sub(&d_p.matvec(&m_u));
    Ok(ComponentMatrices {
        a: a_p,
        b: b_p,
        c: c_p,
        d: d_p,
        b_state,
        b_output,
        frame: Frame::Physical,
    })
}

/// Inverse direction, used to inject physical truth into the normalized
/// frame for loss-floor checks.
pub fn normalize_component(c: &ComponentMatrices, ds: &DeviceStats) -> Result<ComponentMatrices> {
    if c.frame != Frame::Physical {
        return Err(Error::FrameMismatch {
            expected: "physical",
        });
    }
    let a_n = diag_apply(
        &ds.x_s,
        &diag_apply(&ds.x_s, &c.a, true, true),
        false,
        false,
    );
    let b_n = diag_apply(
        &ds.u_s,
        &diag_apply(&ds.x_s, &c.b, true, true),
        false,
        false,
    );
    let c_n = diag_apply(
        &ds.x_s,
        &diag_apply(&ds.y_s, &c.c, true, true),
        false,
        false,
    );
    let d_n = diag_apply(
        &ds.u_s,
        &diag_apply(&ds.y_s, &c.d, true, true),
        false,
        false,
    );
    let m_x = Tensor::vector(ds.x_mu.clone());
    let m_u = Tensor::vector(ds.u_mu.clone());
    let mut b_state = c.a.matvec(&m_x).add(&c.b.matvec(&m_u)).add(&c.b_state);
    for (k, v) in b_state.data_mut().iter_mut().enumerate() {
        *v /= ds.x_s[k];
    }
    let mut b_output = c.c.matvec(&m_x).add(&c.d.matvec(&m_u)).add(&c.b_output);
    for (k, v) in b_output.data_mut().iter_mut().enumerate() {
        *v = (*v - ds.y_mu[k]) / ds.y_s[k];
    }
    Ok(ComponentMatrices {
        a: a_n,
        b: b_n,
        c: c_n,
        d: d_n,
        b_state,
        b_output,
        frame: Frame::Normalized,
    })
}

/// Global recovery: A_p = S_x A_n S_x^-1, b_p = S_x b_n - A_p M_x.
pub fn denormalize_global(g: &GlobalModel, stats: &NormStats) -> Result<GlobalModel> {
    if g.frame != Frame::Normalized {
        return Err(Error::FrameMismatch {
            expected: "normalized",
        });
    }
    let a_p = diag_apply(
        &stats.x.s,
        &diag_apply(&stats.x.s, &g.a_sys, true, false),
        false,
        true,
    );
    let mut b_p = g.b_sys.clone();
    for (k, v) in b_p.data_mut().iter_mut().enumerate() {
        *v *= stats.x.s[k];
    }
    let b_p = b_p.sub(&a_p.matvec(&Tensor::vector(stats.x.mu.clone())));
    Ok(GlobalModel {
        a_sys: a_p,
        b_sys: b_p,
        frame: Frame::Physical,
        provenance: g.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eig::eig_dense;
    use crate::fusion::Provenance;
    use crate::grid::dataset::{generate_dataset, DatasetConfig};
    use crate::grid::linearize::linearize_all;
    use crate::grid::two_machine_three_bus;

    fn tiny_dataset() -> Dataset {
        let grid = two_machine_three_bus();
        let cfg = DatasetConfig {
            n_samples: 5,
            steps: 40,
            ..DatasetConfig::benchmark(&grid.name, 5, 1)
        };
        let raw = generate_dataset(&grid, &cfg).unwrap();
        normalize(raw, vec![true, true], 0.8).unwrap()
    }

    #[test]
    fn hand_stats() {
        let stats = family_stats(1, vec![vec![1.0], vec![2.0], vec![3.0]].into_iter());
        assert!((stats.mu[0] - 2.0).abs() < 1e-15);
        assert!((stats.s[0] - 2.0 / 3.0).abs() < 1e-15);
        let n = stats.normalize_vec(&Tensor::vector(vec![1.0]));
        assert!((n.data()[0] + 1.5).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_floors() {
        let stats = family_stats(1, vec![vec![4.0], vec![4.0]].into_iter());
        assert_eq!(stats.floored, vec![0]);
        assert_eq!(stats.s[0], S_FLOOR);
    }

    #[test]
    fn vector_round_trip() {
        let ds = tiny_dataset();
        let v = Tensor::vector(vec![0.01, -0.002, 0.03, 0.0001]);
        let back = ds.stats.x.denormalize_vec(&ds.stats.x.normalize_vec(&v));
        assert!(back.sub(&v).norm_inf() < 1e-12);
    }

    #[test]
    fn split_is_80_20() {
        let ds = tiny_dataset();
        assert_eq!(ds.train_idx.len(), 4);
        assert_eq!(ds.test_idx.len(), 1);
    }

    #[test]
    fn component_frame_round_trip() {
        let ds = tiny_dataset();
        let grid = ds.raw.grid.clone();
        let eq = &ds.raw.samples[0].eq;
        for (d, truth) in linearize_all(&grid, eq).iter().enumerate() {
            let dstats = ds.stats.device(d);
            let n = normalize_component(truth, &dstats).unwrap();
            let back = denormalize_component(&n, &dstats).unwrap();
            for (a, b) in [
                (&back.a, &truth.a),
                (&back.b, &truth.b),
                (&back.c, &truth.c),
                (&back.d, &truth.d),
                (&back.b_state, &truth.b_state),
                (&back.b_output, &truth.b_output),
            ] {
                assert!(a.sub(b).norm_inf() < 1e-10, "device {d}");
            }
        }
    }

    #[test]
    fn similarity_preserves_spectrum() {
        let ds = tiny_dataset();
        let truth = &ds.raw.samples[0].truth.a_sys;
        let g = GlobalModel {
            a_sys: truth.clone(),
            b_sys: Tensor::zeros(&[4]),
            frame: Frame::Normalized,
            provenance: Provenance::Truth,
        };
        // Treat the physical matrix as if it were normalized and push it
        // through the similarity: eigenvalues must not move.
        let p = denormalize_global(&g, &ds.stats).unwrap();
        let e1 = eig_dense(truth).unwrap();
        let e2 = eig_dense(&p.a_sys).unwrap();
        for (a, b) in e1.iter().zip(&e2) {
            assert!((a - b).norm() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn normalized_truth_reproduces_normalized_data() {
        // Inject truth matrices into the normalized frame and check that
        // they explain the normalized trajectories: the normalized state
        // derivative at step k matches A_n x_n + b_n via finite differences
        // of the normalized series to discretization accuracy.
        let ds = tiny_dataset();
        let s = &ds.raw.samples[0];
        let comps = linearize_all(&ds.raw.grid, &s.eq);
        let stacked = crate::fusion::block_diag_assemble(&comps);
        let net = crate::fusion::NetworkMatrix {
            m: s.eq.m_net.clone(),
        };
        let g =
            crate::fusion::fuse_global(&stacked, &net, Frame::Physical, Provenance::Truth).unwrap();
        // Normalized global dynamics by similarity.
        let a_n = diag_apply(
            &ds.stats.x.s,
            &diag_apply(&ds.stats.x.s, &g.a_sys, true, true),
            false,
            false,
        );
        let ns = &ds.samples[0];
        let dt = s.traj.dt;
        let mut worst = 0.0_f64;
        for k in 1..30 {
            let row = |kk: usize| {
                Tensor::vector((0..4).map(|j| ns.states.get(kk, j)).collect::<Vec<_>>())
            };
            let fd = row(k + 1).sub(&row(k - 1)).scale(1.0 / (2.0 * dt));
            // b_n accounts for the mean shift: x_n' = A_n x_n + b_n with
            // b_n = -A_n S^-1 M_x ... folded via denormalized check instead.
            let x_n = row(k);
            let mut x_shift = x_n.clone();
            for (j, v) in x_shift.data_mut().iter_mut().enumerate() {
                *v += ds.stats.x.mu[j] / ds.stats.x.s[j];
            }
            let pred = a_n.matvec(&x_shift);
            let err = fd.sub(&pred).norm_inf();
            worst = worst.max(err);
        }
        assert!(worst < 5e-2, "normalized-frame derivative mismatch {worst}");
    }
}
