//! The composite training loss over one trajectory window: interface
//! consistency, per-device teacher-forced rollouts, and a fused whole-system
//! rollout, all in the normalized frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse_global_tape, ComponentVars, GlobalVars};
use crate::model::observer::{build_augmented, ObserverNet};
use crate::model::{rollout_driven_tape, DeviceDims, HierModel, ModelConfig};
use crate::nn::{ParamStore, Session};
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::train::normalize::{Dataset, NormSample};
use crate::train::slicing::Slice;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Output-error weight inside the per-device term.
    pub lambda: f64,
}

impl LossWeights {
    pub fn stage_one() -> LossWeights {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.05,
            lambda: 1.0,
        }
    }

    pub fn stage_two(gamma: f64) -> LossWeights {
        LossWeights {
            alpha: 0.2,
            beta: 0.2,
            gamma,
            lambda: 1.0,
        }
    }
}

/// Scalar values of the loss parts, for logging.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub network: f64,
    pub local: f64,
    pub global: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.network += other.network;
        self.local += other.local;
        self.global += other.global;
        self.total += other.total;
    }

    pub fn scale(&self, f: f64) -> LossBreakdown {
        LossBreakdown {
            network: self.network * f,
            local: self.local * f,
            global: self.global * f,
            total: self.total * f,
        }
    }
}

/// The full learned system: the hierarchy of device models plus windowed
/// state estimators for devices whose states are never observed. All
/// parameters live in one ordered store.
#[derive(Debug, Clone)]
pub struct LearnedSystem {
    pub model: HierModel,
    pub observers: Vec<Option<ObserverNet>>,
    pub window: usize,
}

impl LearnedSystem {
    pub fn new(
        dims: &[DeviceDims],
        cond_dim: usize,
        cfg: ModelConfig,
        measured: &[bool],
        window: usize,
    ) -> LearnedSystem {
        assert_eq!(dims.len(), measured.len());
        let mut model = HierModel::new(dims, cond_dim, cfg.clone());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x0b5e));
        let observers = dims
            .iter()
            .enumerate()
            .map(|(i, d)| {
                if measured[i] {
                    None
                } else {
                    Some(ObserverNet::new(
                        &mut model.store,
                        i,
                        d.n,
                        d.q,
                        d.m,
                        window,
                        cfg.local_dim,
                        cfg.hidden,
                        &mut rng,
                    ))
                }
            })
            .collect();
        LearnedSystem {
            model,
            observers,
            window,
        }
    }

    /// Earliest slice start that leaves room for the estimator windows.
    pub fn min_start(&self) -> usize {
        if self.observers.iter().any(|o| o.is_some()) {
            self.window - 1
        } else {
            0
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.model.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }
}

use rand_chacha::rand_core::SeedableRng;

/// Rows `start..start+len` of the columns `2d..2d+2`, flattened row-major.
fn device_block(m: &Tensor, d: usize, start: usize, len: usize) -> Vec<f64> {
    let c = m.cols();
    let mut out = Vec::with_capacity(len * 2);
    for r in start..start + len {
        out.push(m.data()[r * c + 2 * d]);
        out.push(m.data()[r * c + 2 * d + 1]);
    }
    out
}

/// Device columns of a full series as a standalone `[T, 2]` matrix.
fn device_series(m: &Tensor, d: usize) -> Tensor {
    Tensor::new(vec![m.rows(), 2], device_block(m, d, 0, m.rows()))
}

/// Columns of `m` over the window, transposed to `[channels, len]` so the
/// interface residual is a single matrix product.
fn window_transposed(m: &Tensor, start: usize, len: usize) -> Tensor {
    let c = m.cols();
    let mut out = Tensor::zeros(&[c, len]);
    for (k, r) in (start..start + len).enumerate() {
        for j in 0..c {
            out.set(j, k, m.get(r, j));
        }
    }
    out
}

/// State estimate for a flagged device at step `t`, recorded on the tape so
/// the estimator trains jointly with everything else.
fn observer_estimate(
    sess: &mut Session,
    sys: &LearnedSystem,
    obs: &ObserverNet,
    d: usize,
    p_g: Var,
    ns: &NormSample,
    t: usize,
) -> Result<Var> {
    let y_dev = device_series(&ns.outputs, d);
    let u_dev = device_series(&ns.inputs, d);
    let (y_aug, u_aug) = build_augmented(&y_dev, &u_dev, t, sys.window)?;
    let y_aug = sess.tape.leaf(y_aug);
    let u_aug = sess.tape.leaf(u_aug);
    let p_d = sys.model.devices[d].local_point_tape(sess, p_g);
    Ok(obs.observe_tape(sess, p_d, y_aug, u_aug))
}

/// Record the weighted loss for one window on the session's tape.
/// Returns the total plus the unweighted part values.
pub fn slice_loss_tape(
    sess: &mut Session,
    sys: &LearnedSystem,
    ds: &Dataset,
    sl: Slice,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let ns = &ds.samples[sl.sample];
    let dt = ds.raw.samples[sl.sample].traj.dt;
    let n_dev = sys.model.devices.len();
    let q_total: usize = sys.model.devices.iter().map(|m| m.dims.q).sum();

    let p_g = sess.tape.leaf(ns.cond.clone());
    let comps: Vec<ComponentVars> = sys.model.components_tape(sess, p_g);
    let m_net = sess.var(sys.model.net_id);

    // Interface consistency: Y = M U over the window, one matrix product.
    let u_block = sess
        .tape
        .leaf(window_transposed(&ns.inputs, sl.start, sl.len));
    let y_block = sess
        .tape
        .leaf(window_transposed(&ns.outputs, sl.start, sl.len));
    let mu = sess.tape.matmul(m_net, u_block);
    let res = sess.tape.sub(mu, y_block);
    let sq = sess.tape.sq_sum(res);
    let l_network = sess.tape.scale(sq, 1.0 / (sl.len * q_total) as f64);

    // Per-device teacher-forced rollouts.
    let mut device_terms = Vec::with_capacity(n_dev);
    let mut device_inits = Vec::with_capacity(n_dev);
    for d in 0..n_dev {
        let dims = sys.model.devices[d].dims;
        let u_seq: Vec<Var> = (sl.start..sl.start + sl.len)
            .map(|t| {
                sess.tape
                    .leaf(Tensor::vector(device_block(&ns.inputs, d, t, 1)))
            })
            .collect();
        let x0 = match &sys.observers[d] {
            None => sess
                .tape
                .leaf(Tensor::vector(device_block(&ns.states, d, sl.start, 1))),
            Some(obs) => observer_estimate(sess, sys, obs, d, p_g, ns, sl.start)?,
        };
        let (states, outputs) = rollout_driven_tape(sess, &comps[d], x0, &u_seq, dt)?;
        device_inits.push(x0);

        let y_pred = sess.tape.concat_vec(&outputs);
        let y_true = sess.tape.leaf(Tensor::vector(device_block(
            &ns.outputs,
            d,
            sl.start,
            sl.len,
        )));
        let y_res = sess.tape.sub(y_pred, y_true);
        let y_sq = sess.tape.sq_sum(y_res);
        let y_mse = sess.tape.scale(y_sq, w.lambda / (sl.len * dims.q) as f64);

        let term = if sys.observers[d].is_none() {
            let x_pred = sess.tape.concat_vec(&states);
            let x_true = sess.tape.leaf(Tensor::vector(device_block(
                &ns.states, d, sl.start, sl.len,
            )));
            let x_res = sess.tape.sub(x_pred, x_true);
            let x_sq = sess.tape.sq_sum(x_res);
            let x_mse = sess.tape.scale(x_sq, 1.0 / (sl.len * dims.n) as f64);
            sess.tape.add(x_mse, y_mse)
        } else {
            y_mse
        };
        device_terms.push(term);
    }
    let sum = sess.tape.add_n(&device_terms);
    let l_local = sess.tape.scale(sum, 1.0 / n_dev as f64);

    // Fused whole-system rollout, autonomous from the window start.
    let l_global = if w.gamma != 0.0 {
        let g: GlobalVars = fuse_global_tape(&mut sess.tape, &comps, m_net)?;
        let x0 = sess.tape.concat_vec(&device_inits);
        let rollout = global_rollout(sess, g, x0, sl.len - 1, dt)?;
        let x_pred = sess.tape.concat_vec(&rollout);
        let mut target = Vec::with_capacity(sl.len * 2 * n_dev);
        let mut mask = Vec::with_capacity(sl.len * 2 * n_dev);
        for t in sl.start..sl.start + sl.len {
            for d in 0..n_dev {
                target.extend_from_slice(&device_block(&ns.states, d, t, 1));
                let m = if sys.observers[d].is_none() { 1.0 } else { 0.0 };
                mask.extend_from_slice(&[m, m]);
            }
        }
        let n_live = mask.iter().sum::<f64>();
        if n_live == 0.0 {
            return Err(Error::Config(
                "every device is unmeasured; nothing to fit".into(),
            ));
        }
        let x_true = sess.tape.leaf(Tensor::vector(target));
        let x_res = sess.tape.sub(x_pred, x_true);
        let msq = sess.tape.masked_sq_sum(x_res, mask);
        Some(sess.tape.scale(msq, 1.0 / n_live))
    } else {
        None
    };

    let a = sess.tape.scale(l_network, w.alpha);
    let b = sess.tape.scale(l_local, w.beta);
    let mut total = sess.tape.add(a, b);
    if let Some(g) = l_global {
        total = sess.tape.add_scaled(total, g, w.gamma);
    }
    let bd = LossBreakdown {
        network: sess.tape.value(l_network).scalar_value(),
        local: sess.tape.value(l_local).scalar_value(),
        global: l_global
            .map(|g| sess.tape.value(g).scalar_value())
            .unwrap_or(0.0),
        total: sess.tape.value(total).scalar_value(),
    };
    Ok((total, bd))
}

fn global_rollout(
    sess: &mut Session,
    g: GlobalVars,
    x0: Var,
    steps: usize,
    dt: f64,
) -> Result<Vec<Var>> {
    crate::fusion::global_rollout_tape(&mut sess.tape, g, x0, steps, dt)
}

/// Overwrite the constant heads so every device emits the normalized truth
/// matrices and the interface matrix matches the normalized truth coupling.
/// Only meaningful for a dataset generated at a single operating point;
/// used to check that the exact system sits at the loss floor.
pub fn inject_truth(sys: &mut LearnedSystem, ds: &Dataset) {
    let s = &ds.raw.samples[0];
    let comps = crate::grid::linearize::linearize_all(&ds.raw.grid, &s.eq);
    for (d, truth) in comps.iter().enumerate() {
        let dstats = ds.stats.device(d);
        let n = crate::train::normalize::normalize_component(truth, &dstats).unwrap();
        let heads = [
            (format!("dev{d}.wa"), n.a.data().to_vec()),
            (format!("dev{d}.ba"), n.b_state.data().to_vec()),
            (format!("dev{d}.wb"), n.b.data().to_vec()),
            (format!("dev{d}.wc"), n.c.data().to_vec()),
            (format!("dev{d}.bc"), n.b_output.data().to_vec()),
            (format!("dev{d}.wd"), n.d.data().to_vec()),
        ];
        set_head_biases(sys.store_mut(), &heads);
    }
    // Normalized interface matrix: Y_n = S_y^-1 M S_u U_n. The constant part
    // vanishes because the trajectory means satisfy M_y = M M_u at a fixed
    // operating point.
    let m = &s.eq.m_net;
    let mut mn = m.clone();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            mn.set(i, j, m.get(i, j) * ds.stats.u.s[j] / ds.stats.y.s[i]);
        }
    }
    let net_id = sys.model.net_id;
    sys.store_mut().set(net_id, mn);
}

/// Set the final-layer bias of each named head MLP; the final weights are
/// zero from initialization, so the head output becomes constant.
fn set_head_biases(store: &mut ParamStore, heads: &[(String, Vec<f64>)]) {
    for (prefix, value) in heads {
        let mut target = None;
        for i in 0..store.len() {
            let id = crate::nn::ParamId(i);
            if store.name(id).starts_with(prefix.as_str()) && store.get(id).shape().len() == 1 {
                target = Some(id);
            }
        }
        let id = target.unwrap_or_else(|| panic!("no head bias under {prefix}"));
        let shape = store.get(id).shape().to_vec();
        assert_eq!(shape, vec![value.len()], "head {prefix} bias shape");
        store.set(id, Tensor::vector(value.clone()));
    }
}

/// Per-device teacher-forced output error, averaged over the given slices.
/// Flagged devices start from the estimated state, measured ones from truth,
/// exactly as during training.
pub fn device_output_mse(sys: &LearnedSystem, ds: &Dataset, slices: &[Slice]) -> Result<Vec<f64>> {
    let n_dev = sys.model.devices.len();
    let mut acc = vec![0.0; n_dev];
    let mut used = 0usize;
    for &sl in slices {
        let mut sess = Session::open(sys.store());
        let ns = &ds.samples[sl.sample];
        let dt = ds.raw.samples[sl.sample].traj.dt;
        let p_g = sess.tape.leaf(ns.cond.clone());
        let comps = sys.model.components_tape(&mut sess, p_g);
        let mut per_dev = vec![0.0; n_dev];
        let mut diverged = false;
        for d in 0..n_dev {
            let dims = sys.model.devices[d].dims;
            let u_seq: Vec<Var> = (sl.start..sl.start + sl.len)
                .map(|t| {
                    sess.tape
                        .leaf(Tensor::vector(device_block(&ns.inputs, d, t, 1)))
                })
                .collect();
            let x0 = match &sys.observers[d] {
                None => sess
                    .tape
                    .leaf(Tensor::vector(device_block(&ns.states, d, sl.start, 1))),
                Some(obs) => observer_estimate(&mut sess, sys, obs, d, p_g, ns, sl.start)?,
            };
            let (_, outputs) = match rollout_driven_tape(&mut sess, &comps[d], x0, &u_seq, dt) {
                Ok(v) => v,
                Err(Error::Divergence { .. }) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let mut sq = 0.0;
            for (k, t) in (sl.start..sl.start + sl.len).enumerate() {
                let y_true = device_block(&ns.outputs, d, t, 1);
                let y_pred = sess.tape.value(outputs[k]).data();
                for (a, b) in y_pred.iter().zip(&y_true) {
                    sq += (a - b) * (a - b);
                }
            }
            per_dev[d] = sq / (sl.len * dims.q) as f64;
        }
        if diverged {
            continue;
        }
        for d in 0..n_dev {
            acc[d] += per_dev[d];
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::Divergence {
            step: 0,
            norm: f64::INFINITY,
        });
    }
    Ok(acc.into_iter().map(|v| v / used as f64).collect())
}

/// Loss values without gradients, averaged over the given slices.
/// Diverged windows are skipped and counted.
pub fn evaluate_slices(
    sys: &LearnedSystem,
    ds: &Dataset,
    slices: &[Slice],
    w: &LossWeights,
) -> Result<(LossBreakdown, usize)> {
    let mut acc = LossBreakdown::default();
    let mut used = 0usize;
    let mut skipped = 0usize;
    for &sl in slices {
        let mut sess = Session::open(sys.store());
        match slice_loss_tape(&mut sess, sys, ds, sl, w) {
            Ok((_, bd)) => {
                acc.accumulate(&bd);
                used += 1;
            }
            Err(Error::Divergence { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::Divergence {
            step: 0,
            norm: f64::INFINITY,
        });
    }
    Ok((acc.scale(1.0 / used as f64), skipped))
}
