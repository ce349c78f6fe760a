//! Learned per-device models. Every device carries small MLPs that emit its
//! state-space matrices as a function of a local operating point, which is
//! itself produced from the global operating point by a per-device mapping
//! net. Matrices are frozen over a trajectory because the operating point
//! is fixed per sample.

pub mod checkpoint;
pub mod observer;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{ComponentMatrices, ComponentVars, Frame, NetworkMatrix};
use crate::nn::{HeadInit, Mlp, ParamId, ParamStore, Session};
use crate::ode::midpoint_step_driven;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDims {
    /// State dimension n_i.
    pub n: usize,
    /// Port-input dimension m_i.
    pub m: usize,
    /// Port-output dimension q_i.
    pub q: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Dimension of the learned local operating point.
    pub local_dim: usize,
    /// Hidden width of every generator MLP (two hidden layers).
    pub hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            local_dim: 4,
            hidden: 16,
            seed: 0,
        }
    }
}

/// The four matrix generators plus bias generators of one device, and its
/// mapping net from the global to the local operating point.
#[derive(Debug, Clone)]
pub struct DeviceModel {
    pub id: usize,
    pub dims: DeviceDims,
    pub mapping: Mlp,
    w_a: Mlp,
    b_state_net: Mlp,
    w_b: Mlp,
    w_c: Mlp,
    b_output_net: Mlp,
    w_d: Mlp,
    /// False when this device's states are treated as unmeasurable; its
    /// training signal then comes from outputs and the global loss only.
    pub measured: bool,
}

impl DeviceModel {
    pub fn new(
        store: &mut ParamStore,
        id: usize,
        dims: DeviceDims,
        cond_dim: usize,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> DeviceModel {
        let p = cfg.local_dim;
        let h = cfg.hidden;
        let pre = format!("dev{id}");
        // The mapping head starts small but nonzero: a zero head on top of
        // the zero matrix heads double-gates the conditioning pathway and
        // operating-point dependence trains far too slowly, while a full
        // scale head destabilizes the early epochs.
        let mapping = Mlp::new(
            store,
            &format!("{pre}.map"),
            &[cond_dim, h, h, p],
            HeadInit::Scaled(0.1),
            rng,
        );
        // The state matrix starts at -I so early rollouts stay bounded;
        // every other head starts at zero.
        let mut neg_eye = vec![0.0; dims.n * dims.n];
        for i in 0..dims.n {
            neg_eye[i * dims.n + i] = -1.0;
        }
        let w_a = Mlp::new(
            store,
            &format!("{pre}.wa"),
            &[p, h, h, dims.n * dims.n],
            HeadInit::Const(neg_eye),
            rng,
        );
        let b_state_net = Mlp::new(
            store,
            &format!("{pre}.ba"),
            &[p, h, h, dims.n],
            HeadInit::Zero,
            rng,
        );
        let w_b = Mlp::new(
            store,
            &format!("{pre}.wb"),
            &[p, h, h, dims.n * dims.m],
            HeadInit::Zero,
            rng,
        );
        let w_c = Mlp::new(
            store,
            &format!("{pre}.wc"),
            &[p, h, h, dims.q * dims.n],
            HeadInit::Zero,
            rng,
        );
        let b_output_net = Mlp::new(
            store,
            &format!("{pre}.bc"),
            &[p, h, h, dims.q],
            HeadInit::Zero,
            rng,
        );
        let w_d = Mlp::new(
            store,
            &format!("{pre}.wd"),
            &[p, h, h, dims.q * dims.m],
            HeadInit::Zero,
            rng,
        );
        DeviceModel {
            id,
            dims,
            mapping,
            w_a,
            b_state_net,
            w_b,
            w_c,
            b_output_net,
            w_d,
            measured: true,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for mlp in [
            &self.mapping,
            &self.w_a,
            &self.b_state_net,
            &self.w_b,
            &self.w_c,
            &self.b_output_net,
            &self.w_d,
        ] {
            ids.extend(mlp.param_ids());
        }
        ids
    }

    pub fn local_point_tape(&self, sess: &mut Session, p_g: Var) -> Var {
        self.mapping.forward(sess, p_g)
    }

    pub fn local_point(&self, store: &ParamStore, p_g: &Tensor) -> Tensor {
        self.mapping.forward_plain(store, p_g)
    }

    /// Emit the device matrices at a local operating point, recorded.
    /// vec() outputs reshape row-major into their target shapes.
    pub fn matrices_tape(&self, sess: &mut Session, p_d: Var) -> ComponentVars {
        let DeviceDims { n, m, q } = self.dims;
        let va = self.w_a.forward(sess, p_d);
        let a = sess.tape.reshape(va, vec![n, n]);
        let vb = self.w_b.forward(sess, p_d);
        let b = sess.tape.reshape(vb, vec![n, m]);
        let vc = self.w_c.forward(sess, p_d);
        let c = sess.tape.reshape(vc, vec![q, n]);
        let vd = self.w_d.forward(sess, p_d);
        let d = sess.tape.reshape(vd, vec![q, m]);
        let b_state = self.b_state_net.forward(sess, p_d);
        let b_output = self.b_output_net.forward(sess, p_d);
        ComponentVars {
            a,
            b,
            c,
            d,
            b_state,
            b_output,
        }
    }

    pub fn matrices(&self, store: &ParamStore, p_d: &Tensor) -> ComponentMatrices {
        let DeviceDims { n, m, q } = self.dims;
        ComponentMatrices {
            a: self.w_a.forward_plain(store, p_d).reshaped(vec![n, n]),
            b: self.w_b.forward_plain(store, p_d).reshaped(vec![n, m]),
            c: self.w_c.forward_plain(store, p_d).reshaped(vec![q, n]),
            d: self.w_d.forward_plain(store, p_d).reshaped(vec![q, m]),
            b_state: self.b_state_net.forward_plain(store, p_d),
            b_output: self.b_output_net.forward_plain(store, p_d),
            frame: Frame::Normalized,
        }
    }
}

impl ComponentMatrices {
    /// dx' = A dx + B du + b_state.
    pub fn derivative(&self, dx: &Tensor, du: &Tensor) -> Tensor {
        self.a.matvec(dx).add(&self.b.matvec(du)).add(&self.b_state)
    }

    /// dy = C dx + D du + b_output.
    pub fn output(&self, dx: &Tensor, du: &Tensor) -> Tensor {
        self.c
            .matvec(dx)
            .add(&self.d.matvec(du))
            .add(&self.b_output)
    }
}

/// Driven rollout with the matrices held fixed: states by the explicit
/// midpoint rule, an output sample at every step. Both series have
/// `u_seq.len()` entries; the last state uses no further input.
pub fn rollout_driven_tape(
    sess: &mut Session,
    comp: &ComponentVars,
    x0: Var,
    u_seq: &[Var],
    dt: f64,
) -> Result<(Vec<Var>, Vec<Var>)> {
    if u_seq.len() < 2 {
        return Err(Error::IndexError(format!(
            "driven rollout needs at least 2 input samples, got {}",
            u_seq.len()
        )));
    }
    let (a, b, bs) = (comp.a, comp.b, comp.b_state);
    let mut f = move |tape: &mut crate::tape::Tape, x: Var, u: Var| {
        let ax = tape.matvec(a, x);
        let bu = tape.matvec(b, u);
        let s = tape.add(ax, bu);
        tape.add(s, bs)
    };
    let mut states = Vec::with_capacity(u_seq.len());
    states.push(x0);
    let mut x = x0;
    for t in 0..u_seq.len() - 1 {
        x = midpoint_step_driven(&mut sess.tape, &mut f, x, u_seq, t, dt)?;
        let norm = sess.tape.value(x).norm2();
        if !norm.is_finite() || norm > 1e6 {
            return Err(Error::Divergence { step: t + 1, norm });
        }
        states.push(x);
    }
    let mut outputs = Vec::with_capacity(u_seq.len());
    for (&x, &u) in states.iter().zip(u_seq) {
        let cx = sess.tape.matvec(comp.c, x);
        let du = sess.tape.matvec(comp.d, u);
        let s = sess.tape.add(cx, du);
        let y = sess.tape.add(s, comp.b_output);
        outputs.push(y);
    }
    Ok((states, outputs))
}

/// The whole learned hierarchy: per-device models plus one constant network
/// matrix, all parameters in a single ordered store.
#[derive(Debug, Clone)]
pub struct HierModel {
    pub store: ParamStore,
    pub devices: Vec<DeviceModel>,
    pub net_id: ParamId,
    pub cond_dim: usize,
    pub config: ModelConfig,
}

impl HierModel {
    /// `dims` per device, one shared conditioning dimension. The network
    /// matrix starts at the identity so the interface elimination is
    /// well-posed before training moves it.
    pub fn new(dims: &[DeviceDims], cond_dim: usize, cfg: ModelConfig) -> HierModel {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let devices: Vec<DeviceModel> = dims
            .iter()
            .enumerate()
            .map(|(i, &d)| DeviceModel::new(&mut store, i, d, cond_dim, &cfg, &mut rng))
            .collect();
        let q_total: usize = dims.iter().map(|d| d.q).sum();
        let m_total: usize = dims.iter().map(|d| d.m).sum();
        assert_eq!(
            q_total, m_total,
            "stacked ports must be square for the closure"
        );
        let net_id = store.add("net.m", Tensor::eye(q_total));
        HierModel {
            store,
            devices,
            net_id,
            cond_dim,
            config: cfg,
        }
    }

    pub fn network(&self) -> NetworkMatrix {
        NetworkMatrix {
            m: self.store.get(self.net_id).clone(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.devices.iter().map(|d| d.dims.n).sum()
    }

    /// All component matrices at one global operating point, plain path.
    pub fn components(&self, p_g: &Tensor) -> Vec<ComponentMatrices> {
        self.devices
            .iter()
            .map(|d| d.matrices(&self.store, &d.local_point(&self.store, p_g)))
            .collect()
    }

    /// Same through a recording session.
    pub fn components_tape(&self, sess: &mut Session, p_g: Var) -> Vec<ComponentVars> {
        self.devices
            .iter()
            .map(|d| {
                let p_d = d.local_point_tape(sess, p_g);
                d.matrices_tape(sess, p_d)
            })
            .collect()
    }
}
