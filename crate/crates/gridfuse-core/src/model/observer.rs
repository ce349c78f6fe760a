//! Windowed affine state reconstruction for devices whose states are not
//! measured: a causal stack of the last K port samples maps linearly to a
//! state estimate, with the map itself emitted by MLPs conditioned on the
//! local operating point.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{HeadInit, Mlp, ParamId, ParamStore, Session};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Causal window `[y(t), y(t-1), .., y(t-K+1)]` flattened, same for u.
/// Series are `[T, channels]` row-major.
pub fn build_augmented(
    y_series: &Tensor,
    u_series: &Tensor,
    t: usize,
    k: usize,
) -> Result<(Tensor, Tensor)> {
    if t + 1 < k {
        return Err(Error::WindowError { needed: k, at: t });
    }
    if t >= y_series.rows() || t >= u_series.rows() {
        return Err(Error::IndexError(format!(
            "window at step {t} past series of {} rows",
            y_series.rows().min(u_series.rows())
        )));
    }
    let stack = |s: &Tensor| {
        let c = s.cols();
        let mut out = Vec::with_capacity(k * c);
        for back in 0..k {
            let row = t - back;
            out.extend_from_slice(&s.data()[row * c..(row + 1) * c]);
        }
        Tensor::vector(out)
    };
    Ok((stack(y_series), stack(u_series)))
}

/// Generators for the reconstruction maps of one device.
#[derive(Debug, Clone)]
pub struct ObserverNet {
    pub n: usize,
    pub q: usize,
    pub m: usize,
    pub k: usize,
    m_gen: Mlp,
    n_gen: Mlp,
    b_gen: Mlp,
}

impl ObserverNet {
    /// Default window K = n (the device state dimension).
    pub fn new(
        store: &mut ParamStore,
        device: usize,
        n: usize,
        q: usize,
        m: usize,
        k: usize,
        local_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> ObserverNet {
        let pre = format!("obs{device}");
        let m_gen = Mlp::new(
            store,
            &format!("{pre}.m"),
            &[local_dim, hidden, hidden, n * k * q],
            HeadInit::Zero,
            rng,
        );
        let n_gen = Mlp::new(
            store,
            &format!("{pre}.n"),
            &[local_dim, hidden, hidden, n * k * m],
            HeadInit::Zero,
            rng,
        );
        let b_gen = Mlp::new(
            store,
            &format!("{pre}.b"),
            &[local_dim, hidden, hidden, n],
            HeadInit::Zero,
            rng,
        );
        ObserverNet {
            n,
            q,
            m,
            k,
            m_gen,
            n_gen,
            b_gen,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for mlp in [&self.m_gen, &self.n_gen, &self.b_gen] {
            ids.extend(mlp.param_ids());
        }
        ids
    }

    /// x_hat = M(p_d) y_aug + N(p_d) u_aug + b(p_d), recorded.
    pub fn observe_tape(&self, sess: &mut Session, p_d: Var, y_aug: Var, u_aug: Var) -> Var {
        let mv = self.m_gen.forward(sess, p_d);
        let m = sess.tape.reshape(mv, vec![self.n, self.k * self.q]);
        let nv = self.n_gen.forward(sess, p_d);
        let nm = sess.tape.reshape(nv, vec![self.n, self.k * self.m]);
        let b = self.b_gen.forward(sess, p_d);
        let my = sess.tape.matvec(m, y_aug);
        let nu = sess.tape.matvec(nm, u_aug);
        let s = sess.tape.add(my, nu);
        sess.tape.add(s, b)
    }

    pub fn observe(
        &self,
        store: &ParamStore,
        p_d: &Tensor,
        y_aug: &Tensor,
        u_aug: &Tensor,
    ) -> Tensor {
        let m = self
            .m_gen
            .forward_plain(store, p_d)
            .reshaped(vec![self.n, self.k * self.q]);
        let nm = self
            .n_gen
            .forward_plain(store, p_d)
            .reshaped(vec![self.n, self.k * self.m]);
        let b = self.b_gen.forward_plain(store, p_d);
        m.matvec(y_aug).add(&nm.matvec(u_aug)).add(&b)
    }
}

/// Numerical rank of `[C; CA; ..; CA^{n-1}]`: singular values above
/// 1e-8 of the largest, taken from the eigenvalues of O^T O.
pub fn observability_rank(a: &Tensor, c: &Tensor) -> usize {
    let n = a.rows();
    let rows = c.rows() * n;
    let mut o = Tensor::zeros(&[rows, n]);
    let mut block = c.clone();
    for p in 0..n {
        for i in 0..c.rows() {
            for j in 0..n {
                o.set(p * c.rows() + i, j, block.get(i, j));
            }
        }
        block = block.matmul(a);
    }
    let gram = o.transpose().matmul(&o);
    let eigs = crate::eig::eig_dense(&gram).expect("symmetric gram eigendecomposition");
    let max = eigs.iter().fold(0.0_f64, |m, e| m.max(e.re.max(0.0)));
    if max == 0.0 {
        return 0;
    }
    let tol = 1e-8 * max.sqrt();
    eigs.iter().filter(|e| e.re.max(0.0).sqrt() > tol).count()
}

/// Closed-form existence check: solve for one (M*, N*, b*) per window
/// position by least squares over a simulated record and report the
/// residual. Used by tests to certify a device as reconstructable before
/// training is asked to do it.
pub fn exact_reconstruction_residual(
    x_series: &Tensor,
    y_series: &Tensor,
    u_series: &Tensor,
    k: usize,
) -> Result<f64> {
    let t_total = x_series.rows();
    let n = x_series.cols();
    let cols = k * (y_series.cols() + u_series.cols()) + 1;
    let t0 = k - 1;
    let rows = t_total - t0;
    let mut design = Tensor::zeros(&[rows, cols]);
    let mut target = Tensor::zeros(&[rows, n]);
    for (r, t) in (t0..t_total).enumerate() {
        let (ya, ua) = build_augmented(y_series, u_series, t, k)?;
        let mut c = 0;
        for &v in ya.data().iter().chain(ua.data()) {
            design.set(r, c, v);
            c += 1;
        }
        design.set(r, c, 1.0);
        for j in 0..n {
            target.set(r, j, x_series.get(t, j));
        }
    }
    // The window features are rank-deficient by construction (outputs are
    // a fixed linear image of inputs through the network), so this needs
    // the pivoted QR path rather than normal equations.
    let sol = crate::linalg::lstsq(&design, &target)?;
    let resid = design.matmul(&sol).sub(&target);
    let denom = target.norm2().max(1e-12);
    Ok(resid.norm2() / denom)
}
