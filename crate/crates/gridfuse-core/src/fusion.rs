//! Component matrices, the network matrix, and analytic fusion into the
//! global model.
//!
//! Fusion eliminates the interface variables of the stacked component
//! models against the port-coupling matrix:
//!
//! ```text
//! A_sys = A + B (M_net - D)^{-1} C
//! b_sys = b_state + B (M_net - D)^{-1} b_output
//! ```
//!
//! The inverse is realized as a linear solve against `[C | b_output]`, never
//! formed explicitly, both in the plain and in the recorded (differentiable)
//! path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_linear;
use crate::ode::midpoint_step_autonomous;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Which variable frame a matrix set lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Physical,
    Normalized,
}

/// Where a global model came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Truth,
    Learned,
}

/// The `(A_i, B_i, C_i, D_i, b_state, b_output)` tuple of one device.
#[derive(Debug, Clone)]
pub struct ComponentMatrices {
    pub a: Tensor,
    pub b: Tensor,
    pub c: Tensor,
    pub d: Tensor,
    pub b_state: Tensor,
    pub b_output: Tensor,
    pub frame: Frame,
}

impl ComponentMatrices {
    pub fn n_states(&self) -> usize {
        self.a.rows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.cols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, q) = (self.n_states(), self.n_inputs(), self.n_outputs());
        let ok = self.a.shape() == [n, n]
            && self.b.shape() == [n, m]
            && self.c.shape() == [q, n]
            && self.d.shape() == [q, m]
            && self.b_state.shape() == [n]
            && self.b_output.shape() == [q];
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op: "ComponentMatrices",
                detail: format!(
                    "inconsistent shapes: A {:?} B {:?} C {:?} D {:?}",
                    self.a.shape(),
                    self.b.shape(),
                    self.c.shape(),
                    self.d.shape()
                ),
            })
        }
    }
}

/// Constant port-coupling matrix: stacked outputs = M_net * stacked inputs.
/// Channel ordering is device-major, real-then-imaginary.
#[derive(Debug, Clone)]
pub struct NetworkMatrix {
    pub m: Tensor,
}

impl NetworkMatrix {
    pub fn predict(&self, du_net: &Tensor) -> Tensor {
        self.m.matvec(du_net)
    }
}

/// Fused global model `x' = A_sys x + b_sys`.
#[derive(Debug, Clone)]
pub struct GlobalModel {
    pub a_sys: Tensor,
    pub b_sys: Tensor,
    pub frame: Frame,
    pub provenance: Provenance,
}

/// Block-diagonal aggregation of component matrices, with biases
/// concatenated in device order.
pub struct Stacked {
    pub a: Tensor,
    pub b: Tensor,
    pub c: Tensor,
    pub d: Tensor,
    pub b_state: Tensor,
    pub b_output: Tensor,
}

fn block_diag_plain(blocks: &[&Tensor]) -> Tensor {
    let rows: usize = blocks.iter().map(|b| b.rows()).sum();
    let cols: usize = blocks.iter().map(|b| b.cols()).sum();
    let mut out = Tensor::zeros(&[rows, cols]);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        for i in 0..b.rows() {
            for j in 0..b.cols() {
                out.set(r0 + i, c0 + j, b.get(i, j));
            }
        }
        r0 += b.rows();
        c0 += b.cols();
    }
    out
}

fn concat_plain(parts: &[&Tensor]) -> Tensor {
    let mut data = Vec::new();
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::vector(data)
}

/// Stack a list of components block-diagonally in device order.
pub fn block_diag_assemble(components: &[ComponentMatrices]) -> Stacked {
    assert!(
        !components.is_empty(),
        "block_diag_assemble: empty component list"
    );
    Stacked {
        a: block_diag_plain(&components.iter().map(|c| &c.a).collect::<Vec<_>>()),
        b: block_diag_plain(&components.iter().map(|c| &c.b).collect::<Vec<_>>()),
        c: block_diag_plain(&components.iter().map(|c| &c.c).collect::<Vec<_>>()),
        d: block_diag_plain(&components.iter().map(|c| &c.d).collect::<Vec<_>>()),
        b_state: concat_plain(&components.iter().map(|c| &c.b_state).collect::<Vec<_>>()),
        b_output: concat_plain(&components.iter().map(|c| &c.b_output).collect::<Vec<_>>()),
    }
}

/// Analytic elimination of the interface variables (plain path).
pub fn fuse_global(
    stacked: &Stacked,
    net: &NetworkMatrix,
    frame: Frame,
    provenance: Provenance,
) -> Result<GlobalModel> {
    let gap = net.m.sub(&stacked.d);
    // One factorization serves both the C block and the output bias.
    let q = stacked.c.rows();
    let n = stacked.c.cols();
    let mut rhs = Tensor::zeros(&[q, n + 1]);
    for i in 0..q {
        for j in 0..n {
            rhs.set(i, j, stacked.c.get(i, j));
        }
        rhs.set(i, n, stacked.b_output.data()[i]);
    }
    let sol = solve_linear(&gap, &rhs)?;
    let mut x_c = Tensor::zeros(&[q, n]);
    let mut x_b = Tensor::zeros(&[q]);
    for i in 0..q {
        for j in 0..n {
            x_c.set(i, j, sol.get(i, j));
        }
        x_b.data_mut()[i] = sol.get(i, n);
    }
    let a_sys = stacked.a.add(&stacked.b.matmul(&x_c));
    let b_sys = stacked.b_state.add(&stacked.b.matvec(&x_b));
    Ok(GlobalModel {
        a_sys,
        b_sys,
        frame,
        provenance,
    })
}

/// Component matrices already recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ComponentVars {
    pub a: Var,
    pub b: Var,
    pub c: Var,
    pub d: Var,
    pub b_state: Var,
    pub b_output: Var,
}

/// Fused global model recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GlobalVars {
    pub a_sys: Var,
    pub b_sys: Var,
}

/// Differentiable fusion: gradients reach every component entry and the
/// network matrix through the recorded linear solve.
pub fn fuse_global_tape(
    tape: &mut Tape,
    components: &[ComponentVars],
    m_net: Var,
) -> Result<GlobalVars> {
    assert!(!components.is_empty());
    let a = tape.block_diag(&components.iter().map(|c| c.a).collect::<Vec<_>>());
    let b = tape.block_diag(&components.iter().map(|c| c.b).collect::<Vec<_>>());
    let c = tape.block_diag(&components.iter().map(|c| c.c).collect::<Vec<_>>());
    let d = tape.block_diag(&components.iter().map(|c| c.d).collect::<Vec<_>>());
    let b_state = tape.concat_vec(&components.iter().map(|c| c.b_state).collect::<Vec<_>>());
    let b_output = tape.concat_vec(&components.iter().map(|c| c.b_output).collect::<Vec<_>>());

    let gap = tape.sub(m_net, d);
    let x_c = tape.solve(gap, c)?;
    let x_b = tape.solve(gap, b_output)?;
    let corr = tape.matmul(b, x_c);
    let a_sys = tape.add(a, corr);
    let bcorr = tape.matvec(b, x_b);
    let b_sys = tape.add(b_state, bcorr);
    Ok(GlobalVars { a_sys, b_sys })
}

/// Autonomous midpoint rollout of the fused model, recorded on the tape.
/// Returns the state at every step including the initial one.
pub fn global_rollout_tape(
    tape: &mut Tape,
    g: GlobalVars,
    x0: Var,
    steps: usize,
    dt: f64,
) -> Result<Vec<Var>> {
    assert!(steps >= 1, "global_rollout: need at least one step");
    let mut f = |tape: &mut Tape, x: Var| {
        let ax = tape.matvec(g.a_sys, x);
        tape.add(ax, g.b_sys)
    };
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0);
    let mut x = x0;
    for step in 0..steps {
        x = midpoint_step_autonomous(tape, &mut f, x, dt)?;
        let norm = tape.value(x).norm2();
        if !norm.is_finite() || norm > 1e6 {
            return Err(Error::Divergence { step, norm });
        }
        out.push(x);
    }
    Ok(out)
}

/// Plain rollout of a global model.
pub fn global_rollout(g: &GlobalModel, x0: &Tensor, steps: usize, dt: f64) -> Result<Vec<Tensor>> {
    assert!(steps >= 1);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    let mut x = x0.clone();
    for step in 0..steps {
        let mut f = |x: &Tensor| g.a_sys.matvec(x).add(&g.b_sys);
        x = crate::ode::midpoint_step_autonomous_plain(&mut f, &x, dt);
        let norm = x.norm2();
        if !norm.is_finite() || norm > 1e6 {
            return Err(Error::Divergence { step, norm });
        }
        out.push(x.clone());
    }
    Ok(out)
}
