//! Ground-truth trajectory integration of the fused linear model, with the
//! interface signals recovered at every step.

use super::linearize::linearize_all;
use super::powerflow::Equilibrium;
use super::GridModel;
use crate::error::{Error, Result};
use crate::fusion::{block_diag_assemble, fuse_global, Frame, NetworkMatrix, Provenance};
use crate::linalg::Lu;
use crate::tensor::Tensor;

/// One simulated run. Rows are time steps (including the initial condition),
/// columns are the stacked state or port channels.
#[derive(Debug, Clone)]
pub struct SimulatedTrajectory {
    pub dt: f64,
    /// Deviation states, `[steps + 1, n]`.
    pub states: Tensor,
    /// Port inputs per device (bus voltage deviations), `[steps + 1, q]`.
    pub inputs: Tensor,
    /// Port outputs per device (injected current deviations), `[steps + 1, q]`.
    pub outputs: Tensor,
}

/// Trapezoidal rule for x' = A x + b: one factorization of (I - dt/2 A)
/// serves every step.
pub fn implicit_trapezoid(
    a: &Tensor,
    b: &Tensor,
    x0: &Tensor,
    steps: usize,
    dt: f64,
) -> Result<Vec<Tensor>> {
    let n = x0.data().len();
    let mut left = Tensor::eye(n);
    let mut right = Tensor::eye(n);
    for i in 0..n {
        for j in 0..n {
            left.set(i, j, left.get(i, j) - 0.5 * dt * a.get(i, j));
            right.set(i, j, right.get(i, j) + 0.5 * dt * a.get(i, j));
        }
    }
    let lu = Lu::factor(&left)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    let mut x = x0.clone();
    for k in 0..steps {
        let rhs = right.matvec(&x).add(&b.scale(dt));
        x = Tensor::vector(lu.solve_vec(rhs.data()));
        let norm = x.norm_inf();
        if !norm.is_finite() || norm > 1e9 {
            return Err(Error::Divergence { step: k + 1, norm });
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Integrate the truth model from a state perturbation and recover the port
/// signals through the network constraint at every step.
pub fn simulate_truth(
    grid: &GridModel,
    eq: &Equilibrium,
    x0: &Tensor,
    steps: usize,
    dt: f64,
) -> Result<SimulatedTrajectory> {
    let comps = linearize_all(grid, eq);
    let stacked = block_diag_assemble(&comps);
    let net = NetworkMatrix {
        m: eq.m_net.clone(),
    };
    let global = fuse_global(&stacked, &net, Frame::Physical, Provenance::Truth)?;

    let n = global.a_sys.rows();
    let q = stacked.c.rows();
    if x0.data().len() != n {
        return Err(Error::ShapeMismatch {
            op: "simulate_truth",
            detail: format!(
                "initial state has {} entries, model has {n} states",
                x0.data().len()
            ),
        });
    }

    let states_vec = implicit_trapezoid(&global.a_sys, &global.b_sys, x0, steps, dt)?;

    let gap = net.m.sub(&stacked.d);
    let gap_lu = Lu::factor(&gap)?;
    let mut states = Tensor::zeros(&[steps + 1, n]);
    let mut inputs = Tensor::zeros(&[steps + 1, q]);
    let mut outputs = Tensor::zeros(&[steps + 1, q]);
    for (k, x) in states_vec.iter().enumerate() {
        let u = Tensor::vector(gap_lu.solve_vec(stacked.c.matvec(x).data()));
        let y = stacked.c.matvec(x).add(&stacked.d.matvec(&u));
        for j in 0..n {
            states.set(k, j, x.data()[j]);
        }
        for j in 0..q {
            inputs.set(k, j, u.data()[j]);
            outputs.set(k, j, y.data()[j]);
        }
    }
    Ok(SimulatedTrajectory {
        dt,
        states,
        inputs,
        outputs,
    })
}

impl SimulatedTrajectory {
    pub fn n_steps(&self) -> usize {
        self.states.rows() - 1
    }

    pub fn n_states(&self) -> usize {
        self.states.cols()
    }

    /// Columns of the state block belonging to device `i` (two per machine).
    pub fn state_cols(i: usize) -> std::ops::Range<usize> {
        2 * i..2 * i + 2
    }

    /// Columns of the port blocks belonging to device `i`.
    pub fn port_cols(i: usize) -> std::ops::Range<usize> {
        2 * i..2 * i + 2
    }

    pub fn state_row(&self, k: usize) -> Tensor {
        let n = self.n_states();
        Tensor::vector(self.states.data()[k * n..(k + 1) * n].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::powerflow::newton_power_flow;
    use crate::grid::two_machine_three_bus;

    #[test]
    fn scalar_decay_hand_value() {
        let a = Tensor::matrix(1, 1, vec![-1.0]);
        let b = Tensor::zeros(&[1]);
        let xs = implicit_trapezoid(&a, &b, &Tensor::vector(vec![1.0]), 1, 0.01).unwrap();
        let expect = (1.0 - 0.005) / (1.0 + 0.005);
        assert!((xs[1].data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn constant_forcing_reaches_fixed_point() {
        let a = Tensor::matrix(1, 1, vec![-2.0]);
        let b = Tensor::vector(vec![4.0]);
        let xs = implicit_trapezoid(&a, &b, &Tensor::vector(vec![0.0]), 5000, 0.01).unwrap();
        assert!((xs[5000].data()[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn second_order_convergence() {
        // Halving dt shrinks the endpoint error about fourfold.
        let a = Tensor::matrix(2, 2, vec![0.0, 1.0, -4.0, 0.0]);
        let b = Tensor::zeros(&[2]);
        let x0 = Tensor::vector(vec![1.0, 0.0]);
        let exact = (2.0_f64).cos();
        let err = |steps: usize| {
            let xs = implicit_trapezoid(&a, &b, &x0, steps, 1.0 / steps as f64).unwrap();
            (xs[steps].data()[0] - exact).abs()
        };
        let ratio = err(200) / err(400);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn ports_satisfy_network_constraint() {
        let grid = two_machine_three_bus();
        let eq = newton_power_flow(&grid, &grid.nominal_op()).unwrap();
        let mut x0 = Tensor::zeros(&[4]);
        x0.data_mut()[0] = 0.01;
        x0.data_mut()[2] = -0.008;
        let traj = simulate_truth(&grid, &eq, &x0, 200, 0.01).unwrap();
        let q = traj.inputs.cols();
        for k in 0..=200 {
            let u = Tensor::vector(traj.inputs.data()[k * q..(k + 1) * q].to_vec());
            let y = Tensor::vector(traj.outputs.data()[k * q..(k + 1) * q].to_vec());
            let my = eq.m_net.matvec(&u);
            assert!(y.sub(&my).norm_inf() < 1e-10);
        }
    }

    #[test]
    fn oscillatory_motion_decays() {
        // The uniform angle shift is a symmetry of the coupled swing
        // equations, so only speeds and the angle difference are expected
        // to die out.
        let grid = two_machine_three_bus();
        let eq = newton_power_flow(&grid, &grid.nominal_op()).unwrap();
        let mut x0 = Tensor::zeros(&[4]);
        x0.data_mut()[0] = 0.01;
        let traj = simulate_truth(&grid, &eq, &x0, 1000, 0.01).unwrap();
        let osc = |row: &Tensor| {
            let d = row.data();
            (d[0] - d[2]).abs().max(d[1].abs()).max(d[3].abs())
        };
        let first = osc(&traj.state_row(0));
        let last = osc(&traj.state_row(1000));
        assert!(last < 0.05 * first, "no decay: {first} -> {last}");
    }
}
