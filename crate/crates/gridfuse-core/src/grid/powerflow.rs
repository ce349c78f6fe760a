//! Newton-Raphson power flow in polar form, from a flat start.

use num_complex::Complex64;

use super::network::{complex_to_real_ports, kron_reduce, y_bus, CMat};
use super::{BusKind, GridModel, OperatingPoint};
use crate::error::{Error, Result};
use crate::linalg::solve_linear;
use crate::tensor::Tensor;

/// Solved steady state plus everything the linearization needs.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    /// Bus voltages, rectangular, p.u.
    pub bus_v: Vec<Complex64>,
    /// Internal EMF magnitude per machine.
    pub emf: Vec<f64>,
    /// Rotor angle per machine, rad.
    pub delta: Vec<f64>,
    /// Mechanical power per machine (equals electrical power at rest).
    pub p_mech: Vec<f64>,
    /// Load admittances at this operating point (constant-admittance model).
    pub load_y: Vec<Complex64>,
    /// Admittance matrix with loads folded in as shunts.
    pub y_dyn: CMat,
    /// Kron reduction of `y_dyn` to the machine buses.
    pub y_red: CMat,
    /// Real-rectangular port-coupling matrix over machine ports.
    pub m_net: Tensor,
    /// Final power-mismatch infinity norm.
    pub residual: f64,
    /// Newton iterations used.
    pub iterations: usize,
}

struct Injections {
    p: Vec<f64>,
    q: Vec<f64>,
}

/// Net scheduled injection per bus: generation minus load.
fn scheduled(grid: &GridModel, op: &OperatingPoint) -> Injections {
    let n = grid.n_buses();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for (m, &pg) in grid.machines.iter().zip(&op.gen_p) {
        p[m.bus] += pg;
    }
    for (i, l) in grid.loads.iter().enumerate() {
        p[l.bus] -= op.load_p[i];
        q[l.bus] -= op.load_q[i];
    }
    Injections { p, q }
}

fn calc_pq(y: &CMat, vm: &[f64], th: &[f64], i: usize) -> (f64, f64) {
    let n = vm.len();
    let mut p = 0.0;
    let mut q = 0.0;
    for j in 0..n {
        let yij = y.get(i, j);
        let (g, b) = (yij.re, yij.im);
        let dth = th[i] - th[j];
        p += vm[i] * vm[j] * (g * dth.cos() + b * dth.sin());
        q += vm[i] * vm[j] * (g * dth.sin() - b * dth.cos());
    }
    (p, q)
}

/// Newton-Raphson on the power mismatch equations. Residual target 1e-8,
/// at most 50 iterations; failures surface as infeasible operating points.
pub fn newton_power_flow(grid: &GridModel, op: &OperatingPoint) -> Result<Equilibrium> {
    grid.validate()?;
    let n = grid.n_buses();
    let y = y_bus(n, &grid.lines);
    let sched = scheduled(grid, op);

    // Flat start: setpoint magnitudes, zero angles.
    let mut vm: Vec<f64> = grid
        .buses
        .iter()
        .map(|b| match b.kind {
            BusKind::Slack | BusKind::Pv => b.v,
            BusKind::Pq => 1.0,
        })
        .collect();
    let mut th = vec![0.0; n];

    let ang_idx: Vec<usize> = (0..n)
        .filter(|&i| grid.buses[i].kind != BusKind::Slack)
        .collect();
    let mag_idx: Vec<usize> = (0..n)
        .filter(|&i| grid.buses[i].kind == BusKind::Pq)
        .collect();
    let n_unknown = ang_idx.len() + mag_idx.len();

    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..50 {
        iterations = it;
        // Mismatch vector: P rows for PV+PQ, Q rows for PQ.
        let mut mis = vec![0.0; n_unknown];
        let mut pc = vec![0.0; n];
        let mut qc = vec![0.0; n];
        for i in 0..n {
            let (p, q) = calc_pq(&y, &vm, &th, i);
            pc[i] = p;
            qc[i] = q;
        }
        for (r, &i) in ang_idx.iter().enumerate() {
            mis[r] = pc[i] - sched.p[i];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            mis[ang_idx.len() + r] = qc[i] - sched.q[i];
        }
        residual = mis.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if residual <= 1e-8 {
            iterations = it;
            let eq = finish(grid, op, &y, &vm, &th, residual, iterations)?;
            return Ok(eq);
        }

        // Jacobian of the mismatch with respect to [theta; vm].
        let mut jac = Tensor::zeros(&[n_unknown, n_unknown]);
        for (r, &i) in ang_idx.iter().enumerate() {
            for (c, &j) in ang_idx.iter().enumerate() {
                let v = if i == j {
                    -qc[i] - y.get(i, i).im * vm[i] * vm[i]
                } else {
                    let yij = y.get(i, j);
                    let dth = th[i] - th[j];
                    vm[i] * vm[j] * (yij.re * dth.sin() - yij.im * dth.cos())
                };
                jac.set(r, c, v);
            }
            for (c, &j) in mag_idx.iter().enumerate() {
                let v = if i == j {
                    pc[i] / vm[i] + y.get(i, i).re * vm[i]
                } else {
                    let yij = y.get(i, j);
                    let dth = th[i] - th[j];
                    vm[i] * (yij.re * dth.cos() + yij.im * dth.sin())
                };
                jac.set(r, ang_idx.len() + c, v);
            }
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            for (c, &j) in ang_idx.iter().enumerate() {
                let v = if i == j {
                    pc[i] - y.get(i, i).re * vm[i] * vm[i]
                } else {
                    let yij = y.get(i, j);
                    let dth = th[i] - th[j];
                    -vm[i] * vm[j] * (yij.re * dth.cos() + yij.im * dth.sin())
                };
                jac.set(ang_idx.len() + r, c, v);
            }
            for (c, &j) in mag_idx.iter().enumerate() {
                let v = if i == j {
                    qc[i] / vm[i] - y.get(i, i).im * vm[i]
                } else {
                    let yij = y.get(i, j);
                    let dth = th[i] - th[j];
                    vm[i] * (yij.re * dth.sin() - yij.im * dth.cos())
                };
                jac.set(ang_idx.len() + r, ang_idx.len() + c, v);
            }
        }

        let rhs = Tensor::vector(mis);
        let step = solve_linear(&jac, &rhs).map_err(|_| {
            Error::InfeasibleOperatingPoint("power-flow Jacobian is singular".into())
        })?;
        // Damp the update so magnitudes never cross into collapse; a full
        // Newton step from a flat start can overshoot on loaded grids.
        let mut alpha = 1.0;
        loop {
            let ok = mag_idx
                .iter()
                .enumerate()
                .all(|(r, &i)| vm[i] - alpha * step.data()[ang_idx.len() + r] > 0.25);
            if ok {
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-3 {
                return Err(Error::InfeasibleOperatingPoint(
                    "voltage magnitude collapsed during the Newton iteration".into(),
                ));
            }
        }
        for (r, &i) in ang_idx.iter().enumerate() {
            th[i] -= alpha * step.data()[r];
        }
        for (r, &i) in mag_idx.iter().enumerate() {
            vm[i] -= alpha * step.data()[ang_idx.len() + r];
        }
    }
    Err(Error::PowerFlowDiverged {
        iterations,
        residual,
    })
}

fn finish(
    grid: &GridModel,
    op: &OperatingPoint,
    y: &CMat,
    vm: &[f64],
    th: &[f64],
    residual: f64,
    iterations: usize,
) -> Result<Equilibrium> {
    let n = grid.n_buses();
    let bus_v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::from_polar(vm[i], th[i]))
        .collect();

    // Net injected current at each bus from the line network.
    let inj_current: Vec<Complex64> = (0..n)
        .map(|i| (0..n).map(|j| y.get(i, j) * bus_v[j]).sum())
        .collect();

    // Generator output = net injection + local load.
    let mut load_at_bus = vec![Complex64::new(0.0, 0.0); n];
    for (i, l) in grid.loads.iter().enumerate() {
        load_at_bus[l.bus] += Complex64::new(op.load_p[i], op.load_q[i]);
    }

    let mut emf = Vec::new();
    let mut delta = Vec::new();
    let mut p_mech = Vec::new();
    for m in &grid.machines {
        let v = bus_v[m.bus];
        let s_net = v * inj_current[m.bus].conj();
        let s_gen = s_net + load_at_bus[m.bus];
        let i_gen = (s_gen / v).conj();
        let e = v + Complex64::new(0.0, m.xdp) * i_gen;
        emf.push(e.norm());
        delta.push(e.arg());
        p_mech.push(s_gen.re);
    }

    // Constant-admittance loads folded into the dynamic network.
    let mut y_dyn = y.clone();
    let mut load_y = Vec::new();
    for (i, l) in grid.loads.iter().enumerate() {
        let v2 = bus_v[l.bus].norm_sqr();
        let yl = Complex64::new(op.load_p[i], -op.load_q[i]) / v2;
        load_y.push(yl);
        y_dyn.add_at(l.bus, l.bus, yl);
    }

    let machine_buses: Vec<usize> = grid.machines.iter().map(|m| m.bus).collect();
    let y_red = kron_reduce(&y_dyn, &machine_buses)?;
    let m_net = complex_to_real_ports(&y_red);

    Ok(Equilibrium {
        bus_v,
        emf,
        delta,
        p_mech,
        load_y,
        y_dyn,
        y_red,
        m_net,
        residual,
        iterations,
    })
}
