//! Analytic small-signal models around a solved equilibrium.
//!
//! Per device: states (rotor angle deviation, per-unit speed deviation),
//! interface input (bus voltage deviation, rectangular), interface output
//! (injected current deviation, rectangular). The network couples outputs
//! to inputs through the reduced admittance matrix.

use num_complex::Complex64;

use super::network::{kron_reduce, CMat};
use super::powerflow::Equilibrium;
use super::GridModel;
use crate::error::Result;
use crate::fusion::{
    block_diag_assemble, fuse_global, ComponentMatrices, Frame, GlobalModel, NetworkMatrix,
    Provenance,
};
use crate::tensor::Tensor;

/// Exact Jacobians of the classical machine equations at the equilibrium.
pub fn linearize_device(grid: &GridModel, eq: &Equilibrium, idx: usize) -> ComponentMatrices {
    let m = &grid.machines[idx];
    let e = eq.emf[idx];
    let delta = eq.delta[idx];
    let v = eq.bus_v[m.bus];
    let (sd, cd) = delta.sin_cos();
    let two_h = 2.0 * m.h;

    // Electrical power Pe = E (V_re sin d - V_im cos d) / x'd.
    let k_sync = e * (v.re * cd + v.im * sd) / m.xdp;

    let a = Tensor::matrix(2, 2, vec![0.0, m.omega_s, -k_sync / two_h, -m.d / two_h]);
    let b = Tensor::matrix(
        2,
        2,
        vec![
            0.0,
            0.0,
            -e * sd / (two_h * m.xdp),
            e * cd / (two_h * m.xdp),
        ],
    );
    // Injected current I = (E e^{jd} - V) / (j x'd).
    let c = Tensor::matrix(2, 2, vec![e * cd / m.xdp, 0.0, e * sd / m.xdp, 0.0]);
    let d = Tensor::matrix(2, 2, vec![0.0, -1.0 / m.xdp, 1.0 / m.xdp, 0.0]);

    ComponentMatrices {
        a,
        b,
        c,
        d,
        b_state: Tensor::zeros(&[2]),
        b_output: Tensor::zeros(&[2]),
        frame: Frame::Physical,
    }
}

pub fn linearize_all(grid: &GridModel, eq: &Equilibrium) -> Vec<ComponentMatrices> {
    (0..grid.machines.len())
        .map(|i| linearize_device(grid, eq, i))
        .collect()
}

/// Fuse the per-device Jacobians through the reduced network.
pub fn truth_global(grid: &GridModel, eq: &Equilibrium) -> Result<GlobalModel> {
    let comps = linearize_all(grid, eq);
    let stacked = block_diag_assemble(&comps);
    let net = NetworkMatrix {
        m: eq.m_net.clone(),
    };
    fuse_global(&stacked, &net, Frame::Physical, Provenance::Truth)
}

/// Whole-system Jacobian computed a different way: eliminate every bus,
/// keep only machine internal nodes, and differentiate the resulting
/// angle-coupled power expressions. Serves as an independent cross-check
/// on the interface-elimination path.
pub fn direct_global_jacobian(grid: &GridModel, eq: &Equilibrium) -> Result<Tensor> {
    let g = grid.machines.len();
    let n = grid.n_buses();

    // Augmented network: internal nodes 0..g, then the physical buses.
    let mut y_aug = CMat::zeros(g + n, g + n);
    for i in 0..n {
        for j in 0..n {
            y_aug.add_at(g + i, g + j, eq.y_dyn.get(i, j));
        }
    }
    for (k, m) in grid.machines.iter().enumerate() {
        let ym = Complex64::new(0.0, -1.0 / m.xdp);
        y_aug.add_at(k, k, ym);
        y_aug.add_at(g + m.bus, g + m.bus, ym);
        y_aug.add_at(k, g + m.bus, -ym);
        y_aug.add_at(g + m.bus, k, -ym);
    }
    let keep: Vec<usize> = (0..g).collect();
    let y_int = kron_reduce(&y_aug, &keep)?;

    // Pe_i = sum_j E_i E_j (G_ij cos d_ij + B_ij sin d_ij); differentiate
    // in the rotor angles.
    let mut k_mat = Tensor::zeros(&[g, g]);
    for i in 0..g {
        let mut diag = 0.0;
        for j in 0..g {
            if j == i {
                continue;
            }
            let yij = y_int.get(i, j);
            let dij = eq.delta[i] - eq.delta[j];
            let ee = eq.emf[i] * eq.emf[j];
            let off = ee * (yij.re * dij.sin() - yij.im * dij.cos());
            k_mat.set(i, j, off);
            diag -= off;
        }
        k_mat.set(i, i, diag);
    }

    let mut a = Tensor::zeros(&[2 * g, 2 * g]);
    for i in 0..g {
        let m = &grid.machines[i];
        a.set(2 * i, 2 * i + 1, m.omega_s);
        for j in 0..g {
            a.set(2 * i + 1, 2 * j, -k_mat.get(i, j) / (2.0 * m.h));
        }
        a.set(2 * i + 1, 2 * i + 1, -m.d / (2.0 * m.h));
    }
    Ok(a)
}
