//! Full nonlinear swing dynamics behind the constant-admittance network,
//! used to bound how far the linear models can be trusted.

use super::network::{kron_reduce, CMat};
use super::powerflow::Equilibrium;
use super::GridModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use num_complex::Complex64;

/// Precomputed internal-node network for the nonlinear power expressions.
pub struct SwingSystem {
    pub y_int: CMat,
    pub emf: Vec<f64>,
    pub p_mech: Vec<f64>,
    pub h: Vec<f64>,
    pub d: Vec<f64>,
    pub omega_s: Vec<f64>,
    pub delta_eq: Vec<f64>,
}

impl SwingSystem {
    pub fn build(grid: &GridModel, eq: &Equilibrium) -> Result<SwingSystem> {
        let g = grid.machines.len();
        let n = grid.n_buses();
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
        Ok(SwingSystem {
            y_int,
            emf: eq.emf.clone(),
            p_mech: eq.p_mech.clone(),
            h: grid.machines.iter().map(|m| m.h).collect(),
            d: grid.machines.iter().map(|m| m.d).collect(),
            omega_s: grid.machines.iter().map(|m| m.omega_s).collect(),
            delta_eq: eq.delta.clone(),
        })
    }

    pub fn n_machines(&self) -> usize {
        self.emf.len()
    }

    pub fn electrical_power(&self, delta: &[f64]) -> Vec<f64> {
        let g = self.n_machines();
        let mut pe = vec![0.0; g];
        for i in 0..g {
            for j in 0..g {
                let yij = self.y_int.get(i, j);
                let dij = delta[i] - delta[j];
                pe[i] += self.emf[i] * self.emf[j] * (yij.re * dij.cos() + yij.im * dij.sin());
            }
        }
        pe
    }

    /// State layout matches the linear models: (angle, speed) per machine.
    pub fn derivative(&self, x: &[f64]) -> Vec<f64> {
        let g = self.n_machines();
        let delta: Vec<f64> = (0..g).map(|i| x[2 * i]).collect();
        let pe = self.electrical_power(&delta);
        let mut dx = vec![0.0; 2 * g];
        for i in 0..g {
            let w = x[2 * i + 1];
            dx[2 * i] = self.omega_s[i] * w;
            dx[2 * i + 1] = (self.p_mech[i] - pe[i] - self.d[i] * w) / (2.0 * self.h[i]);
        }
        dx
    }

    /// Classic fourth-order Runge-Kutta on the absolute states, returning
    /// deviations from the equilibrium so rows compare directly against the
    /// linear trajectories.
    pub fn simulate_deviation(&self, dx0: &Tensor, steps: usize, dt: f64) -> Result<Tensor> {
        let g = self.n_machines();
        let n = 2 * g;
        let mut x: Vec<f64> = (0..n)
            .map(|k| {
                let base = if k % 2 == 0 {
                    self.delta_eq[k / 2]
                } else {
                    0.0
                };
                base + dx0.data()[k]
            })
            .collect();
        let mut out = Tensor::zeros(&[steps + 1, n]);
        let record = |out: &mut Tensor, row: usize, x: &[f64], sys: &SwingSystem| {
            for k in 0..n {
                let base = if k % 2 == 0 { sys.delta_eq[k / 2] } else { 0.0 };
                out.set(row, k, x[k] - base);
            }
        };
        record(&mut out, 0, &x, self);
        for step in 0..steps {
            let k1 = self.derivative(&x);
            let x2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k1[i]).collect();
            let k2 = self.derivative(&x2);
            let x3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k2[i]).collect();
            let k3 = self.derivative(&x3);
            let x4: Vec<f64> = (0..n).map(|i| x[i] + dt * k3[i]).collect();
            let k4 = self.derivative(&x4);
            for i in 0..n {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                if !x[i].is_finite() {
                    return Err(Error::Divergence {
                        step: step + 1,
                        norm: f64::INFINITY,
                    });
                }
            }
            record(&mut out, step + 1, &x, self);
        }
        Ok(out)
    }
}
