//! Nodal admittance algebra: bus admittance matrix, Kron reduction, and the
//! real-rectangular port-coupling matrix.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dense complex matrix, row-major. Only used inside the truth pipeline.
#[derive(Debug, Clone)]
pub struct CMat {
    pub n: usize,
    pub m: usize,
    pub data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(n: usize, m: usize) -> CMat {
        CMat {
            n,
            m,
            data: vec![Complex64::new(0.0, 0.0); n * m],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.m + j] = v;
    }

    pub fn add_at(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.m + j] += v;
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.m, other.n);
        let mut out = CMat::zeros(self.n, other.m);
        for i in 0..self.n {
            for k in 0..self.m {
                let a = self.get(i, k);
                for j in 0..other.m {
                    out.data[i * other.m + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        assert_eq!((self.n, self.m), (other.n, other.m));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    /// Solve `self * X = B` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &CMat) -> Result<CMat> {
        assert_eq!(self.n, self.m);
        assert_eq!(self.n, b.n);
        let n = self.n;
        let m = b.m;
        let mut a = self.data.clone();
        let mut x = b.data.clone();
        for k in 0..n {
            let mut p = k;
            let mut pmax = a[k * n + k].norm();
            for i in (k + 1)..n {
                let v = a[i * n + k].norm();
                if v > pmax {
                    pmax = v;
                    p = i;
                }
            }
            if pmax < 1e-13 {
                return Err(Error::Singular {
                    pivot: pmax,
                    index: k,
                });
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                for j in 0..m {
                    x.swap(k * m + j, p * m + j);
                }
            }
            let piv = a[k * n + k];
            for i in (k + 1)..n {
                let f = a[i * n + k] / piv;
                if f.norm() == 0.0 {
                    continue;
                }
                for j in k..n {
                    let akj = a[k * n + j];
                    a[i * n + j] -= f * akj;
                }
                for j in 0..m {
                    let xkj = x[k * m + j];
                    x[i * m + j] -= f * xkj;
                }
            }
        }
        for i in (0..n).rev() {
            for j in 0..m {
                let mut acc = x[i * m + j];
                for l in (i + 1)..n {
                    acc -= a[i * n + l] * x[l * m + j];
                }
                x[i * m + j] = acc / a[i * n + i];
            }
        }
        Ok(CMat { n, m, data: x })
    }
}

/// Bus admittance matrix from series line admittances only.
pub fn y_bus(n_buses: usize, lines: &[super::Line]) -> CMat {
    let mut y = CMat::zeros(n_buses, n_buses);
    for l in lines {
        let yl = l.y();
        y.add_at(l.from, l.from, yl);
        y.add_at(l.to, l.to, yl);
        y.add_at(l.from, l.to, -yl);
        y.add_at(l.to, l.from, -yl);
    }
    y
}

/// Eliminate the buses *not* listed in `keep` (Kron reduction):
/// `Y_red = Y_kk - Y_ke Y_ee^{-1} Y_ek`.
pub fn kron_reduce(y: &CMat, keep: &[usize]) -> Result<CMat> {
    assert_eq!(y.n, y.m);
    let elim: Vec<usize> = (0..y.n).filter(|i| !keep.contains(i)).collect();
    if elim.is_empty() {
        let mut out = CMat::zeros(keep.len(), keep.len());
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                out.set(a, b, y.get(i, j));
            }
        }
        return Ok(out);
    }
    let pick = |rows: &[usize], cols: &[usize]| {
        let mut m = CMat::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                m.set(a, b, y.get(i, j));
            }
        }
        m
    };
    let ykk = pick(keep, keep);
    let yke = pick(keep, &elim);
    let yek = pick(&elim, keep);
    let yee = pick(&elim, &elim);
    let x = yee.solve(&yek)?;
    Ok(ykk.sub(&yke.matmul(&x)))
}

/// Expand a complex coupling matrix into the real block form acting on
/// device-major (re, im) channel stacks: each complex entry `g + jb`
/// becomes `[[g, -b], [b, g]]`.
pub fn complex_to_real_ports(y: &CMat) -> Tensor {
    let n = y.n;
    let mut out = Tensor::zeros(&[2 * n, 2 * n]);
    for i in 0..n {
        for j in 0..y.m {
            let v = y.get(i, j);
            out.set(2 * i, 2 * j, v.re);
            out.set(2 * i, 2 * j + 1, -v.im);
            out.set(2 * i + 1, 2 * j, v.im);
            out.set(2 * i + 1, 2 * j + 1, v.re);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Line;

    #[test]
    fn y_bus_row_sums_vanish_without_shunts() {
        let lines = vec![
            Line {
                from: 0,
                to: 1,
                g: 1.0,
                b: -5.0,
            },
            Line {
                from: 1,
                to: 2,
                g: 0.5,
                b: -4.0,
            },
        ];
        let y = y_bus(3, &lines);
        for i in 0..3 {
            let s: Complex64 = (0..3).map(|j| y.get(i, j)).sum();
            assert!(s.norm() < 1e-14);
        }
    }

    #[test]
    fn kron_reduction_preserves_terminal_behavior() {
        // Chain 0 - 1 - 2, eliminate the middle bus; the reduced coupling
        // between 0 and 2 must equal the series combination of both lines.
        let y01 = Complex64::new(0.0, -5.0);
        let y12 = Complex64::new(0.0, -4.0);
        let lines = vec![
            Line {
                from: 0,
                to: 1,
                g: y01.re,
                b: y01.im,
            },
            Line {
                from: 1,
                to: 2,
                g: y12.re,
                b: y12.im,
            },
        ];
        let y = y_bus(3, &lines);
        let red = kron_reduce(&y, &[0, 2]).unwrap();
        let series = y01 * y12 / (y01 + y12);
        assert!((red.get(0, 1) + series).norm() < 1e-12);
        assert!((red.get(0, 0) - series).norm() < 1e-12);
    }

    #[test]
    fn real_expansion_is_complex_multiplication() {
        let mut y = CMat::zeros(1, 1);
        y.set(0, 0, Complex64::new(2.0, 3.0));
        let m = complex_to_real_ports(&y);
        // (2+3j)(1-2j) = 8 - j
        let v = m.matvec(&Tensor::vector(vec![1.0, -2.0]));
        assert!((v.data()[0] - 8.0).abs() < 1e-14);
        assert!((v.data()[1] + 1.0).abs() < 1e-14);
    }
}
