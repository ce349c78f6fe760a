//! Dense linear solves via LU with partial pivoting.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// LU factorization (partial pivoting) of a square matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    /// Combined L (unit diagonal, below) and U (diagonal and above), row-major.
    lu: Vec<f64>,
    /// Row permutation: row `i` of the factored matrix came from `perm[i]`.
    perm: Vec<usize>,
}

impl Lu {
    /// Factor `a`. Fails with [`Error::Singular`] when a pivot drops below
    /// `1e-12 * max|a|`.
    pub fn factor(a: &Tensor) -> Result<Lu> {
        assert_eq!(a.shape().len(), 2);
        assert_eq!(a.rows(), a.cols(), "solve_linear: matrix must be square");
        let n = a.rows();
        let mut lu = a.data().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let amax = a.norm_inf();
        let tol = 1e-12 * amax.max(f64::MIN_POSITIVE);

        for k in 0..n {
            // Pivot search in column k.
            let mut p = k;
            let mut pmax = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[i * n + k].abs();
                if v > pmax {
                    pmax = v;
                    p = i;
                }
            }
            if pmax < tol {
                return Err(Error::Singular {
                    pivot: pmax,
                    index: k,
                });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let m = lu[i * n + k] / pivot;
                lu[i * n + k] = m;
                for j in (k + 1)..n {
                    lu[i * n + j] -= m * lu[k * n + j];
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    /// Solve `A x = b` for one right-hand side (length n).
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        // Forward substitution with unit-lower L.
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        // Back substitution with U.
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        x
    }

    /// Solve `A X = B` column by column. `B` is `n x m`.
    pub fn solve(&self, b: &Tensor) -> Tensor {
        let n = self.n;
        let vector_rhs = b.shape().len() == 1;
        let m = if vector_rhs { 1 } else { b.cols() };
        assert_eq!(
            b.data().len() / m,
            n,
            "solve_linear: rhs row count mismatch"
        );
        let mut out = vec![0.0; n * m];
        let mut col = vec![0.0; n];
        for j in 0..m {
            for i in 0..n {
                col[i] = b.data()[i * m + j];
            }
            let x = self.solve_vec(&col);
            for i in 0..n {
                out[i * m + j] = x[i];
            }
        }
        if vector_rhs {
            Tensor::vector(out)
        } else {
            Tensor::matrix(n, m, out)
        }
    }
}

/// Solve `A X = B` with LU and partial pivoting.
pub fn solve_linear(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(Lu::factor(a)?.solve(b))
}

/// Solve `A^T X = B` by factoring the transpose.
pub fn solve_linear_t(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(Lu::factor(&a.transpose())?.solve(b))
}

/// Least squares `min |A X - B|` by Householder QR with column pivoting.
/// Rank-deficient systems get the basic solution (dropped columns zero).
pub fn lstsq(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let m = a.rows();
    let n = a.cols();
    let k = if b.shape().len() == 1 { 1 } else { b.cols() };
    assert_eq!(b.rows(), m, "lstsq: row counts must match");
    let mut r = a.clone();
    let mut q_b: Vec<f64> = b.data().to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut col_norm: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| r.get(i, j) * r.get(i, j)).sum::<f64>())
        .collect();
    let steps = m.min(n);
    let mut rank = steps;
    let mut first_norm = 0.0;
    for p in 0..steps {
        let (best, _) = col_norm
            .iter()
            .enumerate()
            .skip(p)
            .fold(
                (p, -1.0),
                |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc },
            );
        if best != p {
            for i in 0..m {
                let t = r.get(i, p);
                r.set(i, p, r.get(i, best));
                r.set(i, best, t);
            }
            col_norm.swap(p, best);
            perm.swap(p, best);
        }
        let norm = (p..m)
            .map(|i| r.get(i, p) * r.get(i, p))
            .sum::<f64>()
            .sqrt();
        if p == 0 {
            first_norm = norm;
        }
        if norm <= 1e-12 * first_norm.max(1e-300) {
            rank = p;
            break;
        }
        let alpha = if r.get(p, p) >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (p..m).map(|i| r.get(i, p)).collect();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv == 0.0 {
            continue;
        }
        for j in p..n {
            let dot: f64 = (p..m).map(|i| v[i - p] * r.get(i, j)).sum();
            let f = 2.0 * dot / vtv;
            for i in p..m {
                r.set(i, j, r.get(i, j) - f * v[i - p]);
            }
        }
        for c in 0..k {
            let dot: f64 = (p..m).map(|i| v[i - p] * q_b[i * k + c]).sum();
            let f = 2.0 * dot / vtv;
            for i in p..m {
                q_b[i * k + c] -= f * v[i - p];
            }
        }
        for j in p + 1..n {
            col_norm[j] -= r.get(p, j) * r.get(p, j);
        }
    }
    // Back substitution on the leading rank x rank triangle.
    let mut x = vec![0.0; n * k];
    for c in 0..k {
        for p in (0..rank).rev() {
            let mut s = q_b[p * k + c];
            for j in p + 1..rank {
                s -= r.get(p, j) * x[perm[j] * k + c];
            }
            x[perm[p] * k + c] = s / r.get(p, p);
        }
    }
    Ok(if b.shape().len() == 1 {
        Tensor::vector(x)
    } else {
        Tensor::matrix(n, k, x)
    })
}
