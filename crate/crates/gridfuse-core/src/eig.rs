//! Dense nonsymmetric eigenvalues: balance, Hessenberg reduction, then
//! Francis double-shift QR iteration. Eigenvalues only, no vectors.
//!
//! Complex conjugate pairs come out of the 2x2 deflation blocks as exact
//! conjugates. The returned list is sorted by (real, imaginary) so identical
//! inputs give identical reports.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Diagonal similarity scaling (radix 2) to reduce the norm spread.
fn balance(a: &mut [f64], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    loop {
        let mut done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j * n + i].abs();
                    r += a[i * n + j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                let mut c2 = c;
                while c2 < g {
                    f *= RADIX;
                    c2 *= sqrdx;
                }
                g = r * RADIX;
                while c2 > g {
                    f /= RADIX;
                    c2 /= sqrdx;
                }
                if (c2 + r) / f < 0.95 * s {
                    done = false;
                    let ginv = 1.0 / f;
                    for j in 0..n {
                        a[i * n + j] *= ginv;
                    }
                    for j in 0..n {
                        a[j * n + i] *= f;
                    }
                }
            }
        }
        if done {
            break;
        }
    }
}

/// Reduce to upper Hessenberg form by stabilized elementary similarity
/// transformations.
fn hessenberg(a: &mut [f64], n: usize) {
    for m in 1..n.saturating_sub(1) {
        let mut x = 0.0_f64;
        let mut piv = m;
        for j in m..n {
            if a[j * n + m - 1].abs() > x.abs() {
                x = a[j * n + m - 1];
                piv = j;
            }
        }
        if piv != m {
            for j in (m - 1)..n {
                a.swap(piv * n + j, m * n + j);
            }
            for j in 0..n {
                a.swap(j * n + piv, j * n + m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..n {
                let mut y = a[i * n + m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i * n + m - 1] = y;
                    for j in m..n {
                        a[i * n + j] -= y * a[m * n + j];
                    }
                    for j in 0..n {
                        a[j * n + m] += y * a[j * n + i];
                    }
                }
            }
        }
    }
    // Multipliers were stored below the subdiagonal; clear them.
    for i in 2..n {
        for j in 0..(i - 1) {
            a[i * n + j] = 0.0;
        }
    }
}

/// QR iteration with Francis double shifts on an upper Hessenberg matrix.
/// Returns unsorted eigenvalues.
fn hqr(a: &mut [f64], n: usize, max_sweeps: usize) -> Result<Vec<Complex64>> {
    let eps = f64::EPSILON;
    let mut eig = vec![Complex64::new(0.0, 0.0); n];
    let mut anorm = 0.0_f64;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i * n + j].abs();
        }
    }
    let mut total_sweeps = 0usize;
    let mut nn = n as isize - 1;
    let mut t = 0.0_f64;
    while nn >= 0 {
        let mut its = 0;
        loop {
            // Find a small subdiagonal element.
            let mut l = 0isize;
            for ll in (1..=nn).rev() {
                let s = a[(ll - 1) as usize * n + (ll - 1) as usize].abs()
                    + a[ll as usize * n + ll as usize].abs();
                let s = if s == 0.0 { anorm } else { s };
                if a[ll as usize * n + (ll - 1) as usize].abs() <= eps * s {
                    a[ll as usize * n + (ll - 1) as usize] = 0.0;
                    l = ll;
                    break;
                }
            }
            let mut x = a[nn as usize * n + nn as usize];
            if l == nn {
                eig[nn as usize] = Complex64::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            let mut y = a[(nn - 1) as usize * n + (nn - 1) as usize];
            let mut w =
                a[nn as usize * n + (nn - 1) as usize] * a[(nn - 1) as usize * n + nn as usize];
            if l == nn - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    let e1 = x + z;
                    let e2 = if z != 0.0 { x - w / z } else { e1 };
                    eig[(nn - 1) as usize] = Complex64::new(e1, 0.0);
                    eig[nn as usize] = Complex64::new(e2, 0.0);
                } else {
                    // Exact conjugate pair.
                    eig[(nn - 1) as usize] = Complex64::new(x + p, z);
                    eig[nn as usize] = Complex64::new(x + p, -z);
                }
                nn -= 2;
                break;
            }
            total_sweeps += 1;
            if total_sweeps > max_sweeps {
                return Err(Error::EigNoConvergence {
                    sweeps: total_sweeps,
                });
            }
            if its > 0 && its % 10 == 0 {
                // Exceptional shift.
                t += x;
                for i in 0..=nn as usize {
                    a[i * n + i] -= x;
                }
                let s = a[nn as usize * n + (nn - 1) as usize].abs()
                    + a[(nn - 1) as usize * n + (nn - 2) as usize].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            // Look for two consecutive small subdiagonal elements.
            let mut m = nn - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[m as usize * n + m as usize];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[(m + 1) as usize * n + m as usize]
                    + a[m as usize * n + (m + 1) as usize];
                q = a[(m + 1) as usize * n + (m + 1) as usize] - z - rr - ss;
                r = a[(m + 2) as usize * n + (m + 1) as usize];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m as usize * n + (m - 1) as usize].abs() * (q.abs() + r.abs());
                let v = p.abs()
                    * (a[(m - 1) as usize * n + (m - 1) as usize].abs()
                        + z.abs()
                        + a[(m + 1) as usize * n + (m + 1) as usize].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nn {
                a[i as usize * n + (i - 2) as usize] = 0.0;
                if i > m + 2 {
                    a[i as usize * n + (i - 3) as usize] = 0.0;
                }
            }
            // Double QR step on rows l..nn and columns m..nn.
            for k in m..=(nn - 1) {
                if k != m {
                    p = a[k as usize * n + (k - 1) as usize];
                    q = a[(k + 1) as usize * n + (k - 1) as usize];
                    r = if k != nn - 1 {
                        a[(k + 2) as usize * n + (k - 1) as usize]
                    } else {
                        0.0
                    };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s == 0.0 {
                    continue;
                }
                if k == m {
                    if l != m {
                        a[k as usize * n + (k - 1) as usize] =
                            -a[k as usize * n + (k - 1) as usize];
                    }
                } else {
                    a[k as usize * n + (k - 1) as usize] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in (k as usize)..=(nn as usize) {
                    let mut pp = a[k as usize * n + j] + q * a[(k + 1) as usize * n + j];
                    if k != nn - 1 {
                        pp += r * a[(k + 2) as usize * n + j];
                        a[(k + 2) as usize * n + j] -= pp * z;
                    }
                    a[(k + 1) as usize * n + j] -= pp * y;
                    a[k as usize * n + j] -= pp * x;
                }
                let mmin = if nn < k + 3 { nn } else { k + 3 };
                for i in (l as usize)..=(mmin as usize) {
                    let mut pp = x * a[i * n + k as usize] + y * a[i * n + (k + 1) as usize];
                    if k != nn - 1 {
                        pp += z * a[i * n + (k + 2) as usize];
                        a[i * n + (k + 2) as usize] -= pp * r;
                    }
                    a[i * n + (k + 1) as usize] -= pp * q;
                    a[i * n + k as usize] -= pp;
                }
            }
        }
    }
    Ok(eig)
}

/// All eigenvalues of a square real matrix, sorted by (real, imaginary).
pub fn eig_dense(a: &Tensor) -> Result<Vec<Complex64>> {
    assert_eq!(a.shape().len(), 2, "eig_dense: matrix input required");
    assert_eq!(a.rows(), a.cols(), "eig_dense: matrix must be square");
    a.check_finite("eig_dense input")?;
    let n = a.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![Complex64::new(a.get(0, 0), 0.0)]);
    }
    let mut work = a.data().to_vec();
    balance(&mut work, n);
    hessenberg(&mut work, n);
    let mut eig = hqr(&mut work, n, 100 * n)?;
    eig.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
    Ok(eig)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(z: Complex64, re: f64, im: f64, tol: f64) {
        assert!(
            (z.re - re).abs() <= tol && (z.im - im).abs() <= tol,
            "eigenvalue {z} vs {re}+{im}j"
        );
    }

    #[test]
    fn swing_block_eigenvalues() {
        let a = Tensor::matrix(2, 2, vec![0.0, 314.1592, -0.0208788, -1.9047]);
        let eig = eig_dense(&a).unwrap();
        assert_close(eig[0], -0.9523, -2.3774, 5e-4);
        assert_close(eig[1], -0.9523, 2.3774, 5e-4);
        assert_eq!(eig[0].re, eig[1].re);
        assert_eq!(eig[0].im, -eig[1].im);
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let eig = eig_dense(&Tensor::eye(2)).unwrap();
        assert_close(eig[0], 1.0, 0.0, 1e-14);
        assert_close(eig[1], 1.0, 0.0, 1e-14);
    }

    #[test]
    fn companion_matrix_roots() {
        // p(x) = (x-1)(x+2)(x-3)(x+4) = x^4 + 2x^3 - 13x^2 - 14x + 24
        // companion (top-row form): first row = -coefficients.
        let c = [2.0, -13.0, -14.0, 24.0];
        let mut a = Tensor::zeros(&[4, 4]);
        for j in 0..4 {
            a.set(0, j, -c[j]);
        }
        for i in 1..4 {
            a.set(i, i - 1, 1.0);
        }
        let eig = eig_dense(&a).unwrap();
        let expected = [-4.0, -2.0, 1.0, 3.0];
        for (got, want) in eig.iter().zip(expected) {
            assert_close(*got, want, 0.0, 1e-8);
        }
    }

    #[test]
    fn upper_triangular_reads_diagonal() {
        let a = Tensor::matrix(3, 3, vec![2.0, 5.0, -1.0, 0.0, -3.0, 4.0, 0.0, 0.0, 7.0]);
        let eig = eig_dense(&a).unwrap();
        assert_close(eig[0], -3.0, 0.0, 1e-12);
        assert_close(eig[1], 2.0, 0.0, 1e-12);
        assert_close(eig[2], 7.0, 0.0, 1e-12);
    }

    #[test]
    fn conjugate_closure_on_random_matrix() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(2..7);
            let a = Tensor::matrix(n, n, (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let eig = eig_dense(&a).unwrap();
            // Every eigenvalue with nonzero imaginary part must have its
            // exact conjugate in the multiset.
            for z in &eig {
                if z.im != 0.0 {
                    assert!(
                        eig.iter().any(|w| w.re == z.re && w.im == -z.im),
                        "missing exact conjugate of {z} in {eig:?}"
                    );
                }
            }
        }
    }
}
