//! Small dense/banded linear algebra kernels used by the projections.

use crate::error::{Error, Result};

/// Symmetric positive definite band matrix stored by lower diagonals.
///
/// Entry `(i, j)` with `i - bw <= j <= i` lives at `data[i * (bw + 1) + (j + bw - i)]`,
/// so the diagonal is the last slot of each row.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Add `v` to the symmetric pair `(i, j)`, `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) outside band {}", self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Replace row and column `i` by the identity row.
    pub fn pin(&mut self, i: usize) {
        let lo = i.saturating_sub(self.bw);
        for j in lo..i {
            let k = self.idx(i, j);
            self.data[k] = 0.0;
        }
        for r in i + 1..(i + self.bw + 1).min(self.n) {
            let k = self.idx(r, i);
            self.data[k] = 0.0;
        }
        let k = self.idx(i, i);
        self.data[k] = 1.0;
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let mut acc = 0.0;
            for j in lo..i {
                let a = row[j + self.bw - i];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            acc += row[self.bw] * x[i];
            y[i] += acc;
        }
    }

    /// In-place Cholesky factorization `A = L Lᵀ`.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                // dot of rows i and j over columns [max(lo_i, lo_j), j)
                let lo_j = j.saturating_sub(bw);
                let start = lo.max(lo_j);
                let mut s = self.data[i * w + (j + bw - i)];
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                for k in start..j {
                    s -= self.data[ri + k] * self.data[rj + k];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::NotConverged {
                            what: "band Cholesky (matrix not positive definite)",
                            residual: s,
                        });
                    }
                    self.data[i * w + bw] = s.sqrt();
                } else {
                    self.data[i * w + (j + bw - i)] = s / self.data[j * w + bw];
                }
            }
        }
        Ok(BandCholesky { factor: self })
    }
}

/// Cholesky factor of a [`BandMatrix`].
#[derive(Clone, Debug)]
pub struct BandCholesky {
    factor: BandMatrix,
}

impl BandCholesky {
    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let BandMatrix { n, bw, ref data } = self.factor;
        let w = bw + 1;
        // L y = b
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let base = i * w + bw - i;
            let mut s = x[i];
            for k in lo..i {
                s -= data[base + k] * x[k];
            }
            x[i] = s / data[i * w + bw];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let xi = x[i] / data[i * w + bw];
            x[i] = xi;
            let lo = i.saturating_sub(bw);
            let base = i * w + bw - i;
            for k in lo..i {
                x[k] -= data[base + k] * xi;
            }
        }
    }
}

/// Outcome of a conjugate gradient solve.
#[derive(Clone, Copy, Debug)]
pub struct CgReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned conjugate gradient for `A x = b`, warm-started
/// from the content of `x`. Stops when `‖b - A x‖ <= tol`.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> CgReport {
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut res = norm(&r);
    let mut it = 0;
    while res > tol && it < max_iter {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r);
        it += 1;
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgReport {
        iterations: it,
        residual: res,
        converged: res <= tol,
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> BandMatrix {
        let mut a = BandMatrix::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 2.0 + 0.1);
            if i + 1 < n {
                a.add(i + 1, i, -1.0);
            }
        }
        a
    }

    #[test]
    fn band_cholesky_solves() {
        let n = 50;
        let a = laplacian_1d(n);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&x_true, &mut b);
        let chol = a.clone().cholesky().unwrap();
        let mut x = b.clone();
        chol.solve_in_place(&mut x);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_band_matches_cg() {
        // 2-D Laplacian on a 6x5 grid, bandwidth 6
        let (nx, ny) = (6, 5);
        let n = nx * ny;
        let mut a = BandMatrix::zeros(n, nx);
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                a.add(k, k, 4.5);
                if i + 1 < nx {
                    a.add(k + 1, k, -1.0);
                }
                if j + 1 < ny {
                    a.add(k + nx, k, -1.0);
                }
            }
        }
        let b: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let chol = a.clone().cholesky().unwrap();
        let mut x1 = b.clone();
        chol.solve_in_place(&mut x1);
        let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
        let mut x2 = vec![0.0; n];
        let rep = pcg(|x, y| a.matvec(x, y), &diag, &b, &mut x2, 1e-13, 500);
        assert!(rep.converged);
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-11);
        }
    }

    #[test]
    fn pin_makes_identity_row() {
        let mut a = laplacian_1d(4);
        a.pin(3);
        assert_eq!(a.get(3, 3), 1.0);
        assert_eq!(a.get(3, 2), 0.0);
        assert_eq!(a.get(2, 3), 0.0);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = BandMatrix::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0);
        assert!(a.cholesky().is_err());
    }
}
