//! Small dense matrices and the factorizations this crate needs.
//!
//! Parameter spaces here are tiny (d = 5 for the two-component mixture), so everything
//! is a row-major `Vec<f64>` with straightforward O(n^3) algorithms: Cholesky for SPD
//! solves, and a cyclic Jacobi sweep for symmetric eigenvalues. No BLAS, no panic-free
//! heroics — callers get an `Error` when a factorization is impossible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major square matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, d) in diag.iter().enumerate() {
            m.data[i * m.n + i] = *d;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in &rows {
            if row.len() != n {
                return Err(Error::Dimension(format!(
                    "expected {n} columns, row has {}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> SquareMatrix {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j];
            }
        }
        out
    }

    pub fn add(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.n, other.n, "matrix dims must agree");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        SquareMatrix { n: self.n, data }
    }

    pub fn sub(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.n, other.n, "matrix dims must agree");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        SquareMatrix { n: self.n, data }
    }

    pub fn scale(&self, s: f64) -> SquareMatrix {
        SquareMatrix {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.n, other.n, "matrix dims must agree");
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.data[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += aik * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.n, v.len(), "matrix/vector dims must agree");
        let n = self.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.data[i * n + j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// v' M v.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        assert_eq!(self.n, v.len(), "matrix/vector dims must agree");
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += v[i] * self.data[i * n + j] * v[j];
            }
        }
        acc
    }

    /// Norm of `v` in the metric induced by this (assumed SPD) matrix: sqrt(v' M v).
    /// Tiny negative quadratic forms from roundoff are clamped to zero.
    pub fn metric_norm(&self, v: &[f64]) -> f64 {
        self.quadratic_form(v).max(0.0).sqrt()
    }

    /// Relative asymmetry ||M - M'||_F / max(1, ||M||_F).
    pub fn symmetry_defect(&self) -> f64 {
        self.sub(&self.transpose()).frobenius_norm() / self.frobenius_norm().max(1.0)
    }

    /// (M + M') / 2.
    pub fn symmetrized(&self) -> SquareMatrix {
        self.add(&self.transpose()).scale(0.5)
    }

    /// Lower-triangular Cholesky factor of an SPD matrix.
    pub fn cholesky(&self) -> Result<Cholesky> {
        let n = self.n;
        let mut l = Self::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.data[i * n + j];
                for k in 0..j {
                    sum -= l.data[i * n + k] * l.data[j * n + k];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: sum });
                    }
                    l.data[i * n + j] = sum.sqrt();
                } else {
                    l.data[i * n + j] = sum / l.data[j * n + j];
                }
            }
        }
        Ok(Cholesky { l })
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted ascending.
    ///
    /// Sweeps rotate away each off-diagonal entry in turn until the off-diagonal
    /// Frobenius norm drops below 1e-12 relative to max(1, ||M||_F), capped at 100
    /// sweeps. Convergence is quadratic, so the cap is generous for d <= 10.
    pub fn jacobi_eigenvalues(&self) -> Result<Vec<f64>> {
        const MAX_SWEEPS: usize = 100;
        let n = self.n;
        let tol = 1e-12 * self.frobenius_norm().max(1.0);
        let mut a = self.data.clone();
        if n == 1 {
            return Ok(vec![a[0]]);
        }

        let off_norm = |a: &[f64]| -> f64 {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        s += a[i * n + j] * a[i * n + j];
                    }
                }
            }
            s.sqrt()
        };

        for _sweep in 0..MAX_SWEEPS {
            if off_norm(&a) <= tol {
                let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
                eig.sort_by(|x, y| x.partial_cmp(y).expect("eigenvalues must be finite"));
                return Ok(eig);
            }
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let apq = a[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    // Smaller-magnitude root of t^2 + 2*theta*t - 1 = 0; the direct
                    // formula overflows theta^2 for extreme ratios, so fall back to
                    // the asymptote t ~ 1/(2*theta).
                    let t = if theta.abs() > 1e150 {
                        0.5 / theta
                    } else {
                        let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                        sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                    };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;

                    a[p * n + p] = app - t * apq;
                    a[q * n + q] = aqq + t * apq;
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    for i in 0..n {
                        if i == p || i == q {
                            continue;
                        }
                        let aip = a[i * n + p];
                        let aiq = a[i * n + q];
                        a[i * n + p] = c * aip - s * aiq;
                        a[p * n + i] = a[i * n + p];
                        a[i * n + q] = s * aip + c * aiq;
                        a[q * n + i] = a[i * n + q];
                    }
                }
            }
        }
        Err(Error::JacobiNoConvergence {
            sweeps: MAX_SWEEPS,
            off: off_norm(&a),
        })
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

impl TryFrom<Vec<Vec<f64>>> for SquareMatrix {
    type Error = String;
    fn try_from(rows: Vec<Vec<f64>>) -> std::result::Result<Self, String> {
        SquareMatrix::from_rows(rows).map_err(|e| e.to_string())
    }
}

impl From<SquareMatrix> for Vec<Vec<f64>> {
    fn from(m: SquareMatrix) -> Vec<Vec<f64>> {
        (0..m.n)
            .map(|i| m.data[i * m.n..(i + 1) * m.n].to_vec())
            .collect()
    }
}

/// Lower-triangular Cholesky factor L with L L' = M.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: SquareMatrix,
}

impl Cholesky {
    pub fn factor(&self) -> &SquareMatrix {
        &self.l
    }

    /// Solve L y = b (forward substitution).
    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = b[i];
            for j in 0..i {
                sum -= self.l.data[i * n + j] * y[j];
            }
            y[i] = sum / self.l.data[i * n + i];
        }
        y
    }

    /// Solve L' x = y (back substitution).
    fn backward(&self, y: &[f64]) -> Vec<f64> {
        let n = self.l.n;
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for j in i + 1..n {
                sum -= self.l.data[j * n + i] * x[j];
            }
            x[i] = sum / self.l.data[i * n + i];
        }
        x
    }

    /// Solve M x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    /// Solve M X = B column by column.
    pub fn solve_matrix(&self, b: &SquareMatrix) -> SquareMatrix {
        let n = self.l.n;
        let mut out = SquareMatrix::zeros(n);
        for j in 0..n {
            let col: Vec<f64> = (0..n).map(|i| b.get(i, j)).collect();
            let x = self.solve(&col);
            for i in 0..n {
                out.set(i, j, x[i]);
            }
        }
        out
    }

    /// Congruence transform L^-1 B L^-T (symmetric when B is), symmetrized against roundoff.
    pub fn whiten(&self, b: &SquareMatrix) -> SquareMatrix {
        let n = self.l.n;
        // C = L^-1 B, column by column.
        let mut c = SquareMatrix::zeros(n);
        for j in 0..n {
            let col: Vec<f64> = (0..n).map(|i| b.get(i, j)).collect();
            let y = self.forward(&col);
            for i in 0..n {
                c.set(i, j, y[i]);
            }
        }
        // S' = L^-1 C', so S = (L^-1 C')'.
        let ct = c.transpose();
        let mut st = SquareMatrix::zeros(n);
        for j in 0..n {
            let col: Vec<f64> = (0..n).map(|i| ct.get(i, j)).collect();
            let y = self.forward(&col);
            for i in 0..n {
                st.set(i, j, y[i]);
            }
        }
        st.transpose().symmetrized()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd_3x3() -> SquareMatrix {
        // A' A + I for A with distinct rows: SPD by construction.
        SquareMatrix::from_rows(vec![
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ])
        .unwrap()
    }

    #[test]
    fn cholesky_reconstructs() {
        let m = spd_3x3();
        let ch = m.cholesky().unwrap();
        let l = ch.factor();
        let back = l.matmul(&l.transpose());
        assert!(m.sub(&back).frobenius_norm() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = SquareMatrix::from_rows(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            m.cholesky(),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn solve_matches_direct() {
        let m = spd_3x3();
        let ch = m.cholesky().unwrap();
        let b = vec![1.0, -2.0, 0.5];
        let x = ch.solve(&b);
        let back = m.mul_vec(&x);
        for i in 0..3 {
            assert!((back[i] - b[i]).abs() < 1e-12, "residual at {i}");
        }
    }

    #[test]
    fn jacobi_diagonal_matrix_is_exact() {
        let m = SquareMatrix::from_diag(&[3.0, -1.0, 2.0]);
        let eig = m.jacobi_eigenvalues().unwrap();
        assert_eq!(eig, vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn jacobi_2x2_closed_form() {
        // Eigenvalues of [[a,b],[b,c]] are ((a+c) +/- sqrt((a-c)^2 + 4b^2)) / 2.
        let (a, b, c) = (2.0, 0.7, -1.0);
        let m = SquareMatrix::from_rows(vec![vec![a, b], vec![b, c]]).unwrap();
        let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
        let lo = 0.5 * (a + c - disc);
        let hi = 0.5 * (a + c + disc);
        let eig = m.jacobi_eigenvalues().unwrap();
        assert!((eig[0] - lo).abs() < 1e-13);
        assert!((eig[1] - hi).abs() < 1e-13);
    }

    #[test]
    fn jacobi_3x3_known_spectrum() {
        // Q D Q' for a Givens-style orthogonal Q keeps the spectrum {1, 2, 5}.
        let d = SquareMatrix::from_diag(&[1.0, 2.0, 5.0]);
        let (c, s) = (0.8, 0.6);
        let q =
            SquareMatrix::from_rows(vec![vec![c, -s, 0.0], vec![s, c, 0.0], vec![0.0, 0.0, 1.0]])
                .unwrap();
        let m = q.matmul(&d).matmul(&q.transpose());
        let eig = m.jacobi_eigenvalues().unwrap();
        for (got, want) in eig.iter().zip([1.0, 2.0, 5.0]) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn whiten_matches_explicit_inverse() {
        let m = spd_3x3();
        let b = SquareMatrix::from_rows(vec![
            vec![1.0, 0.3, 0.0],
            vec![0.3, 2.0, -0.1],
            vec![0.0, -0.1, 0.5],
        ])
        .unwrap();
        let ch = m.cholesky().unwrap();
        let s = ch.whiten(&b);
        // Explicit check: L S L' should reconstruct B.
        let l = ch.factor();
        let back = l.matmul(&s).matmul(&l.transpose());
        assert!(b.sub(&back).frobenius_norm() < 1e-12);
        assert!(s.symmetry_defect() < 1e-14);
    }

    #[test]
    fn serde_round_trip() {
        let m = spd_3x3();
        let json = serde_json::to_string(&m).unwrap();
        let back: SquareMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
    }
}
