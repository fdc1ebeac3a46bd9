//! Synthetic linear fixed-point problems with a known spectrum.
//!
//! `T(theta) = theta* + A (theta - theta*)` for a symmetric `A` is the cleanest test
//! bed for everything spectral: the step Jacobian is exactly `A` everywhere, so
//! finite-difference probes, eigenvalue estimates, and accelerator rate claims can be
//! checked against closed forms. With `A`'s spectrum inside [0, 1) this mimics an EM
//! map near its fixed point, and `-(1/2) (theta - theta*)' (I - A) (theta - theta*)`
//! plays the role of the log-likelihood (it increases along every plain step).

use crate::em::{EmProblem, ParamVector};
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;

#[derive(Debug, Clone)]
pub struct LinearProblem {
    a: SquareMatrix,
    fixed_point: ParamVector,
    /// I - A, the curvature of the surrogate likelihood.
    m: SquareMatrix,
}

impl LinearProblem {
    /// Build from a symmetric step matrix. Symmetry keeps the surrogate likelihood
    /// consistent with the map; asymmetric inputs are rejected.
    pub fn new(a: SquareMatrix, fixed_point: ParamVector) -> Result<Self> {
        if a.dim() != fixed_point.len() {
            return Err(Error::Dimension(format!(
                "step matrix is {}x{0} but fixed point has {} coordinates",
                a.dim(),
                fixed_point.len()
            )));
        }
        if a.symmetry_defect() > 1e-12 {
            return Err(Error::Config(
                "linear problem requires a symmetric step matrix".into(),
            ));
        }
        let m = SquareMatrix::identity(a.dim()).sub(&a);
        Ok(LinearProblem { a, fixed_point, m })
    }

    pub fn from_diag(modes: &[f64], fixed_point: &ParamVector) -> Self {
        Self::new(SquareMatrix::from_diag(modes), fixed_point.clone())
            .expect("diagonal matrix is symmetric")
    }

    pub fn step_matrix(&self) -> &SquareMatrix {
        &self.a
    }

    pub fn fixed_point(&self) -> &ParamVector {
        &self.fixed_point
    }
}

impl EmProblem for LinearProblem {
    fn dim(&self) -> usize {
        self.fixed_point.len()
    }

    fn em_step(&self, theta: &ParamVector) -> Result<ParamVector> {
        let u = theta.sub(&self.fixed_point);
        let au = self.a.mul_vec(u.as_slice());
        Ok(self.fixed_point.add_scaled(1.0, &ParamVector(au)))
    }

    fn log_likelihood(&self, theta: &ParamVector) -> f64 {
        let u = theta.sub(&self.fixed_point);
        -0.5 * self.m.quadratic_form(u.as_slice())
    }

    fn check(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                theta.len()
            )));
        }
        match theta.0.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::DegenerateParameter {
                index: i,
                value: theta[i],
                reason: "non-finite coordinate".into(),
            }),
            None => Ok(()),
        }
    }
}
