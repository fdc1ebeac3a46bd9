//! The EM iteration as a deterministic fixed-point map.
//!
//! Everything downstream (spectral analysis, accelerators, benchmarks) treats one EM
//! update as a black-box map `T` on a parameter vector. `EmProblem` is that contract;
//! `LatentProblem` extends it with the latent-variable structure (posteriors, Q
//! function, complete-data derivatives) needed for Fisher-information work.

use serde::{Deserialize, Serialize};

use crate::diagnostics::EnergyDecomposition;
use crate::error::{Error, Result};
use crate::gmm::Responsibilities;
use crate::linalg::SquareMatrix;

/// Flat parameter vector; the model defines the coordinate layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// self + s * dir.
    pub fn add_scaled(&self, s: f64, dir: &ParamVector) -> ParamVector {
        ParamVector(self.0.iter().zip(&dir.0).map(|(a, d)| a + s * d).collect())
    }

    pub fn dist(&self, other: &ParamVector) -> f64 {
        self.sub(other).norm()
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// One EM update as a deterministic map on parameters.
pub trait EmProblem {
    /// Parameter dimension d.
    fn dim(&self) -> usize;

    /// One full EM update (E-step + M-step for latent models).
    fn em_step(&self, theta: &ParamVector) -> Result<ParamVector>;

    /// Observed-data log-likelihood. Callers only evaluate this on parameters that
    /// pass `check`; behavior elsewhere is model-defined.
    fn log_likelihood(&self, theta: &ParamVector) -> f64;

    /// `log_likelihood(to) - log_likelihood(from)`, intended for nearby points.
    ///
    /// Finite-difference curvature probes divide this difference by squared step
    /// sizes, so evaluating the two log-likelihoods separately leaves cancellation
    /// noise of order `eps * |log_likelihood|` that the division then amplifies.
    /// Backends whose likelihood factors over independent units should override
    /// this with a paired per-unit computation whose error scales with the
    /// difference itself rather than with the absolute log-likelihood.
    fn log_likelihood_diff(&self, to: &ParamVector, from: &ParamVector) -> f64 {
        self.log_likelihood(to) - self.log_likelihood(from)
    }

    /// Model-specific constraint check (weights in range, scales positive, finite).
    fn check(&self, theta: &ParamVector) -> Result<()>;
}

/// Latent-variable structure on top of the fixed-point map: enough to assemble
/// Fisher information matrices and the per-step energy split.
pub trait LatentProblem: EmProblem {
    /// Number of observed units (independent contributions to the likelihood).
    fn n_units(&self) -> usize;

    /// Number of latent classes per unit.
    fn n_components(&self) -> usize;

    /// Posterior class probabilities at `theta`.
    fn responsibilities(&self, theta: &ParamVector) -> Result<Responsibilities>;

    /// E_{z ~ p(.|x, old)} [ log p(x, z | new) ].
    fn q_function(&self, new: &ParamVector, old: &ParamVector) -> Result<f64>;

    /// KL( p(z|x, a) || p(z|x, b) ), summed over units. Infinite when some class has
    /// posterior mass under `a` but none under `b`.
    fn posterior_kl(&self, a: &ParamVector, b: &ParamVector) -> Result<f64>;

    /// Gradient of log p(x_i, z_i = k | theta) in theta.
    fn complete_score(&self, theta: &ParamVector, unit: usize, comp: usize) -> Vec<f64>;

    /// Hessian of log p(x_i, z_i = k | theta) in theta.
    fn complete_hessian(&self, theta: &ParamVector, unit: usize, comp: usize) -> SquareMatrix;
}

/// Termination rule: stop when the Euclidean step norm drops below `tol_step`,
/// or after `max_iter` updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub tol_step: f64,
    pub max_iter: usize,
}

impl StopRule {
    pub fn new(tol_step: f64, max_iter: usize) -> Self {
        StopRule { tol_step, max_iter }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_step > 0.0) {
            return Err(Error::Config(format!(
                "tol_step must be positive, got {}",
                self.tol_step
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-iteration diagnostics recorded by the accelerated drivers.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StepDiag {
    /// Trajectory-based eigenvalue estimate used at this step (geometry-adaptive method).
    pub lambda_hat: Option<f64>,
    /// Correction gain applied at this step (directional-correction methods).
    pub gamma: Option<f64>,
    /// Momentum coefficient applied at this step.
    pub beta: Option<f64>,
    /// True when the safeguard rejected the accelerated candidate and a plain EM
    /// step was taken instead.
    pub fallback: bool,
    /// One-step energy split at this iterate, when a diagnostic pass attached it.
    pub energy: Option<EnergyDecomposition>,
}

/// Full record of one run.
///
/// `iterates` and `loglik` are parallel (length `iterations_used + 1`, including the
/// start point); `step_norms` and `per_step_extras` have one entry per update. In
/// thin-storage mode only the trailing iterates are kept, but the scalar series stay
/// complete.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub iterates: Vec<ParamVector>,
    pub loglik: Vec<f64>,
    pub step_norms: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub per_step_extras: Option<Vec<StepDiag>>,
}

impl RunResult {
    pub fn final_iterate(&self) -> &ParamVector {
        self.iterates.last().expect("run always has a start point")
    }

    pub fn final_loglik(&self) -> f64 {
        *self.loglik.last().expect("run always has a start point")
    }

    pub fn fallback_count(&self) -> usize {
        self.per_step_extras
            .as_ref()
            .map(|v| v.iter().filter(|d| d.fallback).count())
            .unwrap_or(0)
    }

    /// Mean of the correction gains recorded along the run, if any step carried one.
    pub fn mean_gamma(&self) -> Option<f64> {
        let extras = self.per_step_extras.as_ref()?;
        let gammas: Vec<f64> = extras.iter().filter_map(|d| d.gamma).collect();
        if gammas.is_empty() {
            None
        } else {
            Some(gammas.iter().sum::<f64>() / gammas.len() as f64)
        }
    }
}

/// How many trailing iterates to retain in thin-storage mode. Three is the minimum
/// the trajectory-based eigenvalue estimate needs.
const THIN_KEEP: usize = 3;

fn run_em_impl<P: EmProblem>(
    problem: &P,
    theta0: &ParamVector,
    stop: &StopRule,
    keep_all: bool,
) -> Result<RunResult> {
    stop.validate()?;
    if theta0.len() != problem.dim() {
        return Err(Error::Dimension(format!(
            "theta0 has {} coordinates, problem expects {}",
            theta0.len(),
            problem.dim()
        )));
    }
    problem.check(theta0)?;

    let mut iterates = vec![theta0.clone()];
    let mut loglik = vec![problem.log_likelihood(theta0)];
    let mut step_norms = Vec::new();
    let mut converged = false;

    let mut current = theta0.clone();
    for _ in 0..stop.max_iter {
        let next = problem.em_step(&current)?;
        let step = next.dist(&current);
        step_norms.push(step);
        loglik.push(problem.log_likelihood(&next));
        iterates.push(next.clone());
        if !keep_all && iterates.len() > THIN_KEEP {
            iterates.remove(0);
        }
        current = next;
        if step < stop.tol_step {
            converged = true;
            break;
        }
    }

    Ok(RunResult {
        iterates,
        loglik,
        iterations_used: step_norms.len(),
        step_norms,
        converged,
        per_step_extras: None,
    })
}

/// Plain EM iteration with full trajectory storage.
pub fn run_em<P: EmProblem>(
    problem: &P,
    theta0: &ParamVector,
    stop: &StopRule,
) -> Result<RunResult> {
    run_em_impl(problem, theta0, stop, true)
}

/// Plain EM keeping only the last few iterates; for very long runs where only the
/// endpoint and the scalar series matter.
pub fn run_em_thin<P: EmProblem>(
    problem: &P,
    theta0: &ParamVector,
    stop: &StopRule,
) -> Result<RunResult> {
    run_em_impl(problem, theta0, stop, false)
}

/// One-step displacement T(theta) - theta.
pub fn velocity<P: EmProblem>(problem: &P, theta: &ParamVector) -> Result<ParamVector> {
    Ok(problem.em_step(theta)?.sub(theta))
}

/// Stopping rule used to locate a fixed point by plain iteration: tight enough that
/// the endpoint serves as theta* for local analysis.
pub const FIXED_POINT_STOP: StopRule = StopRule {
    tol_step: 1e-12,
    max_iter: 50_000,
};

/// Iterate plain EM to a tight tolerance and return the run (thin storage). The final
/// iterate stands in for the fixed point; `converged` reports whether the tight
/// tolerance was actually reached.
pub fn solve_fixed_point<P: EmProblem>(problem: &P, theta0: &ParamVector) -> Result<RunResult> {
    run_em_thin(problem, theta0, &FIXED_POINT_STOP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::LinearProblem;

    #[test]
    fn fixed_start_converges_immediately() {
        // theta0 at the fixed point: one step of norm 0, converged, one update used.
        let p = LinearProblem::from_diag(&[0.5, 0.9], &ParamVector(vec![1.0, -2.0]));
        let theta0 = ParamVector(vec![1.0, -2.0]);
        let run = run_em(&p, &theta0, &StopRule::new(1e-10, 100)).unwrap();
        assert!(run.converged);
        assert_eq!(run.iterations_used, 1);
        assert_eq!(run.iterates.len(), 2);
        assert_eq!(run.loglik.len(), 2);
        assert_eq!(run.step_norms.len(), 1);
        assert!(run.step_norms[0] == 0.0);
    }

    #[test]
    fn geometric_decay_on_linear_map() {
        let p = LinearProblem::from_diag(&[0.5], &ParamVector(vec![0.0]));
        let theta0 = ParamVector(vec![1.0]);
        let run = run_em(&p, &theta0, &StopRule::new(1e-12, 200)).unwrap();
        assert!(run.converged);
        // Step norms halve each iteration.
        for w in run.step_norms.windows(2) {
            assert!((w[1] / w[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn max_iter_cap_flags_non_convergence() {
        let p = LinearProblem::from_diag(&[0.999], &ParamVector(vec![0.0]));
        let theta0 = ParamVector(vec![1.0]);
        let run = run_em(&p, &theta0, &StopRule::new(1e-12, 10)).unwrap();
        assert!(!run.converged);
        assert_eq!(run.iterations_used, 10);
        assert_eq!(run.iterates.len(), 11);
    }

    #[test]
    fn thin_storage_keeps_scalars_full() {
        let p = LinearProblem::from_diag(&[0.9], &ParamVector(vec![0.0]));
        let theta0 = ParamVector(vec![1.0]);
        let full = run_em(&p, &theta0, &StopRule::new(1e-10, 500)).unwrap();
        let thin = run_em_thin(&p, &theta0, &StopRule::new(1e-10, 500)).unwrap();
        assert_eq!(full.iterations_used, thin.iterations_used);
        assert_eq!(full.step_norms, thin.step_norms);
        assert_eq!(full.loglik, thin.loglik);
        assert_eq!(thin.iterates.len(), 3);
        assert_eq!(thin.final_iterate(), full.final_iterate());
    }

    #[test]
    fn invalid_stop_rule_is_rejected() {
        let p = LinearProblem::from_diag(&[0.5], &ParamVector(vec![0.0]));
        let theta0 = ParamVector(vec![1.0]);
        assert!(run_em(&p, &theta0, &StopRule::new(0.0, 10)).is_err());
        assert!(run_em(&p, &theta0, &StopRule::new(1e-8, 0)).is_err());
    }

    #[test]
    fn velocity_is_step_displacement() {
        let p = LinearProblem::from_diag(&[0.5, 0.25], &ParamVector(vec![0.0, 0.0]));
        let theta = ParamVector(vec![2.0, 4.0]);
        let v = velocity(&p, &theta).unwrap();
        // T(theta) - theta = (1.0, 1.0) - (2.0, 4.0) = (-1.0, -3.0).
        assert_eq!(v.0, vec![-1.0, -3.0]);
    }
}
