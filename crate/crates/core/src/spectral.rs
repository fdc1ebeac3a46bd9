//! Spectral analysis of the EM step map around a point.
//!
//! The object of interest is the relaxation operator `G = I - DT(theta)`, where `DT`
//! is the Jacobian of one EM update. At a fixed point the missing-information
//! principle makes `G = I_com^-1 I_obs`, so its eigenvalues are Fisher-information
//! ratios in [0, 1]: they control the per-step likelihood gain, the EM convergence
//! rate `1 - lambda_min`, and the optimal momentum coefficient. Eigenvalues are
//! computed on the symmetrized form `S = L^-1 I_obs L^-T` (with `L` the Cholesky
//! factor of `I_com`), which is similar to `G` but symmetric, so the Jacobi solver
//! applies.
//!
//! Everything here is derivative-free from the caller's perspective: `DT` and
//! `I_obs` come from central finite differences of the step map and the
//! log-likelihood, `I_com` from analytic complete-data Hessians weighted by the
//! posterior.

use serde::{Deserialize, Serialize};

use crate::em::{EmProblem, LatentProblem, ParamVector};
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::rng::SplitMix64;

/// Default base step for the Jacobian of the EM map (scaled per coordinate by
/// max(1, |theta_j|)).
pub const DT_FD_STEP: f64 = 1e-5;

/// Default base step for the observed-information Hessian (scaled likewise). Second
/// differences lose more precision than first differences, hence the larger step.
pub const OBS_FD_STEP: f64 = 1e-4;

/// Eigenvalues are clipped into this range before deriving rates and momentum
/// coefficients, so roundoff-negative values cannot produce nonsense.
pub const EIG_CLIP_LO: f64 = 1e-12;
pub const EIG_CLIP_HI: f64 = 1.0;

const MAX_STEP_HALVINGS: usize = 10;

/// Complete, observed, and missing information at a point. `i_mis` is defined as
/// `i_com - i_obs`, so the identity holds exactly by construction; the independent
/// check is `louis_mis`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FisherTriple {
    pub i_com: SquareMatrix,
    pub i_obs: SquareMatrix,
    pub i_mis: SquareMatrix,
}

/// Spectrum of the relaxation operator plus the scalar rates derived from it.
///
/// `eigenvalues` are the raw sorted eigenvalues of the symmetrized operator;
/// `lambda_min`/`lambda_max` are their clipped versions, and the derived scalars are
/// computed from the clipped values, so `rho_em = 1 - lambda_min` holds exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaxationAnalysis {
    pub dt: SquareMatrix,
    pub g: SquareMatrix,
    pub eigenvalues: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub rho_em: f64,
    pub beta_star: f64,
    pub rho_accel: f64,
}

/// Outcome of the matrix-free power iteration. `converged` is false when the
/// Rayleigh sequence was still moving by more than 1e-3 at the iteration cap.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub value: f64,
    pub converged: bool,
}

/// Per-coordinate FD step, shrunk until both one-sided perturbations are valid.
fn valid_step<P: EmProblem>(problem: &P, theta: &ParamVector, j: usize, base: f64) -> Result<f64> {
    let mut h = base * theta[j].abs().max(1.0);
    for _ in 0..=MAX_STEP_HALVINGS {
        let mut plus = theta.clone();
        plus.0[j] += h;
        let mut minus = theta.clone();
        minus.0[j] -= h;
        if problem.check(&plus).is_ok() && problem.check(&minus).is_ok() {
            return Ok(h);
        }
        h *= 0.5;
    }
    Err(Error::FdStepInvalid {
        index: j,
        attempts: MAX_STEP_HALVINGS,
    })
}

/// Jacobian of the EM map by central differences, column by column.
pub fn jacobian_fd<P: EmProblem>(
    problem: &P,
    theta: &ParamVector,
    base_step: f64,
) -> Result<SquareMatrix> {
    let d = problem.dim();
    problem.check(theta)?;
    let mut dt = SquareMatrix::zeros(d);
    for j in 0..d {
        let h = valid_step(problem, theta, j, base_step)?;
        let mut plus = theta.clone();
        plus.0[j] += h;
        let mut minus = theta.clone();
        minus.0[j] -= h;
        let tp = problem.em_step(&plus)?;
        let tm = problem.em_step(&minus)?;
        for i in 0..d {
            dt.set(i, j, (tp[i] - tm[i]) / (2.0 * h));
        }
    }
    if !dt.is_finite() {
        return Err(Error::Config("non-finite Jacobian entries".into()));
    }
    Ok(dt)
}

/// Observed information `-H[log-likelihood]` by central second differences.
/// The upper triangle is computed and mirrored, so the result is symmetric exactly.
pub fn observed_information_fd<P: EmProblem>(
    problem: &P,
    theta: &ParamVector,
) -> Result<SquareMatrix> {
    let d = problem.dim();
    let steps: Vec<f64> = (0..d)
        .map(|j| valid_step(problem, theta, j, OBS_FD_STEP))
        .collect::<Result<_>>()?;

    // All evaluations are differences against the unshifted point, so the
    // curvature signal is never extracted by subtracting two full-magnitude
    // log-likelihoods (see `log_likelihood_diff`).
    let gain = |shifts: &[(usize, f64)]| -> f64 {
        let mut t = theta.clone();
        for &(j, dh) in shifts {
            t.0[j] += dh;
        }
        problem.log_likelihood_diff(&t, theta)
    };

    let mut h = SquareMatrix::zeros(d);
    for i in 0..d {
        let hi = steps[i];
        let diag = (gain(&[(i, hi)]) + gain(&[(i, -hi)])) / (hi * hi);
        h.set(i, i, diag);
        for j in i + 1..d {
            let hj = steps[j];
            let cross = (gain(&[(i, hi), (j, hj)])
                - gain(&[(i, hi), (j, -hj)])
                - gain(&[(i, -hi), (j, hj)])
                + gain(&[(i, -hi), (j, -hj)]))
                / (4.0 * hi * hj);
            h.set(i, j, cross);
            h.set(j, i, cross);
        }
    }
    let i_obs = h.scale(-1.0);
    if !i_obs.is_finite() {
        return Err(Error::Config(
            "non-finite observed-information entries".into(),
        ));
    }
    Ok(i_obs)
}

/// Assemble the information triple at `theta`: complete information from analytic
/// complete-data Hessians weighted by the posterior, observed information by finite
/// differences, missing information as their difference.
pub fn fisher_triple<P: LatentProblem>(problem: &P, theta: &ParamVector) -> Result<FisherTriple> {
    problem.check(theta)?;
    let d = problem.dim();
    let resp = problem.responsibilities(theta)?;
    let mut i_com = SquareMatrix::zeros(d);
    for i in 0..problem.n_units() {
        for k in 0..problem.n_components() {
            let r = resp.get(i, k);
            if r == 0.0 {
                continue;
            }
            let h = problem.complete_hessian(theta, i, k);
            i_com = i_com.add(&h.scale(-r));
        }
    }
    let i_obs = observed_information_fd(problem, theta)?;
    let i_mis = i_com.sub(&i_obs);
    Ok(FisherTriple {
        i_com,
        i_obs,
        i_mis,
    })
}

/// Missing information as the posterior covariance of the complete-data score:
/// `sum_i [ sum_k r_ik s_ik s_ik' - (sum_k r_ik s_ik)(sum_k r_ik s_ik)' ]`.
/// This is an independent route to `i_com - i_obs` and is positive semidefinite
/// term by term.
pub fn louis_mis<P: LatentProblem>(problem: &P, theta: &ParamVector) -> Result<SquareMatrix> {
    problem.check(theta)?;
    let d = problem.dim();
    let resp = problem.responsibilities(theta)?;
    let mut total = SquareMatrix::zeros(d);
    for i in 0..problem.n_units() {
        let mut second = SquareMatrix::zeros(d);
        let mut mean = vec![0.0; d];
        for k in 0..problem.n_components() {
            let r = resp.get(i, k);
            if r == 0.0 {
                continue;
            }
            let s = problem.complete_score(theta, i, k);
            for a in 0..d {
                mean[a] += r * s[a];
                for b in 0..d {
                    second[(a, b)] += r * s[a] * s[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                second[(a, b)] -= mean[a] * mean[b];
            }
        }
        total = total.add(&second);
    }
    Ok(total)
}

fn clip_eigenvalue(v: f64) -> f64 {
    v.clamp(EIG_CLIP_LO, EIG_CLIP_HI)
}

/// Spectrum and derived rates of the relaxation operator `G = I - DT`, with
/// eigenvalues taken from the symmetrized similar form `L^-1 I_obs L^-T`.
pub fn relaxation_analysis(dt: &SquareMatrix, triple: &FisherTriple) -> Result<RelaxationAnalysis> {
    let d = dt.dim();
    if triple.i_com.dim() != d {
        return Err(Error::Dimension(format!(
            "DT is {d}x{d} but i_com is {0}x{0}",
            triple.i_com.dim()
        )));
    }
    let g = SquareMatrix::identity(d).sub(dt);
    let chol = triple.i_com.cholesky()?;
    let s = chol.whiten(&triple.i_obs);
    let eigenvalues = s.jacobi_eigenvalues()?;
    let lambda_min = clip_eigenvalue(eigenvalues[0]);
    let lambda_max = clip_eigenvalue(eigenvalues[d - 1]);
    let sqrt_min = lambda_min.sqrt();
    Ok(RelaxationAnalysis {
        dt: dt.clone(),
        g,
        eigenvalues,
        lambda_min,
        lambda_max,
        rho_em: 1.0 - lambda_min,
        beta_star: (1.0 - sqrt_min) / (1.0 + sqrt_min),
        rho_accel: 1.0 - sqrt_min,
    })
}

/// Optimal momentum coefficient for a known smallest eigenvalue: the damped
/// two-term recurrence has both characteristic roots at `1 - sqrt(lambda)` there.
pub fn optimal_momentum(lambda_min: f64) -> f64 {
    let s = clip_eigenvalue(lambda_min).sqrt();
    (1.0 - s) / (1.0 + s)
}

///// Relative Frobenius distance between `I - DT` and `I_com^-1 I_obs`: the two
/// independent routes to the relaxation operator. Falls back to the absolute
/// distance if the reference norm vanishes.
pub fn triple_equivalence_residual(dt: &SquareMatrix, triple: &FisherTriple) -> Result<f64> {
    let d = dt.dim();
    let lhs = SquareMatrix::identity(d).sub(dt);
    let rhs = triple.i_com.cholesky()?.solve_matrix(&triple.i_obs);
    let diff = lhs.sub(&rhs).frobenius_norm();
    let denom = rhs.frobenius_norm();
    Ok(if denom > 0.0 { diff / denom } else { diff })
}

/// Matrix-free estimate of `lambda_min(G)` as `1 - rho(DT)`, with `rho(DT)` from
/// power iteration on the directional derivative `v -> [T(theta + h v) - T(theta - h v)] / 2h`.
pub fn power_lambda_min<P: EmProblem>(
    problem: &P,
    theta: &ParamVector,
    base_step: f64,
    iters: usize,
) -> Result<SpectralEstimate> {
    let d = problem.dim();
    problem.check(theta)?;
    if iters < 2 {
        return Err(Error::Config(
            "power iteration needs at least 2 steps".into(),
        ));
    }

    // Deterministic start with unequal weight on every coordinate, so it is not
    // orthogonal to the dominant eigenvector except by measure-zero accident.
    let mut v = ParamVector((0..d).map(|j| 1.0 + 0.1 * j as f64).collect());
    let norm = v.norm();
    v = ParamVector(v.0.iter().map(|x| x / norm).collect());

    let apply = |v: &ParamVector| -> Result<ParamVector> {
        let mut h = base_step;
        for _ in 0..=MAX_STEP_HALVINGS {
            let plus = theta.add_scaled(h, v);
            let minus = theta.add_scaled(-h, v);
            if problem.check(&plus).is_ok() && problem.check(&minus).is_ok() {
                let tp = problem.em_step(&plus)?;
                let tm = problem.em_step(&minus)?;
                return Ok(ParamVector(
                    (0..d).map(|i| (tp[i] - tm[i]) / (2.0 * h)).collect(),
                ));
            }
            h *= 0.5;
        }
        Err(Error::FdStepInvalid {
            index: 0,
            attempts: MAX_STEP_HALVINGS,
        })
    };

    let mut prev_rayleigh = f64::NAN;
    let mut rayleigh = f64::NAN;
    for _ in 0..iters {
        let w = apply(&v)?;
        prev_rayleigh = rayleigh;
        rayleigh = v.dot(&w);
        let wn = w.norm();
        if wn < 1e-300 {
            // The map is (numerically) constant along every probed direction:
            // DT ~ 0, so the relaxation operator is the identity.
            return Ok(SpectralEstimate {
                value: 1.0,
                converged: true,
            });
        }
        v = ParamVector(w.0.iter().map(|x| x / wn).collect());
    }

    let converged = (rayleigh - prev_rayleigh).abs() <= 1e-3;
    Ok(SpectralEstimate {
        value: 1.0 - rayleigh,
        converged,
    })
}

/// Trajectory-based estimate of the smallest relaxation eigenvalue from three
/// consecutive iterates: one minus the ratio of successive step norms. `None` when
/// the older step is too small to divide by.
pub fn trajectory_lambda_hat(
    theta_k: &ParamVector,
    theta_k1: &ParamVector,
    theta_k2: &ParamVector,
) -> Option<f64> {
    let num = theta_k.dist(theta_k1);
    let den = theta_k1.dist(theta_k2);
    if den <= 1e-300 {
        return None;
    }
    Some(1.0 - num / den)
}

/// Data-driven radius of the ball where the one-step contraction argument is valid:
/// `rho0 = lambda_min / (4 M2 + 2 lambda_max^2)`, with `M2` half the largest second
/// difference of the step map over sampled directions, all norms in the `I_com`
/// metric. Directions whose perturbations leave the valid region are skipped.
pub fn contraction_radius_estimate<P: EmProblem>(
    problem: &P,
    theta_star: &ParamVector,
    analysis: &RelaxationAnalysis,
    i_com: &SquareMatrix,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    const T_VALUES: [f64; 3] = [0.25, 0.5, 1.0];
    let d = problem.dim();
    problem.check(theta_star)?;
    let t_center = problem.em_step(theta_star)?;
    let mut rng = SplitMix64::new(seed);
    let mut max_ratio: f64 = 0.0;
    let mut probes = 0usize;

    for _ in 0..samples {
        let w = rng.normal_vec(d);
        let mn = i_com.metric_norm(&w);
        if mn == 0.0 {
            continue;
        }
        let v = ParamVector(w.iter().map(|x| x / mn).collect());
        for &t in &T_VALUES {
            let plus = theta_star.add_scaled(t, &v);
            let minus = theta_star.add_scaled(-t, &v);
            if problem.check(&plus).is_err() || problem.check(&minus).is_err() {
                continue;
            }
            let tp = problem.em_step(&plus)?;
            let tm = problem.em_step(&minus)?;
            let second: Vec<f64> = (0..d).map(|i| tp[i] - 2.0 * t_center[i] + tm[i]).collect();
            max_ratio = max_ratio.max(i_com.metric_norm(&second) / (t * t));
            probes += 1;
        }
    }

    if probes == 0 {
        return Err(Error::InsufficientData {
            what: "every probe direction left the valid region".into(),
            needed: 1,
            available: 0,
        });
    }
    let m2 = 0.5 * max_ratio;
    Ok(analysis.lambda_min / (4.0 * m2 + 2.0 * analysis.lambda_max * analysis.lambda_max))
}
