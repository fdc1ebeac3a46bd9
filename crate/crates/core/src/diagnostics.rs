//! Trajectory diagnostics: the per-step energy split, local quadratic predictions,
//! empirical rate fits, and contraction profiles.
//!
//! The backbone is an exact identity: for any parameter point, the one-step
//! likelihood gain splits as
//!
//! ```text
//! ll(T(theta)) - ll(theta) = [Q(T(theta)|theta) - Q(theta|theta)]   (surrogate gain)
//!                          + KL(post(theta) || post(T(theta)))      (posterior transport)
//! ```
//!
//! Both terms are nonnegative, the identity holds at every iterate (not just in the
//! limit), and its residual is pure floating-point error, which makes it a strong
//! self-test of the E-step, M-step, and likelihood implementations. Near a fixed
//! point both terms become quadratic forms in the relaxation operator: the surrogate
//! gain carries `G^2`, the transport term `G^2 - G^3`, and the total `2 G^2 - G^3`,
//! all in the complete-information metric.

use serde::{Deserialize, Serialize};

use crate::em::{LatentProblem, ParamVector, RunResult};
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::rng::SplitMix64;
use crate::spectral::RelaxationAnalysis;

/// One-step energy split at a point. `residual` is the identity defect
/// `ell_gain - delta_q - kl_transport` and should be at roundoff level.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyDecomposition {
    pub ell_gain: f64,
    pub delta_q: f64,
    pub kl_transport: f64,
    pub residual: f64,
}

/// Decompose the next EM step from `theta`.
pub fn energy_decompose<P: LatentProblem>(
    problem: &P,
    theta: &ParamVector,
) -> Result<EnergyDecomposition> {
    let next = problem.em_step(theta)?;
    let ell_gain = problem.log_likelihood(&next) - problem.log_likelihood(theta);
    let delta_q = problem.q_function(&next, theta)? - problem.q_function(theta, theta)?;
    let kl_transport = problem.posterior_kl(theta, &next)?;
    Ok(EnergyDecomposition {
        ell_gain,
        delta_q,
        kl_transport,
        residual: ell_gain - delta_q - kl_transport,
    })
}

fn require_full_storage(run: &RunResult) -> Result<()> {
    if run.iterates.len() != run.iterations_used + 1 {
        return Err(Error::InsufficientData {
            what: "trajectory diagnostics need full iterate storage".into(),
            needed: run.iterations_used + 1,
            available: run.iterates.len(),
        });
    }
    Ok(())
}

/// Energy split of the EM step launched from every recorded iterate (the last
/// iterate has no outgoing step). For accelerated runs this decomposes the plain
/// EM step from each point, for which the identity holds regardless of how the
/// trajectory itself was produced.
pub fn energy_trace<P: LatentProblem>(
    problem: &P,
    run: &RunResult,
) -> Result<Vec<EnergyDecomposition>> {
    require_full_storage(run)?;
    (0..run.iterations_used)
        .map(|k| energy_decompose(problem, &run.iterates[k]))
        .collect()
}

/// Compute the energy trace and attach it to the run's per-step diagnostics.
pub fn attach_energy<P: LatentProblem>(problem: &P, run: &mut RunResult) -> Result<()> {
    let trace = energy_trace(problem, run)?;
    let extras = run
        .per_step_extras
        .get_or_insert_with(|| vec![Default::default(); trace.len()]);
    for (diag, energy) in extras.iter_mut().zip(trace) {
        diag.energy = Some(energy);
    }
    Ok(())
}

/// Posterior transport cost along the recorded trajectory: KL between the
/// posteriors at consecutive iterates.
pub fn rigidity_profile<P: LatentProblem>(problem: &P, run: &RunResult) -> Result<Vec<f64>> {
    require_full_storage(run)?;
    (0..run.iterations_used)
        .map(|k| problem.posterior_kl(&run.iterates[k], &run.iterates[k + 1]))
        .collect()
}

/// |cos| of the angle between successive displacement directions, one value per
/// interior iterate. Values near 1 mean the trajectory has locked onto a single
/// slow direction. Reported, never asserted: transients legitimately wander.
pub fn velocity_alignment(run: &RunResult) -> Vec<f64> {
    let mut out = Vec::new();
    for w in run.iterates.windows(3) {
        let d0 = w[1].sub(&w[0]);
        let d1 = w[2].sub(&w[1]);
        let denom = d0.norm() * d1.norm();
        if denom > 0.0 {
            out.push((d1.dot(&d0) / denom).abs());
        }
    }
    out
}

/// One scale of the local quadratic comparison.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadraticCheckRow {
    pub scale: f64,
    pub actual: f64,
    pub predicted: f64,
    pub rel_error: f64,
    pub dq_actual: f64,
    pub dq_predicted: f64,
    pub kl_actual: f64,
    pub kl_predicted: f64,
}

/// Compare the actual one-step gain against the quadratic prediction
/// `(1/2) u' I_com (2G^2 - G^3) u` at `theta* + t v` for each scale `t`, along with
/// the surrogate (`G^2`) and transport (`G^2 - G^3`) components. The probe
/// direction `v` is a fixed seeded unit vector; scales whose perturbation leaves
/// the valid region are skipped.
pub fn local_quadratic_check<P: LatentProblem>(
    problem: &P,
    theta_star: &ParamVector,
    analysis: &RelaxationAnalysis,
    i_com: &SquareMatrix,
    scales: &[f64],
    seed: u64,
) -> Result<Vec<QuadraticCheckRow>> {
    let d = problem.dim();
    let mut rng = SplitMix64::new(seed);
    let w = rng.normal_vec(d);
    let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::Config("degenerate probe direction".into()));
    }
    let v = ParamVector(w.iter().map(|x| x / n).collect());

    let g2 = analysis.g.matmul(&analysis.g);
    let g3 = g2.matmul(&analysis.g);
    let full = i_com.matmul(&g2.scale(2.0).sub(&g3));
    let dq_form = i_com.matmul(&g2);
    let kl_form = i_com.matmul(&g2.sub(&g3));

    let mut rows = Vec::new();
    for &t in scales {
        let theta = theta_star.add_scaled(t, &v);
        if problem.check(&theta).is_err() {
            continue;
        }
        let u: Vec<f64> = v.0.iter().map(|x| x * t).collect();
        let energy = energy_decompose(problem, &theta)?;
        let predicted = 0.5 * full.quadratic_form(&u);
        let dq_predicted = 0.5 * dq_form.quadratic_form(&u);
        let kl_predicted = 0.5 * kl_form.quadratic_form(&u);
        rows.push(QuadraticCheckRow {
            scale: t,
            actual: energy.ell_gain,
            predicted,
            rel_error: (energy.ell_gain - predicted).abs() / predicted.abs().max(1e-300),
            dq_actual: energy.delta_q,
            dq_predicted,
            kl_actual: energy.kl_transport,
            kl_predicted,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`, skipping non-positive entries.
/// The standard tool for reading off a convergence order from scale sweeps.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData {
            what: "log-log fit needs two positive points".into(),
            needed: 2,
            available: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

/// Geometric tail rate fitted to the step-norm series.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateFit {
    pub fitted_rho: f64,
    pub r_squared: f64,
    pub window: usize,
}

/// Default fitting window: the final quarter of the run, capped at 50 steps and
/// floored at the 10-step minimum a meaningful fit needs.
pub fn default_rate_window(iterations: usize) -> usize {
    (iterations / 4).clamp(10, 50)
}

/// Fit `ln ||step_k|| ~ a + k ln(rho)` over the final `window` steps by ordinary
/// least squares. Exactly-zero steps (already at the fixed point) are excluded.
pub fn fit_rate(run: &RunResult, window: usize) -> Result<RateFit> {
    if window < 10 {
        return Err(Error::Config(format!(
            "rate-fit window must be at least 10, got {window}"
        )));
    }
    let steps = &run.step_norms;
    if steps.len() < window {
        return Err(Error::InsufficientData {
            what: "rate-fit window exceeds recorded steps".into(),
            needed: window,
            available: steps.len(),
        });
    }
    let tail = &steps[steps.len() - window..];
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > 0.0 && s.is_finite())
        .map(|(k, s)| (k as f64, s.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData {
            what: "too few positive step norms in window".into(),
            needed: 2,
            available: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| {
            let fit = my + slope * (p.0 - mx);
            (p.1 - fit) * (p.1 - fit)
        })
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(RateFit {
        fitted_rho: slope.exp(),
        r_squared,
        window,
    })
}

/// Distance-to-fixed-point profile in the `I_com` metric, plus the first index
/// where it enters the ball of radius `rho0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoStageProfile {
    pub distances: Vec<f64>,
    pub entry_index: Option<usize>,
}

pub fn two_stage_profile(
    run: &RunResult,
    theta_star: &ParamVector,
    i_com: &SquareMatrix,
    rho0: f64,
) -> Result<TwoStageProfile> {
    require_full_storage(run)?;
    let distances: Vec<f64> = run
        .iterates
        .iter()
        .map(|t| i_com.metric_norm(t.sub(theta_star).as_slice()))
        .collect();
    let entry_index = distances.iter().position(|&d| d <= rho0);
    Ok(TwoStageProfile {
        distances,
        entry_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{run_em, StopRule};
    use crate::gmm::{generate_dataset, GmmParams, GmmProblem};
    use crate::spectral::{fisher_triple, jacobian_fd, relaxation_analysis, DT_FD_STEP};
    use crate::synthetic::LinearProblem;

    fn small_problem() -> GmmProblem {
        let truth = GmmParams::new(0.4, vec![0.0, 4.0], vec![1.0, 1.2]).unwrap();
        GmmProblem::new(generate_dataset(&truth, 60, 3))
    }

    #[test]
    fn energy_identity_holds_at_roundoff() {
        let problem = small_problem();
        let theta = GmmParams::new(0.5, vec![0.5, 3.0], vec![1.3, 1.0])
            .unwrap()
            .to_vector();
        let e = energy_decompose(&problem, &theta).unwrap();
        assert!(e.delta_q >= -1e-12);
        assert!(e.kl_transport >= -1e-15);
        assert!(e.ell_gain >= -1e-12);
        assert!(
            e.residual.abs() <= 1e-12 * e.ell_gain.abs().max(1.0),
            "residual {}",
            e.residual
        );
    }

    #[test]
    fn energy_trace_covers_every_step() {
        let problem = small_problem();
        let theta0 = GmmParams::new(0.5, vec![0.5, 3.0], vec![1.3, 1.0])
            .unwrap()
            .to_vector();
        let mut run = run_em(&problem, &theta0, &StopRule::new(1e-6, 40)).unwrap();
        let trace = energy_trace(&problem, &run).unwrap();
        assert_eq!(trace.len(), run.iterations_used);
        // Each decomposed gain reproduces the recorded likelihood increments.
        for (k, e) in trace.iter().enumerate() {
            assert!((e.ell_gain - (run.loglik[k + 1] - run.loglik[k])).abs() < 1e-9);
        }
        attach_energy(&problem, &mut run).unwrap();
        let extras = run.per_step_extras.as_ref().unwrap();
        assert!(extras.iter().all(|d| d.energy.is_some()));
    }

    #[test]
    fn trace_requires_full_storage() {
        let problem = small_problem();
        let theta0 = GmmParams::new(0.5, vec![0.5, 3.0], vec![1.3, 1.0])
            .unwrap()
            .to_vector();
        let run = crate::em::run_em_thin(&problem, &theta0, &StopRule::new(1e-8, 200)).unwrap();
        if run.iterations_used > 2 {
            assert!(energy_trace(&problem, &run).is_err());
        }
    }

    #[test]
    fn rigidity_profile_is_nonnegative() {
        let problem = small_problem();
        let theta0 = GmmParams::new(0.5, vec![0.5, 3.0], vec![1.3, 1.0])
            .unwrap()
            .to_vector();
        let run = run_em(&problem, &theta0, &StopRule::new(1e-6, 40)).unwrap();
        let profile = rigidity_profile(&problem, &run).unwrap();
        assert_eq!(profile.len(), run.iterations_used);
        assert!(profile.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn alignment_is_unity_on_a_scalar_run() {
        let p = LinearProblem::from_diag(&[0.9], &ParamVector(vec![0.0]));
        let run = run_em(&p, &ParamVector(vec![1.0]), &StopRule::new(1e-10, 60)).unwrap();
        let a = velocity_alignment(&run);
        assert!(!a.is_empty());
        assert!(a.iter().all(|&c| (c - 1.0).abs() < 1e-12));
    }

    #[test]
    fn log_log_slope_recovers_cubic() {
        let xs = [0.1, 0.03, 0.01, 0.003, 0.001];
        let ys: Vec<f64> = xs.iter().map(|x| 7.0 * x * x * x).collect();
        let slope = log_log_slope(&xs, &ys).unwrap();
        assert!((slope - 3.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rate_exact_geometric_sequence() {
        let p = LinearProblem::from_diag(&[0.9], &ParamVector(vec![0.0]));
        let run = run_em(&p, &ParamVector(vec![1.0]), &StopRule::new(1e-10, 300)).unwrap();
        let fit = fit_rate(&run, 10).unwrap();
        assert!(
            (fit.fitted_rho - 0.9).abs() < 1e-10,
            "rho {}",
            fit.fitted_rho
        );
        assert!(fit.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn fit_rate_rejects_short_windows() {
        let p = LinearProblem::from_diag(&[0.5], &ParamVector(vec![0.0]));
        let run = run_em(&p, &ParamVector(vec![1.0]), &StopRule::new(1e-10, 100)).unwrap();
        assert!(fit_rate(&run, 5).is_err());
        assert!(fit_rate(&run, 10_000).is_err());
    }

    #[test]
    fn default_window_tracks_run_length() {
        assert_eq!(default_rate_window(1000), 50);
        assert_eq!(default_rate_window(100), 25);
        assert_eq!(default_rate_window(20), 10);
    }

    #[test]
    fn two_stage_profile_on_linear_map() {
        let p = LinearProblem::from_diag(&[0.5], &ParamVector(vec![0.0]));
        let run = run_em(&p, &ParamVector(vec![1.0]), &StopRule::new(1e-9, 60)).unwrap();
        let profile = two_stage_profile(
            &run,
            &ParamVector(vec![0.0]),
            &SquareMatrix::identity(1),
            0.3,
        )
        .unwrap();
        // Distances 1, 0.5, 0.25, ...: the ball of radius 0.3 is entered at k = 2.
        assert_eq!(profile.entry_index, Some(2));
        let after = &profile.distances[2..];
        assert!(after.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_prediction_error_decays_superquadratically() {
        // At a well-separated fixed point the prediction error should shrink like
        // t^3; the tight slope band is asserted at benchmark scale in the
        // acceptance suite, so a loose band suffices here.
        let problem = small_problem();
        let theta0 = GmmParams::new(0.5, vec![0.5, 3.0], vec![1.3, 1.0])
            .unwrap()
            .to_vector();
        let star = crate::em::solve_fixed_point(&problem, &theta0).unwrap();
        assert!(star.converged);
        let star = star.final_iterate().clone();
        let triple = fisher_triple(&problem, &star).unwrap();
        let dt = jacobian_fd(&problem, &star, DT_FD_STEP).unwrap();
        let an = relaxation_analysis(&dt, &triple).unwrap();
        let scales = [0.1, 0.03, 0.01, 0.003];
        let rows = local_quadratic_check(&problem, &star, &an, &triple.i_com, &scales, 5).unwrap();
        assert_eq!(rows.len(), scales.len());
        let xs: Vec<f64> = rows.iter().map(|r| r.scale).collect();
        let errs: Vec<f64> = rows
            .iter()
            .map(|r| (r.actual - r.predicted).abs())
            .collect();
        let slope = log_log_slope(&xs, &errs).unwrap();
        assert!(
            (2.0..=4.5).contains(&slope),
            "prediction error slope {slope}"
        );
        // The split predictions converge to their actual counterparts as well.
        let last = rows.last().unwrap();
        assert!(
            (last.dq_actual - last.dq_predicted).abs() <= 0.2 * last.dq_actual.abs().max(1e-12)
        );
    }
}
