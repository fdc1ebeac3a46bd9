//! Spectrum-driven accelerators wrapped around the plain EM step.
//!
//! All three schemes leave the E/M steps untouched and only post-process iterates:
//!
//! * `G_ACCEL`: heavy-ball momentum. Extrapolate `theta + beta (theta - prev)`,
//!   then take one EM step from there. `beta` comes from the smallest relaxation
//!   eigenvalue via `optimal_momentum`, estimated online by power iteration and
//!   refreshed periodically.
//! * `DCC_FIXED`: directional correction with a fixed gain. Push the EM output
//!   further along the current trajectory direction by `gamma <r, u>`, the
//!   residual's projection on that direction (gain 8 follows the classical
//!   recommendation for this family).
//! * `GEO_ADAPTIVE`: same correction, but the gain is re-derived every step from
//!   the observed step-norm ratio: `lambda_hat = 1 - ||step_k|| / ||step_{k-1}||`,
//!   `gamma = min(1 / lambda_hat, gamma_max)` after clipping `lambda_hat` away
//!   from 0 and 1. The ratio only measures a contraction rate while steps shrink;
//!   once corrections fire, step norms routinely grow and the raw ratio goes
//!   negative. Those steps reuse the last positive estimate and adjust it by
//!   safeguard feedback: decay it after an accepted correction (the step proved
//!   the extrapolation safe, so reach further next time) and inflate it after a
//!   rejection (back off). Fresh positive measurements always overwrite the
//!   carried value, and with no positive measurement yet the step stays plain EM.
//!
//! Every accelerated candidate passes a monotonicity safeguard: it is accepted
//! only if its log-likelihood reaches the plain EM step's (no slack) and does not
//! fall more than `SAFEGUARD_TOL` below the current iterate's; otherwise the
//! plain step is taken and the step is flagged as a fallback. Accepted iterates
//! therefore ascend at least as fast as plain EM on every single step. The two
//! references are not redundant: EM ascent can be broken by the scale-floor
//! clamp, in which case the plain reference sits *below* the current iterate and
//! the second condition keeps decreasing candidates out. (A nonzero acceptance
//! slack against the plain reference is unsound: candidates that lose a few ulps
//! of likelihood while moving the parameters can chain into a limit cycle that
//! never meets the step tolerance.)

use serde::{Deserialize, Serialize};

use crate::em::{EmProblem, ParamVector, RunResult, StepDiag, StopRule};
use crate::error::{Error, Result};
use crate::spectral::{optimal_momentum, power_lambda_min, trajectory_lambda_hat, DT_FD_STEP};

/// Bound on how far an accepted step may fall below the current iterate's
/// log-likelihood. Against the plain-EM reference the safeguard allows no slack
/// at all, so whenever EM ascent holds this constant never becomes the binding
/// condition; it exists so that accepted steps satisfy the audited decrease
/// bound even when the scale-floor clamp breaks plain-EM monotonicity.
pub const SAFEGUARD_TOL: f64 = 1e-10;

/// Power-iteration length used for each online eigenvalue refresh.
const REFRESH_POWER_ITERS: usize = 40;

/// Decay applied to a carried gain estimate after an accepted correction taken
/// without a fresh measurement; acceptance is evidence the extrapolation was not
/// too long, so the gain may grow (gamma = 1/lambda rises as lambda decays).
const GEO_TRUST_DECAY: f64 = 0.7;
/// Inflation applied to the carried estimate after a rejected correction.
const GEO_TRUST_GROWTH: f64 = 2.0;
/// Hard floor for the carried estimate; gains saturate at `gamma_max` well
/// before this, so the floor only bounds how far the decay can wind down.
const GEO_TRUST_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Em,
    GAccel,
    DccFixed,
    GeoAdaptive,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Em,
        Method::GAccel,
        Method::DccFixed,
        Method::GeoAdaptive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Em => "EM",
            Method::GAccel => "G_ACCEL",
            Method::DccFixed => "DCC_FIXED",
            Method::GeoAdaptive => "GEO_ADAPTIVE",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "EM" => Ok(Method::Em),
            "G_ACCEL" | "GACCEL" => Ok(Method::GAccel),
            "DCC_FIXED" | "DCC" => Ok(Method::DccFixed),
            "GEO_ADAPTIVE" | "GEO" => Ok(Method::GeoAdaptive),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected EM, G_ACCEL, DCC_FIXED or GEO_ADAPTIVE)"
            ))),
        }
    }
}

fn default_gamma_fixed() -> f64 {
    8.0
}
fn default_lambda_floor() -> f64 {
    1e-3
}
fn default_lambda_ceiling() -> f64 {
    1.0 - 1e-6
}
fn default_gamma_max() -> f64 {
    1e3
}
fn default_refresh() -> usize {
    20
}
fn default_warmup() -> usize {
    3
}

/// Driver configuration. Field names double as the config-file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    /// Fixed correction gain for `DCC_FIXED`.
    #[serde(default = "default_gamma_fixed")]
    pub gamma_fixed: f64,
    /// Lower clip for eigenvalue estimates feeding gains and momentum.
    #[serde(default = "default_lambda_floor")]
    pub lambda_floor: f64,
    /// Upper clip for trajectory eigenvalue estimates (keeps 1/lambda finite).
    #[serde(default = "default_lambda_ceiling")]
    pub lambda_ceiling: f64,
    /// Cap on the adaptive gain.
    #[serde(default = "default_gamma_max")]
    pub gamma_max: f64,
    /// Fixed momentum coefficient; set to bypass the online eigenvalue estimate.
    #[serde(default)]
    pub beta_override: Option<f64>,
    /// Outer iterations between online eigenvalue refreshes for `G_ACCEL`.
    #[serde(default = "default_refresh")]
    pub respect_lambda_refresh: usize,
    /// Plain EM steps taken before any acceleration kicks in.
    #[serde(default = "default_warmup")]
    pub warmup: usize,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        MethodConfig {
            method,
            gamma_fixed: default_gamma_fixed(),
            lambda_floor: default_lambda_floor(),
            lambda_ceiling: default_lambda_ceiling(),
            gamma_max: default_gamma_max(),
            beta_override: None,
            respect_lambda_refresh: default_refresh(),
            warmup: default_warmup(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_floor > 0.0 && self.lambda_floor < self.lambda_ceiling) {
            return Err(Error::Config(format!(
                "lambda_floor {} must be positive and below lambda_ceiling {}",
                self.lambda_floor, self.lambda_ceiling
            )));
        }
        if !(self.lambda_ceiling < 1.0) {
            return Err(Error::Config(format!(
                "lambda_ceiling {} must be below 1",
                self.lambda_ceiling
            )));
        }
        if !(self.gamma_max > 0.0) || !(self.gamma_fixed > 0.0) {
            return Err(Error::Config("gains must be positive".into()));
        }
        if let Some(b) = self.beta_override {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!(
                    "beta_override {b} must lie in [0, 1)"
                )));
            }
        }
        if self.respect_lambda_refresh == 0 {
            return Err(Error::Config("respect_lambda_refresh must be >= 1".into()));
        }
        if self.warmup < 2 {
            return Err(Error::Config(
                "warmup must be >= 2 (the correction needs two past iterates)".into(),
            ));
        }
        Ok(())
    }
}

/// Inverse of `optimal_momentum`: the eigenvalue whose optimal coefficient is `beta`.
pub fn beta_to_lambda(beta: f64) -> f64 {
    let s = (1.0 - beta) / (1.0 + beta);
    s * s
}

/// Outcome of one accelerated update.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: ParamVector,
    /// The plain EM step from the same point (safeguard reference; also the EM
    /// residual's endpoint, so callers can reuse it without another E/M pass).
    pub plain: ParamVector,
    /// Safeguard or validity check rejected the accelerated candidate.
    pub fallback: bool,
    /// Momentum coefficient actually applied (after any halving).
    pub beta: Option<f64>,
    /// Correction gain attempted (recorded even when the safeguard rejects it).
    pub gamma: Option<f64>,
}

/// Plain EM step; the trivial driver case.
pub fn step_em<P: EmProblem>(problem: &P, theta: &ParamVector) -> Result<ParamVector> {
    problem.em_step(theta)
}

/// Accept the candidate only if it is valid, its likelihood does not fall below
/// the plain step's, and it stays within `SAFEGUARD_TOL` of the current
/// iterate's likelihood (`current_ll`).
fn safeguard<P: EmProblem>(
    problem: &P,
    candidate: Option<ParamVector>,
    plain: ParamVector,
    current_ll: f64,
) -> (ParamVector, bool) {
    if let Some(cand) = candidate {
        if problem.check(&cand).is_ok() {
            let bar = problem
                .log_likelihood(&plain)
                .max(current_ll - SAFEGUARD_TOL);
            if problem.log_likelihood(&cand) >= bar {
                return (cand, false);
            }
        }
        return (plain, true);
    }
    (plain, true)
}

/// One momentum step: extrapolate along the last displacement, then apply EM.
/// The extrapolation coefficient is halved (up to 10 times) while the probe point
/// is invalid; the safeguard compares against the plain EM step from `current`
/// and against `current_ll = log_likelihood(current)`, which callers running a
/// trajectory already have cached.
pub fn step_g_accel<P: EmProblem>(
    problem: &P,
    current: &ParamVector,
    prev: &ParamVector,
    lambda_min_est: f64,
    current_ll: f64,
) -> Result<StepOutcome> {
    let plain = problem.em_step(current)?;
    let mut beta = optimal_momentum(lambda_min_est);
    if beta == 0.0 {
        return Ok(StepOutcome {
            next: plain.clone(),
            plain,
            fallback: false,
            beta: Some(0.0),
            gamma: None,
        });
    }

    let mut probe = None;
    for _ in 0..=10 {
        let extrapolated = current.add_scaled(beta, &current.sub(prev));
        if problem.check(&extrapolated).is_ok() {
            probe = Some(extrapolated);
            break;
        }
        beta *= 0.5;
    }
    let candidate = match probe {
        // A failed EM step from the probe point (e.g. collapse) is treated like an
        // invalid candidate rather than a fatal error.
        Some(p) => problem.em_step(&p).ok(),
        None => None,
    };
    let used_beta = if candidate.is_some() { beta } else { 0.0 };
    let (next, fallback) = safeguard(problem, candidate, plain.clone(), current_ll);
    Ok(StepOutcome {
        next,
        plain,
        fallback,
        beta: Some(if fallback { 0.0 } else { used_beta }),
        gamma: None,
    })
}

/// One directional-correction step with gain `gamma`. With no usable trajectory
/// direction (first step, or coincident iterates) this is a plain EM step.
/// `current_ll` is `log_likelihood(current)`, cached by trajectory runners.
pub fn step_dcc<P: EmProblem>(
    problem: &P,
    current: &ParamVector,
    prev: &ParamVector,
    gamma: f64,
    current_ll: f64,
) -> Result<StepOutcome> {
    let plain = problem.em_step(current)?;
    let d = current.sub(prev);
    let dn = d.norm();
    if dn <= 1e-300 {
        return Ok(StepOutcome {
            next: plain.clone(),
            plain,
            fallback: false,
            beta: None,
            gamma: None,
        });
    }
    let u = ParamVector(d.0.iter().map(|x| x / dn).collect());
    let r = plain.sub(current);
    let candidate = plain.add_scaled(gamma * r.dot(&u), &u);
    let (next, fallback) = safeguard(problem, Some(candidate), plain.clone(), current_ll);
    Ok(StepOutcome {
        next,
        plain,
        fallback,
        beta: None,
        gamma: Some(gamma),
    })
}

/// Rolling state for the geometry-adaptive driver: the two previous iterates,
/// the estimate currently in effect, and diagnostics of the last correction.
#[derive(Debug, Clone)]
pub struct GeoState {
    pub prev: ParamVector,
    pub prev2: ParamVector,
    /// Contraction estimate in effect: the last positive step-norm-ratio
    /// measurement, decayed/inflated by safeguard feedback while measurements
    /// stay invalid. Drives the gain. `None` until the first positive ratio.
    pub lambda_hat: Option<f64>,
    /// This step's raw step-norm-ratio value, before any validity filtering.
    pub lambda_raw: Option<f64>,
    pub gamma_k: Option<f64>,
    pub r_k: Option<ParamVector>,
    pub u_k: Option<ParamVector>,
    pub fallback_count: usize,
}

impl GeoState {
    pub fn new(prev: ParamVector, prev2: ParamVector) -> Self {
        GeoState {
            prev,
            prev2,
            lambda_hat: None,
            lambda_raw: None,
            gamma_k: None,
            r_k: None,
            u_k: None,
            fallback_count: 0,
        }
    }
}

/// One geometry-adaptive step.
///
/// A positive step-norm ratio is a direct contraction measurement and becomes the
/// estimate. A non-positive or undefined ratio means the trajectory is locally
/// expanding (typical right after corrections) and carries no rate information;
/// the step then runs on the carried estimate, adjusted afterwards by safeguard
/// feedback — decayed when the correction was accepted, inflated when rejected.
/// With no carried estimate yet, the step is plain EM and flagged as a fallback.
pub fn step_geo_adaptive<P: EmProblem>(
    problem: &P,
    current: &ParamVector,
    state: &GeoState,
    cfg: &MethodConfig,
    current_ll: f64,
) -> Result<(StepOutcome, GeoState)> {
    let lambda_raw = trajectory_lambda_hat(current, &state.prev, &state.prev2);
    let measured = lambda_raw.filter(|l| *l > 0.0);
    let mut next_state = GeoState {
        prev: current.clone(),
        prev2: state.prev.clone(),
        lambda_hat: measured.or(state.lambda_hat),
        lambda_raw,
        gamma_k: None,
        r_k: None,
        u_k: None,
        fallback_count: state.fallback_count,
    };

    let outcome = match next_state.lambda_hat {
        None => {
            let plain = problem.em_step(current)?;
            StepOutcome {
                next: plain.clone(),
                plain,
                fallback: true,
                beta: None,
                gamma: None,
            }
        }
        Some(l) => {
            let clipped = l.clamp(cfg.lambda_floor, cfg.lambda_ceiling);
            let gamma = (1.0 / clipped).min(cfg.gamma_max);
            let mut out = step_dcc(problem, current, &state.prev, gamma, current_ll)?;
            if out.gamma.is_some() {
                next_state.gamma_k = Some(gamma);
                next_state.r_k = Some(out.plain.sub(current));
                let d = current.sub(&state.prev);
                let dn = d.norm();
                next_state.u_k = Some(ParamVector(d.0.iter().map(|x| x / dn).collect()));
                if measured.is_none() {
                    // No fresh measurement backed this gain; let the safeguard's
                    // verdict steer the carried estimate instead.
                    next_state.lambda_hat = Some(if out.fallback {
                        (l * GEO_TRUST_GROWTH).min(cfg.lambda_ceiling)
                    } else {
                        (l * GEO_TRUST_DECAY).max(GEO_TRUST_MIN)
                    });
                }
            } else {
                out.fallback = true;
            }
            out
        }
    };
    if outcome.fallback {
        next_state.fallback_count += 1;
    }
    Ok((outcome, next_state))
}

/// Run any method to the stop rule, recording per-step diagnostics.
///
/// Warmup steps are plain EM for every method; acceleration needs two (geometry:
/// three) past iterates anyway. Iteration counts are outer updates, directly
/// comparable across methods.
pub fn run_method<P: EmProblem>(
    problem: &P,
    theta0: &ParamVector,
    stop: &StopRule,
    cfg: &MethodConfig,
) -> Result<RunResult> {
    cfg.validate()?;
    stop.validate()?;
    problem.check(theta0)?;

    let mut iterates = vec![theta0.clone()];
    let mut loglik = vec![problem.log_likelihood(theta0)];
    let mut step_norms = Vec::new();
    let mut extras: Vec<StepDiag> = Vec::new();
    let mut converged = false;

    // G_ACCEL eigenvalue estimate currently in effect.
    let mut lambda_est: Option<f64> = cfg.beta_override.map(beta_to_lambda);
    // GEO_ADAPTIVE rolling state, created once warmup provides two past iterates.
    let mut geo: Option<GeoState> = None;

    for k in 0..stop.max_iter {
        let current = iterates.last().expect("non-empty").clone();
        let current_ll = *loglik.last().expect("non-empty");
        let (next, diag) = if cfg.method == Method::Em || k < cfg.warmup {
            (problem.em_step(&current)?, StepDiag::default())
        } else {
            match cfg.method {
                Method::Em => unreachable!(),
                Method::GAccel => {
                    if cfg.beta_override.is_none()
                        && (k == cfg.warmup
                            || (k - cfg.warmup).is_multiple_of(cfg.respect_lambda_refresh))
                    {
                        let est =
                            power_lambda_min(problem, &current, DT_FD_STEP, REFRESH_POWER_ITERS)?;
                        lambda_est = Some(est.value.clamp(cfg.lambda_floor, 1.0));
                    }
                    let lambda = lambda_est.expect("estimate set at first accelerated step");
                    let prev = &iterates[iterates.len() - 2];
                    let out = step_g_accel(problem, &current, prev, lambda, current_ll)?;
                    (
                        out.next,
                        StepDiag {
                            lambda_hat: Some(lambda),
                            beta: out.beta,
                            gamma: None,
                            fallback: out.fallback,
                            energy: None,
                        },
                    )
                }
                Method::DccFixed => {
                    let prev = &iterates[iterates.len() - 2];
                    let out = step_dcc(problem, &current, prev, cfg.gamma_fixed, current_ll)?;
                    (
                        out.next,
                        StepDiag {
                            lambda_hat: None,
                            beta: None,
                            gamma: out.gamma,
                            fallback: out.fallback,
                            energy: None,
                        },
                    )
                }
                Method::GeoAdaptive => {
                    let state = geo.take().unwrap_or_else(|| {
                        let n = iterates.len();
                        GeoState::new(iterates[n - 2].clone(), iterates[n - 3].clone())
                    });
                    let (out, new_state) =
                        step_geo_adaptive(problem, &current, &state, cfg, current_ll)?;
                    let diag = StepDiag {
                        lambda_hat: new_state.lambda_hat,
                        beta: None,
                        gamma: new_state.gamma_k,
                        fallback: out.fallback,
                        energy: None,
                    };
                    geo = Some(new_state);
                    (out.next, diag)
                }
            }
        };

        let step = next.dist(&current);
        step_norms.push(step);
        loglik.push(problem.log_likelihood(&next));
        iterates.push(next);
        extras.push(diag);
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
        per_step_extras: Some(extras),
    })
}
