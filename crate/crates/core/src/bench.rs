//! Benchmark harness: the scenario catalog, the seeded multi-trial runner, report
//! aggregation, and file emission (CSV / JSON plus the rate-curve table).
//!
//! Fairness and reproducibility rules baked in here:
//! - within one trial index, every method consumes the identical dataset
//!   (seed = `base_seed + trial_index`);
//! - wall times are recorded for reference but never compared — iteration counts
//!   are the hardware-independent quantity (`content_eq` ignores times);
//! - rows are sorted by (scenario, method, trial) before aggregation, so parallel
//!   and serial execution emit identical reports.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accel::{run_method, MethodConfig};
use crate::em::{solve_fixed_point, ParamVector, StopRule};
use crate::error::{Error, Result};
use crate::gmm::{generate_dataset, GmmParams, GmmProblem};
use crate::spectral::{
    contraction_radius_estimate, fisher_triple, jacobian_fd, relaxation_analysis,
    triple_equivalence_residual, DT_FD_STEP,
};

/// One benchmark scenario: ground truth, sample size, common start point, and the
/// stopping rule shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub true_params: GmmParams,
    pub n_samples: usize,
    pub theta0: ParamVector,
    pub tol: f64,
    pub max_iter: usize,
    pub n_trials: usize,
    pub base_seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("scenario name must be nonempty".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::Config(format!(
                "scenario {}: n_trials must be at least 1",
                self.name
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::Config(format!(
                "scenario {}: need at least 2 samples",
                self.name
            )));
        }
        self.true_params.check()?;
        self.stop_rule().validate()
    }

    pub fn stop_rule(&self) -> StopRule {
        StopRule::new(self.tol, self.max_iter)
    }
}

/// Seed used for trial `trial` of a scenario.
pub fn trial_seed(scenario: &ScenarioConfig, trial: usize) -> u64 {
    scenario.base_seed.wrapping_add(trial as u64)
}

/// The dataset-backed problem instance for one trial.
pub fn trial_problem(scenario: &ScenarioConfig, trial: usize) -> GmmProblem {
    GmmProblem::new(generate_dataset(
        &scenario.true_params,
        scenario.n_samples,
        trial_seed(scenario, trial),
    ))
}

fn standard_start() -> ParamVector {
    ParamVector(vec![0.5, -0.5, 1.5, 0.5, 1.5])
}

/// The four built-in scenarios. All share the start point, tolerance 1e-8, a
/// 2000-iteration budget, and 10 trials; they differ in how hard they make life
/// for plain EM, from near-indistinguishable components (Extreme) to a
/// well-separated easy case (UnequalVar).
pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    let scenario = |name: &str, w1: f64, mu: [f64; 2], sigma: [f64; 2], n: usize| ScenarioConfig {
        name: name.into(),
        true_params: GmmParams::new(w1, mu.to_vec(), sigma.to_vec())
            .expect("builtin truth params are valid"),
        n_samples: n,
        theta0: standard_start(),
        tol: 1e-8,
        max_iter: 2000,
        n_trials: 10,
        base_seed: 0,
    };
    vec![
        scenario("Extreme", 0.1, [0.0, 0.05], [1.0, 1.0], 300),
        scenario("ModerateOverlap", 0.5, [0.0, 1.0], [1.0, 1.0], 500),
        scenario("UnequalVar", 0.5, [0.0, 3.0], [1.0, 3.0], 500),
        scenario("Imbalanced", 0.05, [0.0, 1.5], [1.0, 1.0], 500),
    ]
}

/// Outcome of one (scenario, method, trial) run. On failure the diagnostic fields
/// are zeroed and `error` carries the message; error rows appear in JSON but the
/// CSV keeps only the 10 documented columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRow {
    pub scenario: String,
    pub method: String,
    pub trial_index: usize,
    pub seed: u64,
    pub iterations: usize,
    pub wall_time_seconds: f64,
    pub final_loglik: f64,
    pub converged: bool,
    pub fallback_count: usize,
    pub mean_gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-(scenario, method) summary over the non-error trials. `speedup_vs_em` is
/// iteration-based (mean EM iterations over mean method iterations) and `None`
/// when EM itself has no usable rows for the scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub method: String,
    pub n_trials: usize,
    pub n_failed: usize,
    pub mean_iterations: f64,
    pub std_iterations: f64,
    pub mean_time_seconds: f64,
    pub std_time_seconds: f64,
    pub speedup_vs_em: Option<f64>,
    pub mean_final_loglik: f64,
}

/// Geometric-mean iteration speedup of one method across the scenarios where a
/// speedup was defined.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSpeedup {
    pub method: String,
    pub geometric_mean_speedup: f64,
    pub scenarios_counted: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<TrialRow>,
    pub aggregates: Vec<AggregateRow>,
    pub speedup_summary: Vec<MethodSpeedup>,
}

impl BenchmarkReport {
    fn stripped(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(rows) = v.get_mut("rows").and_then(|r| r.as_array_mut()) {
            for row in rows {
                row["wall_time_seconds"] = 0.0.into();
            }
        }
        if let Some(aggs) = v.get_mut("aggregates").and_then(|a| a.as_array_mut()) {
            for agg in aggs {
                agg["mean_time_seconds"] = 0.0.into();
                agg["std_time_seconds"] = 0.0.into();
            }
        }
        v
    }

    /// Equality up to wall-clock times, which vary run to run by nature.
    pub fn content_eq(&self, other: &BenchmarkReport) -> bool {
        self.stripped() == other.stripped()
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Recompute the aggregate block from raw rows. `run_benchmark` uses exactly this,
/// so emitted aggregates are reproducible from emitted rows.
pub fn compute_aggregates(rows: &[TrialRow]) -> (Vec<AggregateRow>, Vec<MethodSpeedup>) {
    let mut keys: Vec<(String, String)> = rows
        .iter()
        .map(|r| (r.scenario.clone(), r.method.clone()))
        .collect();
    keys.sort();
    keys.dedup();

    let group = |scenario: &str, method: &str| -> Vec<&TrialRow> {
        rows.iter()
            .filter(|r| r.scenario == scenario && r.method == method && r.error.is_none())
            .collect()
    };

    let mut aggregates = Vec::new();
    for (scenario, method) in &keys {
        let ok = group(scenario, method);
        let failed = rows
            .iter()
            .filter(|r| r.scenario == *scenario && r.method == *method && r.error.is_some())
            .count();
        let iters: Vec<f64> = ok.iter().map(|r| r.iterations as f64).collect();
        let times: Vec<f64> = ok.iter().map(|r| r.wall_time_seconds).collect();
        let lls: Vec<f64> = ok.iter().map(|r| r.final_loglik).collect();
        let em_mean = {
            let em_rows = group(scenario, "EM");
            let em_iters: Vec<f64> = em_rows.iter().map(|r| r.iterations as f64).collect();
            if em_iters.is_empty() {
                None
            } else {
                Some(mean(&em_iters))
            }
        };
        let mean_iterations = mean(&iters);
        let speedup_vs_em = match em_mean {
            Some(em) if mean_iterations > 0.0 && em > 0.0 => Some(em / mean_iterations),
            _ => None,
        };
        aggregates.push(AggregateRow {
            scenario: scenario.clone(),
            method: method.clone(),
            n_trials: ok.len(),
            n_failed: failed,
            mean_iterations,
            std_iterations: sample_std(&iters),
            mean_time_seconds: mean(&times),
            std_time_seconds: sample_std(&times),
            speedup_vs_em,
            mean_final_loglik: mean(&lls),
        });
    }

    let mut methods: Vec<String> = keys.iter().map(|(_, m)| m.clone()).collect();
    methods.sort();
    methods.dedup();
    let speedup_summary = methods
        .into_iter()
        .map(|method| {
            let logs: Vec<f64> = aggregates
                .iter()
                .filter(|a| a.method == method)
                .filter_map(|a| a.speedup_vs_em)
                .filter(|s| *s > 0.0)
                .map(|s| s.ln())
                .collect();
            MethodSpeedup {
                method,
                geometric_mean_speedup: mean(&logs).exp(),
                scenarios_counted: logs.len(),
            }
        })
        .collect();

    (aggregates, speedup_summary)
}

fn run_one_trial(
    scenario: &ScenarioConfig,
    problem: &GmmProblem,
    cfg: &MethodConfig,
    trial: usize,
) -> TrialRow {
    let seed = trial_seed(scenario, trial);
    let label = cfg.method.name().to_string();
    let start = Instant::now();
    let outcome = run_method(problem, &scenario.theta0, &scenario.stop_rule(), cfg);
    let wall = start.elapsed().as_secs_f64();
    match outcome {
        Ok(run) => TrialRow {
            scenario: scenario.name.clone(),
            method: label,
            trial_index: trial,
            seed,
            iterations: run.iterations_used,
            wall_time_seconds: wall,
            final_loglik: run.final_loglik(),
            converged: run.converged,
            fallback_count: run.fallback_count(),
            mean_gamma: run.mean_gamma(),
            error: None,
        },
        Err(e) => TrialRow {
            scenario: scenario.name.clone(),
            method: label,
            trial_index: trial,
            seed,
            iterations: 0,
            wall_time_seconds: wall,
            final_loglik: 0.0,
            converged: false,
            fallback_count: 0,
            mean_gamma: None,
            error: Some(e.to_string()),
        },
    }
}

/// Run every (scenario, method, trial) combination. Datasets are generated up
/// front so each trial index shares one dataset across methods; a failed trial
/// becomes an error row rather than aborting the sweep.
pub fn run_benchmark(
    scenarios: &[ScenarioConfig],
    methods: &[MethodConfig],
    parallel: bool,
) -> Result<BenchmarkReport> {
    if scenarios.is_empty() || methods.is_empty() {
        return Err(Error::Config(
            "benchmark needs at least one scenario and one method".into(),
        ));
    }
    let mut names: Vec<&str> = scenarios.iter().map(|s| s.name.as_str()).collect();
    names.sort();
    names.dedup();
    if names.len() != scenarios.len() {
        return Err(Error::Config("scenario names must be unique".into()));
    }
    let mut labels: Vec<&str> = methods.iter().map(|m| m.method.name()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() != methods.len() {
        return Err(Error::Config("methods must be distinct".into()));
    }
    for s in scenarios {
        s.validate()?;
    }
    for m in methods {
        m.validate()?;
    }

    let problems: Vec<Vec<GmmProblem>> = scenarios
        .iter()
        .map(|s| (0..s.n_trials).map(|t| trial_problem(s, t)).collect())
        .collect();

    let mut tasks = Vec::new();
    for (si, s) in scenarios.iter().enumerate() {
        for mi in 0..methods.len() {
            for trial in 0..s.n_trials {
                tasks.push((si, mi, trial));
            }
        }
    }

    let run_task = |&(si, mi, trial): &(usize, usize, usize)| {
        run_one_trial(&scenarios[si], &problems[si][trial], &methods[mi], trial)
    };
    let mut rows: Vec<TrialRow> = if parallel {
        tasks.par_iter().map(run_task).collect()
    } else {
        tasks.iter().map(run_task).collect()
    };
    rows.sort_by(|a, b| {
        (a.scenario.as_str(), a.method.as_str(), a.trial_index).cmp(&(
            b.scenario.as_str(),
            b.method.as_str(),
            b.trial_index,
        ))
    });

    let (aggregates, speedup_summary) = compute_aggregates(&rows);
    Ok(BenchmarkReport {
        rows,
        aggregates,
        speedup_summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!(
                "unknown report format {other:?} (expected csv or json)"
            ))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

/// Documented trial-row header; the aggregate block below it is `#`-prefixed so
/// plain CSV readers see only trial rows.
pub const CSV_HEADER: &str =
    "scenario,method,trial,seed,iterations,time_s,final_ll,converged,fallbacks,mean_gamma";

fn option_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn report_to_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.scenario,
            r.method,
            r.trial_index,
            r.seed,
            r.iterations,
            r.wall_time_seconds,
            r.final_loglik,
            r.converged,
            r.fallback_count,
            option_cell(r.mean_gamma),
        ));
    }
    if !report.aggregates.is_empty() {
        out.push_str("\n# aggregates: scenario,method,trials,failed,mean_iterations,std_iterations,mean_time_s,std_time_s,speedup_vs_em,mean_final_ll\n");
        for a in &report.aggregates {
            out.push_str(&format!(
                "# {},{},{},{},{},{},{},{},{},{}\n",
                a.scenario,
                a.method,
                a.n_trials,
                a.n_failed,
                a.mean_iterations,
                a.std_iterations,
                a.mean_time_seconds,
                a.std_time_seconds,
                option_cell(a.speedup_vs_em),
                a.mean_final_loglik,
            ));
        }
        out.push_str("# speedup: method,geometric_mean_speedup,scenarios\n");
        for s in &report.speedup_summary {
            out.push_str(&format!(
                "# {},{},{}\n",
                s.method, s.geometric_mean_speedup, s.scenarios_counted
            ));
        }
    }
    out
}

fn write_with_context(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| Error::Config(format!("writing {}: {e}", path.display())))
}

pub fn emit_report(report: &BenchmarkReport, format: ReportFormat, path: &Path) -> Result<()> {
    let contents = match format {
        ReportFormat::Csv => report_to_csv(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            s
        }
    };
    write_with_context(path, &contents)
}

/// One row of the theoretical rate table: plain-EM factor `1 - lambda`, momentum
/// factor `1 - sqrt(lambda)`, their per-step ratio, and the iteration-count ratio
/// `ln(1-lambda)/ln(1-sqrt(lambda))` (iterations the accelerated method needs per
/// plain-EM iteration; small is good). At `lambda = 1` both factors vanish and
/// both ratios are reported as 1: the methods coincide there.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateCurveRow {
    pub lambda: f64,
    pub em_rate: f64,
    pub accel_rate: f64,
    pub per_step_ratio: f64,
    pub iteration_ratio: f64,
}

pub fn rate_curve_rows(lambda_grid: &[f64]) -> Result<Vec<RateCurveRow>> {
    lambda_grid
        .iter()
        .map(|&lambda| {
            if !(lambda > 0.0 && lambda <= 1.0) {
                return Err(Error::Config(format!(
                    "rate-curve grid values must lie in (0, 1], got {lambda}"
                )));
            }
            let em_rate = 1.0 - lambda;
            let accel_rate = 1.0 - lambda.sqrt();
            let (per_step_ratio, iteration_ratio) = if accel_rate == 0.0 {
                (1.0, 1.0)
            } else {
                (em_rate / accel_rate, em_rate.ln() / accel_rate.ln())
            };
            Ok(RateCurveRow {
                lambda,
                em_rate,
                accel_rate,
                per_step_ratio,
                iteration_ratio,
            })
        })
        .collect()
}

pub fn emit_rate_curve(lambda_grid: &[f64], path: &Path) -> Result<()> {
    let rows = rate_curve_rows(lambda_grid)?;
    let mut out = String::from("lambda,em_rate,accel_rate,per_step_ratio,iteration_ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.lambda, r.em_rate, r.accel_rate, r.per_step_ratio, r.iteration_ratio
        ));
    }
    write_with_context(path, &out)
}

/// Fixed-point spectral summary for one scenario trial: the high-precision
/// fixed-point proxy, the relaxation spectrum and derived rates, the agreement
/// residual between the map-derivative and information-ratio routes, and the
/// estimated radius of the guaranteed-contraction ball.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    pub scenario: String,
    pub trial_index: usize,
    pub seed: u64,
    pub theta_star: ParamVector,
    pub proxy_converged: bool,
    pub proxy_iterations: usize,
    pub eigenvalues: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub rho_em: f64,
    pub beta_star: f64,
    pub rho_accel: f64,
    pub triple_residual: f64,
    pub contraction_radius: f64,
}

/// Probe count and seed for the contraction-radius estimate; fixed so reports are
/// reproducible.
const RADIUS_SAMPLES: usize = 8;
const RADIUS_PROBE_SEED: u64 = 7;

pub fn spectral_report(scenario: &ScenarioConfig, trial: usize) -> Result<SpectralReport> {
    scenario.validate()?;
    if trial >= scenario.n_trials {
        return Err(Error::Config(format!(
            "trial {} out of range for scenario {} with {} trials",
            trial, scenario.name, scenario.n_trials
        )));
    }
    let problem = trial_problem(scenario, trial);
    let proxy = solve_fixed_point(&problem, &scenario.theta0)?;
    let theta_star = proxy.final_iterate().clone();
    let triple = fisher_triple(&problem, &theta_star)?;
    let dt = jacobian_fd(&problem, &theta_star, DT_FD_STEP)?;
    let analysis = relaxation_analysis(&dt, &triple)?;
    let triple_residual = triple_equivalence_residual(&dt, &triple)?;
    let contraction_radius = contraction_radius_estimate(
        &problem,
        &theta_star,
        &analysis,
        &triple.i_com,
        RADIUS_SAMPLES,
        RADIUS_PROBE_SEED,
    )?;
    Ok(SpectralReport {
        scenario: scenario.name.clone(),
        trial_index: trial,
        seed: trial_seed(scenario, trial),
        theta_star,
        proxy_converged: proxy.converged,
        proxy_iterations: proxy.iterations_used,
        eigenvalues: analysis.eigenvalues.clone(),
        lambda_min: analysis.lambda_min,
        lambda_max: analysis.lambda_max,
        rho_em: analysis.rho_em,
        beta_star: analysis.beta_star,
        rho_accel: analysis.rho_accel,
        triple_residual,
        contraction_radius,
    })
}
