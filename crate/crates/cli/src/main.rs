//! Command-line front end: seeded mixture benchmarks, single diagnosed runs,
//! fixed-point spectral reports, per-step energy traces, and the theoretical
//! rate-curve table. All numeric behavior lives in the library; this binary only
//! resolves configuration (built-in catalog, optional JSON config file, flag
//! overrides) and formats output.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use relaxem::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "relaxem",
    version,
    about = "Spectral analysis and accelerated fitting of EM on Gaussian mixtures"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full benchmark grid (scenarios x methods x trials) and emit a report
    Bench(BenchArgs),
    /// Run one method on one scenario and emit per-step diagnostics
    Run(RunArgs),
    /// Analyze one scenario trial at its fixed point: spectrum, rates, radii
    Spectral(SpectralArgs),
    /// Trace the exact per-step energy split of a plain EM run
    Energy(EnergyArgs),
    /// Tabulate theoretical plain-vs-accelerated rates over an eigenvalue grid
    Curve(CurveArgs),
}

/// Scenario selection and overrides, shared by data-driven subcommands.
#[derive(Args)]
struct ScenarioOpts {
    /// Scenario name (built-ins: Extreme, ModerateOverlap, UnequalVar, Imbalanced)
    #[arg(long)]
    scenario: Option<String>,
    /// Override the scenario's base seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of trials
    #[arg(long)]
    trials: Option<usize>,
    /// Override the stopping tolerance on the parameter step
    #[arg(long)]
    tol: Option<f64>,
    /// Override the iteration cap
    #[arg(long)]
    max_iter: Option<usize>,
    /// JSON config file with "scenarios" and "methods" lists mirroring the
    /// ScenarioConfig and MethodConfig field names
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Method selection and gain overrides.
#[derive(Args)]
struct MethodOpts {
    /// Method name (EM, G_ACCEL, DCC_FIXED, GEO_ADAPTIVE); repeatable
    #[arg(long = "method")]
    methods: Vec<String>,
    /// Override the fixed correction gain (DCC_FIXED)
    #[arg(long)]
    gamma: Option<f64>,
    /// Override the eigenvalue-estimate floor
    #[arg(long)]
    lambda_floor: Option<f64>,
    /// Override the adaptive gain cap
    #[arg(long)]
    gamma_max: Option<f64>,
}

/// Output format and destination.
#[derive(Args)]
struct OutputOpts {
    /// Output format: csv or json
    #[arg(long, default_value = "csv")]
    format: String,
    /// Output file (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scenario: ScenarioOpts,
    #[command(flatten)]
    method: MethodOpts,
    #[command(flatten)]
    output: OutputOpts,
    /// Run trials in parallel
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioOpts,
    #[command(flatten)]
    method: MethodOpts,
    #[command(flatten)]
    output: OutputOpts,
}

#[derive(Args)]
struct SpectralArgs {
    #[command(flatten)]
    scenario: ScenarioOpts,
    /// Trial index within the scenario
    #[arg(long, default_value_t = 0)]
    trial: usize,
    #[command(flatten)]
    output: OutputOpts,
}

#[derive(Args)]
struct EnergyArgs {
    #[command(flatten)]
    scenario: ScenarioOpts,
    #[command(flatten)]
    output: OutputOpts,
}

#[derive(Args)]
struct CurveArgs {
    /// Comma-separated eigenvalue grid in (0, 1]; default: 61 log-spaced points
    /// from 0.001 to 1
    #[arg(long)]
    grid: Option<String>,
    #[command(flatten)]
    output: OutputOpts,
}

/// Optional JSON config document; both sections default to the built-ins.
#[derive(Deserialize, Default)]
struct FileConfig {
    #[serde(default)]
    scenarios: Option<Vec<ScenarioConfig>>,
    #[serde(default)]
    methods: Option<Vec<MethodConfig>>,
}

fn load_config(opts: &ScenarioOpts) -> Result<FileConfig> {
    let Some(path) = &opts.config else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Scenario list after config and flag overrides; `--scenario` narrows to one.
fn resolve_scenarios(opts: &ScenarioOpts, file: &FileConfig) -> Result<Vec<ScenarioConfig>> {
    let mut scenarios = file.scenarios.clone().unwrap_or_else(builtin_scenarios);
    if let Some(name) = &opts.scenario {
        let known: Vec<String> = scenarios.iter().map(|s| s.name.clone()).collect();
        scenarios.retain(|s| s.name.eq_ignore_ascii_case(name));
        if scenarios.is_empty() {
            bail!("unknown scenario {name:?}; known scenarios: {known:?}");
        }
    }
    for sc in &mut scenarios {
        if let Some(seed) = opts.seed {
            sc.base_seed = seed;
        }
        if let Some(trials) = opts.trials {
            sc.n_trials = trials;
        }
        if let Some(tol) = opts.tol {
            sc.tol = tol;
        }
        if let Some(max_iter) = opts.max_iter {
            sc.max_iter = max_iter;
        }
        sc.validate()?;
    }
    Ok(scenarios)
}

/// Method list after config and flag overrides; `--method` narrows or adds.
fn resolve_methods(opts: &MethodOpts, file: &FileConfig) -> Result<Vec<MethodConfig>> {
    let base = file
        .methods
        .clone()
        .unwrap_or_else(|| Method::ALL.iter().map(|&m| MethodConfig::new(m)).collect());
    let mut methods = if opts.methods.is_empty() {
        base
    } else {
        let mut picked = Vec::new();
        for name in &opts.methods {
            let method: Method = name.parse().map_err(|e| anyhow!("{e}"))?;
            let cfg = base
                .iter()
                .find(|c| c.method == method)
                .cloned()
                .unwrap_or_else(|| MethodConfig::new(method));
            picked.push(cfg);
        }
        picked
    };
    for cfg in &mut methods {
        if let Some(g) = opts.gamma {
            cfg.gamma_fixed = g;
        }
        if let Some(f) = opts.lambda_floor {
            cfg.lambda_floor = f;
        }
        if let Some(g) = opts.gamma_max {
            cfg.gamma_max = g;
        }
        cfg.validate()?;
    }
    Ok(methods)
}

/// Exactly one scenario and one method, for the single-run subcommands.
fn resolve_one(
    sopts: &ScenarioOpts,
    mopts: &MethodOpts,
    file: &FileConfig,
) -> Result<(ScenarioConfig, MethodConfig)> {
    let mut scenarios = resolve_scenarios(sopts, file)?;
    if sopts.scenario.is_none() && scenarios.len() > 1 {
        scenarios.truncate(1);
    }
    let scenario = scenarios.remove(0);
    if mopts.methods.len() > 1 {
        bail!("this subcommand takes a single --method");
    }
    let mut methods = resolve_methods(mopts, file)?;
    let method = if mopts.methods.is_empty() {
        methods
            .iter()
            .find(|c| c.method == Method::Em)
            .cloned()
            .unwrap_or_else(|| methods.remove(0))
    } else {
        methods.remove(0)
    };
    Ok((scenario, method))
}

fn parse_format(output: &OutputOpts) -> Result<ReportFormat> {
    output
        .format
        .parse::<ReportFormat>()
        .map_err(|e| anyhow!("{e}"))
}

fn emit_text(text: &str, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let file = load_config(&args.scenario)?;
    let scenarios = resolve_scenarios(&args.scenario, &file)?;
    let methods = resolve_methods(&args.method, &file)?;
    let report = run_benchmark(&scenarios, &methods, args.parallel)?;
    let format = parse_format(&args.output)?;
    let text = match format {
        ReportFormat::Csv => report_to_csv(&report),
        ReportFormat::Json => to_json_pretty(&report)?,
    };
    emit_text(&text, &args.output.out)
}

/// Per-step diagnostics of one run, serialized as emitted.
#[derive(Serialize)]
struct StepRow {
    step: usize,
    loglik: f64,
    step_norm: f64,
    lambda_hat: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    fallback: bool,
}

#[derive(Serialize)]
struct RunReport {
    scenario: String,
    method: String,
    seed: u64,
    iterations: usize,
    converged: bool,
    initial_loglik: f64,
    final_loglik: f64,
    fallback_count: usize,
    steps: Vec<StepRow>,
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let file = load_config(&args.scenario)?;
    let (scenario, method) = resolve_one(&args.scenario, &args.method, &file)?;
    let problem = trial_problem(&scenario, 0);
    let run = run_method(&problem, &scenario.theta0, &scenario.stop_rule(), &method)?;
    let extras = run
        .per_step_extras
        .as_ref()
        .expect("driver records per-step diagnostics");
    let steps: Vec<StepRow> = extras
        .iter()
        .enumerate()
        .map(|(k, e)| StepRow {
            step: k + 1,
            loglik: run.loglik[k + 1],
            step_norm: run.step_norms[k],
            lambda_hat: e.lambda_hat,
            beta: e.beta,
            gamma: e.gamma,
            fallback: e.fallback,
        })
        .collect();
    let report = RunReport {
        scenario: scenario.name.clone(),
        method: method.method.name().to_string(),
        seed: trial_seed(&scenario, 0),
        iterations: run.iterations_used,
        converged: run.converged,
        initial_loglik: run.loglik[0],
        final_loglik: *run.loglik.last().expect("nonempty"),
        fallback_count: steps.iter().filter(|s| s.fallback).count(),
        steps,
    };
    let text = match parse_format(&args.output)? {
        ReportFormat::Json => to_json_pretty(&report)?,
        ReportFormat::Csv => {
            let mut text = format!(
                "# scenario {} method {} seed {} iterations {} converged {} final_ll {}\n",
                report.scenario,
                report.method,
                report.seed,
                report.iterations,
                report.converged,
                report.final_loglik
            );
            text.push_str("step,loglik,step_norm,lambda_hat,beta,gamma,fallback\n");
            for s in &report.steps {
                let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                text.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    s.step,
                    s.loglik,
                    s.step_norm,
                    cell(s.lambda_hat),
                    cell(s.beta),
                    cell(s.gamma),
                    s.fallback
                ));
            }
            text
        }
    };
    emit_text(&text, &args.output.out)
}

fn cmd_spectral(args: &SpectralArgs) -> Result<()> {
    let file = load_config(&args.scenario)?;
    let mut scenarios = resolve_scenarios(&args.scenario, &file)?;
    if args.scenario.scenario.is_none() && scenarios.len() > 1 {
        scenarios.truncate(1);
    }
    let report = spectral_report(&scenarios[0], args.trial)?;
    let text = match parse_format(&args.output)? {
        ReportFormat::Json => to_json_pretty(&report)?,
        ReportFormat::Csv => bail!("the spectral report is nested; use --format json"),
    };
    emit_text(&text, &args.output.out)
}

fn cmd_energy(args: &EnergyArgs) -> Result<()> {
    let file = load_config(&args.scenario)?;
    let mut scenarios = resolve_scenarios(&args.scenario, &file)?;
    if args.scenario.scenario.is_none() && scenarios.len() > 1 {
        scenarios.truncate(1);
    }
    let scenario = &scenarios[0];
    let problem = trial_problem(scenario, 0);
    let run = run_em(&problem, &scenario.theta0, &scenario.stop_rule())?;
    let trace = energy_trace(&problem, &run)?;
    let text = match parse_format(&args.output)? {
        ReportFormat::Json => to_json_pretty(&trace)?,
        ReportFormat::Csv => {
            let mut text = String::from("step,ell_gain,delta_q,kl_transport,residual\n");
            for (k, row) in trace.iter().enumerate() {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    k + 1,
                    row.ell_gain,
                    row.delta_q,
                    row.kl_transport,
                    row.residual
                ));
            }
            text
        }
    };
    emit_text(&text, &args.output.out)
}

fn cmd_curve(args: &CurveArgs) -> Result<()> {
    let grid: Vec<f64> = match &args.grid {
        Some(list) => list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad grid value {t:?}"))
            })
            .collect::<Result<_>>()?,
        None => (0..=60)
            .map(|i| 10f64.powf(-3.0 + 0.05 * i as f64))
            .collect(),
    };
    let rows = rate_curve_rows(&grid)?;
    let text = match parse_format(&args.output)? {
        ReportFormat::Json => to_json_pretty(&rows)?,
        ReportFormat::Csv => {
            let mut text =
                String::from("lambda,em_rate,accel_rate,per_step_ratio,iteration_ratio\n");
            for r in &rows {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.lambda, r.em_rate, r.accel_rate, r.per_step_ratio, r.iteration_ratio
                ));
            }
            text
        }
    };
    emit_text(&text, &args.output.out)
}

fn main() -> Result<()> {
    match &Cli::parse().cmd {
        Cmd::Bench(args) => cmd_bench(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Spectral(args) => cmd_spectral(args),
        Cmd::Energy(args) => cmd_energy(args),
        Cmd::Curve(args) => cmd_curve(args),
    }
}
