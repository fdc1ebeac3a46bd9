//! Spectral analysis and acceleration of EM fixed-point iterations.
//!
//! The crate is organized around one object: the relaxation operator `G = I - DT`,
//! where `T` is the EM update map and `DT` its Jacobian at a fixed point. Its
//! spectrum (equivalently, the eigenvalues of `I_com^-1 I_obs`) controls
//! everything this library measures or exploits:
//!
//! - `em` — the fixed-point driver: problem traits, stopping rules, run records.
//! - `gmm` — the workhorse model: a two-component univariate Gaussian mixture with
//!   log-space E-step, closed-form M-step, and analytic complete-data derivatives.
//! - `spectral` — finite-difference Jacobians, Fisher information triples, the
//!   symmetrized eigensolve, power iteration, and the contraction-radius estimate.
//! - `accel` — plain EM plus three spectrum-driven variants (momentum with the
//!   optimal coefficient, fixed directional correction, geometry-adaptive gain),
//!   all behind a monotonicity safeguard.
//! - `diagnostics` — the exact per-step energy split, local quadratic prediction
//!   checks, tail-rate fits, and two-stage contraction profiles.
//! - `bench` — the seeded scenario catalog, multi-trial runner, and report
//!   emission.
//! - `synthetic` — exactly solvable linear fixed-point maps used as test oracles.

// Numeric kernels index several arrays in lockstep and iterate triangular ranges;
// indexed loops read better there than zipped iterator chains. Negated comparisons
// such as `!(x > 0.0)` are deliberate in validation code: unlike `x <= 0.0`, they
// also reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod accel;
pub mod bench;
pub mod diagnostics;
pub mod em;
pub mod error;
pub mod gmm;
pub mod linalg;
pub mod rng;
pub mod spectral;
pub mod synthetic;

pub use accel::{
    beta_to_lambda, run_method, GeoState, Method, MethodConfig, StepOutcome, SAFEGUARD_TOL,
};
pub use bench::{
    builtin_scenarios, compute_aggregates, emit_rate_curve, emit_report, rate_curve_rows,
    report_to_csv, run_benchmark, spectral_report, trial_problem, trial_seed, AggregateRow,
    BenchmarkReport, MethodSpeedup, RateCurveRow, ReportFormat, ScenarioConfig, SpectralReport,
    TrialRow, CSV_HEADER,
};
pub use diagnostics::{
    attach_energy, default_rate_window, energy_decompose, energy_trace, fit_rate,
    local_quadratic_check, log_log_slope, rigidity_profile, two_stage_profile, velocity_alignment,
    EnergyDecomposition, QuadraticCheckRow, RateFit, TwoStageProfile,
};
pub use em::{
    run_em, run_em_thin, solve_fixed_point, velocity, EmProblem, LatentProblem, ParamVector,
    RunResult, StepDiag, StopRule, FIXED_POINT_STOP,
};
pub use error::{Error, Result};
pub use gmm::{
    generate_dataset, Dataset, GmmParams, GmmProblem, MStepOutput, Responsibilities,
    COLLAPSE_THRESHOLD, SIGMA_FLOOR,
};
pub use linalg::{Cholesky, SquareMatrix};
pub use rng::{Lehmer64, SplitMix64};
pub use spectral::{
    contraction_radius_estimate, fisher_triple, jacobian_fd, louis_mis, observed_information_fd,
    optimal_momentum, power_lambda_min, relaxation_analysis, trajectory_lambda_hat,
    triple_equivalence_residual, FisherTriple, RelaxationAnalysis, SpectralEstimate, DT_FD_STEP,
    OBS_FD_STEP,
};
pub use synthetic::LinearProblem;
