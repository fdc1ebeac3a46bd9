//! Two-component univariate Gaussian mixture: the concrete EM problem.
//!
//! Parameters live in a flat 5-vector `[w1, mu1, sigma1, mu2, sigma2]` (the second
//! weight is implicit). The E-step works entirely in log space with max-subtraction,
//! so responsibilities stay exact even when one component is dozens of sigmas away.
//! The M-step uses the freshly updated mean inside the sigma update and floors
//! sigma at `SIGMA_FLOOR` instead of failing; a component whose posterior mass
//! vanishes entirely is an error, since its update would be 0/0.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em::{EmProblem, LatentProblem, ParamVector};
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::rng::Lehmer64;

const LN_2PI: f64 = 1.8378770664093453;

/// Smallest admissible component scale; M-step results below this are clamped.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// A component whose total responsibility falls below this has effectively lost all
/// its data; the M-step refuses to divide by it.
pub const COLLAPSE_THRESHOLD: f64 = 1e-12;

/// Mixture parameters. `w1` is the first component's weight; the second is `1 - w1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub w1: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GmmParams {
    pub fn new(w1: f64, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let p = GmmParams { w1, mu, sigma };
        p.check()?;
        Ok(p)
    }

    pub fn n_components(&self) -> usize {
        self.mu.len()
    }

    /// Flat dimension: K-1 free weights plus a mean and scale per component.
    pub fn dim(&self) -> usize {
        3 * self.n_components() - 1
    }

    pub fn weight(&self, k: usize) -> f64 {
        match k {
            0 => self.w1,
            1 => 1.0 - self.w1,
            _ => panic!("two-component mixture has no component {k}"),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.mu.len() != 2 || self.sigma.len() != 2 {
            return Err(Error::Dimension(format!(
                "expected 2 components, got {} means / {} sigmas",
                self.mu.len(),
                self.sigma.len()
            )));
        }
        if !(self.w1 > 0.0 && self.w1 < 1.0) {
            return Err(Error::DegenerateParameter {
                index: 0,
                value: self.w1,
                reason: "weight must lie strictly inside (0, 1)".into(),
            });
        }
        for k in 0..2 {
            if !self.mu[k].is_finite() {
                return Err(Error::DegenerateParameter {
                    index: 1 + 2 * k,
                    value: self.mu[k],
                    reason: "mean must be finite".into(),
                });
            }
            if !(self.sigma[k] > 0.0) || !self.sigma[k].is_finite() {
                return Err(Error::DegenerateParameter {
                    index: 2 + 2 * k,
                    value: self.sigma[k],
                    reason: "sigma must be positive and finite".into(),
                });
            }
        }
        Ok(())
    }

    /// Layout `[w1, mu1, sigma1, mu2, sigma2]`.
    pub fn to_vector(&self) -> ParamVector {
        ParamVector(vec![
            self.w1,
            self.mu[0],
            self.sigma[0],
            self.mu[1],
            self.sigma[1],
        ])
    }

    pub fn from_vector(theta: &ParamVector) -> Result<Self> {
        if theta.len() != 5 {
            return Err(Error::Dimension(format!(
                "expected 5 coordinates, got {}",
                theta.len()
            )));
        }
        GmmParams::new(theta[0], vec![theta[1], theta[3]], vec![theta[2], theta[4]])
    }
}

/// Observed sample. `seed` records how the data was generated (0 for external data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub seed: u64,
}

impl Dataset {
    pub fn from_values(x: Vec<f64>) -> Self {
        Dataset { x, seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Text format: one observation per line, `f64` parsed with Rust's standard
    /// grammar. Blank lines are ignored.
    pub fn read_text(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut x = Vec::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let v: f64 = trimmed.parse().map_err(|e| {
                Error::Config(format!(
                    "line {}: bad observation {trimmed:?}: {e}",
                    lineno + 1
                ))
            })?;
            x.push(v);
        }
        Ok(Dataset { x, seed: 0 })
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for v in &self.x {
            writeln!(out, "{v}")?;
        }
        Ok(())
    }
}

/// Draw `n` observations from the mixture.
///
/// Per observation the dataset stream is consumed in a fixed order: one uniform
/// selects the component (`u < w1` picks component 1), then the Box–Muller normal
/// consumes exactly one uniform pair. Generation tolerates boundary weights (`w1`
/// of 0 or 1) and zero sigmas, which are useful for degenerate test fixtures even
/// though inference rejects them.
pub fn generate_dataset(truth: &GmmParams, n: usize, seed: u64) -> Dataset {
    let mut rng = Lehmer64::new(seed);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.next_f64();
        let k = if u < truth.w1 { 0 } else { 1 };
        x.push(truth.mu[k] + truth.sigma[k] * rng.next_normal());
    }
    Dataset { x, seed }
}

/// Posterior class probabilities, kept in both linear and log form.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    n: usize,
    k: usize,
    r: Vec<f64>,
    log_r: Vec<f64>,
}

impl Responsibilities {
    pub fn n_units(&self) -> usize {
        self.n
    }

    pub fn n_components(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.r[i * self.k + k]
    }

    pub fn log_get(&self, i: usize, k: usize) -> f64 {
        self.log_r[i * self.k + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.r[i * self.k..(i + 1) * self.k]
    }
}

fn log_normal(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * LN_2PI - sigma.ln() - 0.5 * z * z
}

/// Log joint density of (x, z=k) and the log marginal of x, in one pass.
fn log_components(params: &GmmParams, x: f64) -> ([f64; 2], f64) {
    let l = [
        params.w1.ln() + log_normal(x, params.mu[0], params.sigma[0]),
        (1.0 - params.w1).ln() + log_normal(x, params.mu[1], params.sigma[1]),
    ];
    let m = l[0].max(l[1]);
    let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
    (l, lse)
}

/// Posterior responsibilities at `params`. Rows sum to one exactly up to roundoff;
/// the log-space path keeps ratios exact under extreme separation.
pub fn e_step(params: &GmmParams, data: &Dataset) -> Result<Responsibilities> {
    params.check()?;
    let n = data.len();
    let mut r = vec![0.0; n * 2];
    let mut log_r = vec![0.0; n * 2];
    for (i, &x) in data.x.iter().enumerate() {
        let (l, lse) = log_components(params, x);
        for k in 0..2 {
            log_r[i * 2 + k] = l[k] - lse;
            r[i * 2 + k] = (l[k] - lse).exp();
        }
    }
    Ok(Responsibilities { n, k: 2, r, log_r })
}

/// M-step result: updated parameters plus the components whose sigma hit the floor.
#[derive(Debug, Clone)]
pub struct MStepOutput {
    pub params: GmmParams,
    pub floored: Vec<usize>,
}

/// Weighted MLE update given responsibilities. The sigma update centers on the NEW
/// mean. Sigmas below `SIGMA_FLOOR` are clamped and reported; a component with less
/// than `COLLAPSE_THRESHOLD` total responsibility is an error.
pub fn m_step(resp: &Responsibilities, data: &Dataset) -> Result<MStepOutput> {
    let n = data.len();
    if n == 0 {
        return Err(Error::InsufficientData {
            what: "M-step needs at least one observation".into(),
            needed: 1,
            available: 0,
        });
    }
    if resp.n_units() != n {
        return Err(Error::Dimension(format!(
            "responsibilities cover {} units, dataset has {n}",
            resp.n_units()
        )));
    }

    let mut mu = [0.0; 2];
    let mut sigma = [0.0; 2];
    let mut counts = [0.0; 2];
    let mut floored = Vec::new();
    for k in 0..2 {
        let nk: f64 = (0..n).map(|i| resp.get(i, k)).sum();
        if nk < COLLAPSE_THRESHOLD {
            return Err(Error::ComponentCollapse {
                component: k,
                count: nk,
            });
        }
        counts[k] = nk;
        mu[k] = (0..n).map(|i| resp.get(i, k) * data.x[i]).sum::<f64>() / nk;
        let var = (0..n)
            .map(|i| {
                let d = data.x[i] - mu[k];
                resp.get(i, k) * d * d
            })
            .sum::<f64>()
            / nk;
        sigma[k] = var.sqrt();
        if sigma[k] < SIGMA_FLOOR {
            sigma[k] = SIGMA_FLOOR;
            floored.push(k);
        }
    }

    Ok(MStepOutput {
        params: GmmParams {
            w1: counts[0] / n as f64,
            mu: mu.to_vec(),
            sigma: sigma.to_vec(),
        },
        floored,
    })
}

/// Observed-data log-likelihood. Assumes `params.check()` passes.
pub fn log_likelihood(params: &GmmParams, data: &Dataset) -> f64 {
    data.x.iter().map(|&x| log_components(params, x).1).sum()
}

/// `log_likelihood(to) - log_likelihood(from)` without the catastrophic
/// cancellation of subtracting two full-magnitude log-likelihoods.
///
/// Per observation the ratio of marginal densities is
/// `f_to/f_from = sum_k resp_k * exp(delta_k)` with `delta_k` the change in the
/// log joint of component k. Each `delta_k` is assembled from parameter
/// displacements directly (`log1p` for the weight and scale factors, an expanded
/// quadratic for the exponent), so for nearby parameter pairs every term is
/// proportional to the displacement and the summed result carries absolute error
/// near roundoff of the difference itself. Far-apart pairs detour through the
/// plain per-point subtraction, which is accurate when nothing cancels.
pub fn log_likelihood_diff(to: &GmmParams, from: &GmmParams, data: &Dataset) -> f64 {
    let w_to = [to.w1, 1.0 - to.w1];
    let w_from = [from.w1, 1.0 - from.w1];
    let mut total = 0.0;
    for &x in &data.x {
        let (l_from, lse_from) = log_components(from, x);
        let mut sum = 0.0;
        let mut stable = true;
        for k in 0..2 {
            let (mu, sigma) = (from.mu[k], from.sigma[k]);
            let d_w = w_to[k] - w_from[k];
            let d_mu = to.mu[k] - mu;
            let d_sigma = to.sigma[k] - sigma;
            let e = x - mu;
            let s2 = sigma * sigma;
            let s2_to = to.sigma[k] * to.sigma[k];
            // (x-mu)^2/(2 s^2) - (x-mu')^2/(2 s'^2), expanded so every term is
            // proportional to a displacement.
            let quad = (e * e * (2.0 * sigma * d_sigma + d_sigma * d_sigma)
                + (2.0 * e * d_mu - d_mu * d_mu) * s2)
                / (2.0 * s2 * s2_to);
            let delta = (d_w / w_from[k]).ln_1p() - (d_sigma / sigma).ln_1p() + quad;
            if !(delta.abs() < 700.0) {
                stable = false;
                break;
            }
            sum += (l_from[k] - lse_from).exp() * delta.exp_m1();
        }
        if stable && sum > -1.0 {
            total += sum.ln_1p();
        } else {
            let (_, lse_to) = log_components(to, x);
            total += lse_to - lse_from;
        }
    }
    total
}

/// EM surrogate: expected complete-data log-likelihood of `new` under the posterior
/// at `old`.
pub fn q_function(new: &GmmParams, old: &GmmParams, data: &Dataset) -> Result<f64> {
    new.check()?;
    let resp = e_step(old, data)?;
    let mut q = 0.0;
    for (i, &x) in data.x.iter().enumerate() {
        let (l_new, _) = log_components(new, x);
        for k in 0..2 {
            let r = resp.get(i, k);
            if r > 0.0 {
                q += r * l_new[k];
            }
        }
    }
    Ok(q)
}

/// KL divergence between the posteriors at `a` and at `b`, summed over observations.
/// Returns `f64::INFINITY` when some class has posterior mass under `a` but exactly
/// zero under `b`.
pub fn posterior_kl(a: &GmmParams, b: &GmmParams, data: &Dataset) -> Result<f64> {
    let ra = e_step(a, data)?;
    let rb = e_step(b, data)?;
    let mut kl = 0.0;
    for i in 0..data.len() {
        for k in 0..2 {
            let p = ra.get(i, k);
            if p == 0.0 {
                continue;
            }
            let lb = rb.log_get(i, k);
            if lb == f64::NEG_INFINITY {
                return Ok(f64::INFINITY);
            }
            kl += p * (ra.log_get(i, k) - lb);
        }
    }
    Ok(kl)
}

/// Gradient of `log( w_k * phi(x; mu_k, sigma_k) )` in the flat parameter layout.
pub fn complete_data_score(params: &GmmParams, x: f64, k: usize) -> Vec<f64> {
    let mut s = vec![0.0; 5];
    s[0] = match k {
        0 => 1.0 / params.w1,
        _ => -1.0 / (1.0 - params.w1),
    };
    let (mu, sigma) = (params.mu[k], params.sigma[k]);
    let d = x - mu;
    s[1 + 2 * k] = d / (sigma * sigma);
    s[2 + 2 * k] = -1.0 / sigma + d * d / (sigma * sigma * sigma);
    s
}

/// Hessian of `log( w_k * phi(x; mu_k, sigma_k) )` in the flat parameter layout.
pub fn complete_data_hessian(params: &GmmParams, x: f64, k: usize) -> SquareMatrix {
    let mut h = SquareMatrix::zeros(5);
    h[(0, 0)] = match k {
        0 => -1.0 / (params.w1 * params.w1),
        _ => -1.0 / ((1.0 - params.w1) * (1.0 - params.w1)),
    };
    let (mu, sigma) = (params.mu[k], params.sigma[k]);
    let d = x - mu;
    let s2 = sigma * sigma;
    let (im, is) = (1 + 2 * k, 2 + 2 * k);
    h[(im, im)] = -1.0 / s2;
    h[(is, is)] = 1.0 / s2 - 3.0 * d * d / (s2 * s2);
    h[(im, is)] = -2.0 * d / (s2 * sigma);
    h[(is, im)] = h[(im, is)];
    h
}

/// A dataset paired with the mixture model: the concrete `EmProblem`.
#[derive(Debug, Clone)]
pub struct GmmProblem {
    pub data: Dataset,
}

impl GmmProblem {
    pub fn new(data: Dataset) -> Self {
        GmmProblem { data }
    }
}

impl EmProblem for GmmProblem {
    fn dim(&self) -> usize {
        5
    }

    fn em_step(&self, theta: &ParamVector) -> Result<ParamVector> {
        let params = GmmParams::from_vector(theta)?;
        let resp = e_step(&params, &self.data)?;
        let out = m_step(&resp, &self.data)?;
        Ok(out.params.to_vector())
    }

    fn log_likelihood(&self, theta: &ParamVector) -> f64 {
        match GmmParams::from_vector(theta) {
            Ok(p) => log_likelihood(&p, &self.data),
            // Out-of-domain candidates rank below every valid point, which is
            // exactly what safeguard comparisons need.
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn log_likelihood_diff(&self, to: &ParamVector, from: &ParamVector) -> f64 {
        match (GmmParams::from_vector(to), GmmParams::from_vector(from)) {
            (Ok(t), Ok(f)) => log_likelihood_diff(&t, &f, &self.data),
            (to_p, _) => {
                let lt = to_p.map_or(f64::NEG_INFINITY, |p| log_likelihood(&p, &self.data));
                lt - self.log_likelihood(from)
            }
        }
    }

    fn check(&self, theta: &ParamVector) -> Result<()> {
        GmmParams::from_vector(theta).map(|_| ())
    }
}

impl LatentProblem for GmmProblem {
    fn n_units(&self) -> usize {
        self.data.len()
    }

    fn n_components(&self) -> usize {
        2
    }

    fn responsibilities(&self, theta: &ParamVector) -> Result<Responsibilities> {
        e_step(&GmmParams::from_vector(theta)?, &self.data)
    }

    fn q_function(&self, new: &ParamVector, old: &ParamVector) -> Result<f64> {
        q_function(
            &GmmParams::from_vector(new)?,
            &GmmParams::from_vector(old)?,
            &self.data,
        )
    }

    fn posterior_kl(&self, a: &ParamVector, b: &ParamVector) -> Result<f64> {
        posterior_kl(
            &GmmParams::from_vector(a)?,
            &GmmParams::from_vector(b)?,
            &self.data,
        )
    }

    fn complete_score(&self, theta: &ParamVector, unit: usize, comp: usize) -> Vec<f64> {
        let params = GmmParams::from_vector(theta).expect("caller checks theta");
        complete_data_score(&params, self.data.x[unit], comp)
    }

    fn complete_hessian(&self, theta: &ParamVector, unit: usize, comp: usize) -> SquareMatrix {
        let params = GmmParams::from_vector(theta).expect("caller checks theta");
        complete_data_hessian(&params, self.data.x[unit], comp)
    }
}
