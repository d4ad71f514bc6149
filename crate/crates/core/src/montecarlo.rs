//! Monte Carlo oracle for the law of total variance: draw the nuisance
//! parameters from a Gaussian prior, the response from the conditional
//! model, and estimate the total mean and variance to validate the analytic
//! formulas empirically.
//!
//! The posterior of the nuisance parameters is taken to equal the prior; the
//! simulator hard-codes that premise.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::conservative_prior;
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::model::{sample_completion, Completion, Scenario};
use crate::tol::DEFAULT_REL_TOL;

/// Samples per RNG substream. Chunk `c` always owns the same sample indices
/// and the same ChaCha stream, so results are bit-identical for any worker
/// count.
const CHUNK: u64 = 16_384;

/// Offset separating simulation substreams from completion-sampler streams
/// under a shared seed.
const STREAM_BASE: u64 = 1 << 48;

/// Sample mean and variance of the simulated response, with standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    /// Standard error of the variance via the sample fourth central moment.
    pub se_variance: f64,
    pub n_samples: u64,
    pub seed: u64,
}

/// Streaming central-moment accumulator (through the fourth moment) with an
/// order-preserving merge.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    fn update(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let nc = na + nb;
        let delta = other.mean - self.mean;
        let d2 = delta * delta;
        let mean = self.mean + delta * nb / nc;
        let m2 = self.m2 + other.m2 + d2 * na * nb / nc;
        let m3 = self.m3
            + other.m3
            + delta * d2 * na * nb * (na - nb) / (nc * nc)
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / nc;
        let m4 = self.m4
            + other.m4
            + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (nc * nc * nc)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (nc * nc)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / nc;
        self.n += other.n;
        self.mean = mean;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
    }

    fn result(&self, seed: u64) -> SimResult {
        let n = self.n as f64;
        let variance = self.m2 / (n - 1.0);
        let m4 = self.m4 / n;
        let var_of_variance = ((m4 - variance * variance * (n - 3.0) / (n - 1.0)) / n).max(0.0);
        SimResult {
            mean: self.mean,
            variance,
            se_mean: (variance / n).max(0.0).sqrt(),
            se_variance: var_of_variance.sqrt(),
            n_samples: self.n,
            seed,
        }
    }
}

/// PSD square-root factor `F` with `F F^T = sigma`, tolerant of boundary
/// (rank-deficient) covariances.
fn psd_factor(sigma: &SymMatrix) -> Result<DMatrix<f64>> {
    if !sigma.is_finite() {
        return Err(Error::InvalidMatrix {
            what: "simulation covariance".into(),
        });
    }
    let eig = nalgebra::SymmetricEigen::new(sigma.as_matrix().clone());
    let max_eig = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let band = DEFAULT_REL_TOL * max_eig.max(1.0);
    let mut scaled = eig.eigenvectors;
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -band {
            return Err(Error::InvalidCompletion(format!(
                "covariance has eigenvalue {lambda:e}"
            )));
        }
        let root = lambda.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(root);
    }
    Ok(scaled)
}

fn quad_form(m: &SymMatrix, v: &DVector<f64>) -> f64 {
    let mat = m.as_matrix();
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += mat[(i, j)] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

/// Simulate the scenario under the completion's joint covariance.
pub fn simulate(
    scenario: &Scenario,
    completion: &Completion,
    n_samples: u64,
    seed: u64,
) -> Result<SimResult> {
    simulate_with_cov(scenario, completion.joint(), n_samples, seed)
}

/// Simulate with an explicit prior covariance (used for inflated priors,
/// which are not completions of the original blocks).
pub fn simulate_with_cov(
    scenario: &Scenario,
    cov: &SymMatrix,
    n_samples: u64,
    seed: u64,
) -> Result<SimResult> {
    let n_params = scenario.n_params();
    if cov.dim() != n_params {
        return Err(Error::ShapeError {
            what: "simulation covariance".into(),
            expected: format!("{n_params}"),
            got: format!("{}", cov.dim()),
        });
    }
    if n_samples < 2 {
        return Err(Error::InvalidScenario(
            "n_samples must be at least 2".into(),
        ));
    }
    let factor = psd_factor(cov)?;
    let n_chunks = n_samples.div_ceil(CHUNK);

    let chunks: Vec<Result<Moments>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_samples);
            run_chunk(scenario, &factor, seed, c, hi - lo)
        })
        .collect();

    let mut total = Moments::default();
    for chunk in chunks {
        total.merge(&chunk?);
    }
    Ok(total.result(seed))
}

fn run_chunk(
    scenario: &Scenario,
    factor: &DMatrix<f64>,
    seed: u64,
    chunk_index: u64,
    count: u64,
) -> Result<Moments> {
    let n = scenario.n_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_BASE + chunk_index);

    let gradient = scenario.gradient();
    let theta0 = scenario.theta0();
    let sigma2_base = scenario.intrinsic_variance();
    let mut z = DVector::zeros(n);
    let mut offset = DVector::zeros(n);
    let mut acc = Moments::default();

    for _ in 0..count {
        for i in 0..n {
            z[i] = rng.sample::<f64, _>(StandardNormal);
        }
        let noise: f64 = rng.sample(StandardNormal);
        // offset = phi - phi0 = F z
        offset.gemv(1.0, factor, &z, 0.0);

        let mut cond_mean = theta0 + gradient.dot(&offset);
        if let Some(a_mat) = scenario.quad_mean() {
            cond_mean += quad_form(a_mat, &offset);
        }
        let mut cond_var = sigma2_base;
        if let Some(c_mat) = scenario.quad_var() {
            cond_var += quad_form(c_mat, &offset);
        }
        if cond_var < 0.0 {
            let phi = scenario.phi0() + &offset;
            return Err(Error::NegativeConditionalVariance {
                phi: phi.iter().copied().collect(),
                variance: cond_var,
            });
        }
        acc.update(cond_mean + cond_var.sqrt() * noise);
    }
    Ok(acc)
}

/// Closed-form total variance of the response under covariance `cov`:
/// intrinsic + quadratic intrinsic + linear extrinsic + quadratic
/// extrinsic (the last assuming a Gaussian prior).
pub fn analytic_total_variance_for(scenario: &Scenario, cov: &SymMatrix) -> Result<f64> {
    let n = scenario.n_params();
    if cov.dim() != n {
        return Err(Error::ShapeError {
            what: "covariance".into(),
            expected: format!("{n}"),
            got: format!("{}", cov.dim()),
        });
    }
    let mut total = scenario.intrinsic_variance();
    if let Some(c_mat) = scenario.quad_var() {
        total += c_mat.trace_product(cov)?;
    }
    total += cov.quadratic_form(scenario.gradient())?;
    if let Some(a_mat) = scenario.quad_mean() {
        let prod = a_mat.as_matrix() * cov.as_matrix();
        let mut tr = 0.0;
        for i in 0..n {
            for j in 0..n {
                tr += prod[(i, j)] * prod[(j, i)];
            }
        }
        total += 2.0 * tr;
    }
    Ok(total)
}

/// [`analytic_total_variance_for`] evaluated on a completion.
pub fn analytic_total_variance(scenario: &Scenario, completion: &Completion) -> Result<f64> {
    analytic_total_variance_for(scenario, completion.joint())
}

/// Closed-form total mean of the response under covariance `cov`.
pub fn analytic_mean_for(scenario: &Scenario, cov: &SymMatrix) -> Result<f64> {
    let mut mean = scenario.theta0();
    if let Some(a_mat) = scenario.quad_mean() {
        mean += a_mat.trace_product(cov)?;
    }
    Ok(mean)
}

/// [`analytic_mean_for`] evaluated on a completion.
pub fn analytic_mean(scenario: &Scenario, completion: &Completion) -> Result<f64> {
    analytic_mean_for(scenario, completion.joint())
}

/// Outcome of sweeping sampled completions against the inflated prior.
#[derive(Debug, Clone, Serialize)]
pub struct ConservativeCheck {
    pub n_completions: usize,
    /// Total variance under the inflated uncorrelated prior.
    pub inflated_total: f64,
    /// Smallest `inflated_total - completion_total` observed.
    pub min_margin: f64,
    /// Indices of completions whose total variance exceeded the inflated
    /// one beyond slack. Expected only for unsafe quadratic scenarios.
    pub violations: Vec<usize>,
    /// Simulation of the inflated prior, when samples were requested.
    pub inflated_sim: Option<SimResult>,
    /// Simulation of the minimum-margin completion, when samples were
    /// requested.
    pub worst_sim: Option<SimResult>,
}

/// Check that the inflated prior's analytic total variance dominates the
/// analytic total variance of sampled completions. With `n_samples > 0` the
/// extremes are additionally simulated for empirical context.
pub fn verify_conservative(
    scenario: &Scenario,
    n_completions: usize,
    n_samples: u64,
    seed: u64,
) -> Result<ConservativeCheck> {
    if n_completions == 0 {
        return Err(Error::InvalidScenario(
            "n_completions must be at least 1".into(),
        ));
    }
    let inflated = conservative_prior(scenario.blocks())?;
    let inflated_total = analytic_total_variance_for(scenario, &inflated)?;

    let totals: Vec<Result<f64>> = (0..n_completions)
        .into_par_iter()
        .map(|k| {
            let completion = sample_completion(scenario.blocks(), seed, k as u64)?;
            analytic_total_variance(scenario, &completion)
        })
        .collect();

    let mut min_margin = f64::INFINITY;
    let mut worst = 0usize;
    let mut violations = Vec::new();
    for (k, total) in totals.into_iter().enumerate() {
        let total = total?;
        let margin = inflated_total - total;
        if margin < min_margin {
            min_margin = margin;
            worst = k;
        }
        if margin < -1e-9 * inflated_total.abs().max(total.abs()) {
            violations.push(k);
        }
    }

    let (inflated_sim, worst_sim) = if n_samples > 0 {
        let completion = sample_completion(scenario.blocks(), seed, worst as u64)?;
        (
            Some(simulate_with_cov(scenario, &inflated, n_samples, seed)?),
            Some(simulate(scenario, &completion, n_samples, seed)?),
        )
    } else {
        (None, None)
    };

    Ok(ConservativeCheck {
        n_completions,
        inflated_total,
        min_margin,
        violations,
        inflated_sim,
        worst_sim,
    })
}
