//! Aggregated analysis: one call that runs the linear-order bounds, the
//! quadratic safety checks, and optionally the sampling and Monte Carlo
//! cross-checks, producing a serializable report.

use serde::Serialize;

use crate::bounds::{check_limit, conservative_prior, extrinsic_variance, worst_case};
use crate::error::Result;
use crate::linalg::SymMatrix;
use crate::model::{sample_completion, Scenario};
use crate::montecarlo::{
    analytic_mean, analytic_total_variance, analytic_total_variance_for, simulate,
    verify_conservative, SimResult,
};
use crate::quadratic::{
    intrinsic_safety, max_bias, quadratic_extrinsic_bound, BiasReport, SafetyReport,
};

/// What [`analyze`] should compute beyond the always-on bounds.
#[derive(Debug, Clone, Default)]
pub struct AnalysisOptions {
    /// Completions to sample for the limit/conservativeness sweep
    /// (0 disables the sweep).
    pub completions: usize,
    /// Monte Carlo samples (0 disables simulation).
    pub mc_samples: u64,
    /// Seed for both the completion sampler and the simulator.
    pub seed: u64,
}

/// Modeling premises behind the reported numbers.
#[derive(Debug, Clone, Serialize)]
pub struct Assumptions {
    /// The posterior covariance of the nuisance parameters is taken to equal
    /// the prior covariance.
    pub posterior_equals_prior: bool,
    /// The quadratic-mean variance formula assumes a multivariate normal
    /// prior; set when a quadratic mean is present.
    pub gaussian_quadratic_mean: bool,
}

/// Summary of the sampled-completion sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub n_completions: usize,
    /// Largest observed ratio of completion extrinsic variance to the
    /// uncorrelated baseline; never beyond the block count.
    pub max_ratio: f64,
    /// The proven cap on `max_ratio`: the number of blocks.
    pub ratio_limit: f64,
    /// Smallest observed margin of the inflated total variance over a
    /// completion's total variance.
    pub min_margin: f64,
    pub violations: usize,
}

/// Monte Carlo section of the report (uncorrelated prior).
#[derive(Debug, Clone, Serialize)]
pub struct McSection {
    pub simulated: SimResult,
    pub analytic_mean: f64,
    pub analytic_variance: f64,
}

/// Everything the analysis derives from one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub n_blocks: usize,
    pub n_params: usize,
    /// Worst-case extrinsic variance over the uncorrelated one.
    pub alpha: f64,
    pub degenerate_gradient: bool,
    pub uncorrelated_extrinsic: f64,
    pub worst_case_extrinsic: f64,
    /// Total variance under the inflated prior (intrinsic + quadratic
    /// intrinsic + extrinsic terms, as present).
    pub inflated_total_variance: f64,
    pub conservative_prior: SymMatrix,
    pub intrinsic_safety: Option<SafetyReport>,
    pub quadratic_extrinsic_bound: Option<f64>,
    pub bias_bound: Option<BiasReport>,
    pub assumptions: Assumptions,
    pub completion_sweep: Option<SweepSummary>,
    pub monte_carlo: Option<McSection>,
}

impl Report {
    /// The one-bit verdict: no unsafe quadratic flag and no sweep violation.
    pub fn is_safe(&self) -> bool {
        self.intrinsic_safety.as_ref().is_none_or(|s| s.safe)
            && self
                .completion_sweep
                .as_ref()
                .is_none_or(|s| s.violations == 0)
    }

    pub fn all_finite(&self) -> bool {
        let opt = |v: &Option<f64>| v.is_none_or(f64::is_finite);
        self.alpha.is_finite()
            && self.uncorrelated_extrinsic.is_finite()
            && self.worst_case_extrinsic.is_finite()
            && self.inflated_total_variance.is_finite()
            && self.conservative_prior.is_finite()
            && opt(&self.quadratic_extrinsic_bound)
            && self.intrinsic_safety.as_ref().is_none_or(|s| {
                s.lower.is_finite() && s.upper.is_finite() && s.inflated.is_finite()
            })
            && self.bias_bound.as_ref().is_none_or(|b| {
                b.bound.is_finite() && b.comparison_scale.is_none_or(f64::is_finite)
            })
            && self
                .completion_sweep
                .as_ref()
                .is_none_or(|s| s.max_ratio.is_finite() && s.min_margin.is_finite())
            && self.monte_carlo.as_ref().is_none_or(|m| {
                m.analytic_mean.is_finite()
                    && m.analytic_variance.is_finite()
                    && m.simulated.mean.is_finite()
                    && m.simulated.variance.is_finite()
            })
    }
}

/// Run the full analysis for a scenario.
pub fn analyze(scenario: &Scenario, options: &AnalysisOptions) -> Result<Report> {
    let blocks = scenario.blocks();
    let gradient = scenario.gradient();

    let wc = worst_case(gradient, blocks)?;
    let uncorrelated = scenario.uncorrelated_covariance();
    let uncorrelated_extrinsic = extrinsic_variance(gradient, &uncorrelated)?;
    let prior = conservative_prior(blocks)?;
    let inflated_total_variance = analytic_total_variance_for(scenario, &prior)?;

    let intrinsic = scenario
        .quad_var()
        .map(|c| intrinsic_safety(c, blocks))
        .transpose()?;

    let (quad_bound, bias) = match scenario.quad_mean() {
        Some(a_mat) => {
            let bound = quadratic_extrinsic_bound(a_mat, blocks)?;
            // the paper-recommended yardstick: the inflated posterior spread
            let scale = inflated_total_variance.max(0.0).sqrt();
            let bias = max_bias(a_mat, blocks, Some(scale))?;
            (Some(bound), Some(bias))
        }
        None => (None, None),
    };

    let completion_sweep = if options.completions > 0 {
        let completions: Result<Vec<_>> = (0..options.completions)
            .map(|k| sample_completion(blocks, options.seed, k as u64))
            .collect();
        let completions = completions?;
        let limit = check_limit(gradient, blocks, &completions)?;
        let conservative = verify_conservative(scenario, options.completions, 0, options.seed)?;
        Some(SweepSummary {
            n_completions: options.completions,
            max_ratio: limit.max_ratio,
            ratio_limit: blocks.len() as f64,
            min_margin: conservative.min_margin,
            violations: conservative.violations.len(),
        })
    } else {
        None
    };

    let monte_carlo = if options.mc_samples > 0 {
        let completion = crate::model::assemble_with_cross(blocks, &Default::default())?;
        let simulated = simulate(scenario, &completion, options.mc_samples, options.seed)?;
        Some(McSection {
            simulated,
            analytic_mean: analytic_mean(scenario, &completion)?,
            analytic_variance: analytic_total_variance(scenario, &completion)?,
        })
    } else {
        None
    };

    Ok(Report {
        n_blocks: scenario.n_blocks(),
        n_params: scenario.n_params(),
        alpha: wc.alpha,
        degenerate_gradient: wc.degenerate_gradient,
        uncorrelated_extrinsic,
        worst_case_extrinsic: wc.value,
        inflated_total_variance,
        conservative_prior: prior,
        intrinsic_safety: intrinsic,
        quadratic_extrinsic_bound: quad_bound,
        bias_bound: bias,
        assumptions: Assumptions {
            posterior_equals_prior: true,
            gaussian_quadratic_mean: scenario.quad_mean().is_some(),
        },
        completion_sweep,
        monte_carlo,
    })
}
