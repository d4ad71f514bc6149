//! Quadratic-order analyses: the quadratic contribution to the intrinsic
//! variance and its safety condition, the extrinsic variance under a
//! quadratic conditional mean (Gaussian prior), its inflation bound, and the
//! posterior-mean bias bound.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::model::{
    assemble_uncorrelated, block_whiten, BlockSpec, Completion, Scenario, WhitenedView,
};
use crate::tol::{close_rel, BOUND_REL_SLACK, DEFAULT_REL_TOL};

/// Whether inflating the prior also covers the quadratic contribution to the
/// intrinsic variance, with the extreme possible contributions for judgment
/// when it does not.
#[derive(Debug, Clone, Serialize)]
pub struct SafetyReport {
    /// Smallest possible quadratic contribution over completions:
    /// `n_params * lambda_min` of the whitened quadratic variance matrix.
    pub lower: f64,
    /// Largest possible contribution: `n_params * lambda_max`.
    pub upper: f64,
    /// Contribution under the inflated prior: `n_blocks * Tr[C sigma_{0}]`.
    pub inflated: f64,
    pub safe: bool,
    pub reason: SafetyReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyReason {
    /// The quadratic variance matrix is PSD, so the inflated contribution
    /// dominates every completion's.
    PositiveSemidefinite,
    /// Indefinite, but `lambda_max <= n_blocks * lambda_min` still makes the
    /// inflated contribution dominate.
    EigenvalueCondition,
    Unsafe,
}

/// Upper bound on the posterior-mean shift caused by inflating the prior
/// instead of knowing the true cross-block correlations.
#[derive(Debug, Clone, Serialize)]
pub struct BiasReport {
    /// `max over completions |n_blocks Tr[B] - Tr[B sigma_w]|`, bounded via
    /// the eigenvalue extrema of the whitened quadratic mean matrix.
    pub bound: f64,
    /// Posterior standard deviation supplied for context, if any.
    pub comparison_scale: Option<f64>,
}

impl BiasReport {
    /// Bias bound over the comparison scale. The judgment of what ratio is
    /// acceptable stays with the caller.
    pub fn ratio_to_scale(&self) -> Option<f64> {
        self.comparison_scale.map(|s| self.bound / s)
    }
}

fn trace_of_square(p: &DMatrix<f64>) -> f64 {
    let n = p.nrows();
    let mut tr = 0.0;
    for i in 0..n {
        for j in 0..n {
            tr += p[(i, j)] * p[(j, i)];
        }
    }
    tr
}

fn check_square(what: &str, m: &SymMatrix, n: usize) -> Result<()> {
    if m.dim() != n {
        return Err(Error::ShapeError {
            what: what.into(),
            expected: format!("{n}"),
            got: format!("{}", m.dim()),
        });
    }
    Ok(())
}

/// Quadratic contribution to the expected intrinsic variance,
/// `Tr[C sigma_phi]`, cross-checked against its whitened form
/// `Tr[D sigma_w]`.
pub fn intrinsic_quadratic_shift(
    quad_var: &SymMatrix,
    completion: &Completion,
    view: &WhitenedView,
) -> Result<f64> {
    let n = view.n_params();
    check_square("quad_var", quad_var, n)?;
    check_square("completion joint", completion.joint(), n)?;
    let direct = quad_var.trace_product(completion.joint())?;
    let whitened_var = view.whiten_quad(quad_var)?;
    let sigma_w = view.whiten_joint(completion.joint())?;
    let whitened = whitened_var.trace_product(&sigma_w)?;
    let scale = quad_var.max_abs() * completion.joint().max_abs() * n as f64;
    if !close_rel(direct, whitened, BOUND_REL_SLACK, scale) {
        return Err(Error::ConsistencyViolation {
            what: "intrinsic quadratic shift (direct vs whitened)".into(),
            lhs: direct,
            rhs: whitened,
        });
    }
    Ok(direct)
}

/// Decide whether the inflated prior covers the quadratic intrinsic
/// contribution for every completion, and report the possible extremes.
pub fn intrinsic_safety(quad_var: &SymMatrix, blocks: &[BlockSpec]) -> Result<SafetyReport> {
    let n: usize = blocks.iter().map(|b| b.dim()).sum();
    check_square("quad_var", quad_var, n)?;
    let zero = nalgebra::DVector::zeros(n);
    let view = WhitenedView::for_blocks(blocks, &zero)?;
    let whitened_var = view.whiten_quad(quad_var)?;
    let (lambda_min, lambda_max) = linalg::eigen_extrema(&whitened_var)?;
    let n_blocks = blocks.len() as f64;
    let n_params = n as f64;
    let lower = n_params * lambda_min;
    let upper = n_params * lambda_max;
    let inflated = n_blocks * whitened_var.trace();

    // Ties break toward "unsafe": roundoff must not flip the verdict green.
    let margin = BOUND_REL_SLACK * lambda_max.abs().max((n_blocks * lambda_min).abs());
    let (safe, reason) = if linalg::is_psd(quad_var, DEFAULT_REL_TOL)? {
        (true, SafetyReason::PositiveSemidefinite)
    } else if lambda_max + margin <= n_blocks * lambda_min {
        (true, SafetyReason::EigenvalueCondition)
    } else {
        (false, SafetyReason::Unsafe)
    };
    Ok(SafetyReport {
        lower,
        upper,
        inflated,
        safe,
        reason,
    })
}

/// Extrinsic variance when the conditional mean is quadratic and the prior
/// is multivariate normal: `2 Tr[(A sigma)^2] + a^T sigma a`, cross-checked
/// against the whitened form.
pub fn extrinsic_quadratic_variance(scenario: &Scenario, completion: &Completion) -> Result<f64> {
    let quad_mean = scenario.quad_mean().ok_or(Error::MissingQuadraticMean)?;
    let n = scenario.n_params();
    check_square("completion joint", completion.joint(), n)?;
    let sigma = completion.joint();
    let prod = quad_mean.as_matrix() * sigma.as_matrix();
    let quad_term = 2.0 * trace_of_square(&prod);
    let linear_term = sigma.quadratic_form(scenario.gradient())?;
    let direct = quad_term + linear_term;

    let view = block_whiten(scenario)?;
    let sigma_w = view.whiten_joint(sigma)?;
    let wh_prod = view.quad_mean().expect("whitened quad mean").as_matrix() * sigma_w.as_matrix();
    let whitened = 2.0 * trace_of_square(&wh_prod) + sigma_w.quadratic_form(view.gradient())?;

    let n_f = n as f64;
    let scale = 2.0 * prod.amax() * prod.amax() * n_f
        + scenario.gradient().amax().powi(2) * sigma.max_abs() * n_f * n_f;
    if !close_rel(direct, whitened, BOUND_REL_SLACK, scale) {
        return Err(Error::ConsistencyViolation {
            what: "quadratic extrinsic variance (direct vs whitened)".into(),
            lhs: direct,
            rhs: whitened,
        });
    }
    Ok(direct)
}

/// Bound on the quadratic part of the extrinsic variance over all
/// completions: `2 n_blocks^2 Tr[(A sigma_0)^2]`.
pub fn quadratic_extrinsic_bound(quad_mean: &SymMatrix, blocks: &[BlockSpec]) -> Result<f64> {
    let n: usize = blocks.iter().map(|b| b.dim()).sum();
    check_square("quad_mean", quad_mean, n)?;
    let uncorrelated = assemble_uncorrelated(blocks)?;
    let prod = quad_mean.as_matrix() * uncorrelated.as_matrix();
    let n_blocks = blocks.len() as f64;
    Ok(2.0 * n_blocks * n_blocks * trace_of_square(&prod))
}

/// Shift of the posterior mean induced by the quadratic conditional mean:
/// `Tr[A sigma_phi]`.
pub fn mean_shift(quad_mean: &SymMatrix, completion: &Completion) -> Result<f64> {
    check_square("quad_mean", quad_mean, completion.joint().dim())?;
    quad_mean.trace_product(completion.joint())
}

/// Largest possible posterior-mean mistake from inflating the prior rather
/// than knowing the true correlations.
pub fn max_bias(
    quad_mean: &SymMatrix,
    blocks: &[BlockSpec],
    posterior_sd: Option<f64>,
) -> Result<BiasReport> {
    let n: usize = blocks.iter().map(|b| b.dim()).sum();
    check_square("quad_mean", quad_mean, n)?;
    let zero = nalgebra::DVector::zeros(n);
    let view = WhitenedView::for_blocks(blocks, &zero)?;
    let whitened_mean = view.whiten_quad(quad_mean)?;
    let (lambda_min, lambda_max) = linalg::eigen_extrema(&whitened_mean)?;
    let n_blocks = blocks.len() as f64;
    let n_params = n as f64;
    let inflated = n_blocks * whitened_mean.trace();
    let bound = (inflated - lambda_max * n_params)
        .abs()
        .max((inflated - lambda_min * n_params).abs());
    Ok(BiasReport {
        bound,
        comparison_scale: posterior_sd,
    })
}
