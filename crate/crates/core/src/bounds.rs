//! Linear-order machinery: extrinsic variance, the worst-case completion,
//! and the conservative inflated prior.
//!
//! With the gradient whitened block-wise to `b`, the extrinsic variance of
//! any completion is `b^T sigma_w b`. Its maximum over all completions is
//! `(sum_i ||b_i||)^2`, attained by the rank-structured completion whose
//! cross blocks are `u_i u_j^T` with `u_i = b_i / ||b_i||`; the ratio to the
//! uncorrelated value is therefore at most the number of blocks.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::model::{assemble_uncorrelated, BlockSpec, Completion, WhitenedView};
use crate::tol::{leq_rel, BOUND_REL_SLACK};

/// The maximal extrinsic variance over all completions and how it compares
/// to the uncorrelated baseline.
#[derive(Debug, Clone)]
pub struct WorstCase {
    /// Largest extrinsic variance any completion can produce.
    pub value: f64,
    /// `value` over the uncorrelated extrinsic variance; at most the number
    /// of blocks. Reported as 1 for a zero gradient.
    pub alpha: f64,
    /// Set when the whitened gradient vanishes, making `alpha` a convention.
    pub degenerate_gradient: bool,
    achieving_sigma_w: SymMatrix,
    achieving_completion: Completion,
}

impl WorstCase {
    /// The achieving completion in whitened coordinates (identity diagonal
    /// blocks, cross blocks `u_i u_j^T`).
    pub fn achieving_sigma_w(&self) -> &SymMatrix {
        &self.achieving_sigma_w
    }

    /// The achieving completion in original coordinates.
    pub fn achieving_completion(&self) -> &Completion {
        &self.achieving_completion
    }
}

/// `a^T sigma a`: the variance of a linear response with gradient `a` under
/// covariance `sigma`.
pub fn extrinsic_variance(gradient: &DVector<f64>, sigma: &SymMatrix) -> Result<f64> {
    sigma.quadratic_form(gradient)
}

/// Maximize the extrinsic variance over all valid completions of the blocks.
pub fn worst_case(gradient: &DVector<f64>, blocks: &[BlockSpec]) -> Result<WorstCase> {
    let view = WhitenedView::for_blocks(blocks, gradient)?;
    let n = view.n_params();
    let ranges = view.block_ranges().to_vec();

    // (sum_i ||b_i||)^2 expanded so that vanishing cross terms leave the
    // baseline untouched bit for bit (alpha is then exactly 1)
    let norms_sq: Vec<f64> = ranges
        .iter()
        .map(|r| view.gradient().rows(r.start, r.len()).norm_squared())
        .collect();
    let norms: Vec<f64> = norms_sq.iter().map(|s| s.sqrt()).collect();
    let baseline: f64 = norms_sq.iter().sum();
    let mut value = baseline;
    for i in 0..norms.len() {
        for j in (i + 1)..norms.len() {
            value += 2.0 * norms[i] * norms[j];
        }
    }
    let mut sigma_w_star = DMatrix::identity(n, n);
    let units: Vec<DVector<f64>> = ranges
        .iter()
        .zip(&norms)
        .map(|(r, &nm)| {
            let slice = view.gradient().rows(r.start, r.len()).into_owned();
            if nm > 0.0 {
                slice.unscale(nm)
            } else {
                DVector::zeros(r.len())
            }
        })
        .collect();
    for i in 0..ranges.len() {
        for j in (i + 1)..ranges.len() {
            let cross = &units[i] * units[j].transpose();
            for (bi, gi) in ranges[i].clone().enumerate() {
                for (bj, gj) in ranges[j].clone().enumerate() {
                    sigma_w_star[(gi, gj)] = cross[(bi, bj)];
                    sigma_w_star[(gj, gi)] = cross[(bi, bj)];
                }
            }
        }
    }
    let achieving_sigma_w = SymMatrix::from_lower(&sigma_w_star)?;
    let achieving_completion = view.completion_from_whitened(blocks, &achieving_sigma_w)?;

    let (alpha, degenerate_gradient) = if baseline > 0.0 {
        (value / baseline, false)
    } else {
        (1.0, true)
    };
    Ok(WorstCase {
        value,
        alpha,
        degenerate_gradient,
        achieving_sigma_w,
        achieving_completion,
    })
}

/// The uncorrelated block-diagonal prior inflated by the number of blocks.
/// Its extrinsic variance dominates every completion's.
pub fn conservative_prior(blocks: &[BlockSpec]) -> Result<SymMatrix> {
    let uncorrelated = assemble_uncorrelated(blocks)?;
    Ok(uncorrelated.scaled(blocks.len() as f64))
}

/// Per-completion record from [`check_limit`].
#[derive(Debug, Clone)]
pub struct LimitRecord {
    /// `a^T sigma_phi a` for the completion.
    pub extrinsic: f64,
    /// Largest eigenvalue of the whitened completion.
    pub lambda_w_max: f64,
    /// Extrinsic variance over the uncorrelated baseline (1 when the
    /// baseline vanishes).
    pub ratio: f64,
}

/// Outcome of checking the eigenvalue limit over a set of completions.
#[derive(Debug, Clone)]
pub struct LimitCheck {
    pub records: Vec<LimitRecord>,
    pub max_ratio: f64,
    /// `a^T sigma_{phi,0} a`, the uncorrelated extrinsic variance.
    pub baseline: f64,
}

/// Verify, for every completion, the chain
/// `a^T sigma_phi a <= lambda_w_max * baseline <= n_blocks * baseline`
/// within relative slack. A violation signals an implementation bug.
pub fn check_limit(
    gradient: &DVector<f64>,
    blocks: &[BlockSpec],
    completions: &[Completion],
) -> Result<LimitCheck> {
    let view = WhitenedView::for_blocks(blocks, gradient)?;
    let baseline = extrinsic_variance(gradient, &assemble_uncorrelated(blocks)?)?;
    let n_blocks = blocks.len() as f64;

    let records: Vec<Result<LimitRecord>> = completions
        .par_iter()
        .enumerate()
        .map(|(index, completion)| {
            let extrinsic = extrinsic_variance(gradient, completion.joint())?;
            let sigma_w = view.whiten_joint(completion.joint())?;
            let (_, lambda_w_max) = linalg::eigen_extrema(&sigma_w)?;
            let mid = lambda_w_max * baseline;
            let cap = n_blocks * baseline;
            if !leq_rel(extrinsic, mid, BOUND_REL_SLACK, 0.0) {
                return Err(Error::BoundViolation {
                    index,
                    what: "extrinsic variance exceeds lambda_w_max * baseline".into(),
                    lhs: extrinsic,
                    rhs: mid,
                });
            }
            if !leq_rel(mid, cap, BOUND_REL_SLACK, baseline.abs()) {
                return Err(Error::BoundViolation {
                    index,
                    what: "lambda_w_max exceeds the block count".into(),
                    lhs: mid,
                    rhs: cap,
                });
            }
            let ratio = if baseline > 0.0 {
                extrinsic / baseline
            } else {
                1.0
            };
            Ok(LimitRecord {
                extrinsic,
                lambda_w_max,
                ratio,
            })
        })
        .collect();

    let mut out = Vec::with_capacity(records.len());
    let mut max_ratio = f64::NEG_INFINITY;
    for record in records {
        let record = record?;
        max_ratio = max_ratio.max(record.ratio);
        out.push(record);
    }
    if out.is_empty() {
        max_ratio = 1.0;
    }
    Ok(LimitCheck {
        records: out,
        max_ratio,
        baseline,
    })
}
