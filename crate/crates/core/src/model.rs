//! Scenario data model: block covariance specifications, joint-covariance
//! assembly with and without cross-block correlations, block whitening, and
//! random sampling of valid PSD completions.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::tol::{close_rel, DEFAULT_REL_TOL};

/// One experiment's nuisance-parameter block: labels plus its known,
/// strictly positive-definite covariance.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    name: String,
    labels: Vec<String>,
    covariance: SymMatrix,
}

impl BlockSpec {
    pub fn new(name: &str, labels: &[&str], covariance: SymMatrix) -> Result<Self> {
        Self::with_tolerance(name, labels, covariance, DEFAULT_REL_TOL)
    }

    pub fn with_tolerance(
        name: &str,
        labels: &[&str],
        covariance: SymMatrix,
        rel_tol: f64,
    ) -> Result<Self> {
        if labels.len() != covariance.dim() {
            return Err(Error::ShapeError {
                what: format!("labels of block '{name}'"),
                expected: format!("{}", covariance.dim()),
                got: format!("{}", labels.len()),
            });
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::InvalidScenario(format!(
                    "block '{name}' repeats label '{a}'"
                )));
            }
        }
        if !covariance.is_finite() {
            return Err(Error::InvalidMatrix {
                what: format!("covariance of block '{name}'"),
            });
        }
        let (lambda_min, lambda_max) = linalg::eigen_extrema(&covariance)?;
        if lambda_min <= rel_tol * lambda_max {
            return Err(Error::NotPositiveDefinite {
                what: format!("covariance of block '{name}'"),
                lambda_min,
            });
        }
        Ok(Self {
            name: name.to_string(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            covariance,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }
}

/// Index ranges of each block inside the joint parameter vector.
pub fn block_ranges(blocks: &[BlockSpec]) -> Vec<Range<usize>> {
    let mut ranges = Vec::with_capacity(blocks.len());
    let mut start = 0;
    for b in blocks {
        ranges.push(start..start + b.dim());
        start += b.dim();
    }
    ranges
}

/// Full problem statement: blocks, response gradient, optional quadratic
/// response matrices, intrinsic variance, and reference points.
#[derive(Debug, Clone)]
pub struct Scenario {
    blocks: Vec<BlockSpec>,
    gradient: DVector<f64>,
    quad_mean: Option<SymMatrix>,
    quad_var: Option<SymMatrix>,
    intrinsic_variance: f64,
    phi0: DVector<f64>,
    phi0_prime: Option<DVector<f64>>,
    theta0: f64,
}

pub struct ScenarioBuilder {
    blocks: Vec<BlockSpec>,
    gradient: Vec<f64>,
    quad_mean: Option<SymMatrix>,
    quad_var: Option<SymMatrix>,
    intrinsic_variance: f64,
    phi0: Option<Vec<f64>>,
    phi0_prime: Option<Vec<f64>>,
    theta0: f64,
}

impl Scenario {
    pub fn builder(blocks: Vec<BlockSpec>, gradient: Vec<f64>) -> ScenarioBuilder {
        ScenarioBuilder {
            blocks,
            gradient,
            quad_mean: None,
            quad_var: None,
            intrinsic_variance: 0.0,
            phi0: None,
            phi0_prime: None,
            theta0: 0.0,
        }
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_params(&self) -> usize {
        self.gradient.len()
    }

    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        block_ranges(&self.blocks)
    }

    pub fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    pub fn quad_mean(&self) -> Option<&SymMatrix> {
        self.quad_mean.as_ref()
    }

    pub fn quad_var(&self) -> Option<&SymMatrix> {
        self.quad_var.as_ref()
    }

    pub fn intrinsic_variance(&self) -> f64 {
        self.intrinsic_variance
    }

    pub fn phi0(&self) -> &DVector<f64> {
        &self.phi0
    }

    pub fn phi0_prime(&self) -> Option<&DVector<f64>> {
        self.phi0_prime.as_ref()
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    /// Vertex of the quadratic mean response: the stated one, or derived by
    /// solving `gradient = 2 A (phi0 - vertex)` when `A` is invertible.
    /// `None` when no quadratic mean is present or `A` is singular.
    pub fn quad_vertex(&self) -> Option<DVector<f64>> {
        if let Some(v) = &self.phi0_prime {
            return Some(v.clone());
        }
        let a_mat = self.quad_mean.as_ref()?;
        let eigs = a_mat.as_matrix().clone().symmetric_eigenvalues();
        let max_abs = eigs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min_abs = eigs.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if max_abs == 0.0 || min_abs <= DEFAULT_REL_TOL * max_abs {
            return None;
        }
        let rhs = self.gradient.scale(0.5);
        let offset = a_mat.as_matrix().clone().lu().solve(&rhs)?;
        Some(&self.phi0 - offset)
    }

    /// Block-diagonal joint covariance with all cross-block correlations
    /// fixed to zero.
    pub fn uncorrelated_covariance(&self) -> SymMatrix {
        // blocks are validated PD on construction, so this cannot fail
        assemble_uncorrelated(&self.blocks).expect("validated blocks")
    }
}

impl ScenarioBuilder {
    pub fn quad_mean(mut self, m: SymMatrix) -> Self {
        self.quad_mean = Some(m);
        self
    }

    pub fn quad_var(mut self, m: SymMatrix) -> Self {
        self.quad_var = Some(m);
        self
    }

    pub fn intrinsic_variance(mut self, v: f64) -> Self {
        self.intrinsic_variance = v;
        self
    }

    pub fn phi0(mut self, v: Vec<f64>) -> Self {
        self.phi0 = Some(v);
        self
    }

    pub fn phi0_prime(mut self, v: Vec<f64>) -> Self {
        self.phi0_prime = Some(v);
        self
    }

    pub fn theta0(mut self, v: f64) -> Self {
        self.theta0 = v;
        self
    }

    pub fn build(self) -> Result<Scenario> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidScenario("no blocks given".into()));
        }
        let n: usize = self.blocks.iter().map(|b| b.dim()).sum();
        let expect_len = |what: &str, len: usize| -> Result<()> {
            if len == n {
                Ok(())
            } else {
                Err(Error::ShapeError {
                    what: what.into(),
                    expected: format!("{n}"),
                    got: format!("{len}"),
                })
            }
        };
        expect_len("gradient", self.gradient.len())?;
        if self.gradient.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidScenario(
                "gradient has non-finite entries".into(),
            ));
        }
        if !self.intrinsic_variance.is_finite() || self.intrinsic_variance < 0.0 {
            return Err(Error::InvalidScenario(format!(
                "intrinsic_variance must be finite and >= 0, got {}",
                self.intrinsic_variance
            )));
        }
        let phi0 = self.phi0.unwrap_or_else(|| vec![0.0; n]);
        expect_len("phi0", phi0.len())?;
        if phi0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidScenario("phi0 has non-finite entries".into()));
        }
        for (what, m) in [("quad_mean", &self.quad_mean), ("quad_var", &self.quad_var)] {
            if let Some(m) = m {
                expect_len(what, m.dim())?;
                if !m.is_finite() {
                    return Err(Error::InvalidMatrix { what: what.into() });
                }
            }
        }
        if let Some(p) = &self.phi0_prime {
            expect_len("phi0_prime", p.len())?;
        }
        let gradient = DVector::from_vec(self.gradient);
        let phi0 = DVector::from_vec(phi0);
        let phi0_prime = self.phi0_prime.map(DVector::from_vec);

        // The quadratic mean ties the gradient to its vertex:
        // gradient = 2 A (phi0 - vertex).
        if let (Some(a_mat), Some(vertex)) = (&self.quad_mean, &phi0_prime) {
            let implied = a_mat.as_matrix() * (&phi0 - vertex) * 2.0;
            let scale = gradient.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 0..n {
                if !close_rel(gradient[i], implied[i], 1e-9, scale) {
                    return Err(Error::InvalidScenario(format!(
                        "gradient[{i}] = {} inconsistent with 2*quad_mean*(phi0 - phi0_prime) = {}",
                        gradient[i], implied[i]
                    )));
                }
            }
        }

        Ok(Scenario {
            blocks: self.blocks,
            gradient,
            quad_mean: self.quad_mean,
            quad_var: self.quad_var,
            intrinsic_variance: self.intrinsic_variance,
            phi0,
            phi0_prime,
            theta0: self.theta0,
        })
    }
}

/// A concrete joint covariance whose diagonal blocks equal the known block
/// covariances, with the filled-in cross blocks kept alongside.
#[derive(Debug, Clone)]
pub struct Completion {
    joint: SymMatrix,
    cross_blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl Completion {
    pub fn joint(&self) -> &SymMatrix {
        &self.joint
    }

    pub fn cross_blocks(&self) -> &BTreeMap<(usize, usize), DMatrix<f64>> {
        &self.cross_blocks
    }

    fn from_joint(blocks: &[BlockSpec], joint: SymMatrix) -> Self {
        let ranges = block_ranges(blocks);
        let mut cross_blocks = BTreeMap::new();
        for i in 0..blocks.len() {
            for j in (i + 1)..blocks.len() {
                let (ri, rj) = (&ranges[i], &ranges[j]);
                let mut cb = DMatrix::zeros(ri.len(), rj.len());
                for (bi, gi) in ri.clone().enumerate() {
                    for (bj, gj) in rj.clone().enumerate() {
                        cb[(bi, bj)] = joint[(gi, gj)];
                    }
                }
                cross_blocks.insert((i, j), cb);
            }
        }
        Self {
            joint,
            cross_blocks,
        }
    }
}

/// Block-diagonal joint covariance with zero cross blocks.
pub fn assemble_uncorrelated(blocks: &[BlockSpec]) -> Result<SymMatrix> {
    if blocks.is_empty() {
        return Err(Error::InvalidScenario("no blocks given".into()));
    }
    let ranges = block_ranges(blocks);
    let n = ranges.last().unwrap().end;
    let mut joint = DMatrix::zeros(n, n);
    for (b, r) in blocks.iter().zip(&ranges) {
        for (bi, gi) in r.clone().enumerate() {
            for (bj, gj) in r.clone().enumerate() {
                joint[(gi, gj)] = b.covariance()[(bi, bj)];
            }
        }
    }
    SymMatrix::from_lower(&joint)
}

/// Joint covariance with the given cross blocks (keys `(i, j)` with
/// `i < j`, shape `dim_i x dim_j`); unspecified cross blocks stay zero.
/// The result is validated PSD.
pub fn assemble_with_cross(
    blocks: &[BlockSpec],
    cross: &BTreeMap<(usize, usize), DMatrix<f64>>,
) -> Result<Completion> {
    let ranges = block_ranges(blocks);
    let mut joint = assemble_uncorrelated(blocks)?.into_matrix();
    for (&(i, j), cb) in cross {
        if i >= j || j >= blocks.len() {
            return Err(Error::InvalidCompletion(format!(
                "cross-block key ({i}, {j}) must satisfy i < j < {}",
                blocks.len()
            )));
        }
        let (ri, rj) = (&ranges[i], &ranges[j]);
        if cb.nrows() != ri.len() || cb.ncols() != rj.len() {
            return Err(Error::ShapeError {
                what: format!("cross block ({i}, {j})"),
                expected: format!("{}x{}", ri.len(), rj.len()),
                got: format!("{}x{}", cb.nrows(), cb.ncols()),
            });
        }
        for (bi, gi) in ri.clone().enumerate() {
            for (bj, gj) in rj.clone().enumerate() {
                joint[(gi, gj)] = cb[(bi, bj)];
                joint[(gj, gi)] = cb[(bi, bj)];
            }
        }
    }
    let joint = SymMatrix::from_lower(&joint)?;
    let (lambda_min, lambda_max) = linalg::eigen_extrema(&joint)?;
    if lambda_min < -DEFAULT_REL_TOL * lambda_max.abs().max(1.0) {
        return Err(Error::NotPsd {
            what: "assembled joint covariance".into(),
            lambda_min,
        });
    }
    Ok(Completion::from_joint(blocks, joint))
}

/// Block-diagonal whitening of the scenario and the whitened quantities
/// derived from it.
#[derive(Debug, Clone)]
pub struct WhitenedView {
    whitening: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    gradient: DVector<f64>,
    uncorrelated: SymMatrix,
    quad_mean: Option<SymMatrix>,
    quad_var: Option<SymMatrix>,
    ranges: Vec<Range<usize>>,
}

impl WhitenedView {
    pub(crate) fn for_blocks(blocks: &[BlockSpec], gradient: &DVector<f64>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidScenario("no blocks given".into()));
        }
        let ranges = block_ranges(blocks);
        let n = ranges.last().unwrap().end;
        if gradient.len() != n {
            return Err(Error::ShapeError {
                what: "gradient".into(),
                expected: format!("{n}"),
                got: format!("{}", gradient.len()),
            });
        }
        let mut whitening = DMatrix::zeros(n, n);
        let mut chol_lower = DMatrix::zeros(n, n);
        for (b, r) in blocks.iter().zip(&ranges) {
            let what = format!("covariance of block '{}'", b.name());
            let lower = linalg::cholesky_lower(b.covariance(), DEFAULT_REL_TOL, &what)?;
            let w = lower
                .solve_lower_triangular(&DMatrix::identity(r.len(), r.len()))
                .ok_or(Error::NotPositiveDefinite {
                    what,
                    lambda_min: 0.0,
                })?;
            for (bi, gi) in r.clone().enumerate() {
                for (bj, gj) in r.clone().enumerate() {
                    whitening[(gi, gj)] = w[(bi, bj)];
                    chol_lower[(gi, gj)] = lower[(bi, bj)];
                }
            }
        }
        // b = W^{-T} a = L^T a
        let wh_gradient = chol_lower.transpose() * gradient;
        let uncorrelated_joint = assemble_uncorrelated(blocks)?;
        let uncorrelated = SymMatrix::symmetrized(
            &(&whitening * uncorrelated_joint.as_matrix() * whitening.transpose()),
        )?;
        Ok(Self {
            whitening,
            chol_lower,
            gradient: wh_gradient,
            uncorrelated,
            quad_mean: None,
            quad_var: None,
            ranges,
        })
    }

    /// Block-diagonal whitening matrix `W`.
    pub fn whitening(&self) -> &DMatrix<f64> {
        &self.whitening
    }

    /// Whitened gradient `b = W^{-T} a`.
    pub fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    /// Whitened uncorrelated joint covariance (identity up to roundoff).
    pub fn uncorrelated_joint(&self) -> &SymMatrix {
        &self.uncorrelated
    }

    /// Whitened quadratic mean matrix `W^{-T} A W^{-1}`, if present.
    pub fn quad_mean(&self) -> Option<&SymMatrix> {
        self.quad_mean.as_ref()
    }

    /// Whitened quadratic variance matrix `W^{-T} C W^{-1}`, if present.
    pub fn quad_var(&self) -> Option<&SymMatrix> {
        self.quad_var.as_ref()
    }

    pub fn block_ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn n_blocks(&self) -> usize {
        self.ranges.len()
    }

    pub fn n_params(&self) -> usize {
        self.gradient.len()
    }

    /// Per-block norms of the whitened gradient.
    pub fn block_gradient_norms(&self) -> Vec<f64> {
        self.ranges
            .iter()
            .map(|r| self.gradient.rows(r.start, r.len()).norm())
            .collect()
    }

    /// Map a joint covariance into whitened coordinates: `W sigma W^T`.
    pub fn whiten_joint(&self, sigma: &SymMatrix) -> Result<SymMatrix> {
        self.check_dim(sigma)?;
        SymMatrix::symmetrized(&(&self.whitening * sigma.as_matrix() * self.whitening.transpose()))
    }

    /// Map a whitened joint back: `W^{-1} sigma_w W^{-T} = L sigma_w L^T`.
    pub fn unwhiten_joint(&self, sigma_w: &SymMatrix) -> Result<SymMatrix> {
        self.check_dim(sigma_w)?;
        SymMatrix::symmetrized(
            &(&self.chol_lower * sigma_w.as_matrix() * self.chol_lower.transpose()),
        )
    }

    /// Whiten a quadratic-form matrix: `W^{-T} M W^{-1} = L^T M L`.
    pub fn whiten_quad(&self, m: &SymMatrix) -> Result<SymMatrix> {
        self.check_dim(m)?;
        SymMatrix::symmetrized(&(self.chol_lower.transpose() * m.as_matrix() * &self.chol_lower))
    }

    fn check_dim(&self, m: &SymMatrix) -> Result<()> {
        if m.dim() != self.n_params() {
            return Err(Error::ShapeError {
                what: "joint matrix".into(),
                expected: format!("{}", self.n_params()),
                got: format!("{}", m.dim()),
            });
        }
        Ok(())
    }

    /// Map a whitened completion (identity diagonal blocks) back to original
    /// coordinates as a [`Completion`]. The known diagonal blocks are written
    /// over exactly; the unwhitening product carries them only to roundoff.
    pub fn completion_from_whitened(
        &self,
        blocks: &[BlockSpec],
        sigma_w: &SymMatrix,
    ) -> Result<Completion> {
        let mut joint = self.unwhiten_joint(sigma_w)?.into_matrix();
        for (b, r) in blocks.iter().zip(&self.ranges) {
            for (bi, gi) in r.clone().enumerate() {
                for (bj, gj) in r.clone().enumerate() {
                    joint[(gi, gj)] = b.covariance()[(bi, bj)];
                }
            }
        }
        Ok(Completion::from_joint(
            blocks,
            SymMatrix::from_lower(&joint)?,
        ))
    }
}

/// Whiten a scenario: per-block whitening factors, whitened gradient, and
/// whitened quadratic matrices when the scenario carries them.
pub fn block_whiten(scenario: &Scenario) -> Result<WhitenedView> {
    let mut view = WhitenedView::for_blocks(scenario.blocks(), scenario.gradient())?;
    if let Some(a_mat) = scenario.quad_mean() {
        view.quad_mean = Some(view.whiten_quad(a_mat)?);
    }
    if let Some(c_mat) = scenario.quad_var() {
        view.quad_var = Some(view.whiten_quad(c_mat)?);
    }
    Ok(view)
}

const MAX_SAMPLE_ATTEMPTS: usize = 100;

/// Sample a random whitened completion: a PSD matrix with exact-identity
/// diagonal blocks for the given block dimensions. Deterministic for a given
/// `(seed, stream_index)`.
///
/// The draw builds a random Gram factor with `gram_cols` columns and
/// re-whitens each block's rows so the block Gram is the identity; the full
/// Gram matrix is then a valid completion by construction. `gram_cols` below
/// the total dimension produces rank-deficient (boundary) completions.
pub fn sample_whitened_completion(
    dims: &[usize],
    gram_cols: usize,
    seed: u64,
    stream_index: u64,
) -> Result<SymMatrix> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidScenario(
            "block dimensions must be positive".into(),
        ));
    }
    if gram_cols == 0 {
        return Err(Error::InvalidScenario("gram_cols must be >= 1".into()));
    }
    let n: usize = dims.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_index);

    let mut last_bad_block = 0;
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        let mut gram = DMatrix::zeros(n, gram_cols);
        for i in 0..n {
            for j in 0..gram_cols {
                gram[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let mut start = 0;
        let mut degenerate = None;
        for (bi, &d) in dims.iter().enumerate() {
            let rows = gram.rows(start, d).into_owned();
            let block_gram = SymMatrix::symmetrized(&(&rows * rows.transpose()))?;
            match linalg::whitening_factor(&block_gram, DEFAULT_REL_TOL) {
                Ok(w) => {
                    let rewhitened = &w * &rows;
                    gram.rows_mut(start, d).copy_from(&rewhitened);
                }
                Err(_) => {
                    degenerate = Some(bi);
                    break;
                }
            }
            start += d;
        }
        if let Some(bi) = degenerate {
            last_bad_block = bi;
            continue;
        }
        let mut sigma_w = SymMatrix::symmetrized(&(&gram * gram.transpose()))?.into_matrix();
        let mut start = 0;
        for &d in dims {
            for i in 0..d {
                for j in 0..d {
                    sigma_w[(start + i, start + j)] = if i == j { 1.0 } else { 0.0 };
                }
            }
            start += d;
        }
        return SymMatrix::from_lower(&sigma_w);
    }
    Err(Error::SamplingFailure {
        block: last_bad_block,
        attempts: MAX_SAMPLE_ATTEMPTS,
    })
}

/// Sample a valid completion of the blocks. Deterministic for a given
/// `(seed, stream_index)`; a single block returns the uncorrelated joint
/// exactly.
pub fn sample_completion(blocks: &[BlockSpec], seed: u64, stream_index: u64) -> Result<Completion> {
    let n: usize = blocks.iter().map(|b| b.dim()).sum();
    sample_completion_with(blocks, seed, stream_index, n)
}

/// [`sample_completion`] with an explicit Gram-factor column count.
pub fn sample_completion_with(
    blocks: &[BlockSpec],
    seed: u64,
    stream_index: u64,
    gram_cols: usize,
) -> Result<Completion> {
    if blocks.is_empty() {
        return Err(Error::InvalidScenario("no blocks given".into()));
    }
    if blocks.len() == 1 {
        return Ok(Completion::from_joint(
            blocks,
            assemble_uncorrelated(blocks)?,
        ));
    }
    let dims: Vec<usize> = blocks.iter().map(|b| b.dim()).collect();
    let sigma_w = sample_whitened_completion(&dims, gram_cols, seed, stream_index)?;
    let zero = DVector::zeros(dims.iter().sum());
    let view = WhitenedView::for_blocks(blocks, &zero)?;
    view.completion_from_whitened(blocks, &sigma_w)
}
