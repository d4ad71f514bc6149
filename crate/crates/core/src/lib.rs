//! Conservative covariance inflation for block-structured priors.
//!
//! When several experiments are combined, each brings a block of nuisance
//! parameters with a well-motivated internal covariance, but the
//! correlations *between* blocks are unknown. Picking any particular
//! cross-block correlation can understate the posterior uncertainty of a
//! parameter of interest. This crate computes how bad that can get and what
//! inflation of the uncorrelated prior provably covers it:
//!
//! - the worst-case extrinsic variance over all positive semi-definite
//!   completions of the joint covariance, and its ratio to the uncorrelated
//!   value (never more than the number of blocks);
//! - the conservative prior: the uncorrelated block-diagonal covariance
//!   scaled by the number of blocks;
//! - safety checks for quadratic terms in the conditional variance and mean
//!   of the parameter of interest, and a bound on the posterior-mean shift
//!   the inflation can introduce;
//! - a completion sampler and a Monte Carlo simulator that verify every
//!   bound empirically.
//!
//! ```
//! use blockprior::{analyze, AnalysisOptions, BlockSpec, Scenario, SymMatrix};
//!
//! let blocks = vec![
//!     BlockSpec::new("first", &["shift_a"], SymMatrix::identity(1))?,
//!     BlockSpec::new("second", &["shift_b"], SymMatrix::identity(1))?,
//! ];
//! let scenario = Scenario::builder(blocks, vec![1.0, 1.0])
//!     .intrinsic_variance(1.0)
//!     .build()?;
//! let report = analyze(&scenario, &AnalysisOptions::default())?;
//! assert_eq!(report.alpha, 2.0);
//! assert_eq!(report.worst_case_extrinsic, 4.0);
//! # Ok::<(), blockprior::Error>(())
//! ```

pub mod bounds;
pub mod error;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod quadratic;
pub mod report;
mod tol;

pub use bounds::{
    check_limit, conservative_prior, extrinsic_variance, worst_case, LimitCheck, LimitRecord,
    WorstCase,
};
pub use error::{Error, Result};
pub use linalg::{eigen_extrema, is_psd, whitening_factor, SymMatrix};
pub use model::{
    assemble_uncorrelated, assemble_with_cross, block_ranges, block_whiten, sample_completion,
    sample_completion_with, sample_whitened_completion, BlockSpec, Completion, Scenario,
    ScenarioBuilder, WhitenedView,
};
pub use montecarlo::{
    analytic_mean, analytic_mean_for, analytic_total_variance, analytic_total_variance_for,
    simulate, simulate_with_cov, verify_conservative, ConservativeCheck, SimResult,
};
pub use quadratic::{
    extrinsic_quadratic_variance, intrinsic_quadratic_shift, intrinsic_safety, max_bias,
    mean_shift, quadratic_extrinsic_bound, BiasReport, SafetyReason, SafetyReport,
};
pub use report::{analyze, AnalysisOptions, Assumptions, McSection, Report, SweepSummary};
pub use tol::{BOUND_REL_SLACK, DEFAULT_REL_TOL};
