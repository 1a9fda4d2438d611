//! Fuzzy rating-scale analysis built on item response trees.
//!
//! The crate turns crisp questionnaire ratings plus response times into
//! four-parameter triangular fuzzy numbers and fits regression models on the
//! result:
//!
//! 1. [`tree`] declares how ordinal categories decompose into sequential
//!    binary decision nodes; [`irtree`] fits the corresponding item response
//!    model by marginal maximum likelihood with a Laplace approximation and
//!    scores each rater's latent traits.
//! 2. [`fuzzify`] converts every rater-item cell's model-implied category
//!    distribution into a triangular fuzzy rating, using response times to
//!    set a per-cell intensification exponent, and averages cells into one
//!    composite fuzzy rating per rater.
//! 3. [`regress`] fits crisp normal, log-scale normal, and fuzzy normal
//!    linear models; the fuzzy model minimizes the expected negative
//!    log-density under each standardized membership curve.
//!
//! [`simulate`] generates synthetic data from the same generative story for
//! testing and calibration, [`fuzzy`] holds the fuzzy-number arithmetic, and
//! [`io`] reads and writes every table as CSV.

pub mod error;
pub mod fuzzify;
pub mod fuzzy;
pub mod io;
pub mod irtree;
pub mod optim;
pub mod quad;
pub mod regress;
pub mod simulate;
pub mod stats;
pub mod tree;

pub use error::{Error, Result};
pub use fuzzify::{fuzzify_all, trim_times, FuzzyDataset, ResponseTimeMatrix, WMode};
pub use fuzzy::{FuzzyNumber, MembershipMoments};
pub use irtree::{
    category_distribution, dendrify, fit, predict_eta, CovarianceStructure, FitOptions,
    IrtreeFit, RatingMatrix,
};
pub use regress::{
    alpha_composite, build_design, cronbach_alpha, fit_fuzzy_normal, fit_lognormal, fit_normal,
    pseudo_r2, CovariateColumn, DesignMatrix, FuzzyFitMethod, ModelKind, RegressionFit,
};
pub use simulate::{simulate, simulate_with_eta, SimConfig, SimTruth};
pub use tree::TreeSpec;
