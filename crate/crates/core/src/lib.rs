//! Gaussian mixtures over variable blocks.
//!
//! One joint density factorizes into a Gaussian mixture for the first
//! informative block, shared-slope clusterwise regressions for later
//! informative blocks, a Gaussian regression for uninformative variables and
//! an independent Gaussian remainder. The crate fits each factor by
//! EM/ECM/least squares, scores joint models by BIC, screens fitted blocks
//! with a factorization-based identifiability check, and searches the model
//! space (variable partition, component counts, covariance structures) with
//! a two-phase genetic algorithm.

pub mod blockfit;
pub mod cwreg;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod generate;
pub mod gmm;
pub mod joint;
pub mod linreg;
mod mixture;
pub mod partition;
pub mod search;
pub mod serde_mat;
mod util;

pub use blockfit::{BlockFit, BlockParams, FitDiagnostics};
pub use cwreg::{count_params_cwreg, fit_cwreg, CwRegParams, RegressionMode};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use eval::{ari, ari_from_table, crosstab, ContingencyTable};
pub use generate::{generate, two_structures_spec, GaussianBlock, GeneratorSpec};
pub use gmm::{count_params_gmm, fit_gmm, CovParam, EmControl, GmmParams};
pub use joint::{
    bic, check_identifiability, compose_product_block, fit_joint, FitEngine, IdentOptions,
    IdentVerdict, JointFit, MixtureComponents, ModelSpec, Witness,
};
pub use linreg::{count_params_linreg, fit_linreg, LinRegParams, SigmaForm};
pub use partition::{BlockRegressors, VariablePartition};
pub use search::{regressor_refine, search, GaControl, GenerationRecord, SearchOutcome};
pub use util::set_notation;
