//! One fitted factor of a joint model: parameters, log-likelihood, parameter
//! count and posterior assignments.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cwreg::CwRegParams;
use crate::gmm::GmmParams;
use crate::linreg::LinRegParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BlockParams {
    Gmm(GmmParams),
    CwReg(CwRegParams),
    LinReg(LinRegParams),
}

impl BlockParams {
    /// Mixture component count; 1 for plain regression blocks.
    pub fn k(&self) -> usize {
        match self {
            BlockParams::Gmm(p) => p.k,
            BlockParams::CwReg(p) => p.k,
            BlockParams::LinReg(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockFit {
    pub params: BlockParams,
    pub loglik: f64,
    pub npar: usize,
    /// n x K responsibilities; rows sum to 1.
    #[serde(with = "crate::serde_mat::matrix")]
    pub posteriors: DMatrix<f64>,
    /// Row-wise argmax of the posteriors.
    pub labels: Vec<usize>,
}

/// Diagnostics for the winning EM start.
#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    /// Observed-data log-likelihood after each iteration.
    pub loglik_trace: Vec<f64>,
    pub n_iter: usize,
    /// 0 is the k-means start, 1.. are random restarts.
    pub chosen_start: usize,
}
