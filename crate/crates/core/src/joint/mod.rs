//! Joint models: composition of per-block fits, BIC scoring, and a cached
//! fitting engine so repeated block subproblems (the genetic search revisits
//! thousands of them) are fitted once.

mod ident;

pub use ident::{
    check_identifiability, check_mixture_identifiability, compose_product_block, IdentOptions,
    IdentVerdict, MixtureComponents, Witness,
};

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::blockfit::BlockFit;
use crate::cwreg::{fit_cwreg, RegressionMode};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gmm::{fit_gmm, CovParam, EmControl};
use crate::linreg::{fit_linreg, SigmaForm};
use crate::partition::{BlockRegressors, VariablePartition};

/// A point in the model space: partition, component counts, covariance
/// structures and the form of the uninformative-block covariance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub partition: VariablePartition,
    /// K_g for each informative block.
    pub components: Vec<usize>,
    /// Covariance structure for each informative block.
    pub covariances: Vec<CovParam>,
    /// Form of the uninformative-block error covariance.
    #[serde(default = "default_noise_form")]
    pub noise_form: SigmaForm,
}

fn default_noise_form() -> SigmaForm {
    SigmaForm::Full
}

impl ModelSpec {
    /// A spec with unconstrained covariances everywhere.
    pub fn unconstrained(partition: VariablePartition, components: Vec<usize>) -> Result<Self> {
        let g = partition.g();
        let spec = ModelSpec {
            partition,
            components,
            covariances: vec![CovParam::FullVarying; g],
            noise_form: SigmaForm::Full,
        };
        spec.validate_shape()?;
        Ok(spec)
    }

    fn validate_shape(&self) -> Result<()> {
        let g = self.partition.g();
        if self.components.len() != g {
            return Err(Error::InvalidInput(format!(
                "{} component counts for {} blocks",
                self.components.len(),
                g
            )));
        }
        if self.covariances.len() != g {
            return Err(Error::InvalidInput(format!(
                "{} covariance codes for {} blocks",
                self.covariances.len(),
                g
            )));
        }
        if self.components.iter().any(|&k| k == 0) {
            return Err(Error::InvalidInput("component counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Validate against a dataset width.
    pub fn validate_for(&self, l: usize) -> Result<()> {
        self.validate_shape()?;
        if self.partition.l() != l {
            return Err(Error::InvalidInput(format!(
                "spec covers {} variables but the dataset has {}",
                self.partition.l(),
                l
            )));
        }
        Ok(())
    }
}

/// A fitted joint model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointFit {
    pub spec: ModelSpec,
    /// Informative blocks in order, then U (if present), then I (if present).
    pub blocks: Vec<BlockFit>,
    pub loglik: f64,
    pub npar: usize,
    pub bic: f64,
    /// Hard labels of each informative block.
    pub assignments: Vec<Vec<usize>>,
}

/// BIC under the larger-is-better sign convention.
pub fn bic(loglik: f64, npar: usize, n: usize) -> f64 {
    2.0 * loglik - npar as f64 * (n as f64).ln()
}

/// Log-likelihood, parameter count and BIC of a joint fit without the
/// per-block detail.
#[derive(Debug, Clone, Copy)]
pub struct FitSummary {
    pub loglik: f64,
    pub npar: usize,
    pub bic: f64,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct EmKey {
    seed: u64,
    n_starts: usize,
    max_iter: usize,
    tol_bits: u64,
}

impl EmKey {
    fn new(ctrl: &EmControl) -> Self {
        EmKey {
            seed: ctrl.seed,
            n_starts: ctrl.n_starts,
            max_iter: ctrl.max_iter,
            tol_bits: ctrl.tol.to_bits(),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
enum BlockKey {
    Gmm {
        cols: Vec<usize>,
        k: usize,
        cov: CovParam,
        em: EmKey,
    },
    Reg {
        resp: Vec<usize>,
        regs: BlockRegressors,
        k: usize,
        cov: CovParam,
        em: EmKey,
    },
    Lin {
        resp: Vec<usize>,
        regs: Vec<usize>,
        form: SigmaForm,
    },
}

/// Fits joint models against one dataset, caching block fits by
/// (columns, regressors, K, covariance structure, EM control).
pub struct FitEngine<'a> {
    data: &'a Dataset,
    ctrl: EmControl,
    cache: RwLock<HashMap<BlockKey, Arc<BlockFit>>>,
}

impl<'a> FitEngine<'a> {
    pub fn new(data: &'a Dataset, ctrl: EmControl) -> Self {
        FitEngine {
            data,
            ctrl,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn ctrl(&self) -> &EmControl {
        &self.ctrl
    }

    /// Number of distinct block subproblems fitted so far.
    pub fn cache_len(&self) -> usize {
        self.cache.read().unwrap().len()
    }

    fn cached(&self, key: &BlockKey) -> Option<Arc<BlockFit>> {
        self.cache.read().unwrap().get(key).cloned()
    }

    fn insert(&self, key: BlockKey, fit: Arc<BlockFit>) {
        self.cache.write().unwrap().insert(key, fit);
    }

    fn block_fit(&self, key: BlockKey) -> Result<Arc<BlockFit>> {
        if let Some(hit) = self.cached(&key) {
            return Ok(hit);
        }
        let fit = match &key {
            BlockKey::Gmm { cols, k, cov, .. } => {
                let x = self.data.restrict(cols);
                fit_gmm(&x, *k, *cov, &self.ctrl)?
            }
            BlockKey::Reg {
                resp,
                regs,
                k,
                cov,
                ..
            } => {
                let y = self.data.restrict(resp);
                let (z_cols, mode) = localize_regressors(regs);
                let z = self.data.restrict(&z_cols);
                fit_cwreg(&y, &z, *k, *cov, mode, &self.ctrl)?
            }
            BlockKey::Lin { resp, regs, form } => {
                let y = self.data.restrict(resp);
                let z = self.data.restrict(regs);
                fit_linreg(&y, &z, *form)?
            }
        };
        let fit = Arc::new(fit);
        self.insert(key, fit.clone());
        Ok(fit)
    }

    /// Fit every factor of `spec` and return the shared block fits in order:
    /// informative blocks, then U, then I.
    fn factor_fits(&self, spec: &ModelSpec) -> Result<Vec<Arc<BlockFit>>> {
        spec.validate_for(self.data.l())?;
        let part = &spec.partition;
        let em = EmKey::new(&self.ctrl);
        let mut fits = Vec::with_capacity(part.g() + 2);

        for g in 0..part.g() {
            let key = if g == 0 {
                BlockKey::Gmm {
                    cols: part.block(0).to_vec(),
                    k: spec.components[0],
                    cov: spec.covariances[0],
                    em: em.clone(),
                }
            } else {
                BlockKey::Reg {
                    resp: part.block(g).to_vec(),
                    regs: part.regressors_for_block(g),
                    k: spec.components[g],
                    cov: spec.covariances[g],
                    em: em.clone(),
                }
            };
            let fit = self
                .block_fit(key)
                .map_err(|e| e.in_block(format!("S{}", g + 1)))?;
            fits.push(fit);
        }

        if !part.uninformative().is_empty() {
            let key = BlockKey::Lin {
                resp: part.uninformative().to_vec(),
                regs: part.u_regressor_set(),
                form: spec.noise_form,
            };
            fits.push(self.block_fit(key).map_err(|e| e.in_block("U"))?);
        }

        if !part.independent().is_empty() {
            let key = BlockKey::Lin {
                resp: part.independent().to_vec(),
                regs: Vec::new(),
                form: SigmaForm::Full,
            };
            fits.push(self.block_fit(key).map_err(|e| e.in_block("I"))?);
        }

        Ok(fits)
    }

    /// Total log-likelihood, parameter count and BIC of `spec`.
    pub fn fit_summary(&self, spec: &ModelSpec) -> Result<FitSummary> {
        let fits = self.factor_fits(spec)?;
        let loglik: f64 = fits.iter().map(|f| f.loglik).sum();
        let npar: usize = fits.iter().map(|f| f.npar).sum();
        Ok(FitSummary {
            loglik,
            npar,
            bic: bic(loglik, npar, self.data.n()),
        })
    }

    /// Fit `spec` and assemble the full joint result.
    pub fn fit(&self, spec: &ModelSpec) -> Result<JointFit> {
        let fits = self.factor_fits(spec)?;
        let loglik: f64 = fits.iter().map(|f| f.loglik).sum();
        let npar: usize = fits.iter().map(|f| f.npar).sum();
        let assignments = fits[..spec.partition.g()]
            .iter()
            .map(|f| f.labels.clone())
            .collect();
        Ok(JointFit {
            spec: spec.clone(),
            blocks: fits.iter().map(|f| (**f).clone()).collect(),
            loglik,
            npar,
            bic: bic(loglik, npar, self.data.n()),
            assignments,
        })
    }
}

/// Map global regressor column indices to a restricted slice and a local mode.
fn localize_regressors(regs: &BlockRegressors) -> (Vec<usize>, RegressionMode) {
    match regs {
        BlockRegressors::Shared(set) => (set.clone(), RegressionMode::Shared),
        BlockRegressors::PerResponse(sets) => {
            let mut union: Vec<usize> = sets.iter().flatten().copied().collect();
            union.sort_unstable();
            union.dedup();
            let local = sets
                .iter()
                .map(|set| {
                    set.iter()
                        .map(|g| union.binary_search(g).expect("regressor in union"))
                        .collect()
                })
                .collect();
            (union, RegressionMode::Sur(local))
        }
    }
}

/// One-shot joint fit; build a `FitEngine` directly to share the cache across
/// many specs.
pub fn fit_joint(data: &Dataset, spec: &ModelSpec, ctrl: &EmControl) -> Result<JointFit> {
    FitEngine::new(data, *ctrl).fit(spec)
}
