//! Gaussian mixture fitting by EM with parsimonious covariance structures.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blockfit::{BlockFit, BlockParams, FitDiagnostics};
use crate::error::{Error, Result};
use crate::mixture::{
    covariances_from_scatter, kmeans, mean_column_variance, normalize_log_rows,
    onehot_responsibilities, random_responsibilities, GaussFactor,
};
use crate::util::mix_seed;

/// Relative eigenvalue floor guarding against likelihood spikes.
const FLOOR_SCALE: f64 = 1e-8;
/// A component whose effective sample size drops below this is collapsed.
const MIN_COMPONENT_MASS: f64 = 1e-8;

const GMM_SEED_TAG: u64 = 0x676d6d;

/// Structural constraint on the component covariance matrices.
///
/// The codes cross shape (spherical, diagonal, full) with whether one matrix
/// is shared by all components (`*Equal`) or each component has its own
/// (`*Varying`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CovParam {
    SphericalEqual,
    SphericalVarying,
    DiagonalEqual,
    DiagonalVarying,
    FullEqual,
    FullVarying,
}

impl CovParam {
    pub const ALL: [CovParam; 6] = [
        CovParam::SphericalEqual,
        CovParam::SphericalVarying,
        CovParam::DiagonalEqual,
        CovParam::DiagonalVarying,
        CovParam::FullEqual,
        CovParam::FullVarying,
    ];

    /// Whether all components share one covariance matrix.
    pub fn tied(self) -> bool {
        matches!(
            self,
            CovParam::SphericalEqual | CovParam::DiagonalEqual | CovParam::FullEqual
        )
    }

    /// Free covariance parameters for dimension `l` and `k` components.
    pub fn param_count(self, l: usize, k: usize) -> usize {
        match self {
            CovParam::SphericalEqual => 1,
            CovParam::SphericalVarying => k,
            CovParam::DiagonalEqual => l,
            CovParam::DiagonalVarying => k * l,
            CovParam::FullEqual => l * (l + 1) / 2,
            CovParam::FullVarying => k * l * (l + 1) / 2,
        }
    }
}

/// EM iteration control shared by the mixture fitters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmControl {
    /// Stop when the log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Number of random-responsibility restarts, on top of one k-means start.
    pub n_starts: usize,
    pub seed: u64,
}

impl Default for EmControl {
    fn default() -> Self {
        EmControl {
            tol: 1e-6,
            max_iter: 500,
            n_starts: 10,
            seed: 0,
        }
    }
}

impl EmControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidInput("EM tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("EM max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fitted Gaussian mixture parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmParams {
    pub k: usize,
    pub weights: Vec<f64>,
    #[serde(with = "crate::serde_mat::vector_vec")]
    pub means: Vec<DVector<f64>>,
    #[serde(with = "crate::serde_mat::matrix_vec")]
    pub covariances: Vec<DMatrix<f64>>,
    pub cov_param: CovParam,
}

impl GmmParams {
    /// Dimension of the component distributions.
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    /// Check simplex weights and dimensional consistency.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.weights.len() != self.k || self.means.len() != self.k {
            return Err(Error::InvalidInput("component count mismatch".into()));
        }
        if self.covariances.len() != self.k {
            return Err(Error::InvalidInput("covariance count mismatch".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| w <= 0.0) || (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(
                "weights must be positive and sum to 1".into(),
            ));
        }
        let d = self.dim();
        for (idx, (m, c)) in self.means.iter().zip(&self.covariances).enumerate() {
            if m.len() != d || c.nrows() != d || c.ncols() != d {
                return Err(Error::InvalidInput(format!(
                    "component {idx} has inconsistent dimensions"
                )));
            }
        }
        Ok(())
    }
}

/// Parameter count of a Gaussian mixture: (K-1) weights, K*L means, plus the
/// covariance structure.
pub fn count_params_gmm(l: usize, k: usize, param: CovParam) -> usize {
    (k - 1) + k * l + param.param_count(l, k)
}

/// Fit a Gaussian mixture to the rows of `x` by EM.
pub fn fit_gmm(x: &DMatrix<f64>, k: usize, param: CovParam, ctrl: &EmControl) -> Result<BlockFit> {
    fit_gmm_detailed(x, k, param, ctrl).map(|(fit, _)| fit)
}

/// As `fit_gmm`, also returning the winning start's diagnostics.
pub fn fit_gmm_detailed(
    x: &DMatrix<f64>,
    k: usize,
    param: CovParam,
    ctrl: &EmControl,
) -> Result<(BlockFit, FitDiagnostics)> {
    let (n, d) = x.shape();
    if k == 0 {
        return Err(Error::InvalidInput("K must be >= 1".into()));
    }
    if n <= k {
        return Err(Error::InvalidInput(format!(
            "need more observations ({n}) than components ({k})"
        )));
    }
    ctrl.validate()?;
    let floor = FLOOR_SCALE * mean_column_variance(x);

    let n_starts = if k == 1 { 0 } else { ctrl.n_starts };
    let mut best: Option<(EmRun, usize)> = None;
    let mut first_err: Option<Error> = None;
    for start in 0..=n_starts {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(ctrl.seed, &[GMM_SEED_TAG, start as u64]));
        let resp0 = if start == 0 {
            let labels = kmeans(x, k, &mut rng, 10);
            onehot_responsibilities(&labels, k)
        } else {
            random_responsibilities(n, k, &mut rng)
        };
        match run_em(x, k, param, ctrl, floor, resp0) {
            Ok(run) => {
                let better = match &best {
                    None => true,
                    Some((b, _)) => run.loglik > b.loglik,
                };
                if better {
                    best = Some((run, start));
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }

    let (run, start) = match best {
        Some(b) => b,
        None => return Err(first_err.expect("at least one start attempted")),
    };
    let labels = hard_labels(&run.resp);
    let npar = count_params_gmm(d, k, param);
    let fit = BlockFit {
        params: BlockParams::Gmm(GmmParams {
            k,
            weights: run.weights,
            means: run.means,
            covariances: run.covariances,
            cov_param: param,
        }),
        loglik: run.loglik,
        npar,
        posteriors: run.resp,
        labels,
    };
    let diag = FitDiagnostics {
        loglik_trace: run.trace,
        n_iter: run.iters,
        chosen_start: start,
    };
    Ok((fit, diag))
}

struct EmRun {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    loglik: f64,
    resp: DMatrix<f64>,
    trace: Vec<f64>,
    iters: usize,
}

fn run_em(
    x: &DMatrix<f64>,
    k: usize,
    param: CovParam,
    ctrl: &EmControl,
    floor: f64,
    mut resp: DMatrix<f64>,
) -> Result<EmRun> {
    let (n, d) = x.shape();
    let max_iter = if k == 1 { 1 } else { ctrl.max_iter };
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut consecutive_floors = 0usize;
    let mut weights = vec![0.0; k];
    let mut means: Vec<DVector<f64>> = vec![DVector::zeros(d); k];
    let mut covariances: Vec<DMatrix<f64>> = Vec::new();
    let mut resid = vec![0.0f64; d];
    let mut iters = 0;

    for iter in 0..max_iter {
        iters = iter + 1;
        // M-step
        let mut nk = vec![0.0f64; k];
        for j in 0..k {
            nk[j] = resp.column(j).sum();
            if nk[j] < MIN_COMPONENT_MASS {
                return Err(Error::DegenerateFit { component: j });
            }
            weights[j] = nk[j] / n as f64;
        }
        for j in 0..k {
            let mut m = DVector::zeros(d);
            for i in 0..n {
                let r = resp[(i, j)];
                for c in 0..d {
                    m[c] += r * x[(i, c)];
                }
            }
            means[j] = m / nk[j];
        }
        let scatters: Vec<DMatrix<f64>> = (0..k)
            .map(|j| {
                let mut s = DMatrix::zeros(d, d);
                for i in 0..n {
                    let r = resp[(i, j)];
                    for a in 0..d {
                        let ea = x[(i, a)] - means[j][a];
                        for b in a..d {
                            s[(a, b)] += r * ea * (x[(i, b)] - means[j][b]);
                        }
                    }
                }
                for a in 0..d {
                    for b in 0..a {
                        s[(a, b)] = s[(b, a)];
                    }
                }
                s
            })
            .collect();
        let (covs, floored) = covariances_from_scatter(&scatters, &nk, n as f64, param, floor);
        if let Some(comp) = floored {
            consecutive_floors += 1;
            if consecutive_floors >= 2 {
                return Err(Error::DegenerateFit { component: comp });
            }
        } else {
            consecutive_floors = 0;
        }
        covariances = covs;

        // E-step
        let factors: Vec<GaussFactor> = covariances
            .iter()
            .enumerate()
            .map(|(j, c)| GaussFactor::new(c).ok_or(Error::DegenerateFit { component: j }))
            .collect::<Result<_>>()?;
        for j in 0..k {
            let lw = weights[j].ln();
            for i in 0..n {
                for c in 0..d {
                    resid[c] = x[(i, c)] - means[j][c];
                }
                resp[(i, j)] = lw + factors[j].log_density(&mut resid);
            }
        }
        let ll = normalize_log_rows(&mut resp);
        trace.push(ll);
        if (ll - prev).abs() < ctrl.tol {
            prev = ll;
            break;
        }
        prev = ll;
    }

    Ok(EmRun {
        weights,
        means,
        covariances,
        loglik: prev,
        resp,
        trace,
        iters,
    })
}

pub(crate) fn hard_labels(resp: &DMatrix<f64>) -> Vec<usize> {
    (0..resp.nrows())
        .map(|i| {
            let mut best = 0;
            for j in 1..resp.ncols() {
                if resp[(i, j)] > resp[(i, best)] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::LN_2PI;
    use rand_distr::{Distribution, StandardNormal};

    fn two_cluster_data(n_per: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(2 * n_per, 2);
        for i in 0..2 * n_per {
            let shift = if i < n_per { 0.0 } else { 10.0 };
            for j in 0..2 {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[(i, j)] = shift + z;
            }
        }
        x
    }

    #[test]
    fn param_counts_match_formula() {
        assert_eq!(count_params_gmm(3, 1, CovParam::FullVarying), 9);
        assert_eq!(count_params_gmm(2, 2, CovParam::FullVarying), 11);
        assert_eq!(count_params_gmm(3, 2, CovParam::SphericalEqual), 8);
        assert_eq!(count_params_gmm(4, 3, CovParam::DiagonalVarying), 26);
    }

    #[test]
    fn k1_matches_closed_form() {
        let x = two_cluster_data(30, 11);
        let (n, d) = x.shape();
        let fit = fit_gmm(&x, 1, CovParam::FullVarying, &EmControl::default()).unwrap();
        // closed-form Gaussian ML log-likelihood: -n/2 (d ln 2pi + ln|S| + d)
        let mean = x.row_mean();
        let mut s = DMatrix::zeros(d, d);
        for i in 0..n {
            let e = x.row(i) - &mean;
            s += e.transpose() * e;
        }
        s /= n as f64;
        let want = -0.5 * n as f64 * (d as f64 * LN_2PI + s.determinant().ln() + d as f64);
        assert!(
            (fit.loglik - want).abs() < 1e-6,
            "got {} want {}",
            fit.loglik,
            want
        );
        if let BlockParams::Gmm(p) = &fit.params {
            assert!((p.means[0][0] - mean[0]).abs() < 1e-10);
        } else {
            panic!("wrong params variant");
        }
    }

    #[test]
    fn recovers_two_separated_clusters() {
        let x = two_cluster_data(200, 5);
        let fit = fit_gmm(&x, 2, CovParam::SphericalVarying, &EmControl::default()).unwrap();
        let BlockParams::Gmm(p) = &fit.params else {
            panic!()
        };
        let mut means: Vec<_> = p.means.iter().map(|m| (m[0], m[1])).collect();
        means.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((means[0].0).abs() < 0.2 && (means[0].1).abs() < 0.2);
        assert!((means[1].0 - 10.0).abs() < 0.2 && (means[1].1 - 10.0).abs() < 0.2);
        for w in &p.weights {
            assert!((w - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn structural_constraints_hold_exactly() {
        let x = two_cluster_data(100, 3);
        let fit = fit_gmm(&x, 2, CovParam::DiagonalVarying, &EmControl::default()).unwrap();
        let BlockParams::Gmm(p) = &fit.params else {
            panic!()
        };
        for c in &p.covariances {
            assert_eq!(c[(0, 1)], 0.0);
            assert_eq!(c[(1, 0)], 0.0);
        }
        let fit = fit_gmm(&x, 2, CovParam::FullEqual, &EmControl::default()).unwrap();
        let BlockParams::Gmm(p) = &fit.params else {
            panic!()
        };
        assert_eq!(p.covariances[0], p.covariances[1]);
        let fit = fit_gmm(&x, 2, CovParam::SphericalVarying, &EmControl::default()).unwrap();
        let BlockParams::Gmm(p) = &fit.params else {
            panic!()
        };
        for c in &p.covariances {
            assert_eq!(c[(0, 0)], c[(1, 1)]);
            assert_eq!(c[(0, 1)], 0.0);
        }
    }

    #[test]
    fn loglik_trace_is_monotone() {
        let x = two_cluster_data(150, 9);
        let (_, diag) =
            fit_gmm_detailed(&x, 2, CovParam::FullVarying, &EmControl::default()).unwrap();
        for w in diag.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "trace decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn posteriors_are_row_stochastic() {
        let x = two_cluster_data(80, 21);
        let fit = fit_gmm(&x, 3, CovParam::FullVarying, &EmControl::default()).unwrap();
        for i in 0..x.nrows() {
            let s: f64 = (0..3).map(|j| fit.posteriors[(i, j)]).sum();
            assert!((s - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn k_larger_than_n_is_input_error() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert!(matches!(
            fit_gmm(&x, 3, CovParam::FullVarying, &EmControl::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn degenerate_data_reports_component() {
        // all points identical: no covariance can stay above the floor
        let x = DMatrix::from_element(20, 2, 1.0);
        let err = fit_gmm(&x, 2, CovParam::FullVarying, &EmControl::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateFit { .. }));
    }

    #[test]
    fn deterministic_given_seed() {
        let x = two_cluster_data(100, 2);
        let a = fit_gmm(&x, 2, CovParam::FullVarying, &EmControl::default()).unwrap();
        let b = fit_gmm(&x, 2, CovParam::FullVarying, &EmControl::default()).unwrap();
        assert_eq!(a.loglik.to_bits(), b.loglik.to_bits());
    }
}
