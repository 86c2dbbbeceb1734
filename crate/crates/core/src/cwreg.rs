//! Mixtures of Gaussian linear regressions in which every component shares
//! one slope matrix; intercepts and error covariances vary by component.
//!
//! Fitting is by ECM: the slope update is a responsibility-weighted
//! generalized least squares solve holding intercepts and covariances fixed,
//! followed by closed-form intercept and structured-covariance updates. Each
//! conditional step is exact, so the observed-data log-likelihood never
//! decreases.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blockfit::{BlockFit, BlockParams, FitDiagnostics};
use crate::error::{Error, Result};
use crate::gmm::{hard_labels, CovParam, EmControl};
use crate::linreg::check_full_rank;
use crate::mixture::{
    covariances_from_scatter, kmeans, mean_column_variance, normalize_log_rows,
    onehot_responsibilities, random_responsibilities, GaussFactor,
};
use crate::util::mix_seed;

const FLOOR_SCALE: f64 = 1e-8;
const MIN_COMPONENT_MASS: f64 = 1e-8;
const CWREG_SEED_TAG: u64 = 0x637772;

/// Slope layout: one regressor set shared by the whole block, or one set per
/// response variable (seemingly unrelated regression). Indices refer to
/// columns of the regressor slice passed to `fit_cwreg`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionMode {
    Shared,
    Sur(Vec<Vec<usize>>),
}

/// Fitted clusterwise regression parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CwRegParams {
    pub k: usize,
    pub weights: Vec<f64>,
    /// Component intercepts gamma_k.
    #[serde(with = "crate::serde_mat::vector_vec")]
    pub intercepts: Vec<DVector<f64>>,
    /// L_g x p slope matrix shared by all components; entries outside the
    /// per-response regressor sets are exactly zero in SUR mode.
    #[serde(with = "crate::serde_mat::matrix")]
    pub slopes: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::matrix_vec")]
    pub covariances: Vec<DMatrix<f64>>,
    pub cov_param: CovParam,
    pub mode: RegressionMode,
}

impl CwRegParams {
    pub fn dim(&self) -> usize {
        self.intercepts.first().map_or(0, |g| g.len())
    }

    pub fn n_regressors(&self) -> usize {
        self.slopes.ncols()
    }
}

/// Free slope entries for a mode.
fn slope_count(l_g: usize, p: usize, mode: &RegressionMode) -> usize {
    match mode {
        RegressionMode::Shared => l_g * p,
        RegressionMode::Sur(sets) => sets.iter().map(|s| s.len()).sum(),
    }
}

/// Parameter count: weights, intercepts, slopes and covariance structure.
pub fn count_params_cwreg(
    l_g: usize,
    p: usize,
    k: usize,
    param: CovParam,
    mode: &RegressionMode,
) -> usize {
    (k - 1) + k * l_g + slope_count(l_g, p, mode) + param.param_count(l_g, k)
}

/// Support entries (response row, regressor column) of the slope matrix.
fn support(l_g: usize, p: usize, mode: &RegressionMode) -> Result<Vec<(usize, usize)>> {
    match mode {
        RegressionMode::Shared => Ok((0..l_g)
            .flat_map(|l| (0..p).map(move |j| (l, j)))
            .collect()),
        RegressionMode::Sur(sets) => {
            if sets.len() != l_g {
                return Err(Error::InvalidInput(format!(
                    "{} per-response regressor sets for {} responses",
                    sets.len(),
                    l_g
                )));
            }
            if l_g < 2 {
                return Err(Error::InvalidInput(
                    "per-response regressor sets need a block of >= 2 responses".into(),
                ));
            }
            let mut sup = Vec::new();
            for (l, set) in sets.iter().enumerate() {
                let mut seen = std::collections::BTreeSet::new();
                for &j in set {
                    if j >= p {
                        return Err(Error::InvalidInput(format!(
                            "regressor index {j} out of range for {p} regressors"
                        )));
                    }
                    if !seen.insert(j) {
                        return Err(Error::InvalidInput(format!(
                            "duplicate regressor index {j} for response {l}"
                        )));
                    }
                }
                for &j in seen.iter() {
                    sup.push((l, j));
                }
            }
            Ok(sup)
        }
    }
}

/// Fit a shared-slope mixture regression of `y` on `z` by ECM.
pub fn fit_cwreg(
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    k: usize,
    param: CovParam,
    mode: RegressionMode,
    ctrl: &EmControl,
) -> Result<BlockFit> {
    fit_cwreg_detailed(y, z, k, param, mode, ctrl).map(|(fit, _)| fit)
}

pub fn fit_cwreg_detailed(
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    k: usize,
    param: CovParam,
    mode: RegressionMode,
    ctrl: &EmControl,
) -> Result<(BlockFit, FitDiagnostics)> {
    let (n, l_g) = y.shape();
    let p = z.ncols();
    if l_g == 0 {
        return Err(Error::InvalidInput("empty response block".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("K must be >= 1".into()));
    }
    if z.nrows() != n {
        return Err(Error::InvalidInput(
            "responses and regressors disagree on n".into(),
        ));
    }
    ctrl.validate()?;
    let sup = support(l_g, p, &mode)?;
    let npar = count_params_cwreg(l_g, p, k, param, &mode);
    if n <= npar.max(k) {
        return Err(Error::InvalidInput(format!(
            "need more observations ({n}) than parameters ({npar})"
        )));
    }
    if p > 0 {
        let mut x = DMatrix::zeros(n, p + 1);
        for i in 0..n {
            x[(i, 0)] = 1.0;
            for j in 0..p {
                x[(i, j + 1)] = z[(i, j)];
            }
        }
        check_full_rank(&x)?;
    }

    // Center the regressors; this decouples intercepts from slopes so the
    // K=1 cycle lands on the OLS solution immediately.
    let zbar: Vec<f64> = (0..p).map(|j| z.column(j).sum() / n as f64).collect();
    let zc = {
        let mut m = z.clone();
        for i in 0..n {
            for j in 0..p {
                m[(i, j)] -= zbar[j];
            }
        }
        m
    };
    let floor = FLOOR_SCALE * mean_column_variance(y);

    let n_starts = if k == 1 { 0 } else { ctrl.n_starts };
    let mut best: Option<(EcmRun, usize)> = None;
    let mut first_err: Option<Error> = None;
    for start in 0..=n_starts {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(ctrl.seed, &[CWREG_SEED_TAG, start as u64]));
        let resp0 = if start == 0 {
            let resid = ols_residuals(y, &zc, &sup);
            let labels = kmeans(&resid, k, &mut rng, 10);
            onehot_responsibilities(&labels, k)
        } else {
            random_responsibilities(n, k, &mut rng)
        };
        match run_ecm(y, &zc, k, param, ctrl, floor, &sup, resp0) {
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
    let (mut run, start) = match best {
        Some(b) => b,
        None => return Err(first_err.expect("at least one start attempted")),
    };

    // Undo the centering: gamma_k in the original regressor scale.
    for gam in run.intercepts.iter_mut() {
        for (l, gv) in gam.iter_mut().enumerate() {
            let mut shift = 0.0;
            for j in 0..p {
                shift += run.slopes[(l, j)] * zbar[j];
            }
            *gv -= shift;
        }
    }

    let labels = hard_labels(&run.resp);
    let fit = BlockFit {
        params: BlockParams::CwReg(CwRegParams {
            k,
            weights: run.weights,
            intercepts: run.intercepts,
            slopes: run.slopes,
            covariances: run.covariances,
            cov_param: param,
            mode,
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

/// OLS residuals (shared support union), used to seed the component split.
fn ols_residuals(y: &DMatrix<f64>, zc: &DMatrix<f64>, sup: &[(usize, usize)]) -> DMatrix<f64> {
    let (n, l_g) = y.shape();
    let p = zc.ncols();
    let ybar = y.row_mean();
    if p == 0 || sup.is_empty() {
        let mut r = y.clone();
        for i in 0..n {
            for l in 0..l_g {
                r[(i, l)] -= ybar[l];
            }
        }
        return r;
    }
    let m = zc.transpose() * zc;
    let c = {
        let mut yc = y.clone();
        for i in 0..n {
            for l in 0..l_g {
                yc[(i, l)] -= ybar[l];
            }
        }
        yc.transpose() * zc
    };
    let b = match m.clone().cholesky() {
        Some(ch) => {
            let sol = ch.solve(&c.transpose()); // p x L_g
            sol.transpose()
        }
        None => DMatrix::zeros(l_g, p),
    };
    let fitted = zc * b.transpose();
    let mut r = y - fitted;
    for i in 0..n {
        for l in 0..l_g {
            r[(i, l)] -= ybar[l];
        }
    }
    r
}

struct EcmRun {
    weights: Vec<f64>,
    intercepts: Vec<DVector<f64>>,
    slopes: DMatrix<f64>,
    covariances: Vec<DMatrix<f64>>,
    loglik: f64,
    resp: DMatrix<f64>,
    trace: Vec<f64>,
    iters: usize,
}

#[allow(clippy::too_many_arguments)]
fn run_ecm(
    y: &DMatrix<f64>,
    zc: &DMatrix<f64>,
    k: usize,
    param: CovParam,
    ctrl: &EmControl,
    floor: f64,
    sup: &[(usize, usize)],
    mut resp: DMatrix<f64>,
) -> Result<EcmRun> {
    let (n, l_g) = y.shape();
    let p = zc.ncols();
    let nf = n as f64;

    let mut weights = vec![0.0; k];
    let mut slopes = DMatrix::zeros(l_g, p);

    // Initial intercepts/covariances from the starting responsibilities with
    // zero slopes (a plain mixture M-step).
    let mut nk = vec![0.0f64; k];
    for j in 0..k {
        nk[j] = resp.column(j).sum();
        if nk[j] < MIN_COMPONENT_MASS {
            return Err(Error::DegenerateFit { component: j });
        }
    }
    let mut intercepts: Vec<DVector<f64>> = (0..k)
        .map(|j| {
            let mut g = DVector::zeros(l_g);
            for i in 0..n {
                let r = resp[(i, j)];
                for l in 0..l_g {
                    g[l] += r * y[(i, l)];
                }
            }
            g / nk[j]
        })
        .collect();
    let mut covariances = {
        let scatters = residual_scatters(y, &DMatrix::zeros(n, l_g), &intercepts, &resp);
        let (covs, _) = covariances_from_scatter(&scatters, &nk, nf, param, floor);
        covs
    };

    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut consecutive_floors = 0usize;
    let mut iters = 0;
    let mut resid = vec![0.0f64; l_g];

    for iter in 0..ctrl.max_iter {
        iters = iter + 1;
        for j in 0..k {
            nk[j] = resp.column(j).sum();
            if nk[j] < MIN_COMPONENT_MASS {
                return Err(Error::DegenerateFit { component: j });
            }
            weights[j] = nk[j] / nf;
        }

        // CM step 1: slopes by weighted GLS given intercepts and covariances.
        if !sup.is_empty() {
            let w_inv: Vec<DMatrix<f64>> = covariances
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    Cholesky::new(c.clone())
                        .map(|ch| ch.inverse())
                        .ok_or(Error::DegenerateFit { component: j })
                })
                .collect::<Result<_>>()?;
            // sufficient statistics per component
            let mut m_k: Vec<DMatrix<f64>> = vec![DMatrix::zeros(p, p); k];
            let mut c_k: Vec<DMatrix<f64>> = vec![DMatrix::zeros(l_g, p); k];
            for i in 0..n {
                for j in 0..k {
                    let r = resp[(i, j)];
                    if r == 0.0 {
                        continue;
                    }
                    for a in 0..p {
                        let za = zc[(i, a)];
                        for b in a..p {
                            m_k[j][(a, b)] += r * za * zc[(i, b)];
                        }
                        for l in 0..l_g {
                            c_k[j][(l, a)] += r * (y[(i, l)] - intercepts[j][l]) * za;
                        }
                    }
                }
            }
            for j in 0..k {
                for a in 0..p {
                    for b in 0..a {
                        m_k[j][(a, b)] = m_k[j][(b, a)];
                    }
                }
            }
            let s = sup.len();
            let mut a_mat = DMatrix::zeros(s, s);
            let mut rhs = DVector::zeros(s);
            for j in 0..k {
                let wc = &w_inv[j] * &c_k[j];
                for (ai, &(l, jc)) in sup.iter().enumerate() {
                    rhs[ai] += wc[(l, jc)];
                    for (ci, &(m, b)) in sup.iter().enumerate() {
                        a_mat[(ai, ci)] += w_inv[j][(l, m)] * m_k[j][(jc, b)];
                    }
                }
            }
            let sol = match a_mat.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => a_mat
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::RankDeficient { columns: vec![] })?,
            };
            slopes.fill(0.0);
            for (ai, &(l, jc)) in sup.iter().enumerate() {
                slopes[(l, jc)] = sol[ai];
            }
        }
        let fitted = zc * slopes.transpose(); // n x L_g

        // CM step 2: intercepts given slopes.
        for j in 0..k {
            let mut g = DVector::zeros(l_g);
            for i in 0..n {
                let r = resp[(i, j)];
                for l in 0..l_g {
                    g[l] += r * (y[(i, l)] - fitted[(i, l)]);
                }
            }
            intercepts[j] = g / nk[j];
        }

        // CM step 3: structured covariances given slopes and intercepts.
        let scatters = residual_scatters(y, &fitted, &intercepts, &resp);
        let (covs, floored) = covariances_from_scatter(&scatters, &nk, nf, param, floor);
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
                for l in 0..l_g {
                    resid[l] = y[(i, l)] - intercepts[j][l] - fitted[(i, l)];
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

    Ok(EcmRun {
        weights,
        intercepts,
        slopes,
        covariances,
        loglik: prev,
        resp,
        trace,
        iters,
    })
}

fn residual_scatters(
    y: &DMatrix<f64>,
    fitted: &DMatrix<f64>,
    intercepts: &[DVector<f64>],
    resp: &DMatrix<f64>,
) -> Vec<DMatrix<f64>> {
    let (n, l_g) = y.shape();
    intercepts
        .iter()
        .enumerate()
        .map(|(j, gam)| {
            let mut s = DMatrix::zeros(l_g, l_g);
            let mut e = vec![0.0f64; l_g];
            for i in 0..n {
                let r = resp[(i, j)];
                if r == 0.0 {
                    continue;
                }
                for l in 0..l_g {
                    e[l] = y[(i, l)] - gam[l] - fitted[(i, l)];
                }
                for a in 0..l_g {
                    for b in a..l_g {
                        s[(a, b)] += r * e[a] * e[b];
                    }
                }
            }
            for a in 0..l_g {
                for b in 0..a {
                    s[(a, b)] = s[(b, a)];
                }
            }
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linreg::{fit_linreg, SigmaForm};
    use rand_distr::{Distribution, StandardNormal};

    fn shared_slope_data(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        // two regression lines with common slope 1 and intercepts 0 and 5
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, 1, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            3.0 * v
        });
        let mut y = DMatrix::zeros(n, 1);
        for i in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            let intercept = if i % 2 == 0 { 0.0 } else { 5.0 };
            y[(i, 0)] = intercept + z[(i, 0)] + e;
        }
        (y, z)
    }

    #[test]
    fn param_counts_match_formula() {
        assert_eq!(
            count_params_cwreg(1, 1, 2, CovParam::FullEqual, &RegressionMode::Shared),
            5
        );
        assert_eq!(
            count_params_cwreg(1, 1, 1, CovParam::FullVarying, &RegressionMode::Shared),
            3
        );
        assert_eq!(
            count_params_cwreg(3, 3, 2, CovParam::FullVarying, &RegressionMode::Shared),
            28
        );
        assert_eq!(
            count_params_cwreg(
                2,
                3,
                2,
                CovParam::FullVarying,
                &RegressionMode::Sur(vec![vec![0], vec![1, 2]])
            ),
            1 + 4 + 3 + 6
        );
    }

    #[test]
    fn k1_matches_closed_form_regression() {
        let (y, z) = shared_slope_data(300, 31);
        let ctrl = EmControl::default();
        let fit = fit_cwreg(
            &y,
            &z,
            1,
            CovParam::FullVarying,
            RegressionMode::Shared,
            &ctrl,
        )
        .unwrap();
        let oracle = fit_linreg(&y, &z, SigmaForm::Full).unwrap();
        assert!((fit.loglik - oracle.loglik).abs() < 1e-6);
        let BlockParams::CwReg(p) = &fit.params else {
            panic!()
        };
        let BlockParams::LinReg(q) = &oracle.params else {
            panic!()
        };
        assert!((p.slopes[(0, 0)] - q.coefficients[(0, 0)]).abs() < 1e-8);
        assert!((p.intercepts[0][0] - q.intercept[0]).abs() < 1e-8);
    }

    #[test]
    fn recovers_two_lines_with_shared_slope() {
        let (y, z) = shared_slope_data(600, 12);
        let fit = fit_cwreg(
            &y,
            &z,
            2,
            CovParam::FullVarying,
            RegressionMode::Shared,
            &EmControl::default(),
        )
        .unwrap();
        let BlockParams::CwReg(p) = &fit.params else {
            panic!()
        };
        assert!((p.slopes[(0, 0)] - 1.0).abs() < 0.05, "slope {}", p.slopes[(0, 0)]);
        let mut ints: Vec<f64> = p.intercepts.iter().map(|g| g[0]).collect();
        ints.sort_by(|a, b| a.total_cmp(b));
        assert!(ints[0].abs() < 0.2, "intercepts {ints:?}");
        assert!((ints[1] - 5.0).abs() < 0.2, "intercepts {ints:?}");
    }

    #[test]
    fn shared_and_sur_full_sets_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 240;
        let z = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let mut y = DMatrix::zeros(n, 2);
        for i in 0..n {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            let shift = if i % 2 == 0 { -2.0 } else { 2.0 };
            y[(i, 0)] = shift + z[(i, 0)] - 0.5 * z[(i, 1)] + e1;
            y[(i, 1)] = -shift + 2.0 * z[(i, 1)] + e2;
        }
        let ctrl = EmControl::default();
        let shared = fit_cwreg(
            &y,
            &z,
            2,
            CovParam::FullVarying,
            RegressionMode::Shared,
            &ctrl,
        )
        .unwrap();
        let sur = fit_cwreg(
            &y,
            &z,
            2,
            CovParam::FullVarying,
            RegressionMode::Sur(vec![vec![0, 1], vec![0, 1]]),
            &ctrl,
        )
        .unwrap();
        assert!(
            (shared.loglik - sur.loglik).abs() < 1e-6,
            "{} vs {}",
            shared.loglik,
            sur.loglik
        );
    }

    #[test]
    fn translation_equivariance() {
        let (y, z) = shared_slope_data(400, 9);
        let ctrl = EmControl::default();
        let base = fit_cwreg(
            &y,
            &z,
            2,
            CovParam::FullVarying,
            RegressionMode::Shared,
            &ctrl,
        )
        .unwrap();
        let mut z_shift = z.clone();
        for i in 0..z.nrows() {
            z_shift[(i, 0)] += 4.0;
        }
        let shifted = fit_cwreg(
            &y,
            &z_shift,
            2,
            CovParam::FullVarying,
            RegressionMode::Shared,
            &ctrl,
        )
        .unwrap();
        assert!((base.loglik - shifted.loglik).abs() < 1e-6);
        let BlockParams::CwReg(pb) = &base.params else {
            panic!()
        };
        let BlockParams::CwReg(ps) = &shifted.params else {
            panic!()
        };
        let mut ib: Vec<f64> = pb.intercepts.iter().map(|g| g[0]).collect();
        let mut is_: Vec<f64> = ps.intercepts.iter().map(|g| g[0]).collect();
        ib.sort_by(|a, b| a.total_cmp(b));
        is_.sort_by(|a, b| a.total_cmp(b));
        for (a, b) in ib.iter().zip(&is_) {
            assert!((a - (b + pb.slopes[(0, 0)] * 4.0)).abs() < 1e-4);
        }
    }

    #[test]
    fn empty_regressor_set_reduces_to_plain_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let n = 300;
        let mut y = DMatrix::zeros(n, 2);
        for i in 0..n {
            let shift = if i % 2 == 0 { 0.0 } else { 8.0 };
            for j in 0..2 {
                let e: f64 = StandardNormal.sample(&mut rng);
                y[(i, j)] = shift + e;
            }
        }
        let z = DMatrix::zeros(n, 0);
        let ctrl = EmControl::default();
        let reg = fit_cwreg(
            &y,
            &z,
            2,
            CovParam::FullVarying,
            RegressionMode::Shared,
            &ctrl,
        )
        .unwrap();
        let gmm = crate::gmm::fit_gmm(&y, 2, CovParam::FullVarying, &ctrl).unwrap();
        assert!((reg.loglik - gmm.loglik).abs() < 1e-6);
    }

    #[test]
    fn ecm_trace_is_monotone() {
        let (y, z) = shared_slope_data(350, 41);
        let (_, diag) = fit_cwreg_detailed(
            &y,
            &z,
            2,
            CovParam::FullVarying,
            RegressionMode::Shared,
            &EmControl::default(),
        )
        .unwrap();
        for w in diag.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
    }

    #[test]
    fn collinear_regressors_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100;
        let base = DMatrix::from_fn(n, 1, |_, _| StandardNormal.sample(&mut rng));
        let mut z = DMatrix::zeros(n, 2);
        for i in 0..n {
            z[(i, 0)] = base[(i, 0)];
            z[(i, 1)] = -3.0 * base[(i, 0)];
        }
        let y = DMatrix::from_fn(n, 1, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            z[(i, 0)] + e
        });
        let err = fit_cwreg(
            &y,
            &z,
            1,
            CovParam::FullVarying,
            RegressionMode::Shared,
            &EmControl::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }
}
