//! Closed-form ML fitting of multivariate Gaussian linear regression, used
//! for the uninformative block (regressed on informative variables) and the
//! independent block (no regressors at all).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blockfit::{BlockFit, BlockParams};
use crate::error::{Error, Result};
use crate::mixture::LN_2PI;

/// Residual variance below this times the mean response variance counts as a
/// perfect-fit degeneracy.
const DEGENERACY_SCALE: f64 = 1e-12;

/// Structural form of the error covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SigmaForm {
    Spherical,
    Diagonal,
    Full,
}

impl SigmaForm {
    pub const ALL: [SigmaForm; 3] = [SigmaForm::Spherical, SigmaForm::Diagonal, SigmaForm::Full];

    pub fn param_count(self, l: usize) -> usize {
        match self {
            SigmaForm::Spherical => 1,
            SigmaForm::Diagonal => l,
            SigmaForm::Full => l * (l + 1) / 2,
        }
    }
}

/// ML parameters of a multivariate Gaussian linear regression
/// y = intercept + coefficients * z + eps, eps ~ N(0, sigma).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinRegParams {
    #[serde(with = "crate::serde_mat::vector")]
    pub intercept: DVector<f64>,
    /// L_U x p coefficient matrix; p = 0 encodes the independent-block fit.
    #[serde(with = "crate::serde_mat::matrix")]
    pub coefficients: DMatrix<f64>,
    pub sigma_form: SigmaForm,
    #[serde(with = "crate::serde_mat::matrix")]
    pub sigma: DMatrix<f64>,
}

/// Parameter count: intercepts, coefficients and the covariance form.
/// An empty block (l = 0) contributes nothing.
pub fn count_params_linreg(l: usize, p: usize, form: SigmaForm) -> usize {
    if l == 0 {
        return 0;
    }
    l + l * p + form.param_count(l)
}

/// Closed-form ML fit of `y` on `z` (plus intercept). With no regressor
/// columns this reduces to the mean/covariance fit of the independent block.
pub fn fit_linreg(y: &DMatrix<f64>, z: &DMatrix<f64>, form: SigmaForm) -> Result<BlockFit> {
    let (n, l) = y.shape();
    let p = z.ncols();
    if l == 0 {
        return Err(Error::InvalidInput(
            "empty response block; caller must skip this factor".into(),
        ));
    }
    if z.nrows() != n {
        return Err(Error::InvalidInput(
            "responses and regressors disagree on n".into(),
        ));
    }
    if n <= p + 1 {
        return Err(Error::InvalidInput(format!(
            "need more observations ({n}) than regression parameters ({})",
            p + 1
        )));
    }

    // Design with leading intercept column.
    let mut x = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 0..p {
            x[(i, j + 1)] = z[(i, j)];
        }
    }
    check_full_rank(&x)?;

    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    // theta = R^{-1} Q' y, one solve per response column
    let qty = q.transpose() * y;
    let theta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient { columns: vec![] })?;

    let resid = y - &x * &theta;
    let mut s = resid.transpose() * &resid;
    s /= n as f64;
    s = (&s + s.transpose()) * 0.5;

    let floor = DEGENERACY_SCALE * mean_diag(&y_covariance(y)) + f64::MIN_POSITIVE;
    let (sigma, loglik) = structured_sigma(&s, form, n, floor)?;

    let intercept = theta.row(0).transpose();
    let coefficients = theta.rows(1, p).transpose();

    Ok(BlockFit {
        params: BlockParams::LinReg(LinRegParams {
            intercept,
            coefficients,
            sigma_form: form,
            sigma,
        }),
        loglik,
        npar: count_params_linreg(l, p, form),
        posteriors: DMatrix::from_element(n, 1, 1.0),
        labels: vec![0; n],
    })
}

fn y_covariance(y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = y.nrows();
    let mean = y.row_mean();
    let mut s = DMatrix::zeros(y.ncols(), y.ncols());
    for i in 0..n {
        let e = y.row(i) - &mean;
        s += e.transpose() * e;
    }
    s / n as f64
}

fn mean_diag(m: &DMatrix<f64>) -> f64 {
    m.trace() / m.nrows() as f64
}

fn structured_sigma(
    s: &DMatrix<f64>,
    form: SigmaForm,
    n: usize,
    floor: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let l = s.nrows();
    let nf = n as f64;
    match form {
        SigmaForm::Full => {
            let chol = nalgebra::Cholesky::new(s.clone())
                .ok_or(Error::DegenerateFit { component: 0 })?;
            let lmat = chol.unpack();
            let logdet: f64 = 2.0 * (0..l).map(|j| lmat[(j, j)].ln()).sum::<f64>();
            let min_diag = (0..l).map(|j| s[(j, j)]).fold(f64::INFINITY, f64::min);
            if min_diag < floor || !logdet.is_finite() {
                return Err(Error::DegenerateFit { component: 0 });
            }
            let ll = -0.5 * nf * (l as f64 * LN_2PI + logdet + l as f64);
            Ok((s.clone(), ll))
        }
        SigmaForm::Diagonal => {
            let mut sigma = DMatrix::zeros(l, l);
            let mut logdet = 0.0;
            for j in 0..l {
                let v = s[(j, j)];
                if v < floor {
                    return Err(Error::DegenerateFit { component: 0 });
                }
                sigma[(j, j)] = v;
                logdet += v.ln();
            }
            let ll = -0.5 * nf * (l as f64 * LN_2PI + logdet + l as f64);
            Ok((sigma, ll))
        }
        SigmaForm::Spherical => {
            let v = s.trace() / l as f64;
            if v < floor {
                return Err(Error::DegenerateFit { component: 0 });
            }
            let sigma = DMatrix::from_diagonal_element(l, l, v);
            let ll = -0.5 * nf * (l as f64) * (LN_2PI + v.ln() + 1.0);
            Ok((sigma, ll))
        }
    }
}

/// Rank check of the design matrix by modified Gram-Schmidt with
/// re-orthogonalization; reports the regressor columns (0-based, intercept
/// excluded) that are linearly dependent on earlier ones.
pub(crate) fn check_full_rank(x: &DMatrix<f64>) -> Result<()> {
    let (n, cols) = x.shape();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent: Vec<usize> = Vec::new();
    for j in 0..cols {
        let mut v = DVector::from_fn(n, |i, _| x[(i, j)]);
        let scale = v.norm();
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v -= b * proj;
            }
        }
        let tol = scale.max(f64::MIN_POSITIVE) * 1e-10 * n as f64;
        if v.norm() <= tol {
            // column 0 is the intercept; report regressor indices
            dependent.push(j.saturating_sub(1));
        } else {
            let norm = v.norm();
            basis.push(v / norm);
        }
    }
    if dependent.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient {
            columns: dependent,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn toy_regression(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let mut y = DMatrix::zeros(n, 2);
        for i in 0..n {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            y[(i, 0)] = 1.0 + 2.0 * z[(i, 0)] - z[(i, 1)] + e1;
            y[(i, 1)] = -0.5 + 0.5 * z[(i, 0)] + 0.3 * e1 + e2;
        }
        (y, z)
    }

    #[test]
    fn param_counts_match_formula() {
        assert_eq!(count_params_linreg(1, 1, SigmaForm::Full), 3);
        assert_eq!(count_params_linreg(2, 3, SigmaForm::Diagonal), 10);
        assert_eq!(count_params_linreg(0, 5, SigmaForm::Full), 0);
    }

    #[test]
    fn intercept_only_reduces_to_mean_and_covariance() {
        let (y, _) = toy_regression(200, 1);
        let z = DMatrix::zeros(200, 0);
        let fit = fit_linreg(&y, &z, SigmaForm::Full).unwrap();
        let BlockParams::LinReg(p) = &fit.params else {
            panic!()
        };
        let mean = y.row_mean();
        assert!((p.intercept[0] - mean[0]).abs() < 1e-10);
        assert!((p.intercept[1] - mean[1]).abs() < 1e-10);
        let s = y_covariance(&y);
        assert!((p.sigma[(0, 1)] - s[(0, 1)]).abs() < 1e-10);
    }

    #[test]
    fn recovers_coefficients() {
        let (y, z) = toy_regression(5000, 7);
        let fit = fit_linreg(&y, &z, SigmaForm::Full).unwrap();
        let BlockParams::LinReg(p) = &fit.params else {
            panic!()
        };
        assert!((p.coefficients[(0, 0)] - 2.0).abs() < 0.1);
        assert!((p.coefficients[(0, 1)] + 1.0).abs() < 0.1);
        assert!((p.coefficients[(1, 0)] - 0.5).abs() < 0.1);
    }

    #[test]
    fn residuals_orthogonal_to_regressors() {
        let (y, z) = toy_regression(300, 3);
        let fit = fit_linreg(&y, &z, SigmaForm::Full).unwrap();
        let BlockParams::LinReg(p) = &fit.params else {
            panic!()
        };
        let fitted = {
            let mut f = DMatrix::zeros(y.nrows(), y.ncols());
            for i in 0..y.nrows() {
                for l in 0..y.ncols() {
                    let mut v = p.intercept[l];
                    for j in 0..z.ncols() {
                        v += p.coefficients[(l, j)] * z[(i, j)];
                    }
                    f[(i, l)] = v;
                }
            }
            f
        };
        let resid = &y - fitted;
        let cross = z.transpose() * resid;
        for v in cross.iter() {
            assert!(v.abs() < 1e-8 * y.nrows() as f64);
        }
    }

    #[test]
    fn form_nesting_orders_logliks() {
        let (y, z) = toy_regression(250, 9);
        let full = fit_linreg(&y, &z, SigmaForm::Full).unwrap().loglik;
        let diag = fit_linreg(&y, &z, SigmaForm::Diagonal).unwrap().loglik;
        let sph = fit_linreg(&y, &z, SigmaForm::Spherical).unwrap().loglik;
        assert!(full >= diag - 1e-8);
        assert!(diag >= sph - 1e-8);
    }

    #[test]
    fn perfect_fit_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = DMatrix::from_fn(50, 1, |_, _| StandardNormal.sample(&mut rng));
        let y = z.clone();
        let err = fit_linreg(&y, &z, SigmaForm::Full).unwrap_err();
        assert!(matches!(err, Error::DegenerateFit { .. }));
    }

    #[test]
    fn collinear_regressors_name_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = DMatrix::from_fn(60, 1, |_, _| StandardNormal.sample(&mut rng));
        let mut z = DMatrix::zeros(60, 3);
        for i in 0..60 {
            z[(i, 0)] = base[(i, 0)];
            z[(i, 1)] = StandardNormal.sample(&mut rng);
            z[(i, 2)] = 2.0 * base[(i, 0)]; // duplicate direction
        }
        let y = DMatrix::from_fn(60, 1, |i, _| z[(i, 1)] + 0.1 * i as f64);
        let err = fit_linreg(&y, &z, SigmaForm::Full).unwrap_err();
        match err {
            Error::RankDeficient { columns } => {
                assert!(columns.contains(&0) || columns.contains(&2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
