//! Internal EM plumbing shared by the mixture fitters: log-domain density
//! evaluation, responsibility normalization, structured covariance updates
//! with an eigenvalue floor, and k-means seeding.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;

use crate::gmm::CovParam;

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Cholesky factor of a covariance matrix, prepared for repeated density
/// evaluation without allocation.
pub(crate) struct GaussFactor {
    l: DMatrix<f64>,
    logdet: f64,
}

impl GaussFactor {
    pub fn new(cov: &DMatrix<f64>) -> Option<Self> {
        let chol = Cholesky::new(cov.clone())?;
        let l = chol.unpack();
        let logdet = 2.0 * (0..l.nrows()).map(|j| l[(j, j)].ln()).sum::<f64>();
        if !logdet.is_finite() {
            return None;
        }
        Some(GaussFactor { l, logdet })
    }

    /// Log density of N(0, Sigma) at the residual in `resid`, which is
    /// overwritten with the whitened vector.
    #[inline]
    pub fn log_density(&self, resid: &mut [f64]) -> f64 {
        let d = resid.len();
        let mut q = 0.0;
        for j in 0..d {
            let mut s = resid[j];
            for m in 0..j {
                s -= self.l[(j, m)] * resid[m];
            }
            let v = s / self.l[(j, j)];
            resid[j] = v;
            q += v * v;
        }
        -0.5 * (d as f64 * LN_2PI + self.logdet + q)
    }
}

/// Turn a matrix of joint log densities (ln pi_k + ln phi_k per cell) into
/// responsibilities in place; returns the observed-data log-likelihood.
pub(crate) fn normalize_log_rows(m: &mut DMatrix<f64>) -> f64 {
    let (n, k) = m.shape();
    let mut total = 0.0;
    for i in 0..n {
        let mut mx = f64::NEG_INFINITY;
        for j in 0..k {
            mx = mx.max(m[(i, j)]);
        }
        let mut s = 0.0;
        for j in 0..k {
            s += (m[(i, j)] - mx).exp();
        }
        let lse = mx + s.ln();
        for j in 0..k {
            m[(i, j)] = (m[(i, j)] - lse).exp();
        }
        total += lse;
    }
    total
}

/// Structured component covariances from per-component scatter matrices
/// (sum_i r_ik e_ik e_ik'). Eigenvalues below `floor` are clamped; the first
/// clamped component index is reported so degeneracy can be attributed.
pub(crate) fn covariances_from_scatter(
    scatters: &[DMatrix<f64>],
    nk: &[f64],
    n: f64,
    param: CovParam,
    floor: f64,
) -> (Vec<DMatrix<f64>>, Option<usize>) {
    let k = scatters.len();
    let d = scatters[0].nrows();
    let mut floored: Option<usize> = None;
    let mut record = |comp: usize, flag: bool| {
        if flag && floored.is_none() {
            floored = Some(comp);
        }
    };

    let bases: Vec<DMatrix<f64>> = if param.tied() {
        let mut pooled = DMatrix::zeros(d, d);
        for s in scatters {
            pooled += s;
        }
        pooled /= n;
        vec![pooled]
    } else {
        scatters
            .iter()
            .zip(nk)
            .map(|(s, &w)| s / w)
            .collect()
    };

    let shaped: Vec<DMatrix<f64>> = bases
        .iter()
        .enumerate()
        .map(|(idx, b)| {
            let (m, flag) = shape_covariance(b, param, floor);
            record(idx, flag);
            m
        })
        .collect();

    let covs = if param.tied() {
        vec![shaped[0].clone(); k]
    } else {
        shaped
    };
    (covs, floored)
}

fn shape_covariance(base: &DMatrix<f64>, param: CovParam, floor: f64) -> (DMatrix<f64>, bool) {
    let d = base.nrows();
    match param {
        CovParam::FullEqual | CovParam::FullVarying => {
            let sym = (base + base.transpose()) * 0.5;
            let eig = SymmetricEigen::new(sym.clone());
            let min = eig.eigenvalues.min();
            if min < floor {
                let mut vals = eig.eigenvalues.clone();
                for v in vals.iter_mut() {
                    *v = v.max(floor);
                }
                let rebuilt =
                    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
                ((&rebuilt + rebuilt.transpose()) * 0.5, true)
            } else {
                (sym, false)
            }
        }
        CovParam::DiagonalEqual | CovParam::DiagonalVarying => {
            let mut flag = false;
            let mut m = DMatrix::zeros(d, d);
            for j in 0..d {
                let mut v = base[(j, j)];
                if v < floor {
                    v = floor;
                    flag = true;
                }
                m[(j, j)] = v;
            }
            (m, flag)
        }
        CovParam::SphericalEqual | CovParam::SphericalVarying => {
            let mut v = base.trace() / d as f64;
            let flag = v < floor;
            if flag {
                v = floor;
            }
            (DMatrix::from_diagonal_element(d, d, v), flag)
        }
    }
}

/// Random responsibilities: uniform draws normalized per row.
pub(crate) fn random_responsibilities(n: usize, k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>().max(1e-12));
    for i in 0..n {
        let s: f64 = (0..k).map(|j| m[(i, j)]).sum();
        for j in 0..k {
            m[(i, j)] /= s;
        }
    }
    m
}

pub(crate) fn onehot_responsibilities(labels: &[usize], k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(labels.len(), k);
    for (i, &l) in labels.iter().enumerate() {
        m[(i, l)] = 1.0;
    }
    m
}

/// Plain Lloyd k-means used only to seed EM starts. Empty clusters are
/// refilled with the point farthest from its assigned center.
pub(crate) fn kmeans(x: &DMatrix<f64>, k: usize, rng: &mut impl Rng, iters: usize) -> Vec<usize> {
    let (n, d) = x.shape();
    if k == 1 {
        return vec![0; n];
    }
    let picks = sample(rng, n, k.min(n));
    let mut centers: Vec<Vec<f64>> = picks
        .iter()
        .map(|i| (0..d).map(|j| x[(i, j)]).collect())
        .collect();
    let mut labels = vec![0usize; n];
    for _ in 0..iters {
        // assignment
        let mut dists = vec![0.0f64; n];
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let mut dist = 0.0;
                for j in 0..d {
                    let diff = x[(i, j)] - center[j];
                    dist += diff * diff;
                }
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            labels[i] = best;
            dists[i] = best_d;
        }
        // refill empty clusters with the worst-fitting point
        for c in 0..k {
            if !labels.contains(&c) {
                let (far, _) = dists
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap();
                labels[far] = c;
                dists[far] = 0.0;
            }
        }
        // update
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0f64; d]; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..d {
                sums[labels[i]][j] += x[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centers[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
    }
    labels
}

/// Mean of the per-column ML variances; the degeneracy floor scales off this.
pub(crate) fn mean_column_variance(x: &DMatrix<f64>) -> f64 {
    let (n, d) = x.shape();
    let mut total = 0.0;
    for j in 0..d {
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        total += var;
    }
    total / d as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_factor_matches_direct_formula() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let f = GaussFactor::new(&cov).unwrap();
        let mut r = [0.5, -1.2];
        let got = f.log_density(&mut r);
        let det: f64 = 2.0 * 1.0 - 0.09;
        let inv = DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 2.0]) / det;
        let v = nalgebra::DVector::from_row_slice(&[0.5, -1.2]);
        let q = (v.transpose() * inv * &v)[(0, 0)];
        let want = -0.5 * (2.0 * LN_2PI + det.ln() + q);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn normalize_rows_sum_to_one() {
        let mut m = DMatrix::from_row_slice(2, 3, &[-700.0, -701.0, -705.0, 0.0, -1.0, 3.0]);
        let ll = normalize_log_rows(&mut m);
        assert!(ll.is_finite());
        for i in 0..2 {
            let s: f64 = (0..3).map(|j| m[(i, j)]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spherical_update_uses_trace() {
        let s = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let (covs, floored) =
            covariances_from_scatter(&[s], &[2.0], 2.0, CovParam::SphericalVarying, 1e-12);
        assert!(floored.is_none());
        assert!((covs[0][(0, 0)] - 1.5).abs() < 1e-12);
        assert_eq!(covs[0][(0, 1)], 0.0);
    }
}
