//! Necessary-condition identifiability check for one mixture block.
//!
//! A block with components (pi_t, gamma_t, Sigma_t) fails the necessary
//! condition when its variables split into (s_a, s_b) and its components
//! relabel onto a K_a x K_b grid such that the block density is the product
//! of an s_a mixture and an s_b mixture regressed on s_a through one shared
//! cross-slope matrix. The check enumerates ordered bipartitions and grid
//! factorizations (including K_a = 1 and K_b = 1, which degenerate to
//! block-independence tests) and searches component assignments exhaustively
//! with early pruning.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::blockfit::{BlockFit, BlockParams};
use crate::error::{Error, Result};

/// Weights, centers (means or intercepts) and covariances of one mixture
/// block, stripped of any cross-block slopes.
#[derive(Debug, Clone)]
pub struct MixtureComponents {
    pub weights: Vec<f64>,
    pub centers: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl MixtureComponents {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, |c| c.len())
    }

    /// Extract the mixture part of a fitted block.
    pub fn from_block(fit: &BlockFit) -> Result<Self> {
        match &fit.params {
            BlockParams::Gmm(p) => Ok(MixtureComponents {
                weights: p.weights.clone(),
                centers: p.means.clone(),
                covariances: p.covariances.clone(),
            }),
            BlockParams::CwReg(p) => Ok(MixtureComponents {
                weights: p.weights.clone(),
                centers: p.intercepts.clone(),
                covariances: p.covariances.clone(),
            }),
            BlockParams::LinReg(_) => Err(Error::InvalidInput(
                "identifiability check applies to mixture blocks only".into(),
            )),
        }
    }
}

/// Tolerance and combinatorial budget of the detector.
#[derive(Debug, Clone, Copy)]
pub struct IdentOptions {
    /// Element-wise closeness scale: |a-b| <= tol * max(1, |a|, |b|).
    pub tol: f64,
    /// Cap on assignment placements tried across the whole search.
    pub max_placements: u64,
    /// Refuse blocks wider than this.
    pub max_vars: usize,
    /// Refuse blocks with more components than this.
    pub max_components: usize,
}

impl Default for IdentOptions {
    fn default() -> Self {
        IdentOptions {
            tol: 1e-6,
            max_placements: 1_000_000,
            max_vars: 12,
            max_components: 8,
        }
    }
}

/// Outcome of the check.
#[derive(Debug, Clone)]
pub enum IdentVerdict {
    /// No factorization found: the necessary condition holds.
    Holds,
    /// A product structure was found; the block is not identifiable.
    Factorizes(Box<Witness>),
}

/// The factorization found: split, grid shape, component relabelling and the
/// reconstructed factor parameters.
#[derive(Debug, Clone)]
pub struct Witness {
    /// Variable indices (local to the block) of the leading factor.
    pub split_a: Vec<usize>,
    pub split_b: Vec<usize>,
    pub k_a: usize,
    pub k_b: usize,
    /// Component t maps to grid cell (assignment[t].0, assignment[t].1).
    pub assignment: Vec<(usize, usize)>,
    pub factor_a: MixtureComponents,
    pub factor_b: MixtureComponents,
    /// Shared cross-slope matrix B with s_b rows and s_a columns.
    pub cross_slopes: DMatrix<f64>,
}

/// Check the necessary condition on a fitted block (K >= 2, dim >= 2).
pub fn check_identifiability(fit: &BlockFit, opts: &IdentOptions) -> Result<IdentVerdict> {
    check_mixture_identifiability(&MixtureComponents::from_block(fit)?, opts)
}

/// Check the necessary condition on raw mixture parameters.
pub fn check_mixture_identifiability(
    mix: &MixtureComponents,
    opts: &IdentOptions,
) -> Result<IdentVerdict> {
    let k = mix.k();
    let d = mix.dim();
    if k < 2 || d < 2 {
        return Err(Error::InvalidInput(
            "identifiability check needs K >= 2 components and >= 2 variables".into(),
        ));
    }
    if d > opts.max_vars || k > opts.max_components {
        return Err(Error::BudgetExceeded(format!(
            "block too large for the identifiability search ({d} variables, {k} components)"
        )));
    }
    if mix.centers.len() != k || mix.covariances.len() != k {
        return Err(Error::InvalidInput("component count mismatch".into()));
    }

    let mut budget = Budget {
        left: opts.max_placements,
    };

    // Ordered bipartitions: every non-empty proper subset as s_a.
    for mask in 1u32..((1u32 << d) - 1) {
        let split_a: Vec<usize> = (0..d).filter(|&j| mask & (1 << j) != 0).collect();
        let split_b: Vec<usize> = (0..d).filter(|&j| mask & (1 << j) == 0).collect();
        if let Some(w) = try_bipartition(mix, &split_a, &split_b, opts, &mut budget)? {
            return Ok(IdentVerdict::Factorizes(Box::new(w)));
        }
    }
    Ok(IdentVerdict::Holds)
}

struct Budget {
    left: u64,
}

impl Budget {
    fn spend(&mut self) -> Result<()> {
        if self.left == 0 {
            return Err(Error::BudgetExceeded(
                "identifiability assignment search".into(),
            ));
        }
        self.left -= 1;
        Ok(())
    }
}

/// Derived per-component quantities for a fixed bipartition.
struct SplitParts {
    cov_a: Vec<DMatrix<f64>>,
    center_a: Vec<DVector<f64>>,
    cov_b: Vec<DMatrix<f64>>,
    center_b: Vec<DVector<f64>>,
    cross: DMatrix<f64>,
}

fn try_bipartition(
    mix: &MixtureComponents,
    split_a: &[usize],
    split_b: &[usize],
    opts: &IdentOptions,
    budget: &mut Budget,
) -> Result<Option<Witness>> {
    let k = mix.k();
    let parts = match derive_split(mix, split_a, split_b, opts)? {
        Some(p) => p,
        None => return Ok(None), // no shared cross-slope: prune this split
    };

    for k_a in 1..=k {
        if k % k_a != 0 {
            continue;
        }
        let k_b = k / k_a;
        let mut assignment = vec![usize::MAX; k]; // component -> cell index
        let mut used = vec![false; k];
        if search_assignment(
            &parts,
            mix,
            k_a,
            k_b,
            0,
            &mut assignment,
            &mut used,
            opts,
            budget,
        )? {
            let witness = build_witness(mix, &parts, split_a, split_b, k_a, k_b, &assignment);
            return Ok(Some(witness));
        }
    }
    Ok(None)
}

/// Per-component marginal/conditional decomposition along the split; `None`
/// when the implied cross-slopes differ between components.
fn derive_split(
    mix: &MixtureComponents,
    split_a: &[usize],
    split_b: &[usize],
    opts: &IdentOptions,
) -> Result<Option<SplitParts>> {
    let k = mix.k();
    let mut cov_a = Vec::with_capacity(k);
    let mut center_a = Vec::with_capacity(k);
    let mut cov_b = Vec::with_capacity(k);
    let mut center_b = Vec::with_capacity(k);
    let mut shared_cross: Option<DMatrix<f64>> = None;

    for t in 0..k {
        let sigma = &mix.covariances[t];
        let a = submatrix(sigma, split_a, split_a);
        let off = submatrix(sigma, split_b, split_a);
        let d = submatrix(sigma, split_b, split_b);
        let chol = Cholesky::new(a.clone()).ok_or_else(|| {
            Error::NotPositiveDefinite(format!("component {t} covariance sub-block"))
        })?;
        // B_t = Sigma_ba * Sigma_aa^{-1}
        let cross_t = chol.solve(&off.transpose()).transpose();
        match &shared_cross {
            None => shared_cross = Some(cross_t),
            Some(b0) => {
                if !mats_close(b0, &cross_t, opts.tol) {
                    return Ok(None);
                }
            }
        }
        cov_a.push(a);
        cov_b.push(d);
        center_a.push(subvector(&mix.centers[t], split_a));
        center_b.push(subvector(&mix.centers[t], split_b));
    }

    let cross = shared_cross.expect("k >= 2");
    // conditional covariance and intercept of the s_b factor
    for t in 0..k {
        let adj = &cross * &cov_a[t] * cross.transpose();
        cov_b[t] -= adj;
        let shift = &cross * &center_a[t];
        center_b[t] -= shift;
    }
    Ok(Some(SplitParts {
        cov_a,
        center_a,
        cov_b,
        center_b,
        cross,
    }))
}

/// Place components on the K_a x K_b grid cell by cell. A component fits a
/// cell when its marginal parameters match the row's established
/// representative and its conditional parameters match the column's.
#[allow(clippy::too_many_arguments)]
fn search_assignment(
    parts: &SplitParts,
    mix: &MixtureComponents,
    k_a: usize,
    k_b: usize,
    cell: usize,
    assignment: &mut [usize],
    used: &mut [bool],
    opts: &IdentOptions,
    budget: &mut Budget,
) -> Result<bool> {
    let k = mix.k();
    if cell == k {
        return Ok(weights_factorize(mix, k_a, k_b, assignment, opts.tol));
    }
    let row = cell / k_b;
    let col = cell % k_b;
    for t in 0..k {
        if used[t] {
            continue;
        }
        budget.spend()?;
        // row representative: the component in cell (row, 0)
        if col > 0 {
            let rep = assignment
                .iter()
                .position(|&c| c == row * k_b)
                .expect("row representative placed");
            if !mats_close(&parts.cov_a[t], &parts.cov_a[rep], opts.tol)
                || !vecs_close(&parts.center_a[t], &parts.center_a[rep], opts.tol)
            {
                continue;
            }
        }
        // column representative: the component in cell (0, col)
        if row > 0 {
            let rep = assignment
                .iter()
                .position(|&c| c == col)
                .expect("column representative placed");
            if !mats_close(&parts.cov_b[t], &parts.cov_b[rep], opts.tol)
                || !vecs_close(&parts.center_b[t], &parts.center_b[rep], opts.tol)
            {
                continue;
            }
        }
        assignment[t] = cell;
        used[t] = true;
        if search_assignment(
            parts, mix, k_a, k_b, cell + 1, assignment, used, opts, budget,
        )? {
            return Ok(true);
        }
        assignment[t] = usize::MAX;
        used[t] = false;
    }
    Ok(false)
}

/// pi_t must equal the product of its grid margins.
fn weights_factorize(
    mix: &MixtureComponents,
    k_a: usize,
    k_b: usize,
    assignment: &[usize],
    tol: f64,
) -> bool {
    let mut wa = vec![0.0; k_a];
    let mut wb = vec![0.0; k_b];
    for (t, &cell) in assignment.iter().enumerate() {
        wa[cell / k_b] += mix.weights[t];
        wb[cell % k_b] += mix.weights[t];
    }
    assignment.iter().enumerate().all(|(t, &cell)| {
        let expect = wa[cell / k_b] * wb[cell % k_b];
        close(mix.weights[t], expect, tol)
    })
}

fn build_witness(
    mix: &MixtureComponents,
    parts: &SplitParts,
    split_a: &[usize],
    split_b: &[usize],
    k_a: usize,
    k_b: usize,
    assignment: &[usize],
) -> Witness {
    let mut wa = vec![0.0; k_a];
    let mut wb = vec![0.0; k_b];
    let mut rep_a = vec![usize::MAX; k_a];
    let mut rep_b = vec![usize::MAX; k_b];
    for (t, &cell) in assignment.iter().enumerate() {
        let (row, col) = (cell / k_b, cell % k_b);
        wa[row] += mix.weights[t];
        wb[col] += mix.weights[t];
        if col == 0 {
            rep_a[row] = t;
        }
        if row == 0 {
            rep_b[col] = t;
        }
    }
    let factor_a = MixtureComponents {
        weights: wa,
        centers: rep_a.iter().map(|&t| parts.center_a[t].clone()).collect(),
        covariances: rep_a.iter().map(|&t| parts.cov_a[t].clone()).collect(),
    };
    let factor_b = MixtureComponents {
        weights: wb,
        centers: rep_b.iter().map(|&t| parts.center_b[t].clone()).collect(),
        covariances: rep_b.iter().map(|&t| parts.cov_b[t].clone()).collect(),
    };
    Witness {
        split_a: split_a.to_vec(),
        split_b: split_b.to_vec(),
        k_a,
        k_b,
        assignment: assignment.iter().map(|&c| (c / k_b, c % k_b)).collect(),
        factor_a,
        factor_b,
        cross_slopes: parts.cross.clone(),
    }
}

/// Compose the product of two mixtures into one block: component (k, k')
/// becomes component t = k * K_b + k' with
/// weight pi_a pi_b, stacked center and the product covariance implied by
/// regressing the second factor on the first through `cross`.
pub fn compose_product_block(
    a: &MixtureComponents,
    b: &MixtureComponents,
    cross: &DMatrix<f64>,
) -> Result<MixtureComponents> {
    let (la, lb) = (a.dim(), b.dim());
    if cross.nrows() != lb || cross.ncols() != la {
        return Err(Error::InvalidInput(format!(
            "cross-slope matrix must be {lb}x{la}"
        )));
    }
    let mut weights = Vec::with_capacity(a.k() * b.k());
    let mut centers = Vec::with_capacity(a.k() * b.k());
    let mut covariances = Vec::with_capacity(a.k() * b.k());
    for ka in 0..a.k() {
        for kb in 0..b.k() {
            weights.push(a.weights[ka] * b.weights[kb]);
            let mut center = DVector::zeros(la + lb);
            let shifted = &b.centers[kb] + cross * &a.centers[ka];
            center.rows_mut(0, la).copy_from(&a.centers[ka]);
            center.rows_mut(la, lb).copy_from(&shifted);
            centers.push(center);

            let saa = &a.covariances[ka];
            let sbb = &b.covariances[kb];
            let lower = cross * saa;
            let mut cov = DMatrix::zeros(la + lb, la + lb);
            cov.view_mut((0, 0), (la, la)).copy_from(saa);
            cov.view_mut((la, 0), (lb, la)).copy_from(&lower);
            cov.view_mut((0, la), (la, lb)).copy_from(&lower.transpose());
            cov.view_mut((la, la), (lb, lb))
                .copy_from(&(sbb + &lower * cross.transpose()));
            covariances.push(cov);
        }
    }
    Ok(MixtureComponents {
        weights,
        centers,
        covariances,
    })
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1.0f64.max(a.abs()).max(b.abs())
}

fn mats_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    a.iter().zip(b.iter()).all(|(&x, &y)| close(x, y, tol))
}

fn vecs_close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    a.iter().zip(b.iter()).all(|(&x, &y)| close(x, y, tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixture_1d(weights: &[f64], means: &[f64], vars: &[f64]) -> MixtureComponents {
        MixtureComponents {
            weights: weights.to_vec(),
            centers: means.iter().map(|&m| DVector::from_row_slice(&[m])).collect(),
            covariances: vars
                .iter()
                .map(|&v| DMatrix::from_row_slice(1, 1, &[v]))
                .collect(),
        }
    }

    #[test]
    fn detects_constructed_product() {
        let a = mixture_1d(&[0.3, 0.7], &[0.0, 4.0], &[1.0, 2.0]);
        let b = mixture_1d(&[0.6, 0.4], &[-1.0, 3.0], &[0.5, 1.5]);
        let cross = DMatrix::from_row_slice(1, 1, &[0.8]);
        let block = compose_product_block(&a, &b, &cross).unwrap();
        let verdict =
            check_mixture_identifiability(&block, &IdentOptions::default()).unwrap();
        let IdentVerdict::Factorizes(w) = verdict else {
            panic!("expected a factorization witness");
        };
        assert_eq!(w.k_a * w.k_b, 4);
        // reconstruction matches inputs within 10x tolerance
        let tol = 10.0 * IdentOptions::default().tol;
        if w.split_a == vec![0] {
            assert!((w.cross_slopes[(0, 0)] - 0.8).abs() < tol);
            let mut got: Vec<f64> = w.factor_a.centers.iter().map(|c| c[0]).collect();
            got.sort_by(|x, y| x.total_cmp(y));
            assert!((got[0] - 0.0).abs() < tol && (got[1] - 4.0).abs() < tol);
        }
    }

    #[test]
    fn generic_dense_block_holds() {
        // distinct correlations and intercepts; prime K rules out grid splits
        let block = MixtureComponents {
            weights: vec![0.2, 0.3, 0.5],
            centers: vec![
                DVector::from_row_slice(&[-2.0, -1.0, 3.5]),
                DVector::from_row_slice(&[4.0, 5.0, -2.5]),
                DVector::from_row_slice(&[0.5, 1.0, 0.0]),
            ],
            covariances: vec![
                DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.6, 0.5, 1.0, 0.4, 0.6, 0.4, 1.0]),
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[1.0, -0.5, -0.6, -0.5, 1.0, -0.4, -0.6, -0.4, 1.0],
                ),
                DMatrix::from_row_slice(3, 3, &[2.0, 0.7, 0.2, 0.7, 1.5, 0.3, 0.2, 0.3, 1.2]),
            ],
        };
        let verdict =
            check_mixture_identifiability(&block, &IdentOptions::default()).unwrap();
        assert!(matches!(verdict, IdentVerdict::Holds));
    }

    #[test]
    fn two_component_dense_block_holds() {
        let block = MixtureComponents {
            weights: vec![0.5, 0.5],
            centers: vec![
                DVector::from_row_slice(&[-2.0, -1.0, 3.5]),
                DVector::from_row_slice(&[4.0, 5.0, -2.5]),
            ],
            covariances: vec![
                DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.6, 0.5, 1.0, 0.4, 0.6, 0.4, 1.0]),
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[1.0, -0.5, -0.6, -0.5, 1.0, -0.4, -0.6, -0.4, 1.0],
                ),
            ],
        };
        let verdict =
            check_mixture_identifiability(&block, &IdentOptions::default()).unwrap();
        assert!(matches!(verdict, IdentVerdict::Holds));
    }

    #[test]
    fn degenerate_split_with_single_marginal_component() {
        // identical marginals on variable 0, all structure in 1|0: the
        // K_a = 1 factorization must be reported
        let a = mixture_1d(&[1.0], &[2.0], &[1.5]);
        let b = mixture_1d(&[0.5, 0.5], &[-3.0, 3.0], &[1.0, 1.0]);
        let cross = DMatrix::from_row_slice(1, 1, &[1.2]);
        let block = compose_product_block(&a, &b, &cross).unwrap();
        let verdict =
            check_mixture_identifiability(&block, &IdentOptions::default()).unwrap();
        let IdentVerdict::Factorizes(w) = verdict else {
            panic!("expected witness");
        };
        assert!(w.k_a == 1 || w.k_b == 1);
    }

    #[test]
    fn small_block_is_an_input_error() {
        let block = mixture_1d(&[0.5, 0.5], &[0.0, 1.0], &[1.0, 1.0]);
        assert!(check_mixture_identifiability(&block, &IdentOptions::default()).is_err());
    }

    #[test]
    fn oversized_block_exceeds_budget() {
        let opts = IdentOptions {
            max_components: 3,
            ..IdentOptions::default()
        };
        let a = mixture_1d(&[0.25, 0.25, 0.25, 0.25], &[0.0, 1.0, 2.0, 3.0], &[1.0; 4]);
        let b = mixture_1d(&[1.0], &[0.0], &[1.0]);
        let cross = DMatrix::from_row_slice(1, 1, &[0.5]);
        let block = compose_product_block(&a, &b, &cross).unwrap();
        let err = check_mixture_identifiability(&block, &opts).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded(_)));
    }
}
