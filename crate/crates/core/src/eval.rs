//! Partition agreement: contingency tables and the Hubert-Arabie adjusted
//! Rand index.
//!
//! Binomial sums stay in exact integer arithmetic; the only rounding happens
//! in the final division, so near-zero index values keep their sign.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cross-classification of two label vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    /// Distinct values of the first labelling, ascending; one table row each.
    pub row_values: Vec<usize>,
    /// Distinct values of the second labelling, ascending; one column each.
    pub col_values: Vec<usize>,
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    /// Build a table directly from counts, with `0..r`/`0..c` as the values.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.is_empty() || counts[0].is_empty() {
            return Err(Error::InvalidInput("empty contingency table".into()));
        }
        let c = counts[0].len();
        if counts.iter().any(|r| r.len() != c) {
            return Err(Error::InvalidInput("ragged contingency table".into()));
        }
        Ok(ContingencyTable {
            row_values: (0..counts.len()).collect(),
            col_values: (0..c).collect(),
            counts,
        })
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_margins(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_margins(&self) -> Vec<u64> {
        let c = self.col_values.len();
        (0..c).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// Emit the table as CSV: header of column values, then one row per row
    /// value with its counts.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let header: Vec<String> = std::iter::once("label".to_string())
            .chain(self.col_values.iter().map(|v| v.to_string()))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (rv, row) in self.row_values.iter().zip(&self.counts) {
            let cells: Vec<String> = std::iter::once(rv.to_string())
                .chain(row.iter().map(|c| c.to_string()))
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

impl fmt::Display for ContingencyTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .counts
            .iter()
            .flatten()
            .map(|c| c.to_string().len())
            .chain(self.col_values.iter().map(|v| v.to_string().len()))
            .max()
            .unwrap_or(1)
            .max(3);
        let label_w = self
            .row_values
            .iter()
            .map(|v| v.to_string().len())
            .max()
            .unwrap_or(1);
        write!(f, "{:label_w$}", "")?;
        for v in &self.col_values {
            write!(f, " {v:>width$}")?;
        }
        writeln!(f)?;
        for (rv, row) in self.row_values.iter().zip(&self.counts) {
            write!(f, "{rv:>label_w$}")?;
            for c in row {
                write!(f, " {c:>width$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Cross-classify two equal-length label vectors.
pub fn crosstab(a: &[usize], b: &[usize]) -> Result<ContingencyTable> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "label vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty label vectors".into()));
    }
    let mut row_values: Vec<usize> = a.to_vec();
    row_values.sort_unstable();
    row_values.dedup();
    let mut col_values: Vec<usize> = b.to_vec();
    col_values.sort_unstable();
    col_values.dedup();
    let rpos = |v: usize| row_values.binary_search(&v).unwrap();
    let cpos = |v: usize| col_values.binary_search(&v).unwrap();
    let mut counts = vec![vec![0u64; col_values.len()]; row_values.len()];
    for (&x, &y) in a.iter().zip(b) {
        counts[rpos(x)][cpos(y)] += 1;
    }
    Ok(ContingencyTable {
        row_values,
        col_values,
        counts,
    })
}

fn choose2(x: u64) -> i128 {
    let x = x as i128;
    x * (x - 1) / 2
}

/// Adjusted Rand index of the two labellings cross-classified in `t`.
///
/// Returns 0 when the chance-agreement correction degenerates (both
/// partitions trivial).
pub fn ari_from_table(t: &ContingencyTable) -> f64 {
    let n = t.n();
    let sum_cells: i128 = t.counts.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_a: i128 = t.row_margins().iter().map(|&c| choose2(c)).sum();
    let sum_b: i128 = t.col_margins().iter().map(|&c| choose2(c)).sum();
    let pairs = choose2(n);
    // index - expected over max - expected, multiplied through by 2*pairs
    let num = 2 * (pairs * sum_cells - sum_a * sum_b);
    let den = pairs * (sum_a + sum_b) - 2 * sum_a * sum_b;
    if den == 0 {
        return 0.0;
    }
    num as f64 / den as f64
}

/// Adjusted Rand index between two label vectors.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 observations".into()));
    }
    Ok(ari_from_table(&crosstab(a, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn crosstab_identity() {
        let t = crosstab(&[1, 1, 2], &[1, 1, 2]).unwrap();
        assert_eq!(t.counts, vec![vec![2, 0], vec![0, 1]]);
    }

    #[test]
    fn crosstab_relabeling() {
        let t = crosstab(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap();
        assert_eq!(t.counts, vec![vec![0, 2], vec![2, 0]]);
    }

    #[test]
    fn identical_partitions_score_one_exactly() {
        let a = [0, 0, 1, 1, 2, 2, 2];
        assert_eq!(ari(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ari_is_symmetric_and_relabel_invariant() {
        let a = [0, 0, 1, 1, 2, 2, 0, 1];
        let b = [1, 1, 1, 0, 0, 2, 2, 2];
        let ab = ari(&a, &b).unwrap();
        let ba = ari(&b, &a).unwrap();
        assert_eq!(ab, ba);
        // relabel b: 0->7, 1->5, 2->9
        let b2: Vec<usize> = b.iter().map(|&v| [7, 5, 9][v]).collect();
        assert_eq!(ab, ari(&a, &b2).unwrap());
    }

    #[test]
    fn ari_from_table_matches_labels() {
        let a = [0, 0, 0, 1, 1, 2, 2, 2, 2];
        let b = [0, 1, 0, 1, 1, 2, 2, 0, 2];
        let t = crosstab(&a, &b).unwrap();
        assert_eq!(ari(&a, &b).unwrap(), ari_from_table(&t));
    }

    #[test]
    fn independent_partitions_score_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 10_000;
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..3usize)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..4usize)).collect();
        let v = ari(&a, &b).unwrap();
        assert!(v.abs() < 0.02, "aRi of independent partitions was {v}");
    }

    #[test]
    fn degenerate_table_scores_zero() {
        // both one-cluster partitions: expected equals maximum
        assert_eq!(ari(&[3, 3, 3, 3], &[5, 5, 5, 5]).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(ari(&[0, 1], &[0, 1, 2]).is_err());
    }

    #[test]
    fn display_aligns_columns() {
        let t = ContingencyTable::from_counts(vec![vec![100, 1], vec![0, 99]]).unwrap();
        let text = t.to_string();
        assert!(text.contains("100"));
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "label,0,1\n0,100,1\n1,0,99\n"
        );
    }
}
