//! Variable partitions: the split of the column index set into informative
//! blocks S_1..S_G, an uninformative regression block U and an independent
//! block I, plus optional reduced regressor sets.
//!
//! All indices are 0-based column positions. `Display` renders the 1-based
//! set notation used in reports.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::set_notation;

/// Regressor choice for a conditional block: one shared set for the whole
/// block, or one set per response variable (seemingly unrelated form).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRegressors {
    Shared(Vec<usize>),
    PerResponse(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawPartition {
    blocks: Vec<Vec<usize>>,
    #[serde(default)]
    uninformative: Vec<usize>,
    #[serde(default)]
    independent: Vec<usize>,
    #[serde(default)]
    block_regressors: Vec<Option<BlockRegressors>>,
    #[serde(default)]
    u_regressors: Option<Vec<usize>>,
}

/// A validated partition (S_1..S_G, U, I) of the columns 0..L-1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPartition", into = "RawPartition")]
pub struct VariablePartition {
    blocks: Vec<Vec<usize>>,
    uninformative: Vec<usize>,
    independent: Vec<usize>,
    /// One entry per block; entry 0 is always `None`.
    block_regressors: Vec<Option<BlockRegressors>>,
    /// `None` means U regresses on all informative variables.
    u_regressors: Option<Vec<usize>>,
    l: usize,
}

impl VariablePartition {
    /// Build a partition with full (default) regressor sets.
    pub fn new(
        blocks: Vec<Vec<usize>>,
        uninformative: Vec<usize>,
        independent: Vec<usize>,
    ) -> Result<Self> {
        let g = blocks.len();
        Self::with_regressors(blocks, uninformative, independent, vec![None; g], None)
    }

    /// Build a partition with explicit regressor sets.
    pub fn with_regressors(
        blocks: Vec<Vec<usize>>,
        uninformative: Vec<usize>,
        independent: Vec<usize>,
        mut block_regressors: Vec<Option<BlockRegressors>>,
        u_regressors: Option<Vec<usize>>,
    ) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidInput("partition needs at least one block".into()));
        }
        let mut blocks: Vec<Vec<usize>> = blocks;
        for b in &mut blocks {
            b.sort_unstable();
            if b.is_empty() {
                return Err(Error::InvalidInput("empty informative block".into()));
            }
        }
        let mut uninformative = uninformative;
        uninformative.sort_unstable();
        let mut independent = independent;
        independent.sort_unstable();

        // Disjoint cover of 0..L-1.
        let mut all: Vec<usize> = blocks
            .iter()
            .flatten()
            .chain(uninformative.iter())
            .chain(independent.iter())
            .copied()
            .collect();
        let l = all.len();
        all.sort_unstable();
        for (pos, &idx) in all.iter().enumerate() {
            if idx != pos {
                return Err(Error::InvalidInput(format!(
                    "partition must cover 0..{} exactly once; problem near index {}",
                    l.saturating_sub(1),
                    idx
                )));
            }
        }

        let g = blocks.len();
        if block_regressors.len() > g {
            return Err(Error::InvalidInput(
                "more block regressor entries than blocks".into(),
            ));
        }
        block_regressors.resize(g, None);
        if block_regressors[0].is_some() {
            return Err(Error::InvalidInput(
                "the first block cannot have regressors".into(),
            ));
        }

        let part = VariablePartition {
            blocks,
            uninformative,
            independent,
            block_regressors: Vec::new(),
            u_regressors: None,
            l,
        };

        // Regressor sets must reference earlier blocks (S_g) or informative
        // variables (U), respectively.
        let mut canon_regs: Vec<Option<BlockRegressors>> = Vec::with_capacity(g);
        for (gi, entry) in block_regressors.into_iter().enumerate() {
            let entry = match entry {
                None => None,
                Some(BlockRegressors::Shared(mut set)) => {
                    set.sort_unstable();
                    set.dedup();
                    part.check_regressor_set(&set, gi)?;
                    Some(BlockRegressors::Shared(set))
                }
                Some(BlockRegressors::PerResponse(sets)) => {
                    if part.blocks[gi].len() < 2 {
                        return Err(Error::InvalidInput(format!(
                            "per-response regressors need a block of >= 2 variables (block {})",
                            gi + 1
                        )));
                    }
                    if sets.len() != part.blocks[gi].len() {
                        return Err(Error::InvalidInput(format!(
                            "block {} has {} responses but {} regressor sets",
                            gi + 1,
                            part.blocks[gi].len(),
                            sets.len()
                        )));
                    }
                    let mut canon = Vec::with_capacity(sets.len());
                    for mut set in sets {
                        set.sort_unstable();
                        set.dedup();
                        part.check_regressor_set(&set, gi)?;
                        canon.push(set);
                    }
                    Some(BlockRegressors::PerResponse(canon))
                }
            };
            canon_regs.push(entry);
        }

        let u_regs = match u_regressors {
            None => None,
            Some(mut set) => {
                set.sort_unstable();
                set.dedup();
                let informative = part.informative();
                for &r in &set {
                    if !informative.contains(&r) {
                        return Err(Error::InvalidInput(format!(
                            "U regressor {} is not an informative variable",
                            r + 1
                        )));
                    }
                }
                Some(set)
            }
        };

        Ok(VariablePartition {
            block_regressors: canon_regs,
            u_regressors: u_regs,
            ..part
        })
    }

    fn check_regressor_set(&self, set: &[usize], g: usize) -> Result<()> {
        let earlier = self.earlier_union(g);
        for &r in set {
            if !earlier.contains(&r) {
                return Err(Error::InvalidInput(format!(
                    "regressor {} of block {} does not lie in an earlier block",
                    r + 1,
                    g + 1
                )));
            }
        }
        Ok(())
    }

    /// Total number of variables L.
    pub fn l(&self) -> usize {
        self.l
    }

    /// Number of informative blocks G.
    pub fn g(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, g: usize) -> &[usize] {
        &self.blocks[g]
    }

    pub fn uninformative(&self) -> &[usize] {
        &self.uninformative
    }

    pub fn independent(&self) -> &[usize] {
        &self.independent
    }

    /// Union of all informative blocks, ascending.
    pub fn informative(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.blocks.iter().flatten().copied().collect();
        v.sort_unstable();
        v
    }

    /// Union of blocks before block `g`, ascending.
    pub fn earlier_union(&self, g: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.blocks[..g].iter().flatten().copied().collect();
        v.sort_unstable();
        v
    }

    /// Resolved regressor structure for block `g >= 1`: the stored set, or the
    /// full union of earlier blocks.
    pub fn regressors_for_block(&self, g: usize) -> BlockRegressors {
        match &self.block_regressors[g] {
            Some(r) => r.clone(),
            None => BlockRegressors::Shared(self.earlier_union(g)),
        }
    }

    pub fn raw_block_regressors(&self, g: usize) -> Option<&BlockRegressors> {
        self.block_regressors[g].as_ref()
    }

    /// Resolved regressor set for U: the stored set or all informative variables.
    pub fn u_regressor_set(&self) -> Vec<usize> {
        match &self.u_regressors {
            Some(set) => set.clone(),
            None => self.informative(),
        }
    }

    pub fn raw_u_regressors(&self) -> Option<&[usize]> {
        self.u_regressors.as_deref()
    }

    /// Copy with block `g`'s regressors replaced (revalidated).
    pub fn replace_block_regressors(
        &self,
        g: usize,
        regs: Option<BlockRegressors>,
    ) -> Result<Self> {
        let mut entries = self.block_regressors.clone();
        entries[g] = regs;
        Self::with_regressors(
            self.blocks.clone(),
            self.uninformative.clone(),
            self.independent.clone(),
            entries,
            self.u_regressors.clone(),
        )
    }

    /// Copy with the U regressor set replaced (revalidated).
    pub fn replace_u_regressors(&self, set: Option<Vec<usize>>) -> Result<Self> {
        Self::with_regressors(
            self.blocks.clone(),
            self.uninformative.clone(),
            self.independent.clone(),
            self.block_regressors.clone(),
            set,
        )
    }
}

impl TryFrom<RawPartition> for VariablePartition {
    type Error = Error;

    fn try_from(raw: RawPartition) -> Result<Self> {
        VariablePartition::with_regressors(
            raw.blocks,
            raw.uninformative,
            raw.independent,
            raw.block_regressors,
            raw.u_regressors,
        )
    }
}

impl From<VariablePartition> for RawPartition {
    fn from(p: VariablePartition) -> RawPartition {
        RawPartition {
            blocks: p.blocks,
            uninformative: p.uninformative,
            independent: p.independent,
            block_regressors: p.block_regressors,
            u_regressors: p.u_regressors,
        }
    }
}

impl fmt::Display for VariablePartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (g, b) in self.blocks.iter().enumerate() {
            if g > 0 {
                write!(f, " ")?;
            }
            write!(f, "S{}={}", g + 1, set_notation(b))?;
        }
        if !self.uninformative.is_empty() {
            write!(f, " U={}", set_notation(&self.uninformative))?;
        }
        if !self.independent.is_empty() {
            write!(f, " I={}", set_notation(&self.independent))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlapping_blocks_rejected() {
        let err = VariablePartition::new(vec![vec![0, 1], vec![1, 2]], vec![], vec![]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn gap_rejected() {
        let err = VariablePartition::new(vec![vec![0, 2]], vec![], vec![]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn regressor_must_precede() {
        let err = VariablePartition::with_regressors(
            vec![vec![0], vec![1]],
            vec![],
            vec![],
            vec![None, Some(BlockRegressors::Shared(vec![1]))],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn display_uses_one_based_sets() {
        let p =
            VariablePartition::new(vec![vec![0, 1, 2], vec![3, 4, 5]], vec![6, 7], vec![]).unwrap();
        assert_eq!(p.to_string(), "S1=(1,2,3) S2=(4,5,6) U=(7,8)");
    }

    #[test]
    fn json_round_trip() {
        let p = VariablePartition::with_regressors(
            vec![vec![0, 1], vec![2]],
            vec![3],
            vec![],
            vec![None, Some(BlockRegressors::Shared(vec![1]))],
            Some(vec![0, 2]),
        )
        .unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let back: VariablePartition = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn default_regressors_resolve_to_full_sets() {
        let p =
            VariablePartition::new(vec![vec![0, 2], vec![1, 3]], vec![4], vec![5]).unwrap();
        assert_eq!(
            p.regressors_for_block(1),
            BlockRegressors::Shared(vec![0, 2])
        );
        assert_eq!(p.u_regressor_set(), vec![0, 1, 2, 3]);
    }
}
