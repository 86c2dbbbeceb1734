//! Two-phase genetic search over the model space, maximizing BIC.
//!
//! Phase A selects the first informative block and its component count with
//! one binary gene per variable plus two integer genes (K1, K2); every
//! remaining variable is modelled as one conditional block regressed on the
//! selected ones, so each chromosome's fitness is the BIC of a full joint
//! model. Phase B keeps the phase-A solution fixed and splits the remaining
//! variables into a second informative block and an uninformative rest.
//! In parsimonious mode extra genes choose covariance structures.
//!
//! Operators: linear-rank selection (pressure 2), single-point crossover,
//! single-gene mutation, with the best chromosome carried over unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gmm::{CovParam, EmControl};
use crate::joint::{FitEngine, JointFit, ModelSpec};
use crate::linreg::SigmaForm;
use crate::partition::{BlockRegressors, VariablePartition};

/// Tuning parameters of the two-phase search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaControl {
    /// Phase A population size.
    pub n1: usize,
    /// Phase B population size.
    pub n2: usize,
    /// Phase A generation cap.
    pub d1max: usize,
    /// Phase B generation cap.
    pub d2max: usize,
    pub k1max: usize,
    pub k2max: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    /// Add covariance-structure genes instead of fixing unconstrained forms.
    pub parsimonious: bool,
    pub seed: u64,
    /// EM control for every block fit evaluated by the search.
    pub em: EmControl,
}

impl Default for GaControl {
    fn default() -> Self {
        GaControl {
            n1: 120,
            n2: 80,
            d1max: 30,
            d2max: 20,
            k1max: 3,
            k2max: 3,
            crossover_prob: 0.8,
            mutation_prob: 0.1,
            parsimonious: false,
            seed: 0,
            // search throughput: k-means seeding plus two random restarts
            em: EmControl {
                n_starts: 2,
                max_iter: 300,
                ..EmControl::default()
            },
        }
    }
}

impl GaControl {
    pub fn validate(&self) -> Result<()> {
        if self.n1 < 2 || self.n2 < 2 {
            return Err(Error::InvalidInput("population sizes must be >= 2".into()));
        }
        if self.d1max == 0 || self.d2max == 0 {
            return Err(Error::InvalidInput("generation caps must be >= 1".into()));
        }
        if self.k1max == 0 || self.k2max == 0 {
            return Err(Error::InvalidInput("component caps must be >= 1".into()));
        }
        for p in [self.crossover_prob, self.mutation_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(
                    "probabilities must lie in [0, 1]".into(),
                ));
            }
        }
        self.em.validate()
    }
}

/// Best fitness trace entry.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub phase: char,
    pub generation: usize,
    pub best_bic: f64,
    /// Mean over chromosomes with finite fitness.
    pub mean_bic: f64,
}

/// Search result: the refitted best model, the per-generation trace, and
/// whether a generation cap cut the search off while fitness was still
/// improving.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: JointFit,
    pub history: Vec<GenerationRecord>,
    pub truncated: bool,
}

/// An integer-gene chromosome; the layout gives each gene its range.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Chromosome {
    pub genes: Vec<u16>,
}

#[derive(Debug, Clone, Copy)]
enum GeneRange {
    Binary,
    /// Inclusive bounds.
    Int { lo: u16, hi: u16 },
}

#[derive(Debug, Clone)]
struct Layout {
    ranges: Vec<GeneRange>,
}

impl Layout {
    fn phase_a(l: usize, ctrl: &GaControl) -> Layout {
        let mut ranges = vec![GeneRange::Binary; l];
        ranges.push(GeneRange::Int {
            lo: 1,
            hi: ctrl.k1max as u16,
        });
        ranges.push(GeneRange::Int {
            lo: 1,
            hi: ctrl.k2max as u16,
        });
        if ctrl.parsimonious {
            ranges.push(GeneRange::Int { lo: 0, hi: 5 });
            ranges.push(GeneRange::Int { lo: 0, hi: 5 });
        }
        Layout { ranges }
    }

    fn phase_b(rest: usize, ctrl: &GaControl) -> Layout {
        let mut ranges = vec![GeneRange::Binary; rest];
        ranges.push(GeneRange::Int {
            lo: 1,
            hi: ctrl.k2max as u16,
        });
        if ctrl.parsimonious {
            ranges.push(GeneRange::Int { lo: 0, hi: 5 });
            ranges.push(GeneRange::Int { lo: 0, hi: 2 });
        }
        Layout { ranges }
    }

    fn random(&self, rng: &mut ChaCha8Rng) -> Chromosome {
        let genes = self
            .ranges
            .iter()
            .map(|r| match r {
                GeneRange::Binary => rng.random_range(0..=1u16),
                GeneRange::Int { lo, hi } => rng.random_range(*lo..=*hi),
            })
            .collect();
        Chromosome { genes }
    }

    /// Flip one uniformly chosen gene (binary) or resample it (integer).
    fn mutate(&self, c: &mut Chromosome, rng: &mut ChaCha8Rng) {
        let idx = rng.random_range(0..self.ranges.len());
        match self.ranges[idx] {
            GeneRange::Binary => c.genes[idx] ^= 1,
            GeneRange::Int { lo, hi } => c.genes[idx] = rng.random_range(lo..=hi),
        }
    }

    /// Single-point crossover; the cut excludes position 0.
    fn crossover(
        &self,
        a: &Chromosome,
        b: &Chromosome,
        rng: &mut ChaCha8Rng,
    ) -> (Chromosome, Chromosome) {
        let len = self.ranges.len();
        if len < 2 {
            return (a.clone(), b.clone());
        }
        let cut = rng.random_range(1..len);
        let mut c1 = a.clone();
        let mut c2 = b.clone();
        for i in cut..len {
            c1.genes[i] = b.genes[i];
            c2.genes[i] = a.genes[i];
        }
        (c1, c2)
    }
}

fn cov_from_gene(g: u16) -> CovParam {
    CovParam::ALL[g as usize]
}

fn sigma_form_from_gene(g: u16) -> SigmaForm {
    SigmaForm::ALL[g as usize]
}

/// Phase-A solution carried into phase B.
#[derive(Debug, Clone)]
pub struct PhaseAResult {
    pub s1: Vec<usize>,
    pub k1: usize,
    pub p1: CovParam,
    /// K2 gene of the winning phase-A chromosome, used to seed phase B.
    pub k2_hint: usize,
    pub p2_hint: CovParam,
}

/// Decode a phase-A chromosome on `l` variables.
pub fn decode_phase_a(c: &Chromosome, l: usize, ctrl: &GaControl) -> Result<ModelSpec> {
    let expected = l + 2 + if ctrl.parsimonious { 2 } else { 0 };
    if c.genes.len() != expected {
        return Err(Error::InvalidInput(format!(
            "phase-A chromosome needs {expected} genes, got {}",
            c.genes.len()
        )));
    }
    let s1: Vec<usize> = (0..l).filter(|&j| c.genes[j] == 1).collect();
    if s1.is_empty() {
        return Err(Error::InvalidInput("empty S1 gene vector".into()));
    }
    let rest: Vec<usize> = (0..l).filter(|&j| c.genes[j] == 0).collect();
    let k1 = c.genes[l] as usize;
    let k2 = c.genes[l + 1] as usize;
    let (p1, p2) = if ctrl.parsimonious {
        (cov_from_gene(c.genes[l + 2]), cov_from_gene(c.genes[l + 3]))
    } else {
        (CovParam::FullVarying, CovParam::FullVarying)
    };
    if rest.is_empty() {
        let partition = VariablePartition::new(vec![s1], vec![], vec![])?;
        return Ok(ModelSpec {
            partition,
            components: vec![k1],
            covariances: vec![p1],
            noise_form: SigmaForm::Full,
        });
    }
    let partition = VariablePartition::new(vec![s1, rest], vec![], vec![])?;
    Ok(ModelSpec {
        partition,
        components: vec![k1, k2],
        covariances: vec![p1, p2],
        noise_form: SigmaForm::Full,
    })
}

/// Decode a phase-B chromosome over the variables left out of S1.
pub fn decode_phase_b(
    c: &Chromosome,
    context: &PhaseAResult,
    rest: &[usize],
    ctrl: &GaControl,
) -> Result<ModelSpec> {
    let expected = rest.len() + 1 + if ctrl.parsimonious { 2 } else { 0 };
    if c.genes.len() != expected {
        return Err(Error::InvalidInput(format!(
            "phase-B chromosome needs {expected} genes, got {}",
            c.genes.len()
        )));
    }
    let s2: Vec<usize> = rest
        .iter()
        .enumerate()
        .filter(|(j, _)| c.genes[*j] == 1)
        .map(|(_, &v)| v)
        .collect();
    let u: Vec<usize> = rest
        .iter()
        .enumerate()
        .filter(|(j, _)| c.genes[*j] == 0)
        .map(|(_, &v)| v)
        .collect();
    let k2 = c.genes[rest.len()] as usize;
    let (p2, pu) = if ctrl.parsimonious {
        (
            cov_from_gene(c.genes[rest.len() + 1]),
            sigma_form_from_gene(c.genes[rest.len() + 2]),
        )
    } else {
        (CovParam::FullVarying, SigmaForm::Full)
    };
    if s2.is_empty() {
        let partition = VariablePartition::new(vec![context.s1.clone()], u, vec![])?;
        return Ok(ModelSpec {
            partition,
            components: vec![context.k1],
            covariances: vec![context.p1],
            noise_form: pu,
        });
    }
    let partition = VariablePartition::new(vec![context.s1.clone(), s2], u, vec![])?;
    Ok(ModelSpec {
        partition,
        components: vec![context.k1, k2],
        covariances: vec![context.p1, p2],
        noise_form: pu,
    })
}

/// Fitness and tie-break data of one evaluated chromosome.
#[derive(Debug, Clone, Copy)]
struct Eval {
    bic: f64,
    npar: usize,
}

const INVALID: Eval = Eval {
    bic: f64::NEG_INFINITY,
    npar: usize::MAX,
};

/// Total order: higher BIC, then fewer parameters, then smaller genes.
fn better(a_c: &Chromosome, a_e: &Eval, b_c: &Chromosome, b_e: &Eval) -> bool {
    if a_e.bic != b_e.bic {
        return a_e.bic > b_e.bic;
    }
    if a_e.npar != b_e.npar {
        return a_e.npar < b_e.npar;
    }
    a_c.genes < b_c.genes
}

struct PhaseOutput {
    best: (Chromosome, Eval),
    truncated: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_phase<F>(
    engine: &FitEngine,
    layout: &Layout,
    decode: F,
    pop_size: usize,
    generations: usize,
    ctrl: &GaControl,
    rng: &mut ChaCha8Rng,
    phase: char,
    seeded: Vec<Chromosome>,
    history: &mut Vec<GenerationRecord>,
) -> PhaseOutput
where
    F: Fn(&Chromosome) -> Result<ModelSpec> + Sync,
{
    let evaluate = |pop: &[Chromosome]| -> Vec<Eval> {
        pop.par_iter()
            .map(|c| match decode(c) {
                Ok(spec) => match engine.fit_summary(&spec) {
                    Ok(s) => Eval {
                        bic: s.bic,
                        npar: s.npar,
                    },
                    Err(_) => INVALID,
                },
                Err(_) => INVALID,
            })
            .collect()
    };

    let mut pop: Vec<Chromosome> = seeded;
    while pop.len() < pop_size {
        pop.push(layout.random(rng));
    }
    pop.truncate(pop_size);
    let mut evals = evaluate(&pop);

    let mut best: Option<(Chromosome, Eval)> = None;
    let mut truncated = false;
    for generation in 1..=generations {
        // track the phase best and the trace
        let mut gen_best = 0usize;
        for i in 1..pop.len() {
            if better(&pop[i], &evals[i], &pop[gen_best], &evals[gen_best]) {
                gen_best = i;
            }
        }
        let improved = best
            .as_ref()
            .is_none_or(|(bc, be)| better(&pop[gen_best], &evals[gen_best], bc, be));
        if improved {
            best = Some((pop[gen_best].clone(), evals[gen_best]));
        }
        truncated = improved && generation == generations && generation > 1;
        let finite: Vec<f64> = evals
            .iter()
            .map(|e| e.bic)
            .filter(|b| b.is_finite())
            .collect();
        let mean = if finite.is_empty() {
            f64::NEG_INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        history.push(GenerationRecord {
            phase,
            generation,
            best_bic: best.as_ref().map(|b| b.1.bic).unwrap_or(f64::NEG_INFINITY),
            mean_bic: mean,
        });
        if generation == generations {
            break;
        }

        // linear-rank selection weights (pressure 2): the i-th worst of N
        // gets weight i-1, so the worst is never selected.
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&i, &j| {
            if better(&pop[i], &evals[i], &pop[j], &evals[j]) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Less
            }
        });
        let total: f64 = (0..pop.len()).map(|r| r as f64).sum();
        let pick = |rng: &mut ChaCha8Rng| -> usize {
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            for (r, &idx) in order.iter().enumerate() {
                acc += r as f64;
                if u <= acc && r > 0 {
                    return idx;
                }
            }
            *order.last().unwrap()
        };

        let elite = best.as_ref().expect("tracked best").0.clone();
        let mut next = Vec::with_capacity(pop.len());
        next.push(elite);
        while next.len() < pop.len() {
            let pa = pick(rng);
            let pb = pick(rng);
            let (mut c1, mut c2) = if rng.random::<f64>() < ctrl.crossover_prob {
                layout.crossover(&pop[pa], &pop[pb], rng)
            } else {
                (pop[pa].clone(), pop[pb].clone())
            };
            if rng.random::<f64>() < ctrl.mutation_prob {
                layout.mutate(&mut c1, rng);
            }
            if rng.random::<f64>() < ctrl.mutation_prob {
                layout.mutate(&mut c2, rng);
            }
            next.push(c1);
            if next.len() < pop.len() {
                next.push(c2);
            }
        }
        pop = next;
        evals = evaluate(&pop);
    }

    PhaseOutput {
        best: best.expect("at least one generation"),
        truncated,
    }
}

/// Run the two-phase search. Deterministic given the control seed.
pub fn search(data: &Dataset, ctrl: &GaControl) -> Result<SearchOutcome> {
    ctrl.validate()?;
    let l = data.l();
    if l < 2 {
        return Err(Error::InvalidInput("search needs at least 2 variables".into()));
    }
    let engine = FitEngine::new(data, ctrl.em);
    let mut rng = ChaCha8Rng::seed_from_u64(ctrl.seed);
    let mut history = Vec::new();

    // Phase A: choose (S1, K1).
    let layout_a = Layout::phase_a(l, ctrl);
    let out_a = run_phase(
        &engine,
        &layout_a,
        |c| decode_phase_a(c, l, ctrl),
        ctrl.n1,
        ctrl.d1max,
        ctrl,
        &mut rng,
        'a',
        Vec::new(),
        &mut history,
    );
    let (chrom_a, eval_a) = &out_a.best;
    if !eval_a.bic.is_finite() {
        return Err(Error::InvalidInput(
            "phase A found no fittable model".into(),
        ));
    }
    let s1: Vec<usize> = (0..l).filter(|&j| chrom_a.genes[j] == 1).collect();
    let rest: Vec<usize> = (0..l).filter(|&j| chrom_a.genes[j] == 0).collect();
    let context = PhaseAResult {
        s1,
        k1: chrom_a.genes[l] as usize,
        p1: if ctrl.parsimonious {
            cov_from_gene(chrom_a.genes[l + 2])
        } else {
            CovParam::FullVarying
        },
        k2_hint: chrom_a.genes[l + 1] as usize,
        p2_hint: if ctrl.parsimonious {
            cov_from_gene(chrom_a.genes[l + 3])
        } else {
            CovParam::FullVarying
        },
    };

    // All variables informative: nothing left for phase B.
    if rest.is_empty() {
        let spec = decode_phase_a(chrom_a, l, ctrl)?;
        let best = engine.fit(&spec)?;
        return Ok(SearchOutcome {
            best,
            history,
            truncated: out_a.truncated,
        });
    }

    // Phase B: split the rest into (S2, U) holding (S1, K1) fixed. The
    // population is seeded with the phase-A model (everything in S2) so the
    // final fitness can only improve on it.
    let layout_b = Layout::phase_b(rest.len(), ctrl);
    let mut seed_genes = vec![1u16; rest.len()];
    seed_genes.push(context.k2_hint as u16);
    if ctrl.parsimonious {
        seed_genes.push(CovParam::ALL.iter().position(|p| *p == context.p2_hint).unwrap() as u16);
        seed_genes.push(2); // unconstrained noise form
    }
    let out_b = run_phase(
        &engine,
        &layout_b,
        |c| decode_phase_b(c, &context, &rest, ctrl),
        ctrl.n2,
        ctrl.d2max,
        ctrl,
        &mut rng,
        'b',
        vec![Chromosome { genes: seed_genes }],
        &mut history,
    );
    let (chrom_b, eval_b) = &out_b.best;
    if !eval_b.bic.is_finite() {
        return Err(Error::InvalidInput(
            "phase B found no fittable model".into(),
        ));
    }
    let spec = decode_phase_b(chrom_b, &context, &rest, ctrl)?;
    let best = engine.fit(&spec)?;
    Ok(SearchOutcome {
        best,
        history,
        truncated: out_a.truncated || out_b.truncated,
    })
}

/// Greedy backward-forward refinement of regressor subsets, accepting only
/// BIC-improving moves: per-response sets for conditional blocks (one shared
/// set when the block has a single response) and the shared set of the
/// uninformative block.
pub fn regressor_refine(data: &Dataset, fit: &JointFit, em: &EmControl) -> Result<JointFit> {
    let engine = FitEngine::new(data, *em);
    let mut spec = fit.spec.clone();
    let mut current = engine.fit_summary(&spec)?;

    loop {
        let mut candidates: Vec<ModelSpec> = Vec::new();
        let part = &spec.partition;
        for g in 1..part.g() {
            let earlier = part.earlier_union(g);
            let block_len = part.block(g).len();
            let sets: Vec<Vec<usize>> = match part.regressors_for_block(g) {
                BlockRegressors::Shared(set) => vec![set; block_len],
                BlockRegressors::PerResponse(sets) => sets,
            };
            if block_len == 1 {
                for r in &earlier {
                    let mut set = sets[0].clone();
                    toggle(&mut set, *r);
                    let regs = Some(BlockRegressors::Shared(set));
                    candidates.push(ModelSpec {
                        partition: part.replace_block_regressors(g, regs)?,
                        ..spec.clone()
                    });
                }
            } else {
                for l in 0..block_len {
                    for r in &earlier {
                        let mut new_sets = sets.clone();
                        toggle(&mut new_sets[l], *r);
                        let regs = Some(BlockRegressors::PerResponse(new_sets));
                        candidates.push(ModelSpec {
                            partition: part.replace_block_regressors(g, regs)?,
                            ..spec.clone()
                        });
                    }
                }
            }
        }
        if !part.uninformative().is_empty() {
            let informative = part.informative();
            let set = part.u_regressor_set();
            for r in &informative {
                let mut new_set = set.clone();
                toggle(&mut new_set, *r);
                candidates.push(ModelSpec {
                    partition: part.replace_u_regressors(Some(new_set))?,
                    ..spec.clone()
                });
            }
        }
        if candidates.is_empty() {
            break;
        }

        let scores: Vec<Option<f64>> = candidates
            .par_iter()
            .map(|s| engine.fit_summary(s).ok().map(|r| r.bic))
            .collect();
        let mut best_move: Option<(usize, f64)> = None;
        for (idx, bic) in scores.iter().enumerate() {
            if let Some(b) = bic {
                if *b > current.bic && best_move.map_or(true, |(_, bb)| *b > bb) {
                    best_move = Some((idx, *b));
                }
            }
        }
        match best_move {
            Some((idx, _)) => {
                spec = candidates[idx].clone();
                current = engine.fit_summary(&spec)?;
            }
            None => break,
        }
    }
    engine.fit(&spec)
}

fn toggle(set: &mut Vec<usize>, r: usize) {
    match set.binary_search(&r) {
        Ok(pos) => {
            set.remove(pos);
        }
        Err(pos) => set.insert(pos, r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctrl_small() -> GaControl {
        GaControl {
            n1: 20,
            n2: 12,
            d1max: 8,
            d2max: 6,
            k1max: 3,
            k2max: 3,
            seed: 5,
            em: EmControl {
                n_starts: 1,
                max_iter: 200,
                ..EmControl::default()
            },
            ..GaControl::default()
        }
    }

    #[test]
    fn decode_phase_a_examples() {
        let ctrl = GaControl::default();
        let c = Chromosome {
            genes: vec![1, 1, 0, 2, 1],
        };
        let spec = decode_phase_a(&c, 3, &ctrl).unwrap();
        assert_eq!(spec.partition.block(0), &[0, 1]);
        assert_eq!(spec.partition.block(1), &[2]);
        assert_eq!(spec.components, vec![2, 1]);
    }

    #[test]
    fn decode_phase_b_examples() {
        let ctrl = GaControl::default();
        let context = PhaseAResult {
            s1: vec![0, 1],
            k1: 2,
            p1: CovParam::FullVarying,
            k2_hint: 2,
            p2_hint: CovParam::FullVarying,
        };
        let c = Chromosome {
            genes: vec![1, 0, 2],
        };
        let spec = decode_phase_b(&c, &context, &[2, 3], &ctrl).unwrap();
        assert_eq!(spec.partition.block(1), &[2]);
        assert_eq!(spec.partition.uninformative(), &[3]);
        assert_eq!(spec.components, vec![2, 2]);
    }

    #[test]
    fn empty_s1_is_invalid() {
        let ctrl = GaControl::default();
        let c = Chromosome {
            genes: vec![0, 0, 0, 1, 1],
        };
        assert!(decode_phase_a(&c, 3, &ctrl).is_err());
    }

    #[test]
    fn decode_is_injective_on_valid_chromosomes() {
        let ctrl = GaControl {
            k1max: 2,
            k2max: 2,
            ..GaControl::default()
        };
        let l = 3;
        let mut seen = std::collections::HashMap::new();
        for bits in 1u16..(1 << l) {
            for k1 in 1..=2u16 {
                for k2 in 1..=2u16 {
                    let genes: Vec<u16> = (0..l as u16)
                        .map(|j| (bits >> j) & 1)
                        .chain([k1, k2])
                        .collect();
                    let c = Chromosome { genes };
                    let spec = decode_phase_a(&c, l, &ctrl).unwrap();
                    // skip chromosomes whose K2 gene is inert (S1 = all)
                    if spec.partition.g() == 1 {
                        continue;
                    }
                    let key = format!("{spec:?}");
                    if let Some(prev) = seen.insert(key, c.clone()) {
                        panic!("duplicate decode: {prev:?} vs {c:?}");
                    }
                }
            }
        }
    }
}
