//! Selection, recombination and mutation operators.
//!
//! Brood recombination runs `N` subtree crossovers on one parent pair and
//! keeps two of the resulting `2N` children. Soft brood crossover keeps the
//! two fittest. The modified variant keeps the two children furthest apart in
//! fitness (the brood's best and worst) for the early part of a run and then
//! switches to keeping the two fittest.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprtree::{ExprTree, PrimitiveSet};
use crate::problems::{Fitness, FitnessCases, FitnessMetric};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("cannot select from an empty population")]
    EmptyPopulation,
    #[error("tournament size must be at least 1")]
    ZeroTournament,
    #[error("brood selection needs at least 2 members, got {0}")]
    BroodTooSmall(usize),
    #[error("invalid brood configuration: {0}")]
    InvalidBroodConfig(String),
    #[error("generation {generation} outside 1..={total}")]
    GenerationOutOfRange { generation: usize, total: usize },
}

/// A genome with its cached fitness.
#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub genome: ExprTree,
    pub fitness: Fitness,
}

impl Individual {
    pub fn evaluated(genome: ExprTree, cases: &FitnessCases, metric: FitnessMetric) -> Self {
        let fitness = cases.fitness_of(&genome, metric);
        Self { genome, fitness }
    }
}

/// Inclusive node-count bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBounds {
    pub min: usize,
    pub max: usize,
}

impl SizeBounds {
    pub fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, size: usize) -> bool {
        (self.min..=self.max).contains(&size)
    }
}

impl Default for SizeBounds {
    fn default() -> Self {
        Self { min: 3, max: 25 }
    }
}

/// Brood recombination parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BroodConfig {
    /// Crossovers per parent pair; the brood has `2 * brood_n` children.
    pub brood_n: usize,
    /// Fraction of the run spent in dissimilarity mode.
    pub switch_ratio: f64,
    /// Extra attempts when a crossover or mutation breaks the size bounds.
    pub max_retries: usize,
}

impl Default for BroodConfig {
    fn default() -> Self {
        Self {
            brood_n: 4,
            switch_ratio: 0.5,
            max_retries: 10,
        }
    }
}

impl BroodConfig {
    pub fn validate(&self) -> Result<(), OperatorError> {
        if self.brood_n == 0 {
            return Err(OperatorError::InvalidBroodConfig("brood_n must be at least 1".into()));
        }
        if !(self.switch_ratio > 0.0 && self.switch_ratio < 1.0) {
            return Err(OperatorError::InvalidBroodConfig(format!(
                "switch_ratio must lie in (0, 1), got {}",
                self.switch_ratio
            )));
        }
        if self.max_retries == 0 {
            return Err(OperatorError::InvalidBroodConfig("max_retries must be at least 1".into()));
        }
        Ok(())
    }
}

/// Index of the winner of a `k`-way tournament, sampled with replacement.
/// Ties go to the earliest sampled contestant.
pub fn tournament_index<R: Rng + ?Sized>(
    population: &[Individual],
    k: usize,
    rng: &mut R,
) -> Result<usize, OperatorError> {
    if population.is_empty() {
        return Err(OperatorError::EmptyPopulation);
    }
    if k == 0 {
        return Err(OperatorError::ZeroTournament);
    }
    let mut best = rng.random_range(0..population.len());
    for _ in 1..k {
        let challenger = rng.random_range(0..population.len());
        if population[challenger].fitness < population[best].fitness {
            best = challenger;
        }
    }
    Ok(best)
}

pub fn tournament_select<'a, R: Rng + ?Sized>(
    population: &'a [Individual],
    k: usize,
    rng: &mut R,
) -> Result<&'a Individual, OperatorError> {
    tournament_index(population, k, rng).map(|i| &population[i])
}

fn swap_subtrees(
    p1: &ExprTree,
    p2: &ExprTree,
    i: usize,
    j: usize,
) -> (ExprTree, ExprTree) {
    let a = p1.subtree(i).expect("index drawn within p1");
    let b = p2.subtree(j).expect("index drawn within p2");
    (
        p1.replace_subtree(i, &b).expect("index drawn within p1"),
        p2.replace_subtree(j, &a).expect("index drawn within p2"),
    )
}

/// Swaps uniformly chosen subtrees of `p1` and `p2`.
///
/// Draws the point in `p1` then the point in `p2`. When a child falls outside
/// `bounds`, both points are redrawn, for at most `1 + max_retries` attempts
/// in total; after that the parents are returned unchanged.
pub fn subtree_crossover<R: Rng + ?Sized>(
    p1: &ExprTree,
    p2: &ExprTree,
    bounds: SizeBounds,
    max_retries: usize,
    rng: &mut R,
) -> (ExprTree, ExprTree) {
    for _ in 0..=max_retries {
        let i = rng.random_range(0..p1.size());
        let j = rng.random_range(0..p2.size());
        let removed = p1.subtree_size(i).expect("in range");
        let inserted = p2.subtree_size(j).expect("in range");
        // Sizes are known before building anything.
        let c1 = p1.size() - removed + inserted;
        let c2 = p2.size() - inserted + removed;
        if bounds.contains(c1) && bounds.contains(c2) {
            return swap_subtrees(p1, p2, i, j);
        }
    }
    (p1.clone(), p2.clone())
}

/// Runs `brood_n` crossovers on the same pair, returning both children of
/// each in operation order.
pub fn brood_generate<R: Rng + ?Sized>(
    p1: &ExprTree,
    p2: &ExprTree,
    cfg: &BroodConfig,
    bounds: SizeBounds,
    rng: &mut R,
) -> Vec<ExprTree> {
    let mut brood = Vec::with_capacity(2 * cfg.brood_n);
    for _ in 0..cfg.brood_n {
        let (a, b) = subtree_crossover(p1, p2, bounds, cfg.max_retries, rng);
        brood.push(a);
        brood.push(b);
    }
    brood
}

/// The two fittest brood members as `(best, second)`, lowest index on ties.
pub fn sbc_select(brood: &[Individual]) -> Result<(usize, usize), OperatorError> {
    if brood.len() < 2 {
        return Err(OperatorError::BroodTooSmall(brood.len()));
    }
    let (mut best, mut second) = if brood[1].fitness < brood[0].fitness {
        (1, 0)
    } else {
        (0, 1)
    };
    for (i, member) in brood.iter().enumerate().skip(2) {
        if member.fitness < brood[best].fitness {
            second = best;
            best = i;
        } else if member.fitness < brood[second].fitness {
            second = i;
        }
    }
    Ok((best, second))
}

/// The pair furthest apart in fitness as `(best, worst)`.
///
/// That pair is always the minimum and maximum member. Invalid fitness counts
/// as maximal. When every member ties, returns `(0, 1)`.
pub fn dissimilar_select(brood: &[Individual]) -> Result<(usize, usize), OperatorError> {
    if brood.len() < 2 {
        return Err(OperatorError::BroodTooSmall(brood.len()));
    }
    let mut lo = 0;
    let mut hi = 0;
    for (i, member) in brood.iter().enumerate().skip(1) {
        if member.fitness < brood[lo].fitness {
            lo = i;
        }
        if member.fitness > brood[hi].fitness {
            hi = i;
        }
    }
    if lo == hi {
        return Ok((0, 1));
    }
    Ok((lo, hi))
}

/// Which half of the modified soft brood schedule a generation falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BroodMode {
    /// Keep the most fitness-dissimilar pair.
    Dissimilar,
    /// Keep the two fittest.
    Fittest,
}

/// `Dissimilar` while `generation <= switch_ratio * total_generations`.
pub fn msbc_mode(generation: usize, total_generations: usize, switch_ratio: f64) -> BroodMode {
    if generation as f64 <= switch_ratio * total_generations as f64 {
        BroodMode::Dissimilar
    } else {
        BroodMode::Fittest
    }
}

pub fn msbc_select(
    brood: &[Individual],
    generation: usize,
    total_generations: usize,
    switch_ratio: f64,
) -> Result<(usize, usize), OperatorError> {
    if generation == 0 || generation > total_generations {
        return Err(OperatorError::GenerationOutOfRange {
            generation,
            total: total_generations,
        });
    }
    match msbc_mode(generation, total_generations, switch_ratio) {
        BroodMode::Dissimilar => dissimilar_select(brood),
        BroodMode::Fittest => sbc_select(brood),
    }
}

/// Replaces a uniformly chosen subtree with a freshly grown one sized so the
/// result stays within `bounds`. Falls back to a copy of `genome` once
/// `1 + max_retries` attempts fail.
pub fn subtree_mutate<R: Rng + ?Sized>(
    genome: &ExprTree,
    pset: &PrimitiveSet,
    bounds: SizeBounds,
    max_retries: usize,
    rng: &mut R,
) -> ExprTree {
    for _ in 0..=max_retries {
        let point = rng.random_range(0..genome.size());
        let rest = genome.size() - genome.subtree_size(point).expect("in range");
        if rest >= bounds.max {
            continue;
        }
        let lo = bounds.min.saturating_sub(rest).max(1);
        let hi = bounds.max - rest;
        if let Ok(fresh) = pset.grow(lo, hi, rng) {
            let out = genome.replace_subtree(point, &fresh).expect("in range");
            debug_assert!(bounds.contains(out.size()));
            return out;
        }
    }
    genome.clone()
}
