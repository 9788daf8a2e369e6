//! Generational evolutionary loop with elitism.
//!
//! Every random decision is drawn from a ChaCha8 stream keyed by the run seed
//! and a `(generation, slot)` pair, so breeding events are independent of one
//! another and can run in parallel without changing results.

use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exprtree::{GrowError, PrimitiveSet};
use crate::operators::{
    brood_generate, msbc_select, sbc_select, subtree_crossover, subtree_mutate, tournament_index,
    BroodConfig, Individual, OperatorError, SizeBounds,
};
use crate::problems::{generate_cases, Fitness, FitnessCases, FitnessMetric, ProblemId, ProblemSpec};

/// Stream slot used for sampling fitness cases (generation 0).
const CASES_SLOT: u64 = u32::MAX as u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grow(#[from] GrowError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Recombination operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    /// Plain subtree crossover.
    Subtree,
    /// Soft brood crossover.
    Sbc,
    /// Modified soft brood crossover.
    Msbc,
}

impl Operator {
    pub const ALL: [Operator; 3] = [Operator::Subtree, Operator::Sbc, Operator::Msbc];

    pub fn name(self) -> &'static str {
        match self {
            Operator::Subtree => "subtree",
            Operator::Sbc => "sbc",
            Operator::Msbc => "msbc",
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Operator::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| format!("unknown operator `{s}` (expected one of: subtree, sbc, msbc)"))
    }
}

/// A fixed seed, or the wall clock at run start.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Seed {
    Fixed(u64),
    Time,
}

impl Seed {
    /// Concrete seed; `Time` reads the current wall-clock milliseconds.
    pub fn resolve(self) -> u64 {
        match self {
            Seed::Fixed(s) => s,
            Seed::Time => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        }
    }
}

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Seed::Fixed(s) => write!(f, "{s}"),
            Seed::Time => f.write_str("time"),
        }
    }
}

impl FromStr for Seed {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "time" {
            return Ok(Seed::Time);
        }
        s.parse::<u64>()
            .map(Seed::Fixed)
            .map_err(|_| format!("invalid seed `{s}` (expected an unsigned 64-bit integer or `time`)"))
    }
}

/// Full run specification.
#[derive(Clone, Debug, PartialEq)]
pub struct GPConfig {
    pub problem: ProblemSpec,
    pub operator: Operator,
    pub population_size: usize,
    pub max_generations: usize,
    pub min_tree_size: usize,
    pub max_tree_size: usize,
    pub tournament_k: usize,
    pub crossover_probability: f64,
    pub mutation_probability: f64,
    pub brood: BroodConfig,
    pub elite_count: usize,
    pub fitness_metric: FitnessMetric,
    pub seed: Seed,
}

impl GPConfig {
    /// Experiment defaults: population 100, 50 generations, sizes 3..=25,
    /// 7-way tournaments, crossover 0.8, mutation 0.1, one elite.
    pub fn new(problem: ProblemId, operator: Operator) -> Self {
        Self {
            problem: ProblemSpec::new(problem),
            operator,
            population_size: 100,
            max_generations: 50,
            min_tree_size: 3,
            max_tree_size: 25,
            tournament_k: 7,
            crossover_probability: 0.8,
            mutation_probability: 0.1,
            brood: BroodConfig::default(),
            elite_count: 1,
            fitness_metric: FitnessMetric::Mse,
            seed: Seed::Time,
        }
    }

    pub fn bounds(&self) -> SizeBounds {
        SizeBounds::new(self.min_tree_size, self.max_tree_size)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let fail = |msg: String| Err(EngineError::Config(msg));
        if self.population_size < 2 {
            return fail(format!("population_size must be at least 2, got {}", self.population_size));
        }
        if self.elite_count >= self.population_size {
            return fail(format!(
                "elite_count ({}) must be less than population_size ({})",
                self.elite_count, self.population_size
            ));
        }
        if self.max_generations == 0 {
            return fail("max_generations must be at least 1".into());
        }
        if self.tournament_k == 0 {
            return fail("tournament_k must be at least 1".into());
        }
        for (name, p) in [
            ("crossover_probability", self.crossover_probability),
            ("mutation_probability", self.mutation_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.min_tree_size == 0 || self.min_tree_size > self.max_tree_size {
            return fail(format!(
                "tree size bounds [{}, {}] are invalid",
                self.min_tree_size, self.max_tree_size
            ));
        }
        if self.problem.case_count == 0 {
            return fail("case_count must be at least 1".into());
        }
        let (lo, hi) = self.problem.interval;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return fail(format!("case interval [{lo}, {hi}] is invalid"));
        }
        self.brood
            .validate()
            .map_err(|e| EngineError::Config(e.to_string()))?;
        let pset = self.problem.id.primitive_set();
        if pset.feasible_sizes(self.min_tree_size, self.max_tree_size).is_empty() {
            return Err(GrowError::Unconstructible {
                min: self.min_tree_size,
                max: self.max_tree_size,
            }
            .into());
        }
        Ok(())
    }
}

/// Per-generation summary.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: Fitness,
    /// Mean over valid individuals only; NaN when none are valid.
    pub mean_fitness: f64,
    pub best_size: usize,
    pub invalid_count: usize,
}

impl GenerationStats {
    pub fn of(generation: usize, population: &[Individual]) -> Self {
        let best = best_index(population);
        let valid: Vec<f64> = population.iter().filter_map(|i| i.fitness.value()).collect();
        let mean_fitness = if valid.is_empty() {
            f64::NAN
        } else {
            valid.iter().sum::<f64>() / valid.len() as f64
        };
        Self {
            generation,
            best_fitness: population[best].fitness,
            mean_fitness,
            best_size: population[best].genome.size(),
            invalid_count: population.len() - valid.len(),
        }
    }
}

/// Outcome of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    /// Generations `0..=max_generations`.
    pub stats: Vec<GenerationStats>,
    pub best_individual: Individual,
    /// First generation whose best equals the final best.
    pub best_found_at: usize,
    pub seed_used: u64,
}

impl RunResult {
    pub fn best_fitness(&self) -> Fitness {
        self.best_individual.fitness
    }
}

/// Lowest-index individual with minimal fitness.
pub fn best_index(population: &[Individual]) -> usize {
    population
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.fitness.cmp(&b.1.fitness))
        .map(|(i, _)| i)
        .expect("non-empty population")
}

/// Random stream for one `(generation, slot)` event of a run.
pub fn event_rng(seed: u64, generation: usize, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64) << 32) | slot);
    rng
}

/// A configured run: primitive set, fitness cases and seed.
#[derive(Clone, Debug)]
pub struct Evolution {
    config: GPConfig,
    pset: PrimitiveSet,
    cases: FitnessCases,
    seed: u64,
}

impl Evolution {
    pub fn new(config: GPConfig, seed: u64) -> Result<Self, EngineError> {
        config.validate()?;
        let pset = config.problem.id.primitive_set();
        let cases = generate_cases(&config.problem, &mut event_rng(seed, 0, CASES_SLOT));
        Ok(Self {
            config,
            pset,
            cases,
            seed,
        })
    }

    pub fn config(&self) -> &GPConfig {
        &self.config
    }

    pub fn primitive_set(&self) -> &PrimitiveSet {
        &self.pset
    }

    pub fn cases(&self) -> &FitnessCases {
        &self.cases
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn evaluate(&self, genome: crate::exprtree::ExprTree) -> Individual {
        Individual::evaluated(genome, &self.cases, self.config.fitness_metric)
    }

    pub fn init_population(&self) -> Result<Vec<Individual>, EngineError> {
        let bounds = self.config.bounds();
        (0..self.config.population_size)
            .into_par_iter()
            .map(|slot| {
                let mut rng = event_rng(self.seed, 0, slot as u64);
                let genome = self.pset.grow(bounds.min, bounds.max, &mut rng)?;
                Ok(self.evaluate(genome))
            })
            .collect()
    }

    /// Produces generation `generation` (1-based) from `population`.
    pub fn step_generation(
        &self,
        population: &[Individual],
        generation: usize,
    ) -> Result<Vec<Individual>, EngineError> {
        let size = self.config.population_size;
        if population.len() != size {
            return Err(EngineError::Config(format!(
                "population has {} individuals, expected {size}",
                population.len()
            )));
        }
        if generation == 0 || generation > self.config.max_generations {
            return Err(OperatorError::GenerationOutOfRange {
                generation,
                total: self.config.max_generations,
            }
            .into());
        }

        let mut ranked: Vec<usize> = (0..size).collect();
        ranked.sort_by(|&a, &b| population[a].fitness.cmp(&population[b].fitness));
        let mut next: Vec<Individual> = ranked[..self.config.elite_count]
            .iter()
            .map(|&i| population[i].clone())
            .collect();

        let pairs = (size - self.config.elite_count).div_ceil(2);
        let offspring: Vec<(Individual, Individual)> = (0..pairs)
            .into_par_iter()
            .map(|slot| self.breed(population, generation, slot as u64))
            .collect::<Result<_, _>>()?;
        for (first, second) in offspring {
            next.push(first);
            if next.len() < size {
                next.push(second);
            }
        }
        debug_assert_eq!(next.len(), size);
        Ok(next)
    }

    /// One breeding event: two tournaments, optional recombination, then
    /// independent mutation of each child.
    fn breed(
        &self,
        population: &[Individual],
        generation: usize,
        slot: u64,
    ) -> Result<(Individual, Individual), EngineError> {
        let cfg = &self.config;
        let bounds = cfg.bounds();
        let mut rng = event_rng(self.seed, generation, slot);
        let i = tournament_index(population, cfg.tournament_k, &mut rng)?;
        let j = tournament_index(population, cfg.tournament_k, &mut rng)?;
        let (p1, p2) = (&population[i], &population[j]);

        let mut children = if rng.random::<f64>() < cfg.crossover_probability {
            match cfg.operator {
                Operator::Subtree => {
                    let (a, b) =
                        subtree_crossover(&p1.genome, &p2.genome, bounds, cfg.brood.max_retries, &mut rng);
                    [self.evaluate(a), self.evaluate(b)]
                }
                Operator::Sbc | Operator::Msbc => {
                    let brood: Vec<Individual> =
                        brood_generate(&p1.genome, &p2.genome, &cfg.brood, bounds, &mut rng)
                            .into_iter()
                            .map(|g| self.evaluate(g))
                            .collect();
                    let (a, b) = if cfg.operator == Operator::Sbc {
                        sbc_select(&brood)?
                    } else {
                        msbc_select(&brood, generation, cfg.max_generations, cfg.brood.switch_ratio)?
                    };
                    [brood[a].clone(), brood[b].clone()]
                }
            }
        } else {
            [p1.clone(), p2.clone()]
        };

        for child in &mut children {
            if rng.random::<f64>() < cfg.mutation_probability {
                let genome =
                    subtree_mutate(&child.genome, &self.pset, bounds, cfg.brood.max_retries, &mut rng);
                *child = self.evaluate(genome);
            }
        }
        let [a, b] = children;
        Ok((a, b))
    }

    /// Runs every generation and collects statistics.
    pub fn run(&self) -> Result<RunResult, EngineError> {
        let mut population = self.init_population()?;
        let mut stats = Vec::with_capacity(self.config.max_generations + 1);
        stats.push(GenerationStats::of(0, &population));
        for generation in 1..=self.config.max_generations {
            population = self.step_generation(&population, generation)?;
            stats.push(GenerationStats::of(generation, &population));
        }
        let best_individual = population[best_index(&population)].clone();
        let best_found_at = stats
            .iter()
            .find(|s| s.best_fitness == best_individual.fitness)
            .map(|s| s.generation)
            .unwrap_or(self.config.max_generations);
        Ok(RunResult {
            stats,
            best_individual,
            best_found_at,
            seed_used: self.seed,
        })
    }
}

/// Resolves the seed, builds the run and executes it.
pub fn run(config: &GPConfig) -> Result<RunResult, EngineError> {
    let seed = config.seed.resolve();
    Evolution::new(config.clone(), seed)?.run()
}
