//! Tree-based genetic programming for symbolic regression.
//!
//! Three recombination operators are available: plain subtree crossover,
//! soft brood crossover (keep the two fittest of a brood of `2N` children)
//! and modified soft brood crossover (keep the brood's most fitness-dissimilar
//! pair early in the run, the two fittest afterwards).
//!
//! - [`exprtree`]: genotype, primitives, growth, evaluation and text form
//! - [`problems`]: benchmark targets, fitness cases and fitness
//! - [`operators`]: selection, crossover, brood selection and mutation
//! - [`engine`]: the generational elitist loop
//! - [`harness`]: configuration files, batches, sweeps and CSV reports

pub mod engine;
pub mod exprtree;
pub mod harness;
pub mod operators;
pub mod problems;

pub use engine::{run, Evolution, GPConfig, GenerationStats, Operator, RunResult, Seed};
pub use exprtree::{Bindings, ExprTree, Func, Primitive, PrimitiveSet};
pub use operators::{BroodConfig, Individual, SizeBounds};
pub use problems::{Fitness, FitnessCases, FitnessMetric, ProblemId, ProblemSpec};
