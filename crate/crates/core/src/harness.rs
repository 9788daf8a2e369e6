//! Experiment harness: configuration files, seeded batches, the switch-ratio
//! sweep, operator comparison and CSV reports.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::engine::{EngineError, Evolution, GPConfig, GenerationStats, Operator, RunResult, Seed};
use crate::problems::{Fitness, FitnessMetric, ProblemId};

/// Switch ratios of the default sweep: 10% to 90% in steps of 10%.
pub const DEFAULT_SWEEP_RATIOS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

pub const DEFAULT_RUNS: usize = 30;

pub const RUN_CSV_HEADER: [&str; 5] = [
    "generation",
    "best_fitness",
    "mean_fitness",
    "best_size",
    "invalid_count",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("no problem given (set `problem` to P1, P2 or P3)")]
    MissingProblem,
    #[error(transparent)]
    Invalid(#[from] EngineError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("run {run_id} (seed {seed}) failed: {source}")]
    Run {
        run_id: usize,
        seed: u64,
        #[source]
        source: EngineError,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid switch ratio {0} (must lie in (0, 1))")]
    Ratio(f64),
    #[error("run count must be at least 1")]
    NoRuns,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum SeedValue {
    Number(u64),
    Text(String),
}

/// A configuration document: flat keys, every one optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: Option<ProblemId>,
    pub operator: Option<Operator>,
    pub population_size: Option<usize>,
    pub max_generations: Option<usize>,
    pub min_tree_size: Option<usize>,
    pub max_tree_size: Option<usize>,
    pub tournament_k: Option<usize>,
    pub crossover_probability: Option<f64>,
    pub mutation_probability: Option<f64>,
    pub brood_n: Option<usize>,
    pub switch_ratio: Option<f64>,
    pub max_retries: Option<usize>,
    pub elite_count: Option<usize>,
    pub fitness_metric: Option<FitnessMetric>,
    pub case_count: Option<usize>,
    pub case_min: Option<f64>,
    pub case_max: Option<f64>,
    seed: Option<SeedValue>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub problem: Option<ProblemId>,
    pub operator: Option<Operator>,
    pub seed: Option<Seed>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        file.seed()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    fn seed(&self) -> Result<Option<Seed>, ConfigError> {
        match &self.seed {
            None => Ok(None),
            Some(SeedValue::Number(n)) => Ok(Some(Seed::Fixed(*n))),
            Some(SeedValue::Text(s)) => s.parse().map(Some).map_err(ConfigError::Parse),
        }
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(p) = overrides.problem {
            self.problem = Some(p);
        }
        if let Some(op) = overrides.operator {
            self.operator = Some(op);
        }
        if let Some(seed) = overrides.seed {
            self.seed = Some(match seed {
                Seed::Fixed(n) => SeedValue::Number(n),
                Seed::Time => SeedValue::Text("time".into()),
            });
        }
    }

    /// Effective configuration; a missing operator means `msbc` and a missing
    /// seed means `time`.
    pub fn build(&self) -> Result<GPConfig, ConfigError> {
        let problem = self.problem.ok_or(ConfigError::MissingProblem)?;
        self.build_for(problem)
    }

    /// Like [`ConfigFile::build`] but with `problem` used when the file has none.
    pub fn build_for(&self, problem: ProblemId) -> Result<GPConfig, ConfigError> {
        let mut c = GPConfig::new(self.problem.unwrap_or(problem), self.operator.unwrap_or(Operator::Msbc));
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set! {
            population_size => c.population_size,
            max_generations => c.max_generations,
            min_tree_size => c.min_tree_size,
            max_tree_size => c.max_tree_size,
            tournament_k => c.tournament_k,
            crossover_probability => c.crossover_probability,
            mutation_probability => c.mutation_probability,
            brood_n => c.brood.brood_n,
            switch_ratio => c.brood.switch_ratio,
            max_retries => c.brood.max_retries,
            elite_count => c.elite_count,
            fitness_metric => c.fitness_metric,
            case_count => c.problem.case_count,
            case_min => c.problem.interval.0,
            case_max => c.problem.interval.1,
        }
        if let Some(seed) = self.seed()? {
            c.seed = seed;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Reads a configuration file, applies overrides and fills defaults.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<GPConfig, ConfigError> {
    let mut file = ConfigFile::load(path)?;
    file.apply(overrides);
    file.build()
}

/// Canonical rendering of a configuration. The output is itself a valid
/// configuration document.
pub fn config_digest(c: &GPConfig) -> String {
    let mut s = String::new();
    let metric = match c.fitness_metric {
        FitnessMetric::Mse => "mse",
        FitnessMetric::Mae => "mae",
    };
    let seed = match c.seed {
        Seed::Fixed(n) => n.to_string(),
        Seed::Time => "\"time\"".to_string(),
    };
    let lines: [(&str, String); 18] = [
        ("problem", format!("\"{}\"", c.problem.id)),
        ("operator", format!("\"{}\"", c.operator)),
        ("population_size", c.population_size.to_string()),
        ("max_generations", c.max_generations.to_string()),
        ("min_tree_size", c.min_tree_size.to_string()),
        ("max_tree_size", c.max_tree_size.to_string()),
        ("tournament_k", c.tournament_k.to_string()),
        ("crossover_probability", format!("{:?}", c.crossover_probability)),
        ("mutation_probability", format!("{:?}", c.mutation_probability)),
        ("brood_n", c.brood.brood_n.to_string()),
        ("switch_ratio", format!("{:?}", c.brood.switch_ratio)),
        ("max_retries", c.brood.max_retries.to_string()),
        ("elite_count", c.elite_count.to_string()),
        ("fitness_metric", format!("\"{metric}\"")),
        ("case_count", c.problem.case_count.to_string()),
        ("case_min", format!("{:?}", c.problem.interval.0)),
        ("case_max", format!("{:?}", c.problem.interval.1)),
        ("seed", seed),
    ];
    for (key, value) in lines {
        let _ = writeln!(s, "{key} = {value}");
    }
    s
}

/// Seed of run `index` in a batch: SplitMix64 applied to
/// `master + (index + 1) * 0x9E3779B97F4A7C15` (wrapping).
pub fn derive_seed(master: u64, index: usize) -> u64 {
    let mut z = master.wrapping_add((index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Aggregates over a batch's per-run best fitness.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSummary {
    pub best_fitness: Fitness,
    /// Lowest run index attaining `best_fitness`.
    pub best_run: usize,
    pub best_found_at: usize,
    pub median_best_fitness: f64,
    pub mean_best_fitness: f64,
    pub median_best_found_at: f64,
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

impl BatchSummary {
    pub fn of(runs: &[RunResult]) -> Self {
        let best_run = runs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.best_fitness().cmp(&b.1.best_fitness()))
            .map(|(i, _)| i)
            .expect("non-empty batch");
        let bests: Vec<f64> = runs.iter().map(|r| r.best_fitness().as_f64()).collect();
        Self {
            best_fitness: runs[best_run].best_fitness(),
            best_run,
            best_found_at: runs[best_run].best_found_at,
            mean_best_fitness: bests.iter().sum::<f64>() / bests.len() as f64,
            median_best_fitness: median(bests),
            median_best_found_at: median(runs.iter().map(|r| r.best_found_at as f64).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchReport {
    /// Effective configuration with the concrete master seed.
    pub config: GPConfig,
    pub config_digest: String,
    pub master_seed: u64,
    pub runs: Vec<RunResult>,
    pub summary: BatchSummary,
}

/// Executes `run_count` runs with seeds derived from `master_seed`.
pub fn run_batch(config: &GPConfig, run_count: usize, master_seed: u64) -> Result<BatchReport, HarnessError> {
    if run_count == 0 {
        return Err(HarnessError::NoRuns);
    }
    let mut config = config.clone();
    config.seed = Seed::Fixed(master_seed);
    config.validate().map_err(ConfigError::from)?;

    let outcomes: Vec<Result<RunResult, HarnessError>> = (0..run_count)
        .into_par_iter()
        .map(|run_id| {
            let seed = derive_seed(master_seed, run_id);
            Evolution::new(config.clone(), seed)
                .and_then(|evo| evo.run())
                .map_err(|source| HarnessError::Run { run_id, seed, source })
        })
        .collect();
    let runs = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = BatchSummary::of(&runs);
    Ok(BatchReport {
        config_digest: config_digest(&config),
        config,
        master_seed,
        runs,
        summary,
    })
}

/// One row of the switch-ratio sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub ratio: f64,
    pub best_fitness: Fitness,
    pub best_found_at: usize,
    pub batch: BatchReport,
}

/// Runs one modified-soft-brood batch per switch ratio.
pub fn ratio_sweep(
    base: &GPConfig,
    ratios: &[f64],
    run_count: usize,
    master_seed: u64,
) -> Result<Vec<SweepRow>, HarnessError> {
    if let Some(&bad) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(HarnessError::Ratio(bad));
    }
    ratios
        .iter()
        .map(|&ratio| {
            let mut config = base.clone();
            config.operator = Operator::Msbc;
            config.brood.switch_ratio = ratio;
            let batch = run_batch(&config, run_count, master_seed)?;
            Ok(SweepRow {
                ratio,
                best_fitness: batch.summary.best_fitness,
                best_found_at: batch.summary.best_found_at,
                batch,
            })
        })
        .collect()
}

/// One batch per operator on the same seeds.
pub fn compare_operators(
    base: &GPConfig,
    run_count: usize,
    master_seed: u64,
) -> Result<Vec<BatchReport>, HarnessError> {
    Operator::ALL
        .iter()
        .map(|&op| {
            let mut config = base.clone();
            config.operator = op;
            run_batch(&config, run_count, master_seed)
        })
        .collect()
}

/// Whether the modified soft brood batch reached its best in fewer median
/// generations than every other operator. `None` without an msbc batch.
pub fn msbc_fewest_generations(batches: &[BatchReport]) -> Option<bool> {
    let msbc = batches.iter().find(|b| b.config.operator == Operator::Msbc)?;
    let own = msbc.summary.median_best_found_at;
    Some(
        batches
            .iter()
            .filter(|b| b.config.operator != Operator::Msbc)
            .all(|b| own < b.summary.median_best_found_at),
    )
}

fn fmt_f64(v: f64) -> String {
    v.to_string()
}

fn fmt_pct(ratio: f64) -> String {
    let pct = ratio * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        fmt_f64(pct)
    }
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_text(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    fs::write(&path, text).map_err(io_err(&path))?;
    written.push(path);
    Ok(())
}

fn write_rows<I, R>(path: PathBuf, header: &[&str], rows: I, written: &mut Vec<PathBuf>) -> Result<(), HarnessError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(header).map_err(csv_err(&path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path);
    Ok(())
}

/// Writes one run's per-generation statistics.
pub fn write_run_csv(stats: &[GenerationStats], path: &Path) -> Result<(), HarnessError> {
    let rows = stats.iter().map(|s| {
        [
            s.generation.to_string(),
            s.best_fitness.to_string(),
            fmt_f64(s.mean_fitness),
            s.best_size.to_string(),
            s.invalid_count.to_string(),
        ]
    });
    write_rows(path.to_path_buf(), &RUN_CSV_HEADER, rows, &mut Vec::new())
}

/// Reads a file written by [`write_run_csv`].
pub fn read_run_csv(path: &Path) -> Result<Vec<GenerationStats>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let bad = |what: &str| HarnessError::Io {
        path: path.to_path_buf(),
        source: io::Error::new(io::ErrorKind::InvalidData, format!("bad {what} field")),
    };
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record.map_err(csv_err(path))?;
        let field = |i: usize| r.get(i).unwrap_or("");
        let best: f64 = field(1).parse().map_err(|_| bad("best_fitness"))?;
        out.push(GenerationStats {
            generation: field(0).parse().map_err(|_| bad("generation"))?,
            best_fitness: Fitness::from_error(best),
            mean_fitness: field(2).parse().map_err(|_| bad("mean_fitness"))?,
            best_size: field(3).parse().map_err(|_| bad("best_size"))?,
            invalid_count: field(4).parse().map_err(|_| bad("invalid_count"))?,
        });
    }
    Ok(out)
}

/// Writes `run_<id>.csv` per run, `summary.csv`, `best_trees.csv` and the
/// effective `config.toml` into `out_dir`.
pub fn write_batch(report: &BatchReport, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    create_dir(out_dir)?;
    let mut written = Vec::new();
    write_text(out_dir.join("config.toml"), &report.config_digest, &mut written)?;
    for (id, run) in report.runs.iter().enumerate() {
        let path = out_dir.join(format!("run_{id}.csv"));
        write_run_csv(&run.stats, &path)?;
        written.push(path);
    }
    let summary_rows = report.runs.iter().enumerate().map(|(id, r)| {
        [
            id.to_string(),
            r.seed_used.to_string(),
            r.best_fitness().to_string(),
            r.best_found_at.to_string(),
        ]
    });
    write_rows(
        out_dir.join("summary.csv"),
        &["run_id", "seed", "best_fitness", "best_found_at"],
        summary_rows,
        &mut written,
    )?;
    let pset = report.config.problem.id.primitive_set();
    let tree_rows = report.runs.iter().enumerate().map(|(id, r)| {
        let text = r
            .best_individual
            .genome
            .to_text(&pset)
            .unwrap_or_else(|e| format!("<{e}>"));
        [id.to_string(), text]
    });
    write_rows(out_dir.join("best_trees.csv"), &["run_id", "tree"], tree_rows, &mut written)?;
    Ok(written)
}

/// Writes the sweep table for one or more problems plus each batch under
/// `<out_dir>/<problem>/ratio_<pct>/`. All problems must share the ratio list.
pub fn write_sweep(sweeps: &[(ProblemId, Vec<SweepRow>)], out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    create_dir(out_dir)?;
    let mut written = Vec::new();
    let mut header = vec![
        "first_half_pct".to_string(),
        "second_half_pct".to_string(),
        "switch_ratio".to_string(),
    ];
    for (problem, _) in sweeps {
        header.push(format!("{problem}_best_fitness"));
        header.push(format!("{problem}_best_found_at"));
    }
    let ratios: Vec<f64> = sweeps.first().map(|(_, rows)| rows.iter().map(|r| r.ratio).collect()).unwrap_or_default();
    let rows: Vec<Vec<String>> = ratios
        .iter()
        .enumerate()
        .map(|(i, &ratio)| {
            let mut row = vec![fmt_pct(ratio), fmt_pct(1.0 - ratio), fmt_f64(ratio)];
            for (_, sweep) in sweeps {
                row.push(sweep[i].best_fitness.to_string());
                row.push(sweep[i].best_found_at.to_string());
            }
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(out_dir.join("sweep.csv"), &header_refs, rows, &mut written)?;
    for (problem, sweep) in sweeps {
        for row in sweep {
            let dir = out_dir.join(problem.name()).join(format!("ratio_{}", fmt_pct(row.ratio)));
            written.extend(write_batch(&row.batch, &dir)?);
        }
    }
    Ok(written)
}

/// Writes `comparison.csv` (one row per problem and operator),
/// `direction.csv` (whether msbc needed the fewest median generations) and
/// each batch under `<out_dir>/<problem>/<operator>/`.
pub fn write_comparison(
    comparisons: &[(ProblemId, Vec<BatchReport>)],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    create_dir(out_dir)?;
    let mut written = Vec::new();
    let rows = comparisons.iter().flat_map(|(problem, batches)| {
        batches.iter().map(move |b| {
            let s = &b.summary;
            vec![
                problem.to_string(),
                b.config.operator.to_string(),
                b.runs.len().to_string(),
                s.best_fitness.to_string(),
                s.best_found_at.to_string(),
                fmt_f64(s.median_best_fitness),
                fmt_f64(s.mean_best_fitness),
                fmt_f64(s.median_best_found_at),
            ]
        })
    });
    write_rows(
        out_dir.join("comparison.csv"),
        &[
            "problem",
            "operator",
            "runs",
            "best_fitness",
            "best_found_at",
            "median_best_fitness",
            "mean_best_fitness",
            "median_best_found_at",
        ],
        rows,
        &mut written,
    )?;
    let direction = comparisons.iter().map(|(problem, batches)| {
        let median_of = |op: Operator| {
            batches
                .iter()
                .find(|b| b.config.operator == op)
                .map(|b| fmt_f64(b.summary.median_best_found_at))
                .unwrap_or_default()
        };
        vec![
            problem.to_string(),
            median_of(Operator::Subtree),
            median_of(Operator::Sbc),
            median_of(Operator::Msbc),
            msbc_fewest_generations(batches).map(|b| b.to_string()).unwrap_or_default(),
        ]
    });
    write_rows(
        out_dir.join("direction.csv"),
        &[
            "problem",
            "subtree_median_best_found_at",
            "sbc_median_best_found_at",
            "msbc_median_best_found_at",
            "msbc_fewest_generations",
        ],
        direction,
        &mut written,
    )?;
    for (problem, batches) in comparisons {
        for b in batches {
            let dir = out_dir.join(problem.name()).join(b.config.operator.name());
            written.extend(write_batch(b, &dir)?);
        }
    }
    Ok(written)
}

/// Convenience for a single run written as `run_0.csv` plus `config.toml`.
pub fn write_single_run(config: &GPConfig, result: &RunResult, out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    create_dir(out_dir)?;
    let mut written = Vec::new();
    let mut effective = config.clone();
    effective.seed = Seed::Fixed(result.seed_used);
    write_text(out_dir.join("config.toml"), &config_digest(&effective), &mut written)?;
    let path = out_dir.join("run_0.csv");
    write_run_csv(&result.stats, &path)?;
    written.push(path);
    Ok(written)
}
