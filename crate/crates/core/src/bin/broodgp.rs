use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use broodgp::engine::{Evolution, Operator, Seed};
use broodgp::harness::{
    self, compare_operators, msbc_fewest_generations, ratio_sweep, run_batch, ConfigFile, Overrides,
    DEFAULT_RUNS, DEFAULT_SWEEP_RATIOS,
};
use broodgp::problems::ProblemId;
use broodgp::GPConfig;

/// Genetic programming symbolic regression with brood crossover operators.
#[derive(Parser)]
#[command(name = "broodgp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (TOML, keys as in the effective config.toml).
    #[arg(long)]
    config: Option<PathBuf>,
    /// subtree | sbc | msbc
    #[arg(long)]
    operator: Option<Operator>,
    /// P1 | P2 | P3
    #[arg(long)]
    problem: Option<ProblemId>,
    /// Unsigned 64-bit seed, or `time`.
    #[arg(long)]
    seed: Option<Seed>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Single run.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write the sampled fitness cases to cases.csv.
        #[arg(long)]
        dump_cases: bool,
    },
    /// Batch of seeded runs.
    Batch {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
    },
    /// Modified soft brood switch-ratio sweep (all problems unless one is given).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
        /// Comma-separated ratios in (0, 1); defaults to 0.1,...,0.9.
        #[arg(long, value_delimiter = ',')]
        ratios: Vec<f64>,
    },
    /// Batches for every operator (all problems unless one is given).
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_RUNS)]
        runs: usize,
    },
}

impl Common {
    fn file(&self) -> Result<ConfigFile> {
        let mut file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        file.apply(&Overrides {
            problem: self.problem,
            operator: self.operator,
            seed: self.seed,
        });
        Ok(file)
    }

    fn config(&self) -> Result<GPConfig> {
        Ok(self.file()?.build()?)
    }

    /// The single configured problem, or every problem.
    fn configs_per_problem(&self) -> Result<Vec<(ProblemId, GPConfig)>> {
        let file = self.file()?;
        let problems = match file.problem {
            Some(p) => vec![p],
            None => ProblemId::ALL.to_vec(),
        };
        problems
            .into_iter()
            .map(|p| Ok((p, file.build_for(p)?)))
            .collect()
    }
}

fn report_written(files: &[PathBuf], out: &Path) {
    println!("wrote {} files under {}", files.len(), out.display());
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { common, dump_cases } => {
            let config = common.config()?;
            let seed = config.seed.resolve();
            let evo = Evolution::new(config.clone(), seed)?;
            let result = evo.run()?;
            let files = harness::write_single_run(&config, &result, &common.out)?;
            if dump_cases {
                let path = common.out.join("cases.csv");
                let file = std::fs::File::create(&path).with_context(|| path.display().to_string())?;
                evo.cases().write_csv(file).with_context(|| path.display().to_string())?;
            }
            let tree = result.best_individual.genome.to_text(evo.primitive_set())?;
            println!("seed {seed}");
            println!(
                "best fitness {} at generation {}",
                result.best_fitness(),
                result.best_found_at
            );
            println!("best tree {tree}");
            report_written(&files, &common.out);
        }
        Command::Batch { common, runs } => {
            let config = common.config()?;
            let master = config.seed.resolve();
            let report = run_batch(&config, runs, master)?;
            let files = harness::write_batch(&report, &common.out)?;
            let s = &report.summary;
            println!("{} {} runs={runs} master_seed={master}", config.problem.id, config.operator);
            println!(
                "best {} (run {}, generation {}), median best {}, mean best {}, median generation-of-best {}",
                s.best_fitness, s.best_run, s.best_found_at, s.median_best_fitness, s.mean_best_fitness,
                s.median_best_found_at
            );
            report_written(&files, &common.out);
        }
        Command::Sweep { common, runs, ratios } => {
            let ratios = if ratios.is_empty() {
                DEFAULT_SWEEP_RATIOS.to_vec()
            } else {
                ratios
            };
            let mut sweeps = Vec::new();
            for (problem, config) in common.configs_per_problem()? {
                let master = config.seed.resolve();
                let rows = ratio_sweep(&config, &ratios, runs, master)?;
                println!("{problem} (master_seed={master})");
                println!("  first%  second%  best_fitness  at_generation");
                for row in &rows {
                    println!(
                        "  {:>6.0}  {:>7.0}  {}  {}",
                        row.ratio * 100.0,
                        (1.0 - row.ratio) * 100.0,
                        row.best_fitness,
                        row.best_found_at
                    );
                }
                sweeps.push((problem, rows));
            }
            let files = harness::write_sweep(&sweeps, &common.out)?;
            report_written(&files, &common.out);
        }
        Command::Compare { common, runs } => {
            let mut comparisons = Vec::new();
            for (problem, config) in common.configs_per_problem()? {
                let master = config.seed.resolve();
                let batches = compare_operators(&config, runs, master)?;
                println!("{problem} (master_seed={master})");
                println!("  operator  median_best_fitness  median_best_found_at");
                for b in &batches {
                    println!(
                        "  {:<8}  {}  {}",
                        b.config.operator, b.summary.median_best_fitness, b.summary.median_best_found_at
                    );
                }
                if let Some(fewest) = msbc_fewest_generations(&batches) {
                    println!("  msbc reaches its best in the fewest median generations: {fewest}");
                }
                comparisons.push((problem, batches));
            }
            let files = harness::write_comparison(&comparisons, &common.out)?;
            report_written(&files, &common.out);
        }
    }
    Ok(())
}
