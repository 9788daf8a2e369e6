//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line; run with
//! `cargo test -p broodgp --test acceptance -- --nocapture --test-threads 1`
//! to see them all.

use std::fs;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use broodgp::engine::{Evolution, GPConfig, Operator};
use broodgp::harness::{
    compare_operators, ratio_sweep, read_run_csv, run_batch, write_comparison, write_run_csv, write_sweep,
    DEFAULT_SWEEP_RATIOS,
};
use broodgp::operators::{msbc_mode, msbc_select, sbc_select, BroodMode, Individual};
use broodgp::problems::{Fitness, FitnessMetric, ProblemId};
use broodgp::ExprTree;

const SEED: u64 = 42;
const RUNS: usize = 30;

fn report(name: &str, pass: bool, detail: &str) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn table_config(problem: ProblemId, operator: Operator) -> GPConfig {
    GPConfig::new(problem, operator)
}

#[test]
fn determinism_per_run_csv_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    let mut slowest = Duration::ZERO;
    for op in Operator::ALL {
        let mut bytes = Vec::new();
        for attempt in 0..2 {
            let start = Instant::now();
            let result = Evolution::new(table_config(ProblemId::P2, op), SEED)
                .unwrap()
                .run()
                .unwrap();
            slowest = slowest.max(start.elapsed());
            let path = dir.path().join(format!("{op}_{attempt}.csv"));
            write_run_csv(&result.stats, &path).unwrap();
            bytes.push(fs::read(&path).unwrap());
        }
        if bytes[0] != bytes[1] {
            failures.push(op.to_string());
        }
    }
    let pass = failures.is_empty() && slowest < Duration::from_secs(10);
    report(
        "determinism (P2, seed 42, all operators)",
        pass,
        &format!("mismatching operators {failures:?}, slowest run {slowest:?} (limit 10s)"),
    );
    assert!(pass);
}

fn fitness_distance(a: Fitness, b: Fitness) -> f64 {
    match (a, b) {
        (Fitness::Valid(x), Fitness::Valid(y)) => (x - y).abs(),
        (Fitness::Invalid, Fitness::Invalid) => 0.0,
        _ => f64::INFINITY,
    }
}

/// Among all pairs, the lexicographically first `(i, j)` minimizing
/// `(larger fitness, smaller fitness)`.
fn brute_two_smallest(f: &[Fitness]) -> (usize, usize) {
    let mut best = (0, 1);
    let key = |i: usize, j: usize| (f[i].max(f[j]), f[i].min(f[j]));
    for i in 0..f.len() {
        for j in i + 1..f.len() {
            if key(i, j) < key(best.0, best.1) {
                best = (i, j);
            }
        }
    }
    best
}

/// Maximum pairwise distance over all pairs.
fn brute_max_distance(f: &[Fitness]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..f.len() {
        for j in i + 1..f.len() {
            best = best.max(fitness_distance(f[i], f[j]));
        }
    }
    best
}

/// Lowest-index minimum and lowest-index maximum; `(0, 1)` when all tie.
fn extremes(f: &[Fitness]) -> (usize, usize) {
    let lo = (0..f.len()).fold(0, |a, i| if f[i] < f[a] { i } else { a });
    let hi = (0..f.len()).fold(0, |a, i| if f[i] > f[a] { i } else { a });
    if f[lo] == f[hi] {
        (0, 1)
    } else {
        (lo, hi)
    }
}

fn unordered(p: (usize, usize)) -> (usize, usize) {
    (p.0.min(p.1), p.0.max(p.1))
}

#[test]
fn selection_oracles_match_brute_force() {
    let leaf = ExprTree::parse("x", &ProblemId::P2.primitive_set()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut sbc_mismatch = 0;
    let mut msbc_mismatch = 0;
    let broods = 5000;
    for _ in 0..broods {
        let len = rng.random_range(2..=16);
        let fitness: Vec<Fitness> = (0..len)
            .map(|_| match rng.random_range(0..20) {
                0 => Fitness::Invalid,
                // Coarse values force ties.
                1..=4 => Fitness::Valid(rng.random_range(0..4) as f64 * 0.25),
                _ => Fitness::Valid(rng.random_range(0.0..10.0)),
            })
            .collect();
        let brood: Vec<Individual> = fitness
            .iter()
            .map(|&fitness| Individual { genome: leaf.clone(), fitness })
            .collect();

        if unordered(sbc_select(&brood).unwrap()) != brute_two_smallest(&fitness) {
            sbc_mismatch += 1;
        }
        let got = msbc_select(&brood, 1, 50, 0.5).unwrap();
        let same_distance = fitness_distance(fitness[got.0], fitness[got.1]) == brute_max_distance(&fitness);
        if got.0 == got.1 || !same_distance || unordered(got) != unordered(extremes(&fitness)) {
            msbc_mismatch += 1;
        }
    }
    let pass = sbc_mismatch == 0 && msbc_mismatch == 0;
    report(
        "selection oracles",
        pass,
        &format!("{broods} broods, sbc mismatches {sbc_mismatch}, msbc first-half mismatches {msbc_mismatch}"),
    );
    assert!(pass);
}

#[test]
fn mode_switch_follows_generation_ratio() {
    let brood: Vec<Individual> = {
        let leaf = ExprTree::parse("x", &ProblemId::P2.primitive_set()).unwrap();
        [0.5, 0.2, 0.9, 0.4]
            .iter()
            .map(|&v| Individual { genome: leaf.clone(), fitness: Fitness::Valid(v) })
            .collect()
    };
    let mut errors = Vec::new();
    let mut grid: Vec<(usize, f64)> = (1..=9).map(|k| (k, k as f64 / 10.0)).collect();
    grid.push((5, 0.5));
    for (k, ratio) in grid {
        assert_eq!(ratio, DEFAULT_SWEEP_RATIOS[k - 1]);
        for g in 1..=50 {
            // First half exactly when g <= (k/10) * 50, in integers.
            let expect_first = g * 10 <= k * 50;
            let mode = msbc_mode(g, 50, ratio);
            let picked = msbc_select(&brood, g, 50, ratio).unwrap();
            let ok = if expect_first {
                mode == BroodMode::Dissimilar && picked == (1, 2)
            } else {
                mode == BroodMode::Fittest && picked == (1, 3)
            };
            if !ok {
                errors.push((ratio, g));
            }
        }
    }
    let half: Vec<usize> = (1..=50).filter(|&g| msbc_mode(g, 50, 0.5) == BroodMode::Dissimilar).collect();
    let pass = errors.is_empty() && half == (1..=25).collect::<Vec<_>>();
    report(
        "mode switch (G=50, ratios 0.1..0.9)",
        pass,
        &format!("first-half generations at 0.5: {}..={}, errors {errors:?}", half[0], half[half.len() - 1]),
    );
    assert!(pass);
}

#[test]
fn structural_invariants_hold_over_full_runs() {
    let mut violations = Vec::new();
    let mut runs = 0;
    for problem in ProblemId::ALL {
        for op in Operator::ALL {
            for seed in 0..5u64 {
                runs += 1;
                let config = table_config(problem, op);
                let evo = Evolution::new(config.clone(), seed).unwrap();
                let mut population = evo.init_population().unwrap();
                let mut best = population.iter().map(|i| i.fitness).min().unwrap();
                for generation in 0..=config.max_generations {
                    if generation > 0 {
                        population = evo.step_generation(&population, generation).unwrap();
                    }
                    let tag = format!("{problem}/{op}/seed {seed}/gen {generation}");
                    if population.len() != 100 {
                        violations.push(format!("{tag}: population {}", population.len()));
                    }
                    if let Some(bad) = population.iter().find(|i| !(3..=25).contains(&i.genome.size())) {
                        violations.push(format!("{tag}: tree size {}", bad.genome.size()));
                    }
                    let now = population.iter().map(|i| i.fitness).min().unwrap();
                    if now > best {
                        violations.push(format!("{tag}: best rose from {best} to {now}"));
                    }
                    best = now;
                }
            }
        }
    }
    let pass = violations.is_empty();
    report(
        "structural invariants (3 problems x 3 operators x 5 seeds)",
        pass,
        &format!("{runs} runs, {} violations {:?}", violations.len(), violations.iter().take(5).collect::<Vec<_>>()),
    );
    assert!(pass);
}

#[test]
fn search_sanity_on_sextic() {
    let config = table_config(ProblemId::P2, Operator::Subtree);
    let batch = run_batch(&config, RUNS, SEED).unwrap();
    let improved = batch
        .runs
        .iter()
        .filter(|r| r.stats.last().unwrap().best_fitness < r.stats[0].best_fitness)
        .count();

    let evo = Evolution::new(config, SEED).unwrap();
    let exact = evo
        .cases()
        .fitness_of(&ProblemId::P2.exact_solution(), FitnessMetric::Mse);

    let pass = improved >= 27 && exact == Fitness::Valid(0.0);
    report(
        "search sanity (P2, subtree, 30 runs)",
        pass,
        &format!("{improved}/30 runs improved on generation 0 (need >= 27); exact target fitness {exact}"),
    );
    assert!(pass);
}

#[test]
fn directional_comparison_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut comparisons = Vec::new();
    let mut lines = Vec::new();
    for problem in ProblemId::ALL {
        let batches = compare_operators(&table_config(problem, Operator::Msbc), RUNS, SEED).unwrap();
        let gens: Vec<String> = batches
            .iter()
            .map(|b| format!("{}={}", b.config.operator, b.summary.median_best_found_at))
            .collect();
        lines.push(format!("{problem}: median generation-of-best {}", gens.join(" ")));
        comparisons.push((problem, batches));
    }
    write_comparison(&comparisons, dir.path()).unwrap();
    let table = fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    let direction = fs::read_to_string(dir.path().join("direction.csv")).unwrap();
    let pass = table.lines().count() == 1 + 9
        && table.starts_with("problem,operator,runs,best_fitness,best_found_at,median_best_fitness")
        && direction.lines().count() == 1 + 3;
    for line in &lines {
        println!("    {line}");
    }
    for line in direction.lines().skip(1) {
        println!("    direction: {line}");
    }
    report(
        "directional comparison table (reported, not gated)",
        pass,
        "comparison.csv and direction.csv emitted",
    );
    assert!(pass);
}

#[test]
fn ratio_sweep_reproduces_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let mut sweeps = Vec::new();
    for problem in ProblemId::ALL {
        let rows = ratio_sweep(&table_config(problem, Operator::Msbc), &DEFAULT_SWEEP_RATIOS, RUNS, SEED).unwrap();
        sweeps.push((problem, rows));
    }
    let elapsed = start.elapsed();
    write_sweep(&sweeps, dir.path()).unwrap();

    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let rows: Vec<&str> = lines.collect();
    let expected_header = "first_half_pct,second_half_pct,switch_ratio,\
        P1_best_fitness,P1_best_found_at,P2_best_fitness,P2_best_found_at,P3_best_fitness,P3_best_found_at";
    let pcts: Vec<(String, String)> = rows
        .iter()
        .map(|r| {
            let mut f = r.split(',');
            (f.next().unwrap().to_string(), f.next().unwrap().to_string())
        })
        .collect();
    let expected_pcts: Vec<(String, String)> =
        (1..=9).map(|k| ((k * 10).to_string(), (100 - k * 10).to_string())).collect();

    // Per-run detail stays retrievable for every cell.
    let detail = read_run_csv(&dir.path().join("P2").join("ratio_50").join("run_29.csv")).unwrap();

    let pass = header == expected_header
        && rows.len() == 9
        && pcts == expected_pcts
        && detail.len() == 51
        && elapsed < Duration::from_secs(15 * 60);
    for row in &rows {
        println!("    {row}");
    }
    report(
        "ratio sweep layout (3 problems x 9 ratios x 30 runs)",
        pass,
        &format!("{} rows, elapsed {elapsed:?} (limit 15 min)", rows.len()),
    );
    assert!(pass);
}
