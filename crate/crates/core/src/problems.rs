//! Benchmark regression problems, fitness cases and the error-based fitness.

use std::cmp::Ordering;
use std::fmt;
use std::io;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exprtree::{ExprTree, Func, PrimitiveSet};

/// The three benchmark targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProblemId {
    /// `cos(sqrt(sin q)) * cos p * sin x + tan(r - s)`
    P1,
    /// Sextic polynomial `x^6 - 2x^4 + x^2`.
    P2,
    /// `2x^2 - 3x + 4`
    P3,
}

impl ProblemId {
    pub const ALL: [ProblemId; 3] = [ProblemId::P1, ProblemId::P2, ProblemId::P3];

    pub fn name(self) -> &'static str {
        match self {
            ProblemId::P1 => "P1",
            ProblemId::P2 => "P2",
            ProblemId::P3 => "P3",
        }
    }

    pub fn variable_names(self) -> &'static [&'static str] {
        match self {
            ProblemId::P1 => &["x", "p", "q", "r", "s"],
            ProblemId::P2 | ProblemId::P3 => &["x"],
        }
    }

    /// Exact target value for one row of inputs, in `variable_names` order.
    pub fn target(self, row: &[f64]) -> f64 {
        assert_eq!(row.len(), self.variable_names().len(), "row width mismatch");
        match self {
            ProblemId::P1 => {
                let (x, p, q, r, s) = (row[0], row[1], row[2], row[3], row[4]);
                q.sin().sqrt().cos() * p.cos() * x.sin() + (r - s).tan()
            }
            ProblemId::P2 => {
                let x2 = row[0] * row[0];
                x2 * x2 * x2 - 2.0 * x2 * x2 + x2
            }
            ProblemId::P3 => {
                let x = row[0];
                2.0 * x * x - 3.0 * x + 4.0
            }
        }
    }

    /// Function and terminal sets used for this problem in the experiments.
    pub fn primitive_set(self) -> PrimitiveSet {
        let arith = [Func::Add, Func::Sub, Func::Mul];
        let result = match self {
            ProblemId::P1 => PrimitiveSet::new(
                arith
                    .into_iter()
                    .chain([Func::Sqrt, Func::Sin, Func::Cos, Func::Tan]),
                self.variable_names().iter().copied(),
                None,
            ),
            ProblemId::P2 => PrimitiveSet::new(arith, self.variable_names().iter().copied(), None),
            ProblemId::P3 => PrimitiveSet::new(
                arith,
                self.variable_names().iter().copied(),
                Some((0.0, 1.0)),
            ),
        };
        result.expect("built-in primitive sets are valid")
    }

    /// Default `(case_count, sampling interval)`.
    pub fn default_sampling(self) -> (usize, (f64, f64)) {
        match self {
            ProblemId::P1 => (50, (0.0, 1.0)),
            ProblemId::P2 | ProblemId::P3 => (20, (-1.0, 1.0)),
        }
    }

    /// A tree encoding the target exactly, in this problem's primitive set.
    pub fn exact_solution(self) -> ExprTree {
        let text = match self {
            ProblemId::P1 => {
                "(add (mul (mul (cos (sqrt (sin q))) (cos p)) (sin x)) (tan (sub r s)))"
            }
            ProblemId::P2 => {
                "(add (sub (mul (mul x x) (mul (mul x x) (mul x x))) \
                 (add (mul (mul x x) (mul x x)) (mul (mul x x) (mul x x)))) (mul x x))"
            }
            ProblemId::P3 => "(add (sub (mul 2 (mul x x)) (mul 3 x)) 4)",
        };
        ExprTree::parse(text, &self.primitive_set()).expect("solution text parses")
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ProblemId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "P1" => Ok(ProblemId::P1),
            "P2" => Ok(ProblemId::P2),
            "P3" => Ok(ProblemId::P3),
            _ => Err(format!("unknown problem `{s}` (expected one of P1, P2, P3)")),
        }
    }
}

/// A problem instance: target plus how its fitness cases are sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub id: ProblemId,
    pub case_count: usize,
    /// Closed sampling interval, shared by every variable.
    pub interval: (f64, f64),
}

impl ProblemSpec {
    pub fn new(id: ProblemId) -> Self {
        let (case_count, interval) = id.default_sampling();
        Self {
            id,
            case_count,
            interval,
        }
    }

    pub fn variable_names(&self) -> &'static [&'static str] {
        self.id.variable_names()
    }
}

/// How residuals are aggregated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitnessMetric {
    /// Mean squared error.
    #[default]
    Mse,
    /// Mean absolute error.
    Mae,
}

/// Error-based fitness; lower is better.
///
/// `Invalid` marks a genome whose evaluation produced a non-finite value and
/// orders after every finite fitness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fitness {
    Valid(f64),
    Invalid,
}

impl Fitness {
    pub fn from_error(value: f64) -> Self {
        if value.is_finite() {
            Fitness::Valid(value)
        } else {
            Fitness::Invalid
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Fitness::Valid(_))
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            Fitness::Valid(v) => Some(v),
            Fitness::Invalid => None,
        }
    }

    /// The fitness as a real, with `Invalid` mapped to `+inf`.
    pub fn as_f64(&self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }
}

impl Eq for Fitness {}

impl Ord for Fitness {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Fitness::Valid(a), Fitness::Valid(b)) => a.total_cmp(b),
            (Fitness::Valid(_), Fitness::Invalid) => Ordering::Less,
            (Fitness::Invalid, Fitness::Valid(_)) => Ordering::Greater,
            (Fitness::Invalid, Fitness::Invalid) => Ordering::Equal,
        }
    }
}

impl PartialOrd for Fitness {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Fitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

/// Sampled training set for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct FitnessCases {
    variables: Vec<String>,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl FitnessCases {
    pub fn new(variables: Vec<String>, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Self {
        assert_eq!(inputs.len(), targets.len(), "one target per input row");
        assert!(inputs.iter().all(|r| r.len() == variables.len()));
        Self {
            variables,
            inputs,
            targets,
        }
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Aggregated error of `tree` over every case. Any non-finite output
    /// makes the whole fitness `Invalid`.
    pub fn fitness_of(&self, tree: &ExprTree, metric: FitnessMetric) -> Fitness {
        let mut stack = Vec::with_capacity(tree.size());
        let mut total = 0.0;
        for (row, &target) in self.inputs.iter().zip(&self.targets) {
            let out = tree.evaluate_with(row, &mut stack);
            if !out.is_finite() {
                return Fitness::Invalid;
            }
            let residual = out - target;
            total += match metric {
                FitnessMetric::Mse => residual * residual,
                FitnessMetric::Mae => residual.abs(),
            };
        }
        Fitness::from_error(total / self.targets.len() as f64)
    }

    /// Writes `<variables...>,target` rows.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.variables.iter().map(String::as_str).collect();
        header.push("target");
        out.write_record(&header)?;
        for (row, target) in self.inputs.iter().zip(&self.targets) {
            out.write_record(row.iter().chain([target]).map(f64::to_string))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Samples `case_count` rows uniformly from the problem's interval.
pub fn generate_cases<R: Rng + ?Sized>(spec: &ProblemSpec, rng: &mut R) -> FitnessCases {
    let (lo, hi) = spec.interval;
    let width = spec.variable_names().len();
    let inputs: Vec<Vec<f64>> = (0..spec.case_count)
        .map(|_| (0..width).map(|_| rng.random_range(lo..=hi)).collect())
        .collect();
    let targets = inputs.iter().map(|row| spec.id.target(row)).collect();
    FitnessCases::new(
        spec.variable_names().iter().map(|s| s.to_string()).collect(),
        inputs,
        targets,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cases(id: ProblemId, seed: u64) -> FitnessCases {
        generate_cases(&ProblemSpec::new(id), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn target_examples() {
        assert_eq!(ProblemId::P3.target(&[0.0]), 4.0);
        assert_eq!(ProblemId::P2.target(&[1.0]), 0.0);
        assert_eq!(ProblemId::P1.target(&[0.0; 5]), 0.0);
        assert_eq!(ProblemId::P3.target(&[1.0]), 3.0);
        assert_eq!(ProblemId::P2.target(&[2.0]), 64.0 - 32.0 + 4.0);
    }

    #[test]
    fn p2_case_shape_and_bounds() {
        let c = cases(ProblemId::P2, 11);
        assert_eq!(c.len(), 20);
        for row in c.inputs() {
            assert_eq!(row.len(), 1);
            assert!((-1.0..=1.0).contains(&row[0]));
        }
        assert_eq!(c, cases(ProblemId::P2, 11));
        assert_ne!(c, cases(ProblemId::P2, 12));
    }

    #[test]
    fn p1_rows_have_five_columns() {
        let c = cases(ProblemId::P1, 5);
        assert_eq!(c.len(), 50);
        assert_eq!(c.variables(), &["x", "p", "q", "r", "s"]);
        assert!(c.inputs().iter().all(|r| r.len() == 5 && r.iter().all(|v| (0.0..=1.0).contains(v))));
        assert!(c.targets().iter().all(|t| t.is_finite()));
    }

    #[test]
    fn exact_solutions_have_zero_fitness() {
        for id in ProblemId::ALL {
            let c = cases(id, 42);
            let tree = id.exact_solution();
            assert_eq!(c.fitness_of(&tree, FitnessMetric::Mse), Fitness::Valid(0.0), "{id}");
            assert_eq!(c.fitness_of(&tree, FitnessMetric::Mae), Fitness::Valid(0.0), "{id}");
        }
    }

    #[test]
    fn overflow_gives_invalid() {
        let pset = PrimitiveSet::new([Func::Exp], ["x"], None).unwrap();
        let tree = ExprTree::parse("(exp (exp (exp x)))", &pset).unwrap();
        // e^e^e^x overflows once x exceeds about 1.98.
        let c = FitnessCases::new(vec!["x".into()], vec![vec![0.0], vec![3.0]], vec![0.0, 0.0]);
        assert_eq!(c.fitness_of(&tree, FitnessMetric::Mse), Fitness::Invalid);
    }

    #[test]
    fn constant_zero_on_p2_is_mean_squared_target() {
        let c = cases(ProblemId::P2, 2024);
        let pset = ProblemId::P2.primitive_set();
        let zero = ExprTree::parse("(sub x x)", &pset).unwrap();
        // Independent oracle: direct summation over the sampled inputs.
        let mut oracle = 0.0;
        for row in c.inputs() {
            let x: f64 = row[0];
            let t = x.powi(6) - 2.0 * x.powi(4) + x.powi(2);
            oracle += t * t;
        }
        oracle /= 20.0;
        let got = c.fitness_of(&zero, FitnessMetric::Mse).value().unwrap();
        assert!((got - oracle).abs() <= 1e-15 * oracle.max(1.0), "{got} vs {oracle}");
    }

    #[test]
    fn fitness_ordering() {
        let mut v = vec![Fitness::Invalid, Fitness::Valid(2.0), Fitness::Valid(0.0), Fitness::Valid(1e300)];
        v.sort();
        assert_eq!(
            v,
            vec![Fitness::Valid(0.0), Fitness::Valid(2.0), Fitness::Valid(1e300), Fitness::Invalid]
        );
        assert_eq!(Fitness::from_error(f64::NAN), Fitness::Invalid);
        assert_eq!(Fitness::Invalid.as_f64(), f64::INFINITY);
    }

    #[test]
    fn cases_csv_dump() {
        let c = FitnessCases::new(vec!["x".into()], vec![vec![0.5], vec![-1.0]], vec![0.25, 0.0]);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,target\n0.5,0.25\n-1,0\n");
    }

    #[test]
    fn problem_names_parse() {
        assert_eq!("p2".parse::<ProblemId>(), Ok(ProblemId::P2));
        assert!("P4".parse::<ProblemId>().is_err());
    }

    proptest! {
        #[test]
        fn sextic_is_even(x in -10.0f64..10.0) {
            prop_assert_eq!(ProblemId::P2.target(&[x]), ProblemId::P2.target(&[-x]));
        }

        #[test]
        fn fitness_is_nonnegative_and_deterministic(seed in any::<u64>(), case_seed in 0u64..50) {
            let id = ProblemId::ALL[(seed % 3) as usize];
            let pset = id.primitive_set();
            let tree = pset.grow(3, 25, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let c = cases(id, case_seed);
            let f = c.fitness_of(&tree, FitnessMetric::Mse);
            prop_assert_eq!(f, c.fitness_of(&tree, FitnessMetric::Mse));
            if let Fitness::Valid(v) = f {
                prop_assert!(v >= 0.0);
            }
        }
    }
}
