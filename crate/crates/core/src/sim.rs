//! Populations, seeded Monte Carlo over arrival orders, and the metrics the
//! audits check.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::Mechanism;
use crate::error::{Error, Result};
use crate::online::{
    benchmark_ci, benchmark_unbiased, ci_bound_rhs, run_online, unbiased_bound_rhs, BudgetSchedule,
    Record, Task,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub records: Vec<Record>,
    pub cap: f64,
    /// Describes the generator that produced the records.
    pub tag: String,
}

impl Population {
    pub fn new(records: Vec<Record>, cap: f64, tag: impl Into<String>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("population is empty"));
        }
        if !cap.is_finite() || cap < 0.0 {
            return Err(Error::invalid(format!("cap must be finite and non-negative, got {cap}")));
        }
        for (i, r) in records.iter().enumerate() {
            if !(r.cost >= 0.0 && r.cost <= cap) {
                return Err(Error::invalid(format!("record {i}: cost {} outside [0, {cap}]", r.cost)));
            }
            if !(0.0..=1.0).contains(&r.datum) {
                return Err(Error::invalid(format!("record {i}: datum {} outside [0, 1]", r.datum)));
            }
        }
        Ok(Population { records, cap, tag: tag.into() })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cost).collect()
    }

    /// `(1/n) Σ z_i`.
    pub fn mean(&self) -> f64 {
        self.records.iter().map(|r| r.datum).sum::<f64>() / self.records.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostLaw {
    Uniform { low: f64, high: f64 },
    Constant { value: f64 },
    /// Evenly spaced from `low` to `high`, no randomness.
    Spread { low: f64, high: f64 },
    /// `round(high_fraction · n)` agents at `high`, the rest at `low`.
    TwoPoint { low: f64, high: f64, high_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataLaw {
    Constant { value: f64 },
    Bernoulli { p: f64 },
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMap {
    /// `z = c / C̄`
    Increasing,
    /// `z = 1 − c / C̄`
    Decreasing,
}

/// Population generator descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSpec {
    /// `z ≡ 1`.
    WorstCase { costs: CostLaw },
    Independent { costs: CostLaw, data: DataLaw },
    Correlated { costs: CostLaw, map: CorrelationMap },
    TwoPoint {
        low_cost: f64,
        high_cost: f64,
        high_fraction: f64,
        #[serde(default = "one")]
        low_datum: f64,
        #[serde(default = "one")]
        high_datum: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl PopulationSpec {
    pub fn tag(&self) -> String {
        match self {
            PopulationSpec::WorstCase { .. } => "worst_case".into(),
            PopulationSpec::Independent { .. } => "independent".into(),
            PopulationSpec::Correlated { map: CorrelationMap::Increasing, .. } => "correlated_increasing".into(),
            PopulationSpec::Correlated { map: CorrelationMap::Decreasing, .. } => "correlated_decreasing".into(),
            PopulationSpec::TwoPoint { .. } => "two_point".into(),
        }
    }
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {f}")))
    }
}

fn draw_costs<R: Rng>(law: &CostLaw, n: usize, cap: f64, rng: &mut R) -> Result<Vec<f64>> {
    let check = |v: f64| {
        if v.is_finite() && (0.0..=cap).contains(&v) {
            Ok(())
        } else {
            Err(Error::Config(format!("cost law value {v} outside [0, {cap}]")))
        }
    };
    match *law {
        CostLaw::Uniform { low, high } => {
            check(low)?;
            check(high)?;
            if low > high {
                return Err(Error::Config(format!("uniform cost law has low {low} > high {high}")));
            }
            Ok((0..n).map(|_| low + (high - low) * rng.random::<f64>()).collect())
        }
        CostLaw::Constant { value } => {
            check(value)?;
            Ok(vec![value; n])
        }
        CostLaw::Spread { low, high } => {
            check(low)?;
            check(high)?;
            if low > high {
                return Err(Error::Config(format!("spread cost law has low {low} > high {high}")));
            }
            if n == 1 {
                return Ok(vec![low]);
            }
            Ok((0..n).map(|i| low + (high - low) * i as f64 / (n - 1) as f64).collect())
        }
        CostLaw::TwoPoint { low, high, high_fraction } => {
            check(low)?;
            check(high)?;
            check_fraction("high_fraction", high_fraction)?;
            let hi = (high_fraction * n as f64).round() as usize;
            let mut v = vec![low; n - hi.min(n)];
            v.extend(std::iter::repeat_n(high, hi.min(n)));
            Ok(v)
        }
    }
}

fn draw_data<R: Rng>(law: &DataLaw, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    match *law {
        DataLaw::Constant { value } => {
            check_fraction("data value", value)?;
            Ok(vec![value; n])
        }
        DataLaw::Bernoulli { p } => {
            check_fraction("p", p)?;
            Ok((0..n).map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 }).collect())
        }
        DataLaw::Uniform => Ok((0..n).map(|_| rng.random::<f64>()).collect()),
    }
}

/// Deterministic population for a given seed.
pub fn gen_population(spec: &PopulationSpec, n: usize, cap: f64, seed: u64) -> Result<Population> {
    if n == 0 {
        return Err(Error::Config("population size must be positive".into()));
    }
    if !cap.is_finite() || cap <= 0.0 {
        return Err(Error::Config(format!("cap must be positive and finite, got {cap}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (costs, data) = match spec {
        PopulationSpec::WorstCase { costs } => (draw_costs(costs, n, cap, &mut rng)?, vec![1.0; n]),
        PopulationSpec::Independent { costs, data } => {
            let c = draw_costs(costs, n, cap, &mut rng)?;
            (c, draw_data(data, n, &mut rng)?)
        }
        PopulationSpec::Correlated { costs, map } => {
            let c = draw_costs(costs, n, cap, &mut rng)?;
            let z = c
                .iter()
                .map(|&x| match map {
                    CorrelationMap::Increasing => x / cap,
                    CorrelationMap::Decreasing => 1.0 - x / cap,
                })
                .collect();
            (c, z)
        }
        PopulationSpec::TwoPoint { low_cost, high_cost, high_fraction, low_datum, high_datum } => {
            check_fraction("low_datum", *low_datum)?;
            check_fraction("high_datum", *high_datum)?;
            let law = CostLaw::TwoPoint { low: *low_cost, high: *high_cost, high_fraction: *high_fraction };
            let c = draw_costs(&law, n, cap, &mut rng)?;
            let z = c.iter().map(|&x| if x == *high_cost { *high_datum } else { *low_datum }).collect();
            (c, z)
        }
    };
    let records = costs.into_iter().zip(data).map(|(cost, datum)| Record { cost, datum }).collect();
    Population::new(records, cap, spec.tag()).map_err(|e| Error::Config(e.to_string()))
}

/// Generator for run `run` under `master_seed`: one ChaCha stream per run.
pub fn run_rng(master_seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(run as u64);
    rng
}

/// Arrival order of run `run`, as consumed by [`monte_carlo`].
pub fn arrival_order(n: usize, master_seed: u64, run: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut run_rng(master_seed, run));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub task: Task,
    pub budget: f64,
    pub gamma: Option<f64>,
    pub runs: usize,
    pub master_seed: u64,
    /// Worker threads; 0 picks the rayon default.
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub estimate: f64,
    pub spend: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub covered: Option<bool>,
    pub ignored: usize,
    pub declined_above_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub budget: bool,
    pub unbiased: Option<bool>,
    pub variance_bound: Option<bool>,
    pub coverage: Option<bool>,
    pub length_bound: Option<bool>,
}

impl Verdicts {
    pub fn all_pass(&self) -> bool {
        self.budget
            && [self.unbiased, self.variance_bound, self.coverage, self.length_bound]
                .iter()
                .all(|v| v.unwrap_or(true))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub task: Task,
    pub population: String,
    pub n: usize,
    pub budget: f64,
    pub gamma: Option<f64>,
    pub runs: usize,
    pub seed: u64,
    pub population_mean: f64,
    pub estimator_mean: f64,
    pub estimator_mean_se: f64,
    pub estimator_variance: f64,
    pub estimator_variance_se: f64,
    pub expected_spend: f64,
    pub spend_se: f64,
    pub ci_mean_length: Option<f64>,
    pub ci_length_se: Option<f64>,
    pub ci_coverage: Option<f64>,
    pub benchmark_var_star: Option<f64>,
    pub benchmark_l_star: Option<f64>,
    pub bound_rhs_unbiased: Option<f64>,
    pub bound_rhs_ci: Option<f64>,
    pub declined_above_cap: usize,
    pub verdicts: Verdicts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub metrics: SimMetrics,
    pub runs: Vec<RunRecord>,
}

fn one_run(task: Task, pop: &Population, schedule: &BudgetSchedule, gamma: Option<f64>, seed: u64, run: usize) -> Result<RunRecord> {
    let mut rng = run_rng(seed, run);
    let mut arrivals = pop.records.clone();
    arrivals.shuffle(&mut rng);
    let out = run_online(task, &arrivals, pop.cap, schedule, gamma, &mut rng, false)?;
    let truth = pop.mean();
    Ok(RunRecord {
        run,
        estimate: out.estimate,
        spend: out.spend,
        lower: out.ci.map(|c| c.lower),
        upper: out.ci.map(|c| c.upper),
        covered: out.ci.map(|c| c.contains(truth)),
        ignored: out.ignored,
        declined_above_cap: out.declined_above_cap,
    })
}

/// Mean, variance (n − 1 divisor) and the standard error of that variance
/// `√((m₄ − s⁴)/runs)`.
fn moments(xs: &[f64]) -> (f64, f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0, 0.0);
    }
    let (mut m2, mut m4) = (0.0, 0.0);
    for x in xs {
        let d = (x - mean) * (x - mean);
        m2 += d;
        m4 += d * d;
    }
    let var = m2 / (k - 1.0);
    let m4 = m4 / k;
    let var_se = ((m4 - (m2 / k).powi(2)).max(0.0) / k).sqrt();
    (mean, var, var_se)
}

/// Runs the online mechanism over `runs` uniformly random arrival orders.
///
/// Each run draws from its own ChaCha stream keyed by `(master_seed, run)`
/// and results are reduced in run order, so the report is identical for
/// any thread count.
pub fn monte_carlo(pop: &Population, config: &MonteCarloConfig) -> Result<MonteCarloReport> {
    if config.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let n = pop.len();
    let schedule = BudgetSchedule::for_task(config.task, n, config.budget)?;
    if config.task == Task::Ci && config.gamma.is_none() {
        return Err(Error::Config("the ci task needs gamma".into()));
    }
    let gamma = if config.task == Task::Ci { config.gamma } else { None };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        (0..config.runs)
            .into_par_iter()
            .map(|run| one_run(config.task, pop, &schedule, gamma, config.master_seed, run))
            .collect::<Result<Vec<_>>>()
    })?;

    let k = runs.len() as f64;
    let estimates: Vec<f64> = runs.iter().map(|r| r.estimate).collect();
    let spends: Vec<f64> = runs.iter().map(|r| r.spend).collect();
    let (estimator_mean, estimator_variance, estimator_variance_se) = moments(&estimates);
    let (expected_spend, spend_var, _) = moments(&spends);
    let estimator_mean_se = (estimator_variance / k).sqrt();
    let spend_se = (spend_var / k).sqrt();
    let population_mean = pop.mean();
    let declined_above_cap = runs.iter().map(|r| r.declined_above_cap).sum();

    let costs = pop.costs();
    let mut metrics = SimMetrics {
        task: config.task,
        population: pop.tag.clone(),
        n,
        budget: config.budget,
        gamma,
        runs: config.runs,
        seed: config.master_seed,
        population_mean,
        estimator_mean,
        estimator_mean_se,
        estimator_variance,
        estimator_variance_se,
        expected_spend,
        spend_se,
        ci_mean_length: None,
        ci_length_se: None,
        ci_coverage: None,
        benchmark_var_star: None,
        benchmark_l_star: None,
        bound_rhs_unbiased: None,
        bound_rhs_ci: None,
        declined_above_cap,
        verdicts: Verdicts {
            budget: expected_spend <= config.budget + 3.0 * spend_se,
            unbiased: None,
            variance_bound: None,
            coverage: None,
            length_bound: None,
        },
    };

    match config.task {
        Task::Unbiased => {
            let bench = benchmark_unbiased(&costs, pop.cap, config.budget)?;
            let rhs = unbiased_bound_rhs(n, &bench);
            metrics.benchmark_var_star = Some(bench.var_star);
            metrics.bound_rhs_unbiased = Some(rhs);
            metrics.verdicts.unbiased =
                Some((estimator_mean - population_mean).abs() <= 3.0 * estimator_mean_se);
            metrics.verdicts.variance_bound = Some(estimator_variance <= rhs + 3.0 * estimator_variance_se);
        }
        Task::Ci => {
            let g = gamma.expect("checked above");
            let lengths: Vec<f64> = runs.iter().map(|r| r.upper.unwrap() - r.lower.unwrap()).collect();
            let (mean_len, len_var, _) = moments(&lengths);
            let coverage = runs.iter().filter(|r| r.covered == Some(true)).count() as f64 / k;
            let bench = benchmark_ci(&costs, pop.cap, config.budget, g)?;
            let rhs = ci_bound_rhs(n, &bench);
            metrics.ci_mean_length = Some(mean_len);
            metrics.ci_length_se = Some((len_var / k).sqrt());
            metrics.ci_coverage = Some(coverage);
            metrics.benchmark_l_star = Some(bench.l_star);
            metrics.bound_rhs_ci = Some(rhs);
            metrics.verdicts.coverage = Some(coverage >= g - 2.0 * (g * (1.0 - g) / k).sqrt());
            metrics.verdicts.length_bound = Some(mean_len <= rhs);
        }
    }
    Ok(MonteCarloReport { metrics, runs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthfulnessReport {
    /// Largest gain from misreporting, `max(u(c, ĉ) − u(c, c), 0)`.
    pub max_violation: f64,
    /// `(true, reported)` pair attaining the violation.
    pub worst_pair: Option<(f64, f64)>,
    /// Largest shortfall of the payment below the true cost on an offer.
    pub max_ir_violation: f64,
    pub pairs_checked: usize,
    pub passed: bool,
}

pub const AUDIT_TOLERANCE: f64 = 1e-9;

/// Checks every (true, reported) pair over the mechanism's grid costs and
/// `resolution` evenly spaced points of `[0, C̄]`.
pub fn truthfulness_audit(mechanism: &Mechanism, resolution: usize) -> TruthfulnessReport {
    let grid = mechanism.grid();
    let cap = grid.cap();
    let mut points: Vec<f64> = grid.costs().to_vec();
    if resolution >= 2 {
        points.extend((0..resolution).map(|i| cap * i as f64 / (resolution - 1) as f64));
    }
    points.sort_by(f64::total_cmp);
    points.dedup();

    let offers: Vec<(f64, f64)> = points
        .iter()
        .map(|&c| mechanism.offer(c).map_or((0.0, 0.0), |o| (o.probability, o.payment)))
        .collect();
    let mut max_violation = 0.0;
    let mut worst_pair = None;
    let mut max_ir = 0.0f64;
    for (i, &c) in points.iter().enumerate() {
        let (a, p) = offers[i];
        let truthful = if a > 0.0 { a * (p - c) } else { 0.0 };
        if a > 0.0 {
            max_ir = max_ir.max(c - p);
        }
        for (j, &(ar, pr)) in offers.iter().enumerate() {
            let lie = if ar > 0.0 { ar * (pr - c) } else { 0.0 };
            let gain = lie - truthful;
            if gain > max_violation {
                max_violation = gain;
                worst_pair = Some((c, points[j]));
            }
        }
    }
    TruthfulnessReport {
        max_violation,
        worst_pair,
        max_ir_violation: max_ir,
        pairs_checked: points.len() * points.len(),
        passed: max_violation <= AUDIT_TOLERANCE && max_ir <= AUDIT_TOLERANCE,
    }
}
