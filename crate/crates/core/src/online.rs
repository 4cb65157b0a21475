//! Round-by-round online mechanisms under random arrival order.
//!
//! At round `i` the mechanism solves the known-costs problem on
//! `T_i = {c_1, …, c_{i−1}, C̄}` with budget `ξ B √i`, extends the solved
//! rule to the arriving cost and buys the datum with the offered
//! probability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::{solve_unbiased, worst_case_variance, AllocationRule, Mechanism};
use crate::ci::{length_objective, solve_ci, CiParameters, CiSolution};
use crate::costs::CostSet;
use crate::error::{Error, Result};
use crate::estimation::{bernstein_interval, horvitz_thompson, sample_variance, CiOutput};

/// One arriving agent: private cost and datum in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub cost: f64,
    pub datum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Unbiased,
    Ci,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unbiased" => Ok(Task::Unbiased),
            "ci" => Ok(Task::Ci),
            other => Err(Error::Config(format!("unknown task {other:?}; expected unbiased or ci"))),
        }
    }
}

/// Total budget `B = n B̄` spread as `ξ B √i` over rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSchedule {
    pub total_budget: f64,
    pub xi: f64,
    pub n: usize,
}

impl BudgetSchedule {
    /// `ξ = 1/(4√n)`.
    pub fn unbiased(n: usize, total_budget: f64) -> Result<Self> {
        Self::with_factor(n, total_budget, 4.0)
    }

    /// `ξ = 1/(16√n)`.
    pub fn ci(n: usize, total_budget: f64) -> Result<Self> {
        Self::with_factor(n, total_budget, 16.0)
    }

    pub fn for_task(task: Task, n: usize, total_budget: f64) -> Result<Self> {
        match task {
            Task::Unbiased => Self::unbiased(n, total_budget),
            Task::Ci => Self::ci(n, total_budget),
        }
    }

    fn with_factor(n: usize, total_budget: f64, factor: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("schedule needs at least one round"));
        }
        if !total_budget.is_finite() || total_budget < 0.0 {
            return Err(Error::invalid(format!("budget must be finite and non-negative, got {total_budget}")));
        }
        Ok(BudgetSchedule { total_budget, xi: 1.0 / (factor * (n as f64).sqrt()), n })
    }

    /// Budget of round `i` (1-based).
    pub fn per_round(&self, i: usize) -> f64 {
        self.xi * self.total_budget * (i as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTranscript {
    pub round: usize,
    pub cost: f64,
    pub grid: Vec<f64>,
    pub probability: f64,
    pub payment: f64,
    pub ignored: bool,
    pub purchased: bool,
    pub observed: Option<f64>,
    pub y: f64,
    pub paid: f64,
    pub above_cap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineOutcome {
    /// `S = (1/n) Σ y_i`.
    pub estimate: f64,
    /// Realized total payments.
    pub spend: f64,
    pub ci: Option<CiOutput>,
    pub ignored: usize,
    pub declined_above_cap: usize,
    pub transcripts: Vec<RoundTranscript>,
}

/// The round mechanism of the unbiased task on grid `T_i`.
pub fn unbiased_round_mechanism(grid: &CostSet, budget: f64) -> Result<Mechanism> {
    let rule = solve_unbiased(grid, budget)?;
    Mechanism::new(grid.clone(), &rule)
}

/// The round mechanism of the CI task: the solved `(A, U)` with `U` rounded
/// at 1/2 into a deterministic ignore indicator, and Myerson payments for
/// the effective rule `(1 − Û) A`.
pub fn ci_round_mechanism(grid: &CostSet, budget: f64, beta: f64) -> Result<(Mechanism, CiSolution)> {
    let solution = solve_ci(grid, budget, beta)?;
    let effective = solution
        .allocation
        .probabilities
        .iter()
        .zip(&solution.ignore.u_values)
        .map(|(&a, &u)| if u >= 0.5 { 0.0 } else { a })
        .collect();
    let mech = Mechanism::from_allocation(grid.clone(), effective)?;
    Ok((mech, solution))
}

pub fn run_unbiased_online(
    arrivals: &[Record],
    cap: f64,
    schedule: &BudgetSchedule,
    seed: u64,
) -> Result<OnlineOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_online(Task::Unbiased, arrivals, cap, schedule, None, &mut rng, true)
}

pub fn run_ci_online(
    arrivals: &[Record],
    cap: f64,
    schedule: &BudgetSchedule,
    gamma: f64,
    seed: u64,
) -> Result<OnlineOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_online(Task::Ci, arrivals, cap, schedule, Some(gamma), &mut rng, true)
}

/// Shared runner; `record` controls whether per-round transcripts are kept.
pub(crate) fn run_online<R: Rng>(
    task: Task,
    arrivals: &[Record],
    cap: f64,
    schedule: &BudgetSchedule,
    gamma: Option<f64>,
    rng: &mut R,
    record: bool,
) -> Result<OnlineOutcome> {
    let n = arrivals.len();
    if n == 0 {
        return Err(Error::invalid("no arrivals"));
    }
    if !cap.is_finite() || cap < 0.0 {
        return Err(Error::invalid(format!("cap must be finite and non-negative, got {cap}")));
    }
    for (i, r) in arrivals.iter().enumerate() {
        if !(r.cost.is_finite() && r.cost >= 0.0) {
            return Err(Error::invalid(format!("arrival {i} has invalid cost {}", r.cost)));
        }
        if !(0.0..=1.0).contains(&r.datum) {
            return Err(Error::invalid(format!("arrival {i} has datum {} outside [0, 1]", r.datum)));
        }
    }
    let params = match task {
        Task::Unbiased => {
            if !(schedule.total_budget > 0.0) {
                return Err(Error::invalid("the unbiased task needs a positive budget"));
            }
            None
        }
        Task::Ci => {
            if n < 2 {
                return Err(Error::invalid("the interval task needs at least two arrivals"));
            }
            let gamma = gamma.ok_or_else(|| Error::invalid("the interval task needs gamma"))?;
            Some(CiParameters::new(gamma, n)?)
        }
    };

    // sorted history of in-range reports
    let mut seen: Vec<f64> = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut transcripts = Vec::with_capacity(if record { n } else { 0 });
    let mut spend = 0.0;
    let mut ignored = 0usize;
    let mut declined = 0usize;

    for (idx, r) in arrivals.iter().enumerate() {
        let round = idx + 1;
        let coin: f64 = rng.random();
        let mut grid_costs = Vec::with_capacity(seen.len() + 1);
        grid_costs.extend_from_slice(&seen);
        grid_costs.push(cap);
        let grid = CostSet::from_sorted_unchecked(grid_costs, cap);

        let above_cap = r.cost > cap;
        let (probability, payment, ignore, alloc_for_weight) = if above_cap {
            declined += 1;
            (0.0, 0.0, task == Task::Ci, 0.0)
        } else {
            let budget = schedule.per_round(round);
            match params {
                None => {
                    let mech = unbiased_round_mechanism(&grid, budget)?;
                    let offer = mech.offer(r.cost)?;
                    (offer.probability, offer.payment, false, offer.probability)
                }
                Some(p) => {
                    let (mech, solution) = ci_round_mechanism(&grid, budget, p.beta)?;
                    let k = grid.ceil_index(r.cost).expect("cost within cap");
                    let ig = solution.ignore.u_values[k] >= 0.5;
                    let offer = mech.offer(r.cost)?;
                    let a = solution.allocation.probabilities[k];
                    (if ig { 0.0 } else { a }, offer.payment, ig, a)
                }
            }
        };
        if ignore {
            ignored += 1;
        }

        let purchased = !ignore && probability > 0.0 && coin < probability;
        let (observed, y, paid) = if purchased {
            (Some(r.datum), r.datum / alloc_for_weight, payment)
        } else {
            (None, 0.0, 0.0)
        };
        spend += paid;
        ys.push(y);
        if record {
            transcripts.push(RoundTranscript {
                round,
                cost: r.cost,
                grid: grid.costs().to_vec(),
                probability,
                payment: if ignore { 0.0 } else { payment },
                ignored: ignore,
                purchased,
                observed,
                y,
                paid,
                above_cap,
            });
        }
        if !above_cap {
            let at = seen.partition_point(|&c| c <= r.cost);
            seen.insert(at, r.cost);
        }
    }

    let estimate = horvitz_thompson(&ys)?;
    let ci = match params {
        None => None,
        Some(p) => {
            let sigma = sample_variance(&ys)?.sqrt();
            Some(bernstein_interval(estimate, sigma, n, p.gamma, ignored as f64 / n as f64)?)
        }
    };
    Ok(OnlineOutcome { estimate, spend, ci, ignored, declined_above_cap: declined, transcripts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbiasedBenchmark {
    pub grid: CostSet,
    pub rule: AllocationRule,
    /// Worst-case variance over the `n + 1` augmented costs.
    pub var_star: f64,
}

impl UnbiasedBenchmark {
    /// `A*(C̄)`.
    pub fn allocation_at_cap(&self) -> f64 {
        *self.rule.probabilities.last().expect("non-empty grid")
    }
}

/// The known-costs optimum on `{c_1, …, c_n, C̄}` with the full budget.
pub fn benchmark_unbiased(costs: &[f64], cap: f64, budget: f64) -> Result<UnbiasedBenchmark> {
    let grid = CostSet::with_cap_appended(costs, cap)?;
    let rule = solve_unbiased(&grid, budget)?;
    let var_star = worst_case_variance(&rule, &grid)?;
    Ok(UnbiasedBenchmark { grid, rule, var_star })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiBenchmark {
    pub grid: CostSet,
    pub params: CiParameters,
    pub solution: CiSolution,
    /// Length objective at the solved `(A*, U*)`.
    pub l_star: f64,
}

/// The known-costs interval optimum on `{c_1, …, c_n, C̄}` with
/// `β = 2 α_γ / √(n + 1)`.
pub fn benchmark_ci(costs: &[f64], cap: f64, budget: f64, gamma: f64) -> Result<CiBenchmark> {
    let grid = CostSet::with_cap_appended(costs, cap)?;
    let m = grid.len();
    let params = CiParameters::new(gamma, m)?;
    let solution = solve_ci(&grid, budget, params.beta)?;
    let l_star = length_objective(&solution.allocation, &solution.ignore, params.beta, m);
    Ok(CiBenchmark { grid, params, solution, l_star })
}

/// `16 ((1 + 1/n)² Var* + 1/n + 1/(n√n) / A*(C̄))`.
pub fn unbiased_bound_rhs(n: usize, benchmark: &UnbiasedBenchmark) -> f64 {
    let nf = n as f64;
    16.0 * ((1.0 + 1.0 / nf).powi(2) * benchmark.var_star
        + 1.0 / nf
        + 1.0 / (nf * nf.sqrt()) / benchmark.allocation_at_cap())
}

/// `8√10 L* + 2√10/√n`, plus `1/√n` standing in for the lower-order term.
pub fn ci_bound_rhs(n: usize, benchmark: &CiBenchmark) -> f64 {
    let s10 = 10f64.sqrt();
    let rn = (n as f64).sqrt();
    8.0 * s10 * benchmark.l_star + 2.0 * s10 / rn + 1.0 / rn
}
