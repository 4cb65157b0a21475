//! Prior-free, budget-feasible data acquisition.
//!
//! Agents hold a private cost and a datum in `[0, 1]`. The mechanisms here
//! buy data with cost-dependent probabilities, pay truthful prices and
//! estimate the population mean either without bias or as a short
//! confidence interval.
//!
//! - [`virtual_cost`]: virtual costs and ironing
//! - [`allocation`]: unbiased allocation, payments and their extension
//! - [`ci`]: joint allocation and ignore rules for intervals
//! - [`online`]: the round-by-round mechanisms and their benchmarks
//! - [`estimation`]: estimators and interval assembly
//! - [`oracle`]: brute-force references for small instances
//! - [`sim`]: populations and Monte Carlo
//! - [`audit`]: randomized property suites

pub mod allocation;
pub mod audit;
pub mod ci;
pub mod costs;
pub mod error;
pub mod estimation;
pub mod online;
pub mod oracle;
pub mod report;
pub mod sim;
pub mod virtual_cost;

pub use allocation::{
    expected_spend, extend, myerson_payments, solve_unbiased, worst_case_variance, AllocationRule,
    Mechanism, Offer, PaymentRule,
};
pub use ci::{alpha_gamma, ci_objective, g_derivative, length_objective, solve_ci, CiParameters, CiSolution, IgnoreRule};
pub use costs::CostSet;
pub use error::{Error, Result};
pub use estimation::{bernstein_interval, horvitz_thompson, sample_variance, CiOutput};
pub use online::{
    benchmark_ci, benchmark_unbiased, run_ci_online, run_unbiased_online, BudgetSchedule, CiBenchmark,
    OnlineOutcome, Record, RoundTranscript, Task, UnbiasedBenchmark,
};
pub use sim::{
    gen_population, monte_carlo, truthfulness_audit, MonteCarloConfig, MonteCarloReport, Population,
    PopulationSpec, SimMetrics, TruthfulnessReport,
};
pub use virtual_cost::{regularize, virtual_costs, VirtualCostProfile};
