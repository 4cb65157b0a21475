//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use datamech::audit::{random_cost_set, run_suite, Suite};
use datamech::oracle::{grid_search_unbiased, regularize_naive};
use datamech::report::{to_json, write_runs_csv};
use datamech::sim::{CorrelationMap, CostLaw, DataLaw};
use datamech::{
    gen_population, monte_carlo, regularize, solve_ci, solve_unbiased, truthfulness_audit, virtual_costs, CostSet,
    Mechanism, MonteCarloConfig, Population, PopulationSpec, SimMetrics, Task,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let fixed = CostSet::from_costs(vec![1.0, 10.0, 11.0]).unwrap();
    let psi = virtual_costs(&fixed);
    let phi = regularize(&psi).unwrap();
    let anchor = psi == [1.0, 19.0, 13.0] && phi == [1.0, 16.0, 16.0] && regularize_naive(&psi) == phi;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let set = random_cost_set(&mut rng, 200, 10.0);
        let psi = virtual_costs(&set);
        let fast = regularize(&psi).unwrap();
        let naive = regularize_naive(&psi);
        let mut bad = false;
        for (a, b) in fast.iter().zip(&naive) {
            if a != b {
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
            }
            bad |= !rel_close(*a, *b, 1e-12);
        }
        failures += usize::from(bad);
    }
    let elapsed = start.elapsed();
    outcome(
        anchor && failures == 0 && elapsed < Duration::from_secs(10),
        format!("anchor {anchor}, {failures}/10000 mismatches, worst rel diff {worst:.1e}, {elapsed:.1?}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let fixed = CostSet::from_costs(vec![1.0, 10.0, 11.0]).unwrap();
    let a = solve_unbiased(&fixed, 3.0).unwrap().probabilities;
    let anchor = [1.0 / 3.0, 1.0 / 12.0, 1.0 / 12.0].iter().zip(&a).all(|(x, y)| (x - y).abs() <= 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0;
    let mut worst_gap = 0.0f64;
    for _ in 0..500 {
        let set = random_cost_set(&mut rng, 6, 10.0);
        let total: f64 = virtual_costs(&set).iter().sum();
        let b = total * rng.random_range(0.05..1.2) + 1e-3;
        let closed = solve_unbiased(&set, b).unwrap().inverse_sum();
        let grid = grid_search_unbiased(&set, b, 1e-3).unwrap().objective;
        worst_gap = worst_gap.max(closed / grid - 1.0);
        failures += usize::from(closed > grid * 1.01);
    }
    let elapsed = start.elapsed();
    outcome(
        anchor && failures == 0 && elapsed < Duration::from_secs(300),
        format!("anchor {anchor}, {failures}/500 above oracle + 1%, worst closed/oracle - 1 = {worst_gap:.2e}, {elapsed:.1?}"),
    )
}

/// Random non-increasing allocation in `(0, 1]`, sometimes with ties.
fn random_allocation(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut a: Vec<f64> = (0..m).map(|_| rng.random_range(0.001..=1.0)).collect();
    if rng.random::<bool>() {
        for x in a.iter_mut() {
            *x = (*x * 4.0).ceil() / 4.0;
        }
    }
    a.sort_by(|x, y| y.total_cmp(x));
    a
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0;
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let set = random_cost_set(&mut rng, 50, 10.0);
        let psi = virtual_costs(&set);
        let alloc = if i % 2 == 0 {
            let b = psi.iter().sum::<f64>() * rng.random_range(0.05..1.2) + 1e-3;
            solve_unbiased(&set, b).unwrap().probabilities
        } else {
            random_allocation(&mut rng, set.len())
        };
        let mech = Mechanism::from_allocation(set.clone(), alloc.clone()).unwrap();
        let by_pay: f64 = alloc.iter().zip(mech.payments()).map(|(a, p)| a * p).sum();
        let by_psi: f64 = alloc.iter().zip(&psi).map(|(a, p)| a * p).sum();
        let scale = by_pay.abs().max(by_psi.abs());
        if by_pay != by_psi {
            worst = worst.max((by_pay - by_psi).abs() / scale);
        }
        failures += usize::from((by_pay - by_psi).abs() > 1e-9 * scale);
    }
    outcome(failures == 0, format!("{failures}/10000 violations, worst rel diff {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0;
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let set = random_cost_set(&mut rng, 30, 10.0);
        let total: f64 = virtual_costs(&set).iter().sum();
        let b = total * rng.random_range(0.05..1.2) + 1e-3;
        let mech = match i % 3 {
            0 => Mechanism::new(set.clone(), &solve_unbiased(&set, b).unwrap()).unwrap(),
            1 => {
                let sol = solve_ci(&set, b, rng.random_range(0.05..1.5)).unwrap();
                Mechanism::from_allocation(set.clone(), sol.effective_allocation()).unwrap()
            }
            _ => Mechanism::from_allocation(set.clone(), random_allocation(&mut rng, set.len())).unwrap(),
        };
        let r = truthfulness_audit(&mech, 201);
        worst = worst.max(r.max_violation).max(r.max_ir_violation);
        failures += usize::from(!r.passed);
    }
    let grid = CostSet::from_costs(vec![1.0, 2.0]).unwrap();
    let honest = Mechanism::from_allocation(grid.clone(), vec![1.0, 0.5]).unwrap();
    let mut corrupted_pay = honest.payments().to_vec();
    corrupted_pay[0] -= 0.1;
    let corrupted = Mechanism::with_payments(grid, vec![1.0, 0.5], corrupted_pay).unwrap();
    let r = truthfulness_audit(&corrupted, 201);
    let detected = !r.passed && (r.max_violation - 0.1).abs() < 1e-9;
    outcome(
        failures == 0 && detected,
        format!(
            "{failures}/1000 mechanisms flagged, worst violation {worst:.1e}, corrupted payment detected {detected} (violation {:.6})",
            r.max_violation
        ),
    )
}

struct Scenario {
    name: &'static str,
    spec: PopulationSpec,
    cap: f64,
}

fn scenarios() -> Vec<Scenario> {
    vec![
        Scenario {
            name: "two_point",
            spec: PopulationSpec::TwoPoint {
                low_cost: 1.0,
                high_cost: 25.0,
                high_fraction: 0.1,
                low_datum: 0.2,
                high_datum: 1.0,
            },
            cap: 25.0,
        },
        Scenario {
            name: "spread_correlated",
            spec: PopulationSpec::Correlated { costs: CostLaw::Spread { low: 0.0, high: 10.0 }, map: CorrelationMap::Increasing },
            cap: 10.0,
        },
        Scenario {
            name: "uniform_bernoulli",
            spec: PopulationSpec::Independent {
                costs: CostLaw::Uniform { low: 0.0, high: 10.0 },
                data: DataLaw::Bernoulli { p: 0.4 },
            },
            cap: 10.0,
        },
    ]
}

struct SimCase {
    scenario: &'static str,
    n: usize,
    metrics: SimMetrics,
}

fn simulate(pop: &Population, task: Task, gamma: Option<f64>, runs: usize, seed: u64) -> SimMetrics {
    let config = MonteCarloConfig {
        task,
        budget: 2.0 * pop.len() as f64,
        gamma,
        runs,
        master_seed: seed,
        threads: 0,
    };
    monte_carlo(pop, &config).unwrap().metrics
}

fn budget_runs() -> (Vec<SimCase>, Duration) {
    let start = Instant::now();
    let mut cases = Vec::new();
    for n in [50, 100] {
        for s in scenarios() {
            let pop = gen_population(&s.spec, n, s.cap, 11).unwrap();
            for (task, gamma) in [(Task::Unbiased, None), (Task::Ci, Some(0.9))] {
                let metrics = simulate(&pop, task, gamma, 20_000, 5);
                cases.push(SimCase { scenario: s.name, n, metrics });
            }
        }
    }
    (cases, start.elapsed())
}

fn criterion_5(cases: &[SimCase], elapsed: Duration) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = elapsed < Duration::from_secs(600);
    for c in cases {
        let m = &c.metrics;
        let pass = m.expected_spend <= m.budget + 3.0 * m.spend_se;
        ok &= pass;
        lines.push(format!(
            "{:?}/{}/n={}: spend {:.3} (se {:.3}) vs B {}",
            m.task, c.scenario, c.n, m.expected_spend, m.spend_se, m.budget
        ));
    }
    outcome(ok, format!("{elapsed:.1?}\n      {}", lines.join("\n      ")))
}

fn criterion_6(cases: &[SimCase]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for c in cases.iter().filter(|c| c.metrics.task == Task::Unbiased) {
        let m = &c.metrics;
        let pass = (m.estimator_mean - m.population_mean).abs() <= 3.0 * m.estimator_mean_se;
        ok &= pass;
        lines.push(format!(
            "{}/n={}: mean {:.5} vs {:.5} (se {:.5})",
            c.scenario, c.n, m.estimator_mean, m.population_mean, m.estimator_mean_se
        ));
    }
    outcome(ok, lines.join("\n      "))
}

fn criterion_7(cases: &[SimCase]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for c in cases
        .iter()
        .filter(|c| c.metrics.task == Task::Unbiased && matches!(c.scenario, "two_point" | "spread_correlated"))
    {
        let m = &c.metrics;
        let rhs = m.bound_rhs_unbiased.unwrap();
        let pass = m.estimator_variance <= rhs + 3.0 * m.estimator_variance_se;
        ok &= pass;
        lines.push(format!(
            "{}/n={}: Var(S) {:.5} (se {:.5}) vs rhs {:.5}",
            c.scenario, c.n, m.estimator_variance, m.estimator_variance_se, rhs
        ));
    }
    outcome(ok, lines.join("\n      "))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let runs = 5000;
    let mut lines = Vec::new();
    let mut ok = true;
    for gamma in [0.9, 0.95] {
        for s in scenarios() {
            let pop = gen_population(&s.spec, 200, s.cap, 12).unwrap();
            let m = simulate(&pop, Task::Ci, Some(gamma), runs, 8);
            let floor = gamma - 2.0 * (gamma * (1.0 - gamma) / runs as f64).sqrt();
            let cov = m.ci_coverage.unwrap();
            let len = m.ci_mean_length.unwrap();
            let rhs = m.bound_rhs_ci.unwrap();
            ok &= cov >= floor && len <= rhs;
            lines.push(format!(
                "gamma {gamma}/{}/n=200: coverage {cov:.4} (floor {floor:.4}), length {len:.4} vs rhs {rhs:.3} (L* {:.4})",
                s.name,
                m.benchmark_l_star.unwrap()
            ));
        }
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(600);
    outcome(ok, format!("{elapsed:.1?}\n      {}", lines.join("\n      ")))
}

fn suite_outcome(suite: Suite, instances: usize, seed: u64) -> Outcome {
    let report = run_suite(suite, instances, seed).unwrap();
    let lines: Vec<String> = report
        .properties
        .iter()
        .map(|p| {
            let mut s = format!(
                "[{}] {} ({}/{} failed)",
                if p.passed { "ok" } else { "FAILED" },
                p.property,
                p.failures,
                p.checked
            );
            if let Some(d) = &p.detail {
                s.push_str(&format!("; first: {d}"));
            }
            s
        })
        .collect();
    outcome(report.passed(), lines.join("\n      "))
}

fn criterion_9() -> Outcome {
    suite_outcome(Suite::Convexity, 100, 9)
}

fn criterion_10() -> Outcome {
    suite_outcome(Suite::Adjacency, 1000, 10)
}

fn artifacts(pop: &Population, task: Task, gamma: Option<f64>, threads: usize) -> (String, Vec<u8>) {
    let config = MonteCarloConfig { task, budget: 2.0 * pop.len() as f64, gamma, runs: 2000, master_seed: 42, threads };
    let report = monte_carlo(pop, &config).unwrap();
    let mut csv = Vec::new();
    write_runs_csv(&report.runs, &mut csv).unwrap();
    (to_json(&report.metrics).unwrap(), csv)
}

fn criterion_11() -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    for s in scenarios() {
        let pop = gen_population(&s.spec, 60, s.cap, 3).unwrap();
        for (task, gamma) in [(Task::Unbiased, None), (Task::Ci, Some(0.95))] {
            let one = artifacts(&pop, task, gamma, 1);
            let eight = artifacts(&pop, task, gamma, 8);
            let same = one == eight;
            ok &= same;
            lines.push(format!("{:?}/{}: identical {same}", task, s.name));
        }
    }
    outcome(ok, lines.join("\n      "))
}

fn report(failed: &mut Vec<usize>, id: usize, title: &str, o: Outcome) {
    println!("criterion {id:>2} {}: {title}\n      {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    if !o.passed {
        failed.push(id);
    }
}

fn main() -> ExitCode {
    let mut failed = Vec::new();
    report(&mut failed, 1, "ironing equals the literal definition", criterion_1());
    report(&mut failed, 2, "closed form within 1% of the grid oracle", criterion_2());
    report(&mut failed, 3, "payment identity", criterion_3());
    report(&mut failed, 4, "truthfulness and individual rationality", criterion_4());
    let (cases, elapsed) = budget_runs();
    report(&mut failed, 5, "expected budget feasibility", criterion_5(&cases, elapsed));
    report(&mut failed, 6, "unbiasedness", criterion_6(&cases));
    report(&mut failed, 7, "variance bound", criterion_7(&cases));
    report(&mut failed, 8, "interval coverage and length", criterion_8());
    report(&mut failed, 9, "convexity of the ignored-mass objective", criterion_9());
    report(&mut failed, 10, "adjacency properties", criterion_10());
    report(&mut failed, 11, "determinism across thread counts", criterion_11());
    if failed.is_empty() {
        println!("acceptance: all 11 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
