use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use datamech::online::{run_ci_online, run_unbiased_online, BudgetSchedule, Record};
use datamech::{regularize, solve_ci, solve_unbiased, virtual_costs, CostSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cost_set(m: usize, seed: u64) -> CostSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CostSet::new((0..m).map(|_| 10.0 * rng.random::<f64>()).collect(), 10.0).unwrap()
}

fn solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("solvers");
    for m in [100usize, 1_000, 10_000] {
        let set = cost_set(m, m as u64);
        let psi = virtual_costs(&set);
        let budget = 0.3 * psi.iter().sum::<f64>();
        group.bench_with_input(BenchmarkId::new("regularize", m), &psi, |b, psi| b.iter(|| regularize(psi).unwrap()));
        group.bench_with_input(BenchmarkId::new("solve_unbiased", m), &set, |b, set| {
            b.iter(|| solve_unbiased(set, budget).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("solve_ci", m), &set, |b, set| {
            b.iter(|| solve_ci(set, budget, 0.5).unwrap())
        });
    }
    group.finish();
}

fn online(c: &mut Criterion) {
    let mut group = c.benchmark_group("online");
    group.sample_size(20);
    for n in [50usize, 100, 200] {
        let set = cost_set(n, 7);
        let arrivals: Vec<Record> = set.costs().iter().map(|&cost| Record { cost, datum: 1.0 }).collect();
        let budget = n as f64;
        let su = BudgetSchedule::unbiased(n, budget).unwrap();
        let sc = BudgetSchedule::ci(n, budget).unwrap();
        group.bench_with_input(BenchmarkId::new("unbiased_run", n), &arrivals, |b, a| {
            b.iter(|| run_unbiased_online(a, 10.0, &su, 1).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("ci_run", n), &arrivals, |b, a| {
            b.iter(|| run_ci_online(a, 10.0, &sc, 0.9, 1).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, solvers, online);
criterion_main!(benches);
