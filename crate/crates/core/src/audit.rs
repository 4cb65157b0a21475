//! Randomized property suites run by the `audit` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::{myerson_payments, solve_unbiased, Mechanism};
use crate::ci::{objective_at_mass, solve_ci};
use crate::costs::CostSet;
use crate::error::{Error, Result};
use crate::online::ci_round_mechanism;
use crate::oracle::{grid_search_ci, grid_search_unbiased, regularize_naive};
use crate::sim::truthfulness_audit;
use crate::virtual_cost::{regularize, virtual_costs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Ironing,
    Adjacency,
    Truthfulness,
    Oracle,
    Convexity,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Ironing, Suite::Adjacency, Suite::Truthfulness, Suite::Oracle, Suite::Convexity];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Ironing => "ironing",
            Suite::Adjacency => "adjacency",
            Suite::Truthfulness => "truthfulness",
            Suite::Oracle => "oracle",
            Suite::Convexity => "convexity",
        }
    }

    /// Instance count used when the caller does not pick one.
    pub fn default_instances(self) -> usize {
        match self {
            Suite::Ironing => 1000,
            Suite::Adjacency => 1000,
            Suite::Truthfulness => 200,
            Suite::Oracle => 40,
            Suite::Convexity => 100,
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown audit suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyVerdict {
    pub property: String,
    pub passed: bool,
    pub checked: usize,
    pub failures: usize,
    /// First failing instance, if any.
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub instances: usize,
    pub seed: u64,
    pub properties: Vec<PropertyVerdict>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }
}

struct Tally {
    property: &'static str,
    checked: usize,
    failures: usize,
    detail: Option<String>,
}

impl Tally {
    fn new(property: &'static str) -> Self {
        Tally { property, checked: 0, failures: 0, detail: None }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.failures += 1;
            if self.detail.is_none() {
                self.detail = Some(detail());
            }
        }
    }

    fn finish(self) -> PropertyVerdict {
        PropertyVerdict {
            property: self.property.to_string(),
            passed: self.failures == 0,
            checked: self.checked,
            failures: self.failures,
            detail: self.detail,
        }
    }
}

/// Random sorted cost multiset with `1..=max_len` entries in `[0, cap]`.
///
/// Mixes continuous draws, small integers (many ties) and occasional zeros
/// so ironing, ties and free data all get exercised.
pub fn random_cost_set<R: Rng>(rng: &mut R, max_len: usize, cap: f64) -> CostSet {
    let m = rng.random_range(1..=max_len);
    let style = rng.random_range(0..3u8);
    let costs: Vec<f64> = (0..m)
        .map(|_| match style {
            0 => cap * rng.random::<f64>(),
            1 => (rng.random_range(0..=8u32) as f64) * cap / 8.0,
            _ => {
                if rng.random::<f64>() < 0.2 {
                    0.0
                } else {
                    cap * rng.random::<f64>().powi(3)
                }
            }
        })
        .collect();
    CostSet::new(costs, cap).expect("generated costs lie in [0, cap]")
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || a == b
}

pub fn run_suite(suite: Suite, instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let properties = match suite {
        Suite::Ironing => ironing(&mut rng, instances),
        Suite::Adjacency => adjacency(&mut rng, instances)?,
        Suite::Truthfulness => truthfulness(&mut rng, instances)?,
        Suite::Oracle => oracle(&mut rng, instances)?,
        Suite::Convexity => convexity(&mut rng, instances)?,
    };
    Ok(SuiteReport { suite, instances, seed, properties })
}

fn ironing(rng: &mut ChaCha8Rng, instances: usize) -> Vec<PropertyVerdict> {
    let mut equal = Tally::new("fast ironing equals the literal definition");
    let mut monotone = Tally::new("regularized costs are non-decreasing");
    let mut prefix = Tally::new("prefix sums of phi never exceed those of psi");
    let mut blocks = Tally::new("phi and psi agree in sum on every block");
    for _ in 0..instances {
        let set = random_cost_set(rng, 200, 10.0);
        let psi = virtual_costs(&set);
        let fast = regularize(&psi).expect("non-empty");
        let naive = regularize_naive(&psi);
        equal.check(fast.iter().zip(&naive).all(|(a, b)| rel_close(*a, *b, 1e-12)), || {
            format!("costs {:?}", set.costs())
        });
        monotone.check(fast.windows(2).all(|w| w[0] <= w[1]), || format!("costs {:?}", set.costs()));
        let scale: f64 = psi.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        let (mut sp, mut sf) = (0.0, 0.0);
        let mut ok_prefix = true;
        let mut ok_blocks = true;
        let mut start = 0;
        for i in 0..psi.len() {
            sp += psi[i];
            sf += fast[i];
            if sf > sp + 1e-12 * scale {
                ok_prefix = false;
            }
            let boundary = i + 1 == psi.len() || fast[i] != fast[i + 1];
            if boundary {
                let bp: f64 = psi[start..=i].iter().sum();
                let bf: f64 = fast[start..=i].iter().sum();
                if (bp - bf).abs() > 1e-12 * scale {
                    ok_blocks = false;
                }
                if (sf - sp).abs() > 1e-12 * scale {
                    ok_prefix = false;
                }
                start = i + 1;
            }
        }
        prefix.check(ok_prefix, || format!("costs {:?}", set.costs()));
        blocks.check(ok_blocks, || format!("costs {:?}", set.costs()));
    }
    vec![equal.finish(), monotone.finish(), prefix.finish(), blocks.finish()]
}

/// `T₂` and `T₁ = T₂ \ {c_k}` with at least two entries in `T₂`.
fn adjacent_pair(rng: &mut ChaCha8Rng) -> (CostSet, CostSet, usize) {
    loop {
        let t2 = random_cost_set(rng, 40, 10.0);
        if t2.len() < 2 {
            continue;
        }
        let k = rng.random_range(0..t2.len() - 1);
        let t1 = t2.without(k).expect("at least two entries");
        return (t2, t1, k);
    }
}

fn adjacency(rng: &mut ChaCha8Rng, instances: usize) -> Result<Vec<PropertyVerdict>> {
    let tol = 1e-9;
    let mut sandwich = Tally::new("phi on adjacent sets within a factor of two");
    let mut upper = Tally::new("A(T1, B/2) <= A(T2, B) above the removed cost");
    let mut lower = Tally::new("A(T1, B/2) >= A(T2, B/4) above the removed cost");
    let mut spend_up = Tally::new("A*P at the next cost: (T1, B/2) <= (T2, B)");
    let mut spend_lo = Tally::new("A*P at the next cost: (T1, B/2) >= (T2, B/4)");
    let mut mass = Tally::new("ignored mass of (T1, B) <= that of (T2, B/2)");
    for _ in 0..instances {
        let (t2, t1, k) = adjacent_pair(rng);
        let phi2 = regularize(&virtual_costs(&t2))?;
        let phi1 = regularize(&virtual_costs(&t1))?;
        let ok = (0..t2.len()).filter(|&i| i != k).all(|i| {
            let j = if i < k { i } else { i - 1 };
            0.5 * phi1[j] <= phi2[i] * (1.0 + tol) + 1e-12 && phi2[i] <= 2.0 * phi1[j] * (1.0 + tol) + 1e-12
        });
        sandwich.check(ok, || format!("T2 {:?}, k {k}", t2.costs()));

        let total: f64 = virtual_costs(&t2).iter().sum();
        let b = total * rng.random_range(0.05..1.5) + 1e-3;
        let a1 = solve_unbiased(&t1, b / 2.0)?;
        let a2 = solve_unbiased(&t2, b)?;
        let a3 = solve_unbiased(&t2, b / 4.0)?;
        let ok_up = (k + 1..t2.len()).all(|i| a1.probabilities[i - 1] <= a2.probabilities[i] * (1.0 + tol));
        let ok_lo = (k + 1..t2.len()).all(|i| a1.probabilities[i - 1] >= a3.probabilities[i] * (1.0 - tol));
        upper.check(ok_up, || format!("T2 {:?}, k {k}, B {b}", t2.costs()));
        lower.check(ok_lo, || format!("T2 {:?}, k {k}, B {b}", t2.costs()));
        let p1 = myerson_payments(&t1, &a1)?.payments;
        let p2 = myerson_payments(&t2, &a2)?.payments;
        let p3 = myerson_payments(&t2, &a3)?.payments;
        let x1 = a1.probabilities[k] * p1[k];
        let x2 = a2.probabilities[k + 1] * p2[k + 1];
        let x3 = a3.probabilities[k + 1] * p3[k + 1];
        spend_up.check(x1 <= x2 * (1.0 + tol) + 1e-12, || format!("T2 {:?}, k {k}, B {b}: {x1} > {x2}", t2.costs()));
        spend_lo.check(x1 >= x3 * (1.0 - tol) - 1e-12, || format!("T2 {:?}, k {k}, B {b}: {x1} < {x3}", t2.costs()));

        let beta = rng.random_range(0.05..1.5);
        let m1 = solve_ci(&t1, b, beta)?.mass();
        let m2 = solve_ci(&t2, b / 2.0, beta)?.mass();
        mass.check(m1 <= m2 + 1e-6, || format!("T2 {:?}, k {k}, B {b}, beta {beta}: {m1} > {m2}", t2.costs()));
    }
    Ok(vec![
        sandwich.finish(),
        upper.finish(),
        lower.finish(),
        spend_up.finish(),
        spend_lo.finish(),
        mass.finish(),
    ])
}

fn truthfulness(rng: &mut ChaCha8Rng, instances: usize) -> Result<Vec<PropertyVerdict>> {
    let mut unbiased = Tally::new("unbiased round mechanisms are truthful and IR on 201 points");
    let mut ci = Tally::new("interval round mechanisms are truthful and IR on 201 points");
    let mut corrupted = Tally::new("a corrupted payment is detected");
    for _ in 0..instances {
        let set = random_cost_set(rng, 30, 10.0);
        let total: f64 = virtual_costs(&set).iter().sum();
        let b = total * rng.random_range(0.05..1.5) + 1e-3;
        let mech = Mechanism::new(set.clone(), &solve_unbiased(&set, b)?)?;
        let r = truthfulness_audit(&mech, 201);
        unbiased.check(r.passed, || format!("costs {:?}, B {b}: violation {}", set.costs(), r.max_violation));
        let (cm, _) = ci_round_mechanism(&set, b, rng.random_range(0.05..1.5))?;
        let r = truthfulness_audit(&cm, 201);
        ci.check(r.passed, || format!("costs {:?}, B {b}: violation {}", set.costs(), r.max_violation));
    }
    let grid = CostSet::from_costs(vec![1.0, 2.0])?;
    let bad = Mechanism::with_payments(grid, vec![1.0, 0.5], vec![1.4, 2.0])?;
    let r = truthfulness_audit(&bad, 201);
    corrupted.check(!r.passed && (r.max_violation - 0.1).abs() < 1e-9, || {
        format!("violation {}", r.max_violation)
    });
    Ok(vec![unbiased.finish(), ci.finish(), corrupted.finish()])
}

fn oracle(rng: &mut ChaCha8Rng, instances: usize) -> Result<Vec<PropertyVerdict>> {
    let mut unbiased = Tally::new("closed-form unbiased objective within 1% of the grid oracle");
    let mut ci = Tally::new("interval solver objective within grid slack of the oracle");
    for i in 0..instances {
        let set = random_cost_set(rng, 6, 10.0);
        let psi = virtual_costs(&set);
        let total: f64 = psi.iter().sum();
        let b = total * rng.random_range(0.2..1.2) + 1e-3;
        let closed = solve_unbiased(&set, b)?.inverse_sum();
        let grid = grid_search_unbiased(&set, b, 1e-3)?.objective;
        unbiased.check(closed <= grid * (1.0 + 1e-9) && grid <= closed * 1.01, || {
            format!("costs {:?}, B {b}: closed {closed}, oracle {grid}", set.costs())
        });

        if i % 4 == 0 {
            let set = random_cost_set(rng, 4, 10.0);
            let total: f64 = virtual_costs(&set).iter().sum();
            let b = total * rng.random_range(0.0..1.2);
            let beta = rng.random_range(0.1..1.5);
            let closed = solve_ci(&set, b, beta)?.objective;
            let grid = grid_search_ci(&set, b, beta, 1e-2)?.objective;
            let slack = 0.02 * grid + 1e-3;
            ci.check(closed <= grid + 1e-9 && grid <= closed + slack, || {
                format!("costs {:?}, B {b}, beta {beta}: closed {closed}, oracle {grid}", set.costs())
            });
        }
    }
    Ok(vec![unbiased.finish(), ci.finish()])
}

/// Samples `F(M)` at 101 evenly spaced masses.
pub fn sampled_objective(set: &CostSet, budget: f64, beta: f64) -> Result<Vec<f64>> {
    let m = set.len() as f64;
    (0..=100).map(|j| objective_at_mass(set, budget, beta, m * j as f64 / 100.0)).collect()
}

fn convexity(rng: &mut ChaCha8Rng, instances: usize) -> Result<Vec<PropertyVerdict>> {
    let mut convex = Tally::new("sampled objective has second differences >= -1e-6");
    let mut argmin = Tally::new("solved mass within one grid cell of the sampled argmin");
    for _ in 0..instances {
        let set = random_cost_set(rng, 60, 10.0);
        let total: f64 = virtual_costs(&set).iter().sum();
        let b = total * rng.random_range(0.01..1.2) + 1e-3;
        let beta = rng.random_range(0.05..1.5);
        let f = sampled_objective(&set, b, beta)?;
        let ok = f.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] >= -1e-6);
        convex.check(ok, || format!("costs {:?}, B {b}, beta {beta}", set.costs()));
        let m = set.len() as f64;
        let best = (0..f.len()).min_by(|&a, &b| f[a].total_cmp(&f[b])).expect("non-empty");
        let solved = solve_ci(&set, b, beta)?.mass();
        let cell = m / 100.0;
        argmin.check((solved - best as f64 * cell).abs() <= cell * (1.0 + 1e-9), || {
            format!("costs {:?}, B {b}, beta {beta}: solved {solved}, sampled {}", set.costs(), best as f64 * cell)
        });
    }
    Ok(vec![convex.finish(), argmin.finish()])
}
