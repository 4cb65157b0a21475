//! Joint allocation and ignore rules for short confidence intervals.
//!
//! The solved objective at the worst case `z ≡ 1` is
//! `F(M) = g(M) + (M/m)²` where `M = Σ U_k` is the ignored mass and
//! `g(M) = β²/m · min Σ (1 − U_k)/A_k` over allocations respecting the budget.
//! Ignored mass always comes off the top of the regularized profile, so for
//! a given `M` the kept part is a prefix of ironed blocks with a partially
//! kept boundary block, and `A` is again `min{1, λ/√φ}` on it. `F` is convex
//! in `M`; the solver bisects on its right derivative.

use serde::{Deserialize, Serialize};

use crate::allocation::{allocation_at, AllocationRule};
use crate::costs::CostSet;
use crate::error::{Error, Result};
use crate::virtual_cost::{regularize_blocks, virtual_costs, IronedBlocks};

/// Upper end of the Bernstein constant range:
/// `√(2 ln(4/γ)) + 7 ln(4/γ)/3`.
pub fn alpha_gamma(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let l = (4.0 / gamma).ln();
    Ok((2.0 * l).sqrt() + 7.0 * l / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiParameters {
    pub gamma: f64,
    pub alpha_gamma: f64,
    /// `2 α_γ / √n`.
    pub beta: f64,
}

impl CiParameters {
    pub fn new(gamma: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("sample size must be positive"));
        }
        let alpha = alpha_gamma(gamma)?;
        Ok(CiParameters { gamma, alpha_gamma: alpha, beta: 2.0 * alpha / (n as f64).sqrt() })
    }
}

/// Threshold ignore rule: `U = 0` below `H`, `p` at `H`, `1` above `H`
/// (thresholds on the regularized virtual cost).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgnoreRule {
    pub u_values: Vec<f64>,
    /// `+∞` when nothing is ignored.
    pub threshold_phi: f64,
    pub boundary_fraction: f64,
    pub total_mass: f64,
}

impl IgnoreRule {
    pub fn none(len: usize) -> Self {
        IgnoreRule {
            u_values: vec![0.0; len],
            threshold_phi: f64::INFINITY,
            boundary_fraction: 1.0,
            total_mass: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiSolution {
    pub allocation: AllocationRule,
    pub ignore: IgnoreRule,
    /// `ci_objective` at the solution.
    pub objective: f64,
}

impl CiSolution {
    /// Ignored mass `M`.
    pub fn mass(&self) -> f64 {
        self.ignore.total_mass
    }

    /// The effective purchase probability `(1 − U_k) A_k`.
    pub fn effective_allocation(&self) -> Vec<f64> {
        self.allocation
            .probabilities
            .iter()
            .zip(&self.ignore.u_values)
            .map(|(a, u)| (1.0 - u) * a)
            .collect()
    }
}

/// `β² (1/n) Σ (1 − U_k)/A_k + (Σ U_k / n)²`; fully ignored entries add
/// nothing to the first term whatever their allocation.
pub fn ci_objective(rule: &AllocationRule, ignore: &IgnoreRule, beta: f64, n: usize) -> f64 {
    let n = n as f64;
    let (var, mass) = variance_and_mass(rule, ignore);
    beta * beta * var / n + (mass / n).powi(2)
}

/// `β √((1/n) Σ (1 − U_k)/A_k) + Σ U_k / n`, the interval-length objective
/// the squared form approximates within a factor 2.
pub fn length_objective(rule: &AllocationRule, ignore: &IgnoreRule, beta: f64, n: usize) -> f64 {
    let n = n as f64;
    let (var, mass) = variance_and_mass(rule, ignore);
    beta * (var / n).sqrt() + mass / n
}

fn variance_and_mass(rule: &AllocationRule, ignore: &IgnoreRule) -> (f64, f64) {
    let mut var = 0.0;
    let mut mass = 0.0;
    for (a, u) in rule.probabilities.iter().zip(&ignore.u_values) {
        mass += u;
        if *u < 1.0 {
            var += (1.0 - u) / a;
        }
    }
    (var, mass)
}

/// Minimizes the squared-form objective over threshold ignore rules and
/// calibrated allocations.
pub fn solve_ci(cost_set: &CostSet, budget: f64, beta: f64) -> Result<CiSolution> {
    let problem = CiProblem::new(cost_set, budget, beta)?;
    let mass = problem.optimal_mass();
    Ok(problem.solution_at(mass))
}

/// Right derivative of `g` at ignored mass `M`.
///
/// In the budget-binding regime this is `−(2β²/m)/A_M(c_r)` with `c_r` the
/// top kept cost. When the kept costs fit strictly inside the budget it is
/// `−β²/m`; exact equality counts as binding with `A = 1`.
pub fn g_derivative(cost_set: &CostSet, budget: f64, beta: f64, mass: f64) -> Result<f64> {
    let problem = CiProblem::new(cost_set, budget, beta)?;
    let m = problem.m as f64;
    if !(0.0..m).contains(&mass) {
        return Err(Error::invalid(format!("ignored mass must lie in [0, {m}), got {mass}")));
    }
    let d = problem.g_right_derivative(mass);
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::Solver(format!("allocation subproblem infeasible at mass {mass}")))
    }
}

/// `F(M) = g(M) + (M/m)²`; infinite where the kept mass cannot be bought.
pub fn objective_at_mass(cost_set: &CostSet, budget: f64, beta: f64, mass: f64) -> Result<f64> {
    let problem = CiProblem::new(cost_set, budget, beta)?;
    let m = problem.m as f64;
    if !(0.0..=m).contains(&mass) {
        return Err(Error::invalid(format!("ignored mass must lie in [0, {m}], got {mass}")));
    }
    Ok(problem.objective(mass))
}

/// Solution with the ignored mass fixed at `mass` instead of optimized.
pub fn solve_ci_at_mass(cost_set: &CostSet, budget: f64, beta: f64, mass: f64) -> Result<CiSolution> {
    let problem = CiProblem::new(cost_set, budget, beta)?;
    let m = problem.m as f64;
    if !(0.0..=m).contains(&mass) {
        return Err(Error::invalid(format!("ignored mass must lie in [0, {m}], got {mass}")));
    }
    Ok(problem.solution_at(mass))
}

const OUTER_ITERATIONS: usize = 200;

struct CiProblem {
    m: usize,
    budget: f64,
    beta: f64,
    blocks: IronedBlocks,
    /// prefix sums over blocks: sizes, `s_b φ_b`, `s_b √φ_b`
    size: Vec<f64>,
    sat: Vec<f64>,
    root: Vec<f64>,
}

/// Budget calibration of the kept prefix at one ignored mass.
struct Kept {
    /// top kept block
    top: usize,
    /// kept weight of the top block, in `(0, s_top]`
    top_weight: f64,
    /// `None` when all kept blocks fit at `A = 1`
    lambda: Option<f64>,
    /// number of kept blocks bought with certainty
    saturated: usize,
    /// total kept spend at `A = 1` equals the budget exactly
    exact: bool,
}

impl CiProblem {
    fn new(cost_set: &CostSet, budget: f64, beta: f64) -> Result<Self> {
        if !budget.is_finite() || budget < 0.0 {
            return Err(Error::invalid(format!("budget must be finite and non-negative, got {budget}")));
        }
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::invalid(format!("beta must be positive and finite, got {beta}")));
        }
        let psi = virtual_costs(cost_set);
        let blocks = regularize_blocks(&psi);
        let q = blocks.blocks.len();
        let (mut size, mut sat, mut root) =
            (Vec::with_capacity(q + 1), Vec::with_capacity(q + 1), Vec::with_capacity(q + 1));
        size.push(0.0);
        sat.push(0.0);
        root.push(0.0);
        for (b, block) in blocks.blocks.iter().enumerate() {
            let s = block.len() as f64;
            size.push(size[b] + s);
            sat.push(sat[b] + s * block.value);
            root.push(root[b] + s * block.value.sqrt());
        }
        Ok(CiProblem { m: cost_set.len(), budget, beta, blocks, size, sat, root })
    }

    fn value(&self, b: usize) -> f64 {
        self.blocks.blocks[b].value
    }

    /// `None` when nothing is kept.
    fn kept(&self, mass: f64) -> Option<Kept> {
        let keep = self.m as f64 - mass;
        if keep <= 0.0 {
            return None;
        }
        let q = self.blocks.blocks.len();
        // first block whose cumulative size reaches the kept mass
        let top = (self.size[1..].partition_point(|&s| s < keep)).min(q - 1);
        let top_weight = (keep - self.size[top]).max(0.0);
        if top_weight <= 0.0 {
            return None;
        }
        let vt = self.value(top);
        let root_kept = self.root[top] + top_weight * vt.sqrt();
        let total = self.sat[top] + top_weight * vt;
        if total <= self.budget {
            return Some(Kept {
                top,
                top_weight,
                lambda: None,
                saturated: top + 1,
                exact: total == self.budget,
            });
        }
        let spend_at = |t: usize| {
            let v = self.value(t);
            self.sat[t + 1] + v.sqrt() * (root_kept - self.root[t + 1])
        };
        let (mut lo, mut hi) = (0usize, top);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if spend_at(mid) <= self.budget {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let rest = root_kept - self.root[lo];
        let lambda = if rest > 0.0 { ((self.budget - self.sat[lo]) / rest).max(0.0) } else { 0.0 };
        Some(Kept { top, top_weight, lambda: Some(lambda), saturated: lo, exact: false })
    }

    /// `g(M)`.
    fn g(&self, mass: f64) -> f64 {
        let Some(k) = self.kept(mass) else { return 0.0 };
        let scale = self.beta * self.beta / self.m as f64;
        let Some(lambda) = k.lambda else {
            return scale * (self.m as f64 - mass);
        };
        let certain = self.size[k.saturated];
        let root_rest = self.root[k.top] - self.root[k.saturated]
            + k.top_weight * self.value(k.top).sqrt();
        if lambda <= 0.0 {
            return f64::INFINITY;
        }
        scale * (certain + root_rest / lambda)
    }

    fn objective(&self, mass: f64) -> f64 {
        let m = self.m as f64;
        self.g(mass) + (mass / m).powi(2)
    }

    fn g_right_derivative(&self, mass: f64) -> f64 {
        let scale = self.beta * self.beta / self.m as f64;
        match self.kept(mass) {
            None => 0.0,
            Some(Kept { lambda: None, exact: false, .. }) => -scale,
            Some(Kept { lambda: None, exact: true, .. }) => -2.0 * scale,
            Some(Kept { lambda: Some(l), top, .. }) => {
                let a = allocation_at(l, self.value(top));
                if a > 0.0 {
                    -2.0 * scale / a
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn objective_right_derivative(&self, mass: f64) -> f64 {
        let m = self.m as f64;
        self.g_right_derivative(mass) + 2.0 * mass / (m * m)
    }

    fn optimal_mass(&self) -> f64 {
        let m = self.m as f64;
        let (mut lo, mut hi) = (0.0, m);
        if self.objective_right_derivative(0.0) >= 0.0 {
            hi = 0.0;
        }
        for _ in 0..OUTER_ITERATIONS {
            if hi - lo <= 1e-13 * m {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let d = if self.g(mid).is_finite() { self.objective_right_derivative(mid) } else { f64::NEG_INFINITY };
            if d >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut candidates = [lo, hi, 0.5 * (lo + hi), 0.0, m];
        candidates.sort_by(f64::total_cmp);
        let mut best = (f64::INFINITY, m);
        for c in candidates {
            let f = self.objective(c);
            if f < best.0 {
                best = (f, c);
            }
        }
        best.1
    }

    fn solution_at(&self, mass: f64) -> CiSolution {
        let m = self.m;
        let kept = self.kept(mass);
        let blocks = &self.blocks.blocks;
        let top_value = blocks.last().map_or(0.0, |b| b.value);

        // allocation
        let (lambda, saturated) = match &kept {
            None => (top_value.sqrt(), true),
            Some(Kept { lambda: Some(l), .. }) => (*l, false),
            Some(k) => (self.value(k.top).sqrt(), true),
        };
        let mut probabilities = Vec::with_capacity(m);
        for (b, block) in blocks.iter().enumerate() {
            let a = match &kept {
                None => 1.0,
                Some(k) if k.lambda.is_none() && b <= k.top => 1.0,
                Some(_) => allocation_at(lambda, block.value),
            };
            probabilities.extend(std::iter::repeat_n(a, block.len()));
        }

        // ignore rule
        let (boundary, fraction) = match &kept {
            None => (Some(0), 1.0),
            Some(k) => {
                let s = blocks[k.top].len() as f64;
                if k.top_weight >= s {
                    (Some(k.top + 1).filter(|&b| b < blocks.len()), 1.0)
                } else {
                    (Some(k.top), 1.0 - k.top_weight / s)
                }
            }
        };
        let mut u_values = Vec::with_capacity(m);
        for (b, block) in blocks.iter().enumerate() {
            let u = match boundary {
                Some(t) if b == t => fraction,
                Some(t) if b > t => 1.0,
                _ => 0.0,
            };
            u_values.extend(std::iter::repeat_n(u, block.len()));
        }
        let (threshold_phi, boundary_fraction, total_mass) = match boundary {
            Some(t) if mass > 0.0 => (blocks[t].value, fraction, mass),
            _ => (f64::INFINITY, 1.0, 0.0),
        };
        if total_mass == 0.0 {
            u_values.iter_mut().for_each(|u| *u = 0.0);
        }

        let allocation = AllocationRule { probabilities, lambda, saturated };
        let ignore = IgnoreRule { u_values, threshold_phi, boundary_fraction, total_mass };
        let objective = ci_objective(&allocation, &ignore, self.beta, m);
        CiSolution { allocation, ignore, objective }
    }
}
