//! Budget-calibrated allocation rules for unbiased estimation, the minimal
//! truthful payments that go with them, and their extension from a discrete
//! cost grid to every cost in `[0, C̄]`.

use serde::{Deserialize, Serialize};

use crate::costs::CostSet;
use crate::error::{Error, Result};
use crate::virtual_cost::{regularize_blocks, virtual_costs, IronedBlocks};

/// Relative (with an absolute floor) tolerance for the budget equality.
pub const BUDGET_REL_TOL: f64 = 1e-9;
pub const BUDGET_ABS_TOL: f64 = 1e-12;

/// Purchase probabilities aligned with a [`CostSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRule {
    pub probabilities: Vec<f64>,
    /// Calibration multiplier in `A_k = min{1, λ/√φ_k}`.
    pub lambda: f64,
    /// Set when the budget covers every virtual cost and all `A_k = 1`.
    pub saturated: bool,
}

impl AllocationRule {
    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// `Σ A_k ψ_k`, the expected spend up to the `1/m` normalization.
    pub fn virtual_spend(&self, psi: &[f64]) -> f64 {
        self.probabilities.iter().zip(psi).map(|(a, p)| a * p).sum()
    }

    /// `Σ 1/A_k`, the objective minimized by [`solve_unbiased`].
    pub fn inverse_sum(&self) -> f64 {
        self.probabilities.iter().map(|a| 1.0 / a).sum()
    }
}

/// Payments aligned with a [`CostSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaymentRule {
    pub payments: Vec<f64>,
}

/// The allocation minimizing `Σ 1/A_k` subject to `Σ A_k ψ_k ≤ B`, `A`
/// non-increasing and `0 ≤ A ≤ 1`.
///
/// The solution is `A_k = min{1, λ/√φ_k}` with `λ` binding the budget. When
/// `Σ ψ_k ≤ B` the rule is saturated (all ones).
pub fn solve_unbiased(cost_set: &CostSet, budget: f64) -> Result<AllocationRule> {
    let psi = virtual_costs(cost_set);
    let blocks = regularize_blocks(&psi);
    solve_unbiased_profile(&psi, &blocks, budget)
}

pub(crate) fn solve_unbiased_profile(
    psi: &[f64],
    blocks: &IronedBlocks,
    budget: f64,
) -> Result<AllocationRule> {
    if !budget.is_finite() || budget <= 0.0 {
        return Err(Error::invalid(format!("budget must be positive and finite, got {budget}")));
    }
    let m = psi.len();
    let total: f64 = psi.iter().sum();
    let top = blocks.blocks.last().map_or(0.0, |b| b.value);
    if total <= budget {
        return Ok(AllocationRule { probabilities: vec![1.0; m], lambda: top.sqrt(), saturated: true });
    }

    let Some(lambda) = calibrate_lambda(blocks, |b| b.len() as f64, budget) else {
        return Ok(AllocationRule { probabilities: vec![1.0; m], lambda: top.sqrt(), saturated: true });
    };

    let mut probabilities = Vec::with_capacity(m);
    for b in &blocks.blocks {
        let a = allocation_at(lambda, b.value);
        probabilities.extend(std::iter::repeat_n(a, b.len()));
    }
    let rule = AllocationRule { probabilities, lambda, saturated: false };

    let spend = rule.virtual_spend(psi);
    if (spend - budget).abs() > (BUDGET_REL_TOL * budget).max(BUDGET_ABS_TOL) {
        return Err(Error::Solver(format!(
            "budget calibration missed: spend {spend} vs budget {budget}"
        )));
    }
    Ok(rule)
}

/// `min{1, λ/√φ}`, with zero regularized cost always fully bought.
#[inline]
pub(crate) fn allocation_at(lambda: f64, phi: f64) -> f64 {
    if phi <= 0.0 {
        1.0
    } else {
        (lambda / phi.sqrt()).min(1.0)
    }
}

/// Finds `λ` with `Σ_b w_b min{φ_b, λ√φ_b} = budget` over ironed blocks with
/// kept weights `w_b`, or `None` when the budget covers every block at
/// `A = 1`.
///
/// The spend is piecewise linear in `λ` with breakpoints at `√φ_b`; a binary
/// search over the breakpoints locates the active piece and `λ` is then solved
/// in closed form on it.
pub(crate) fn calibrate_lambda(
    blocks: &IronedBlocks,
    weight: impl Fn(&crate::virtual_cost::IronedBlock) -> f64,
    budget: f64,
) -> Option<f64> {
    let q = blocks.blocks.len();
    let mut sat = Vec::with_capacity(q + 1); // Σ_{b<t} w_b φ_b
    let mut root = Vec::with_capacity(q + 1); // Σ_{b<t} w_b √φ_b
    sat.push(0.0);
    root.push(0.0);
    for b in &blocks.blocks {
        let w = weight(b);
        sat.push(sat.last().unwrap() + w * b.value);
        root.push(root.last().unwrap() + w * b.value.sqrt());
    }
    if sat[q] <= budget {
        return None;
    }
    // spend at λ = √φ_t: blocks 0..=t saturated, the rest at λ/√φ_b
    let spend_at = |t: usize| {
        let v = blocks.blocks[t].value;
        sat[t + 1] + v.sqrt() * (root[q] - root[t + 1])
    };
    // number of blocks that are saturated at the solution
    let (mut lo, mut hi) = (0usize, q);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if spend_at(mid) <= budget {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let saturated = lo;
    let rest = root[q] - root[saturated];
    if rest <= 0.0 {
        return None;
    }
    Some(((budget - sat[saturated]) / rest).max(0.0))
}

/// Minimal truthful, individually rational payments for a monotone rule:
/// `P_k = c_k + (1/A_k) Σ_{j>k} A_j (c_j − c_{j−1})`.
pub fn myerson_payments(cost_set: &CostSet, rule: &AllocationRule) -> Result<PaymentRule> {
    let alloc = &rule.probabilities;
    if alloc.len() != cost_set.len() {
        return Err(Error::invalid("allocation and cost set lengths differ"));
    }
    if let Some(k) = alloc.iter().position(|&a| !(a > 0.0)) {
        return Err(Error::invalid(format!("allocation at index {k} is not positive; payment undefined")));
    }
    check_monotone(alloc)?;
    Ok(PaymentRule { payments: payments_with_zero_suffix(cost_set.costs(), alloc) })
}

fn check_monotone(alloc: &[f64]) -> Result<()> {
    if let Some(k) = alloc.iter().position(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::invalid(format!("allocation at index {k} outside [0, 1]")));
    }
    if let Some(k) = alloc.windows(2).position(|w| w[1] > w[0]) {
        return Err(Error::invalid(format!("allocation increases between index {k} and {}", k + 1)));
    }
    Ok(())
}

/// Myerson payments where zero-allocation entries (a suffix, by
/// monotonicity) get payment 0.
fn payments_with_zero_suffix(costs: &[f64], alloc: &[f64]) -> Vec<f64> {
    let m = costs.len();
    let mut payments = vec![0.0; m];
    let mut tail = 0.0;
    for k in (0..m).rev() {
        if alloc[k] > 0.0 {
            payments[k] = costs[k] + tail / alloc[k];
        }
        if k > 0 {
            tail += alloc[k] * (costs[k] - costs[k - 1]);
        }
    }
    payments
}

/// One (probability, payment) offer of an extended mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Offer {
    pub probability: f64,
    pub payment: f64,
}

/// A discrete survey mechanism `(A, P)` on a cost grid, extended to every
/// cost by rounding up to the least grid cost `⌈c⌉ ≥ c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    grid: CostSet,
    allocation: Vec<f64>,
    payments: Vec<f64>,
}

impl Mechanism {
    /// Pairs a strictly positive monotone rule with its Myerson payments.
    pub fn new(grid: CostSet, rule: &AllocationRule) -> Result<Self> {
        let payments = myerson_payments(&grid, rule)?.payments;
        Ok(Mechanism { grid, allocation: rule.probabilities.clone(), payments })
    }

    /// Accepts a trailing run of zero allocations (costs the mechanism
    /// declines to buy); those entries carry payment 0.
    pub fn from_allocation(grid: CostSet, allocation: Vec<f64>) -> Result<Self> {
        if allocation.len() != grid.len() {
            return Err(Error::invalid("allocation and grid lengths differ"));
        }
        check_monotone(&allocation)?;
        let payments = payments_with_zero_suffix(grid.costs(), &allocation);
        Ok(Mechanism { grid, allocation, payments })
    }

    /// Builds a mechanism from explicit payments without recomputing them,
    /// e.g. to audit a hand-modified payment rule.
    pub fn with_payments(grid: CostSet, allocation: Vec<f64>, payments: Vec<f64>) -> Result<Self> {
        if allocation.len() != grid.len() || payments.len() != grid.len() {
            return Err(Error::invalid("allocation, payments and grid lengths differ"));
        }
        Ok(Mechanism { grid, allocation, payments })
    }

    pub fn grid(&self) -> &CostSet {
        &self.grid
    }

    pub fn allocation(&self) -> &[f64] {
        &self.allocation
    }

    pub fn payments(&self) -> &[f64] {
        &self.payments
    }

    /// The extended offer `(A(⌈c⌉), P(⌈c⌉))`.
    pub fn offer(&self, cost: f64) -> Result<Offer> {
        if !(cost >= 0.0) {
            return Err(Error::invalid(format!("reported cost must be non-negative, got {cost}")));
        }
        if cost > self.grid.cap() {
            return Err(Error::OutOfRange { cost, cap: self.grid.cap() });
        }
        let idx = self
            .grid
            .ceil_index(cost)
            .ok_or(Error::OutOfRange { cost, cap: self.grid.cap() })?;
        Ok(Offer { probability: self.allocation[idx], payment: self.payments[idx] })
    }

    /// Expected utility `A(r)(P(r) − c)` of an agent with true cost `c`
    /// reporting `r`; declined reports are worth 0.
    pub fn utility(&self, true_cost: f64, reported: f64) -> f64 {
        match self.offer(reported) {
            Ok(o) if o.probability > 0.0 => o.probability * (o.payment - true_cost),
            _ => 0.0,
        }
    }
}

/// Extended allocation and payment at `query_cost`.
pub fn extend(mechanism: &Mechanism, query_cost: f64) -> Result<(f64, f64)> {
    let o = mechanism.offer(query_cost)?;
    Ok((o.probability, o.payment))
}

/// Worst-case variance `(1/n²)(Σ 1/A_k − n)` of the Horvitz–Thompson mean
/// under a fixed rule, attained at `z ≡ 1`. Infinite if any `A_k = 0`.
pub fn worst_case_variance(rule: &AllocationRule, cost_set: &CostSet) -> Result<f64> {
    if rule.len() != cost_set.len() {
        return Err(Error::invalid("allocation and cost set lengths differ"));
    }
    if rule.probabilities.iter().any(|&a| a <= 0.0) {
        return Ok(f64::INFINITY);
    }
    let n = rule.len() as f64;
    Ok((rule.inverse_sum() - n) / (n * n))
}

/// `(1/m) Σ A_k P_k`, checked against the virtual-cost form `(1/m) Σ A_k ψ_k`.
pub fn expected_spend(rule: &AllocationRule, payments: &PaymentRule, cost_set: &CostSet) -> Result<f64> {
    let m = cost_set.len();
    if rule.len() != m || payments.payments.len() != m {
        return Err(Error::invalid("allocation, payments and cost set lengths differ"));
    }
    let psi = virtual_costs(cost_set);
    let by_payment: f64 = rule.probabilities.iter().zip(&payments.payments).map(|(a, p)| a * p).sum();
    let by_virtual = rule.virtual_spend(&psi);
    let scale = by_payment.abs().max(by_virtual.abs());
    if (by_payment - by_virtual).abs() > (1e-9 * scale).max(BUDGET_ABS_TOL) {
        return Err(Error::Solver(format!(
            "payment identity violated: Σ A·P = {by_payment}, Σ A·ψ = {by_virtual}"
        )));
    }
    Ok(by_payment / m as f64)
}
