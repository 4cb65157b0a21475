//! Brute-force reference solvers for small instances.
//!
//! The grid searches are dynamic programs over non-increasing lattice paths
//! with the budget discretized into buckets. Per-item spend is rounded up
//! to whole buckets, so every rule an oracle returns is feasible for the
//! true budget.

use serde::{Deserialize, Serialize};

use crate::costs::CostSet;
use crate::error::{Error, Result};
use crate::virtual_cost::virtual_costs;

pub const MAX_UNBIASED_ORACLE_LEN: usize = 6;
pub const MAX_CI_ORACLE_LEN: usize = 4;

const UNBIASED_BUCKETS: usize = 1000;
const CI_BUCKETS: usize = 500;
/// `U` is searched on `{0, 0.1, …, 1}`.
const U_STEPS: usize = 10;

/// `φ` evaluated literally: `ψ'_i = min_{k≥i} Avg(i, k)`, then a running max.
pub fn regularize_naive(psi: &[f64]) -> Vec<f64> {
    let m = psi.len();
    let mut prefix = vec![0.0; m + 1];
    for i in 0..m {
        prefix[i + 1] = prefix[i] + psi[i];
    }
    let mut phi = Vec::with_capacity(m);
    let mut running = f64::NEG_INFINITY;
    for i in 0..m {
        let mut best = f64::INFINITY;
        for k in i..m {
            let avg = (prefix[k + 1] - prefix[i]) / (k + 1 - i) as f64;
            if avg <= best {
                best = avg;
            }
        }
        running = running.max(best);
        phi.push(running);
    }
    phi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbiasedOracle {
    pub allocation: Vec<f64>,
    /// `Σ 1/A_k`.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiOracle {
    pub allocation: Vec<f64>,
    pub ignore: Vec<f64>,
    /// `β² (1/m) Σ (1 − U)/A + (Σ U / m)²`.
    pub objective: f64,
}

fn levels(step: f64) -> Result<usize> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::invalid(format!("grid step must lie in (0, 0.5], got {step}")));
    }
    let g = (1.0 / step).round();
    if ((g * step) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("grid step {step} does not divide 1")));
    }
    Ok(g as usize)
}

/// Whole buckets needed for `spend`, rounded up; `usize::MAX` when above `cap`.
fn buckets(spend: f64, unit: f64, cap: usize) -> usize {
    let x = spend / unit;
    let c = (x - 1e-9 * x.max(1.0)).ceil().max(0.0);
    if c > cap as f64 {
        usize::MAX
    } else {
        c as usize
    }
}

/// Minimizes `Σ 1/A_k` over non-increasing `A` on the grid
/// `{step, 2·step, …, 1}` subject to `Σ A_k ψ_k ≤ budget`.
pub fn grid_search_unbiased(cost_set: &CostSet, budget: f64, step: f64) -> Result<UnbiasedOracle> {
    let m = cost_set.len();
    if m > MAX_UNBIASED_ORACLE_LEN {
        return Err(Error::TooLarge(format!("{m} costs; the oracle accepts at most {MAX_UNBIASED_ORACLE_LEN}")));
    }
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::invalid(format!("budget must be positive and finite, got {budget}")));
    }
    let g = levels(step)?;
    let d = UNBIASED_BUCKETS;
    let width = d + 1;
    let unit = budget / d as f64;
    let psi = virtual_costs(cost_set);
    let alloc = |l: usize| (l + 1) as f64 / g as f64;
    let cost: Vec<Vec<usize>> = psi
        .iter()
        .map(|&p| (0..g).map(|l| buckets(alloc(l) * p, unit, d)).collect())
        .collect();

    // val[l * width + b]: best Σ_{j≥k} 1/A_j with A_k at level l and at most b buckets
    let mut val = vec![f64::INFINITY; g * width];
    for l in 0..g {
        let c = cost[m - 1][l];
        if c <= d {
            val[l * width + c..(l + 1) * width].fill(1.0 / alloc(l));
        }
    }
    // args[k]: for layer k, prefix argmin over levels ≤ l
    let mut args: Vec<Vec<u16>> = vec![Vec::new(); m];
    let mut pm = vec![0.0; g * width];
    for k in (0..m - 1).rev() {
        let mut arg = vec![0u16; g * width];
        for l in 0..g {
            let row = l * width;
            if l == 0 {
                pm[..width].copy_from_slice(&val[..width]);
            } else {
                for b in 0..width {
                    let prev = pm[row - width + b];
                    let here = val[row + b];
                    if here < prev {
                        pm[row + b] = here;
                        arg[row + b] = l as u16;
                    } else {
                        pm[row + b] = prev;
                        arg[row + b] = arg[row - width + b];
                    }
                }
            }
        }
        args[k + 1] = arg;
        let mut next = vec![f64::INFINITY; g * width];
        for l in 0..g {
            let c = cost[k][l];
            if c > d {
                continue;
            }
            let inv = 1.0 / alloc(l);
            let row = l * width;
            for b in c..width {
                next[row + b] = inv + pm[row + b - c];
            }
        }
        val = next;
    }

    let mut best = (f64::INFINITY, 0usize);
    for l in 0..g {
        let v = val[l * width + d];
        if v < best.0 {
            best = (v, l);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Solver("no feasible rule on the grid".into()));
    }
    let mut levels_chosen = vec![best.1];
    let mut b = d - cost[0][best.1];
    for k in 1..m {
        let prev = *levels_chosen.last().unwrap();
        let l = args[k][prev * width + b] as usize;
        b -= cost[k][l];
        levels_chosen.push(l);
    }
    let allocation: Vec<f64> = levels_chosen.iter().map(|&l| alloc(l)).collect();
    let objective = allocation.iter().map(|a| 1.0 / a).sum();
    Ok(UnbiasedOracle { allocation, objective })
}

/// Minimizes the squared interval objective over `U_k ∈ {0, 0.1, …, 1}` and
/// effective allocations `E_k = (1 − U_k) A_k` on the grid `{0, step, …, 1}`,
/// with `E` non-increasing, `A ≤ 1` and `Σ E_k ψ_k ≤ budget`.
pub fn grid_search_ci(cost_set: &CostSet, budget: f64, beta: f64, step: f64) -> Result<CiOracle> {
    let m = cost_set.len();
    if m > MAX_CI_ORACLE_LEN {
        return Err(Error::TooLarge(format!("{m} costs; the oracle accepts at most {MAX_CI_ORACLE_LEN}")));
    }
    if !(budget >= 0.0 && budget.is_finite()) {
        return Err(Error::invalid(format!("budget must be finite and non-negative, got {budget}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive and finite, got {beta}")));
    }
    let g = levels(step)?;
    if g % U_STEPS != 0 {
        return Err(Error::invalid("grid step must divide 0.1"));
    }
    let d = if budget > 0.0 { CI_BUCKETS } else { 0 };
    let width = d + 1;
    let sums = U_STEPS * m + 1;
    let e_levels = g + 1;
    let unit = if budget > 0.0 { budget / d as f64 } else { 1.0 };
    let psi = virtual_costs(cost_set);
    let eff = |e: usize| e as f64 / g as f64;
    let cost: Vec<Vec<usize>> = psi
        .iter()
        .map(|&p| {
            (0..e_levels)
                .map(|e| {
                    let s = eff(e) * p;
                    if budget > 0.0 {
                        buckets(s, unit, d)
                    } else if s == 0.0 {
                        0
                    } else {
                        usize::MAX
                    }
                })
                .collect()
        })
        .collect();
    // variance weight (1 − U)²/E for allowed (t, e) pairs
    let weight = |t: usize, e: usize| -> Option<f64> {
        if t == U_STEPS {
            return (e == 0).then_some(0.0);
        }
        let keep = (U_STEPS - t) as f64 / U_STEPS as f64;
        (e >= 1 && e * U_STEPS <= (U_STEPS - t) * g).then(|| keep * keep / eff(e))
    };
    let idx = |e: usize, b: usize, s: usize| (e * width + b) * sums + s;
    let size = e_levels * width * sums;

    let mut val = vec![f64::INFINITY; size];
    let mut choice: Vec<Vec<u8>> = vec![vec![0; size]; m];
    for e in 0..e_levels {
        let c = cost[m - 1][e];
        if c > d {
            continue;
        }
        for t in 0..=U_STEPS {
            if let Some(w) = weight(t, e) {
                for b in c..width {
                    val[idx(e, b, t)] = w;
                    choice[m - 1][idx(e, b, t)] = t as u8;
                }
            }
        }
    }
    let mut args: Vec<Vec<u16>> = vec![Vec::new(); m];
    let mut pm = vec![0.0; size];
    for k in (0..m - 1).rev() {
        let mut arg = vec![0u16; size];
        let plane = width * sums;
        pm[..plane].copy_from_slice(&val[..plane]);
        for e in 1..e_levels {
            for j in 0..plane {
                let here = val[e * plane + j];
                let prev = pm[(e - 1) * plane + j];
                if here < prev {
                    pm[e * plane + j] = here;
                    arg[e * plane + j] = e as u16;
                } else {
                    pm[e * plane + j] = prev;
                    arg[e * plane + j] = arg[(e - 1) * plane + j];
                }
            }
        }
        args[k + 1] = arg;
        let mut next = vec![f64::INFINITY; size];
        for e in 0..e_levels {
            let c = cost[k][e];
            if c > d {
                continue;
            }
            for t in 0..=U_STEPS {
                let Some(w) = weight(t, e) else { continue };
                for b in c..width {
                    for s in t..sums {
                        let v = w + pm[idx(e, b - c, s - t)];
                        let at = idx(e, b, s);
                        if v < next[at] {
                            next[at] = v;
                            choice[k][at] = t as u8;
                        }
                    }
                }
            }
        }
        val = next;
    }

    let mf = m as f64;
    let mut best = (f64::INFINITY, 0usize, 0usize);
    for e in 0..e_levels {
        for s in 0..sums {
            let v = val[idx(e, d, s)];
            if !v.is_finite() {
                continue;
            }
            let mass = s as f64 / U_STEPS as f64;
            let obj = beta * beta * v / mf + (mass / mf).powi(2);
            if obj < best.0 {
                best = (obj, e, s);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Solver("no feasible rule on the grid".into()));
    }

    let (mut e, mut b, mut s) = (best.1, d, best.2);
    let mut allocation = Vec::with_capacity(m);
    let mut ignore = Vec::with_capacity(m);
    for k in 0..m {
        if k > 0 {
            e = args[k][idx(e, b, s)] as usize;
        }
        let t = choice[k][idx(e, b, s)] as usize;
        let u = t as f64 / U_STEPS as f64;
        ignore.push(u);
        allocation.push(if t == U_STEPS { 0.0 } else { (eff(e) / (1.0 - u)).min(1.0) });
        b -= cost[k][e];
        s -= t;
    }
    Ok(CiOracle { allocation, ignore, objective: best.0 })
}
