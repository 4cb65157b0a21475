//! Virtual costs of the uniform distribution over a cost multiset, and their
//! regularization (ironing) into a non-decreasing profile.
//!
//! For sorted costs `c_1 ≤ … ≤ c_m` the virtual cost is
//! `ψ_i = c_i + (i − 1)(c_i − c_{i−1})` with `c_0 = 0`. The regularized
//! virtual cost `φ` replaces every non-monotone stretch of `ψ` by its average:
//! `ψ'_i = min_{k ≥ i} Avg(i, k)` and `φ_i = max_{j ≤ i} ψ'_j`. The same
//! profile is the slope sequence of the lower convex minorant of the partial
//! sums of `ψ`, which is what [`regularize`] computes with a single
//! pool-adjacent-violators pass.

use serde::{Deserialize, Serialize};

use crate::costs::CostSet;
use crate::error::{Error, Result};

/// Per-cost virtual costs and their regularized counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualCostProfile {
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
}

impl VirtualCostProfile {
    pub fn of(cost_set: &CostSet) -> Self {
        let psi = virtual_costs(cost_set);
        let phi = regularize_blocks(&psi).expand(psi.len());
        VirtualCostProfile { psi, phi }
    }
}

/// `ψ_i = c_i + (i − 1)(c_i − c_{i−1})`, so `ψ_1 = c_1`.
pub fn virtual_costs(cost_set: &CostSet) -> Vec<f64> {
    virtual_costs_sorted(cost_set.costs())
}

pub(crate) fn virtual_costs_sorted(costs: &[f64]) -> Vec<f64> {
    let mut psi = Vec::with_capacity(costs.len());
    let mut prev = 0.0;
    for (i, &c) in costs.iter().enumerate() {
        psi.push(c + (c - prev) * i as f64);
        prev = c;
    }
    psi
}

/// Regularized virtual costs `φ` for a virtual-cost vector `ψ`.
pub fn regularize(psi: &[f64]) -> Result<Vec<f64>> {
    if psi.is_empty() {
        return Err(Error::invalid("virtual cost vector is empty"));
    }
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("virtual costs must be finite"));
    }
    Ok(regularize_blocks(psi).expand(psi.len()))
}

/// A maximal run of indices `[start, end)` sharing one regularized value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IronedBlock {
    pub start: usize,
    pub end: usize,
    pub value: f64,
}

impl IronedBlock {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Regularized profile stored as its constant blocks, in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct IronedBlocks {
    pub blocks: Vec<IronedBlock>,
}

impl IronedBlocks {
    pub fn expand(&self, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        for b in &self.blocks {
            out.extend(std::iter::repeat_n(b.value, b.len()));
        }
        out
    }
}

/// Pool-adjacent-violators on `ψ`.
///
/// Adjacent blocks merge whenever the left average is `>=` the right one, so
/// ties pool into the larger block and the resulting block values are
/// strictly increasing. Block averages are `(S[end] − S[start]) / len` over
/// the prefix sums `S`.
pub fn regularize_blocks(psi: &[f64]) -> IronedBlocks {
    let mut prefix = Vec::with_capacity(psi.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in psi {
        acc += v;
        prefix.push(acc);
    }
    let avg = |start: usize, end: usize| (prefix[end] - prefix[start]) / (end - start) as f64;

    // (start, end) pairs; values recomputed from prefix sums on demand
    let mut stack: Vec<(usize, usize)> = Vec::with_capacity(psi.len());
    for i in 0..psi.len() {
        let mut cur = (i, i + 1);
        while let Some(&(ps, _)) = stack.last() {
            if avg(ps, cur.0) >= avg(cur.0, cur.1) {
                stack.pop();
                cur = (ps, cur.1);
            } else {
                break;
            }
        }
        stack.push(cur);
    }

    IronedBlocks {
        blocks: stack
            .into_iter()
            .map(|(start, end)| IronedBlock { start, end, value: avg(start, end) })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(costs: &[f64]) -> CostSet {
        CostSet::from_costs(costs.to_vec()).unwrap()
    }

    #[test]
    fn irregular_three_point_example() {
        assert_eq!(virtual_costs(&set(&[1.0, 10.0, 11.0])), vec![1.0, 19.0, 13.0]);
        assert_eq!(regularize(&[1.0, 19.0, 13.0]).unwrap(), vec![1.0, 16.0, 16.0]);
    }

    #[test]
    fn equal_costs_have_constant_virtual_cost() {
        for c in [0.0, 0.3, 7.0] {
            assert_eq!(virtual_costs(&set(&[c, c, c])), vec![c, c, c]);
        }
    }

    #[test]
    fn linear_costs() {
        let psi = virtual_costs(&set(&[1.0, 2.0, 3.0]));
        assert_eq!(psi, vec![1.0, 3.0, 5.0]);
        assert_eq!(regularize(&psi).unwrap(), psi);
    }

    #[test]
    fn two_point_pool() {
        assert_eq!(regularize(&[4.0, 2.0]).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn ties_pool_into_one_block() {
        let blocks = regularize_blocks(&[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(blocks.blocks.len(), 3);
        assert_eq!(blocks.blocks[1], IronedBlock { start: 1, end: 3, value: 2.0 });
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(regularize(&[]).is_err());
        assert!(regularize(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn duplicate_costs_share_a_block() {
        let profile = VirtualCostProfile::of(&set(&[0.0, 5.0, 5.0, 5.0, 9.0]));
        assert_eq!(profile.phi[1], profile.phi[2]);
        assert_eq!(profile.phi[2], profile.phi[3]);
    }
}
