//! The sorted cost multiset every solver works over.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-decreasing private costs, each bounded by the cap `C̄`.
///
/// Equal costs are kept as separate entries; the uniform distribution over
/// the set is the distribution over this multiset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSet {
    costs: Vec<f64>,
    cap: f64,
}

impl CostSet {
    /// Sorts `costs` and checks every entry lies in `[0, cap]`.
    pub fn new(mut costs: Vec<f64>, cap: f64) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::invalid("cost set is empty"));
        }
        if !cap.is_finite() || cap < 0.0 {
            return Err(Error::invalid(format!("cap must be finite and non-negative, got {cap}")));
        }
        for (i, &c) in costs.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::invalid(format!("cost #{i} is not finite")));
            }
            if c < 0.0 {
                return Err(Error::invalid(format!("cost #{i} is negative ({c})")));
            }
            if c > cap {
                return Err(Error::OutOfRange { cost: c, cap });
            }
        }
        costs.sort_by(f64::total_cmp);
        Ok(CostSet { costs, cap })
    }

    /// Cost set whose cap is its own maximum.
    pub fn from_costs(costs: Vec<f64>) -> Result<Self> {
        let cap = costs.iter().copied().fold(0.0, f64::max);
        CostSet::new(costs, cap)
    }

    /// `{c_1, …, c_n, C̄}`: the reported costs plus one extra entry at the cap.
    pub fn with_cap_appended(costs: &[f64], cap: f64) -> Result<Self> {
        let mut all = Vec::with_capacity(costs.len() + 1);
        all.extend_from_slice(costs);
        all.push(cap);
        CostSet::new(all, cap)
    }

    /// Caller guarantees `costs` is sorted, finite and within `[0, cap]`.
    pub(crate) fn from_sorted_unchecked(costs: Vec<f64>, cap: f64) -> Self {
        debug_assert!(!costs.is_empty());
        debug_assert!(costs.windows(2).all(|w| w[0] <= w[1]));
        CostSet { costs, cap }
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    /// Index of the least grid cost `>= cost`, or `None` above the largest.
    pub fn ceil_index(&self, cost: f64) -> Option<usize> {
        let idx = self.costs.partition_point(|&c| c < cost);
        (idx < self.costs.len()).then_some(idx)
    }

    /// The set with entry `index` removed, or `None` if that would empty it.
    pub fn without(&self, index: usize) -> Option<CostSet> {
        if self.costs.len() < 2 || index >= self.costs.len() {
            return None;
        }
        let mut costs = self.costs.clone();
        costs.remove(index);
        Some(CostSet { costs, cap: self.cap })
    }
}
