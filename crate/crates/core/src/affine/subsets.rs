use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

/// Strictly increasing, 0-based row indices selecting one subconstraint.
///
/// Ordering is lexicographic on the index tuple, so `(0) < (0, 1) < (1)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubsetIndex(Vec<usize>);

impl SubsetIndex {
    /// Returns `None` unless `indices` is non-empty and strictly increasing.
    pub fn new(indices: Vec<usize>) -> Option<Self> {
        if indices.is_empty() || indices.windows(2).any(|w| w[0] >= w[1]) {
            return None;
        }
        Some(Self(indices))
    }

    pub fn single(j: usize) -> Self {
        Self(vec![j])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    /// Subconstraint order `k`.
    pub fn order(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for SubsetIndex {
    /// 1-based, matching the usual mathematical row numbering.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.0.iter().map(|j| j + 1).join(","))
    }
}

/// Which subconstraint orders enter the candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decomposition {
    /// Orders `1` and `min(n_c, m)` only.
    Lite,
    /// Every order `1..=min(n_c, m)`.
    Full,
}

impl Decomposition {
    pub fn enumerate(self, n_c: usize, m: usize) -> Vec<SubsetIndex> {
        match self {
            Decomposition::Lite => enumerate_subsets_lite(n_c, m),
            Decomposition::Full => enumerate_subsets_full(n_c, m),
        }
    }

    pub fn count(self, n_c: usize, m: usize) -> u128 {
        match self {
            Decomposition::Lite => lite_count(n_c, m),
            Decomposition::Full => full_count(n_c, m),
        }
    }
}

fn combinations_of_order(n_c: usize, k: usize) -> impl Iterator<Item = SubsetIndex> {
    (0..n_c).combinations(k).map(SubsetIndex)
}

/// Order-1 subsets followed by the order-`min(n_c, m)` subsets, each block in
/// lexicographic order.
pub fn enumerate_subsets_lite(n_c: usize, m: usize) -> Vec<SubsetIndex> {
    let top = n_c.min(m);
    let mut out: Vec<SubsetIndex> = combinations_of_order(n_c, 1).collect();
    if top > 1 {
        out.extend(combinations_of_order(n_c, top));
    }
    out
}

/// All subsets of order `1..=min(n_c, m)`, grouped by order.
pub fn enumerate_subsets_full(n_c: usize, m: usize) -> Vec<SubsetIndex> {
    (1..=n_c.min(m))
        .flat_map(|k| combinations_of_order(n_c, k))
        .collect()
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // Exact at every step: acc * (n - i) is divisible by (i + 1).
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// `n_c` when `min(n_c, m) = 1`, otherwise `n_c + C(n_c, min(n_c, m))`.
pub fn lite_count(n_c: usize, m: usize) -> u128 {
    let top = n_c.min(m);
    if top <= 1 {
        n_c as u128
    } else {
        n_c as u128 + binomial(n_c, top)
    }
}

/// `sum_{k=1}^{min(n_c, m)} C(n_c, k)`.
pub fn full_count(n_c: usize, m: usize) -> u128 {
    (1..=n_c.min(m)).map(|k| binomial(n_c, k)).sum()
}
