//! Clustering agreement and parameter-recovery metrics.
//!
//! The per-step (averaged) adjusted Rand index scores each snapshot on its
//! own and is blind to group relabelings between steps; the global index
//! scores all (step, node) items jointly and is the one that detects label
//! switching across time.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::labels::LabelSeries;

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index between two label vectors. Positions where either
/// side is absent are dropped pairwise; at least two shared items are
/// required. Permutation-invariant in both arguments; 1.0 for identical
/// partitions, around 0 for independent ones, possibly negative.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(
            "label vectors differ in length".into(),
        ));
    }
    let mut contingency: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut a_sizes: BTreeMap<usize, f64> = BTreeMap::new();
    let mut b_sizes: BTreeMap<usize, f64> = BTreeMap::new();
    let mut n = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        if x == crate::labels::ABSENT || y == crate::labels::ABSENT {
            continue;
        }
        *contingency.entry((x, y)).or_insert(0.0) += 1.0;
        *a_sizes.entry(x).or_insert(0.0) += 1.0;
        *b_sizes.entry(y).or_insert(0.0) += 1.0;
        n += 1.0;
    }
    if n < 2.0 {
        return Err(Error::EmptyOverlap);
    }
    let sum_cells: f64 = contingency.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = a_sizes.values().map(|&c| comb2(c)).sum();
    let sum_b: f64 = b_sizes.values().map(|&c| comb2(c)).sum();
    let expected = sum_a * sum_b / comb2(n);
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() == 0.0 {
        // Both partitions trivial (all singletons or a single block): they
        // are identical, so perfect agreement.
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

/// Per-step agreement: `None` where fewer than two nodes are shared.
pub fn per_step_ari(est: &LabelSeries, truth: &LabelSeries) -> Result<Vec<Option<f64>>> {
    check_shapes(est, truth)?;
    (0..est.n_steps())
        .map(|t| match ari(est.row(t), truth.row(t)) {
            Ok(v) => Ok(Some(v)),
            Err(Error::EmptyOverlap) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Mean of the per-step indices, skipping steps without overlap.
pub fn averaged_ari(est: &LabelSeries, truth: &LabelSeries) -> Result<f64> {
    let per_t = per_step_ari(est, truth)?;
    let values: Vec<f64> = per_t.into_iter().flatten().collect();
    if values.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// One index over the flattened (step, node) item set; penalizes label
/// switching between steps.
pub fn global_ari(est: &LabelSeries, truth: &LabelSeries) -> Result<f64> {
    check_shapes(est, truth)?;
    let mut a = Vec::with_capacity(est.n_steps() * est.n_nodes());
    let mut b = Vec::with_capacity(a.capacity());
    for t in 0..est.n_steps() {
        a.extend_from_slice(est.row(t));
        b.extend_from_slice(truth.row(t));
    }
    ari(&a, &b)
}

fn check_shapes(est: &LabelSeries, truth: &LabelSeries) -> Result<()> {
    if est.n_steps() != truth.n_steps() || est.n_nodes() != truth.n_nodes() {
        return Err(Error::DimensionMismatch(
            "label series shapes differ".into(),
        ));
    }
    Ok(())
}

/// Permutation of estimated groups maximizing the global label agreement
/// with the truth (exact assignment by subset dynamic programming).
pub fn align_labels(est: &LabelSeries, truth: &LabelSeries, n_groups: usize) -> Result<Vec<usize>> {
    check_shapes(est, truth)?;
    let q = n_groups;
    if q > 20 {
        return Err(Error::InvalidParams(
            "label alignment supports up to 20 groups".into(),
        ));
    }
    let mut confusion = vec![0.0f64; q * q];
    for t in 0..est.n_steps() {
        for i in 0..est.n_nodes() {
            if let (Some(e), Some(z)) = (est.get(t, i), truth.get(t, i)) {
                if e < q && z < q {
                    confusion[e * q + z] += 1.0;
                }
            }
        }
    }
    // dp over subsets of truth groups; est group k is assigned k-th.
    let full = 1usize << q;
    let mut dp = vec![f64::NEG_INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    dp[0] = 0.0;
    for mask in 0..full {
        if dp[mask] == f64::NEG_INFINITY {
            continue;
        }
        let k = mask.count_ones() as usize;
        if k == q {
            continue;
        }
        for z in 0..q {
            if mask & (1 << z) != 0 {
                continue;
            }
            let next = mask | (1 << z);
            let cand = dp[mask] + confusion[k * q + z];
            if cand > dp[next] {
                dp[next] = cand;
                choice[next] = z;
            }
        }
    }
    let mut perm = vec![0usize; q];
    let mut mask = full - 1;
    for k in (0..q).rev() {
        let z = choice[mask];
        perm[k] = z;
        mask &= !(1 << z);
    }
    Ok(perm)
}

/// Mean squared entrywise error of the estimated transition matrix after
/// aligning the estimated groups to the true ones.
pub fn pi_mse(
    pi_hat: &Array2<f64>,
    pi_true: &Array2<f64>,
    est: &LabelSeries,
    truth: &LabelSeries,
) -> Result<f64> {
    let q = pi_true.nrows();
    if pi_hat.nrows() != q || pi_hat.ncols() != q || pi_true.ncols() != q {
        return Err(Error::DimensionMismatch(
            "transition matrices must share one square shape".into(),
        ));
    }
    let perm = align_labels(est, truth, q)?;
    let mut total = 0.0;
    for e1 in 0..q {
        for e2 in 0..q {
            let diff = pi_hat[(e1, e2)] - pi_true[(perm[e1], perm[e2])];
            total += diff * diff;
        }
    }
    Ok(total / (q * q) as f64)
}

/// Counts of nodes moving between groups at each step, absent mapped to a
/// fake group 0 and live groups shifted to 1-based; drives alluvial-style
/// plots of membership flow.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxTable {
    /// Number of live groups (table side is `n_groups + 1`).
    pub n_groups: usize,
    /// One (Q+1) x (Q+1) count matrix per step transition (t = 2..T).
    pub counts: Vec<Vec<u64>>,
}

impl FluxTable {
    pub fn count(&self, step: usize, from: usize, to: usize) -> u64 {
        self.counts[step][from * (self.n_groups + 1) + to]
    }
}

pub fn group_fluxes(labels: &LabelSeries) -> FluxTable {
    let q = labels.max_group_bound();
    let side = q + 1;
    let mut counts = Vec::with_capacity(labels.n_steps().saturating_sub(1));
    for t in 1..labels.n_steps() {
        let mut table = vec![0u64; side * side];
        for i in 0..labels.n_nodes() {
            let from = labels.get(t - 1, i).map_or(0, |z| z + 1);
            let to = labels.get(t, i).map_or(0, |z| z + 1);
            table[from * side + to] += 1;
        }
        counts.push(table);
    }
    FluxTable {
        n_groups: q,
        counts,
    }
}
