//! Starting point for the EM loop: k-means on the rows of the concatenated
//! snapshot matrix, giving a node clustering that is constant across time,
//! then softened into a valid variational state.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::DynamicNetwork;
use crate::numeric::mix_seed;
use crate::params::EmissionFamily;
use crate::state::{NodeSchedule, StepKind, VariationalState};

/// Centroid seeding strategy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Seeding {
    /// Distance-weighted seeding (k-means++).
    #[default]
    PlusPlus,
    /// Uniform sample of distinct rows.
    Random,
}

#[derive(Clone, Debug)]
pub struct InitConfig {
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub seeding: Seeding,
    /// Off-label mass when hard labels are softened into tau rows.
    pub soft_eps: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            kmeans_restarts: 10,
            kmeans_max_iters: 100,
            seeding: Seeding::PlusPlus,
            soft_eps: 1e-2,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kmeans_restarts == 0 || self.kmeans_max_iters == 0 {
            return Err(Error::InvalidParams("k-means needs >= 1 restart and iteration".into()));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail
        if !(self.soft_eps > 0.0) {
            return Err(Error::InvalidParams("soft_eps must be positive".into()));
        }
        Ok(())
    }
}

/// N x (N*T) matrix with the snapshots side by side: row i is
/// (Y^1_{i.}, ..., Y^T_{i.}). Absent slots and the diagonal are zero.
pub fn concat_matrix(net: &DynamicNetwork) -> Array2<f64> {
    let n = net.n_nodes();
    let t_steps = net.n_steps();
    let mut out = Array2::zeros((n, n * t_steps));
    for t in 0..t_steps {
        let w = net.snapshot(t);
        for i in 0..n {
            for j in 0..n {
                out[(i, t * n + j)] = w[(i, j)];
            }
        }
    }
    out
}

/// Feature matrix actually fed to k-means: raw weights, except that the
/// finite-space family maps each weight to its bin midpoint.
fn feature_matrix(net: &DynamicNetwork, family: &EmissionFamily) -> Array2<f64> {
    let mut features = concat_matrix(net);
    if let EmissionFamily::FiniteSpace { bins } = family {
        features.mapv_inplace(|y| {
            if y == 0.0 {
                0.0
            } else {
                match family.bin_index(y) {
                    Some(m) => bins[m].midpoint(),
                    None => y,
                }
            }
        });
    }
    features
}

struct KmeansRun {
    labels: Vec<usize>,
    sse: f64,
    /// SSE after each assignment pass (non-increasing by construction).
    #[cfg_attr(not(test), allow(dead_code))]
    sse_trace: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn seed_centroids(
    data: &Array2<f64>,
    k: usize,
    seeding: Seeding,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = data.nrows();
    match seeding {
        Seeding::Random => {
            rand::seq::index::sample(rng, n, k).into_vec()
        }
        Seeding::PlusPlus => {
            let mut chosen = vec![rng.random_range(0..n)];
            let mut min_d2: Vec<f64> = (0..n)
                .map(|i| {
                    squared_distance(
                        data.row(i).as_slice().unwrap(),
                        data.row(chosen[0]).as_slice().unwrap(),
                    )
                })
                .collect();
            while chosen.len() < k {
                let total: f64 = min_d2.iter().sum();
                let next = if total > 0.0 {
                    let mut u = rng.random_range(0.0..total);
                    let mut pick = 0;
                    for (i, &d) in min_d2.iter().enumerate() {
                        if u < d {
                            pick = i;
                            break;
                        }
                        u -= d;
                        pick = i;
                    }
                    pick
                } else {
                    // All remaining rows coincide with a centroid; take the
                    // first row not yet chosen.
                    (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
                };
                chosen.push(next);
                for i in 0..n {
                    let d = squared_distance(
                        data.row(i).as_slice().unwrap(),
                        data.row(next).as_slice().unwrap(),
                    );
                    if d < min_d2[i] {
                        min_d2[i] = d;
                    }
                }
            }
            chosen
        }
    }
}

fn lloyd(data: &Array2<f64>, k: usize, max_iters: usize, seeds: Vec<usize>) -> KmeansRun {
    let n = data.nrows();
    let d = data.ncols();
    let mut centroids = Array2::zeros((k, d));
    for (c, &row) in seeds.iter().enumerate() {
        centroids.row_mut(c).assign(&data.row(row));
    }
    let mut labels = vec![0usize; n];
    let mut sse = f64::INFINITY;
    let mut sse_trace = Vec::new();
    for _ in 0..max_iters {
        // Assignment (ties break to the lowest centroid index).
        let mut changed = false;
        let mut new_sse = 0.0;
        for i in 0..n {
            let row = data.row(i);
            let row = row.as_slice().unwrap();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d2 = squared_distance(row, centroids.row(c).as_slice().unwrap());
                if d2 < best_d {
                    best_d = d2;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
            new_sse += best_d;
        }
        // Empty-cluster repair: split the largest cluster at its farthest
        // point.
        loop {
            let mut counts = vec![0usize; k];
            for &c in &labels {
                counts[c] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let largest = counts
                .iter()
                .enumerate()
                .max_by_key(|(_, &c)| c)
                .map(|(c, _)| c)
                .unwrap();
            let farthest = (0..n)
                .filter(|&i| labels[i] == largest)
                .max_by(|&a, &b| {
                    let da = squared_distance(
                        data.row(a).as_slice().unwrap(),
                        centroids.row(largest).as_slice().unwrap(),
                    );
                    let db = squared_distance(
                        data.row(b).as_slice().unwrap(),
                        centroids.row(largest).as_slice().unwrap(),
                    );
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            labels[farthest] = empty;
            centroids.row_mut(empty).assign(&data.row(farthest));
            changed = true;
        }
        // Update.
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = labels[i];
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += &data.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = sums.row_mut(c);
                row.mapv_inplace(|v| v / counts[c] as f64);
            }
        }
        centroids = sums;
        sse_trace.push(new_sse);
        if !changed && (new_sse - sse).abs() <= f64::EPSILON * sse.abs().max(1.0) {
            break;
        }
        sse = new_sse;
    }
    // Final SSE against the final centroids.
    let mut final_sse = 0.0;
    for i in 0..n {
        final_sse += squared_distance(
            data.row(i).as_slice().unwrap(),
            centroids.row(labels[i]).as_slice().unwrap(),
        );
    }
    KmeansRun {
        labels,
        sse: final_sse,
        sse_trace,
    }
}

/// Best-of-restarts k-means labels on the concatenated snapshot rows.
pub fn kmeans_labels(
    net: &DynamicNetwork,
    n_groups: usize,
    family: &EmissionFamily,
    config: &InitConfig,
    seed: u64,
) -> Result<Vec<usize>> {
    if n_groups == 0 || n_groups > net.n_nodes() {
        return Err(Error::InvalidParams(
            "group count must be in 1..=n_nodes".into(),
        ));
    }
    let data = feature_matrix(net, family);
    let runs: Vec<KmeansRun> = (0..config.kmeans_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6b6d + r as u64));
            let seeds = seed_centroids(&data, n_groups, config.seeding, &mut rng);
            lloyd(&data, n_groups, config.kmeans_max_iters, seeds)
        })
        .collect();
    let best = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            a.sse
                .partial_cmp(&b.sse)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ia.cmp(ib))
        })
        .map(|(_, run)| run)
        .unwrap();
    Ok(best.labels)
}

/// Turns constant-in-time hard labels into a valid variational state:
/// entry rows put mass `1 - (Q-1) eps` on the label, transition tables get
/// the matching softened-identity pattern, marginals are refreshed.
pub fn state_from_constant_labels(
    labels: &[usize],
    n_groups: usize,
    soft_eps: f64,
    sched: &NodeSchedule,
) -> VariationalState {
    let n = labels.len();
    let t_steps = sched.n_steps();
    let q = n_groups;
    // Clamp so rows stay on the simplex for any Q.
    let eps = if q > 1 {
        soft_eps.min(0.5 / (q as f64 - 1.0))
    } else {
        0.0
    };
    let peak = 1.0 - (q as f64 - 1.0) * eps;
    let mut state = VariationalState::uniform(n, t_steps, q, sched);
    for (i, &c) in labels.iter().enumerate() {
        let row = state.initial_row_mut(i);
        for (g, v) in row.iter_mut().enumerate() {
            *v = if g == c { peak } else { eps };
        }
    }
    for t in 1..t_steps {
        for (i, &c) in labels.iter().enumerate() {
            let table = state.trans_table_mut(t, i);
            match sched.kind(t, i) {
                StepKind::Entry => {
                    // Re-entry law: all rows identical, peaked at the label.
                    for g in 0..q {
                        for h in 0..q {
                            table[g * q + h] = if h == c { peak } else { eps };
                        }
                    }
                }
                _ => {
                    // Sticky identity pattern keeps labels constant in time.
                    for g in 0..q {
                        for h in 0..q {
                            table[g * q + h] = if h == g { peak } else { eps };
                        }
                    }
                }
            }
        }
    }
    state.recompute_marginals(sched);
    state
}

/// Independent k-means per snapshot: labels vary over time and per-step
/// orientations are arbitrary. Used as an extra restart flavor when group
/// memberships churn too fast for the concatenated (constant-in-time)
/// clustering to carry any signal.
pub fn per_snapshot_labels(
    net: &DynamicNetwork,
    n_groups: usize,
    family: &EmissionFamily,
    config: &InitConfig,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let mut out = Vec::with_capacity(net.n_steps());
    for t in 0..net.n_steps() {
        let single = DynamicNetwork::new(
            vec![net.snapshot(t).clone()],
            vec![net.presence_row(t).to_vec()],
        )?;
        out.push(kmeans_labels(
            &single,
            n_groups,
            family,
            config,
            mix_seed(seed, 0x5eed + t as u64),
        )?);
    }
    Ok(out)
}

/// Turns per-step hard labels into a state: the step-1 law peaks at that
/// step's label; every later table funnels all rows toward the step's label
/// so the marginal tracks it whatever the previous step was.
pub fn state_from_step_labels(
    step_labels: &[Vec<usize>],
    n_groups: usize,
    soft_eps: f64,
    sched: &NodeSchedule,
) -> VariationalState {
    let t_steps = step_labels.len();
    let n = step_labels[0].len();
    let q = n_groups;
    let eps = if q > 1 {
        soft_eps.min(0.5 / (q as f64 - 1.0))
    } else {
        0.0
    };
    let peak = 1.0 - (q as f64 - 1.0) * eps;
    let mut state = VariationalState::uniform(n, t_steps, q, sched);
    for i in 0..n {
        let c = step_labels[0][i];
        let row = state.initial_row_mut(i);
        for (g, v) in row.iter_mut().enumerate() {
            *v = if g == c { peak } else { eps };
        }
    }
    for t in 1..t_steps {
        for i in 0..n {
            let c = step_labels[t][i];
            let table = state.trans_table_mut(t, i);
            for g in 0..q {
                for h in 0..q {
                    table[g * q + h] = if h == c { peak } else { eps };
                }
            }
        }
    }
    state.recompute_marginals(sched);
    state
}

/// k-means initialization end to end: cluster, soften, refresh marginals.
pub fn kmeans_init(
    net: &DynamicNetwork,
    n_groups: usize,
    family: &EmissionFamily,
    config: &InitConfig,
    seed: u64,
) -> Result<VariationalState> {
    config.validate()?;
    let labels = kmeans_labels(net, n_groups, family, config, seed)?;
    let sched = NodeSchedule::from_network(net);
    Ok(state_from_constant_labels(
        &labels,
        n_groups,
        config.soft_eps,
        &sched,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn two_block_net() -> DynamicNetwork {
        // Nodes {0,1,2} fully tied, {3,4,5} fully tied, nothing across.
        let n = 6;
        let mut w = Array2::zeros((n, n));
        for group in [[0, 1, 2], [3, 4, 5]] {
            for a in 0..3 {
                for b in (a + 1)..3 {
                    let (i, j) = (group[a], group[b]);
                    w[(i, j)] = 1.0;
                    w[(j, i)] = 1.0;
                }
            }
        }
        DynamicNetwork::fully_present(vec![w.clone(), w]).unwrap()
    }

    #[test]
    fn concat_matrix_shape_and_block_order() {
        let w0 = arr2(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let w1 = arr2(&[[0.0, 0.0, 2.0], [0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let net = DynamicNetwork::fully_present(vec![w0, w1]).unwrap();
        let m = concat_matrix(&net);
        assert_eq!(m.shape(), &[3, 6]);
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(0, 3 + 2)], 2.0);
        assert_eq!(m[(2, 3)], 2.0);
        // Symmetry: column j of block t equals row j's entry.
        for t in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(m[(i, t * 3 + j)], m[(j, t * 3 + i)]);
                }
            }
        }
    }

    #[test]
    fn absent_node_rows_are_zero() {
        let mut w = Array2::zeros((3, 3));
        w[(0, 1)] = 1.0;
        w[(1, 0)] = 1.0;
        let presence = vec![vec![true; 3], vec![true, true, false]];
        let net = DynamicNetwork::new(vec![w, Array2::zeros((3, 3))], presence).unwrap();
        let m = concat_matrix(&net);
        for j in 0..3 {
            assert_eq!(m[(2, 3 + j)], 0.0);
        }
    }

    #[test]
    fn well_separated_duplicates_are_recovered_exactly() {
        let net = two_block_net();
        let labels = kmeans_labels(
            &net,
            2,
            &EmissionFamily::Bernoulli,
            &InitConfig::default(),
            3,
        )
        .unwrap();
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[0], labels[2]);
        assert_eq!(labels[3], labels[4]);
        assert_eq!(labels[3], labels[5]);
        assert_ne!(labels[0], labels[3]);
    }

    #[test]
    fn lloyd_sse_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 24;
        let mut w = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random_range(0.0..1.0) < 0.3 {
                    w[(i, j)] = rng.random_range(0.5..3.0);
                    w[(j, i)] = w[(i, j)];
                }
            }
        }
        let net = DynamicNetwork::fully_present(vec![w]).unwrap();
        let data = feature_matrix(&net, &EmissionFamily::GaussianHomoscedastic);
        for restart in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(restart);
            let seeds = seed_centroids(&data, 4, Seeding::PlusPlus, &mut rng);
            let run = lloyd(&data, 4, 50, seeds);
            for pair in run.sse_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-9, "{:?}", run.sse_trace);
            }
        }
    }

    #[test]
    fn one_cluster_per_node_has_zero_sse() {
        let net = two_block_net();
        let data = feature_matrix(&net, &EmissionFamily::Bernoulli);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seeds = seed_centroids(&data, 6, Seeding::PlusPlus, &mut rng);
        let run = lloyd(&data, 6, 50, seeds);
        assert!(run.sse <= 1e-12);
    }

    #[test]
    fn kmeans_beats_random_labelings() {
        // Random 10-node instance; k-means SSE must not exceed the SSE of
        // 1000 random labelings.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10;
        let mut w = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random_range(0.0..1.0) < 0.4 {
                    w[(i, j)] = 1.0;
                    w[(j, i)] = 1.0;
                }
            }
        }
        let net = DynamicNetwork::fully_present(vec![w]).unwrap();
        let data = feature_matrix(&net, &EmissionFamily::Bernoulli);
        let labels =
            kmeans_labels(&net, 3, &EmissionFamily::Bernoulli, &InitConfig::default(), 4).unwrap();
        let sse_of = |labels: &[usize]| -> f64 {
            let mut cent = Array2::<f64>::zeros((3, data.ncols()));
            let mut counts = [0usize; 3];
            for i in 0..n {
                counts[labels[i]] += 1;
                let mut row = cent.row_mut(labels[i]);
                row += &data.row(i);
            }
            for c in 0..3 {
                if counts[c] > 0 {
                    let mut row = cent.row_mut(c);
                    row.mapv_inplace(|v| v / counts[c] as f64);
                }
            }
            (0..n)
                .map(|i| {
                    squared_distance(
                        data.row(i).as_slice().unwrap(),
                        cent.row(labels[i]).as_slice().unwrap(),
                    )
                })
                .sum()
        };
        let kmeans_sse = sse_of(&labels);
        for _ in 0..1000 {
            let random: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            assert!(kmeans_sse <= sse_of(&random) + 1e-9);
        }
    }

    #[test]
    fn softened_state_passes_invariants_and_is_constant_in_time() {
        let net = two_block_net();
        let sched = NodeSchedule::from_network(&net);
        let state = kmeans_init(&net, 2, &EmissionFamily::Bernoulli, &InitConfig::default(), 7)
            .unwrap();
        assert!(state.max_simplex_defect(&sched) < 1e-12);
        let map = state.marginal_argmax();
        for i in 0..6 {
            assert_eq!(map.get(0, i), map.get(1, i));
        }
    }
}
