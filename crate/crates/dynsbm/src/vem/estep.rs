//! Fixed-point updates of the variational distribution.
//!
//! Row updates follow the stationarity conditions of the lower bound: a
//! transition row at (t, i) is proportional to the matching transition-law
//! row times the exponentiated emission field
//! `E[i][q] = sum_j sum_l marg(t, j, l) log phi^t_{ql}(Y^t_ij)` over present
//! partners j != i. Sweeps are synchronous: every new row is computed from
//! the previous sweep's marginals, then marginals are refreshed once.

use rayon::prelude::*;

use crate::emissions::LogDensityTable;
use crate::network::DynamicNetwork;
use crate::numeric::{normalize_log_row, xmul_log};
use crate::state::{NodeSchedule, StepKind, VariationalState};

/// Per-step neighbor lists into the nonzero-edge arrays, built once per fit.
#[derive(Clone, Debug)]
pub(crate) struct TemporalAdjacency {
    /// offsets[t][i]..offsets[t][i+1] indexes entries[t].
    offsets: Vec<Vec<usize>>,
    /// (neighbor, edge index) pairs, neighbors in increasing order.
    entries: Vec<Vec<(u32, u32)>>,
}

impl TemporalAdjacency {
    pub fn build(net: &DynamicNetwork) -> Self {
        let n = net.n_nodes();
        let mut offsets = Vec::with_capacity(net.n_steps());
        let mut entries = Vec::with_capacity(net.n_steps());
        for t in 0..net.n_steps() {
            let mut degree = vec![0usize; n];
            for (i, j, _) in net.edges(t) {
                degree[i] += 1;
                degree[j] += 1;
            }
            let mut offs = vec![0usize; n + 1];
            for i in 0..n {
                offs[i + 1] = offs[i] + degree[i];
            }
            let mut ents = vec![(0u32, 0u32); offs[n]];
            let mut cursor = offs.clone();
            for (e, (i, j, _)) in net.edges(t).enumerate() {
                ents[cursor[i]] = (j as u32, e as u32);
                cursor[i] += 1;
                ents[cursor[j]] = (i as u32, e as u32);
                cursor[j] += 1;
            }
            offsets.push(offs);
            entries.push(ents);
        }
        TemporalAdjacency { offsets, entries }
    }

    pub fn neighbors(&self, t: usize, i: usize) -> &[(u32, u32)] {
        &self.entries[t][self.offsets[t][i]..self.offsets[t][i + 1]]
    }
}

/// Fills `field` (N x Q, row i = E[i]) for step `t` from the current
/// marginals. Rows of absent nodes are left at zero and never read.
///
/// Zero-partner mass comes from one subtraction per group (total present
/// mass minus self and nonzero neighbors), the same discretization the
/// maximization step uses, so a sparsity estimate of exactly 1 never sees
/// phantom sub-ulp mass on its -inf zero density.
pub(crate) fn emission_field(
    t: usize,
    state: &VariationalState,
    net: &DynamicNetwork,
    adj: &TemporalAdjacency,
    dens: &LogDensityTable,
    field: &mut [f64],
) {
    let q = state.n_groups();
    let n = net.n_nodes();
    debug_assert_eq!(field.len(), n * q);
    // Total present marginal mass per group; single pass, fixed order.
    let mut s_tot = vec![0.0f64; q];
    for i in 0..n {
        if let Some(m) = state.marg(t, i) {
            for (g, &v) in m.iter().enumerate() {
                s_tot[g] += v;
            }
        }
    }
    let lp0 = dens.lp_zero_cells(t);
    field
        .par_chunks_mut(q)
        .enumerate()
        .for_each(|(i, row)| {
            row.fill(0.0);
            let Some(mi) = state.marg(t, i) else { return };
            // Mass of present partners with a zero weight, by subtraction.
            let mut zero_mass: Vec<f64> = (0..q).map(|g| s_tot[g] - mi[g]).collect();
            let neigh = adj.neighbors(t, i);
            for &(j, _) in neigh {
                if let Some(mj) = state.marg(t, j as usize) {
                    for (g, &v) in mj.iter().enumerate() {
                        zero_mass[g] -= v;
                    }
                }
            }
            for zm in zero_mass.iter_mut() {
                *zm = zm.max(0.0);
            }
            for (g, e) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (h, &zm) in zero_mass.iter().enumerate() {
                    acc += xmul_log(zm, lp0[g * q + h]);
                }
                *e = acc;
            }
            for &(j, edge) in neigh {
                let Some(mj) = state.marg(t, j as usize) else { continue };
                let cells = dens.edge_cells(t, edge as usize);
                for (g, e) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (h, &v) in mj.iter().enumerate() {
                        // xmul_log: a saturated marginal against a -inf
                        // density (a beta at 0) must contribute 0, not NaN.
                        acc += xmul_log(v, cells[g * q + h]);
                    }
                    *e += acc;
                }
            }
        });
}

/// One synchronous sweep over every transition table at steps t >= 2.
/// Interior rows blend the transition-law row with the emission field;
/// entry rows (re-entries after an absence) use the stationary law instead.
/// Returns the largest entry change. Marginals are NOT refreshed here.
#[allow(clippy::too_many_arguments)]
fn trans_sweep(
    state: &mut VariationalState,
    log_pi: &[f64],
    log_alpha: &[f64],
    net: &DynamicNetwork,
    adj: &TemporalAdjacency,
    dens: &LogDensityTable,
    sched: &NodeSchedule,
    field: &mut [f64],
) -> f64 {
    let q = state.n_groups();
    let n = state.n_nodes();
    let mut worst = 0.0f64;
    for t in 1..state.n_steps() {
        emission_field(t, state, net, adj, dens, field);
        // Split the slab into per-node chunks for disjoint parallel writes.
        let slab_base = (t - 1) * n * q * q;
        let slab = &mut state.trans_slab_mut()[slab_base..slab_base + n * q * q];
        let deltas: Vec<f64> = slab
            .par_chunks_mut(q * q)
            .enumerate()
            .map(|(i, table)| {
                let kind = sched.kind(t, i);
                if kind == StepKind::Absent {
                    return 0.0;
                }
                let e_row = &field[i * q..(i + 1) * q];
                let mut delta = 0.0f64;
                match kind {
                    StepKind::Interior => {
                        let mut new_row = vec![0.0f64; q];
                        for g in 0..q {
                            for (h, v) in new_row.iter_mut().enumerate() {
                                *v = log_pi[g * q + h] + e_row[h];
                            }
                            if !normalize_log_row(&mut new_row) {
                                // Degenerate row: fall back to the prior.
                                for (h, v) in new_row.iter_mut().enumerate() {
                                    *v = log_pi[g * q + h].exp();
                                }
                            }
                            let old = &mut table[g * q..(g + 1) * q];
                            for (o, &v) in old.iter_mut().zip(new_row.iter()) {
                                delta = delta.max((*o - v).abs());
                                *o = v;
                            }
                        }
                    }
                    StepKind::Entry => {
                        let mut new_row: Vec<f64> =
                            (0..q).map(|h| log_alpha[h] + e_row[h]).collect();
                        if !normalize_log_row(&mut new_row) {
                            for (h, v) in new_row.iter_mut().enumerate() {
                                *v = log_alpha[h].exp();
                            }
                        }
                        for g in 0..q {
                            let old = &mut table[g * q..(g + 1) * q];
                            for (o, &v) in old.iter_mut().zip(new_row.iter()) {
                                delta = delta.max((*o - v).abs());
                                *o = v;
                            }
                        }
                    }
                    StepKind::Absent => unreachable!(),
                }
                delta
            })
            .collect();
        for d in deltas {
            worst = worst.max(d);
        }
    }
    worst
}

/// One synchronous sweep over the step-1 laws of nodes present at step 1.
fn initial_sweep(
    state: &mut VariationalState,
    log_alpha: &[f64],
    net: &DynamicNetwork,
    adj: &TemporalAdjacency,
    dens: &LogDensityTable,
    sched: &NodeSchedule,
    field: &mut [f64],
) -> f64 {
    let q = state.n_groups();
    emission_field(0, state, net, adj, dens, field);
    let slab = state.initial_slab_mut();
    let deltas: Vec<f64> = slab
        .par_chunks_mut(q)
        .enumerate()
        .map(|(i, row)| {
            if sched.kind(0, i) == StepKind::Absent {
                return 0.0;
            }
            let e_row = &field[i * q..(i + 1) * q];
            let mut new_row: Vec<f64> = (0..q).map(|h| log_alpha[h] + e_row[h]).collect();
            if !normalize_log_row(&mut new_row) {
                for (h, v) in new_row.iter_mut().enumerate() {
                    *v = log_alpha[h].exp();
                }
            }
            let mut delta = 0.0f64;
            for (o, &v) in row.iter_mut().zip(new_row.iter()) {
                delta = delta.max((*o - v).abs());
                *o = v;
            }
            delta
        })
        .collect();
    deltas.into_iter().fold(0.0f64, f64::max)
}

fn log_cells(values: impl Iterator<Item = f64>) -> Vec<f64> {
    values.map(|v| v.ln()).collect()
}

/// Iterates transition-table sweeps (with a marginal refresh after each)
/// until `sweeps` is exhausted or the largest change drops below `tol`.
pub fn ve_update_transition_tau(
    state: &mut VariationalState,
    params: &crate::params::ModelParams,
    dens: &LogDensityTable,
    net: &DynamicNetwork,
    sched: &NodeSchedule,
    sweeps: usize,
    tol: f64,
) {
    let adj = TemporalAdjacency::build(net);
    trans_tau_with_adj(state, params, dens, net, &adj, sched, sweeps, tol);
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn trans_tau_with_adj(
    state: &mut VariationalState,
    params: &crate::params::ModelParams,
    dens: &LogDensityTable,
    net: &DynamicNetwork,
    adj: &TemporalAdjacency,
    sched: &NodeSchedule,
    sweeps: usize,
    tol: f64,
) {
    if state.n_steps() < 2 {
        return;
    }
    let q = state.n_groups();
    let log_pi = log_cells(params.transition.iter().cloned());
    let log_alpha = log_cells(params.initial.iter().cloned());
    let mut field = vec![0.0f64; state.n_nodes() * q];
    for _ in 0..sweeps {
        let delta = trans_sweep(state, &log_pi, &log_alpha, net, adj, dens, sched, &mut field);
        state.recompute_marginals(sched);
        if delta < tol {
            break;
        }
    }
}

/// Same pattern for the step-1 laws.
pub fn ve_update_initial_tau(
    state: &mut VariationalState,
    params: &crate::params::ModelParams,
    dens: &LogDensityTable,
    net: &DynamicNetwork,
    sched: &NodeSchedule,
    sweeps: usize,
    tol: f64,
) {
    let adj = TemporalAdjacency::build(net);
    initial_tau_with_adj(state, params, dens, net, &adj, sched, sweeps, tol);
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn initial_tau_with_adj(
    state: &mut VariationalState,
    params: &crate::params::ModelParams,
    dens: &LogDensityTable,
    net: &DynamicNetwork,
    adj: &TemporalAdjacency,
    sched: &NodeSchedule,
    sweeps: usize,
    tol: f64,
) {
    let q = state.n_groups();
    let log_alpha = log_cells(params.initial.iter().cloned());
    let mut field = vec![0.0f64; state.n_nodes() * q];
    for _ in 0..sweeps {
        let delta = initial_sweep(state, &log_alpha, net, adj, dens, sched, &mut field);
        state.recompute_marginals(sched);
        if delta < tol {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emissions::LogDensityTable;
    use crate::params::{EmissionFamily, EmissionParams, ModelParams, PairField};
    use ndarray::{arr1, arr2, Array2};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_net(n: usize, t_steps: usize, rng: &mut StdRng) -> DynamicNetwork {
        let mut weights = Vec::new();
        for _ in 0..t_steps {
            let mut w = Array2::zeros((n, n));
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random_range(0.0..1.0) < 0.5 {
                        w[(i, j)] = 1.0;
                        w[(j, i)] = 1.0;
                    }
                }
            }
            weights.push(w);
        }
        DynamicNetwork::fully_present(weights).unwrap()
    }

    fn random_state(
        n: usize,
        t_steps: usize,
        q: usize,
        sched: &NodeSchedule,
        rng: &mut StdRng,
    ) -> VariationalState {
        let mut st = VariationalState::uniform(n, t_steps, q, sched);
        for i in 0..n {
            let row = st.initial_row_mut(i);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = rng.random_range(0.1..1.0);
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        for t in 1..t_steps {
            for i in 0..n {
                let table = st.trans_table_mut(t, i);
                for g in 0..q {
                    let mut sum = 0.0;
                    for v in table[g * q..(g + 1) * q].iter_mut() {
                        *v = rng.random_range(0.1..1.0);
                        sum += *v;
                    }
                    for v in table[g * q..(g + 1) * q].iter_mut() {
                        *v /= sum;
                    }
                }
            }
        }
        st.recompute_marginals(sched);
        st
    }

    fn bernoulli_params(q: usize, t_steps: usize, beta: PairField<f64>) -> ModelParams {
        let u = 1.0 / q as f64;
        ModelParams {
            n_groups: q,
            n_steps: t_steps,
            transition: Array2::from_elem((q, q), u),
            initial: ndarray::Array1::from_elem(q, u),
            sparsity: beta,
            family: EmissionFamily::Bernoulli,
            emission: EmissionParams::Bernoulli,
        }
    }

    #[test]
    fn single_group_rows_are_always_one() {
        let mut rng = StdRng::seed_from_u64(0);
        let net = random_net(4, 3, &mut rng);
        let sched = NodeSchedule::from_network(&net);
        let mut st = VariationalState::uniform(4, 3, 1, &sched);
        let params = bernoulli_params(1, 3, PairField::constant(1, 3, 0.4f64, 0.4));
        let dens = LogDensityTable::build(&params, &net).unwrap();
        ve_update_transition_tau(&mut st, &params, &dens, &net, &sched, 3, 1e-9);
        ve_update_initial_tau(&mut st, &params, &dens, &net, &sched, 3, 1e-9);
        for t in 1..3 {
            for i in 0..4 {
                assert_eq!(st.trans_table(t, i), &[1.0]);
            }
        }
        for i in 0..4 {
            assert_eq!(st.initial_row(i), &[1.0]);
        }
    }

    #[test]
    fn uninformative_densities_reduce_rows_to_the_prior() {
        // All cells share one beta, so the emission field cancels under
        // normalization and rows equal the transition-law rows.
        let mut rng = StdRng::seed_from_u64(1);
        let net = random_net(5, 2, &mut rng);
        let sched = NodeSchedule::from_network(&net);
        let mut st = random_state(5, 2, 2, &sched, &mut rng);
        let mut params = bernoulli_params(2, 2, PairField::constant(2, 2, 0.3f64, 0.3));
        params.transition = arr2(&[[1.0 - 1e-9, 1e-9], [1e-9, 1.0 - 1e-9]]);
        params.initial = arr1(&[0.25, 0.75]);
        let dens = LogDensityTable::build(&params, &net).unwrap();
        ve_update_transition_tau(&mut st, &params, &dens, &net, &sched, 1, 0.0);
        for i in 0..5 {
            let table = st.trans_table(1, i);
            for g in 0..2 {
                for h in 0..2 {
                    assert!(
                        (table[g * 2 + h] - params.transition[(g, h)]).abs() < 1e-7,
                        "row {g}: {table:?}"
                    );
                }
            }
        }
        ve_update_initial_tau(&mut st, &params, &dens, &net, &sched, 1, 0.0);
        for i in 0..5 {
            let row = st.initial_row(i);
            assert!((row[0] - 0.25).abs() < 1e-7 && (row[1] - 0.75).abs() < 1e-7);
        }
    }

    #[test]
    fn one_sweep_matches_straight_line_product_formula() {
        // 4 nodes, T = 2, Q = 2: evaluate the unnormalized update directly
        // in the linear domain and compare row by row.
        let mut rng = StdRng::seed_from_u64(7);
        let net = random_net(4, 2, &mut rng);
        let sched = NodeSchedule::from_network(&net);
        let st0 = random_state(4, 2, 2, &sched, &mut rng);
        let mut beta = PairField::constant(2, 2, 0.55f64, 0.0);
        beta.set_diag_slot(1, 0.35);
        for t in 0..2 {
            beta.set(t, 0, 1, 0.1 + 0.05 * t as f64);
        }
        let mut params = bernoulli_params(2, 2, beta);
        params.transition = arr2(&[[0.8, 0.2], [0.3, 0.7]]);
        params.initial = arr1(&[0.6, 0.4]);
        let dens = LogDensityTable::build(&params, &net).unwrap();

        let phi = |t: usize, g: usize, h: usize, y: f64| -> f64 {
            let b = params.beta(t, g, h);
            if y == 0.0 {
                1.0 - b
            } else {
                b
            }
        };

        // Expected transition rows at t = 2 from the old marginals.
        let mut expected = [[0.0f64; 4]; 4];
        for i in 0..4 {
            for g in 0..2 {
                let mut row = [0.0f64; 2];
                for h in 0..2 {
                    let mut prod = params.transition[(g, h)];
                    for j in 0..4 {
                        if j == i {
                            continue;
                        }
                        let m = st0.marg(1, j).unwrap();
                        for (l, &ml) in m.iter().enumerate() {
                            prod *= phi(1, h, l, net.weight(1, i, j)).powf(ml);
                        }
                    }
                    row[h] = prod;
                }
                let sum = row[0] + row[1];
                expected[i][g * 2] = row[0] / sum;
                expected[i][g * 2 + 1] = row[1] / sum;
            }
        }
        let mut st = st0.clone();
        ve_update_transition_tau(&mut st, &params, &dens, &net, &sched, 1, 0.0);
        for i in 0..4 {
            let table = st.trans_table(1, i);
            for k in 0..4 {
                assert!(
                    (table[k] - expected[i][k]).abs() < 1e-12,
                    "node {i}: {table:?} vs {:?}",
                    expected[i]
                );
            }
        }

        // Expected step-1 laws from the old step-1 marginals.
        let mut st = st0.clone();
        ve_update_initial_tau(&mut st, &params, &dens, &net, &sched, 1, 0.0);
        for i in 0..4 {
            let mut row = [0.0f64; 2];
            for h in 0..2 {
                let mut prod = params.initial[h];
                for j in 0..4 {
                    if j == i {
                        continue;
                    }
                    let m = st0.marg(0, j).unwrap();
                    for (l, &ml) in m.iter().enumerate() {
                        prod *= phi(0, h, l, net.weight(0, i, j)).powf(ml);
                    }
                }
                row[h] = prod;
            }
            let sum = row[0] + row[1];
            let got = st.initial_row(i);
            assert!((got[0] - row[0] / sum).abs() < 1e-12);
            assert!((got[1] - row[1] / sum).abs() < 1e-12);
        }
    }

    #[test]
    fn reentry_rows_use_the_stationary_law() {
        // Node 0 absent at step 2, present at 3: its step-3 table must be an
        // entry law (all rows equal), built from alpha rather than pi.
        let rows = vec![
            vec![true, true, true],
            vec![false, true, true],
            vec![true, true, true],
        ];
        let refs: Vec<&[bool]> = rows.iter().map(|r| r.as_slice()).collect();
        let sched = NodeSchedule::from_presence(&refs);
        let mut weights = vec![Array2::zeros((3, 3)); 3];
        for w in weights.iter_mut() {
            w[(1, 2)] = 1.0;
            w[(2, 1)] = 1.0;
        }
        let net = DynamicNetwork::new(weights, rows.clone()).unwrap();
        let mut st = VariationalState::uniform(3, 3, 2, &sched);
        let mut params = bernoulli_params(2, 3, PairField::constant(2, 3, 0.5f64, 0.5));
        params.transition = arr2(&[[0.99, 0.01], [0.01, 0.99]]);
        params.initial = arr1(&[0.3, 0.7]);
        let dens = LogDensityTable::build(&params, &net).unwrap();
        ve_update_transition_tau(&mut st, &params, &dens, &net, &sched, 1, 0.0);
        let table = st.trans_table(2, 0);
        // Uninformative densities: entry row equals alpha, for every q.
        for g in 0..2 {
            assert!((table[g * 2] - 0.3).abs() < 1e-12);
            assert!((table[g * 2 + 1] - 0.7).abs() < 1e-12);
        }
        // Interior node 1 keeps pi-shaped rows instead.
        let table = st.trans_table(2, 1);
        assert!((table[0] - 0.99).abs() < 1e-9);
    }
}
