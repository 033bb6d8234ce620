//! Lower-bound evaluation, complete-data log-likelihood and MAP decoding.

use crate::emissions::LogDensityTable;
use crate::labels::{LabelSeries, ABSENT};
use crate::network::DynamicNetwork;
use crate::numeric::xmul_log;
use crate::params::ModelParams;
use crate::state::{NodeSchedule, StepKind, SufficientStats, VariationalState};

/// The variational lower bound J(theta, tau): expected complete-data
/// log-likelihood under the factorized chain law plus its entropy. All
/// 0 * log 0 products are 0; emission terms run over present pairs i < j.
pub fn compute_elbo(
    params: &ModelParams,
    state: &VariationalState,
    net: &DynamicNetwork,
    sched: &NodeSchedule,
    dens: &LogDensityTable,
) -> f64 {
    let q = state.n_groups();
    let mut j = 0.0;

    // Entry terms (step-1 presences and re-entries): tau (log alpha - log tau).
    for t in 0..state.n_steps() {
        for i in 0..state.n_nodes() {
            if sched.kind(t, i) != StepKind::Entry {
                continue;
            }
            let row = if t == 0 {
                state.initial_row(i)
            } else {
                state.trans_row(t, i, 0)
            };
            for (g, &v) in row.iter().enumerate() {
                if v > 0.0 {
                    j += v * (params.initial[g].ln() - v.ln());
                }
            }
        }
    }

    // Transition terms over interior slots:
    // marg(t-1, q) tau(t, q, q') (log pi - log tau).
    for t in 1..state.n_steps() {
        for i in 0..state.n_nodes() {
            if sched.kind(t, i) != StepKind::Interior {
                continue;
            }
            let prev = state.marg_row(t - 1, i);
            let table = state.trans_table(t, i);
            for (g, &p) in prev.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for h in 0..q {
                    let v = table[g * q + h];
                    if v > 0.0 {
                        j += p * v * (params.transition[(g, h)].ln() - v.ln());
                    }
                }
            }
        }
    }

    // Emission terms.
    for t in 0..state.n_steps() {
        j += emission_term(t, state, net, dens);
    }
    j
}

/// Zero-pair mass per cell comes from the same subtraction discretization
/// as the maximization step and the fixed-point field, so a sparsity value
/// of exactly 1 is matched by an exactly-zero coefficient on its -inf.
fn emission_term(
    t: usize,
    state: &VariationalState,
    net: &DynamicNetwork,
    dens: &LogDensityTable,
) -> f64 {
    let q = state.n_groups();
    let n = net.n_nodes();
    let mut s_tot = vec![0.0f64; q];
    let mut d = vec![0.0f64; q * q];
    for i in 0..n {
        let Some(m) = state.marg(t, i) else { continue };
        for (g, &a) in m.iter().enumerate() {
            s_tot[g] += a;
            for (h, &b) in m.iter().enumerate() {
                d[g * q + h] += a * b;
            }
        }
    }
    let mut nz = vec![0.0f64; q * q];
    let mut edge_total = 0.0;
    for (e, (i, j2, _)) in net.edges(t).enumerate() {
        let (Some(mi), Some(mj)) = (state.marg(t, i), state.marg(t, j2)) else {
            continue;
        };
        let cells = dens.edge_cells(t, e);
        for (g, &a) in mi.iter().enumerate() {
            for (h, &b) in mj.iter().enumerate() {
                let wgt = a * b;
                nz[g * q + h] += wgt;
                nz[h * q + g] += wgt;
                edge_total += xmul_log(wgt, cells[g * q + h]);
            }
        }
    }
    let mut zero_total = 0.0;
    for g in 0..q {
        for h in 0..q {
            let ordered_pairs = s_tot[g] * s_tot[h] - d[g * q + h] - nz[g * q + h];
            zero_total += xmul_log(ordered_pairs.max(0.0), dens.lp_zero(t, g, h));
        }
    }
    edge_total + 0.5 * zero_total
}

/// log P(Y, Z) at fixed labels: entry terms with the stationary law,
/// transition counts against the transition matrix, and per-pair emission
/// log densities over present pairs. Absent slots contribute nothing.
pub fn complete_log_likelihood(
    params: &ModelParams,
    labels: &LabelSeries,
    net: &DynamicNetwork,
) -> crate::error::Result<f64> {
    let q = params.n_groups;
    if labels.n_steps() != net.n_steps() || labels.n_nodes() != net.n_nodes() {
        return Err(crate::error::Error::DimensionMismatch(
            "label series does not match the network".into(),
        ));
    }
    let (n_entry, n_trans) = SufficientStats::hard_counts(labels, q);
    let mut total = 0.0;
    for g in 0..q {
        total += xmul_log(n_entry[g], params.initial[g].ln());
    }
    for g in 0..q {
        for h in 0..q {
            total += xmul_log(n_trans[g * q + h], params.transition[(g, h)].ln());
        }
    }
    let dens = LogDensityTable::build(params, net)?;
    for t in 0..net.n_steps() {
        // Group sizes among labeled (present) nodes.
        let mut sizes = vec![0.0f64; q];
        for i in 0..net.n_nodes() {
            if let Some(z) = labels.get(t, i) {
                sizes[z] += 1.0;
            }
        }
        let mut nz_counts = vec![0.0f64; q * q];
        for (e, (i, j2, _)) in net.edges(t).enumerate() {
            let (Some(zi), Some(zj)) = (labels.get(t, i), labels.get(t, j2)) else {
                continue;
            };
            total += dens.edge_cells(t, e)[zi * q + zj];
            nz_counts[zi * q + zj] += 1.0;
            if zi != zj {
                nz_counts[zj * q + zi] += 1.0;
            } else {
                nz_counts[zi * q + zi] += 1.0;
            }
        }
        for g in 0..q {
            for h in g..q {
                let pairs = if g == h {
                    sizes[g] * (sizes[g] - 1.0) / 2.0
                } else {
                    sizes[g] * sizes[h]
                };
                let zero_pairs = pairs - 0.5 * nz_counts[g * q + h]
                    - if g == h { 0.0 } else { 0.5 * nz_counts[h * q + g] };
                total += xmul_log(zero_pairs.max(0.0), dens.lp_zero(t, g, h));
            }
        }
    }
    Ok(total)
}

/// Decoding mode for the fitted variational law.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MapMode {
    /// Per-slot argmax of the marginals (ties to the lowest group).
    #[default]
    MarginalArgmax,
    /// Most probable path per node under the fitted chain law.
    Viterbi,
}

/// MAP classification of every (step, node) slot; absent slots keep the
/// absent marker.
pub fn map_classification(
    state: &VariationalState,
    sched: &NodeSchedule,
    mode: MapMode,
) -> LabelSeries {
    match mode {
        MapMode::MarginalArgmax => state.marginal_argmax(),
        MapMode::Viterbi => viterbi(state, sched),
    }
}

fn viterbi(state: &VariationalState, sched: &NodeSchedule) -> LabelSeries {
    let q = state.n_groups();
    let t_steps = state.n_steps();
    let mut labels = LabelSeries::filled(t_steps, state.n_nodes(), ABSENT);
    for i in 0..state.n_nodes() {
        let mut t = 0;
        while t < t_steps {
            if sched.kind(t, i) == StepKind::Absent {
                t += 1;
                continue;
            }
            // Presence segment [t, end).
            let start = t;
            let mut end = t + 1;
            while end < t_steps && sched.kind(end, i) == StepKind::Interior {
                end += 1;
            }
            let entry = if start == 0 {
                state.initial_row(i)
            } else {
                state.trans_row(start, i, 0)
            };
            let mut score: Vec<f64> = entry.iter().map(|&v| v.ln()).collect();
            let mut back: Vec<Vec<usize>> = Vec::with_capacity(end - start);
            for step in (start + 1)..end {
                let table = state.trans_table(step, i);
                let mut next = vec![f64::NEG_INFINITY; q];
                let mut ptr = vec![0usize; q];
                for h in 0..q {
                    for g in 0..q {
                        let cand = score[g] + table[g * q + h].ln();
                        if cand > next[h] {
                            next[h] = cand;
                            ptr[h] = g;
                        }
                    }
                }
                score = next;
                back.push(ptr);
            }
            let mut best = 0;
            for (g, &v) in score.iter().enumerate() {
                if v > score[best] {
                    best = g;
                }
            }
            let mut path = vec![best];
            for ptr in back.iter().rev() {
                path.push(ptr[*path.last().unwrap()]);
            }
            path.reverse();
            for (k, &z) in path.iter().enumerate() {
                labels.set(start + k, i, z);
            }
            t = end;
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::ABSENT;
    use crate::params::{EmissionFamily, EmissionParams, PairField};
    use ndarray::{arr1, arr2, Array2};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn full_sched(t: usize, n: usize) -> NodeSchedule {
        let rows = vec![vec![true; n]; t];
        let refs: Vec<&[bool]> = rows.iter().map(|r| r.as_slice()).collect();
        NodeSchedule::from_presence(&refs)
    }

    fn bernoulli_params(
        q: usize,
        t_steps: usize,
        pi: Array2<f64>,
        alpha: Vec<f64>,
        beta: PairField<f64>,
    ) -> ModelParams {
        ModelParams {
            n_groups: q,
            n_steps: t_steps,
            transition: pi,
            initial: arr1(&alpha),
            sparsity: beta,
            family: EmissionFamily::Bernoulli,
            emission: EmissionParams::Bernoulli,
        }
    }

    fn hard_state(
        paths: &[Vec<usize>],
        q: usize,
        sched: &NodeSchedule,
    ) -> VariationalState {
        let n = paths.len();
        let t_steps = paths[0].len();
        let mut st = VariationalState::uniform(n, t_steps, q, sched);
        for (i, path) in paths.iter().enumerate() {
            let row = st.initial_row_mut(i);
            row.fill(0.0);
            row[path[0]] = 1.0;
            for t in 1..t_steps {
                let table = st.trans_table_mut(t, i);
                table.fill(0.0);
                for g in 0..q {
                    table[g * q + path[t]] = 1.0;
                }
            }
        }
        st.recompute_marginals(sched);
        st
    }

    fn random_bernoulli_net(n: usize, t_steps: usize, rng: &mut StdRng) -> DynamicNetwork {
        let mut weights = Vec::new();
        for _ in 0..t_steps {
            let mut w = Array2::zeros((n, n));
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random_range(0.0..1.0) < 0.45 {
                        w[(i, j)] = 1.0;
                        w[(j, i)] = 1.0;
                    }
                }
            }
            weights.push(w);
        }
        DynamicNetwork::fully_present(weights).unwrap()
    }

    #[test]
    fn hard_state_elbo_equals_complete_log_likelihood() {
        // Point-mass tau has zero entropy, so J collapses to log P(Y, Z).
        let mut rng = StdRng::seed_from_u64(3);
        let net = random_bernoulli_net(4, 3, &mut rng);
        let sched = full_sched(3, 4);
        let paths = vec![
            vec![0, 0, 1],
            vec![1, 1, 1],
            vec![0, 1, 0],
            vec![1, 0, 0],
        ];
        let st = hard_state(&paths, 2, &sched);
        let mut beta = PairField::constant(2, 3, 0.6f64, 0.0);
        beta.set_diag_slot(1, 0.45);
        for t in 0..3 {
            beta.set(t, 0, 1, 0.15);
        }
        let params = bernoulli_params(
            2,
            3,
            arr2(&[[0.7, 0.3], [0.25, 0.75]]),
            vec![0.45, 0.55],
            beta,
        );
        let dens = crate::emissions::LogDensityTable::build(&params, &net).unwrap();
        let j = compute_elbo(&params, &st, &net, &sched, &dens);
        let mut labels = LabelSeries::filled(3, 4, ABSENT);
        for (i, path) in paths.iter().enumerate() {
            for (t, &z) in path.iter().enumerate() {
                labels.set(t, i, z);
            }
        }
        let ll = complete_log_likelihood(&params, &labels, &net).unwrap();
        assert!((j - ll).abs() < 1e-10, "J = {j}, logP(Y,Z) = {ll}");
    }

    #[test]
    fn complete_log_likelihood_matches_term_by_term_hand_sum() {
        // 4-node toy summed directly over every pair and transition.
        let mut rng = StdRng::seed_from_u64(8);
        let net = random_bernoulli_net(4, 2, &mut rng);
        let sched = full_sched(2, 4);
        let paths = vec![vec![0, 1], vec![0, 0], vec![1, 1], vec![1, 0]];
        let _ = sched;
        let mut labels = LabelSeries::filled(2, 4, ABSENT);
        for (i, path) in paths.iter().enumerate() {
            for (t, &z) in path.iter().enumerate() {
                labels.set(t, i, z);
            }
        }
        let mut beta = PairField::constant(2, 2, 0.7f64, 0.0);
        beta.set_diag_slot(1, 0.5);
        beta.set(0, 0, 1, 0.2);
        beta.set(1, 0, 1, 0.1);
        let pi = arr2(&[[0.8, 0.2], [0.4, 0.6]]);
        let alpha = vec![0.35, 0.65];
        let params = bernoulli_params(2, 2, pi.clone(), alpha.clone(), beta.clone());

        let mut expected = 0.0;
        for path in &paths {
            expected += alpha[path[0]].ln();
            expected += pi[(path[0], path[1])].ln();
        }
        for t in 0..2 {
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let b = *beta.get(t, paths[i][t], paths[j][t]);
                    let y = net.weight(t, i, j);
                    expected += if y != 0.0 { b.ln() } else { (1.0 - b).ln() };
                }
            }
        }
        let got = complete_log_likelihood(&params, &labels, &net).unwrap();
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn fully_absent_node_contributes_nothing() {
        let mut w = Array2::zeros((3, 3));
        w[(0, 1)] = 1.0;
        w[(1, 0)] = 1.0;
        let presence_small = vec![vec![true, true, false]; 2];
        let net3 =
            DynamicNetwork::new(vec![w.clone(), Array2::zeros((3, 3))], presence_small).unwrap();
        let net2 = DynamicNetwork::fully_present(vec![
            w.slice(ndarray::s![..2, ..2]).to_owned(),
            Array2::zeros((2, 2)),
        ])
        .unwrap();
        let beta = PairField::constant(2, 2, 0.6f64, 0.2);
        let params = bernoulli_params(
            2,
            2,
            arr2(&[[0.9, 0.1], [0.2, 0.8]]),
            vec![0.5, 0.5],
            beta,
        );
        let mut labels3 = LabelSeries::filled(2, 3, ABSENT);
        let mut labels2 = LabelSeries::filled(2, 2, ABSENT);
        for (i, path) in [[0usize, 0], [1, 1]].iter().enumerate() {
            for t in 0..2 {
                labels3.set(t, i, path[t]);
                labels2.set(t, i, path[t]);
            }
        }
        let with_absent = complete_log_likelihood(&params, &labels3, &net3).unwrap();
        let without = complete_log_likelihood(&params, &labels2, &net2).unwrap();
        assert!((with_absent - without).abs() < 1e-12);
    }

    #[test]
    fn static_single_step_reduces_to_entry_plus_emission() {
        let mut rng = StdRng::seed_from_u64(5);
        let net = random_bernoulli_net(4, 1, &mut rng);
        let beta = PairField::constant(2, 1, 0.6f64, 0.2);
        let alpha = vec![0.3, 0.7];
        let params = bernoulli_params(
            2,
            1,
            arr2(&[[0.9, 0.1], [0.2, 0.8]]),
            alpha.clone(),
            beta.clone(),
        );
        let labels = LabelSeries::from_rows(vec![vec![0, 1, 0, 1]]);
        let got = complete_log_likelihood(&params, &labels, &net).unwrap();
        let mut expected = 2.0 * alpha[0].ln() + 2.0 * alpha[1].ln();
        for i in 0..4 {
            for j in (i + 1)..4 {
                let b = *beta.get(0, i % 2, j % 2);
                expected += if net.weight(0, i, j) != 0.0 {
                    b.ln()
                } else {
                    (1.0 - b).ln()
                };
            }
        }
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn viterbi_matches_exhaustive_path_search() {
        // One node, T = 3, Q = 3: compare against all 27 paths.
        let sched = full_sched(3, 1);
        let mut st = VariationalState::uniform(1, 3, 3, &sched);
        let mut rng = StdRng::seed_from_u64(11);
        {
            let row = st.initial_row_mut(0);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = rng.random_range(0.05..1.0);
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        for t in 1..3 {
            let table = st.trans_table_mut(t, 0);
            for g in 0..3 {
                let mut sum = 0.0;
                for v in table[g * 3..(g + 1) * 3].iter_mut() {
                    *v = rng.random_range(0.05..1.0);
                    sum += *v;
                }
                for v in table[g * 3..(g + 1) * 3].iter_mut() {
                    *v /= sum;
                }
            }
        }
        st.recompute_marginals(&sched);
        let labels = map_classification(&st, &sched, MapMode::Viterbi);

        let mut best_score = f64::NEG_INFINITY;
        let mut best_path = [0usize; 3];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let score = st.initial_row(0)[a].ln()
                        + st.trans_table(1, 0)[a * 3 + b].ln()
                        + st.trans_table(2, 0)[b * 3 + c].ln();
                    if score > best_score {
                        best_score = score;
                        best_path = [a, b, c];
                    }
                }
            }
        }
        for t in 0..3 {
            assert_eq!(labels.get(t, 0), Some(best_path[t]));
        }
    }

    #[test]
    fn degenerate_state_decodes_identically_in_both_modes() {
        let sched = full_sched(3, 2);
        let paths = vec![vec![0, 1, 1], vec![1, 1, 0]];
        let st = hard_state(&paths, 2, &sched);
        let marginal = map_classification(&st, &sched, MapMode::MarginalArgmax);
        let viterbi = map_classification(&st, &sched, MapMode::Viterbi);
        assert_eq!(marginal, viterbi);
        for (i, path) in paths.iter().enumerate() {
            for (t, &z) in path.iter().enumerate() {
                assert_eq!(marginal.get(t, i), Some(z));
            }
        }
    }

    #[test]
    fn exact_ties_pick_the_lowest_group() {
        let sched = full_sched(1, 1);
        let st = VariationalState::uniform(1, 1, 2, &sched);
        let labels = map_classification(&st, &sched, MapMode::MarginalArgmax);
        assert_eq!(labels.get(0, 0), Some(0));
    }
}
