//! Brute-force references for desk-scale verification: the exact marginal
//! log-likelihood by full enumeration of the latent configurations, and
//! numeric maximizer checks for every closed-form parameter update.
//!
//! These are deliberately written from the model definition with none of
//! the engine's shortcuts, so the engine can be tested against them.

use rayon::prelude::*;

use crate::emissions::{log_density, psi, EPS_MASS};
use crate::error::{Error, Result};
use crate::network::DynamicNetwork;
use crate::numeric::{xmul_log, LogSumExp};
use crate::params::{EmissionFamily, EmissionParams, ModelParams};
use crate::state::{NodeSchedule, StepKind, VariationalState};

/// Cap on the enumeration size.
#[derive(Clone, Copy, Debug)]
pub struct OracleBudget {
    pub max_configs: u64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget {
            max_configs: 1_000_000,
        }
    }
}

const ENUM_CHUNKS: u64 = 64;

/// log P(Y) by summing P(Z) P(Y | Z) over every assignment of present
/// (step, node) slots to groups. Refuses instances beyond the budget.
pub fn exact_log_likelihood(
    params: &ModelParams,
    net: &DynamicNetwork,
    budget: OracleBudget,
) -> Result<f64> {
    params.validate()?;
    let q = params.n_groups;
    let sched = NodeSchedule::from_network(net);
    // Present slots in (t, i) order; each gets one base-Q digit.
    let mut slots = Vec::new();
    let mut slot_of = vec![usize::MAX; net.n_steps() * net.n_nodes()];
    for t in 0..net.n_steps() {
        for i in 0..net.n_nodes() {
            if sched.is_present(t, i) {
                slot_of[t * net.n_nodes() + i] = slots.len();
                slots.push((t, i));
            }
        }
    }
    let n_slots = slots.len() as u32;
    let size = (q as f64).powi(n_slots as i32);
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // infinite size must fail
    if !(size <= budget.max_configs as f64) {
        return Err(Error::BudgetExceeded {
            size,
            budget: budget.max_configs,
        });
    }
    let n_configs = (q as u64).pow(n_slots);

    // Chain terms per slot: entry -> log alpha, interior -> log pi from the
    // node's previous slot.
    let log_alpha: Vec<f64> = params.initial.iter().map(|v| v.ln()).collect();
    let log_pi: Vec<f64> = params.transition.iter().map(|v| v.ln()).collect();
    #[derive(Clone, Copy)]
    enum ChainTerm {
        Entry,
        Interior { prev_slot: usize },
    }
    let chain: Vec<ChainTerm> = slots
        .iter()
        .map(|&(t, i)| match sched.kind(t, i) {
            StepKind::Entry => ChainTerm::Entry,
            StepKind::Interior => ChainTerm::Interior {
                prev_slot: slot_of[(t - 1) * net.n_nodes() + i],
            },
            StepKind::Absent => unreachable!(),
        })
        .collect();

    // Per present pair: slot ids and the full Q x Q table of log densities.
    let mut pair_slots = Vec::new();
    let mut pair_tables: Vec<f64> = Vec::new();
    for t in 0..net.n_steps() {
        for i in 0..net.n_nodes() {
            if !sched.is_present(t, i) {
                continue;
            }
            for j in (i + 1)..net.n_nodes() {
                if !sched.is_present(t, j) {
                    continue;
                }
                let y = net.weight(t, i, j);
                pair_slots.push((
                    slot_of[t * net.n_nodes() + i],
                    slot_of[t * net.n_nodes() + j],
                ));
                for g in 0..q {
                    for h in 0..q {
                        pair_tables.push(log_density(
                            &params.family,
                            params.beta(t, g, h),
                            params.gamma_view(t, g, h),
                            y,
                        )?);
                    }
                }
            }
        }
    }

    let score_of = |config: u64| -> f64 {
        let mut digits = vec![0usize; n_slots as usize];
        let mut c = config;
        for d in digits.iter_mut() {
            *d = (c % q as u64) as usize;
            c /= q as u64;
        }
        let mut score = 0.0;
        for (s, term) in chain.iter().enumerate() {
            let z = digits[s];
            score += match *term {
                ChainTerm::Entry => log_alpha[z],
                ChainTerm::Interior { prev_slot } => log_pi[digits[prev_slot] * q + z],
            };
        }
        for (p, &(si, sj)) in pair_slots.iter().enumerate() {
            score += pair_tables[p * q * q + digits[si] * q + digits[sj]];
        }
        score
    };

    // Fixed chunking, independent of the worker count, merged in order.
    let chunks = ENUM_CHUNKS.min(n_configs.max(1));
    let per_chunk = n_configs.div_ceil(chunks);
    let partials: Vec<LogSumExp> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut acc = LogSumExp::new();
            let start = k * per_chunk;
            let end = ((k + 1) * per_chunk).min(n_configs);
            for config in start..end {
                acc.add(score_of(config));
            }
            acc
        })
        .collect();
    let mut total = LogSumExp::new();
    for p in partials {
        total.merge(p);
    }
    Ok(total.value())
}

/// Violations found when checking analytic updates against numeric
/// maximization of the matching lower-bound term.
#[derive(Clone, Debug, Default)]
pub struct MstepCheckReport {
    pub violations: Vec<String>,
    pub cells_checked: usize,
    pub max_arg_error: f64,
}

impl MstepCheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn golden_section_max(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
        if (hi - lo).abs() < 1e-13 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Weighted data of one emission cell: the zero-pair mass and the
/// (weight, value) list of nonzero observations.
struct CellData {
    zero_mass: f64,
    nonzero: Vec<(f64, f64)>,
}

fn gather_cell(
    state: &VariationalState,
    net: &DynamicNetwork,
    steps: &[usize],
    g: usize,
    h: usize,
) -> CellData {
    let q = state.n_groups();
    let mut zero_mass = 0.0;
    let mut nonzero = Vec::new();
    for &t in steps {
        let masses = crate::emissions::cell_masses(state, net, t);
        zero_mass += masses.total[g * q + h] - masses.nonzero[g * q + h];
        for (i, j, y) in net.edges(t) {
            let (Some(mi), Some(mj)) = (state.marg(t, i), state.marg(t, j)) else {
                continue;
            };
            let w = mi[g] * mj[h] + mi[h] * mj[g];
            if w > 0.0 {
                nonzero.push((w, y));
            }
        }
    }
    CellData { zero_mass, nonzero }
}

/// Checks that the closed-form updates in `analytic` maximize their
/// lower-bound terms, cell by cell, within 1e-5 of a golden-section
/// maximizer (or under +-1e-3 simplex perturbations for bin frequencies).
/// Pooled diagonal cells are checked against their pooled objective.
pub fn numeric_mstep_check(
    state: &VariationalState,
    net: &DynamicNetwork,
    analytic: &ModelParams,
) -> Result<MstepCheckReport> {
    let q = analytic.n_groups;
    let t_steps = net.n_steps();
    let mut report = MstepCheckReport::default();
    let all_steps: Vec<usize> = (0..t_steps).collect();

    let record = |report: &mut MstepCheckReport, label: String, analytic_v: f64, numeric_v: f64, obj: &dyn Fn(f64) -> f64| {
        report.cells_checked += 1;
        let err = (analytic_v - numeric_v).abs() / analytic_v.abs().max(1.0);
        report.max_arg_error = report.max_arg_error.max(err);
        if err > 1e-5 && obj(analytic_v) < obj(numeric_v) - 1e-9 {
            report.violations.push(format!(
                "{label}: analytic {analytic_v:.8} vs numeric {numeric_v:.8}"
            ));
        }
    };

    // Iterate cells: pooled diagonal (g, g) and per-step off-diagonal.
    let mut cells: Vec<(Vec<usize>, usize, usize, String)> = Vec::new();
    for g in 0..q {
        cells.push((all_steps.clone(), g, g, format!("diag g={g}")));
        for h in (g + 1)..q {
            for t in 0..t_steps {
                cells.push((vec![t], g, h, format!("off t={t} ({g},{h})")));
            }
        }
    }

    for (steps, g, h, label) in &cells {
        let data = gather_cell(state, net, steps, *g, *h);
        let nz_mass: f64 = data.nonzero.iter().map(|(w, _)| w).sum();
        let total = data.zero_mass + nz_mass;
        if total < EPS_MASS {
            continue; // retained cell, nothing to check
        }

        // Sparsity: E log phi as a function of beta only.
        let beta_obj = {
            let zero_mass = data.zero_mass;
            move |b: f64| xmul_log(zero_mass, (1.0 - b).ln()) + xmul_log(nz_mass, b.ln())
        };
        let beta_hat = analytic.beta(steps[0], *g, *h);
        let beta_num = golden_section_max(&beta_obj, 0.0, 1.0);
        record(&mut report, format!("beta {label}"), beta_hat, beta_num, &beta_obj);

        if nz_mass < EPS_MASS {
            continue;
        }
        match (&analytic.family, &analytic.emission) {
            (EmissionFamily::Bernoulli, _) => {}
            (EmissionFamily::TruncatedPoisson, EmissionParams::TruncatedPoisson { rates }) => {
                let mean: f64 =
                    data.nonzero.iter().map(|(w, y)| w * y).sum::<f64>() / nz_mass;
                if mean <= 1.0 + 1e-9 {
                    continue; // update retained the previous rate
                }
                let nonzero = data.nonzero.clone();
                // ln(e^r - 1) written as r + ln(1 - e^-r) to avoid overflow.
                let obj = move |r: f64| -> f64 {
                    let log_norm = r + (-(-r).exp_m1()).ln();
                    nonzero
                        .iter()
                        .map(|&(w, y)| w * (y * r.ln() - log_norm))
                        .sum()
                };
                let rate_hat = *rates.get(steps[0], *g, *h);
                let rate_num = golden_section_max(&obj, 1e-9, 3.0 * mean.max(2.0));
                record(&mut report, format!("rate {label}"), rate_hat, rate_num, &obj);
                // Cross-check the fixed-point identity psi(rate) = mean.
                if (psi(rate_hat) - mean).abs() > 1e-6 * mean {
                    report
                        .violations
                        .push(format!("psi identity broken at {label}"));
                }
            }
            (
                EmissionFamily::GaussianHomoscedastic,
                EmissionParams::Gaussian { means, variances: _ },
            ) => {
                let nonzero = data.nonzero.clone();
                let obj = move |m: f64| -> f64 {
                    nonzero.iter().map(|&(w, y)| -w * (y - m) * (y - m)).sum()
                };
                let lo = data
                    .nonzero
                    .iter()
                    .map(|&(_, y)| y)
                    .fold(f64::INFINITY, f64::min)
                    - 1.0;
                let hi = data
                    .nonzero
                    .iter()
                    .map(|&(_, y)| y)
                    .fold(f64::NEG_INFINITY, f64::max)
                    + 1.0;
                let mean_hat = *means.get(steps[0], *g, *h);
                let mean_num = golden_section_max(&obj, lo, hi);
                record(&mut report, format!("mean {label}"), mean_hat, mean_num, &obj);
            }
            (EmissionFamily::FiniteSpace { bins }, EmissionParams::FiniteSpace { probs }) => {
                let n_bins = bins.len();
                let mut counts = vec![0.0f64; n_bins];
                for &(w, y) in &data.nonzero {
                    if let Some(m) = analytic.family.bin_index(y) {
                        counts[m] += w;
                    }
                }
                let p = probs.get(steps[0], *g, *h).clone();
                let obj = |p: &[f64]| -> f64 {
                    counts
                        .iter()
                        .zip(p)
                        .map(|(&c, &pm)| xmul_log(c, pm.ln()))
                        .sum()
                };
                let base = obj(&p);
                report.cells_checked += 1;
                for a in 0..n_bins {
                    for b in 0..n_bins {
                        if a == b {
                            continue;
                        }
                        let delta = 1e-3f64.min(p[a]);
                        if delta <= 0.0 {
                            continue;
                        }
                        let mut moved = p.clone();
                        moved[a] -= delta;
                        moved[b] += delta;
                        if obj(&moved) > base + 1e-9 {
                            report.violations.push(format!(
                                "bin frequencies not maximal at {label} (move {a}->{b})"
                            ));
                        }
                    }
                }
            }
            _ => {}
        }
    }

    // Per-step pooled Gaussian variance.
    if let (EmissionFamily::GaussianHomoscedastic, EmissionParams::Gaussian { means, variances }) =
        (&analytic.family, &analytic.emission)
    {
        for t in 0..t_steps {
            let mut wsum = 0.0;
            let mut sse = 0.0;
            for (i, j, y) in net.edges(t) {
                let (Some(mi), Some(mj)) = (state.marg(t, i), state.marg(t, j)) else {
                    continue;
                };
                for g in 0..q {
                    for h in 0..q {
                        let w = mi[g] * mj[h];
                        let r = y - means.get(t, g, h);
                        wsum += w;
                        sse += w * r * r;
                    }
                }
            }
            if wsum < EPS_MASS {
                continue;
            }
            let obj = move |s: f64| -> f64 { -0.5 * wsum * s.ln() - sse / (2.0 * s) };
            let var_num = golden_section_max(&obj, 1e-10, (sse / wsum) * 10.0 + 1.0);
            record(
                &mut report,
                format!("variance t={t}"),
                variances[t],
                var_num,
                &obj,
            );
        }
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::PairField;
    use ndarray::{arr1, arr2, Array2};

    fn tiny_bernoulli_params(beta_in: f64, beta_out: f64, n_steps: usize) -> ModelParams {
        let mut sparsity = PairField::constant(2, n_steps, beta_in, beta_out);
        sparsity.set_diag_slot(0, beta_in);
        sparsity.set_diag_slot(1, beta_in);
        ModelParams {
            n_groups: 2,
            n_steps,
            transition: arr2(&[[0.7, 0.3], [0.4, 0.6]]),
            initial: arr1(&[4.0 / 7.0, 3.0 / 7.0]),
            sparsity,
            family: EmissionFamily::Bernoulli,
            emission: EmissionParams::Bernoulli,
        }
    }

    #[test]
    fn two_node_single_step_matches_hand_sum() {
        // N = 2, T = 1, Q = 2: four configurations, summed by hand.
        let params = tiny_bernoulli_params(0.8, 0.2, 1);
        let mut w = Array2::zeros((2, 2));
        w[(0, 1)] = 1.0;
        w[(1, 0)] = 1.0;
        let net = DynamicNetwork::fully_present(vec![w]).unwrap();
        let a = [4.0 / 7.0, 3.0 / 7.0];
        let mut total = 0.0f64;
        for z0 in 0..2 {
            for z1 in 0..2 {
                let beta = if z0 == z1 { 0.8 } else { 0.2 };
                total += a[z0] * a[z1] * beta;
            }
        }
        let got = exact_log_likelihood(&params, &net, OracleBudget::default()).unwrap();
        assert!((got - total.ln()).abs() < 1e-12);
    }

    #[test]
    fn enumeration_is_invariant_under_group_relabeling() {
        let params = tiny_bernoulli_params(0.75, 0.15, 2);
        // Swap the two groups everywhere.
        let swapped = ModelParams {
            transition: arr2(&[[0.6, 0.4], [0.3, 0.7]]),
            initial: arr1(&[3.0 / 7.0, 4.0 / 7.0]),
            ..tiny_bernoulli_params(0.75, 0.15, 2)
        };
        let mut w0 = Array2::zeros((3, 3));
        w0[(0, 1)] = 1.0;
        w0[(1, 0)] = 1.0;
        let mut w1 = Array2::zeros((3, 3));
        w1[(1, 2)] = 1.0;
        w1[(2, 1)] = 1.0;
        let net = DynamicNetwork::fully_present(vec![w0, w1]).unwrap();
        let a = exact_log_likelihood(&params, &net, OracleBudget::default()).unwrap();
        let b = exact_log_likelihood(&swapped, &net, OracleBudget::default()).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn mstep_check_accepts_true_updates_and_flags_fake_ones() {
        use crate::state::NodeSchedule;
        use crate::vem::{mstep_alpha, mstep_pi};
        use rand::Rng;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;

        let params_gen = tiny_bernoulli_params(0.7, 0.2, 2);
        let (net, _) = crate::sim::simulate(
            &params_gen,
            6,
            3,
            &crate::sim::PresenceSchedule::Full,
        )
        .unwrap();
        let sched = NodeSchedule::from_network(&net);
        let mut state = VariationalState::uniform(6, 2, 2, &sched);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..6 {
            let r = rng.random_range(0.1..0.9);
            state.initial_row_mut(i).copy_from_slice(&[r, 1.0 - r]);
            let a = rng.random_range(0.1..0.9);
            let b = rng.random_range(0.1..0.9);
            state
                .trans_table_mut(1, i)
                .copy_from_slice(&[a, 1.0 - a, b, 1.0 - b]);
        }
        state.recompute_marginals(&sched);
        let neutral = ModelParams::neutral(2, 2, &EmissionFamily::Bernoulli, &[1.0]);
        let analytic = ModelParams {
            transition: mstep_pi(&state, &sched),
            initial: mstep_alpha(&state, &sched),
            sparsity: crate::emissions::mstep_beta(&state, &net, &sched, &neutral.sparsity),
            ..neutral
        };
        let ok = numeric_mstep_check(&state, &net, &analytic).unwrap();
        assert!(ok.passed(), "{:?}", ok.violations);
        assert!(ok.cells_checked > 0);

        // A shifted sparsity value must be caught as suboptimal.
        let mut wrong = analytic.clone();
        let shifted = (wrong.beta(0, 0, 0) - 0.2).max(0.01);
        wrong.sparsity.set_diag_slot(0, shifted);
        let bad = numeric_mstep_check(&state, &net, &wrong).unwrap();
        assert!(!bad.passed(), "shifted update not flagged");
    }

    #[test]
    fn budget_is_enforced() {
        let params = tiny_bernoulli_params(0.5, 0.5, 3);
        let net =
            DynamicNetwork::fully_present(vec![Array2::zeros((30, 30)); 3]).unwrap();
        let err = exact_log_likelihood(&params, &net, OracleBudget { max_configs: 1000 });
        assert!(matches!(err, Err(Error::BudgetExceeded { .. })));
    }
}
