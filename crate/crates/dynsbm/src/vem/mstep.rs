//! Maximization-step updates for the chain parameters. The sparsity and
//! family parameters are updated in [`crate::emissions`].

use ndarray::{Array1, Array2};

use crate::emissions::EPS_MASS;
use crate::state::{NodeSchedule, StepKind, VariationalState};

/// Row-normalized expected transition mass over interior slots. Rows with
/// (almost) no mass fall back to uniform.
pub fn mstep_pi(state: &VariationalState, sched: &NodeSchedule) -> Array2<f64> {
    let q = state.n_groups();
    let mut mass = vec![0.0f64; q * q];
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
                    mass[g * q + h] += p * table[g * q + h];
                }
            }
        }
    }
    let mut pi = Array2::zeros((q, q));
    for g in 0..q {
        let row_sum: f64 = mass[g * q..(g + 1) * q].iter().sum();
        if row_sum < EPS_MASS {
            for h in 0..q {
                pi[(g, h)] = 1.0 / q as f64;
            }
        } else {
            for h in 0..q {
                pi[(g, h)] = mass[g * q + h] / row_sum;
            }
        }
    }
    pi
}

/// Empirical mean of the marginals over present slots. This is not a free
/// maximizer: the initial law is tied to the transition matrix as its
/// stationary law, and the marginal mean is the plug-in estimate of it.
pub fn mstep_alpha(state: &VariationalState, sched: &NodeSchedule) -> Array1<f64> {
    let q = state.n_groups();
    let mut sum = vec![0.0f64; q];
    let mut count = 0usize;
    for t in 0..state.n_steps() {
        for i in 0..state.n_nodes() {
            if let Some(m) = state.marg(t, i) {
                for (g, &v) in m.iter().enumerate() {
                    sum[g] += v;
                }
                count += 1;
            }
        }
    }
    debug_assert!(sched.n_present() == count);
    if count == 0 {
        return Array1::from_elem(q, 1.0 / q as f64);
    }
    Array1::from_vec(sum.into_iter().map(|v| v / count as f64).collect())
}
