#![cfg(feature = "oracle")]

//! Properties tying the enumeration oracle to the variational machinery.

use dynsbm::oracle::{exact_log_likelihood, OracleBudget};
use dynsbm::sim::{preset_scenario, simulate, PresenceSchedule};
use dynsbm::vem::compute_elbo;
use dynsbm::{NodeSchedule, VariationalState};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_state(
    n: usize,
    t_steps: usize,
    q: usize,
    sched: &NodeSchedule,
    rng: &mut ChaCha8Rng,
) -> VariationalState {
    let mut state = VariationalState::uniform(n, t_steps, q, sched);
    let fill = |row: &mut [f64], rng: &mut ChaCha8Rng| {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = rng.random_range(0.01..1.0);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    };
    for i in 0..n {
        fill(state.initial_row_mut(i), rng);
    }
    for t in 1..t_steps {
        for i in 0..n {
            for g in 0..q {
                let table = state.trans_table_mut(t, i);
                fill(&mut table[g * q..(g + 1) * q], rng);
            }
        }
    }
    state.recompute_marginals(sched);
    state
}

#[test]
fn exact_likelihood_dominates_every_variational_bound() {
    // For a fixed (params, net), the enumeration value upper-bounds the
    // bound at 1000 random variational states.
    let preset = preset_scenario("medium-").unwrap();
    let params = preset.params(2, 0).unwrap();
    let (net, _) = simulate(&params, 4, 5, &PresenceSchedule::Full).unwrap();
    let exact = exact_log_likelihood(&params, &net, OracleBudget::default()).unwrap();
    let sched = NodeSchedule::from_network(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let state = random_state(4, 2, 2, &sched, &mut rng);
        let j = compute_elbo(&params, &state, &net).unwrap();
        assert!(j <= exact + 1e-9, "J = {j} > exact = {exact}");
        best = best.max(j);
    }
    // The bound is attainable up to latent uncertainty: the best random
    // state should land within a few nats on an instance this small.
    assert!(exact - best < 10.0, "best J {best} too far below exact {exact}");
}

#[test]
fn absence_reduces_the_enumeration_space_consistently() {
    // A node absent everywhere changes nothing beyond dropping its slots.
    let preset = preset_scenario("medium-").unwrap();
    let params = preset.params(2, 0).unwrap();
    let (net, _) = simulate(&params, 4, 11, &PresenceSchedule::Full).unwrap();
    let exact_full = exact_log_likelihood(&params, &net, OracleBudget::default()).unwrap();

    // Rebuild with a 5th node that is never present.
    let mut weights = Vec::new();
    let mut presence = Vec::new();
    for t in 0..2 {
        let mut w = ndarray::Array2::zeros((5, 5));
        for (i, j, y) in net.edges(t) {
            w[(i, j)] = y;
            w[(j, i)] = y;
        }
        weights.push(w);
        presence.push(vec![true, true, true, true, false]);
    }
    let padded = dynsbm::DynamicNetwork::new(weights, presence).unwrap();
    let exact_padded =
        exact_log_likelihood(&params, &padded, OracleBudget::default()).unwrap();
    assert!((exact_full - exact_padded).abs() < 1e-10);
}
