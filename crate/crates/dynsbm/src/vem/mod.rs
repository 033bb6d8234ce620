//! The variational EM loop: alternating fixed-point sweeps on the chain law
//! with closed-form parameter updates, under convergence control on the
//! lower bound, with restarts and MAP decoding.

mod elbo;
mod estep;
mod mstep;

pub use elbo::{complete_log_likelihood, compute_elbo as compute_elbo_with, map_classification, MapMode};
pub use estep::{ve_update_initial_tau, ve_update_transition_tau};
pub use mstep::{mstep_alpha, mstep_pi};

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::emissions::{mstep_beta, mstep_gamma, LogDensityTable};
use crate::error::{Error, Result};
use crate::init::{
    kmeans_labels, per_snapshot_labels, state_from_constant_labels, state_from_step_labels,
    InitConfig,
};
use crate::labels::LabelSeries;
use crate::network::DynamicNetwork;
use crate::numeric::mix_seed;
use crate::params::{EmissionFamily, ModelParams};
use crate::state::{NodeSchedule, VariationalState};

/// Convergence and restart policy for [`fit`].
#[derive(Clone, Debug)]
pub struct FitConfig {
    pub max_outer_iters: usize,
    /// Stop when |J_k - J_{k-1}| / |J_{k-1}| drops below this.
    pub elbo_rel_tol: f64,
    /// Fixed-point sweeps per VE step.
    pub fp_inner_iters: usize,
    /// Early exit for the sweeps when rows stop moving.
    pub fp_tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    pub map_mode: MapMode,
    pub init: InitConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_outer_iters: 200,
            elbo_rel_tol: 1e-4,
            fp_inner_iters: 5,
            fp_tol: 1e-6,
            n_restarts: 5,
            seed: 0,
            map_mode: MapMode::MarginalArgmax,
            init: InitConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 || self.fp_inner_iters == 0 || self.n_restarts == 0 {
            return Err(Error::InvalidParams("iteration counts must be >= 1".into()));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail
        if !(self.elbo_rel_tol > 0.0) || !(self.fp_tol > 0.0) {
            return Err(Error::InvalidParams("tolerances must be positive".into()));
        }
        self.init.validate()
    }
}

/// Outcome of one restart.
#[derive(Clone, Debug)]
pub struct RestartSummary {
    pub restart: usize,
    pub final_elbo: f64,
    pub n_iters: usize,
    pub converged: bool,
    /// Reason the restart stopped early, if the bound ever went down.
    pub halted: Option<String>,
    pub occupied_groups: usize,
}

/// A converged (or halted) fit: parameters, variational state, bound trace,
/// MAP labels and the classification likelihood at those labels.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: ModelParams,
    pub state: VariationalState,
    pub elbo_trace: Vec<f64>,
    pub map_labels: LabelSeries,
    pub complete_ll: f64,
    pub converged: bool,
    /// True when every restart ended with fewer occupied groups than asked.
    pub degenerate: bool,
    pub restarts: Vec<RestartSummary>,
}

impl FitResult {
    pub fn final_elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("non-empty trace")
    }
}

/// Evaluates the lower bound, building the density table from scratch.
pub fn compute_elbo(
    params: &ModelParams,
    state: &VariationalState,
    net: &DynamicNetwork,
) -> Result<f64> {
    let sched = NodeSchedule::from_network(net);
    let dens = LogDensityTable::build(params, net)?;
    Ok(elbo::compute_elbo(params, state, net, &sched, &dens))
}

fn mstep_all(
    state: &VariationalState,
    net: &DynamicNetwork,
    sched: &NodeSchedule,
    prev: &ModelParams,
) -> ModelParams {
    let transition = mstep_pi(state, sched);
    let initial = mstep_alpha(state, sched);
    let sparsity = mstep_beta(state, net, sched, &prev.sparsity);
    let emission = mstep_gamma(&prev.family, state, net, sched, &prev.emission);
    ModelParams {
        n_groups: prev.n_groups,
        n_steps: prev.n_steps,
        transition,
        initial,
        sparsity,
        family: prev.family.clone(),
        emission,
    }
}

struct RestartOutcome {
    params: ModelParams,
    state: VariationalState,
    trace: Vec<f64>,
    summary: RestartSummary,
}

const ASCENT_SLACK: f64 = 1e-9;

#[allow(clippy::too_many_arguments)]
fn run_restart(
    restart: usize,
    mut state: VariationalState,
    n_groups: usize,
    family: &EmissionFamily,
    net: &DynamicNetwork,
    sched: &NodeSchedule,
    adj: &estep::TemporalAdjacency,
    config: &FitConfig,
) -> Result<RestartOutcome> {
    let nonzero: Vec<f64> = (0..net.n_steps())
        .flat_map(|t| net.edges(t).map(|(_, _, y)| y))
        .collect();
    let neutral = ModelParams::neutral(n_groups, net.n_steps(), family, &nonzero);
    let mut params = mstep_all(&state, net, sched, &neutral);
    let mut dens = LogDensityTable::build(&params, net)?;
    let mut j_prev = elbo::compute_elbo(&params, &state, net, sched, &dens);
    let mut trace = vec![j_prev];
    let mut converged = false;
    let mut halted = None;
    let mut n_iters = 0;

    for _ in 0..config.max_outer_iters {
        n_iters += 1;
        // VE step: transition sweeps, then step-1 sweeps.
        let mut candidate = state.clone();
        estep::trans_tau_with_adj(
            &mut candidate,
            &params,
            &dens,
            net,
            adj,
            sched,
            config.fp_inner_iters,
            config.fp_tol,
        );
        estep::initial_tau_with_adj(
            &mut candidate,
            &params,
            &dens,
            net,
            adj,
            sched,
            config.fp_inner_iters,
            config.fp_tol,
        );
        let j_ve = elbo::compute_elbo(&params, &candidate, net, sched, &dens);
        // The negated form also rejects a NaN bound.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(j_ve >= j_prev - ASCENT_SLACK) {
            halted = Some(format!(
                "VE step decreased the bound ({j_prev} -> {j_ve}) at iteration {n_iters}"
            ));
            break;
        }
        state = candidate;

        // M step: closed forms, with retention on empty cells.
        let new_params = mstep_all(&state, net, sched, &params);
        let new_dens = LogDensityTable::build(&new_params, net)?;
        let j_m = elbo::compute_elbo(&new_params, &state, net, sched, &new_dens);
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // reject NaN as well
        if !(j_m >= j_ve - ASCENT_SLACK) {
            // Keep the accepted VE state under the old parameters.
            trace.push(j_ve);
            j_prev = j_ve;
            halted = Some(format!(
                "M step decreased the bound ({j_ve} -> {j_m}) at iteration {n_iters}"
            ));
            break;
        }
        params = new_params;
        dens = new_dens;
        trace.push(j_m);

        let denom = j_prev.abs();
        let rel = if denom > 0.0 {
            (j_m - j_prev).abs() / denom
        } else {
            (j_m - j_prev).abs()
        };
        j_prev = j_m;
        if rel < config.elbo_rel_tol {
            converged = true;
            break;
        }
    }

    let map = map_classification(&state, sched, config.map_mode);
    let occupied = map.occupied_groups();
    Ok(RestartOutcome {
        params,
        state,
        summary: RestartSummary {
            restart,
            final_elbo: j_prev,
            n_iters,
            converged,
            halted,
            occupied_groups: occupied,
        },
        trace,
    })
}

/// Fits a dynamic block model with `n_groups` groups: k-means start,
/// perturbed restarts, VE/M alternation until the relative change of the
/// bound drops below tolerance, best restart by final bound. A restart whose
/// bound ever decreases (beyond 1e-9) is halted at its best iterate.
pub fn fit(
    net: &DynamicNetwork,
    n_groups: usize,
    family: &EmissionFamily,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    family.validate()?;
    if n_groups == 0 {
        return Err(Error::InvalidParams("need at least one group".into()));
    }
    if n_groups > net.n_nodes() {
        return Err(Error::InvalidParams(
            "more groups than nodes is not supported".into(),
        ));
    }
    let sched = NodeSchedule::from_network(net);
    let adj = estep::TemporalAdjacency::build(net);
    let base_labels = kmeans_labels(net, n_groups, family, &config.init, config.seed)?;
    let soft_eps = config.init.soft_eps;

    // Restart 0 starts from the concatenated clustering; middle restarts
    // perturb it; the last one (with at least 2 restarts) reclusters each
    // snapshot independently, which is what rescues fast-churning
    // memberships where the constant-in-time start carries no signal.
    let outcomes: Result<Vec<RestartOutcome>> = (0..config.n_restarts)
        .map(|r| {
            let state = if r == 0 {
                state_from_constant_labels(&base_labels, n_groups, soft_eps, &sched)
            } else if r + 1 == config.n_restarts {
                let step_labels =
                    per_snapshot_labels(net, n_groups, family, &config.init, config.seed)?;
                state_from_step_labels(&step_labels, n_groups, soft_eps, &sched)
            } else {
                let labels = perturb_labels(
                    &base_labels,
                    n_groups,
                    mix_seed(config.seed, 0x7e57 + r as u64),
                );
                state_from_constant_labels(&labels, n_groups, soft_eps, &sched)
            };
            run_restart(r, state, n_groups, family, net, &sched, &adj, config)
        })
        .collect();
    let outcomes = outcomes?;

    let best_idx = outcomes
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| {
            a.summary
                .final_elbo
                .partial_cmp(&b.summary.final_elbo)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|(k, _)| k)
        .unwrap();
    let degenerate = outcomes
        .iter()
        .all(|o| o.summary.occupied_groups < n_groups);
    let converged = outcomes[best_idx].summary.converged;
    let restarts: Vec<RestartSummary> = outcomes.iter().map(|o| o.summary.clone()).collect();
    let best = outcomes.into_iter().nth(best_idx).unwrap();

    let map_labels = map_classification(&best.state, &sched, config.map_mode);
    let complete_ll = complete_log_likelihood(&best.params, &map_labels, net)?;
    Ok(FitResult {
        params: best.params,
        state: best.state,
        elbo_trace: best.trace,
        map_labels,
        complete_ll,
        converged,
        degenerate,
        restarts,
    })
}

/// Resamples 20% of the node labels uniformly; used by restarts 1..n-1.
fn perturb_labels(labels: &[usize], n_groups: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = labels.to_vec();
    let k = (labels.len() / 5).max(1);
    let picked = sample(&mut rng, labels.len(), k);
    for idx in picked.iter() {
        out[idx] = rng.random_range(0..n_groups);
    }
    out
}
