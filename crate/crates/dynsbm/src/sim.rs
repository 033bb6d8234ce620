//! Generative sampler for the dynamic block model, plus the named benchmark
//! scenarios used throughout the test suite.
//!
//! Random streams are split per node for the label chains and per
//! (step, i, j) for the edges, so enlarging the network perturbs existing
//! draws as little as possible and everything is reproducible per seed.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::{LabelSeries, ABSENT};
use crate::markov::stationary_distribution;
use crate::network::DynamicNetwork;
use crate::numeric::mix_seed;
use crate::params::{EmissionFamily, GammaView, ModelParams, PairField};

const LABEL_TAG: u64 = 0x4c41_4245;
const EDGE_TAG: u64 = 0x4544_4745;
const PRESENCE_TAG: u64 = 0x5052_4553;
const EPSILON_TAG: u64 = 0x4550_5331;

/// Which nodes are observed when.
#[derive(Clone, Debug)]
pub enum PresenceSchedule {
    Full,
    /// Each (step, node) slot is independently present with this probability.
    IndependentBernoulli { prob: f64 },
    Explicit(Vec<Vec<bool>>),
}

impl PresenceSchedule {
    fn materialize(&self, n_nodes: usize, n_steps: usize, seed: u64) -> Result<Vec<Vec<bool>>> {
        match self {
            PresenceSchedule::Full => Ok(vec![vec![true; n_nodes]; n_steps]),
            PresenceSchedule::IndependentBernoulli { prob } => {
                if !(0.0..=1.0).contains(prob) {
                    return Err(Error::InvalidParams("presence probability".into()));
                }
                let mut out = vec![vec![false; n_nodes]; n_steps];
                for (t, row) in out.iter_mut().enumerate() {
                    for (i, slot) in row.iter_mut().enumerate() {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                            mix_seed(seed, PRESENCE_TAG),
                            (t * n_nodes + i) as u64,
                        ));
                        *slot = rng.random_range(0.0..1.0) < *prob;
                    }
                }
                Ok(out)
            }
            PresenceSchedule::Explicit(mask) => {
                if mask.len() != n_steps || mask.iter().any(|r| r.len() != n_nodes) {
                    return Err(Error::DimensionMismatch(
                        "explicit presence mask shape".into(),
                    ));
                }
                Ok(mask.clone())
            }
        }
    }
}

fn sample_from(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (g, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return g;
        }
    }
    row.len() - 1
}

/// Latent label chains only: entries draw from the stationary law (also
/// after an absence), interior steps follow the transition matrix.
pub fn simulate_labels(
    params: &ModelParams,
    n_nodes: usize,
    seed: u64,
    presence: &[Vec<bool>],
) -> LabelSeries {
    let t_steps = params.n_steps;
    let q = params.n_groups;
    let mut labels = LabelSeries::filled(t_steps, n_nodes, ABSENT);
    let alpha: Vec<f64> = params.initial.iter().cloned().collect();
    for i in 0..n_nodes {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, LABEL_TAG), i as u64));
        let mut prev: Option<usize> = None;
        for t in 0..t_steps {
            if !presence[t][i] {
                prev = None;
                continue;
            }
            let u = rng.random_range(0.0..1.0);
            let z = match prev {
                None => sample_from(&alpha, u),
                Some(zp) => {
                    let row: Vec<f64> = (0..q).map(|h| params.transition[(zp, h)]).collect();
                    sample_from(&row, u)
                }
            };
            labels.set(t, i, z);
            prev = Some(z);
        }
    }
    labels
}

fn draw_weight(
    family: &EmissionFamily,
    gamma: GammaView<'_>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    match (family, gamma) {
        (EmissionFamily::Bernoulli, _) => 1.0,
        (EmissionFamily::FiniteSpace { bins }, GammaView::Probs(probs)) => {
            let u = rng.random_range(0.0..1.0);
            bins[sample_from(probs, u)].midpoint()
        }
        (EmissionFamily::TruncatedPoisson, GammaView::Rate(rate)) => {
            // Inversion on the zero-truncated mass.
            let u = rng.random_range(0.0..1.0);
            let norm = -(-rate).exp_m1(); // 1 - e^-rate
            let mut y = 1usize;
            let mut term = rate * (-rate).exp() / norm; // P(Y = 1 | Y >= 1)
            let mut acc = term;
            while u >= acc && y < 10_000 {
                y += 1;
                term *= rate / y as f64;
                acc += term;
            }
            y as f64
        }
        (EmissionFamily::GaussianHomoscedastic, GammaView::Gaussian { mean, variance }) => {
            // Box-Muller; resample in the measure-zero event of exactly 0.
            loop {
                let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.random_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                let y = mean + variance.sqrt() * z;
                if y != 0.0 {
                    return y;
                }
            }
        }
        _ => unreachable!("gamma view follows the family"),
    }
}

/// Samples a full dataset: label chains, then, for each present pair, an
/// edge with the pair's sparsity probability and a weight from the family.
pub fn simulate(
    params: &ModelParams,
    n_nodes: usize,
    seed: u64,
    presence: &PresenceSchedule,
) -> Result<(DynamicNetwork, LabelSeries)> {
    params.validate()?;
    let t_steps = params.n_steps;
    let mask = presence.materialize(n_nodes, t_steps, seed)?;
    let labels = simulate_labels(params, n_nodes, seed, &mask);
    let mut weights = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        let mut w = Array2::zeros((n_nodes, n_nodes));
        for i in 0..n_nodes {
            let Some(zi) = labels.get(t, i) else { continue };
            for j in (i + 1)..n_nodes {
                let Some(zj) = labels.get(t, j) else { continue };
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                    mix_seed(seed, EDGE_TAG),
                    ((t * n_nodes + i) * n_nodes + j) as u64,
                ));
                let beta = params.beta(t, zi, zj);
                if rng.random_range(0.0..1.0) < beta {
                    let y = draw_weight(&params.family, params.gamma_view(t, zi, zj), &mut rng);
                    w[(i, j)] = y;
                    w[(j, i)] = y;
                }
            }
        }
        weights.push(w);
    }
    let net = DynamicNetwork::new(weights, mask)?;
    Ok((net, labels))
}

/// Sparsity layout of a named scenario.
#[derive(Clone, Debug, PartialEq)]
pub enum BetaSpec {
    /// Two groups: (within group 1, between, within group 2).
    Triple { b11: f64, b12: f64, b22: f64 },
    /// Four groups with per-dataset uniform perturbations:
    /// within 0.4 + 0.1 eps_qq, between 0.1 + 0.1 eps_ql, eps ~ U[-1, 1].
    Q4Perturbed,
}

/// A named benchmark configuration.
#[derive(Clone, Debug)]
pub struct ScenarioPreset {
    pub name: String,
    pub transition: Array2<f64>,
    pub beta: BetaSpec,
    pub family: EmissionFamily,
    pub n_nodes: usize,
    pub n_steps: usize,
}

/// Transition matrix of a named stability level: `low`, `medium` or `high`
/// (also accepted with a `pi_` prefix).
pub fn pi_preset(name: &str) -> Result<Array2<f64>> {
    let level = name.strip_prefix("pi_").unwrap_or(name);
    let p = match level {
        "low" => 0.6,
        "medium" => 0.75,
        "high" => 0.9,
        _ => return Err(Error::UnknownPreset(name.into())),
    };
    Ok(Array2::from_shape_fn((2, 2), |(g, h)| {
        if g == h {
            p
        } else {
            1.0 - p
        }
    }))
}

/// Two-group sparsity triples (within-1, between, within-2) by difficulty.
pub fn beta_preset(name: &str) -> Result<(f64, f64, f64)> {
    match name {
        "low-" => Ok((0.2, 0.1, 0.15)),
        "low+" => Ok((0.25, 0.1, 0.2)),
        "medium-" => Ok((0.3, 0.1, 0.2)),
        "medium+" => Ok((0.4, 0.1, 0.2)),
        "affiliation" => Ok((0.3, 0.1, 0.3)),
        _ => Err(Error::UnknownPreset(name.into())),
    }
}

/// Looks up a named scenario. Accepts a sparsity name (`low-`, `low+`,
/// `medium-`, `medium+`, `affiliation`; the stability defaults to `high`),
/// a stability name (`pi_low`, `pi_medium`, `pi_high`; sparsity defaults to
/// `medium+`), a combined `<sparsity>/<stability>` form, or `icl_q4`.
pub fn preset_scenario(name: &str) -> Result<ScenarioPreset> {
    if name == "icl_q4" {
        let q = 4;
        let pi = Array2::from_shape_fn((q, q), |(g, h)| if g == h { 0.91 } else { 0.03 });
        return Ok(ScenarioPreset {
            name: name.into(),
            transition: pi,
            beta: BetaSpec::Q4Perturbed,
            family: EmissionFamily::Bernoulli,
            n_nodes: 100,
            n_steps: 5,
        });
    }
    let (beta_name, pi_name) = match name.split_once('/') {
        Some((b, p)) => (b, p),
        None if name.starts_with("pi_") => ("medium+", name),
        None => (name, "pi_high"),
    };
    let (b11, b12, b22) = beta_preset(beta_name)?;
    let transition = pi_preset(pi_name)?;
    Ok(ScenarioPreset {
        name: name.into(),
        transition,
        beta: BetaSpec::Triple { b11, b12, b22 },
        family: EmissionFamily::Bernoulli,
        n_nodes: 100,
        n_steps: 5,
    })
}

impl ScenarioPreset {
    pub fn n_groups(&self) -> usize {
        self.transition.nrows()
    }

    /// Concrete parameters for `n_steps` snapshots. The perturbed scenario
    /// draws its sparsity table from the seed; fixed scenarios ignore it.
    pub fn params(&self, n_steps: usize, seed: u64) -> Result<ModelParams> {
        let q = self.n_groups();
        let initial = stationary_distribution(&self.transition)?;
        let sparsity = match &self.beta {
            BetaSpec::Triple { b11, b12, b22 } => {
                let mut f = PairField::constant(q, n_steps, 0.0f64, *b12);
                f.set_diag_slot(0, *b11);
                f.set_diag_slot(1, *b22);
                f
            }
            BetaSpec::Q4Perturbed => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, EPSILON_TAG));
                let mut f = PairField::constant(q, n_steps, 0.0f64, 0.0);
                for g in 0..q {
                    for h in g..q {
                        let eps: f64 = rng.random_range(-1.0..1.0);
                        if g == h {
                            f.set_diag_slot(g, 0.4 + 0.1 * eps);
                        } else {
                            for t in 0..n_steps {
                                f.set(t, g, h, 0.1 + 0.1 * eps);
                            }
                        }
                    }
                }
                f
            }
        };
        let params = ModelParams {
            n_groups: q,
            n_steps,
            transition: self.transition.clone(),
            initial,
            sparsity,
            family: self.family.clone(),
            emission: crate::params::EmissionParams::Bernoulli,
        };
        params.validate()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::validate_network;

    #[test]
    fn preset_values_match_the_benchmark_tables() {
        let p = preset_scenario("medium+").unwrap();
        let BetaSpec::Triple { b11, b12, b22 } = p.beta else {
            panic!()
        };
        assert_eq!((b11, b12, b22), (0.4, 0.1, 0.2));
        let pi = pi_preset("pi_low").unwrap();
        assert_eq!(pi[(0, 0)], 0.6);
        assert_eq!(pi[(0, 1)], 0.4);
        let p = preset_scenario("affiliation").unwrap();
        let BetaSpec::Triple { b11, b12, b22 } = p.beta else {
            panic!()
        };
        assert_eq!((b11, b12, b22), (0.3, 0.1, 0.3));
        assert!(matches!(
            preset_scenario("nosuch"),
            Err(Error::UnknownPreset(_))
        ));
    }

    #[test]
    fn icl_preset_draws_betas_in_the_stated_ranges() {
        let p = preset_scenario("icl_q4").unwrap();
        let params = p.params(5, 12).unwrap();
        for g in 0..4 {
            let b = params.beta(0, g, g);
            assert!((0.3..=0.5).contains(&b));
            for h in (g + 1)..4 {
                let b = params.beta(2, g, h);
                assert!((0.0..=0.2).contains(&b));
            }
        }
        // Stationary law of the symmetric matrix is uniform.
        for g in 0..4 {
            assert!((params.initial[g] - 0.25).abs() < 1e-12);
        }
        // Same seed, same table.
        let again = p.params(5, 12).unwrap();
        assert_eq!(params, again);
        let other = p.params(5, 13).unwrap();
        assert_ne!(params, other);
    }

    #[test]
    fn absorbing_transition_keeps_labels_constant() {
        let preset = preset_scenario("medium+").unwrap();
        let mut params = preset.params(4, 0).unwrap();
        params.transition = ndarray::arr2(&[
            [1.0 - 1e-12, 1e-12],
            [1e-12, 1.0 - 1e-12],
        ]);
        let mask = PresenceSchedule::Full.materialize(30, 4, 5).unwrap();
        let labels = simulate_labels(&params, 30, 5, &mask);
        for i in 0..30 {
            let z0 = labels.get(0, i).unwrap();
            for t in 1..4 {
                assert_eq!(labels.get(t, i), Some(z0));
            }
        }
    }

    #[test]
    fn medium_plus_edge_density_matches_expectation() {
        // Expected density sum_{ql} alpha_q alpha_l beta_ql
        // = 0.25 * 0.4 + 0.5 * 0.1 + 0.25 * 0.2 = 0.2.
        let preset = preset_scenario("medium+").unwrap();
        let params = preset.params(5, 0).unwrap();
        let n = 100;
        let (net, _) = simulate(&params, n, 11, &PresenceSchedule::Full).unwrap();
        let pairs = (n * (n - 1) / 2 * net.n_steps()) as f64;
        let edges: usize = (0..net.n_steps()).map(|t| net.edge_count(t)).sum();
        let p_hat = edges as f64 / pairs;
        // 3 sigma binomial tolerance around 0.2.
        let sigma = (0.2 * 0.8 / pairs).sqrt();
        assert!(
            (p_hat - 0.2).abs() <= 3.0 * sigma,
            "density {p_hat} vs 0.2 +- {}",
            3.0 * sigma
        );
    }

    #[test]
    fn degenerate_bin_mass_lands_in_that_bin() {
        use crate::params::{Bin, EmissionParams};
        let bins = vec![Bin::new(1.0, 2.0), Bin::new(3.0, 4.0), Bin::new(5.0, 6.0)];
        let family = EmissionFamily::FiniteSpace { bins };
        let probs = PairField::constant(1, 2, vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]);
        let params = ModelParams {
            n_groups: 1,
            n_steps: 2,
            transition: ndarray::arr2(&[[1.0]]),
            initial: ndarray::arr1(&[1.0]),
            sparsity: PairField::constant(1, 2, 0.8f64, 0.8),
            family: family.clone(),
            emission: EmissionParams::FiniteSpace { probs },
        };
        let (net, _) = simulate(&params, 20, 3, &PresenceSchedule::Full).unwrap();
        for t in 0..2 {
            for (_, _, y) in net.edges(t) {
                assert_eq!(family.bin_index(y), Some(0));
            }
        }
        assert!(validate_network(&net, &family).is_clean());
    }

    #[test]
    fn empirical_transitions_converge_to_the_matrix() {
        let preset = preset_scenario("medium+/pi_medium").unwrap();
        let params = preset.params(26, 0).unwrap();
        let n = 4000; // 4000 * 25 = 1e5 transitions
        let mask = PresenceSchedule::Full.materialize(n, 26, 7).unwrap();
        let labels = simulate_labels(&params, n, 7, &mask);
        let mut counts = [[0.0f64; 2]; 2];
        for i in 0..n {
            for t in 1..26 {
                let a = labels.get(t - 1, i).unwrap();
                let b = labels.get(t, i).unwrap();
                counts[a][b] += 1.0;
            }
        }
        for g in 0..2 {
            let total = counts[g][0] + counts[g][1];
            for h in 0..2 {
                let freq = counts[g][h] / total;
                assert!(
                    (freq - params.transition[(g, h)]).abs() <= 0.02,
                    "transition ({g},{h}): {freq}"
                );
            }
        }
    }

    #[test]
    fn simulation_is_deterministic_and_valid() {
        let preset = preset_scenario("low-").unwrap();
        let params = preset.params(3, 0).unwrap();
        let sched = PresenceSchedule::IndependentBernoulli { prob: 0.7 };
        let (net1, lab1) = simulate(&params, 25, 99, &sched).unwrap();
        let (net2, lab2) = simulate(&params, 25, 99, &sched).unwrap();
        assert_eq!(net1, net2);
        assert_eq!(lab1, lab2);
        assert!(validate_network(&net1, &EmissionFamily::Bernoulli).is_clean());
        let (net3, _) = simulate(&params, 25, 100, &sched).unwrap();
        assert_ne!(net1, net3);
    }
}
