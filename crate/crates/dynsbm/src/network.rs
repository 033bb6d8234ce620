//! Temporal network container: T weighted snapshots over a fixed node set,
//! with a per-step presence mask for nodes that enter or leave the study.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::params::EmissionFamily;

/// A dynamic network: `n_steps` symmetric weighted adjacency snapshots over
/// `n_nodes` nodes. Entry `(i, j)` of snapshot `t` is the observed
/// interaction weight; `0` means no edge. The diagonal is structurally zero
/// and never read. Nodes absent at a step carry all-zero rows there.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicNetwork {
    n_nodes: usize,
    n_steps: usize,
    weights: Vec<Array2<f64>>,
    presence: Vec<Vec<bool>>,
}

impl DynamicNetwork {
    /// Builds a network from per-step weight matrices and presence masks.
    /// Shape errors are hard failures; value-level problems (asymmetry,
    /// absent-node weights, ...) are reported by [`validate_network`].
    pub fn new(weights: Vec<Array2<f64>>, presence: Vec<Vec<bool>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::DimensionMismatch("need at least one snapshot".into()));
        }
        let n = weights[0].nrows();
        if n == 0 {
            return Err(Error::DimensionMismatch("need at least one node".into()));
        }
        for (t, w) in weights.iter().enumerate() {
            if w.nrows() != n || w.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "snapshot {} has shape {}x{}, expected {}x{}",
                    t + 1,
                    w.nrows(),
                    w.ncols(),
                    n,
                    n
                )));
            }
        }
        if presence.len() != weights.len() || presence.iter().any(|p| p.len() != n) {
            return Err(Error::DimensionMismatch(
                "presence mask shape does not match the snapshots".into(),
            ));
        }
        Ok(DynamicNetwork {
            n_nodes: n,
            n_steps: weights.len(),
            weights,
            presence,
        })
    }

    /// Same network with every node present at every step.
    pub fn fully_present(weights: Vec<Array2<f64>>) -> Result<Self> {
        let t = weights.len();
        let n = weights.first().map_or(0, |w| w.nrows());
        Self::new(weights, vec![vec![true; n]; t])
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn weight(&self, t: usize, i: usize, j: usize) -> f64 {
        self.weights[t][(i, j)]
    }

    pub fn snapshot(&self, t: usize) -> &Array2<f64> {
        &self.weights[t]
    }

    pub fn present(&self, t: usize, i: usize) -> bool {
        self.presence[t][i]
    }

    pub fn presence_row(&self, t: usize) -> &[bool] {
        &self.presence[t]
    }

    pub fn present_count(&self, t: usize) -> usize {
        self.presence[t].iter().filter(|&&p| p).count()
    }

    /// Nonzero edges of snapshot `t` as `(i, j, w)` with `i < j`.
    pub fn edges(&self, t: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = &self.weights[t];
        (0..self.n_nodes).flat_map(move |i| {
            (i + 1..self.n_nodes)
                .filter_map(move |j| {
                    let y = w[(i, j)];
                    (y != 0.0).then_some((i, j, y))
                })
        })
    }

    pub fn edge_count(&self, t: usize) -> usize {
        self.edges(t).count()
    }

    /// Largest nonzero |weight| over all snapshots, 0.0 for an empty network.
    pub fn max_abs_weight(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .fold(0.0f64, |acc, &y| acc.max(y.abs()))
    }
}

/// A single invariant violation found in a network.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// Y^t_ij != Y^t_ji. Indices are 1-based in the report.
    Asymmetry { t: usize, i: usize, j: usize },
    /// Nonzero diagonal entry (self-loop slot must stay empty).
    SelfLoop { t: usize, i: usize },
    /// Nonzero weight touching a node that is absent at `t`.
    AbsentNonzero { t: usize, i: usize, j: usize },
    /// Weight outside the support of the configured emission family.
    OutOfSupport { t: usize, i: usize, j: usize, value: f64 },
    /// NaN or infinite weight.
    NonFinite { t: usize, i: usize, j: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Asymmetry { t, i, j } => {
                write!(f, "asymmetric pair at (t={t}, i={i}, j={j})")
            }
            Violation::SelfLoop { t, i } => write!(f, "nonzero self-loop at (t={t}, i={i})"),
            Violation::AbsentNonzero { t, i, j } => {
                write!(f, "weight on absent node at (t={t}, i={i}, j={j})")
            }
            Violation::OutOfSupport { t, i, j, value } => {
                write!(f, "weight {value} outside family support at (t={t}, i={i}, j={j})")
            }
            Violation::NonFinite { t, i, j } => {
                write!(f, "non-finite weight at (t={t}, i={i}, j={j})")
            }
        }
    }
}

/// Outcome of [`validate_network`]: empty iff every invariant holds.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks all value-level invariants of a network against an emission
/// family: symmetry, empty diagonal, zero rows for absent nodes, and
/// per-family weight support. Report-style: never fails, lists everything.
pub fn validate_network(net: &DynamicNetwork, family: &EmissionFamily) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = net.n_nodes();
    for t in 0..net.n_steps() {
        let w = net.snapshot(t);
        for i in 0..n {
            if w[(i, i)] != 0.0 {
                report.violations.push(Violation::SelfLoop { t: t + 1, i: i + 1 });
            }
            for j in (i + 1)..n {
                let y = w[(i, j)];
                let yt = w[(j, i)];
                if y != yt {
                    report.violations.push(Violation::Asymmetry {
                        t: t + 1,
                        i: i + 1,
                        j: j + 1,
                    });
                }
                if y == 0.0 {
                    continue;
                }
                if !y.is_finite() {
                    report.violations.push(Violation::NonFinite {
                        t: t + 1,
                        i: i + 1,
                        j: j + 1,
                    });
                    continue;
                }
                if !net.present(t, i) || !net.present(t, j) {
                    report.violations.push(Violation::AbsentNonzero {
                        t: t + 1,
                        i: i + 1,
                        j: j + 1,
                    });
                }
                if !family.supports(y) {
                    report.violations.push(Violation::OutOfSupport {
                        t: t + 1,
                        i: i + 1,
                        j: j + 1,
                        value: y,
                    });
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn binary_net() -> DynamicNetwork {
        let w = arr2(&[
            [0.0, 1.0, 0.0],
            [1.0, 0.0, 1.0],
            [0.0, 1.0, 0.0],
        ]);
        DynamicNetwork::fully_present(vec![w.clone(), w]).unwrap()
    }

    #[test]
    fn clean_binary_network_validates() {
        let net = binary_net();
        assert!(validate_network(&net, &EmissionFamily::Bernoulli).is_clean());
    }

    #[test]
    fn asymmetry_is_reported_once_per_pair() {
        let mut w = arr2(&[
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
        ]);
        w[(2, 0)] = 0.0;
        let net = DynamicNetwork::fully_present(vec![w]).unwrap();
        let report = validate_network(&net, &EmissionFamily::Bernoulli);
        assert_eq!(
            report.violations,
            vec![Violation::Asymmetry { t: 1, i: 1, j: 2 }]
        );
    }

    #[test]
    fn absent_node_with_weight_is_reported() {
        let mut w = Array2::zeros((8, 8));
        w[(4, 6)] = 3.0;
        w[(6, 4)] = 3.0;
        let mut presence = vec![vec![true; 8]; 2];
        presence[1][4] = false;
        let net =
            DynamicNetwork::new(vec![Array2::zeros((8, 8)), w], presence).unwrap();
        let report = validate_network(&net, &EmissionFamily::TruncatedPoisson);
        assert_eq!(
            report.violations,
            vec![Violation::AbsentNonzero { t: 2, i: 5, j: 7 }]
        );
    }

    #[test]
    fn out_of_support_weights_are_flagged() {
        let w = arr2(&[[0.0, 0.5], [0.5, 0.0]]);
        let net = DynamicNetwork::fully_present(vec![w]).unwrap();
        let report = validate_network(&net, &EmissionFamily::Bernoulli);
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            Violation::OutOfSupport { t: 1, i: 1, j: 2, .. }
        ));
        let report = validate_network(&net, &EmissionFamily::TruncatedPoisson);
        assert_eq!(report.violations.len(), 1);
    }

    #[test]
    fn edges_iterates_upper_triangle_only() {
        let net = binary_net();
        let edges: Vec<_> = net.edges(0).collect();
        assert_eq!(edges, vec![(0, 1, 1.0), (1, 2, 1.0)]);
    }
}
