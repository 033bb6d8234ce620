//! Choosing the number of groups: a penalized classification-likelihood
//! score where it is defined, an elbow scan on the classification
//! likelihood for the finite-space family.

use rayon::prelude::*;

use crate::emissions::{icl_penalty, BetaStructure};
use crate::error::{Error, Result};
use crate::network::DynamicNetwork;
use crate::params::EmissionFamily;
use crate::vem::{fit, FitConfig, FitResult};

/// Score and diagnostics for one candidate group count.
#[derive(Clone, Debug)]
pub struct QRecord {
    pub n_groups: usize,
    pub complete_ll: f64,
    pub icl: Option<f64>,
    pub final_elbo: f64,
    pub converged: bool,
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMethod {
    Icl,
    Elbow,
}

/// Outcome of a scan over candidate group counts.
#[derive(Clone, Debug)]
pub struct SelectionResult {
    pub records: Vec<QRecord>,
    pub chosen_q: usize,
    pub method: SelectionMethod,
    /// (Q, classification log-likelihood) pairs, the primary elbow output.
    pub elbow: Vec<(usize, f64)>,
    /// Slope-change suggestion; `None` when the scan shows no elbow or has
    /// fewer than three points.
    pub elbow_suggestion: Option<usize>,
}

/// Penalized classification likelihood of a completed fit: the likelihood
/// at the MAP labels minus the transition penalty and the per-family
/// connectivity penalty.
pub fn icl_score(
    fit: &FitResult,
    family: &EmissionFamily,
    n_nodes: usize,
    n_steps: usize,
    n_groups: usize,
) -> Result<f64> {
    let pen = icl_penalty(family, n_nodes, n_steps, n_groups, BetaStructure::TimeVarying)?;
    let q = n_groups as f64;
    let trans_pen = if n_groups > 1 && n_steps > 1 {
        0.5 * q * (q - 1.0) * ((n_nodes as f64) * (n_steps as f64 - 1.0)).ln()
    } else {
        // No transition parameters in play with one group or one snapshot.
        0.0
    };
    Ok(fit.complete_ll - trans_pen - pen)
}

/// Suggestion from the discrete second difference of a (Q, value) curve:
/// the interior point with the largest drop in slope. `None` when the curve
/// has no usable bend.
pub fn elbow_curve(points: &[(usize, f64)]) -> Result<Option<usize>> {
    if points.len() < 3 {
        return Err(Error::DimensionMismatch(
            "elbow needs at least 3 scanned group counts".into(),
        ));
    }
    let mut best: Option<(usize, f64)> = None;
    for k in 1..points.len() - 1 {
        let neg_second_diff = -(points[k + 1].1 - 2.0 * points[k].1 + points[k - 1].1);
        if best.is_none_or(|(_, d)| neg_second_diff > d) {
            best = Some((points[k].0, neg_second_diff));
        }
    }
    let scale = points
        .iter()
        .map(|&(_, v)| v.abs())
        .fold(1.0f64, f64::max);
    Ok(best.and_then(|(q, drop)| (drop > 1e-9 * scale).then_some(q)))
}

/// Fits every candidate group count with shared seeds and picks the best
/// score (ties to the smaller count). The finite-space family has no
/// defined score; the elbow suggestion on the classification likelihood is
/// used instead, falling back to the smallest scanned count when the curve
/// shows no elbow.
pub fn select_q(
    net: &DynamicNetwork,
    q_values: &[usize],
    family: &EmissionFamily,
    config: &FitConfig,
) -> Result<SelectionResult> {
    if q_values.is_empty() {
        return Err(Error::InvalidParams("empty group-count range".into()));
    }
    let fits: Result<Vec<(usize, FitResult)>> = q_values
        .par_iter()
        .map(|&q| fit(net, q, family, config).map(|f| (q, f)))
        .collect();
    let fits = fits?;
    let is_finite_space = matches!(family, EmissionFamily::FiniteSpace { .. });
    let mut records = Vec::with_capacity(fits.len());
    for (q, f) in &fits {
        let icl = if is_finite_space {
            None
        } else {
            Some(icl_score(f, family, net.n_nodes(), net.n_steps(), *q)?)
        };
        records.push(QRecord {
            n_groups: *q,
            complete_ll: f.complete_ll,
            icl,
            final_elbo: f.final_elbo(),
            converged: f.converged,
            degenerate: f.degenerate,
        });
    }
    let elbow: Vec<(usize, f64)> = records
        .iter()
        .map(|r| (r.n_groups, r.complete_ll))
        .collect();
    let elbow_suggestion = if elbow.len() >= 3 {
        elbow_curve(&elbow)?
    } else {
        None
    };
    let (method, chosen_q) = if is_finite_space {
        (
            SelectionMethod::Elbow,
            elbow_suggestion.unwrap_or_else(|| records.iter().map(|r| r.n_groups).min().unwrap()),
        )
    } else {
        let mut best = &records[0];
        for r in &records[1..] {
            if r.icl.unwrap() > best.icl.unwrap() {
                best = r;
            }
        }
        (SelectionMethod::Icl, best.n_groups)
    };
    Ok(SelectionResult {
        records,
        chosen_q,
        method,
        elbow,
        elbow_suggestion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elbow_picks_the_slope_change() {
        let curve = [(1usize, 10.0), (2, 20.0), (3, 22.0), (4, 23.0)];
        assert_eq!(elbow_curve(&curve).unwrap(), Some(2));
    }

    #[test]
    fn linear_curve_has_no_elbow() {
        let curve = [(1usize, 10.0), (2, 20.0), (3, 30.0), (4, 40.0)];
        assert_eq!(elbow_curve(&curve).unwrap(), None);
        assert!(elbow_curve(&curve[..2]).is_err());
    }

    #[test]
    fn icl_penalties_increase_with_group_count() {
        use crate::emissions::{icl_penalty, BetaStructure};
        for family in [
            EmissionFamily::Bernoulli,
            EmissionFamily::TruncatedPoisson,
            EmissionFamily::GaussianHomoscedastic,
        ] {
            let mut prev = f64::NEG_INFINITY;
            for q in 1..=10 {
                let pen =
                    icl_penalty(&family, 100, 5, q, BetaStructure::TimeVarying).unwrap();
                let q_f = q as f64;
                let trans = 0.5 * q_f * (q_f - 1.0) * (100.0f64 * 4.0).ln();
                let total = pen + trans;
                assert!(total > prev, "{family:?} at q={q}");
                prev = total;
            }
        }
    }
}
