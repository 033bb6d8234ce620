//! Zero-inflated emission densities and their estimation.
//!
//! Every edge weight follows the mixture
//! `phi(y; beta, gamma) = (1 - beta) 1{y = 0} + beta f(y, gamma) 1{y != 0}`,
//! where `f` is the family-specific law of nonzero weights. This module
//! evaluates `log phi`, solves the per-family maximization step in closed
//! form (weighted by the variational marginals), and provides the parameter
//! penalties used by the classification-likelihood model selection score.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::DynamicNetwork;
use crate::numeric::LnFactorial;
use crate::params::{EmissionFamily, EmissionParams, GammaView, ModelParams, PairField};
use crate::state::{NodeSchedule, VariationalState};

/// Minimum weighted mass before a cell estimate is trusted; below this the
/// previous parameter value is retained.
pub const EPS_MASS: f64 = 1e-10;

/// Lower bound on the fitted Gaussian variance.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// log phi(y; beta, gamma) for a single observation. `-inf` is a legitimate
/// output (e.g. y = 0 with beta = 1).
pub fn log_density(family: &EmissionFamily, beta: f64, gamma: GammaView<'_>, y: f64) -> Result<f64> {
    if y == 0.0 {
        return Ok((1.0 - beta).ln());
    }
    let log_f = match (family, gamma) {
        (EmissionFamily::Bernoulli, _) => {
            if y == 1.0 {
                0.0
            } else {
                return Err(Error::UnsupportedValue {
                    family: "bernoulli",
                    value: y,
                });
            }
        }
        (EmissionFamily::FiniteSpace { .. }, GammaView::Probs(probs)) => {
            match family.bin_index(y) {
                Some(m) => probs[m].ln(),
                None => {
                    return Err(Error::UnsupportedValue {
                        family: "finite-space",
                        value: y,
                    })
                }
            }
        }
        (EmissionFamily::TruncatedPoisson, GammaView::Rate(rate)) => {
            if !(y > 0.0 && y.fract() == 0.0 && y.is_finite()) {
                return Err(Error::UnsupportedValue {
                    family: "truncated-poisson",
                    value: y,
                });
            }
            let mut ln_fact = 0.0;
            let mut k = 2.0;
            while k <= y {
                ln_fact += k.ln();
                k += 1.0;
            }
            y * rate.ln() - ln_exp_m1(rate) - ln_fact
        }
        (EmissionFamily::GaussianHomoscedastic, GammaView::Gaussian { mean, variance }) => {
            if !y.is_finite() {
                return Err(Error::UnsupportedValue {
                    family: "gaussian",
                    value: y,
                });
            }
            gaussian_log_pdf(y, mean, variance)
        }
        _ => {
            return Err(Error::InvalidParams(
                "gamma view does not match the emission family".into(),
            ))
        }
    };
    Ok(beta.ln() + log_f)
}

/// ln(e^x - 1), stable for both tiny and large x > 0.
fn ln_exp_m1(x: f64) -> f64 {
    x + (-(-x).exp()).ln_1p()
}

fn gaussian_log_pdf(y: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - (y - mean).powi(2) / (2.0 * variance)
}

/// psi(x) = x e^x / (e^x - 1), strictly increasing from 1 to infinity on
/// x > 0. Its inverse maps the weighted mean of nonzero counts back to the
/// truncated-Poisson rate.
pub fn psi(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    // Rewritten as x / (1 - e^-x): no overflow for large x, and exp_m1
    // keeps the denominator accurate near 0.
    x / -(-x).exp_m1()
}

/// Derivative of psi, used by the Newton polish.
fn psi_prime(x: f64) -> f64 {
    let em = (-x).exp();
    let denom = -(-x).exp_m1();
    (denom - x * em) / (denom * denom)
}

/// Inverse of [`psi`] on (1, inf), solved by bisection on
/// [1e-12, max(50, 2y)] followed by two Newton steps.
pub fn psi_inverse(y: f64) -> Result<f64> {
    // Negated form so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(y > 1.0) {
        return Err(Error::DomainError(format!(
            "psi_inverse needs y > 1, got {y}"
        )));
    }
    let mut lo = 1e-12;
    let mut hi = 50.0f64.max(2.0 * y);
    if psi(lo) >= y {
        // Root below the bracket: psi(x) = 1 + x/2 + O(x^2) near 0.
        return Ok(2.0 * (y - 1.0));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = psi(mid);
        if (v - y).abs() <= 1e-12 {
            lo = mid;
            hi = mid;
            break;
        }
        if v < y {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..2 {
        let step = (psi(x) - y) / psi_prime(x);
        let candidate = x - step;
        if candidate > 0.0 {
            x = candidate;
        }
    }
    Ok(x)
}

/// Log densities of the current parameters, precomputed for reuse across
/// fixed-point sweeps: the zero-weight value per (t, q, l) cell plus one
/// Q x Q table per observed nonzero edge.
#[derive(Clone, Debug)]
pub struct LogDensityTable {
    n_groups: usize,
    lp_zero: Vec<Vec<f64>>,
    edge_lp: Vec<Vec<f64>>,
}

impl LogDensityTable {
    pub fn build(params: &ModelParams, net: &DynamicNetwork) -> Result<Self> {
        let q = params.n_groups;
        let max_w = net.max_abs_weight();
        let ln_fact = if matches!(params.family, EmissionFamily::TruncatedPoisson) {
            LnFactorial::up_to(max_w as usize)
        } else {
            LnFactorial::up_to(0)
        };
        let mut lp_zero = Vec::with_capacity(net.n_steps());
        let mut edge_lp = Vec::with_capacity(net.n_steps());
        for t in 0..net.n_steps() {
            let mut zeros = vec![0.0; q * q];
            for g in 0..q {
                for h in 0..q {
                    zeros[g * q + h] = (1.0 - params.beta(t, g, h)).ln();
                }
            }
            let mut per_edge = Vec::with_capacity(net.edge_count(t) * q * q);
            for (_, _, y) in net.edges(t) {
                for g in 0..q {
                    for h in 0..q {
                        let beta = params.beta(t, g, h);
                        let lp = match params.gamma_view(t, g, h) {
                            GammaView::None => {
                                if y != 1.0 {
                                    return Err(Error::UnsupportedValue {
                                        family: "bernoulli",
                                        value: y,
                                    });
                                }
                                beta.ln()
                            }
                            GammaView::Probs(probs) => {
                                let m = params.family.bin_index(y).ok_or(
                                    Error::UnsupportedValue {
                                        family: "finite-space",
                                        value: y,
                                    },
                                )?;
                                beta.ln() + probs[m].ln()
                            }
                            GammaView::Rate(rate) => {
                                if !(y > 0.0 && y.fract() == 0.0) {
                                    return Err(Error::UnsupportedValue {
                                        family: "truncated-poisson",
                                        value: y,
                                    });
                                }
                                beta.ln() + y * rate.ln()
                                    - ln_exp_m1(rate)
                                    - ln_fact.get(y as usize)
                            }
                            GammaView::Gaussian { mean, variance } => {
                                beta.ln() + gaussian_log_pdf(y, mean, variance)
                            }
                        };
                        per_edge.push(lp);
                    }
                }
            }
            lp_zero.push(zeros);
            edge_lp.push(per_edge);
        }
        Ok(LogDensityTable {
            n_groups: q,
            lp_zero,
            edge_lp,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn lp_zero(&self, t: usize, g: usize, h: usize) -> f64 {
        self.lp_zero[t][g * self.n_groups + h]
    }

    pub fn lp_zero_cells(&self, t: usize) -> &[f64] {
        &self.lp_zero[t]
    }

    /// Q x Q table of log phi(y) for the k-th nonzero edge of step t, in
    /// [`DynamicNetwork::edges`] order.
    pub fn edge_cells(&self, t: usize, edge_idx: usize) -> &[f64] {
        let s = self.n_groups * self.n_groups;
        &self.edge_lp[t][edge_idx * s..(edge_idx + 1) * s]
    }

}

/// Weighted per-cell masses over ordered present pairs (i != j), split by
/// zero/nonzero observation. One instance per time step.
#[derive(Clone, Debug)]
pub struct CellMasses {
    pub q: usize,
    /// Sum of marg(i, g) marg(j, h) over ordered present pairs.
    pub total: Vec<f64>,
    /// Same restricted to pairs with a nonzero weight.
    pub nonzero: Vec<f64>,
    /// Sum of marg(i, g) marg(j, h) * y over nonzero pairs.
    pub weighted: Vec<f64>,
}

pub(crate) fn cell_masses(
    state: &VariationalState,
    net: &DynamicNetwork,
    t: usize,
) -> CellMasses {
    let q = state.n_groups();
    let n = net.n_nodes();
    let mut s = vec![0.0; q];
    let mut d = vec![0.0; q * q];
    for i in 0..n {
        let Some(m) = state.marg(t, i) else { continue };
        for (g, &a) in m.iter().enumerate() {
            s[g] += a;
            for (h, &b) in m.iter().enumerate() {
                d[g * q + h] += a * b;
            }
        }
    }
    let mut total = vec![0.0; q * q];
    for g in 0..q {
        for h in 0..q {
            total[g * q + h] = (s[g] * s[h] - d[g * q + h]).max(0.0);
        }
    }
    let mut nonzero = vec![0.0; q * q];
    let mut weighted = vec![0.0; q * q];
    for (i, j, y) in net.edges(t) {
        let (mi, mj) = (state.marg(t, i), state.marg(t, j));
        let (Some(mi), Some(mj)) = (mi, mj) else { continue };
        for (g, &a) in mi.iter().enumerate() {
            for (h, &b) in mj.iter().enumerate() {
                let w = a * b;
                nonzero[g * q + h] += w;
                weighted[g * q + h] += w * y;
                nonzero[h * q + g] += w;
                weighted[h * q + g] += w * y;
            }
        }
    }
    CellMasses {
        q,
        total,
        nonzero,
        weighted,
    }
}

/// Closed-form update of the sparsity table: per-step ratios off the
/// diagonal, a single pooled ratio per within-group slot. Cells with less
/// than [`EPS_MASS`] denominator keep their previous value.
pub fn mstep_beta(
    state: &VariationalState,
    net: &DynamicNetwork,
    _sched: &NodeSchedule,
    prev: &PairField<f64>,
) -> PairField<f64> {
    let q = state.n_groups();
    let t_steps = net.n_steps();
    // Parallel per step (disjoint outputs), combined in step order.
    let masses: Vec<CellMasses> = (0..t_steps)
        .into_par_iter()
        .map(|t| cell_masses(state, net, t))
        .collect();
    let mut out = prev.clone();
    for g in 0..q {
        let num: f64 = masses.iter().map(|m| m.nonzero[g * q + g]).sum();
        let den: f64 = masses.iter().map(|m| m.total[g * q + g]).sum();
        if den >= EPS_MASS {
            out.set_diag_slot(g, (num / den).clamp(0.0, 1.0));
        }
        for h in (g + 1)..q {
            for (t, m) in masses.iter().enumerate() {
                let num = m.nonzero[g * q + h];
                let den = m.total[g * q + h];
                if den >= EPS_MASS {
                    out.set(t, g, h, (num / den).clamp(0.0, 1.0));
                }
            }
        }
    }
    out
}

/// Closed-form update of the family parameters, pooled over time on the
/// diagonal: bin frequencies (finite space), psi-inverse of the weighted
/// nonzero mean (truncated Poisson), weighted means plus per-step pooled
/// variance (Gaussian). Degenerate cells retain their previous value.
pub fn mstep_gamma(
    family: &EmissionFamily,
    state: &VariationalState,
    net: &DynamicNetwork,
    _sched: &NodeSchedule,
    prev: &EmissionParams,
) -> EmissionParams {
    let q = state.n_groups();
    let t_steps = net.n_steps();
    match (family, prev) {
        (EmissionFamily::Bernoulli, EmissionParams::Bernoulli) => EmissionParams::Bernoulli,
        (EmissionFamily::FiniteSpace { bins }, EmissionParams::FiniteSpace { probs }) => {
            let n_bins = bins.len();
            // bin_mass[t][m][g*q+h] over ordered pairs.
            let mut bin_mass = vec![vec![vec![0.0; q * q]; n_bins]; t_steps];
            for (t, mass_t) in bin_mass.iter_mut().enumerate() {
                for (i, j, y) in net.edges(t) {
                    let (Some(mi), Some(mj)) = (state.marg(t, i), state.marg(t, j)) else {
                        continue;
                    };
                    let Some(m) = family.bin_index(y) else { continue };
                    for (g, &a) in mi.iter().enumerate() {
                        for (h, &b) in mj.iter().enumerate() {
                            mass_t[m][g * q + h] += a * b;
                            mass_t[m][h * q + g] += a * b;
                        }
                    }
                }
            }
            let mut out = probs.clone();
            for g in 0..q {
                let totals: Vec<f64> = (0..n_bins)
                    .map(|m| (0..t_steps).map(|t| bin_mass[t][m][g * q + g]).sum())
                    .collect();
                let total: f64 = totals.iter().sum();
                if total >= EPS_MASS {
                    out.set_diag_slot(g, totals.iter().map(|v| v / total).collect());
                }
                for h in (g + 1)..q {
                    for t in 0..t_steps {
                        let totals: Vec<f64> =
                            (0..n_bins).map(|m| bin_mass[t][m][g * q + h]).collect();
                        let total: f64 = totals.iter().sum();
                        if total >= EPS_MASS {
                            out.set(t, g, h, totals.iter().map(|v| v / total).collect());
                        }
                    }
                }
            }
            EmissionParams::FiniteSpace { probs: out }
        }
        (EmissionFamily::TruncatedPoisson, EmissionParams::TruncatedPoisson { rates }) => {
            let masses: Vec<CellMasses> = (0..t_steps)
                .into_par_iter()
                .map(|t| cell_masses(state, net, t))
                .collect();
            let mut out = rates.clone();
            let solve = |wsum: f64, mass: f64, fallback: f64| -> f64 {
                if mass < EPS_MASS {
                    return fallback;
                }
                let mean = wsum / mass;
                // All-ones cells push the rate to 0; keep the previous value.
                if mean <= 1.0 + 1e-12 {
                    return fallback;
                }
                psi_inverse(mean).unwrap_or(fallback)
            };
            for g in 0..q {
                let wsum: f64 = masses.iter().map(|m| m.weighted[g * q + g]).sum();
                let mass: f64 = masses.iter().map(|m| m.nonzero[g * q + g]).sum();
                out.set_diag_slot(g, solve(wsum, mass, *rates.get(0, g, g)));
                for h in (g + 1)..q {
                    for (t, m) in masses.iter().enumerate() {
                        let v = solve(
                            m.weighted[g * q + h],
                            m.nonzero[g * q + h],
                            *rates.get(t, g, h),
                        );
                        out.set(t, g, h, v);
                    }
                }
            }
            EmissionParams::TruncatedPoisson { rates: out }
        }
        (EmissionFamily::GaussianHomoscedastic, EmissionParams::Gaussian { means, variances }) => {
            let masses: Vec<CellMasses> = (0..t_steps)
                .into_par_iter()
                .map(|t| cell_masses(state, net, t))
                .collect();
            let mut new_means = means.clone();
            for g in 0..q {
                let wsum: f64 = masses.iter().map(|m| m.weighted[g * q + g]).sum();
                let mass: f64 = masses.iter().map(|m| m.nonzero[g * q + g]).sum();
                if mass >= EPS_MASS {
                    new_means.set_diag_slot(g, wsum / mass);
                }
                for h in (g + 1)..q {
                    for (t, m) in masses.iter().enumerate() {
                        if m.nonzero[g * q + h] >= EPS_MASS {
                            new_means.set(t, g, h, m.weighted[g * q + h] / m.nonzero[g * q + h]);
                        }
                    }
                }
            }
            // Pooled residual variance per step, at the updated means.
            let mut new_vars = variances.clone();
            for t in 0..t_steps {
                let mut num = 0.0;
                let mut den = 0.0;
                for (i, j, y) in net.edges(t) {
                    let (Some(mi), Some(mj)) = (state.marg(t, i), state.marg(t, j)) else {
                        continue;
                    };
                    for (g, &a) in mi.iter().enumerate() {
                        for (h, &b) in mj.iter().enumerate() {
                            let w = 2.0 * a * b;
                            let r = y - *new_means.get(t, g, h);
                            num += w * r * r;
                            den += w;
                        }
                    }
                }
                if den >= EPS_MASS {
                    new_vars[t] = (num / den).max(VARIANCE_FLOOR);
                }
            }
            EmissionParams::Gaussian {
                means: new_means,
                variances: new_vars,
            }
        }
        _ => prev.clone(),
    }
}

/// How the sparsity table is parameterized, for penalty counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BetaStructure {
    /// Pooled diagonal plus per-step off-diagonal entries (the default).
    TimeVarying,
    /// A single within value and a single between value, constant in time.
    Constant,
}

/// Connectivity-parameter penalty of the model selection score. The shared
/// transition penalty `Q(Q-1)/2 * log[N(T-1)]` is added by the caller.
///
/// Not defined for the finite-space family (too many free parameters for a
/// BIC-style count); use the elbow on the classification likelihood there.
pub fn icl_penalty(
    family: &EmissionFamily,
    n_nodes: usize,
    n_steps: usize,
    n_groups: usize,
    beta_structure: BetaStructure,
) -> Result<f64> {
    let n = n_nodes as f64;
    let t = n_steps as f64;
    let q = n_groups as f64;
    let pooled_scale = (n * (n - 1.0) * t / 2.0).ln();
    let per_step_scale = (n * (n - 1.0) / 2.0).ln();
    let off_count = q * (q - 1.0) / 2.0 * t;
    match family {
        EmissionFamily::Bernoulli => {
            Ok(0.5 * q * pooled_scale + 0.5 * off_count * per_step_scale)
        }
        EmissionFamily::TruncatedPoisson => match beta_structure {
            BetaStructure::TimeVarying => {
                Ok(0.5 * (q + q) * pooled_scale + 0.5 * (off_count + off_count) * per_step_scale)
            }
            BetaStructure::Constant => {
                Ok(0.5 * (2.0 + q) * pooled_scale + 0.5 * off_count * per_step_scale)
            }
        },
        EmissionFamily::GaussianHomoscedastic => {
            Ok(q * pooled_scale + off_count * per_step_scale)
        }
        EmissionFamily::FiniteSpace { .. } => Err(Error::UnsupportedFamily("finite-space")),
    }
}
