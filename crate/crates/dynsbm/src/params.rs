//! Model parameters: the latent-chain transition matrix and its stationary
//! law, the per-pair sparsity table, and the emission family with its
//! connectivity parameters.
//!
//! Within-group entries (the table diagonals) are stored in a single slot
//! shared by all time steps, so the stable-within-group constraint holds by
//! construction and cannot drift apart during estimation.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub const SIMPLEX_TOL: f64 = 1e-10;

/// One weight bin for the finite-space family: the closed interval
/// `[lo, hi]`. A degenerate bin (`lo == hi`) is a point value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
}

impl Bin {
    pub fn new(lo: f64, hi: f64) -> Self {
        Bin { lo, hi }
    }

    pub fn point(a: f64) -> Self {
        Bin { lo: a, hi: a }
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// The parametric family of nonzero edge weights. Each nonzero observation
/// is drawn from this family with probability `beta`, while `0` carries the
/// remaining mass.
#[derive(Clone, Debug, PartialEq)]
pub enum EmissionFamily {
    /// Point mass at 1: edges are plain Bernoulli indicators.
    Bernoulli,
    /// Categorical distribution over `M >= 2` disjoint bins excluding 0.
    FiniteSpace { bins: Vec<Bin> },
    /// Poisson restricted to {1, 2, ...} with rate `gamma > 0`.
    TruncatedPoisson,
    /// Gaussian with per-pair mean and a per-step variance shared by all
    /// group pairs.
    GaussianHomoscedastic,
}

impl EmissionFamily {
    pub fn name(&self) -> &'static str {
        match self {
            EmissionFamily::Bernoulli => "bernoulli",
            EmissionFamily::FiniteSpace { .. } => "finite-space",
            EmissionFamily::TruncatedPoisson => "truncated-poisson",
            EmissionFamily::GaussianHomoscedastic => "gaussian",
        }
    }

    /// True for every family whose nonzero-edge law carries free parameters.
    pub fn is_weighted(&self) -> bool {
        !matches!(self, EmissionFamily::Bernoulli)
    }

    pub fn n_bins(&self) -> usize {
        match self {
            EmissionFamily::FiniteSpace { bins } => bins.len(),
            _ => 0,
        }
    }

    /// Index of the bin containing `y`, if any.
    pub fn bin_index(&self, y: f64) -> Option<usize> {
        match self {
            EmissionFamily::FiniteSpace { bins } => bins.iter().position(|b| b.contains(y)),
            _ => None,
        }
    }

    /// Whether a nonzero weight lies in the support of the family.
    pub fn supports(&self, y: f64) -> bool {
        if y == 0.0 {
            return true;
        }
        match self {
            EmissionFamily::Bernoulli => y == 1.0,
            EmissionFamily::FiniteSpace { .. } => self.bin_index(y).is_some(),
            EmissionFamily::TruncatedPoisson => y.is_finite() && y > 0.0 && y.fract() == 0.0,
            EmissionFamily::GaussianHomoscedastic => y.is_finite(),
        }
    }

    /// Structural checks on the family itself (bin layout).
    pub fn validate(&self) -> Result<()> {
        if let EmissionFamily::FiniteSpace { bins } = self {
            if bins.len() < 2 {
                return Err(Error::InvalidParams("finite-space needs at least 2 bins".into()));
            }
            for (m, b) in bins.iter().enumerate() {
                if !(b.lo.is_finite() && b.hi.is_finite()) || b.lo > b.hi {
                    return Err(Error::InvalidParams(format!("bin {} is malformed", m + 1)));
                }
                if b.contains(0.0) {
                    return Err(Error::InvalidParams(format!("bin {} contains 0", m + 1)));
                }
                for other in &bins[m + 1..] {
                    if b.lo <= other.hi && other.lo <= b.hi {
                        return Err(Error::InvalidParams("bins overlap".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Builds `m` bins at the empirical quantiles of the nonzero weights.
    /// This is the default discretizer for fitting real-valued data with the
    /// finite-space family (terciles for `m = 3`).
    pub fn quantile_bins(nonzero_weights: &[f64], m: usize) -> Result<Vec<Bin>> {
        if m < 2 {
            return Err(Error::InvalidParams("need at least 2 bins".into()));
        }
        if nonzero_weights.is_empty() {
            return Err(Error::InvalidParams(
                "cannot build bins from a network without edges".into(),
            ));
        }
        let mut sorted: Vec<f64> = nonzero_weights.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo = sorted[0];
        let hi = sorted[sorted.len() - 1];
        if lo <= 0.0 && hi >= 0.0 {
            return Err(Error::InvalidParams(
                "finite-space bins must exclude 0; weights span both signs".into(),
            ));
        }
        let mut edges = Vec::with_capacity(m + 1);
        edges.push(lo);
        for k in 1..m {
            let pos = (k as f64 / m as f64) * (sorted.len() - 1) as f64;
            let idx = pos.floor() as usize;
            let frac = pos - idx as f64;
            let v = if idx + 1 < sorted.len() {
                sorted[idx] * (1.0 - frac) + sorted[idx + 1] * frac
            } else {
                sorted[idx]
            };
            edges.push(v);
        }
        edges.push(hi);
        // Adjacent closed bins: nudge interior boundaries so bins stay
        // disjoint while covering every observed value.
        let mut bins = Vec::with_capacity(m);
        let mut lo_edge = edges[0];
        for k in 0..m {
            let hi_edge = if k + 1 == m {
                edges[m]
            } else {
                let boundary = edges[k + 1];
                // Largest observation strictly below the next boundary, or
                // the boundary itself when ties collapse a quantile.
                let below = sorted
                    .iter()
                    .rev()
                    .find(|&&v| v < boundary && v >= lo_edge)
                    .copied();
                below.unwrap_or(lo_edge)
            };
            bins.push(Bin::new(lo_edge, hi_edge.max(lo_edge)));
            if k + 1 < m {
                let boundary = edges[k + 1];
                lo_edge = sorted
                    .iter()
                    .find(|&&v| v > bins[k].hi)
                    .copied()
                    .unwrap_or(boundary.max(bins[k].hi));
            }
        }
        bins.dedup_by(|a, b| a == b);
        if bins.len() < m {
            return Err(Error::InvalidParams(
                "not enough distinct weight values for the requested bin count".into(),
            ));
        }
        Ok(bins)
    }
}

/// Symmetric Q x Q per-step parameter table whose diagonal is shared across
/// all steps (one storage slot per group).
#[derive(Clone, Debug, PartialEq)]
pub struct PairField<T> {
    n_groups: usize,
    n_steps: usize,
    diag: Vec<T>,
    off: Vec<T>,
}

impl<T: Clone> PairField<T> {
    /// Rebuilds a field from its raw storage; `off` is the per-step
    /// upper-triangle slots flattened in step order.
    pub fn from_parts(n_groups: usize, n_steps: usize, diag: Vec<T>, off: Vec<T>) -> Result<Self> {
        let n_off = n_steps * n_groups * (n_groups - 1) / 2;
        if diag.len() != n_groups || off.len() != n_off {
            return Err(Error::InvalidParams("parameter table shape".into()));
        }
        Ok(PairField {
            n_groups,
            n_steps,
            diag,
            off,
        })
    }

    pub fn constant(n_groups: usize, n_steps: usize, diag: T, off: T) -> Self {
        let n_off = n_steps * n_groups * (n_groups - 1) / 2;
        PairField {
            n_groups,
            n_steps,
            diag: vec![diag; n_groups],
            off: vec![off; n_off],
        }
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    fn off_index(&self, t: usize, q: usize, l: usize) -> usize {
        debug_assert!(q != l);
        let (a, b) = if q < l { (q, l) } else { (l, q) };
        // Upper-triangle enumeration (a, b), a < b, row-major.
        let pair = a * self.n_groups - a * (a + 1) / 2 + (b - a - 1);
        t * self.n_groups * (self.n_groups - 1) / 2 + pair
    }

    pub fn get(&self, t: usize, q: usize, l: usize) -> &T {
        if q == l {
            &self.diag[q]
        } else {
            &self.off[self.off_index(t, q, l)]
        }
    }

    /// Writing a diagonal cell targets the shared slot, whatever `t` is.
    pub fn set(&mut self, t: usize, q: usize, l: usize, value: T) {
        if q == l {
            self.diag[q] = value;
        } else {
            let idx = self.off_index(t, q, l);
            self.off[idx] = value;
        }
    }

    pub fn diag(&self) -> &[T] {
        &self.diag
    }

    pub fn off_slots(&self) -> &[T] {
        &self.off
    }

    pub fn set_diag_slot(&mut self, q: usize, value: T) {
        self.diag[q] = value;
    }
}

/// Emission parameters, laid out per family. Diagonal (within-group) cells
/// are time-constant through the [`PairField`] storage.
#[derive(Clone, Debug, PartialEq)]
pub enum EmissionParams {
    Bernoulli,
    FiniteSpace { probs: PairField<Vec<f64>> },
    TruncatedPoisson { rates: PairField<f64> },
    Gaussian { means: PairField<f64>, variances: Vec<f64> },
}

/// A read-only view of one emission cell, used by density evaluation.
#[derive(Clone, Copy, Debug)]
pub enum GammaView<'a> {
    None,
    Probs(&'a [f64]),
    Rate(f64),
    Gaussian { mean: f64, variance: f64 },
}

/// Full parameter set of the dynamic block model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub n_groups: usize,
    pub n_steps: usize,
    /// Q x Q row-stochastic transition matrix of the latent chains.
    pub transition: Array2<f64>,
    /// Stationary initial law of the chains.
    pub initial: Array1<f64>,
    /// Probability that a pair produces a nonzero weight.
    pub sparsity: PairField<f64>,
    pub family: EmissionFamily,
    pub emission: EmissionParams,
}

impl ModelParams {
    pub fn beta(&self, t: usize, q: usize, l: usize) -> f64 {
        *self.sparsity.get(t, q, l)
    }

    pub fn gamma_view(&self, t: usize, q: usize, l: usize) -> GammaView<'_> {
        match &self.emission {
            EmissionParams::Bernoulli => GammaView::None,
            EmissionParams::FiniteSpace { probs } => GammaView::Probs(probs.get(t, q, l)),
            EmissionParams::TruncatedPoisson { rates } => GammaView::Rate(*rates.get(t, q, l)),
            EmissionParams::Gaussian { means, variances } => GammaView::Gaussian {
                mean: *means.get(t, q, l),
                variance: variances[t],
            },
        }
    }

    /// Checks every invariant: stochastic rows, simplex initial law, beta
    /// range, family-consistent emission layout, positive rates/variances.
    pub fn validate(&self) -> Result<()> {
        let q = self.n_groups;
        if q == 0 {
            return Err(Error::InvalidParams("need at least one group".into()));
        }
        if self.transition.nrows() != q || self.transition.ncols() != q {
            return Err(Error::InvalidParams("transition matrix shape".into()));
        }
        if self.initial.len() != q {
            return Err(Error::InvalidParams("initial law length".into()));
        }
        for row in self.transition.rows() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidParams("transition entries outside [0,1]".into()));
            }
            if (row.sum() - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidParams("transition rows must sum to 1".into()));
            }
        }
        if self.initial.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (self.initial.sum() - 1.0).abs() > SIMPLEX_TOL
        {
            return Err(Error::InvalidParams("initial law must be a simplex vector".into()));
        }
        if self.sparsity.n_groups() != q || self.sparsity.n_steps() != self.n_steps {
            return Err(Error::InvalidParams("sparsity table shape".into()));
        }
        let beta_ok = |b: &f64| (0.0..=1.0).contains(b);
        if !self.sparsity.diag().iter().all(beta_ok) || !self.sparsity.off_slots().iter().all(beta_ok)
        {
            return Err(Error::InvalidParams("sparsity entries outside [0,1]".into()));
        }
        self.family.validate()?;
        match (&self.family, &self.emission) {
            (EmissionFamily::Bernoulli, EmissionParams::Bernoulli) => {}
            (EmissionFamily::FiniteSpace { bins }, EmissionParams::FiniteSpace { probs }) => {
                let m = bins.len();
                let simplex_ok = |v: &Vec<f64>| {
                    v.len() == m
                        && v.iter().all(|&p| (0.0..=1.0).contains(&p))
                        && (v.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
                };
                if !probs.diag().iter().all(simplex_ok)
                    || !probs.off_slots().iter().all(simplex_ok)
                {
                    return Err(Error::InvalidParams(
                        "finite-space probabilities must be length-M simplex vectors".into(),
                    ));
                }
            }
            (EmissionFamily::TruncatedPoisson, EmissionParams::TruncatedPoisson { rates }) => {
                if !rates.diag().iter().all(|&r| r > 0.0)
                    || !rates.off_slots().iter().all(|&r| r > 0.0)
                {
                    return Err(Error::InvalidParams("rates must be positive".into()));
                }
            }
            (EmissionFamily::GaussianHomoscedastic, EmissionParams::Gaussian { means, variances }) => {
                if variances.len() != self.n_steps || variances.iter().any(|&v| v <= 0.0) {
                    return Err(Error::InvalidParams(
                        "need one positive variance per time step".into(),
                    ));
                }
                if means.diag().iter().any(|m| !m.is_finite())
                    || means.off_slots().iter().any(|m| !m.is_finite())
                {
                    return Err(Error::InvalidParams("means must be finite".into()));
                }
            }
            _ => {
                return Err(Error::InvalidParams(
                    "emission parameters do not match the family".into(),
                ));
            }
        }
        Ok(())
    }

    /// Data-informed placeholder parameters, used as the retention source for
    /// cells that receive no mass before the first maximization pass.
    pub fn neutral(
        n_groups: usize,
        n_steps: usize,
        family: &EmissionFamily,
        nonzero_weights: &[f64],
    ) -> Self {
        let q = n_groups;
        let uniform_p = 1.0 / q as f64;
        let transition = Array2::from_elem((q, q), uniform_p);
        let initial = Array1::from_elem(q, uniform_p);
        let sparsity = PairField::constant(q, n_steps, 0.5, 0.5);
        let mean_nz = if nonzero_weights.is_empty() {
            1.0
        } else {
            nonzero_weights.iter().sum::<f64>() / nonzero_weights.len() as f64
        };
        let emission = match family {
            EmissionFamily::Bernoulli => EmissionParams::Bernoulli,
            EmissionFamily::FiniteSpace { bins } => {
                let m = bins.len();
                EmissionParams::FiniteSpace {
                    probs: PairField::constant(
                        q,
                        n_steps,
                        vec![1.0 / m as f64; m],
                        vec![1.0 / m as f64; m],
                    ),
                }
            }
            EmissionFamily::TruncatedPoisson => {
                let rate = mean_nz.max(1e-3);
                EmissionParams::TruncatedPoisson {
                    rates: PairField::constant(q, n_steps, rate, rate),
                }
            }
            EmissionFamily::GaussianHomoscedastic => {
                let var = if nonzero_weights.len() > 1 {
                    let v = nonzero_weights
                        .iter()
                        .map(|&y| (y - mean_nz).powi(2))
                        .sum::<f64>()
                        / nonzero_weights.len() as f64;
                    v.max(crate::emissions::VARIANCE_FLOOR)
                } else {
                    1.0
                };
                EmissionParams::Gaussian {
                    means: PairField::constant(q, n_steps, mean_nz, mean_nz),
                    variances: vec![var; n_steps],
                }
            }
        };
        ModelParams {
            n_groups: q,
            n_steps,
            transition,
            initial,
            sparsity,
            family: family.clone(),
            emission,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn pair_field_diagonal_is_one_slot_across_time() {
        let mut f = PairField::constant(3, 4, 0.0f64, 0.0);
        f.set(2, 1, 1, 0.7);
        for t in 0..4 {
            assert_eq!(*f.get(t, 1, 1), 0.7);
        }
        f.set(1, 0, 2, 0.3);
        assert_eq!(*f.get(1, 2, 0), 0.3);
        assert_eq!(*f.get(0, 0, 2), 0.0);
        assert_eq!(f.diag().len(), 3);
        assert_eq!(f.off_slots().len(), 4 * 3);
    }

    #[test]
    fn validate_rejects_non_stochastic_rows() {
        let mut p = ModelParams::neutral(2, 2, &EmissionFamily::Bernoulli, &[]);
        assert!(p.validate().is_ok());
        p.transition = arr2(&[[0.9, 0.2], [0.1, 0.9]]);
        assert!(p.validate().is_err());
    }

    #[test]
    fn bins_must_be_disjoint_and_exclude_zero() {
        let family = EmissionFamily::FiniteSpace {
            bins: vec![Bin::new(-1.0, 1.0), Bin::new(2.0, 3.0)],
        };
        assert!(family.validate().is_err());
        let family = EmissionFamily::FiniteSpace {
            bins: vec![Bin::new(1.0, 2.5), Bin::new(2.0, 3.0)],
        };
        assert!(family.validate().is_err());
        let family = EmissionFamily::FiniteSpace {
            bins: vec![Bin::new(1.0, 2.0), Bin::new(2.5, 3.0)],
        };
        assert!(family.validate().is_ok());
        assert_eq!(family.bin_index(1.5), Some(0));
        assert_eq!(family.bin_index(2.7), Some(1));
        assert_eq!(family.bin_index(2.2), None);
    }

    #[test]
    fn quantile_bins_partition_observed_values() {
        let weights = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let bins = EmissionFamily::quantile_bins(&weights, 3).unwrap();
        assert_eq!(bins.len(), 3);
        let family = EmissionFamily::FiniteSpace { bins };
        family.validate().unwrap();
        for w in weights {
            assert!(family.bin_index(w).is_some(), "weight {w} not binned");
        }
        // Each weight falls in exactly one bin by disjointness.
    }

    #[test]
    fn poisson_support_is_positive_integers() {
        let fam = EmissionFamily::TruncatedPoisson;
        assert!(fam.supports(3.0));
        assert!(fam.supports(0.0));
        assert!(!fam.supports(2.5));
        assert!(!fam.supports(-1.0));
    }
}
