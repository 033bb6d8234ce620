//! Variational state of the per-node latent Markov chains: initial laws,
//! per-step transition tables and the cached marginal laws derived from
//! them, all aware of the presence schedule.

use crate::labels::{LabelSeries, ABSENT};
use crate::network::DynamicNetwork;

/// Role of a (step, node) slot under the presence schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    /// Node not observed at this step.
    Absent,
    /// First step of a presence run: either t = 1 or a re-entry after an
    /// absence. The latent group is drawn fresh from the stationary law.
    Entry,
    /// Present at this step and the previous one; governed by the
    /// transition matrix.
    Interior,
}

/// Presence schedule classified per (step, node); computed once per network.
#[derive(Clone, Debug)]
pub struct NodeSchedule {
    n_steps: usize,
    n_nodes: usize,
    kinds: Vec<StepKind>,
}

impl NodeSchedule {
    pub fn from_network(net: &DynamicNetwork) -> Self {
        let presence: Vec<&[bool]> = (0..net.n_steps()).map(|t| net.presence_row(t)).collect();
        Self::from_presence(&presence)
    }

    pub fn from_presence(presence: &[&[bool]]) -> Self {
        let n_steps = presence.len();
        let n_nodes = presence.first().map_or(0, |p| p.len());
        let mut kinds = Vec::with_capacity(n_steps * n_nodes);
        for t in 0..n_steps {
            for i in 0..n_nodes {
                let kind = if !presence[t][i] {
                    StepKind::Absent
                } else if t == 0 || !presence[t - 1][i] {
                    StepKind::Entry
                } else {
                    StepKind::Interior
                };
                kinds.push(kind);
            }
        }
        NodeSchedule {
            n_steps,
            n_nodes,
            kinds,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn kind(&self, t: usize, i: usize) -> StepKind {
        self.kinds[t * self.n_nodes + i]
    }

    pub fn is_present(&self, t: usize, i: usize) -> bool {
        self.kind(t, i) != StepKind::Absent
    }

    pub fn n_present(&self) -> usize {
        self.kinds.iter().filter(|k| **k != StepKind::Absent).count()
    }

    pub fn n_interior(&self) -> usize {
        self.kinds.iter().filter(|k| **k == StepKind::Interior).count()
    }
}

/// Factorized variational law over the latent chains.
///
/// `initial` holds the step-1 law per node; `trans` holds one Q x Q table
/// per (t >= 2, node). At a re-entry step all Q rows of the table are kept
/// identical and act as a fresh entry law. Marginals for absent slots are
/// NaN on purpose: any sum that accidentally touches them poisons the
/// result, which the test suite checks for.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState {
    n_nodes: usize,
    n_steps: usize,
    n_groups: usize,
    initial: Vec<f64>,
    trans: Vec<f64>,
    marg: Vec<f64>,
}

impl VariationalState {
    /// Uniform state with marginals refreshed under `sched`.
    pub fn uniform(n_nodes: usize, n_steps: usize, n_groups: usize, sched: &NodeSchedule) -> Self {
        let u = 1.0 / n_groups as f64;
        let mut state = VariationalState {
            n_nodes,
            n_steps,
            n_groups,
            initial: vec![u; n_nodes * n_groups],
            trans: vec![u; n_steps.saturating_sub(1) * n_nodes * n_groups * n_groups],
            marg: vec![f64::NAN; n_steps * n_nodes * n_groups],
        };
        state.recompute_marginals(sched);
        state
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn initial_row(&self, i: usize) -> &[f64] {
        &self.initial[i * self.n_groups..(i + 1) * self.n_groups]
    }

    pub fn initial_row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.initial[i * self.n_groups..(i + 1) * self.n_groups]
    }

    pub(crate) fn initial_slab_mut(&mut self) -> &mut [f64] {
        &mut self.initial
    }

    fn trans_base(&self, t: usize, i: usize) -> usize {
        debug_assert!(t >= 1);
        ((t - 1) * self.n_nodes + i) * self.n_groups * self.n_groups
    }

    /// Q x Q transition table for step `t >= 2` (0-based `t >= 1`), row q
    /// holding the law of Z^t | Z^{t-1} = q.
    pub fn trans_table(&self, t: usize, i: usize) -> &[f64] {
        let base = self.trans_base(t, i);
        &self.trans[base..base + self.n_groups * self.n_groups]
    }

    pub fn trans_table_mut(&mut self, t: usize, i: usize) -> &mut [f64] {
        let base = self.trans_base(t, i);
        &mut self.trans[base..base + self.n_groups * self.n_groups]
    }

    pub fn trans_row(&self, t: usize, i: usize, q: usize) -> &[f64] {
        let base = self.trans_base(t, i) + q * self.n_groups;
        &self.trans[base..base + self.n_groups]
    }

    pub(crate) fn trans_slab_mut(&mut self) -> &mut [f64] {
        &mut self.trans
    }

    pub fn marg_row(&self, t: usize, i: usize) -> &[f64] {
        let base = (t * self.n_nodes + i) * self.n_groups;
        &self.marg[base..base + self.n_groups]
    }

    fn marg_row_mut(&mut self, t: usize, i: usize) -> &mut [f64] {
        let base = (t * self.n_nodes + i) * self.n_groups;
        &mut self.marg[base..base + self.n_groups]
    }

    /// Marginal law at (t, i), or None when the node is absent there.
    pub fn marg(&self, t: usize, i: usize) -> Option<&[f64]> {
        let row = self.marg_row(t, i);
        row[0].is_nan().then_some(()).map_or(Some(row), |_| None)
    }

    /// Rebuilds the cached marginals from the initial and transition tables:
    /// entry slots copy their entry law, interior slots apply one transition
    /// step, absent slots are NaN. Idempotent.
    pub fn recompute_marginals(&mut self, sched: &NodeSchedule) {
        let q = self.n_groups;
        for t in 0..self.n_steps {
            for i in 0..self.n_nodes {
                match sched.kind(t, i) {
                    StepKind::Absent => {
                        self.marg_row_mut(t, i).fill(f64::NAN);
                    }
                    StepKind::Entry => {
                        let row: Vec<f64> = if t == 0 {
                            self.initial_row(i).to_vec()
                        } else {
                            // Entry tables keep all rows identical; row 0 is
                            // the entry law.
                            self.trans_row(t, i, 0).to_vec()
                        };
                        self.marg_row_mut(t, i).copy_from_slice(&row);
                    }
                    StepKind::Interior => {
                        let prev = self.marg_row(t - 1, i).to_vec();
                        let table = self.trans_table(t, i);
                        let mut next = vec![0.0; q];
                        for (g, &p) in prev.iter().enumerate() {
                            let row = &table[g * q..(g + 1) * q];
                            for (v, &w) in next.iter_mut().zip(row) {
                                *v += p * w;
                            }
                        }
                        self.marg_row_mut(t, i).copy_from_slice(&next);
                    }
                }
            }
        }
    }

    /// Per-slot argmax of the marginals (absent slots keep the marker);
    /// ties break to the lowest group.
    pub fn marginal_argmax(&self) -> LabelSeries {
        let mut labels = LabelSeries::filled(self.n_steps, self.n_nodes, ABSENT);
        for t in 0..self.n_steps {
            for i in 0..self.n_nodes {
                if let Some(row) = self.marg(t, i) {
                    let mut best = 0;
                    for (g, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = g;
                        }
                    }
                    labels.set(t, i, best);
                }
            }
        }
        labels
    }

    /// Largest simplex defect over every stored row (used by tests).
    pub fn max_simplex_defect(&self, sched: &NodeSchedule) -> f64 {
        let q = self.n_groups;
        let defect = |row: &[f64]| -> f64 {
            let out_of_range = row
                .iter()
                .map(|&v| (-v).max(v - 1.0).max(0.0))
                .fold(0.0f64, f64::max);
            (row.iter().sum::<f64>() - 1.0).abs().max(out_of_range)
        };
        let mut worst = 0.0f64;
        for i in 0..self.n_nodes {
            worst = worst.max(defect(self.initial_row(i)));
        }
        for t in 1..self.n_steps {
            for i in 0..self.n_nodes {
                for g in 0..q {
                    worst = worst.max(defect(self.trans_row(t, i, g)));
                }
            }
        }
        for t in 0..self.n_steps {
            for i in 0..self.n_nodes {
                if sched.is_present(t, i) {
                    worst = worst.max(defect(self.marg_row(t, i)));
                }
            }
        }
        worst
    }
}

/// Expected counts extracted from a variational state, plus the hard counts
/// taken at the decoded labels for the classification likelihood.
#[derive(Clone, Debug)]
pub struct SufficientStats {
    /// Per step, Q x Q expected pair counts over present pairs i < j.
    pub occupancy: Vec<Vec<f64>>,
    /// Q x Q expected transition mass over interior slots.
    pub transitions: Vec<f64>,
    /// Expected entry mass per group (step-1 presences and re-entries).
    pub entries: Vec<f64>,
    pub n_groups: usize,
}

impl SufficientStats {
    pub fn from_state(state: &VariationalState, net: &DynamicNetwork, sched: &NodeSchedule) -> Self {
        let q = state.n_groups();
        let mut occupancy = vec![vec![0.0; q * q]; net.n_steps()];
        for (t, occ) in occupancy.iter_mut().enumerate() {
            for i in 0..net.n_nodes() {
                let Some(mi) = state.marg(t, i) else { continue };
                for j in (i + 1)..net.n_nodes() {
                    let Some(mj) = state.marg(t, j) else { continue };
                    for (g, &a) in mi.iter().enumerate() {
                        for (h, &b) in mj.iter().enumerate() {
                            occ[g * q + h] += a * b;
                        }
                    }
                }
            }
        }
        let mut transitions = vec![0.0; q * q];
        let mut entries = vec![0.0; q];
        for t in 0..net.n_steps() {
            for i in 0..net.n_nodes() {
                match sched.kind(t, i) {
                    StepKind::Absent => {}
                    StepKind::Entry => {
                        let row = if t == 0 {
                            state.initial_row(i)
                        } else {
                            state.trans_row(t, i, 0)
                        };
                        for (g, &v) in row.iter().enumerate() {
                            entries[g] += v;
                        }
                    }
                    StepKind::Interior => {
                        let prev = state.marg_row(t - 1, i);
                        let table = state.trans_table(t, i);
                        for (g, &p) in prev.iter().enumerate() {
                            for h in 0..q {
                                transitions[g * q + h] += p * table[g * q + h];
                            }
                        }
                    }
                }
            }
        }
        SufficientStats {
            occupancy,
            transitions,
            entries,
            n_groups: q,
        }
    }

    /// Hard entry/transition counts at fixed labels (absent-aware).
    pub fn hard_counts(labels: &LabelSeries, n_groups: usize) -> (Vec<f64>, Vec<f64>) {
        let q = n_groups;
        let mut n_entry = vec![0.0; q];
        let mut n_trans = vec![0.0; q * q];
        for i in 0..labels.n_nodes() {
            for t in 0..labels.n_steps() {
                let Some(z) = labels.get(t, i) else { continue };
                let prev = if t == 0 { None } else { labels.get(t - 1, i) };
                match prev {
                    None => n_entry[z] += 1.0,
                    Some(zp) => n_trans[zp * q + z] += 1.0,
                }
            }
        }
        (n_entry, n_trans)
    }
}
