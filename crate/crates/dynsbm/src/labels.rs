//! Group label sequences over (time, node) with an explicit absent marker.

/// Sentinel for a node that is absent at a given step.
pub const ABSENT: usize = usize::MAX;

/// T x N group labels (0-based groups internally), `ABSENT` where a node is
/// out of the study.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSeries {
    n_steps: usize,
    n_nodes: usize,
    labels: Vec<usize>,
}

impl LabelSeries {
    pub fn filled(n_steps: usize, n_nodes: usize, value: usize) -> Self {
        LabelSeries {
            n_steps,
            n_nodes,
            labels: vec![value; n_steps * n_nodes],
        }
    }

    pub fn from_rows(rows: Vec<Vec<usize>>) -> Self {
        let n_steps = rows.len();
        let n_nodes = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == n_nodes));
        LabelSeries {
            n_steps,
            n_nodes,
            labels: rows.into_iter().flatten().collect(),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn get(&self, t: usize, i: usize) -> Option<usize> {
        let v = self.labels[t * self.n_nodes + i];
        (v != ABSENT).then_some(v)
    }

    pub fn set(&mut self, t: usize, i: usize, label: usize) {
        self.labels[t * self.n_nodes + i] = label;
    }

    pub fn set_absent(&mut self, t: usize, i: usize) {
        self.labels[t * self.n_nodes + i] = ABSENT;
    }

    pub fn row(&self, t: usize) -> &[usize] {
        &self.labels[t * self.n_nodes..(t + 1) * self.n_nodes]
    }

    /// Number of distinct (non-absent) groups that actually appear.
    pub fn occupied_groups(&self) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        for &v in &self.labels {
            if v != ABSENT {
                seen.insert(v);
            }
        }
        seen.len()
    }

    /// Largest group index present, plus one; 0 when everything is absent.
    pub fn max_group_bound(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&v| v != ABSENT)
            .map(|&v| v + 1)
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_round_trip() {
        let mut s = LabelSeries::filled(2, 3, 0);
        s.set(1, 2, 4);
        s.set_absent(0, 1);
        assert_eq!(s.get(1, 2), Some(4));
        assert_eq!(s.get(0, 1), None);
        assert_eq!(s.occupied_groups(), 2);
        assert_eq!(s.max_group_bound(), 5);
    }
}
