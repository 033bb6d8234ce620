//! Text formats shared with the command-line tool.
//!
//! - edge file: TSV `t<TAB>i<TAB>j<TAB>w`, 1-based steps and nodes, zero
//!   weights omitted, each symmetric pair stored once with i < j;
//! - presence file: TSV `t<TAB>i` listing present (step, node) slots;
//! - params file: JSON mirroring [`ModelParams`];
//! - labels file: CSV `t,i,group` with group 0 marking an absent slot.
//!
//! Floats are written with 17 significant digits so every read(write(x))
//! round-trip is bit-exact. Indices are 1-based on disk and 0-based in
//! memory; the conversion happens here and only here.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelSeries;
use crate::network::DynamicNetwork;
use crate::params::{Bin, EmissionFamily, EmissionParams, ModelParams, PairField};

/// 17 significant digits: enough to reproduce any f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

/// Splits on LF while keeping any CR visible, so CRLF files are rejected
/// instead of silently accepted (`BufRead::lines` would strip the CR).
fn raw_lines(mut reader: impl BufRead, path: &str) -> Result<Vec<String>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| parse_err(path, 1, "file is not valid UTF-8"))?;
    let mut out = Vec::new();
    for (idx, line) in text.split('\n').enumerate() {
        if line.contains('\r') {
            return Err(parse_err(
                path,
                idx + 1,
                "CRLF line endings are not supported; convert the file to LF",
            ));
        }
        out.push(line.to_string());
    }
    if out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    Ok(out)
}

// ---------------------------------------------------------------- edge file

pub const EDGE_HEADER: &str = "t\ti\tj\tw";

pub fn write_edge_file(net: &DynamicNetwork, out: &mut impl Write) -> Result<()> {
    writeln!(out, "{EDGE_HEADER}")?;
    for t in 0..net.n_steps() {
        for (i, j, y) in net.edges(t) {
            writeln!(out, "{}\t{}\t{}\t{}", t + 1, i + 1, j + 1, fmt_f64(y))?;
        }
    }
    Ok(())
}

/// Raw records of an edge file (1-based indices preserved).
#[derive(Clone, Debug, Default)]
pub struct EdgeRecords {
    pub records: Vec<(usize, usize, usize, f64)>,
    pub max_step: usize,
    pub max_node: usize,
}

pub fn read_edge_file(reader: impl BufRead, path: &str) -> Result<EdgeRecords> {
    let mut out = EdgeRecords::default();
    let lines = raw_lines(reader, path)?;
    let header = lines
        .first()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    if header != EDGE_HEADER {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{EDGE_HEADER}`, found `{header}`"),
        ));
    }
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let t: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line_no, "step must be a positive integer"))?;
        let i: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(path, line_no, "node id must be a positive integer"))?;
        let j: usize = fields[2]
            .parse()
            .map_err(|_| parse_err(path, line_no, "node id must be a positive integer"))?;
        let w: f64 = fields[3]
            .parse()
            .map_err(|_| parse_err(path, line_no, "weight must be a real number"))?;
        if t == 0 || i == 0 || j == 0 {
            return Err(parse_err(path, line_no, "steps and node ids are 1-based"));
        }
        if i >= j {
            return Err(parse_err(
                path,
                line_no,
                "pairs must be stored once with i < j",
            ));
        }
        if w == 0.0 || !w.is_finite() {
            return Err(parse_err(path, line_no, "weights must be nonzero and finite"));
        }
        out.max_step = out.max_step.max(t);
        out.max_node = out.max_node.max(j);
        out.records.push((t, i, j, w));
    }
    Ok(out)
}

// ------------------------------------------------------------ presence file

pub const PRESENCE_HEADER: &str = "t\ti";

pub fn write_presence_file(net: &DynamicNetwork, out: &mut impl Write) -> Result<()> {
    writeln!(out, "{PRESENCE_HEADER}")?;
    for t in 0..net.n_steps() {
        for i in 0..net.n_nodes() {
            if net.present(t, i) {
                writeln!(out, "{}\t{}", t + 1, i + 1)?;
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct PresenceRecords {
    pub records: Vec<(usize, usize)>,
    pub max_step: usize,
    pub max_node: usize,
}

pub fn read_presence_file(reader: impl BufRead, path: &str) -> Result<PresenceRecords> {
    let mut out = PresenceRecords::default();
    let lines = raw_lines(reader, path)?;
    let header = lines
        .first()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    if header != PRESENCE_HEADER {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{PRESENCE_HEADER}`, found `{header}`"),
        ));
    }
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(parse_err(path, line_no, "expected 2 tab-separated fields"));
        }
        let t: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line_no, "step must be a positive integer"))?;
        let i: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(path, line_no, "node id must be a positive integer"))?;
        if t == 0 || i == 0 {
            return Err(parse_err(path, line_no, "steps and node ids are 1-based"));
        }
        out.max_step = out.max_step.max(t);
        out.max_node = out.max_node.max(i);
        out.records.push((t, i));
    }
    Ok(out)
}

/// Assembles a network from parsed records. Dimensions may be pinned
/// explicitly; otherwise the largest indices seen decide them (a node or
/// step that never appears in either file cannot be inferred).
pub fn build_network(
    edges: &EdgeRecords,
    presence: Option<&PresenceRecords>,
    n_nodes: Option<usize>,
    n_steps: Option<usize>,
) -> Result<DynamicNetwork> {
    let inferred_n = edges.max_node.max(presence.map_or(0, |p| p.max_node));
    let inferred_t = edges.max_step.max(presence.map_or(0, |p| p.max_step));
    let n = n_nodes.unwrap_or(inferred_n);
    let t_steps = n_steps.unwrap_or(inferred_t);
    if n == 0 || t_steps == 0 {
        return Err(Error::DimensionMismatch(
            "cannot infer network dimensions from empty inputs".into(),
        ));
    }
    if inferred_n > n || inferred_t > t_steps {
        return Err(Error::DimensionMismatch(
            "records exceed the requested dimensions".into(),
        ));
    }
    let mask = match presence {
        None => vec![vec![true; n]; t_steps],
        Some(p) => {
            let mut mask = vec![vec![false; n]; t_steps];
            for &(t, i) in &p.records {
                mask[t - 1][i - 1] = true;
            }
            mask
        }
    };
    let mut weights = vec![Array2::zeros((n, n)); t_steps];
    for &(t, i, j, w) in &edges.records {
        weights[t - 1][(i - 1, j - 1)] = w;
        weights[t - 1][(j - 1, i - 1)] = w;
    }
    DynamicNetwork::new(weights, mask)
}

// -------------------------------------------------------------- labels file

pub const LABELS_HEADER: &str = "t,i,group";

pub fn write_labels_file(labels: &LabelSeries, out: &mut impl Write) -> Result<()> {
    writeln!(out, "{LABELS_HEADER}")?;
    for t in 0..labels.n_steps() {
        for i in 0..labels.n_nodes() {
            let g = labels.get(t, i).map_or(0, |z| z + 1);
            writeln!(out, "{},{},{}", t + 1, i + 1, g)?;
        }
    }
    Ok(())
}

pub fn read_labels_file(reader: impl BufRead, path: &str) -> Result<LabelSeries> {
    let lines = raw_lines(reader, path)?;
    let header = lines
        .first()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    if header != LABELS_HEADER {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{LABELS_HEADER}`, found `{header}`"),
        ));
    }
    let mut records: Vec<(usize, usize, usize)> = Vec::new();
    let mut max_t = 0usize;
    let mut max_i = 0usize;
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(path, line_no, "expected 3 comma-separated fields"));
        }
        let t: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, line_no, "step must be a positive integer"))?;
        let i: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(path, line_no, "node id must be a positive integer"))?;
        let g: usize = fields[2]
            .parse()
            .map_err(|_| parse_err(path, line_no, "group must be a nonnegative integer"))?;
        if t == 0 || i == 0 {
            return Err(parse_err(path, line_no, "steps and node ids are 1-based"));
        }
        max_t = max_t.max(t);
        max_i = max_i.max(i);
        records.push((t, i, g));
    }
    if records.is_empty() {
        return Err(parse_err(path, 2, "no label records"));
    }
    let mut labels = LabelSeries::filled(max_t, max_i, crate::labels::ABSENT);
    for (t, i, g) in records {
        if g == 0 {
            labels.set_absent(t - 1, i - 1);
        } else {
            labels.set(t - 1, i - 1, g - 1);
        }
    }
    Ok(labels)
}

// -------------------------------------------------------------- params file

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyDoc {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    bins: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GammaDoc {
    #[serde(skip_serializing_if = "Option::is_none")]
    probs_diag: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    probs_offdiag: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rates_diag: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rates_offdiag: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    means_diag: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    means_offdiag: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    variances: Option<Vec<f64>>,
}

/// On-disk mirror of [`ModelParams`]. Off-diagonal tables are stored per
/// step, pairs in row-major upper-triangle order (0,1), (0,2), ...;
/// diagonal tables have one entry per group, shared by all steps.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    q: usize,
    family: FamilyDoc,
    pi: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    beta_diag: Vec<f64>,
    beta_offdiag: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<GammaDoc>,
}

fn pair_field_to_doc<T: Clone>(field: &PairField<T>) -> (Vec<T>, Vec<Vec<T>>) {
    let n_pairs = field.n_groups() * (field.n_groups() - 1) / 2;
    let off = (0..field.n_steps())
        .map(|t| field.off_slots()[t * n_pairs..(t + 1) * n_pairs].to_vec())
        .collect();
    (field.diag().to_vec(), off)
}

fn pair_field_from_doc<T: Clone>(
    q: usize,
    diag: Vec<T>,
    off: Vec<Vec<T>>,
    what: &str,
) -> Result<PairField<T>> {
    let n_pairs = q * (q - 1) / 2;
    if diag.len() != q || off.is_empty() || off.iter().any(|row| row.len() != n_pairs) {
        return Err(Error::InvalidParams(format!("{what} table shape")));
    }
    PairField::from_parts(q, off.len(), diag, off.into_iter().flatten().collect())
}

impl ParamsDoc {
    pub fn from_params(params: &ModelParams) -> Self {
        let (beta_diag, beta_offdiag) = pair_field_to_doc(&params.sparsity);
        let family = match &params.family {
            EmissionFamily::Bernoulli => FamilyDoc {
                kind: "bernoulli".into(),
                bins: None,
            },
            EmissionFamily::FiniteSpace { bins } => FamilyDoc {
                kind: "finite".into(),
                bins: Some(bins.iter().map(|b| [b.lo, b.hi]).collect()),
            },
            EmissionFamily::TruncatedPoisson => FamilyDoc {
                kind: "poisson".into(),
                bins: None,
            },
            EmissionFamily::GaussianHomoscedastic => FamilyDoc {
                kind: "gaussian".into(),
                bins: None,
            },
        };
        let gamma = match &params.emission {
            EmissionParams::Bernoulli => None,
            EmissionParams::FiniteSpace { probs } => {
                let (diag, off) = pair_field_to_doc(probs);
                Some(GammaDoc {
                    probs_diag: Some(diag),
                    probs_offdiag: Some(off),
                    ..GammaDoc::default()
                })
            }
            EmissionParams::TruncatedPoisson { rates } => {
                let (diag, off) = pair_field_to_doc(rates);
                Some(GammaDoc {
                    rates_diag: Some(diag),
                    rates_offdiag: Some(off),
                    ..GammaDoc::default()
                })
            }
            EmissionParams::Gaussian { means, variances } => {
                let (diag, off) = pair_field_to_doc(means);
                Some(GammaDoc {
                    means_diag: Some(diag),
                    means_offdiag: Some(off),
                    variances: Some(variances.clone()),
                    ..GammaDoc::default()
                })
            }
        };
        ParamsDoc {
            q: params.n_groups,
            family,
            pi: params
                .transition
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            alpha: params.initial.to_vec(),
            beta_diag,
            beta_offdiag,
            gamma,
        }
    }

    pub fn into_params(self) -> Result<ModelParams> {
        let q = self.q;
        if q == 0 {
            return Err(Error::InvalidParams("q must be >= 1".into()));
        }
        let n_steps = self.beta_offdiag.len();
        let family = match self.family.kind.as_str() {
            "bernoulli" => EmissionFamily::Bernoulli,
            "poisson" => EmissionFamily::TruncatedPoisson,
            "gaussian" => EmissionFamily::GaussianHomoscedastic,
            "finite" => {
                let bins = self
                    .family
                    .bins
                    .clone()
                    .ok_or_else(|| Error::InvalidParams("finite family needs bins".into()))?;
                EmissionFamily::FiniteSpace {
                    bins: bins.into_iter().map(|[lo, hi]| Bin::new(lo, hi)).collect(),
                }
            }
            other => {
                return Err(Error::InvalidParams(format!("unknown family kind `{other}`")))
            }
        };
        if !matches!(family, EmissionFamily::FiniteSpace { .. }) && self.family.bins.is_some() {
            return Err(Error::InvalidParams(
                "bins are only valid for the finite family".into(),
            ));
        }
        if self.pi.len() != q || self.pi.iter().any(|r| r.len() != q) {
            return Err(Error::InvalidParams("pi must be a QxQ matrix".into()));
        }
        let mut transition = Array2::zeros((q, q));
        for (g, row) in self.pi.iter().enumerate() {
            for (h, &v) in row.iter().enumerate() {
                transition[(g, h)] = v;
            }
        }
        let sparsity = pair_field_from_doc(q, self.beta_diag, self.beta_offdiag, "beta")?;
        let gamma = self.gamma.unwrap_or_default();
        let emission = match &family {
            EmissionFamily::Bernoulli => EmissionParams::Bernoulli,
            EmissionFamily::FiniteSpace { .. } => EmissionParams::FiniteSpace {
                probs: pair_field_from_doc(
                    q,
                    gamma
                        .probs_diag
                        .ok_or_else(|| Error::InvalidParams("missing probs_diag".into()))?,
                    gamma
                        .probs_offdiag
                        .ok_or_else(|| Error::InvalidParams("missing probs_offdiag".into()))?,
                    "probs",
                )?,
            },
            EmissionFamily::TruncatedPoisson => EmissionParams::TruncatedPoisson {
                rates: pair_field_from_doc(
                    q,
                    gamma
                        .rates_diag
                        .ok_or_else(|| Error::InvalidParams("missing rates_diag".into()))?,
                    gamma
                        .rates_offdiag
                        .ok_or_else(|| Error::InvalidParams("missing rates_offdiag".into()))?,
                    "rates",
                )?,
            },
            EmissionFamily::GaussianHomoscedastic => EmissionParams::Gaussian {
                means: pair_field_from_doc(
                    q,
                    gamma
                        .means_diag
                        .ok_or_else(|| Error::InvalidParams("missing means_diag".into()))?,
                    gamma
                        .means_offdiag
                        .ok_or_else(|| Error::InvalidParams("missing means_offdiag".into()))?,
                    "means",
                )?,
                variances: gamma
                    .variances
                    .ok_or_else(|| Error::InvalidParams("missing variances".into()))?,
            },
        };
        let params = ModelParams {
            n_groups: q,
            n_steps,
            transition,
            initial: Array1::from_vec(self.alpha),
            sparsity,
            family,
            emission,
        };
        params.validate()?;
        Ok(params)
    }
}

/// JSON formatter writing every float with 17 significant digits.
struct SigDigits;

impl serde_json::ser::Formatter for SigDigits {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{}", fmt_f64(value))
    }
}

pub fn write_params_file(params: &ModelParams, out: &mut impl Write) -> Result<()> {
    let doc = ParamsDoc::from_params(params);
    let mut ser = serde_json::Serializer::with_formatter(&mut *out, SigDigits);
    doc.serialize(&mut ser)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_params_file(reader: impl BufRead) -> Result<ModelParams> {
    let doc: ParamsDoc = serde_json::from_reader(reader)?;
    doc.into_params()
}

// ----------------------------------------------------------- small tables

pub fn write_elbo_trace_csv(trace: &[f64], out: &mut impl Write) -> Result<()> {
    writeln!(out, "iter,elbo")?;
    for (k, v) in trace.iter().enumerate() {
        writeln!(out, "{},{}", k, fmt_f64(*v))?;
    }
    Ok(())
}

pub fn write_flux_csv(flux: &crate::eval::FluxTable, out: &mut impl Write) -> Result<()> {
    writeln!(out, "t,from,to,count")?;
    let side = flux.n_groups + 1;
    for (step, table) in flux.counts.iter().enumerate() {
        for from in 0..side {
            for to in 0..side {
                let c = table[from * side + to];
                if c > 0 {
                    writeln!(out, "{},{},{},{}", step + 2, from, to, c)?;
                }
            }
        }
    }
    Ok(())
}

/// Metric bundle produced by the evaluation command.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDoc {
    pub global_ari: f64,
    pub averaged_ari: f64,
    pub per_t_ari: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi_mse: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRecordDoc {
    pub q: usize,
    pub complete_ll: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icl: Option<f64>,
    pub converged: bool,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionDoc {
    pub method: String,
    pub chosen_q: usize,
    pub records: Vec<SelectionRecordDoc>,
    pub elbow: Vec<(usize, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elbow_suggestion: Option<usize>,
}

impl SelectionDoc {
    pub fn from_result(result: &crate::selection::SelectionResult) -> Self {
        SelectionDoc {
            method: match result.method {
                crate::selection::SelectionMethod::Icl => "icl".into(),
                crate::selection::SelectionMethod::Elbow => "elbow".into(),
            },
            chosen_q: result.chosen_q,
            records: result
                .records
                .iter()
                .map(|r| SelectionRecordDoc {
                    q: r.n_groups,
                    complete_ll: r.complete_ll,
                    icl: r.icl,
                    converged: r.converged,
                    degenerate: r.degenerate,
                })
                .collect(),
            elbow: result.elbow.clone(),
            elbow_suggestion: result.elbow_suggestion,
        }
    }
}

pub fn write_json<T: Serialize>(doc: &T, out: &mut impl Write) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(&mut *out, SigDigits);
    doc.serialize(&mut ser)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_elbow_csv(points: &[(usize, f64)], out: &mut impl Write) -> Result<()> {
    writeln!(out, "q,complete_ll")?;
    for (q, v) in points {
        writeln!(out, "{},{}", q, fmt_f64(*v))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::ABSENT;
    use crate::sim::{preset_scenario, simulate, PresenceSchedule};

    #[test]
    fn float_formatting_is_lossless() {
        for x in [
            0.1,
            1.0 / 3.0,
            std::f64::consts::PI,
            6.02214076e23,
            -1.5e-300,
            0.0,
        ] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} -> {s}");
        }
    }

    #[test]
    fn edge_file_round_trip_is_exact() {
        let preset = preset_scenario("medium-").unwrap();
        let params = preset.params(3, 0).unwrap();
        let (net, _) = simulate(
            &params,
            12,
            5,
            &PresenceSchedule::IndependentBernoulli { prob: 0.8 },
        )
        .unwrap();
        let mut edge_bytes = Vec::new();
        write_edge_file(&net, &mut edge_bytes).unwrap();
        let mut presence_bytes = Vec::new();
        write_presence_file(&net, &mut presence_bytes).unwrap();
        let edges = read_edge_file(edge_bytes.as_slice(), "edges.tsv").unwrap();
        let presence = read_presence_file(presence_bytes.as_slice(), "presence.tsv").unwrap();
        let back = build_network(&edges, Some(&presence), Some(12), Some(3)).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn malformed_edge_rows_carry_line_numbers() {
        let text = "t\ti\tj\tw\n1\t1\t2\t1.0\n1\t3\tnope\t1.0\n";
        let err = read_edge_file(text.as_bytes(), "bad.tsv").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
        let crlf = "t\ti\tj\tw\r\n";
        let err = read_edge_file(crlf.as_bytes(), "crlf.tsv").unwrap_err();
        assert!(err.to_string().contains("CRLF"));
        let swapped = "t\ti\tj\tw\n1\t2\t1\t1.0\n";
        let err = read_edge_file(swapped.as_bytes(), "swapped.tsv").unwrap_err();
        assert!(err.to_string().contains("i < j"));
    }

    #[test]
    fn labels_round_trip_with_absences() {
        let mut labels = LabelSeries::filled(2, 3, ABSENT);
        labels.set(0, 0, 0);
        labels.set(0, 2, 2);
        labels.set(1, 1, 1);
        let mut bytes = Vec::new();
        write_labels_file(&labels, &mut bytes).unwrap();
        let back = read_labels_file(bytes.as_slice(), "labels.csv").unwrap();
        assert_eq!(labels, back);
    }

    #[test]
    fn params_round_trip_across_families() {
        let presets = ["medium+", "icl_q4"];
        for name in presets {
            let params = preset_scenario(name).unwrap().params(4, 9).unwrap();
            let mut bytes = Vec::new();
            write_params_file(&params, &mut bytes).unwrap();
            let back = read_params_file(bytes.as_slice()).unwrap();
            assert_eq!(params, back);
        }

        // A Gaussian parameter set exercises the gamma block.
        let means = PairField::constant(2, 3, 1.5f64, -0.25);
        let params = ModelParams {
            n_groups: 2,
            n_steps: 3,
            transition: ndarray::arr2(&[[0.9, 0.1], [0.2, 0.8]]),
            initial: ndarray::arr1(&[2.0 / 3.0, 1.0 / 3.0]),
            sparsity: PairField::constant(2, 3, 0.4f64, 0.1),
            family: EmissionFamily::GaussianHomoscedastic,
            emission: EmissionParams::Gaussian {
                means,
                variances: vec![0.5, 0.25, 1.0],
            },
        };
        let mut bytes = Vec::new();
        write_params_file(&params, &mut bytes).unwrap();
        let back = read_params_file(bytes.as_slice()).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn unknown_json_keys_are_rejected() {
        let params = preset_scenario("medium+").unwrap().params(2, 0).unwrap();
        let mut bytes = Vec::new();
        write_params_file(&params, &mut bytes).unwrap();
        let mut text = String::from_utf8(bytes).unwrap();
        text = text.replacen("{", "{\"surprise\": 1,", 1);
        assert!(read_params_file(text.as_bytes()).is_err());
    }
}
