//! Command-line front end: simulate benchmark networks, fit dynamic block
//! models, scan the number of groups, score clusterings and export group
//! fluxes.
//!
//! Exit codes: 2 invalid parameters or usage, 3 input validation failure,
//! 4 degenerate fit (unless --allow-degenerate).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dynsbm::eval;
use dynsbm::init::InitConfig;
use dynsbm::io as dio;
use dynsbm::selection;
use dynsbm::sim;
use dynsbm::vem;
use dynsbm::{DynamicNetwork, EmissionFamily, Error, MapMode, ModelParams};

const EXIT_USAGE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_DEGENERATE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "dynsbm",
    about = "Dynamic stochastic block models for temporal networks",
    version
)]
struct Cli {
    /// Worker threads (falls back to DYNSBM_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a network (and its true labels) from a preset or params file.
    Simulate(SimulateArgs),
    /// Fit a model with a fixed number of groups.
    Fit(FitArgs),
    /// Fit a range of group counts and pick one.
    Select(SelectArgs),
    /// Compare an estimated label series against a reference.
    Eval(EvalArgs),
    /// Export group-to-group move counts for alluvial-style plots.
    Fluxes(FluxesArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario name: low-, low+, medium-, medium+, affiliation, icl_q4,
    /// pi_low/pi_medium/pi_high, or a combined form like medium+/pi_low.
    #[arg(long, conflicts_with = "params")]
    preset: Option<String>,
    /// Group-stability level for two-group presets: low, medium or high.
    #[arg(long)]
    pi: Option<String>,
    /// JSON parameter file to simulate from instead of a preset.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability that a (step, node) slot is observed.
    #[arg(long, default_value_t = 1.0)]
    presence_prob: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MapArg {
    Marginal,
    Viterbi,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    presence: Option<PathBuf>,
    #[arg(long)]
    q: usize,
    /// bernoulli, finite:M, poisson or gaussian.
    #[arg(long, default_value = "bernoulli")]
    family: String,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = MapArg::Marginal)]
    map: MapArg,
    #[arg(long)]
    allow_degenerate: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    presence: Option<PathBuf>,
    #[arg(long)]
    qmin: usize,
    #[arg(long)]
    qmax: usize,
    #[arg(long, default_value = "bernoulli")]
    family: String,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    allow_degenerate: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    est_labels: PathBuf,
    #[arg(long)]
    true_labels: PathBuf,
    #[arg(long, requires = "true_params")]
    est_params: Option<PathBuf>,
    #[arg(long, requires = "est_params")]
    true_params: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FluxesArgs {
    #[arg(long)]
    labels: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("DYNSBM_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    let pool = dynsbm::thread_pool(threads);
    let outcome = pool.install(|| match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Select(args) => cmd_select(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Fluxes(args) => cmd_fluxes(args),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

struct CmdError {
    code: u8,
    message: String,
}

fn usage_err(message: impl Into<String>) -> CmdError {
    CmdError {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn validation_err(message: impl Into<String>) -> CmdError {
    CmdError {
        code: EXIT_VALIDATION,
        message: message.into(),
    }
}

/// Library errors at the input boundary map to the validation exit code;
/// everything else is a usage/parameter problem.
fn lib_err(err: Error) -> CmdError {
    match err {
        Error::Parse { .. } | Error::Io(_) => validation_err(err.to_string()),
        _ => usage_err(err.to_string()),
    }
}

type CmdResult = Result<(), CmdError>;

fn create(path: &Path) -> Result<BufWriter<File>, CmdError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| validation_err(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, CmdError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| validation_err(format!("{}: {e}", path.display())))
}

fn parse_family(spec: &str, net: Option<&DynamicNetwork>) -> Result<EmissionFamily, CmdError> {
    match spec {
        "bernoulli" => Ok(EmissionFamily::Bernoulli),
        "poisson" => Ok(EmissionFamily::TruncatedPoisson),
        "gaussian" => Ok(EmissionFamily::GaussianHomoscedastic),
        other => {
            let Some(m) = other.strip_prefix("finite:") else {
                return Err(usage_err(format!(
                    "unknown family `{other}` (use bernoulli, finite:M, poisson or gaussian)"
                )));
            };
            let m: usize = m
                .parse()
                .map_err(|_| usage_err("finite:M needs an integer bin count"))?;
            let net = net.ok_or_else(|| {
                usage_err("finite:M requires edge data to derive the bins from")
            })?;
            let weights: Vec<f64> = (0..net.n_steps())
                .flat_map(|t| net.edges(t).map(|(_, _, y)| y).collect::<Vec<_>>())
                .collect();
            let bins = EmissionFamily::quantile_bins(&weights, m).map_err(lib_err)?;
            Ok(EmissionFamily::FiniteSpace { bins })
        }
    }
}

fn load_network(
    edges: &Path,
    presence: Option<&Path>,
) -> Result<DynamicNetwork, CmdError> {
    let edge_records =
        dio::read_edge_file(open(edges)?, &edges.display().to_string()).map_err(lib_err)?;
    let presence_records = match presence {
        None => None,
        Some(p) => Some(
            dio::read_presence_file(open(p)?, &p.display().to_string()).map_err(lib_err)?,
        ),
    };
    dio::build_network(&edge_records, presence_records.as_ref(), None, None).map_err(lib_err)
}

fn validated_network(
    edges: &Path,
    presence: Option<&Path>,
    family: &EmissionFamily,
) -> Result<DynamicNetwork, CmdError> {
    let net = load_network(edges, presence)?;
    let report = dynsbm::validate_network(&net, family);
    if !report.is_clean() {
        let mut msg = format!(
            "{}: {} invariant violation(s); first: {}",
            edges.display(),
            report.violations.len(),
            report.violations[0]
        );
        if presence.is_none() && matches!(report.violations[0], dynsbm::network::Violation::AbsentNonzero { .. }) {
            msg.push_str(" (is a presence file missing?)");
        }
        return Err(validation_err(msg));
    }
    Ok(net)
}

fn cmd_simulate(args: SimulateArgs) -> CmdResult {
    let params: ModelParams = if let Some(path) = &args.params {
        dio::read_params_file(open(path)?).map_err(lib_err)?
    } else {
        let preset_name = args.preset.as_deref().unwrap_or("medium+");
        let full_name = match (&args.pi, preset_name) {
            (Some(pi), name) if name != "icl_q4" => format!("{name}/pi_{pi}"),
            _ => preset_name.to_string(),
        };
        let preset = sim::preset_scenario(&full_name).map_err(lib_err)?;
        preset.params(args.t, args.seed).map_err(lib_err)?
    };
    if params.n_steps != args.t {
        return Err(usage_err(format!(
            "params define {} steps but --t is {}",
            params.n_steps, args.t
        )));
    }
    let schedule = if args.presence_prob >= 1.0 {
        sim::PresenceSchedule::Full
    } else {
        sim::PresenceSchedule::IndependentBernoulli {
            prob: args.presence_prob,
        }
    };
    let (net, labels) = sim::simulate(&params, args.n, args.seed, &schedule).map_err(lib_err)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| validation_err(format!("{}: {e}", args.out_dir.display())))?;
    let mut w = create(&args.out_dir.join("edges.tsv"))?;
    dio::write_edge_file(&net, &mut w).map_err(lib_err)?;
    let mut w = create(&args.out_dir.join("labels.csv"))?;
    dio::write_labels_file(&labels, &mut w).map_err(lib_err)?;
    if !matches!(schedule, sim::PresenceSchedule::Full) {
        let mut w = create(&args.out_dir.join("presence.tsv"))?;
        dio::write_presence_file(&net, &mut w).map_err(lib_err)?;
    }
    println!(
        "simulated n={} t={} seed={} -> {}",
        args.n,
        args.t,
        args.seed,
        args.out_dir.display()
    );
    Ok(())
}

fn fit_config(tol: f64, max_iters: usize, restarts: usize, seed: u64, map: MapArg) -> vem::FitConfig {
    vem::FitConfig {
        max_outer_iters: max_iters,
        elbo_rel_tol: tol,
        n_restarts: restarts,
        seed,
        map_mode: match map {
            MapArg::Marginal => MapMode::MarginalArgmax,
            MapArg::Viterbi => MapMode::Viterbi,
        },
        init: InitConfig::default(),
        ..vem::FitConfig::default()
    }
}

fn cmd_fit(args: FitArgs) -> CmdResult {
    let probe = if args.family.starts_with("finite:") {
        Some(load_network(&args.edges, args.presence.as_deref())?)
    } else {
        None
    };
    let family = parse_family(&args.family, probe.as_ref())?;
    let net = validated_network(&args.edges, args.presence.as_deref(), &family)?;
    let config = fit_config(args.tol, args.max_iters, args.restarts, args.seed, args.map);
    let result = vem::fit(&net, args.q, &family, &config).map_err(lib_err)?;
    if result.degenerate && !args.allow_degenerate {
        return Err(CmdError {
            code: EXIT_DEGENERATE,
            message: format!(
                "all restarts collapsed below {} occupied groups (rerun with --allow-degenerate to keep the fit)",
                args.q
            ),
        });
    }
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| validation_err(format!("{}: {e}", args.out_dir.display())))?;
    let mut w = create(&args.out_dir.join("params.json"))?;
    dio::write_params_file(&result.params, &mut w).map_err(lib_err)?;
    let mut w = create(&args.out_dir.join("labels.csv"))?;
    dio::write_labels_file(&result.map_labels, &mut w).map_err(lib_err)?;
    let mut w = create(&args.out_dir.join("elbo_trace.csv"))?;
    dio::write_elbo_trace_csv(&result.elbo_trace, &mut w).map_err(lib_err)?;
    println!(
        "fit q={} elbo={:.6} complete_ll={:.6} converged={} -> {}",
        args.q,
        result.final_elbo(),
        result.complete_ll,
        result.converged,
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_select(args: SelectArgs) -> CmdResult {
    if args.qmin == 0 || args.qmin > args.qmax {
        return Err(usage_err("need 1 <= qmin <= qmax"));
    }
    let probe = if args.family.starts_with("finite:") {
        Some(load_network(&args.edges, args.presence.as_deref())?)
    } else {
        None
    };
    let family = parse_family(&args.family, probe.as_ref())?;
    let net = validated_network(&args.edges, args.presence.as_deref(), &family)?;
    let config = fit_config(
        args.tol,
        args.max_iters,
        args.restarts,
        args.seed,
        MapArg::Marginal,
    );
    let q_values: Vec<usize> = (args.qmin..=args.qmax).collect();
    let result = selection::select_q(&net, &q_values, &family, &config).map_err(lib_err)?;
    if !args.allow_degenerate {
        if let Some(r) = result.records.iter().find(|r| r.degenerate) {
            eprintln!(
                "note: q={} collapsed to fewer occupied groups; reported as-is",
                r.n_groups
            );
        }
    }
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| validation_err(format!("{}: {e}", args.out_dir.display())))?;
    let doc = dio::SelectionDoc::from_result(&result);
    let mut w = create(&args.out_dir.join("selection.json"))?;
    dio::write_json(&doc, &mut w).map_err(lib_err)?;
    let mut w = create(&args.out_dir.join("elbow.csv"))?;
    dio::write_elbow_csv(&result.elbow, &mut w).map_err(lib_err)?;
    println!(
        "selected q={} by {} over {}..={} -> {}",
        result.chosen_q,
        doc.method,
        args.qmin,
        args.qmax,
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let est = dio::read_labels_file(open(&args.est_labels)?, &args.est_labels.display().to_string())
        .map_err(lib_err)?;
    let truth = dio::read_labels_file(
        open(&args.true_labels)?,
        &args.true_labels.display().to_string(),
    )
    .map_err(lib_err)?;
    let global_ari = eval::global_ari(&est, &truth).map_err(lib_err)?;
    let averaged_ari = eval::averaged_ari(&est, &truth).map_err(lib_err)?;
    let per_t_ari = eval::per_step_ari(&est, &truth).map_err(lib_err)?;
    let pi_mse = match (&args.est_params, &args.true_params) {
        (Some(ep), Some(tp)) => {
            let est_params = dio::read_params_file(open(ep)?).map_err(lib_err)?;
            let true_params = dio::read_params_file(open(tp)?).map_err(lib_err)?;
            Some(
                eval::pi_mse(
                    &est_params.transition,
                    &true_params.transition,
                    &est,
                    &truth,
                )
                .map_err(lib_err)?,
            )
        }
        _ => None,
    };
    let doc = dio::MetricsDoc {
        global_ari,
        averaged_ari,
        per_t_ari,
        pi_mse,
    };
    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            dio::write_json(&doc, &mut w).map_err(lib_err)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            dio::write_json(&doc, &mut stdout).map_err(lib_err)?;
            stdout.flush().ok();
        }
    }
    Ok(())
}

fn cmd_fluxes(args: FluxesArgs) -> CmdResult {
    let labels = dio::read_labels_file(open(&args.labels)?, &args.labels.display().to_string())
        .map_err(lib_err)?;
    let flux = eval::group_fluxes(&labels);
    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            dio::write_flux_csv(&flux, &mut w).map_err(lib_err)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            dio::write_flux_csv(&flux, &mut stdout).map_err(lib_err)?;
            stdout.flush().ok();
        }
    }
    Ok(())
}
