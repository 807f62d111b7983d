use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use tvgraph_core::experiment::{run_csv, run_diagnose, run_synth, DataSource, RunSpec, RunSummary};
use tvgraph_core::io::IngestOptions;
use tvgraph_core::models::{ModelKind, ModelSpec};
use tvgraph_core::oracle::OracleOptions;
use tvgraph_core::solver::{SolverConfig, Variant};
use tvgraph_core::synth::Scenario;

const SEED_ENV: &str = "TVGRAPH_SEED";

/// Online inference of time-varying graphs from streaming graph signals.
#[derive(Debug, Parser)]
#[command(name = "tvgraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic graph trajectory and track it online.
    #[command(args_override_self = true)]
    Synth(RunArgs),
    /// Stream a CSV file (rows are time, columns are nodes) through the solver.
    #[command(args_override_self = true)]
    Run(RunArgs),
    /// Synthetic run with a per-step check of the tracking error bound.
    #[command(args_override_self = true)]
    Diagnose(RunArgs),
}

impl Command {
    fn args(&self) -> &RunArgs {
        match self {
            Command::Synth(a) | Command::Run(a) | Command::Diagnose(a) => a,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Run(_) => "run",
            Command::Diagnose(_) => "diagnose",
        }
    }
}

#[derive(Debug, Clone, Args)]
struct RunArgs {
    /// Graph model: ggm, sem or sbm.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Solver variant: pc, co, cc, sgd, pc1 or cc1.
    #[arg(long, default_value = "pc")]
    variant: Variant,
    /// Number of nodes (synthetic data).
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Number of streamed samples (synthetic data).
    #[arg(long, default_value_t = 1000)]
    t: usize,
    /// Synthetic scenario: piecewise, smooth or static.
    #[arg(long, default_value = "piecewise")]
    scenario: Scenario,
    /// Seed-graph edge probability; defaults to a sparse size-dependent value.
    #[arg(long)]
    density: Option<f64>,
    /// Forgetting factor of the covariance average.
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    /// Average every sample with equal weight instead of forgetting.
    #[arg(long)]
    infinite_memory: bool,
    /// Prediction step size.
    #[arg(long, default_value_t = 1e-3)]
    alpha: f64,
    /// Correction step size.
    #[arg(long, default_value_t = 1e-3)]
    beta: f64,
    /// SEM sparsity weight.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// SBM Frobenius weight.
    #[arg(long, default_value_t = 10.0)]
    lambda1: f64,
    /// SBM log-degree weight.
    #[arg(long, default_value_t = 10.0)]
    lambda2: f64,
    /// Smallest admissible GGM precision eigenvalue.
    #[arg(long, default_value_t = 1e-3)]
    xi: f64,
    /// Largest admissible GGM precision eigenvalue.
    #[arg(long, default_value_t = 1e3)]
    chi: f64,
    /// Prediction steps per sample (defaults to the variant's).
    #[arg(long)]
    p_steps: Option<usize>,
    /// Correction steps per sample (defaults to the variant's).
    #[arg(long)]
    c_steps: Option<usize>,
    /// Samples used to initialize the covariance (defaults to the node count).
    #[arg(long)]
    warmup: Option<usize>,
    /// Random seed; the TVGRAPH_SEED environment variable takes precedence.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Input CSV with a header row of node names.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Center and scale every CSV column over the whole file.
    #[arg(long)]
    standardize: bool,
    /// Standardize with the sample (T - 1) rather than population deviation.
    #[arg(long)]
    sample_std: bool,
    /// Export the estimate after this 1-based sample as an edge list (repeatable).
    #[arg(long)]
    snapshot: Vec<usize>,
    /// Solve the offline problem after every sample and record the NSE.
    #[arg(long)]
    oracle: bool,
    /// Stopping tolerance of the offline solver.
    #[arg(long, default_value_t = 1e-9)]
    oracle_tol: f64,
    /// Threads for the offline solves (defaults to the available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Record per-step wall-clock times in the metrics file.
    #[arg(long)]
    timing: bool,
    /// Output directory.
    #[arg(long, default_value = "tvgraph-out")]
    out: PathBuf,
    /// Plain-text file of key=value lines; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn usage_error(kind: ErrorKind, message: impl std::fmt::Display, sub: &str) -> clap::Error {
    let mut cmd = Cli::command();
    cmd.build();
    match cmd.find_subcommand_mut(sub) {
        Some(sc) => sc.clone().error(kind, message),
        None => cmd.error(kind, message),
    }
}

/// Turns the config file into argument tokens placed before the user's own, so
/// that later (command-line) occurrences override them.
fn config_tokens(path: &PathBuf, sub: &str, user: &RunArgs) -> Result<Vec<OsString>, clap::Error> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        usage_error(ErrorKind::Io, format!("cannot read config {}: {e}", path.display()), sub)
    })?;
    let cmd = Cli::command();
    let sc = cmd.find_subcommand(sub).expect("subcommand exists");
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(usage_error(
                ErrorKind::InvalidValue,
                format!("config line {}: expected key=value, found `{line}`", k + 1),
                sub,
            ));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let arg = sc
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| {
                usage_error(ErrorKind::UnknownArgument, format!("config line {}: unknown key `{key}`", k + 1), sub)
            })?;
        if key == "snapshot" && !user.snapshot.is_empty() {
            continue;
        }
        if arg.get_action().takes_values() {
            out.push(OsString::from(format!("--{key}={value}")));
        } else {
            match value {
                "true" | "1" | "yes" => out.push(OsString::from(format!("--{key}"))),
                "false" | "0" | "no" => {}
                other => {
                    return Err(usage_error(
                        ErrorKind::InvalidValue,
                        format!("config line {}: `{key}` expects true or false, found `{other}`", k + 1),
                        sub,
                    ))
                }
            }
        }
    }
    Ok(out)
}

fn parse(raw: Vec<OsString>) -> Result<Cli, clap::Error> {
    let cli = Cli::try_parse_from(&raw)?;
    let Some(path) = cli.command.args().config.clone() else {
        return Ok(cli);
    };
    let sub = cli.command.name();
    let tokens = config_tokens(&path, sub, cli.command.args())?;
    let at = raw.iter().position(|a| a == sub).map_or(raw.len(), |i| i + 1);
    let mut argv = raw[..at].to_vec();
    argv.extend(tokens);
    argv.extend_from_slice(&raw[at..]);
    Cli::try_parse_from(argv)
}

fn build_spec(command: &Command) -> Result<RunSpec, clap::Error> {
    let a = command.args();
    let sub = command.name();
    let kind = a
        .model
        .ok_or_else(|| usage_error(ErrorKind::MissingRequiredArgument, "--model <ggm|sem|sbm> is required", sub))?;
    let model = match kind {
        ModelKind::Ggm => ModelSpec::Ggm { xi: a.xi, chi: a.chi },
        ModelKind::Sem => ModelSpec::Sem { lambda: a.lambda },
        ModelKind::Sbm => ModelSpec::Sbm { lambda1: a.lambda1, lambda2: a.lambda2 },
    };
    let mut solver = SolverConfig::for_variant(a.variant, a.alpha, a.beta);
    if let Some(p) = a.p_steps {
        solver.p_steps = p;
    }
    if let Some(c) = a.c_steps {
        solver.c_steps = c;
    }
    let seed = match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse::<u64>().map_err(|_| {
            usage_error(ErrorKind::InvalidValue, format!("{SEED_ENV}=`{v}` is not an unsigned integer"), sub)
        })?,
        Err(_) => a.seed,
    };
    let source = match command {
        Command::Run(_) => {
            let path = a
                .csv
                .clone()
                .ok_or_else(|| usage_error(ErrorKind::MissingRequiredArgument, "run needs --csv <FILE>", sub))?;
            DataSource::Csv {
                path,
                options: IngestOptions { standardize: a.standardize, sample_std: a.sample_std },
            }
        }
        _ => {
            if a.csv.is_some() {
                return Err(usage_error(ErrorKind::ArgumentConflict, "--csv is only read by `run`", sub));
            }
            DataSource::Synthetic { scenario: a.scenario, n: a.n, horizon: a.t, density: a.density }
        }
    };
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok(RunSpec {
        model,
        solver,
        gamma: (!a.infinite_memory).then_some(a.gamma),
        warmup: a.warmup,
        seed,
        source,
        snapshots: a.snapshot.clone(),
        oracle: a.oracle,
        oracle_options: OracleOptions { tol: a.oracle_tol, ..OracleOptions::default() },
        jobs,
        timing: a.timing,
        out: a.out.clone(),
    })
}

fn report(spec: &RunSpec, summary: &RunSummary, mean_nse: Option<f64>) {
    println!("steps: {}", summary.steps);
    println!("mean step time: {:.3e} s", summary.mean_step_seconds);
    if let Some(nse) = mean_nse {
        println!("mean NSE: {nse:.4e}");
    }
    println!("max time-gradient norm: {:.4e}", summary.c0_estimate);
    if let (Some(v), Some(g)) = (summary.violations, summary.gaps) {
        println!("bound violations: {v}");
        println!("steps with an unconverged reference solve: {g}");
    }
    println!("wrote {} files to {}", summary.files.len() + 1, spec.out.display());
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let spec = match build_spec(&cli.command) {
        Ok(spec) => spec,
        Err(e) => e.exit(),
    };
    let outcome = match &cli.command {
        Command::Synth(_) => run_synth(&spec).map(|(summary, records)| {
            let nses: Vec<f64> = records.iter().filter_map(|r| r.nse).collect();
            let mean = (!nses.is_empty()).then(|| nses.iter().sum::<f64>() / nses.len() as f64);
            (summary, mean)
        }),
        Command::Run(_) => run_csv(&spec).map(|s| (s, None)),
        Command::Diagnose(_) => run_diagnose(&spec).map(|s| (s, None)),
    };
    match outcome {
        Ok((summary, mean_nse)) => {
            report(&spec, &summary, mean_nse);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
