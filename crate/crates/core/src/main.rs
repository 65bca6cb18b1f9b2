//! `popproto` command line: single runs, experiment sweeps, and the
//! acceptance check suite.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use popproto::engine::Runner;
use popproto::harness::acceptance;
use popproto::harness::emit;
use popproto::harness::fault::FaultSpec;
use popproto::harness::sweep::sweep;
use popproto::harness::trace::{TraceWriter, TRACE_MAX_N};
use popproto::harness::{ExperimentSpec, OutFormat, SpecFile};
use popproto::profile::Profile;
use popproto::suites::{make_suite, PROTOCOL_NAMES};

#[derive(Parser)]
#[command(
    name = "popproto",
    about = "Population-protocol simulator for approximate and exact population counting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// Protocol name (see `--list`).
    #[arg(long)]
    protocol: Option<String>,
    /// Population size(s); repeatable.
    #[arg(long = "n")]
    n: Vec<u64>,
    /// Number of seeds (0..count).
    #[arg(long)]
    seeds: Option<u32>,
    /// Explicit seed (repeatable; overrides --seeds).
    #[arg(long)]
    seed: Vec<u64>,
    /// Constant profile: desk (default) or paper.
    #[arg(long)]
    profile: Option<String>,
    /// Interaction budget per run.
    #[arg(long)]
    max_interactions: Option<u64>,
    /// Extra quiet interactions before declaring stabilization.
    #[arg(long)]
    probe_window: Option<u64>,
    /// Constant override, `key=value`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Fault descriptor, e.g. `corrupt-k:-3@pre-errordetect`.
    #[arg(long)]
    fault: Option<String>,
    /// Output file (.csv or .json); repeatable.
    #[arg(long = "out")]
    outputs: Vec<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single (protocol, n, seed) cell.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Write an interaction trace (NDJSON); populations up to 256.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run every cell of an experiment and aggregate.
    Sweep {
        /// Experiment file (TOML); flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the acceptance suite; exits 0 only if every criterion passes.
    Check {
        /// Criterion ids to run (e.g. `--only 1,5,9`); default all.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
    /// List the available protocols.
    List,
}

fn build_spec(config: Option<&PathBuf>, common: &CommonOpts) -> Result<ExperimentSpec> {
    let mut spec = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            SpecFile::parse(&text)?.resolve()?
        }
        None => {
            let protocol = common
                .protocol
                .as_deref()
                .context("--protocol is required without --config")?;
            ExperimentSpec::new(protocol, vec![], vec![], Profile::desk())
        }
    };
    if let Some(protocol) = &common.protocol {
        spec.protocol = protocol.clone();
    }
    if !common.n.is_empty() {
        spec.ns = common.n.iter().map(|&v| v as usize).collect();
    }
    if !common.seed.is_empty() {
        spec.seeds = common.seed.clone();
    } else if let Some(count) = common.seeds {
        spec.seeds = (0..count as u64).collect();
    }
    if let Some(profile) = &common.profile {
        spec.profile = Profile::by_name(profile)?;
    }
    for entry in &common.overrides {
        let (key, value) = entry
            .split_once('=')
            .with_context(|| format!("override `{entry}` is not key=value"))?;
        spec.profile.apply_override(key, value)?;
    }
    if common.max_interactions.is_some() {
        spec.max_interactions = common.max_interactions;
    }
    if common.probe_window.is_some() {
        spec.probe_window = common.probe_window;
    }
    if let Some(fault) = &common.fault {
        spec.fault = Some(FaultSpec::parse(fault)?);
    }
    for path in &common.outputs {
        let format = OutFormat::from_path(path)?;
        spec.outputs.push((format, path.clone()));
    }
    if spec.seeds.is_empty() {
        spec.seeds = vec![0];
    }
    Ok(spec)
}

fn cmd_run(common: &CommonOpts, trace: Option<&PathBuf>) -> Result<()> {
    let spec = build_spec(None, common)?;
    if spec.ns.is_empty() {
        bail!("--n is required");
    }
    if spec.ns.len() != 1 || spec.seeds.len() != 1 {
        bail!("`run` executes exactly one cell; use `sweep` for more");
    }
    spec.validate()?;
    let n = spec.ns[0];
    let seed = spec.seeds[0];
    let suite = make_suite(&spec.protocol, &spec.profile)?;
    let limits = spec.limits_for(n);

    let mut runner = Runner::new(suite.as_ref(), n, seed, limits)?;
    if let Some(fault) = &spec.fault {
        runner = runner.with_fault(fault.hook());
    }
    if let Some(path) = trace {
        if n > TRACE_MAX_N {
            bail!("--trace is limited to n <= {TRACE_MAX_N}");
        }
        let file = BufWriter::new(File::create(path)?);
        runner = runner.with_observer(Box::new(TraceWriter::new(file, suite.tracked_vars())));
    }
    runner.run_to_end()?;
    let metrics = runner.metrics();

    println!(
        "{} n={} seed={} profile={}",
        spec.protocol, n, seed, spec.profile
    );
    println!(
        "  correct={} t_convergence={:?} t_stabilization={:?} interactions={}",
        metrics.correct, metrics.t_convergence, metrics.t_stabilization, metrics.final_interactions
    );
    println!(
        "  distinct_states={} error_raised={} digest={:016x}",
        metrics.state_usage.distinct_composite_states, metrics.error_raised,
        metrics.output_history_digest
    );
    for var in &metrics.state_usage.per_var {
        println!("  var {:<12} [{}, {}]", var.name, var.min, var.max);
    }

    if !spec.outputs.is_empty() {
        let result = popproto::harness::sweep::ExperimentResult {
            protocol: spec.protocol.clone(),
            profile: spec.profile.name.clone(),
            cells: vec![popproto::harness::sweep::CellRun { n, seed, metrics }],
            aggregates: vec![],
        };
        for (format, path) in &spec.outputs {
            emit::emit(&result, *format, path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_sweep(config: Option<&PathBuf>, common: &CommonOpts) -> Result<()> {
    let spec = build_spec(config, common)?;
    spec.validate()?;
    let result = sweep(&spec)?;
    for agg in &result.aggregates {
        println!(
            "{} n={} success={:.1}% median_tc={:?} p95_tc={:?} fitted_c={:?}",
            agg.protocol,
            agg.n,
            agg.success_rate * 100.0,
            agg.median_tc,
            agg.p95_tc,
            agg.fitted_c
        );
    }
    if spec.outputs.is_empty() {
        println!("(no --out given; results not written)");
    }
    for (format, path) in &spec.outputs {
        emit::emit(&result, *format, path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_check(only: &[usize]) -> ExitCode {
    let filter = if only.is_empty() { None } else { Some(only) };
    let outcome = acceptance::run_all(filter.map(|f| f as &[usize]), |report| {
        println!("{}", report.line());
    });
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        outcome.reports.iter().filter(|r| r.pass).count(),
        outcome.reports.len(),
        outcome.elapsed_secs
    );
    if outcome.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, trace } => cmd_run(common, trace.as_ref()).map(|_| ExitCode::SUCCESS),
        Command::Sweep { config, common } => {
            cmd_sweep(config.as_ref(), common).map(|_| ExitCode::SUCCESS)
        }
        Command::Check { only } => Ok(cmd_check(only)),
        Command::List => {
            for name in PROTOCOL_NAMES {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
