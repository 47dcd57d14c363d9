//! Command-line front end: generate benchmark instances, build value-table
//! caches, roll policies over seeded trajectories, and aggregate reports.

use clap::{Args, Parser, Subcommand};
use mobiprod::harness::{
    aggregate_records, build_or_load_tables, parse_trajectory_csv, sample_path,
    simulate_trajectory, table_cache_name, trajectories_to_csv, trajectory_seed, HarnessError,
    TrajectoryRecord,
};
use mobiprod::instances::{generate, GenSpec, Instance, InstanceError, SetId};
use mobiprod::optimizer::OptimizerError;
use mobiprod::policies::{BeliefMode, PolicyConfig, PolicyContext, PolicyError, PolicyId};
use mobiprod::sl_value::{extract_facets, BlendSpec, SlValueConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mobiprod",
    about = "Solver and simulation toolkit for multi-location production-inventory systems \
             with relocatable capacity and Markov-modulated demand",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark instance set as JSON files.
    Gen(GenArgs),
    /// Build (and cache) the single-location value tables for an instance.
    Tables(TablesArgs),
    /// Simulate seeded trajectories under one policy, emitting a CSV of
    /// per-trajectory costs.
    Simulate(SimulateArgs),
    /// Aggregate per-trajectory CSVs into a report with savings against the
    /// benchmark policy.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Instance set to generate (A or B).
    #[arg(long)]
    set: String,
    /// Master seed for demand-model sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the instance files.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TablesArgs {
    /// Instance file.
    #[arg(long)]
    instance: PathBuf,
    /// Override the instance's discount factor.
    #[arg(long)]
    beta: Option<f64>,
    /// Belief-grid step as a fraction, e.g. 1/3.
    #[arg(long, default_value = "1/3")]
    grid: String,
    /// Directory for the binary table cache.
    #[arg(long, default_value = "tables")]
    cache_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Instance file.
    #[arg(long)]
    instance: PathBuf,
    /// Policy id: MP, MNF, DNF, JR, LAJ, GLR, or LAGLR.
    #[arg(long)]
    policy: String,
    /// Blend coefficient in [0, 1].
    #[arg(long, default_value_t = 0.2)]
    theta: f64,
    /// Belief handling: po, ss, or co.
    #[arg(long, default_value = "po")]
    mode: String,
    /// Number of trajectories.
    #[arg(long, default_value_t = 50)]
    reps: usize,
    /// Periods per trajectory; defaults to the instance horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Master seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Belief-grid step as a fraction, e.g. 1/3.
    #[arg(long, default_value = "1/3")]
    grid: String,
    /// Table cache directory (tables are rebuilt when absent).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Per-trajectory CSV files to aggregate.
    #[arg(long, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Directory whose *.csv files are all aggregated.
    #[arg(long)]
    in_dir: Option<PathBuf>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write zeros in the timing column so reports are byte-reproducible.
    #[arg(long)]
    omit_timing: bool,
}

/// Exit codes: 2 for generation/validation problems, 3 for solver budget
/// exhaustion, 1 otherwise.
fn exit_code_for(err: &CliError) -> u8 {
    match err {
        CliError::Instance(_) | CliError::Usage(_) => 2,
        CliError::Harness(HarnessError::Policy(PolicyError::SolverStatus { status, .. }))
            if matches!(
                status,
                mobiprod::optimizer::SolveStatus::BudgetExceeded
            ) =>
        {
            3
        }
        CliError::Harness(HarnessError::Policy(PolicyError::Optimizer(
            OptimizerError::InfeasibleProblem,
        ))) => 1,
        CliError::Harness(_) => 1,
        CliError::Io(_) => 1,
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn parse_grid(text: &str) -> Result<u32, CliError> {
    let denom = match text.strip_prefix("1/") {
        Some(d) => d.parse::<u32>().ok(),
        None => text.parse::<u32>().ok(),
    };
    match denom {
        Some(k) if k >= 1 => Ok(k),
        _ => Err(CliError::Usage(format!(
            "grid must be 1/k for an integer k >= 1, got {text:?}"
        ))),
    }
}

fn write_or_print(path: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            std::fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let set: SetId = args
        .set
        .parse()
        .map_err(|e: InstanceError| CliError::Usage(e.to_string()))?;
    let instances = generate(GenSpec {
        set,
        master_seed: args.seed,
    })?;
    std::fs::create_dir_all(&args.out_dir)?;
    for inst in &instances {
        inst.validate()?;
        let path = args.out_dir.join(format!("{}.json", inst.meta.id));
        inst.save(&path)?;
    }
    eprintln!(
        "wrote {} instances to {}",
        instances.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_tables(args: TablesArgs) -> Result<(), CliError> {
    let mut instance = Instance::load(&args.instance)?;
    if let Some(beta) = args.beta {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(CliError::Usage(format!("beta {beta} outside (0,1)")));
        }
        instance.discount = beta;
    }
    let resolution = parse_grid(&args.grid)?;
    let artifacts = build_or_load_tables(
        &instance,
        resolution,
        &SlValueConfig::default(),
        Some(&args.cache_dir),
    )?;
    eprintln!(
        "tables ready: {} grid points x {} locations -> {}",
        artifacts.grid.len(),
        artifacts.tables.len(),
        args.cache_dir
            .join(table_cache_name(&instance, resolution))
            .display()
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let instance = Instance::load(&args.instance)?;
    let policy: PolicyId = args
        .policy
        .parse()
        .map_err(CliError::Usage)?;
    let mode: BeliefMode = args.mode.parse().map_err(CliError::Usage)?;
    let theta = BlendSpec::new(args.theta)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let config = PolicyConfig {
        policy,
        theta,
        mode,
    };
    for w in config.warnings() {
        eprintln!("warning: {w}");
    }
    let resolution = parse_grid(&args.grid)?;
    let horizon = args.horizon.unwrap_or(instance.horizon);
    let artifacts = build_or_load_tables(
        &instance,
        resolution,
        &SlValueConfig::default(),
        args.cache_dir.as_deref(),
    )?;
    let facets = if policy.needs_facets() {
        Some(
            artifacts
                .tables
                .iter()
                .map(|t| extract_facets(t, theta))
                .collect::<Result<Vec<_>, _>>()
                .map_err(HarnessError::Value)?,
        )
    } else {
        None
    };
    let ctx = PolicyContext::new(
        &instance,
        &artifacts.tables,
        facets.as_deref(),
        theta,
    );
    let initial = mobiprod::harness::initial_module_config(&instance, &artifacts)?;
    let mut records = Vec::with_capacity(args.reps);
    for r in 0..args.reps {
        let path = sample_path(
            &instance,
            horizon,
            trajectory_seed(args.seed, &instance, r),
        )?;
        let started = std::time::Instant::now();
        let result = simulate_trajectory(&ctx, &config, &initial, &path)?;
        let sec = started.elapsed().as_secs_f64();
        let sum = |f: fn(&mobiprod::harness::PeriodCost) -> f64| -> f64 {
            result.periods.iter().map(f).sum()
        };
        records.push(TrajectoryRecord {
            instance_id: instance.meta.id.clone(),
            policy,
            theta: theta.theta(),
            mode,
            trajectory: r,
            discounted_cost: result.discounted_total,
            undiscounted_cost: result.undiscounted_total,
            holding: sum(|p| p.holding),
            backorder: sum(|p| p.backorder),
            transship: sum(|p| p.transship),
            module_move: sum(|p| p.module_move),
            sec,
        });
    }
    write_or_print(&args.out, &trajectories_to_csv(&records))?;
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut files = args.inputs.clone();
    if let Some(dir) = &args.in_dir {
        let mut found: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == "csv").unwrap_or(false))
            .collect();
        found.sort();
        files.extend(found);
    }
    if files.is_empty() {
        return Err(CliError::Usage("no input CSVs given".into()));
    }
    let mut records = Vec::new();
    for f in &files {
        let text = std::fs::read_to_string(f)?;
        records.extend(parse_trajectory_csv(&text)?);
    }
    let report = aggregate_records(&records, !args.omit_timing);
    write_or_print(&args.out, &report.to_csv())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Tables(args) => cmd_tables(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
