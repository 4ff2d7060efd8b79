use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use relaypc::exact::{
    build_kernel, exact_gradient, exact_gradient_marginal, little_delay, policy_chain,
    solve_relay_mdp, ExactModel, JointPolicy,
};
use relaypc::harness::experiment::{
    run_experiment_with, Aggregate, ExperimentCheckpoint, Progress, RunOptions,
};
use relaypc::harness::export::write_csv;
use relaypc::harness::{export, load_config, ExperimentConfig, ExportFormat};
use relaypc::policy::{PolicyParams, PolicyTable};
use relaypc::random::RngStream;

/// Delay-optimal power control for energy-harvesting relay networks.
#[derive(Debug, Parser)]
#[command(name = "relaypc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate every configured controller at the base parameters.
    Run(RunArgs),
    /// Simulate every configured controller over each sweep axis.
    Sweep(RunArgs),
    /// Check the exact-model oracles against each other on the configured instance.
    Oracle(OracleArgs),
    /// Solve the centralized relay MDP and export its optimal policy.
    SolveMdp(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML experiment config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `run.output`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Export format (overrides `run.format`).
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint file: resumed from when present, written when halted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Stop after simulating this many slots and write the checkpoint.
    #[arg(long, requires = "checkpoint")]
    halt_after: Option<u64>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Spread of the random policy parameters checked.
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    /// Number of gradient components compared with finite differences.
    #[arg(long, default_value_t = 20)]
    components: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ExportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ExportFormat::Csv,
            Format::Json => ExportFormat::Json,
        }
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] relaypc::Error),
    #[error("oracle check failed: {0}")]
    Check(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => e.exit_code() as u8,
            CliError::Check(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const ROW_TOL: f64 = 1e-12;
const FACTOR_TOL: f64 = 1e-9;

fn configure(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    if let Some(f) = args.format {
        cfg.format = f.into();
    }
    Ok(cfg)
}

fn simulate(args: &RunArgs, sweep: bool) -> Result<()> {
    let cfg = configure(&args.common)?;
    let resume = match &args.checkpoint {
        Some(path) if path.exists() => Some(ExperimentCheckpoint::load(path)?),
        _ => None,
    };
    let opts = RunOptions {
        sweep,
        halt_after: args.halt_after,
    };
    let results = match run_experiment_with(&cfg, opts, resume)? {
        Progress::Complete(r) => r,
        Progress::Halted(ck) => {
            let path = args
                .checkpoint
                .as_deref()
                .expect("halt_after requires a checkpoint");
            ck.save(path)?;
            println!("halted; checkpoint written to {}", path.display());
            return Ok(());
        }
    };
    let files = export(&results, &cfg, &cfg.output, cfg.format)?;
    if let Some(path) = &args.checkpoint {
        if path.exists() {
            fs::remove_file(path).map_err(relaypc::Error::from)?;
        }
    }
    println!(
        "{:<13} {:<18} {:>10} {:>9} {:>10} {:>10}",
        "controller", "point", "occupancy", "drop", "delay_ms", "reward"
    );
    for a in &results.aggregates {
        print_aggregate(a);
    }
    let failures: usize = results.aggregates.iter().map(|a| a.failures).sum();
    if failures > 0 {
        eprintln!("{failures} runs failed; see runs file for details");
    }
    println!("wrote {} files to {}", files.len(), cfg.output.display());
    Ok(())
}

fn print_aggregate(a: &Aggregate) {
    println!(
        "{:<13} {:<18} {:>10.4} {:>9.5} {:>10.4} {:>10.4}",
        a.controller.name(),
        format!("{}={}", a.axis.map_or("base", |x| x.name()), a.value),
        a.mean_occupancy,
        a.drop_rate,
        a.delay_ms,
        a.avg_reward
    );
}

fn exact_model(cfg: &ExperimentConfig) -> Result<ExactModel> {
    Ok(ExactModel::with_cap(
        &cfg.params,
        &cfg.channel,
        u128::from(cfg.exact.size_cap),
    )?)
}

#[derive(Debug, Serialize)]
struct OracleReport {
    states: usize,
    profiles: usize,
    kernel_rows: usize,
    max_row_error: f64,
    avg_reward: f64,
    expected_cycle_length: f64,
    gradient_norm: f64,
    max_factorization_error: f64,
    fd_components: usize,
    max_fd_error: f64,
    optimal_gain: f64,
    optimal_dominates: bool,
}

fn write_report<T: Serialize>(
    dir: &Path,
    name: &str,
    format: ExportFormat,
    rows: &[T],
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(relaypc::Error::from)?;
    let path = match format {
        ExportFormat::Csv => {
            let path = dir.join(format!("{name}.csv"));
            write_csv(&path, rows)?;
            path
        }
        ExportFormat::Json => {
            let path = dir.join(format!("{name}.json"));
            let text = serde_json::to_string_pretty(rows).map_err(relaypc::Error::from)?;
            fs::write(&path, text).map_err(relaypc::Error::from)?;
            path
        }
    };
    Ok(path)
}

fn oracle(args: &OracleArgs) -> Result<()> {
    let cfg = configure(&args.common)?;
    let model = exact_model(&cfg)?;
    let anchor = cfg.anchor.resolve(&cfg.params)?;
    let space = model.space();

    let kernel = build_kernel(&model);
    let mut kernel_rows = 0;
    let mut max_row_error = 0.0f64;
    for (_, _, row) in kernel.rows() {
        kernel_rows += 1;
        let sum: f64 = row.iter().map(|&(_, q)| q).sum();
        max_row_error = max_row_error.max((sum - 1.0).abs());
    }

    let seed = cfg.seeds.first().copied().unwrap_or(1);
    let mut rng = RngStream::new(seed, 0);
    let bins = cfg.channel.num_bins();
    let theta = PolicyParams {
        tables: (0..cfg.params.num_relays)
            .map(|k| PolicyTable::random(&cfg.params, bins, k, args.spread, &mut rng))
            .collect(),
    };
    let joint = exact_gradient(&model, &theta, &anchor)?;
    let marginal = exact_gradient_marginal(&model, &theta, &anchor)?;
    let max_factorization_error = joint
        .flatten()
        .iter()
        .zip(marginal.flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let exact = joint.flatten();
    let mut flat = theta.flatten();
    let mut probe = theta.clone();
    let fd_components = args.components.min(flat.len());
    let mut max_fd_error = 0.0f64;
    for _ in 0..fd_components {
        let i = (rng.uniform() * flat.len() as f64) as usize;
        let orig = flat[i];
        let mut eval = |x: f64| -> Result<f64> {
            flat[i] = x;
            probe.set_flat(&flat);
            Ok(policy_chain(&model, JointPolicy::Factored(&probe), &anchor)?.avg_reward)
        };
        let fd = (eval(orig + FD_STEP)? - eval(orig - FD_STEP)?) / (2.0 * FD_STEP);
        flat[i] = orig;
        max_fd_error = max_fd_error.max((fd - exact[i]).abs());
    }

    let optimal = solve_relay_mdp(&model, &anchor, cfg.exact.rvi_options())?;
    let optimal_gain = optimal.gain();
    let report = OracleReport {
        states: space.num_states(),
        profiles: space.num_profiles(),
        kernel_rows,
        max_row_error,
        avg_reward: joint.avg_reward,
        expected_cycle_length: joint.expected_cycle_length,
        gradient_norm: joint.norm(),
        max_factorization_error,
        fd_components,
        max_fd_error,
        optimal_gain,
        optimal_dominates: optimal_gain >= joint.avg_reward - 1e-9,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(relaypc::Error::from)?
    );
    let path = write_report(
        &cfg.output,
        "oracle",
        cfg.format,
        std::slice::from_ref(&report),
    )?;
    println!("wrote {}", path.display());

    let mut failed = Vec::new();
    if max_row_error > ROW_TOL {
        failed.push(format!("kernel row sums off by {max_row_error:e}"));
    }
    if max_factorization_error > FACTOR_TOL {
        failed.push(format!(
            "joint and marginal gradients differ by {max_factorization_error:e}"
        ));
    }
    if max_fd_error > FD_TOL {
        failed.push(format!(
            "gradient differs from finite differences by {max_fd_error:e}"
        ));
    }
    if !report.optimal_dominates {
        failed.push(format!(
            "optimal gain {optimal_gain} below random policy reward {}",
            joint.avg_reward
        ));
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed.join("; ")))
    }
}

#[derive(Debug, Serialize)]
struct PolicyRow {
    state: usize,
    buffer: usize,
    batteries: String,
    channel_bins: String,
    levels: String,
}

#[derive(Debug, Serialize)]
struct MdpSummary {
    gain: f64,
    rvi_gain: f64,
    iterations: usize,
    span: f64,
    mean_buffer: f64,
    drop_probability: f64,
    little_delay_ms: f64,
    expected_cycle_length: f64,
}

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn solve_mdp(args: &CommonArgs) -> Result<()> {
    let cfg = configure(args)?;
    let model = exact_model(&cfg)?;
    let anchor = cfg.anchor.resolve(&cfg.params)?;
    let solved = solve_relay_mdp(&model, &anchor, cfg.exact.rvi_options())?;
    let space = model.space();
    let rows: Vec<PolicyRow> = solved
        .policy
        .iter()
        .enumerate()
        .map(|(s, &a)| {
            let (b, c, e) = space.split(s);
            PolicyRow {
                state: s,
                buffer: b,
                batteries: join(space.battery_levels(e)),
                channel_bins: join((0..space.num_relays()).map(|k| {
                    let (sr, rd) = space.channel_bins(c, k);
                    format!("{sr}/{rd}")
                })),
                levels: join(space.profile(a).0),
            }
        })
        .collect();
    let chain = &solved.chain;
    let drop_probability = chain.drop_probability(cfg.params.arrivals_per_slot());
    let summary = MdpSummary {
        gain: solved.gain(),
        rvi_gain: solved.rvi_gain,
        iterations: solved.iterations,
        span: solved.span,
        mean_buffer: chain.mean_buffer,
        drop_probability,
        little_delay_ms: little_delay(chain.mean_buffer, cfg.params.arrival_rate, drop_probability),
        expected_cycle_length: chain.expected_cycle_length(),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).map_err(relaypc::Error::from)?
    );
    let policy = write_report(&cfg.output, "mdp_policy", cfg.format, &rows)?;
    let sum = write_report(
        &cfg.output,
        "mdp_summary",
        cfg.format,
        std::slice::from_ref(&summary),
    )?;
    println!("wrote {} and {}", policy.display(), sum.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(a) => simulate(a, false),
        Command::Sweep(a) => simulate(a, true),
        Command::Oracle(a) => oracle(a),
        Command::SolveMdp(a) => solve_mdp(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
