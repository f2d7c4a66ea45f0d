//! `iamax`: rewrite access policies to remove dormant permissions.

mod commands;
mod report;
mod run;
mod svg;

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iamax_core::attack::{DEFAULT_FILTER_FRACTION, DEFAULT_SAMPLES};
use iamax_core::embedding::{DEFAULT_DIM, DEFAULT_K_MAX, DEFAULT_K_MIN};
use iamax_core::model::DEFAULT_ACTION;
use serde::{Serialize, Serializer};

use crate::run::{CliError, Run, EXIT_VALIDATION};

#[derive(Debug, Parser, Serialize)]
#[command(name = "iamax", version, about = "Harden access policies by removing dormant permissions")]
struct Cli {
    /// Worker threads for the solver and parallel kernels; 1 is bit-reproducible.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a hardened policy for one instance.
    Optimize(OptimizeArgs),
    /// Solve for every group budget in a grid.
    SweepGroups(SweepArgs),
    /// Compare compromise impact before and after hardening.
    Attack(AttackArgs),
    /// Generate synthetic instances.
    Synth(SynthArgs),
    /// Cluster user embeddings and pick k at the SSE knee.
    Cluster(ClusterArgs),
    /// Build the user behavioural graph for an embedding trainer.
    Ubg(UbgArgs),
    /// Regenerate CSV and SVG artifacts from the JSON results in a directory.
    Report(ReportArgs),
}

fn ser_duration<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&humantime::format_duration(*d).to_string())
}

fn parse_duration(s: &str) -> Result<Duration, String> {
    let d = humantime::parse_duration(s).map_err(|e| e.to_string())?;
    if d.is_zero() {
        return Err("time limit must be positive".into());
    }
    Ok(d)
}

#[derive(Debug, Args, Serialize)]
struct SolveArgs {
    /// Instance JSON.
    #[arg(short, long)]
    instance: PathBuf,
    /// Time budget per solve, e.g. `900s` or `15m`.
    #[arg(long, default_value = "900s", value_parser = parse_duration)]
    #[serde(serialize_with = "ser_duration")]
    time_limit: Duration,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tolerated fraction of dormant permissions per user.
    #[arg(long, default_value_t = 0.15)]
    epsilon: f64,
    /// Multiplier on positive penalty slack.
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// Clamp the per-user penalty at zero.
    #[arg(long)]
    clamp_penalty: bool,
    /// Local-search restarts.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    restarts: u64,
    #[arg(short = 'o', long, default_value = "out")]
    out_dir: PathBuf,
}

/// `auto` or a non-negative number.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Alpha {
    Auto,
    Value(f64),
}

impl FromStr for Alpha {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Alpha::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(Alpha::Value(v)),
            _ => Err(format!("expected `auto` or a non-negative number, got `{s}`")),
        }
    }
}

impl Serialize for Alpha {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Alpha::Auto => s.serialize_str("auto"),
            Alpha::Value(v) => s.serialize_f64(*v),
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct OptimizeArgs {
    #[command(flatten)]
    solve: SolveArgs,
    /// Number of generated access groups.
    #[arg(short, long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    groups: u64,
    /// Embedding JSON; enables the homogeneity loop.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Diversity threshold; `auto` derives it from the clustering.
    #[arg(long, requires = "embeddings")]
    alpha: Option<Alpha>,
    #[arg(long, default_value_t = DEFAULT_K_MIN)]
    k_min: usize,
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    k_max: usize,
    /// Violated pairs cut per iteration.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    max_iterations: u64,
    /// Actions granted by every generated statement.
    #[arg(long = "action", default_value = DEFAULT_ACTION)]
    actions: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    solve: SolveArgs,
    /// Comma-separated group budgets; defaults to 1,5,10,...,100.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Random,
    Worst,
}

#[derive(Debug, Args, Serialize)]
struct AttackArgs {
    #[arg(short, long)]
    instance: PathBuf,
    /// Policy JSON written by `optimize`.
    #[arg(short, long)]
    policy: PathBuf,
    /// Membership JSON; defaults to `memberships.json` next to the policy.
    #[arg(long)]
    memberships: Option<PathBuf>,
    /// Numbers of compromised users.
    #[arg(short, long, value_delimiter = ',', default_value = "1,2,3")]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "random,worst")]
    modes: Vec<ModeArg>,
    /// Monte Carlo samples when exact enumeration is too large.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    /// Share of highest-degree users removed in worst mode.
    #[arg(long, default_value_t = DEFAULT_FILTER_FRACTION)]
    filter_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short = 'o', long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[command(subcommand)]
    kind: SynthKind,
    #[arg(short = 'o', long, default_value = "out", global = true)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,
    /// Embedding dimension for generated vectors.
    #[arg(long, default_value_t = DEFAULT_DIM, global = true)]
    dim: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum WeightArg {
    Distance,
    Similarity,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SynthKind {
    /// Instance with planted roles and matching embeddings.
    Planted {
        #[arg(long, default_value_t = 3)]
        roles: usize,
        #[arg(long, default_value_t = 5)]
        users_per_role: usize,
        #[arg(long, default_value_t = 4)]
        stores_per_role: usize,
        /// Stores accessed by every user.
        #[arg(long, default_value_t = 0)]
        overlap: usize,
        /// Permission count relative to access count per user.
        #[arg(long, default_value_t = 2.0)]
        dormancy: f64,
        /// Give each role's stores their own data type.
        #[arg(long)]
        typed: bool,
        /// Access follows this many projects that cut across roles.
        #[arg(long)]
        projects: Option<usize>,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
    },
    /// Random instances with the size statistics of the reference graphs.
    Shaped {
        /// 1-based reference shape indices; all by default.
        #[arg(long, value_delimiter = ',')]
        index: Vec<usize>,
    },
    /// Upsample base instances by embedding-weighted edge sampling.
    Batch {
        /// Base instance JSON files.
        #[arg(short, long, required = true)]
        instance: Vec<PathBuf>,
        /// Embedding JSON per base instance, in the same order; random
        /// vectors are drawn when omitted.
        #[arg(long)]
        embeddings: Vec<PathBuf>,
        /// Instances generated per base.
        #[arg(long, default_value_t = 35)]
        count: usize,
        #[arg(long, default_value_t = 10)]
        min_users: usize,
        #[arg(long, default_value_t = 150)]
        max_users: usize,
        #[arg(long, default_value_t = 50)]
        min_stores: usize,
        #[arg(long, default_value_t = 300)]
        max_stores: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, value_enum, default_value = "distance")]
        weight: WeightArg,
    },
}

#[derive(Debug, Args, Serialize)]
struct ClusterArgs {
    #[arg(short, long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K_MIN)]
    k_min: usize,
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    k_max: usize,
    /// Fixed k instead of knee selection.
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short = 'o', long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct UbgArgs {
    #[arg(short, long)]
    instance: PathBuf,
    /// Event CSV `actor,target,op_class,count`; recorded accesses are used
    /// when omitted.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Risk CSV `id,risk`.
    #[arg(long)]
    risk: Option<PathBuf>,
    #[arg(short = 'o', long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// Directory holding JSON results.
    #[arg(short, long, default_value = "out")]
    dir: PathBuf,
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let config = serde_json::to_value(cli).expect("arguments serialize");
    let threads = cli.threads as usize;
    let (name, out_dir, seed) = match &cli.command {
        Command::Optimize(a) => ("optimize", &a.solve.out_dir, Some(a.solve.seed)),
        Command::SweepGroups(a) => ("sweep-groups", &a.solve.out_dir, Some(a.solve.seed)),
        Command::Attack(a) => ("attack", &a.out_dir, Some(a.seed)),
        Command::Synth(a) => ("synth", &a.out_dir, Some(a.seed)),
        Command::Cluster(a) => ("cluster", &a.out_dir, Some(a.seed)),
        Command::Ubg(a) => ("ubg", &a.out_dir, None),
        Command::Report(a) => ("report", &a.dir, None),
    };
    let mut run = Run::new(name, out_dir, config, seed)?;
    if matches!(cli.command, Command::Report(_)) {
        run.set_manifest_name("report_manifest.json");
    }
    let outcome = match &cli.command {
        Command::Optimize(a) => commands::optimize(&mut run, a, threads),
        Command::SweepGroups(a) => commands::sweep(&mut run, a, threads),
        Command::Attack(a) => commands::attack(&mut run, a),
        Command::Synth(a) => commands::synth(&mut run, a),
        Command::Cluster(a) => commands::cluster(&mut run, a),
        Command::Ubg(a) => commands::ubg(&mut run, a),
        Command::Report(_) => commands::report(&mut run),
    };
    run.finish(&outcome)?;
    outcome
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => {
            let _ = e.print();
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or_default().trim_start_matches("error: ");
            let err = CliError::Usage(first.to_string());
            println!("{}", err.to_json());
            std::process::exit(EXIT_VALIDATION);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IAMAX_LOG", "warn")).init();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads as usize).build_global() {
        log::warn!("could not size the thread pool: {e}");
    }
    let code = match dispatch(&cli) {
        Ok(()) => run::EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", e.to_json());
            e.exit_code()
        }
    };
    std::process::exit(code);
}
