//! Command-line interface: `emas run ...` and `emas summarize ...`.
//!
//! Exit codes: 0 on a normal stop, 2 when a population went extinct, 1 on a
//! configuration or usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::config::{EngineKind, RunConfig};
use crate::contract::CheckMode;
use crate::engine_async::DispatchPolicy;
use crate::error::{EmasError, Result};
use crate::islands::Topology;
use crate::run::{ClockKind, StopReason};
use crate::summary::{summarize, write_series};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_EXTINCT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "emas", version, about = "Evolutionary multi-agent system optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one or more optimizations and write metrics CSV.
    Run(Box<RunArgs>),
    /// Aggregate run CSVs into a per-scenario table.
    Summarize(SummarizeArgs),
}

fn parse_duration(s: &str) -> std::result::Result<Duration, String> {
    humantime::parse_duration(s).map_err(|e| format!("{e} (expected e.g. 600s, 10m, 250ms)"))
}

#[derive(Debug, Args)]
struct ParamArgs {
    /// Agents per island at start.
    #[arg(long)]
    initial_size: Option<usize>,
    /// Energy of each initial agent.
    #[arg(long)]
    initial_energy: Option<u64>,
    /// Agents with more energy than this reproduce.
    #[arg(long)]
    reproduction_threshold: Option<u64>,
    /// Energy a parent gives its child.
    #[arg(long)]
    reproduction_transfer: Option<u64>,
    /// Energy a loser pays the winner of a fight.
    #[arg(long)]
    fight_transfer: Option<u64>,
    /// Agents per fight meeting.
    #[arg(long)]
    fight_arena_size: Option<usize>,
    /// Per-agent, per-step chance to migrate.
    #[arg(long)]
    migration_probability: Option<f64>,
    /// Agents need more energy than this to migrate.
    #[arg(long)]
    migration_energy_min: Option<u64>,
    /// Share of coordinates a mutation perturbs.
    #[arg(long)]
    mutation_rate: Option<f64>,
    /// Standard deviation of the Gaussian perturbation.
    #[arg(long)]
    mutation_range: Option<f64>,
    /// Chance that a child is mutated.
    #[arg(long)]
    mutation_probability: Option<f64>,
    /// Chance that a child is a crossover of both parents.
    #[arg(long)]
    recombination_probability: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synchronous step loop or asynchronous actors.
    #[arg(long, value_parser = ["sync", "async"])]
    engine: Option<String>,
    /// Dispatch policy of the async engine: own | pool:N | single.
    #[arg(long)]
    dispatch: Option<DispatchPolicy>,
    /// Benchmark function (rastrigin).
    #[arg(long)]
    problem: Option<String>,
    /// Dimension of the search space.
    #[arg(long)]
    problem_size: Option<usize>,
    #[command(flatten)]
    params: ParamArgs,
    /// Number of islands.
    #[arg(long)]
    islands: Option<usize>,
    /// Migration topology: ring | complete | experiment.
    #[arg(long)]
    topology: Option<Topology>,
    /// Listen address of this node (TCP migration).
    #[arg(long)]
    listen: Option<String>,
    /// Peer node address; repeat for several peers.
    #[arg(long = "peer")]
    peers: Vec<String>,
    /// Island hosted by this node (TCP migration).
    #[arg(long)]
    island_id: Option<u32>,
    /// Base random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run N repetitions with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    repeat: u64,
    /// Wall-time (or step-clock) budget, e.g. 30s or 10m.
    #[arg(long, value_parser = parse_duration)]
    duration: Option<Duration>,
    /// Stop after this many objective evaluations.
    #[arg(long)]
    max_evals: Option<u64>,
    /// Stop after this many steps (sync) or meetings (async).
    #[arg(long)]
    max_steps: Option<u64>,
    /// Stop once the best objective is at or below this value.
    #[arg(long)]
    target_fitness: Option<f64>,
    /// Interval between metric rows, e.g. 1s.
    #[arg(long, value_parser = parse_duration)]
    snapshot_interval: Option<Duration>,
    /// Check every action against its contract.
    #[arg(long)]
    checked: bool,
    /// Time base for metrics: wall | steps (steps is reproducible).
    #[arg(long, value_parser = ["wall", "steps"])]
    clock: Option<String>,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    /// Run CSV files.
    files: Vec<PathBuf>,
    /// Directory for gnuplot series (time vs best, time vs evaluations).
    #[arg(long)]
    series_dir: Option<PathBuf>,
}

impl RunArgs {
    fn to_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($target:expr => $value:expr),* $(,)?) => {$(
                if let Some(v) = $value.clone() {
                    $target = v;
                }
            )*};
        }
        let p = &self.params;
        set! {
            cfg.params.initial_size => p.initial_size,
            cfg.params.initial_energy => p.initial_energy,
            cfg.params.reproduction_threshold => p.reproduction_threshold,
            cfg.params.reproduction_transfer => p.reproduction_transfer,
            cfg.params.fight_transfer => p.fight_transfer,
            cfg.params.fight_arena_size => p.fight_arena_size,
            cfg.params.migration_probability => p.migration_probability,
            cfg.params.migration_energy_min => p.migration_energy_min,
            cfg.params.mutation_rate => p.mutation_rate,
            cfg.params.mutation_range => p.mutation_range,
            cfg.params.mutation_probability => p.mutation_probability,
            cfg.params.recombination_probability => p.recombination_probability,
            cfg.params.problem_size => self.problem_size,
            cfg.problem => self.problem,
            cfg.cluster.islands => self.islands,
            cfg.cluster.topology => self.topology,
            cfg.seed => self.seed,
        }
        if let Some(engine) = &self.engine {
            cfg.engine = engine.parse::<EngineKind>()?;
        }
        if let Some(clock) = &self.clock {
            cfg.clock = if clock == "steps" { ClockKind::Steps } else { ClockKind::Wall };
        }
        if self.dispatch.is_some() {
            cfg.dispatch = self.dispatch;
        }
        if self.duration.is_some() || self.max_evals.is_some() || self.max_steps.is_some() || self.target_fitness.is_some() {
            cfg.stop.duration = self.duration.or(cfg.stop.duration);
            cfg.stop.max_evaluations = self.max_evals.or(cfg.stop.max_evaluations);
            cfg.stop.max_steps = self.max_steps.or(cfg.stop.max_steps);
            cfg.stop.target_objective = self.target_fitness.or(cfg.stop.target_objective);
        }
        if let Some(interval) = self.snapshot_interval {
            cfg.snapshot_interval_ms = interval.as_millis() as u64;
        }
        if self.checked {
            cfg.check = CheckMode::Checked;
        }
        if self.listen.is_some() {
            cfg.tcp.listen = self.listen.clone();
        }
        if !self.peers.is_empty() {
            cfg.tcp.peers = self.peers.clone();
        }
        if self.island_id.is_some() {
            cfg.tcp.island_id = self.island_id;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if self.repeat == 0 {
            return Err(EmasError::Config("--repeat must be at least 1".into()));
        }
        if self.repeat > 1 && cfg.out.is_none() {
            return Err(EmasError::Config("--repeat needs --out".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Output path of repetition `i`: `runs/x.csv` becomes `runs/x-<i>.csv`.
pub fn repeat_path(out: &Path, i: u64) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}-{i}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{i}"),
    };
    out.with_file_name(name)
}

fn run_command(args: &RunArgs) -> Result<i32> {
    let base = args.to_config()?;
    if args.print_config {
        print!("{}", toml::to_string(&base).map_err(|e| EmasError::Config(e.to_string()))?);
        return Ok(EXIT_OK);
    }
    let mut code = EXIT_OK;
    for i in 0..args.repeat {
        let mut cfg = base.clone();
        cfg.seed = base.seed.wrapping_add(i);
        if args.repeat > 1 {
            cfg.out = base.out.as_deref().map(|p| repeat_path(p, i));
        }
        let outcome = cfg.execute_to_file()?;
        if cfg.out.is_none() {
            let stdout = std::io::stdout();
            outcome.timeline.write_csv(stdout.lock(), Some(&cfg.echo()))?;
        }
        let r = &outcome.report;
        eprintln!(
            "seed {}: {:?} after {:.1}s, best {:.6e}, {} evaluations{}",
            cfg.seed,
            r.reason,
            r.wall_time.as_secs_f64(),
            r.aggregate_best(),
            r.evaluations(),
            cfg.out.as_ref().map(|p| format!(" -> {}", p.display())).unwrap_or_default(),
        );
        if outcome.reason() == StopReason::Extinct {
            code = EXIT_EXTINCT;
        }
    }
    Ok(code)
}

fn summarize_command(args: &SummarizeArgs) -> Result<i32> {
    let summary = summarize(&args.files)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    if summary.rows.is_empty() {
        return Err(EmasError::Config("no readable CSV among the inputs".into()));
    }
    let mut stdout = std::io::stdout().lock();
    write!(stdout, "{summary}")?;
    if let Some(dir) = &args.series_dir {
        for path in write_series(&summary, dir)? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(EXIT_OK)
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => run_command(args),
        Command::Summarize(args) => summarize_command(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(args: &[&str]) -> Result<RunConfig> {
        let mut argv = vec!["emas", "run"];
        argv.extend_from_slice(args);
        let Command::Run(run) = Cli::try_parse_from(argv).unwrap().command else { unreachable!() };
        run.to_config()
    }

    #[test]
    fn flags_override_defaults() {
        let cfg = config(&["--engine", "async", "--dispatch", "pool:3", "--fight-transfer", "4", "--duration", "2m", "--islands", "4", "--topology", "ring"]).unwrap();
        assert_eq!(cfg.engine, EngineKind::Async);
        assert_eq!(cfg.dispatch, Some(DispatchPolicy::ThreadPool(3)));
        assert_eq!(cfg.params.fight_transfer, 4);
        assert_eq!(cfg.params.initial_size, 50);
        assert_eq!(cfg.stop.duration, Some(Duration::from_secs(120)));
        assert_eq!(cfg.cluster.islands, 4);
        assert_eq!(cfg.cluster.topology, Topology::Ring);
    }

    #[test]
    fn invalid_combinations() {
        assert!(config(&["--dispatch", "single", "--duration", "1s"]).is_err());
        assert!(config(&["--seed", "1"]).is_err());
        assert!(config(&["--max-evals", "5", "--repeat", "3"]).is_err());
        assert!(config(&["--max-evals", "5", "--problem", "sphere-ish"]).is_err());
        assert!(config(&["--max-evals", "5", "--listen", "127.0.0.1:0"]).is_err());
    }

    #[test]
    fn repeat_paths() {
        assert_eq!(repeat_path(Path::new("runs/sync.csv"), 3), PathBuf::from("runs/sync-3.csv"));
        assert_eq!(repeat_path(Path::new("out"), 0), PathBuf::from("out-0"));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_cli(["emas", "run", "--engine", "sync", "--dispatch", "own", "--max-evals", "1"]), EXIT_ERROR);
        assert_eq!(run_cli(["emas", "run", "--no-such-flag"]), EXIT_ERROR);
        assert_eq!(run_cli(["emas", "summarize"]), EXIT_ERROR);
    }
}
