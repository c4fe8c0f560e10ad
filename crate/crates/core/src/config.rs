//! Run configuration and its execution.
//!
//! A [`RunConfig`] fully describes a run. It can be loaded from TOML, is
//! overridden by command-line flags, and is echoed as one JSON line at the
//! top of the output CSV.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::arena::run_sync;
use crate::contract::CheckMode;
use crate::engine_async::{run_async, AsyncOptions, DispatchPolicy};
use crate::error::{EmasError, Result};
use crate::islands::tcp::TcpTransport;
use crate::islands::{run_async_cluster, run_cluster, ClusterReport, ClusterSpec, Gateway, Router};
use crate::metrics::{Collector, MetricsSink, MetricsTimeline, Recorder};
use crate::arena::SyncEngine;
use crate::model::{EmasParams, IslandId};
use crate::operators::Objective;
use crate::rng::RNG_ALGORITHM;
use crate::run::{ClockKind, RunClock, RunReport, RunSettings, StopCondition, StopReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineKind {
    #[default]
    Sync,
    Async,
}

impl std::str::FromStr for EngineKind {
    type Err = EmasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sync" => Ok(EngineKind::Sync),
            "async" => Ok(EngineKind::Async),
            _ => Err(EmasError::Config(format!("unknown engine `{s}` (sync|async)"))),
        }
    }
}

/// Multi-process migration over TCP. Each process hosts one island.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct TcpConfig {
    pub listen: Option<String>,
    pub peers: Vec<String>,
    pub island_id: Option<u32>,
}

impl TcpConfig {
    pub fn is_enabled(&self) -> bool {
        self.listen.is_some() || !self.peers.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub params: EmasParams,
    pub engine: EngineKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dispatch: Option<DispatchPolicy>,
    pub cluster: ClusterSpec,
    #[serde(skip_serializing_if = "TcpConfig::is_default")]
    pub tcp: TcpConfig,
    pub seed: u64,
    pub stop: StopCondition,
    pub snapshot_interval_ms: u64,
    pub check: CheckMode,
    pub clock: ClockKind,
    /// Random generator used; informational, written for provenance.
    pub rng: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl TcpConfig {
    fn is_default(&self) -> bool {
        *self == TcpConfig::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "rastrigin".into(),
            params: EmasParams::default(),
            engine: EngineKind::Sync,
            dispatch: None,
            cluster: ClusterSpec::default(),
            tcp: TcpConfig::default(),
            seed: 0,
            stop: StopCondition::default(),
            snapshot_interval_ms: 1000,
            check: CheckMode::Fast,
            clock: ClockKind::Wall,
            rng: RNG_ALGORITHM.into(),
            out: None,
        }
    }
}

/// How a run ended.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: ClusterReport,
    pub timeline: MetricsTimeline,
}

impl RunOutcome {
    pub fn reason(&self) -> StopReason {
        self.report.reason
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| EmasError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        Objective::by_name(&self.problem, self.params.problem_size)?;
        if self.engine == EngineKind::Sync && self.dispatch.is_some() {
            return Err(EmasError::Config("--dispatch only applies to --engine async".into()));
        }
        if self.cluster.islands == 0 {
            return Err(EmasError::Config("--islands must be at least 1".into()));
        }
        if self.stop.is_unbounded() {
            return Err(EmasError::Config("no stop condition (use --duration, --max-evals or --target-fitness)".into()));
        }
        if self.snapshot_interval_ms == 0 {
            return Err(EmasError::Config("snapshot interval must be positive".into()));
        }
        if self.tcp.is_enabled() {
            if self.engine != EngineKind::Sync {
                return Err(EmasError::Config("TCP migration is only supported with --engine sync".into()));
            }
            if self.tcp.listen.is_none() {
                return Err(EmasError::Config("TCP mode needs --listen".into()));
            }
            match self.tcp.island_id {
                Some(id) if (id as usize) < self.cluster.islands => {}
                Some(id) => return Err(EmasError::Config(format!("--island-id {id} out of range for {} islands", self.cluster.islands))),
                None => return Err(EmasError::Config("TCP mode needs --island-id".into())),
            }
        }
        Ok(())
    }

    /// One-line JSON echo written into the CSV.
    pub fn echo(&self) -> String {
        let mut echo = self.clone();
        echo.out = None;
        serde_json::to_string(&echo).expect("config serializes")
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            seed: self.seed,
            stop: self.stop.clone(),
            check: self.check,
            clock: self.clock,
            snapshot_interval_ms: self.snapshot_interval_ms,
        }
    }

    pub fn async_options(&self) -> AsyncOptions {
        AsyncOptions::with_policy(self.dispatch.unwrap_or_default())
    }

    /// Runs the configuration and returns the report plus every metrics row.
    pub fn execute(&self) -> Result<RunOutcome> {
        self.validate()?;
        let objective = Objective::by_name(&self.problem, self.params.problem_size)?;
        let settings = self.settings();
        let sink = Arc::new(MetricsSink::default());
        let collector = Collector::spawn(sink.clone());
        let result = self.dispatch_run(objective, &settings, sink);
        let mut timeline = collector.finish();
        let report = result?;
        timeline.extinct = report.reason == StopReason::Extinct;
        Ok(RunOutcome { report, timeline })
    }

    fn dispatch_run(&self, objective: Objective, settings: &RunSettings, sink: Arc<MetricsSink>) -> Result<ClusterReport> {
        let single = self.cluster.islands == 1 && !self.tcp.is_enabled();
        match self.engine {
            EngineKind::Sync if self.tcp.is_enabled() => run_tcp_node(&self.params, objective, self.cluster, &self.tcp, settings, &sink),
            EngineKind::Sync if single => Ok(ClusterReport::single(&run_sync(&self.params, objective, settings, &sink)?)),
            EngineKind::Sync => run_cluster(&self.params, objective, self.cluster, settings, sink),
            EngineKind::Async if single => {
                Ok(ClusterReport::single(&run_async(&self.params, objective, &self.async_options(), settings, sink)?.0))
            }
            EngineKind::Async => run_async_cluster(&self.params, objective, &self.async_options(), self.cluster, settings, sink),
        }
    }

    /// Executes and writes the CSV to `out` (if set).
    pub fn execute_to_file(&self) -> Result<RunOutcome> {
        let outcome = self.execute()?;
        if let Some(path) = &self.out {
            outcome.timeline.write_csv_file(path, Some(&self.echo()))?;
        }
        Ok(outcome)
    }
}

const PEER_PATIENCE: Duration = Duration::from_secs(30);

/// One island of a multi-process run: steps freely, sends migrants over TCP
/// and takes in whatever has arrived after each step. An empty island keeps
/// going until the stop condition and counts as extinct only if it is still
/// empty then.
fn run_tcp_node(
    params: &EmasParams,
    objective: Objective,
    cluster: ClusterSpec,
    tcp: &TcpConfig,
    settings: &RunSettings,
    sink: &MetricsSink,
) -> Result<ClusterReport> {
    let id = IslandId(tcp.island_id.expect("validated"));
    let transport = Arc::new(TcpTransport::bind(id, tcp.listen.as_deref().expect("validated"))?);
    for peer in &tcp.peers {
        transport.connect(peer, PEER_PATIENCE)?;
    }
    transport.await_ready(tcp.peers.len(), PEER_PATIENCE)?;
    let mut engine = SyncEngine::new(params.clone(), objective, id, settings.seed, settings.check)?;
    let mut gateway = Gateway::new(Router::for_island(id, cluster.islands, cluster.topology), transport.clone(), settings.seed);
    let mut recorder = Recorder::new(id, settings.snapshot_interval_ms);
    let clock = RunClock::start(settings.clock);
    recorder.observe(clock.now_ms(0), engine.state(), sink);
    let reason = loop {
        let now = clock.now_ms(engine.steps());
        if let Some(r) = settings.stop.check(now, engine.evaluations(), engine.best_objective(), engine.steps()) {
            break r;
        }
        if engine.is_extinct() {
            // Immigrants may still repopulate an empty island.
            std::thread::sleep(Duration::from_millis(1));
        }
        engine.step()?;
        gateway.migrate(&mut engine);
        gateway.deliver(&mut engine);
        recorder.observe(clock.now_ms(engine.steps()), engine.state(), sink);
    };
    transport.close_inbox();
    gateway.deliver(&mut engine);
    transport.shutdown();
    recorder.finish(|| clock.now_ms(engine.steps()), engine.state(), sink);
    let report = RunReport {
        reason: if engine.is_extinct() { StopReason::Extinct } else { reason },
        steps: engine.steps(),
        evaluations: engine.evaluations(),
        best_objective: engine.best_objective(),
        population: engine.population().len(),
        total_energy: engine.total_energy().units(),
        wall_time: clock.wall_elapsed(),
    };
    let mut cluster = ClusterReport::single(&report);
    cluster.islands[0].island = id;
    Ok(cluster)
}
