//! Asynchronous engine: every agent and every arena is a message-processing
//! entity. Agents pick an arena, join it and wait for `MeetingEnded`; arenas
//! collect waiters like a cyclic barrier and run meetings by exchanging
//! messages with the members. A monitor entity keeps the island's metrics.

mod barrier;
mod entities;
mod runtime;

use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender};

pub use barrier::ArenaBarrier;
pub use runtime::{Addr, Ctx, DispatchPolicy, Entity, Flow, Runtime};

use crate::arena::{initial_population, ArenaKind};
use crate::contract::{AgentRecord, CheckMode, ContractError, ContractSet};
use crate::error::{EmasError, Result};
use crate::islands::Gateway;
use crate::metrics::{IslandState, MetricsSink};
use crate::model::{total_energy, Agent, AgentId, EmasParams, Energy, IdSource, IslandId, Solution};
use crate::operators::{EvaluationCounter, Evaluator, Objective};
use crate::run::{RunClock, RunReport, RunSettings, StopReason};
use entities::{ArenaEntity, Monitor};

/// Everything entities say to each other.
#[derive(Debug)]
pub enum Message {
    /// Begin the autonomous arena loop.
    Start,
    /// Periodic timer signal for arenas and the monitor.
    Tick,
    /// Stops the receiving entity; handled by the runtime.
    Shutdown,
    /// Test and diagnostic payload.
    Probe(u64),

    /// Ask an agent to join a specific arena now.
    JoinArena(ArenaKind),
    Join { from: Addr, id: AgentId },
    MeetingEnded,
    AskState { meeting: u64, reply: Addr },
    State { meeting: u64, id: AgentId, record: AgentRecord, from: Addr },
    Surrender { meeting: u64, amount: Energy, reply: Addr },
    Surrendered { meeting: u64, id: AgentId, amount: Energy, from: Addr },
    Receive { amount: Energy },
    AskParent { meeting: u64, transfer: Energy, reply: Addr },
    Parent { meeting: u64, id: AgentId, record: AgentRecord, sol: Solution, paid: Energy, from: Addr },
    /// An agent could not take part in the meeting.
    Refused { meeting: u64, id: AgentId },
    Die,
    Report { reply: Sender<Option<Agent>> },

    Born { objective: f64 },
    Died { id: AgentId },
    Emigrate { agent: Agent },
    StopNow(StopReason),
    Finish { state: IslandState, reply: Sender<f64> },
}

/// Arena addresses, known to every entity once the island is wired up.
#[derive(Debug, Clone)]
pub(crate) struct Directory {
    pub death: Addr,
    pub fight: Addr,
    pub reproduction: Addr,
    pub monitor: Addr,
}

impl Directory {
    pub fn arena(&self, kind: ArenaKind) -> &Addr {
        match kind {
            ArenaKind::Death => &self.death,
            ArenaKind::Fight => &self.fight,
            ArenaKind::Reproduction => &self.reproduction,
        }
    }
}

/// Island-wide configuration and counters. Entities never share agent
/// state; this only holds constants, the stop flag and statistics.
#[derive(Debug)]
pub(crate) struct Shared {
    pub params: EmasParams,
    pub island: IslandId,
    pub seed: u64,
    pub autonomous: bool,
    pub contracts: Option<ContractSet>,
    pub reply_timeout: Duration,
    pub migration: bool,
    pub dir: OnceLock<Directory>,
    pub stopping: AtomicBool,
    /// Agents still cycling through arenas (not dormant, not dead).
    pub active: AtomicI64,
    pub meetings: AtomicU64,
    pub aborted: AtomicU64,
    pub violations: Mutex<Vec<ContractError>>,
    pub counter: EvaluationCounter,
}

impl Shared {
    pub fn dir(&self) -> &Directory {
        self.dir.get().expect("directory set before agents start")
    }

    pub fn is_stopping(&self) -> bool {
        self.stopping.load(Ordering::Acquire)
    }

    pub fn violation(&self, err: ContractError) {
        log::error!("island {}: {err}", self.island);
        self.violations.lock().unwrap().push(err);
    }
}

/// Tunables of the asynchronous engine.
#[derive(Debug, Clone)]
pub struct AsyncOptions {
    pub policy: DispatchPolicy,
    /// Inactivity after which an arena runs a partial meeting.
    pub arena_timeout: Duration,
    /// How long an arena waits for members' replies before aborting.
    pub reply_timeout: Duration,
    pub tick: Duration,
}

impl Default for AsyncOptions {
    fn default() -> Self {
        Self {
            policy: DispatchPolicy::default(),
            arena_timeout: Duration::from_millis(100),
            reply_timeout: Duration::from_millis(100),
            tick: Duration::from_millis(20),
        }
    }
}

impl AsyncOptions {
    pub fn with_policy(policy: DispatchPolicy) -> Self {
        Self { policy, ..Self::default() }
    }
}

/// Runtime counters of a finished asynchronous run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AsyncStats {
    pub meetings: u64,
    pub aborted: u64,
    pub violations: usize,
}

/// What is left of an asynchronous island after shutdown.
#[derive(Debug)]
pub struct AsyncOutcome {
    pub report: RunReport,
    pub agents: Vec<Agent>,
    pub stats: AsyncStats,
    pub violations: Vec<ContractError>,
}

impl AsyncOutcome {
    /// Fails with the first contract violation, if any was recorded.
    pub fn into_result(self) -> Result<Self> {
        match self.violations.first() {
            Some(err) => Err(err.clone().into()),
            None => Ok(self),
        }
    }
}

/// A running asynchronous island.
pub struct AsyncEngine {
    runtime: Runtime,
    shared: Arc<Shared>,
    clock: RunClock,
    stop_rx: Receiver<StopReason>,
    timer: Option<JoinHandle<()>>,
    timer_stop: Arc<AtomicBool>,
    /// Entities of the initial population.
    agents: Vec<Addr>,
}

impl AsyncEngine {
    /// Creates the initial population, spawns arenas, monitor and agents, and
    /// starts the clock. Runs until the settings' stop condition fires.
    pub fn start(
        params: &EmasParams,
        objective: Objective,
        options: &AsyncOptions,
        settings: &RunSettings,
        sink: Arc<MetricsSink>,
        island: IslandId,
        gateway: Option<Gateway>,
    ) -> Result<Self> {
        Self::launch(params, objective, options, settings, Some(sink), island, gateway, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn launch(
        params: &EmasParams,
        objective: Objective,
        options: &AsyncOptions,
        settings: &RunSettings,
        sink: Option<Arc<MetricsSink>>,
        island: IslandId,
        gateway: Option<Gateway>,
        autonomous: bool,
    ) -> Result<Self> {
        params.validate()?;
        if objective.dimension() != params.problem_size {
            return Err(EmasError::DimensionMismatch { expected: params.problem_size, actual: objective.dimension() });
        }
        let counter = EvaluationCounter::new();
        let ids = Arc::new(IdSource::for_island(island));
        let mut init_eval = Evaluator::new(objective.clone(), counter.clone());
        let contracts = settings.check.is_checked().then(|| ContractSet::new(params));
        let population = initial_population(params, &mut init_eval, &ids, island, settings.seed, contracts.as_ref())?;
        Self::with_population(
            params, objective, options, settings, sink, island, gateway, autonomous, population, init_eval.best(), counter,
            ids, contracts,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn with_population(
        params: &EmasParams,
        objective: Objective,
        options: &AsyncOptions,
        settings: &RunSettings,
        sink: Option<Arc<MetricsSink>>,
        island: IslandId,
        gateway: Option<Gateway>,
        autonomous: bool,
        population: Vec<Agent>,
        initial_best: f64,
        counter: EvaluationCounter,
        ids: Arc<IdSource>,
        contracts: Option<ContractSet>,
    ) -> Result<Self> {
        let runtime = Runtime::new(options.policy);
        let clock = RunClock::start(settings.clock);
        let shared = Arc::new(Shared {
            params: params.clone(),
            island,
            seed: settings.seed,
            autonomous,
            contracts,
            reply_timeout: options.reply_timeout,
            migration: gateway.is_some() && params.migration_probability > 0.0,
            dir: OnceLock::new(),
            stopping: AtomicBool::new(false),
            active: AtomicI64::new(0),
            meetings: AtomicU64::new(0),
            aborted: AtomicU64::new(0),
            violations: Mutex::new(Vec::new()),
            counter: counter.clone(),
        });
        let (stop_tx, stop_rx) = bounded(1);
        let monitor = runtime.spawn(Box::new(Monitor::new(
            shared.clone(),
            clock,
            settings,
            sink,
            stop_tx,
            gateway,
            IslandState {
                best: initial_best,
                evaluations: counter.get(),
                population: population.len() as u64,
                total_energy: total_energy(&population).units(),
            },
        )));
        let arena = |kind: ArenaKind| {
            let capacity = kind.arity(params).unwrap_or(1);
            runtime.spawn(Box::new(ArenaEntity::new(
                kind,
                capacity,
                options.arena_timeout,
                shared.clone(),
                Evaluator::new(objective.clone(), counter.clone()),
                ids.clone(),
            )))
        };
        let dir = Directory {
            death: arena(ArenaKind::Death),
            fight: arena(ArenaKind::Fight),
            reproduction: arena(ArenaKind::Reproduction),
            monitor,
        };
        shared.dir.set(dir.clone()).expect("directory set once");
        let agents: Vec<Addr> = population.into_iter().map(|a| entities::spawn_agent(&runtime, &shared, a, true)).collect();
        if autonomous {
            for addr in &agents {
                addr.send(Message::Start);
            }
        }
        dir.monitor.send(Message::Tick);

        let timer_stop = Arc::new(AtomicBool::new(false));
        let timer = {
            let stop = timer_stop.clone();
            let targets = [dir.death.clone(), dir.fight.clone(), dir.reproduction.clone(), dir.monitor.clone()];
            let tick = options.tick;
            std::thread::Builder::new()
                .name(format!("emas-timer-{island}"))
                .spawn(move || {
                    while !stop.load(Ordering::Acquire) {
                        std::thread::sleep(tick);
                        for t in &targets {
                            t.send(Message::Tick);
                        }
                    }
                })
                .expect("spawn timer thread")
        };
        Ok(Self {
            runtime,
            shared,
            clock,
            stop_rx,
            timer: Some(timer),
            timer_stop,
            agents,
        })
    }

    pub fn island(&self) -> IslandId {
        self.shared.island
    }

    /// Asks the monitor to stop the island with `reason`.
    pub fn request_stop(&self, reason: StopReason) {
        self.shared.dir().monitor.send(Message::StopNow(reason));
    }

    pub fn evaluations(&self) -> u64 {
        self.shared.counter.get()
    }

    pub fn meetings(&self) -> u64 {
        self.shared.meetings.load(Ordering::Relaxed)
    }

    /// Blocks until the stop condition fires, or `timeout` elapses.
    pub fn wait_stop(&self, timeout: Duration) -> Option<StopReason> {
        self.stop_rx.recv_timeout(timeout).ok()
    }

    /// Lets in-flight meetings finish, collects the surviving agents and
    /// tears the runtime down.
    pub fn shutdown(mut self, reason: StopReason) -> AsyncOutcome {
        self.shared.stopping.store(true, Ordering::Release);
        if !self.await_quiescence(Duration::from_secs(10)) {
            log::warn!("island {}: agents still active at shutdown", self.shared.island);
        }
        let agents = self.collect_agents();
        let state = IslandState {
            best: f64::NAN,
            evaluations: self.evaluations(),
            population: agents.len() as u64,
            total_energy: total_energy(&agents).units(),
        };
        let best = self.finish_monitor(state);
        self.teardown();
        let violations = std::mem::take(&mut *self.shared.violations.lock().unwrap());
        let stats = AsyncStats {
            meetings: self.meetings(),
            aborted: self.shared.aborted.load(Ordering::Relaxed),
            violations: violations.len(),
        };
        let report = RunReport {
            reason,
            steps: stats.meetings,
            evaluations: state.evaluations,
            best_objective: best,
            population: agents.len(),
            total_energy: state.total_energy,
            wall_time: self.clock.wall_elapsed(),
        };
        AsyncOutcome { report, agents, stats, violations }
    }

    fn await_quiescence(&self, limit: Duration) -> bool {
        let t0 = Instant::now();
        while self.shared.active.load(Ordering::Acquire) > 0 {
            if t0.elapsed() > limit {
                return false;
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        true
    }

    fn collect_agents(&self) -> Vec<Agent> {
        let (tx, rx) = crossbeam_channel::unbounded();
        let asked = self
            .runtime
            .entities()
            .iter()
            .filter(|addr| addr.send(Message::Report { reply: tx.clone() }))
            .count();
        drop(tx);
        let mut agents: Vec<Agent> = rx.iter().take(asked).flatten().collect();
        agents.sort_by_key(|a| a.id);
        agents
    }

    fn finish_monitor(&self, state: IslandState) -> f64 {
        let (tx, rx) = bounded(1);
        self.shared.dir().monitor.send(Message::Finish { state, reply: tx });
        rx.recv_timeout(Duration::from_secs(5)).unwrap_or(f64::NAN)
    }

    fn teardown(&mut self) {
        self.timer_stop.store(true, Ordering::Release);
        if let Some(t) = self.timer.take() {
            let _ = t.join();
        }
        self.runtime.shutdown();
    }
}

impl Drop for AsyncEngine {
    fn drop(&mut self) {
        self.teardown();
    }
}

/// Runs a single asynchronous island to its stop condition.
pub fn run_async(
    params: &EmasParams,
    objective: Objective,
    options: &AsyncOptions,
    settings: &RunSettings,
    sink: Arc<MetricsSink>,
) -> Result<(RunReport, AsyncStats)> {
    let engine = AsyncEngine::start(params, objective, options, settings, sink, IslandId(0), None)?;
    let reason = engine.stop_rx.recv().unwrap_or(StopReason::Failed);
    let outcome = engine.shutdown(reason).into_result()?;
    Ok((outcome.report, outcome.stats))
}

/// Runs one asynchronous meeting of `kind` over the given agents, each hosted
/// by its own entity, and returns their states afterwards (members in input
/// order, then children). Used to compare the message choreography with the
/// synchronous meeting functions.
pub fn async_meeting(
    kind: ArenaKind,
    members: Vec<Agent>,
    params: &EmasParams,
    objective: Objective,
    options: &AsyncOptions,
    check: CheckMode,
) -> Result<(Vec<Agent>, AsyncStats)> {
    let counter = EvaluationCounter::new();
    let ids = Arc::new(IdSource::starting_at(members.iter().map(|a| a.id.0 + 1).max().unwrap_or(0)));
    let settings = RunSettings { check, ..RunSettings::default() };
    let order: Vec<AgentId> = members.iter().map(|a| a.id).collect();
    let best = members.iter().filter_map(|a| a.sol.objective()).fold(f64::INFINITY, f64::min);
    let contracts = check.is_checked().then(|| ContractSet::new(params));
    let engine = AsyncEngine::with_population(
        params, objective, options, &settings, None, IslandId(0), None, false, members, best, counter, ids, contracts,
    )?;
    for addr in &engine.agents {
        addr.send(Message::JoinArena(kind));
    }
    let quiet = engine.await_quiescence(Duration::from_secs(5));
    let mut outcome = engine.shutdown(StopReason::MaxSteps).into_result()?;
    if !quiet {
        return Err(EmasError::Protocol("meeting did not complete".into()));
    }
    outcome.agents.sort_by_key(|a| order.iter().position(|id| *id == a.id).map_or((1, a.id.0), |p| (0, p as u64)));
    Ok((outcome.agents, outcome.stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::StopCondition;

    fn agent(id: u64, energy: u64, fit: f64) -> Agent {
        Agent::new(AgentId(id), Solution::with_fitness(vec![0.5, -0.5], fit), Energy(energy))
    }

    fn params() -> EmasParams {
        EmasParams { problem_size: 2, ..Default::default() }
    }

    fn meet(kind: ArenaKind, members: Vec<Agent>, policy: DispatchPolicy) -> Vec<Agent> {
        let opts = AsyncOptions::with_policy(policy);
        async_meeting(kind, members, &params(), Objective::rastrigin(2), &opts, CheckMode::Checked).unwrap().0
    }

    fn energies(agents: &[Agent]) -> Vec<u64> {
        agents.iter().map(|a| a.energy.units()).collect()
    }

    #[test]
    fn fight_matches_synchronous_trace() {
        for policy in [DispatchPolicy::OwnThread, DispatchPolicy::ThreadPool(2), DispatchPolicy::SingleThread] {
            let out = meet(ArenaKind::Fight, vec![agent(1, 10, -5.0), agent(2, 10, -3.0)], policy);
            assert_eq!(energies(&out), vec![0, 20], "{policy}");
        }
    }

    #[test]
    fn tie_has_one_winner_and_lone_fighter_is_idle() {
        let out = meet(ArenaKind::Fight, vec![agent(1, 10, -3.0), agent(2, 7, -3.0)], DispatchPolicy::SingleThread);
        let mut got = energies(&out);
        got.sort_unstable();
        assert_eq!(got, vec![0, 17]);
        let out = meet(ArenaKind::Fight, vec![agent(1, 10, -3.0)], DispatchPolicy::SingleThread);
        assert_eq!(energies(&out), vec![10]);
    }

    #[test]
    fn reproduction_mirrors_sync_transfers() {
        let out = meet(ArenaKind::Reproduction, vec![agent(1, 15, -1.0), agent(2, 12, -1.0)], DispatchPolicy::ThreadPool(2));
        assert_eq!(energies(&out), vec![10, 7, 5, 5]);
        assert!(out[2..].iter().all(|c| c.sol.is_initialized()));
        let out = meet(ArenaKind::Reproduction, vec![agent(1, 11, -1.0)], DispatchPolicy::SingleThread);
        assert_eq!(energies(&out), vec![6, 5]);
    }

    #[test]
    fn death_removes_agent() {
        let out = meet(ArenaKind::Death, vec![agent(1, 0, -1.0)], DispatchPolicy::SingleThread);
        assert!(out.is_empty());
    }

    #[test]
    fn checked_mode_reports_bad_death() {
        let opts = AsyncOptions::with_policy(DispatchPolicy::SingleThread);
        let r = async_meeting(ArenaKind::Death, vec![agent(1, 4, -1.0)], &params(), Objective::rastrigin(2), &opts, CheckMode::Checked);
        match r {
            Err(EmasError::Contract(e)) => assert_eq!(e.clause(), Some(crate::contract::Clause::Pre)),
            other => panic!("expected contract violation, got {other:?}"),
        }
    }

    #[test]
    fn zero_budget_counts_only_initial_evaluations() {
        let p = EmasParams { problem_size: 5, ..Default::default() };
        let settings = RunSettings::new(3, StopCondition::evaluations(50));
        let sink = Arc::new(MetricsSink::unbounded());
        let (report, _) = run_async(&p, Objective::rastrigin(5), &AsyncOptions::default(), &settings, sink.clone()).unwrap();
        assert_eq!(report.reason, StopReason::MaxEvaluations);
        assert_eq!(report.total_energy, 500);
        assert!(sink.timeline().samples[0].evaluations == 50);
    }

    #[test]
    fn lone_agent_keeps_meeting() {
        let p = EmasParams { problem_size: 3, initial_size: 1, ..Default::default() };
        let settings = RunSettings::new(1, StopCondition::steps(5));
        let t0 = Instant::now();
        let (report, stats) =
            run_async(&p, Objective::rastrigin(3), &AsyncOptions::default(), &settings, Arc::new(MetricsSink::unbounded()))
                .unwrap();
        assert!(stats.meetings >= 5);
        assert!(t0.elapsed() < Duration::from_secs(5));
        assert_eq!(report.population, 1);
        assert_eq!(report.total_energy, 10);
    }

    #[test]
    fn energy_conserved_at_quiescence_under_every_policy() {
        let p = EmasParams { problem_size: 5, ..Default::default() };
        for policy in [DispatchPolicy::OwnThread, DispatchPolicy::ThreadPool(3), DispatchPolicy::SingleThread] {
            let settings = RunSettings::new(9, StopCondition::duration(Duration::from_millis(300))).checked();
            let sink = Arc::new(MetricsSink::unbounded());
            let (report, stats) =
                run_async(&p, Objective::rastrigin(5), &AsyncOptions::with_policy(policy), &settings, sink.clone()).unwrap();
            assert_eq!(report.total_energy, 500, "{policy}");
            assert!(stats.meetings > 0, "{policy}");
            assert_eq!(stats.violations, 0);
            sink.timeline().check_invariants().unwrap();
        }
    }
}
