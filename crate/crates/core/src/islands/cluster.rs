use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Gateway, InProcessTransport, Router, Topology, Transport};
use crate::arena::SyncEngine;
use crate::contract::CheckMode;
use crate::engine_async::{AsyncEngine, AsyncOptions};
use crate::error::{EmasError, Result};
use crate::metrics::{MetricsSink, Recorder};
use crate::model::{EmasParams, Energy, IslandId};
use crate::operators::Objective;
use crate::run::{RunClock, RunReport, RunSettings, StopCondition, StopReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct ClusterSpec {
    pub islands: usize,
    pub topology: Topology,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self { islands: 1, topology: Topology::Experiment }
    }
}

impl ClusterSpec {
    pub fn new(islands: usize, topology: Topology) -> Self {
        Self { islands, topology }
    }

    fn validate(&self) -> Result<()> {
        if self.islands == 0 {
            return Err(EmasError::InvalidParams("a cluster needs at least one island".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IslandReport {
    pub island: IslandId,
    pub steps: u64,
    pub evaluations: u64,
    pub best_objective: f64,
    pub population: usize,
    pub total_energy: u64,
}

impl IslandReport {
    pub fn of(island: IslandId, r: &RunReport) -> Self {
        Self {
            island,
            steps: r.steps,
            evaluations: r.evaluations,
            best_objective: r.best_objective,
            population: r.population,
            total_energy: r.total_energy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub reason: StopReason,
    pub islands: Vec<IslandReport>,
    /// Energy still inside undelivered envelopes.
    pub in_flight_energy: u64,
    pub wall_time: Duration,
}

impl ClusterReport {
    /// Report of a run with a single island.
    pub fn single(r: &RunReport) -> Self {
        Self { reason: r.reason, islands: vec![IslandReport::of(IslandId(0), r)], in_flight_energy: 0, wall_time: r.wall_time }
    }

    /// Mean of the islands' best objectives.
    pub fn aggregate_best(&self) -> f64 {
        self.islands.iter().map(|i| i.best_objective).sum::<f64>() / self.islands.len().max(1) as f64
    }

    pub fn global_best(&self) -> f64 {
        self.islands.iter().map(|i| i.best_objective).fold(f64::INFINITY, f64::min)
    }

    pub fn evaluations(&self) -> u64 {
        self.islands.iter().map(|i| i.evaluations).sum()
    }

    pub fn population(&self) -> usize {
        self.islands.iter().map(|i| i.population).sum()
    }

    /// Energy on all islands plus energy in flight.
    pub fn total_energy(&self) -> u64 {
        self.islands.iter().map(|i| i.total_energy).sum::<u64>() + self.in_flight_energy
    }

    /// Collapses a one-island report into a plain run report.
    pub fn as_run_report(&self) -> RunReport {
        RunReport {
            reason: self.reason,
            steps: self.islands.iter().map(|i| i.steps).max().unwrap_or(0),
            evaluations: self.evaluations(),
            best_objective: self.global_best(),
            population: self.population(),
            total_energy: self.total_energy(),
            wall_time: self.wall_time,
        }
    }
}

/// A cyclic barrier that can be broken: once aborted, every current and
/// future `wait` fails immediately.
#[derive(Debug)]
pub struct AbortableBarrier {
    parties: usize,
    state: Mutex<(usize, u64, bool)>,
    cv: Condvar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Aborted;

impl AbortableBarrier {
    pub fn new(parties: usize) -> Self {
        Self { parties, state: Mutex::new((0, 0, false)), cv: Condvar::new() }
    }

    pub fn wait(&self) -> std::result::Result<(), Aborted> {
        let mut s = self.state.lock().unwrap_or_else(|e| e.into_inner());
        if s.2 {
            return Err(Aborted);
        }
        s.0 += 1;
        if s.0 == self.parties {
            s.0 = 0;
            s.1 += 1;
            self.cv.notify_all();
            return Ok(());
        }
        let generation = s.1;
        while s.1 == generation && !s.2 {
            s = self.cv.wait(s).unwrap_or_else(|e| e.into_inner());
        }
        if s.1 == generation {
            Err(Aborted)
        } else {
            Ok(())
        }
    }

    pub fn abort(&self) {
        let mut s = self.state.lock().unwrap_or_else(|e| e.into_inner());
        s.2 = true;
        self.cv.notify_all();
    }
}

/// What each island publishes at the end of a round, read by everyone to
/// reach the same stop decision.
#[derive(Debug, Default)]
struct Board {
    evaluations: Vec<AtomicU64>,
    best: Vec<AtomicU64>,
    population: Vec<AtomicU64>,
    now_ms: AtomicU64,
}

impl Board {
    fn new(n: usize) -> Self {
        let zeros = || (0..n).map(|_| AtomicU64::new(0)).collect();
        Self { evaluations: zeros(), best: zeros(), population: zeros(), now_ms: AtomicU64::new(0) }
    }

    fn publish(&self, i: usize, engine: &SyncEngine) {
        self.evaluations[i].store(engine.evaluations(), Ordering::Release);
        self.best[i].store(engine.best_objective().to_bits(), Ordering::Release);
        self.population[i].store(engine.population().len() as u64, Ordering::Release);
    }

    fn decide(&self, stop: &StopCondition, steps: u64) -> Option<StopReason> {
        let evals = self.evaluations.iter().map(|a| a.load(Ordering::Acquire)).sum();
        let best = self.best.iter().map(|a| f64::from_bits(a.load(Ordering::Acquire))).fold(f64::INFINITY, f64::min);
        let population: u64 = self.population.iter().map(|a| a.load(Ordering::Acquire)).sum();
        stop.check(self.now_ms.load(Ordering::Acquire), evals, best, steps)
            .or((population == 0).then_some(StopReason::Extinct))
    }
}

/// One island of a synchronous cluster.
struct IslandRunner {
    engine: SyncEngine,
    gateway: Gateway,
    recorder: Recorder,
}

impl IslandRunner {
    fn new(
        params: &EmasParams,
        objective: &Objective,
        spec: &ClusterSpec,
        settings: &RunSettings,
        transport: Arc<dyn Transport>,
        i: usize,
    ) -> Result<Self> {
        let id = IslandId(i as u32);
        Ok(Self {
            engine: SyncEngine::new(params.clone(), objective.clone(), id, settings.seed, settings.check)?,
            gateway: Gateway::new(Router::for_island(id, spec.islands, spec.topology), transport, settings.seed),
            recorder: Recorder::new(id, settings.snapshot_interval_ms),
        })
    }

    fn step_and_send(&mut self) -> Result<()> {
        self.engine.step()?;
        self.gateway.migrate(&mut self.engine);
        Ok(())
    }

    fn report(&self, reason: StopReason, clock: &RunClock) -> RunReport {
        RunReport {
            reason,
            steps: self.engine.steps(),
            evaluations: self.engine.evaluations(),
            best_objective: self.engine.best_objective(),
            population: self.engine.population().len(),
            total_energy: self.engine.total_energy().units(),
            wall_time: clock.wall_elapsed(),
        }
    }
}

/// Synchronous islands stepped one after another on the calling thread.
/// Produces exactly the same trajectories as [`run_cluster`].
pub struct Cluster {
    runners: Vec<IslandRunner>,
    transport: Arc<InProcessTransport>,
    steps: u64,
}

impl Cluster {
    pub fn new(params: &EmasParams, objective: Objective, spec: ClusterSpec, seed: u64, check: CheckMode) -> Result<Self> {
        spec.validate()?;
        let transport = Arc::new(InProcessTransport::new(spec.islands));
        let settings = RunSettings { seed, check, ..RunSettings::default() };
        let runners = (0..spec.islands)
            .map(|i| IslandRunner::new(params, &objective, &spec, &settings, transport.clone(), i))
            .collect::<Result<_>>()?;
        Ok(Self { runners, transport, steps: 0 })
    }

    pub fn step(&mut self) -> Result<()> {
        for r in &mut self.runners {
            r.step_and_send()?;
        }
        for r in &mut self.runners {
            r.gateway.deliver(&mut r.engine);
        }
        self.steps += 1;
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn engines(&self) -> impl Iterator<Item = &SyncEngine> {
        self.runners.iter().map(|r| &r.engine)
    }

    pub fn transport(&self) -> &InProcessTransport {
        &self.transport
    }

    /// Energy on all islands plus energy in flight.
    pub fn total_energy(&self) -> Energy {
        self.engines().map(SyncEngine::total_energy).sum::<Energy>() + self.transport.in_flight_energy()
    }
}

/// Runs `spec.islands` synchronous islands in lockstep, one thread each,
/// exchanging migrants through an in-process transport after every step.
///
/// All islands agree on when to stop: island 0's clock and the pooled
/// evaluation counts and best objectives are checked after every round.
pub fn run_cluster(
    params: &EmasParams,
    objective: Objective,
    spec: ClusterSpec,
    settings: &RunSettings,
    sink: Arc<MetricsSink>,
) -> Result<ClusterReport> {
    spec.validate()?;
    let n = spec.islands;
    let transport = Arc::new(InProcessTransport::new(n));
    let runners: Vec<IslandRunner> = (0..n)
        .map(|i| IslandRunner::new(params, &objective, &spec, settings, transport.clone(), i))
        .collect::<Result<_>>()?;
    let barrier = AbortableBarrier::new(n);
    let board = Board::new(n);
    let clock = RunClock::start(settings.clock);

    let results: Vec<std::result::Result<RunReport, Halt>> = std::thread::scope(|scope| {
        let handles: Vec<_> = runners
            .into_iter()
            .enumerate()
            .map(|(i, mut runner)| {
                let (barrier, board, sink, stop) = (&barrier, &board, &sink, &settings.stop);
                std::thread::Builder::new()
                    .name(format!("island-{i}"))
                    .spawn_scoped(scope, move || {
                        let body = catch_unwind(AssertUnwindSafe(|| lockstep(i, &mut runner, barrier, board, &clock, stop, sink)));
                        let reason = match body {
                            Ok(Ok(reason)) => Ok(reason),
                            Ok(Err(Halt::Aborted)) => Err(Halt::Aborted),
                            Ok(Err(Halt::Failed(e))) => {
                                barrier.abort();
                                Err(Halt::Failed(e))
                            }
                            Err(_) => {
                                barrier.abort();
                                Err(Halt::Failed(EmasError::IslandPanicked(i as u32)))
                            }
                        };
                        let steps = runner.engine.steps();
                        runner.recorder.finish(|| clock.now_ms(steps), runner.engine.state(), sink);
                        reason.map(|r| runner.report(r, &clock))
                    })
                    .expect("spawn island thread")
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(i, h)| h.join().unwrap_or(Err(Halt::Failed(EmasError::IslandPanicked(i as u32)))))
            .collect()
    });

    let mut reports = Vec::with_capacity(n);
    let mut reason = StopReason::Failed;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(report) => {
                reason = report.reason;
                reports.push(IslandReport::of(IslandId(i as u32), &report));
            }
            // Another island failed; its error is the one reported.
            Err(Halt::Aborted) => {}
            Err(Halt::Failed(e)) => return Err(e),
        }
    }
    Ok(ClusterReport {
        reason,
        islands: reports,
        in_flight_energy: transport.in_flight_energy().units(),
        wall_time: clock.wall_elapsed(),
    })
}

enum Halt {
    /// The barrier was broken by another island.
    Aborted,
    Failed(EmasError),
}

impl From<EmasError> for Halt {
    fn from(e: EmasError) -> Self {
        Halt::Failed(e)
    }
}

/// One island's side of a lockstep run. Each round: step and send
/// migrants; barrier; receive, record and publish; barrier; decide.
fn lockstep(
    i: usize,
    runner: &mut IslandRunner,
    barrier: &AbortableBarrier,
    board: &Board,
    clock: &RunClock,
    stop: &StopCondition,
    sink: &MetricsSink,
) -> std::result::Result<StopReason, Halt> {
    let sync = |b: &AbortableBarrier| b.wait().map_err(|_| Halt::Aborted);
    let mut round = 0u64;
    let record = |runner: &mut IslandRunner, round: u64| {
        let now = clock.now_ms(round);
        runner.recorder.observe(now, runner.engine.state(), sink);
        board.publish(i, &runner.engine);
        if i == 0 {
            board.now_ms.store(now, Ordering::Release);
        }
    };
    record(runner, round);
    sync(barrier)?;
    loop {
        if let Some(reason) = board.decide(stop, round) {
            return Ok(reason);
        }
        runner.step_and_send()?;
        round += 1;
        sync(barrier)?;
        runner.gateway.deliver(&mut runner.engine);
        record(runner, round);
        sync(barrier)?;
    }
}

/// Runs asynchronous islands side by side, exchanging migrants through an
/// in-process transport. When any island stops, all are stopped.
pub fn run_async_cluster(
    params: &EmasParams,
    objective: Objective,
    options: &AsyncOptions,
    spec: ClusterSpec,
    settings: &RunSettings,
    sink: Arc<MetricsSink>,
) -> Result<ClusterReport> {
    spec.validate()?;
    let transport = Arc::new(InProcessTransport::new(spec.islands));
    let clock = RunClock::start(settings.clock);
    let engines = (0..spec.islands)
        .map(|i| {
            let id = IslandId(i as u32);
            let gateway = Gateway::new(Router::for_island(id, spec.islands, spec.topology), transport.clone(), settings.seed);
            AsyncEngine::start(params, objective.clone(), options, settings, sink.clone(), id, Some(gateway))
        })
        .collect::<Result<Vec<_>>>()?;
    let reason = 'wait: loop {
        for e in &engines {
            if let Some(reason) = e.wait_stop(Duration::from_millis(5)) {
                break 'wait reason;
            }
        }
    };
    for e in &engines {
        e.request_stop(reason);
    }
    let mut islands = Vec::with_capacity(engines.len());
    let mut first_violation = None;
    for e in engines {
        let id = e.island();
        let outcome = e.shutdown(reason);
        if let Some(v) = outcome.violations.first() {
            first_violation.get_or_insert(v.clone());
        }
        islands.push(IslandReport::of(id, &outcome.report));
    }
    if let Some(v) = first_violation {
        return Err(v.into());
    }
    Ok(ClusterReport {
        reason,
        islands,
        in_flight_energy: transport.in_flight_energy().units(),
        wall_time: clock.wall_elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barrier_releases_all_parties() {
        let b = Arc::new(AbortableBarrier::new(3));
        let hs: Vec<_> = (0..3)
            .map(|_| {
                let b = b.clone();
                std::thread::spawn(move || (0..100).all(|_| b.wait().is_ok()))
            })
            .collect();
        assert!(hs.into_iter().all(|h| h.join().unwrap()));
    }

    #[test]
    fn aborted_barrier_frees_waiters() {
        let b = Arc::new(AbortableBarrier::new(2));
        let waiter = {
            let b = b.clone();
            std::thread::spawn(move || b.wait())
        };
        std::thread::sleep(Duration::from_millis(20));
        b.abort();
        assert_eq!(waiter.join().unwrap(), Err(Aborted));
        assert_eq!(b.wait(), Err(Aborted));
    }

    fn params() -> EmasParams {
        EmasParams { problem_size: 4, migration_probability: 0.05, ..Default::default() }
    }

    #[test]
    fn sequential_cluster_conserves_energy() {
        let mut c = Cluster::new(&params(), Objective::rastrigin(4), ClusterSpec::new(3, Topology::Ring), 8, CheckMode::Fast)
            .unwrap();
        let total = c.total_energy();
        assert_eq!(total, Energy(1500));
        for _ in 0..300 {
            c.step().unwrap();
            assert_eq!(c.total_energy(), total);
        }
    }

    #[test]
    fn threaded_cluster_matches_sequential() {
        let p = params();
        let spec = ClusterSpec::new(3, Topology::Experiment);
        let mut seq = Cluster::new(&p, Objective::rastrigin(4), spec, 21, CheckMode::Fast).unwrap();
        for _ in 0..200 {
            seq.step().unwrap();
        }
        let settings = RunSettings::new(21, StopCondition::steps(200));
        let report = run_cluster(&p, Objective::rastrigin(4), spec, &settings, Arc::new(MetricsSink::unbounded())).unwrap();
        assert_eq!(report.reason, StopReason::MaxSteps);
        for (r, e) in report.islands.iter().zip(seq.engines()) {
            assert_eq!(r.steps, 200);
            assert_eq!(r.evaluations, e.evaluations());
            assert_eq!(r.best_objective, e.best_objective());
            assert_eq!(r.population, e.population().len());
        }
        assert_eq!(report.total_energy(), 1500);
    }

    #[test]
    fn zero_islands_rejected() {
        let r = run_cluster(
            &params(),
            Objective::rastrigin(4),
            ClusterSpec::new(0, Topology::Ring),
            &RunSettings::default(),
            Arc::new(MetricsSink::unbounded()),
        );
        assert!(matches!(r, Err(EmasError::InvalidParams(_))));
    }
}
