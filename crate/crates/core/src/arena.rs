//! Synchronous meeting arenas.
//!
//! Agents here are plain records. One [`step`] sorts the population into the
//! death, fight and reproduction arenas, cuts each arena's queue into groups
//! of the arena's arity, runs every meeting and shuffles the combined result.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::contract::{check_action, check_pre, ActionContract, CheckMode, ContractSet, Snapshot};
use crate::error::{EmasError, Result};
use crate::metrics::{IslandState, MetricsSink, Recorder};
use crate::model::{total_energy, Agent, AgentId, EmasParams, Energy, IdSource, IslandId};
use crate::operators::{make_child, make_mutant, random_point, EvaluationCounter, Evaluator, Objective};
use crate::rng::{EmasRng, Stream};
use crate::run::{RunClock, RunReport, RunSettings, StopReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArenaKind {
    Death,
    Fight,
    Reproduction,
}

impl ArenaKind {
    pub const ALL: [ArenaKind; 3] = [ArenaKind::Death, ArenaKind::Fight, ArenaKind::Reproduction];

    /// Group size; `None` for the death arena, which takes everyone at once.
    pub fn arity(self, params: &EmasParams) -> Option<usize> {
        match self {
            ArenaKind::Death => None,
            ArenaKind::Fight => Some(params.fight_arena_size),
            ArenaKind::Reproduction => Some(2),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            ArenaKind::Death => 0,
            ArenaKind::Fight => 1,
            ArenaKind::Reproduction => 2,
        }
    }
}

pub fn choose_arena(agent: &Agent, params: &EmasParams) -> ArenaKind {
    match agent.energy.units() {
        0 => ArenaKind::Death,
        e if e > params.reproduction_threshold => ArenaKind::Reproduction,
        _ => ArenaKind::Fight,
    }
}

/// Agents leaving a meeting: surviving members first, then newborns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeetingOutcome {
    pub agents: Vec<Agent>,
}

impl MeetingOutcome {
    pub fn total_energy(&self) -> Energy {
        total_energy(&self.agents)
    }
}

/// Energy each loser hands over, given its balance.
pub fn fight_loss(balance: Energy, params: &EmasParams) -> Energy {
    Energy(balance.units().min(params.fight_transfer))
}

/// Fights in place: every loser pays the best member; on equal fitness the
/// earlier member wins. A lone member changes nothing.
pub fn fight_in_place(members: &mut [Agent], params: &EmasParams) -> Result<()> {
    if members.is_empty() {
        return Err(EmasError::EmptyMeeting);
    }
    if members.len() == 1 {
        return Ok(());
    }
    let fitnesses: Vec<f64> = members.iter().map(Agent::fitness).collect();
    if let Some(winner) = crate::contract::fight_winner(&fitnesses) {
        let mut gained = Energy::ZERO;
        for (i, m) in members.iter_mut().enumerate() {
            if i != winner {
                gained += m.energy.take_up_to(Energy(params.fight_transfer));
            }
        }
        members[winner].energy += gained;
    }
    Ok(())
}

pub fn fight_meeting(mut members: Vec<Agent>, params: &EmasParams) -> Result<MeetingOutcome> {
    fight_in_place(&mut members, params)?;
    Ok(MeetingOutcome { agents: members })
}

/// Produces one child per parent; each parent pays its own child
/// `reproduction_transfer`. A lone parent gets a mutation-only child.
fn breed(
    parents: &mut [Agent],
    params: &EmasParams,
    ids: &IdSource,
    evaluator: &mut Evaluator,
    rng: &mut EmasRng,
) -> Result<Vec<Agent>> {
    let transfer = Energy(params.reproduction_transfer);
    if let Some(poor) = parents.iter().find(|p| p.energy < transfer) {
        return Err(EmasError::Meeting(format!("parent {} cannot afford reproduction transfer", poor.id)));
    }
    let solutions = match parents {
        [] => return Err(EmasError::EmptyMeeting),
        [p] => vec![make_mutant(&p.sol, params, evaluator, rng)?],
        [p1, p2] => vec![
            make_child(&p1.sol, &p2.sol, params, evaluator, rng)?,
            make_child(&p2.sol, &p1.sol, params, evaluator, rng)?,
        ],
        _ => return Err(EmasError::Meeting(format!("reproduction needs 1 or 2 members, got {}", parents.len()))),
    };
    Ok(parents
        .iter_mut()
        .zip(solutions)
        .map(|(parent, sol)| {
            parent.energy -= transfer;
            Agent::new(ids.next_id(), sol, transfer)
        })
        .collect())
}

pub fn reproduction_meeting(
    mut members: Vec<Agent>,
    params: &EmasParams,
    ids: &IdSource,
    evaluator: &mut Evaluator,
    rng: &mut EmasRng,
) -> Result<MeetingOutcome> {
    let children = breed(&mut members, params, ids, evaluator, rng)?;
    members.extend(children);
    Ok(MeetingOutcome { agents: members })
}

/// Dead agents simply leave.
pub fn death_meeting(_members: Vec<Agent>) -> MeetingOutcome {
    MeetingOutcome::default()
}

/// Contract bookkeeping for checked mode: a running snapshot of one island
/// that every meeting is checked against and then applied to.
#[derive(Debug)]
pub struct Checker {
    contracts: Arc<ContractSet>,
    env: IslandId,
    working: Snapshot,
}

impl Checker {
    pub fn new(contracts: Arc<ContractSet>, env: IslandId) -> Self {
        Self { contracts, env, working: Snapshot::new() }
    }

    pub fn contracts(&self) -> &ContractSet {
        &self.contracts
    }

    pub fn begin(&mut self, population: &[Agent]) -> Result<()> {
        self.working = Snapshot::of_population(self.env, population)?;
        Ok(())
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.working
    }

    fn pre(&self, contract: &ActionContract, actors: &[AgentId]) -> Result<()> {
        Ok(check_pre(contract, actors, &self.working)?)
    }

    fn commit(&mut self, contract: &ActionContract, actors: &[AgentId], outcome: &[Agent]) -> Result<()> {
        let before = self.working.clone();
        self.working.apply_outcome(self.env, actors, outcome)?;
        Ok(check_action(contract, actors, &before, &self.working)?)
    }

    /// The snapshot must now describe `population` exactly.
    fn finish(&self, population: &[Agent]) -> Result<()> {
        let actual = Snapshot::of_population(self.env, population)?;
        if actual != self.working {
            return Err(crate::contract::ContractError::Structural("step output disagrees with applied meetings".into()).into());
        }
        Ok(())
    }
}

/// Everything a meeting needs besides its members.
pub struct StepContext<'a> {
    pub params: &'a EmasParams,
    pub evaluator: &'a mut Evaluator,
    pub ids: &'a IdSource,
    pub rng: &'a mut EmasRng,
    pub checker: Option<&'a mut Checker>,
}

/// The contract a meeting of `kind` with `members` participants must obey.
pub fn contract_for(kind: ArenaKind, members: usize, contracts: &ContractSet) -> &ActionContract {
    match (kind, members) {
        (ArenaKind::Death, _) => &contracts.die,
        (ArenaKind::Fight, 1) => &contracts.idle,
        (ArenaKind::Fight, _) => &contracts.get,
        (ArenaKind::Reproduction, 1) => &contracts.repr_mutation_only,
        (ArenaKind::Reproduction, _) => &contracts.repr,
    }
}

/// Runs one meeting; in checked mode the matching contract is verified
/// before (type gate, pre) and after (post) the meeting.
pub fn perform_meeting(kind: ArenaKind, members: Vec<Agent>, ctx: &mut StepContext<'_>) -> Result<MeetingOutcome> {
    let actors: Vec<AgentId> = members.iter().map(|a| a.id).collect();
    match kind {
        ArenaKind::Death => {
            if let Some(chk) = ctx.checker.as_deref_mut() {
                let contracts = chk.contracts.clone();
                for id in &actors {
                    chk.pre(&contracts.die, std::slice::from_ref(id))?;
                    chk.commit(&contracts.die, std::slice::from_ref(id), &[])?;
                }
            }
            Ok(death_meeting(members))
        }
        ArenaKind::Fight => {
            let contracts = ctx.checker.as_ref().map(|chk| chk.contracts.clone());
            let pick = |c| contract_for(kind, actors.len(), c);
            if let (Some(chk), Some(c)) = (ctx.checker.as_deref_mut(), contracts.as_deref()) {
                chk.pre(pick(c), &actors)?;
            }
            let outcome = fight_meeting(members, ctx.params)?;
            if let (Some(chk), Some(c)) = (ctx.checker.as_deref_mut(), contracts.as_deref()) {
                chk.commit(pick(c), &actors, &outcome.agents)?;
            }
            Ok(outcome)
        }
        ArenaKind::Reproduction => {
            let contracts = ctx.checker.as_ref().map(|chk| chk.contracts.clone());
            let pick = |c| contract_for(kind, actors.len(), c);
            if let (Some(chk), Some(c)) = (ctx.checker.as_deref_mut(), contracts.as_deref()) {
                chk.pre(pick(c), &actors)?;
            }
            let outcome = reproduction_meeting(members, ctx.params, ctx.ids, ctx.evaluator, ctx.rng)?;
            if let (Some(chk), Some(c)) = (ctx.checker.as_deref_mut(), contracts.as_deref()) {
                chk.commit(pick(c), &actors, &outcome.agents)?;
            }
            Ok(outcome)
        }
    }
}

/// One synchronous step: route agents to arenas, meet in groups, shuffle.
pub fn step(population: Vec<Agent>, ctx: &mut StepContext<'_>) -> Result<Vec<Agent>> {
    if let Some(chk) = ctx.checker.as_deref_mut() {
        chk.begin(&population)?;
    }
    let mut dead = Vec::new();
    let mut fighters = Vec::new();
    let mut breeders = Vec::new();
    for agent in population {
        match choose_arena(&agent, ctx.params) {
            ArenaKind::Death => dead.push(agent),
            ArenaKind::Fight => fighters.push(agent),
            ArenaKind::Reproduction => breeders.push(agent),
        }
    }
    let mut next = Vec::with_capacity(fighters.len() + 2 * breeders.len());
    if !dead.is_empty() {
        next.extend(perform_meeting(ArenaKind::Death, dead, ctx)?.agents);
    }
    for (kind, queue) in [(ArenaKind::Fight, fighters), (ArenaKind::Reproduction, breeders)] {
        let arity = kind.arity(ctx.params).expect("grouped arena");
        let mut queue = queue.into_iter().peekable();
        while queue.peek().is_some() {
            let group: Vec<Agent> = queue.by_ref().take(arity).collect();
            next.extend(perform_meeting(kind, group, ctx)?.agents);
        }
    }
    if let Some(chk) = ctx.checker.as_deref() {
        chk.finish(&next)?;
    }
    next.shuffle(ctx.rng);
    Ok(next)
}

/// One island's synchronous EMAS: a population plus its own random stream,
/// id block and evaluation counter.
#[derive(Debug)]
pub struct SyncEngine {
    island: IslandId,
    params: EmasParams,
    evaluator: Evaluator,
    ids: IdSource,
    rng: EmasRng,
    population: Vec<Agent>,
    checker: Option<Checker>,
    steps: u64,
}

impl SyncEngine {
    pub fn new(params: EmasParams, objective: Objective, island: IslandId, seed: u64, check: CheckMode) -> Result<Self> {
        Self::with_evaluator(params, Evaluator::new(objective, EvaluationCounter::new()), island, seed, check)
    }

    pub fn with_evaluator(
        params: EmasParams,
        mut evaluator: Evaluator,
        island: IslandId,
        seed: u64,
        check: CheckMode,
    ) -> Result<Self> {
        params.validate()?;
        if evaluator.objective().dimension() != params.problem_size {
            return Err(EmasError::DimensionMismatch {
                expected: params.problem_size,
                actual: evaluator.objective().dimension(),
            });
        }
        let ids = IdSource::for_island(island);
        let contracts = check.is_checked().then(|| Arc::new(ContractSet::new(&params)));
        let population = initial_population(&params, &mut evaluator, &ids, island, seed, contracts.as_deref())?;
        let checker = contracts.map(|c| Checker::new(c, island));
        Ok(Self {
            island,
            params,
            evaluator,
            ids,
            rng: Stream::Step(island).rng(seed),
            population,
            checker,
            steps: 0,
        })
    }

    pub fn step(&mut self) -> Result<()> {
        let population = std::mem::take(&mut self.population);
        let mut ctx = StepContext {
            params: &self.params,
            evaluator: &mut self.evaluator,
            ids: &self.ids,
            rng: &mut self.rng,
            checker: self.checker.as_mut(),
        };
        self.population = step(population, &mut ctx)?;
        self.steps += 1;
        Ok(())
    }

    pub fn island(&self) -> IslandId {
        self.island
    }

    pub fn params(&self) -> &EmasParams {
        &self.params
    }

    pub fn population(&self) -> &[Agent] {
        &self.population
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluator.evaluations()
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.evaluator
    }

    pub fn best_objective(&self) -> f64 {
        self.evaluator.best()
    }

    pub fn total_energy(&self) -> Energy {
        total_energy(&self.population)
    }

    pub fn is_extinct(&self) -> bool {
        self.population.is_empty()
    }

    pub fn is_checked(&self) -> bool {
        self.checker.is_some()
    }

    pub fn state(&self) -> IslandState {
        IslandState {
            best: self.best_objective(),
            evaluations: self.evaluations(),
            population: self.population.len() as u64,
            total_energy: self.total_energy().units(),
        }
    }

    /// Removes and returns the agents matching `select`, keeping the order of
    /// the rest.
    pub fn take_agents(&mut self, mut select: impl FnMut(&Agent) -> bool) -> Vec<Agent> {
        let (taken, kept): (Vec<Agent>, Vec<Agent>) = std::mem::take(&mut self.population).into_iter().partition(|a| select(a));
        self.population = kept;
        taken
    }

    /// Appends arriving agents. Their cached fitness is reused as-is.
    pub fn absorb(&mut self, agents: impl IntoIterator<Item = Agent>) {
        for agent in agents {
            if let Some(obj) = agent.sol.objective() {
                self.evaluator.observe(obj);
            }
            self.population.push(agent);
        }
    }
}

/// Builds an island's initial population: `initial_size` agents with random,
/// freshly evaluated solutions and `initial_energy` each. With `contracts`,
/// every initialization is checked against the init contract.
pub fn initial_population(
    params: &EmasParams,
    evaluator: &mut Evaluator,
    ids: &IdSource,
    island: IslandId,
    seed: u64,
    contracts: Option<&ContractSet>,
) -> Result<Vec<Agent>> {
    let mut rng = Stream::Init(island).rng(seed);
    let mut population = Vec::with_capacity(params.initial_size);
    for _ in 0..params.initial_size {
        let raw = Agent::new(ids.next_id(), random_point(evaluator.objective(), &mut rng), Energy(params.initial_energy));
        let mut agent = raw.clone();
        evaluator.evaluate(&mut agent.sol)?;
        if let Some(c) = contracts {
            let before = Snapshot::of_population(island, std::slice::from_ref(&raw))?;
            let after = Snapshot::of_population(island, std::slice::from_ref(&agent))?;
            check_action(&c.init, &[raw.id], &before, &after)?;
        }
        population.push(agent);
    }
    Ok(population)
}

/// Runs a single-island synchronous EMAS until the stop condition fires,
/// publishing metrics rows to `sink`.
pub fn run_sync(params: &EmasParams, objective: Objective, settings: &RunSettings, sink: &MetricsSink) -> Result<RunReport> {
    let clock = RunClock::start(settings.clock);
    let mut engine = SyncEngine::new(params.clone(), objective, IslandId(0), settings.seed, settings.check)?;
    let mut recorder = Recorder::new(IslandId(0), settings.snapshot_interval_ms);
    let reason = drive(&mut engine, &clock, settings, &mut recorder, sink)?;
    Ok(RunReport {
        reason,
        steps: engine.steps(),
        evaluations: engine.evaluations(),
        best_objective: engine.best_objective(),
        population: engine.population().len(),
        total_energy: engine.total_energy().units(),
        wall_time: clock.wall_elapsed(),
    })
}

pub(crate) fn drive(
    engine: &mut SyncEngine,
    clock: &RunClock,
    settings: &RunSettings,
    recorder: &mut Recorder,
    sink: &MetricsSink,
) -> Result<StopReason> {
    recorder.observe(clock.now_ms(engine.steps()), engine.state(), sink);
    let reason = loop {
        let now = clock.now_ms(engine.steps());
        if let Some(reason) = settings.stop.check(now, engine.evaluations(), engine.best_objective(), engine.steps()) {
            break reason;
        }
        if engine.is_extinct() {
            break StopReason::Extinct;
        }
        engine.step()?;
        recorder.observe(clock.now_ms(engine.steps()), engine.state(), sink);
    };
    recorder.finish(|| clock.now_ms(engine.steps()), engine.state(), sink);
    Ok(reason)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::Clause;
    use crate::model::Solution;
    use crate::rng::seed_rng;
    use crate::run::StopCondition;

    fn agent(id: u64, energy: u64, fit: f64) -> Agent {
        Agent::new(AgentId(id), Solution::with_fitness(vec![0.0, 0.0], fit), Energy(energy))
    }

    fn params() -> EmasParams {
        EmasParams { problem_size: 2, ..Default::default() }
    }

    #[test]
    fn arena_choice() {
        let p = EmasParams::default();
        assert_eq!(choose_arena(&agent(1, 0, 0.0), &p), ArenaKind::Death);
        assert_eq!(choose_arena(&agent(1, 10, 0.0), &p), ArenaKind::Fight);
        assert_eq!(choose_arena(&agent(1, 11, 0.0), &p), ArenaKind::Reproduction);
        assert_eq!(ArenaKind::Fight.arity(&p), Some(2));
        assert_eq!(ArenaKind::Reproduction.arity(&p), Some(2));
        assert_eq!(ArenaKind::Death.arity(&p), None);
    }

    #[test]
    fn fight_examples() {
        let p = params();
        let out = fight_meeting(vec![agent(1, 10, -5.0), agent(2, 10, -3.0)], &p).unwrap();
        assert_eq!(out.agents.iter().map(|a| a.energy.units()).collect::<Vec<_>>(), vec![0, 20]);

        let out = fight_meeting(vec![agent(1, 4, -5.0), agent(2, 10, -3.0)], &p).unwrap();
        assert_eq!(out.agents.iter().map(|a| a.energy.units()).collect::<Vec<_>>(), vec![0, 14]);

        // Equal fitness: the first member wins.
        let out = fight_meeting(vec![agent(1, 10, -3.0), agent(2, 7, -3.0)], &p).unwrap();
        assert_eq!(out.agents.iter().map(|a| a.energy.units()).collect::<Vec<_>>(), vec![17, 0]);

        let lone = fight_meeting(vec![agent(1, 10, -3.0)], &p).unwrap();
        assert_eq!(lone.agents, vec![agent(1, 10, -3.0)]);
        assert!(matches!(fight_meeting(vec![], &p), Err(EmasError::EmptyMeeting)));
    }

    #[test]
    fn reproduction_examples() {
        let p = params();
        let ids = IdSource::starting_at(100);
        let mut ev = Evaluator::new(Objective::rastrigin(2), EvaluationCounter::new());
        let mut rng = seed_rng(1, 0);
        let out = reproduction_meeting(vec![agent(1, 15, -1.0), agent(2, 12, -1.0)], &p, &ids, &mut ev, &mut rng).unwrap();
        let energies: Vec<u64> = out.agents.iter().map(|a| a.energy.units()).collect();
        assert_eq!(energies, vec![10, 7, 5, 5]);
        assert_eq!(out.total_energy(), Energy(27));
        assert_eq!(out.agents[2].id, AgentId(100));
        assert_eq!(out.agents[3].id, AgentId(101));
        assert_eq!(ev.evaluations(), 2);

        let out = reproduction_meeting(vec![agent(1, 11, -1.0)], &p, &ids, &mut ev, &mut rng).unwrap();
        let energies: Vec<u64> = out.agents.iter().map(|a| a.energy.units()).collect();
        assert_eq!(energies, vec![6, 5]);
        assert_eq!(out.agents[1].id, AgentId(102));
    }

    #[test]
    fn death_removes_all() {
        assert!(death_meeting(vec![agent(1, 0, 0.0)]).agents.is_empty());
        assert!(death_meeting(vec![agent(1, 0, 0.0), agent(2, 0, 0.0)]).agents.is_empty());
    }

    fn checked_ctx_run(kind: ArenaKind, members: Vec<Agent>) -> Result<MeetingOutcome> {
        let p = params();
        let ids = IdSource::starting_at(100);
        let mut ev = Evaluator::new(Objective::rastrigin(2), EvaluationCounter::new());
        let mut rng = seed_rng(1, 0);
        let mut chk = Checker::new(Arc::new(ContractSet::new(&p)), IslandId(0));
        chk.begin(&members).unwrap();
        let mut ctx = StepContext { params: &p, evaluator: &mut ev, ids: &ids, rng: &mut rng, checker: Some(&mut chk) };
        perform_meeting(kind, members, &mut ctx)
    }

    fn clause_of(r: Result<MeetingOutcome>) -> Option<Clause> {
        match r {
            Err(EmasError::Contract(c)) => c.clause(),
            _ => None,
        }
    }

    #[test]
    fn checked_death_of_live_agent_is_violation() {
        assert_eq!(clause_of(checked_ctx_run(ArenaKind::Death, vec![agent(1, 1, 0.0)])), Some(Clause::Pre));
        assert!(checked_ctx_run(ArenaKind::Death, vec![agent(1, 0, 0.0)]).unwrap().agents.is_empty());
    }

    #[test]
    fn checked_reproduction_below_threshold_is_violation() {
        assert_eq!(
            clause_of(checked_ctx_run(ArenaKind::Reproduction, vec![agent(1, 8, 0.0), agent(2, 15, 0.0)])),
            Some(Clause::Pre)
        );
        assert!(checked_ctx_run(ArenaKind::Reproduction, vec![agent(1, 11, 0.0), agent(2, 15, 0.0)]).is_ok());
    }

    #[test]
    fn checked_fight_passes() {
        let out = checked_ctx_run(ArenaKind::Fight, vec![agent(1, 10, -5.0), agent(2, 10, -3.0)]).unwrap();
        assert_eq!(out.total_energy(), Energy(20));
        checked_ctx_run(ArenaKind::Fight, vec![agent(1, 10, -5.0)]).unwrap();
    }

    #[test]
    fn step_all_dead_gives_empty() {
        let p = params();
        let ids = IdSource::new();
        let mut ev = Evaluator::new(Objective::rastrigin(2), EvaluationCounter::new());
        let mut rng = seed_rng(1, 0);
        let mut ctx = StepContext { params: &p, evaluator: &mut ev, ids: &ids, rng: &mut rng, checker: None };
        let next = step(vec![agent(1, 0, 0.0), agent(2, 0, 0.0)], &mut ctx).unwrap();
        assert!(next.is_empty());
        assert!(step(vec![], &mut ctx).unwrap().is_empty());
    }

    #[test]
    fn initial_population_step_conserves() {
        let p = EmasParams { problem_size: 10, ..Default::default() };
        let mut engine = SyncEngine::new(p, Objective::rastrigin(10), IslandId(0), 4, CheckMode::Checked).unwrap();
        assert_eq!(engine.population().len(), 50);
        assert_eq!(engine.total_energy(), Energy(500));
        assert_eq!(engine.evaluations(), 50);
        engine.step().unwrap();
        // Nobody exceeds the strict threshold at step 0, so only fights happen.
        assert_eq!(engine.population().len(), 50);
        assert_eq!(engine.total_energy(), Energy(500));
        assert_eq!(engine.evaluations(), 50);
    }

    #[test]
    fn engine_is_deterministic() {
        let p = EmasParams { problem_size: 5, ..Default::default() };
        let run = || {
            let mut e = SyncEngine::new(p.clone(), Objective::rastrigin(5), IslandId(0), 11, CheckMode::Fast).unwrap();
            for _ in 0..200 {
                e.step().unwrap();
            }
            e.population().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn evaluations_grow_by_children_born() {
        let p = EmasParams { problem_size: 5, ..Default::default() };
        let mut e = SyncEngine::new(p, Objective::rastrigin(5), IslandId(0), 2, CheckMode::Fast).unwrap();
        for _ in 0..100 {
            let before_ids = e.ids.peek();
            let before_evals = e.evaluations();
            e.step().unwrap();
            assert_eq!(e.evaluations() - before_evals, e.ids.peek() - before_ids);
        }
    }

    #[test]
    fn run_sync_zero_steps_records_initial_sample() {
        let p = EmasParams { problem_size: 3, ..Default::default() };
        let sink = MetricsSink::unbounded();
        let report = run_sync(&p, Objective::rastrigin(3), &RunSettings::new(1, StopCondition::steps(0)), &sink).unwrap();
        assert_eq!(report.evaluations, 50);
        assert_eq!(report.reason, StopReason::MaxSteps);
        let t = sink.timeline();
        assert_eq!(t.samples.len(), 1);
        assert_eq!(t.samples[0].evaluations, 50);
    }

    #[test]
    fn run_sync_extinction_is_flagged() {
        let p = EmasParams { problem_size: 3, initial_energy: 0, ..Default::default() };
        let sink = MetricsSink::unbounded();
        let report = run_sync(&p, Objective::rastrigin(3), &RunSettings::new(1, StopCondition::steps(10)), &sink).unwrap();
        assert_eq!(report.reason, StopReason::Extinct);
        assert_eq!(report.population, 0);
    }
}
