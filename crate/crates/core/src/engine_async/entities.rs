use std::collections::BTreeMap;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::Sender;
use rand::Rng;

use super::{ArenaBarrier, Addr, Ctx, Entity, Flow, Message, Shared};
use crate::arena::{choose_arena, contract_for, fight_in_place, reproduction_meeting, ArenaKind};
use crate::contract::{check_action, check_pre, AgentRecord, ContractError, Snapshot};
use crate::islands::{Gateway, MigrationEnvelope};
use crate::metrics::{IslandState, MetricsSink, Recorder};
use crate::model::{Agent, AgentId, Energy, IdSource, Solution};
use crate::operators::Evaluator;
use crate::rng::{EmasRng, Stream};
use crate::run::{RunClock, RunSettings, StopCondition, StopReason};

/// Spawns an entity for `agent`. `counted` adds it to the island's active
/// agents; agents handed back by the gateway are already counted.
pub(crate) fn spawn_agent(runtime: &super::Runtime, shared: &Arc<Shared>, agent: Agent, counted: bool) -> Addr {
    if counted {
        shared.active.fetch_add(1, Ordering::AcqRel);
    }
    runtime.spawn(Box::new(AgentEntity::new(agent, shared.clone())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AgentState {
    Idle,
    Waiting,
    InMeeting,
    /// Stopped taking part in meetings; still holds its state for reports.
    Dormant,
}

pub(crate) struct AgentEntity {
    agent: Agent,
    state: AgentState,
    shared: Arc<Shared>,
    rng: Option<EmasRng>,
}

impl AgentEntity {
    fn new(agent: Agent, shared: Arc<Shared>) -> Self {
        Self { agent, state: AgentState::Idle, shared, rng: None }
    }

    fn record(&self) -> AgentRecord {
        AgentRecord::of(self.shared.island, &self.agent)
    }

    fn go_dormant(&mut self) {
        if self.state != AgentState::Dormant {
            self.state = AgentState::Dormant;
            self.shared.active.fetch_sub(1, Ordering::AcqRel);
        }
    }

    fn join(&mut self, kind: ArenaKind, ctx: &Ctx) {
        let joined = self.shared.dir().arena(kind).send(Message::Join { from: ctx.me().clone(), id: self.agent.id });
        if joined {
            self.state = AgentState::Waiting;
        } else {
            self.go_dormant();
        }
    }

    /// Chooses the next arena, unless the island is stopping.
    fn act(&mut self, ctx: &Ctx) -> Flow {
        if self.shared.is_stopping() {
            self.go_dormant();
            return Flow::Continue;
        }
        if self.wants_to_migrate() {
            let agent = self.agent.clone();
            if self.shared.dir().monitor.send(Message::Emigrate { agent }) {
                // The monitor now owns this agent, and its place in the active count.
                return Flow::Stop;
            }
        }
        let kind = choose_arena(&self.agent, &self.shared.params);
        self.join(kind, ctx);
        Flow::Continue
    }

    fn wants_to_migrate(&mut self) -> bool {
        let params = &self.shared.params;
        if !self.shared.migration || self.agent.energy.units() <= params.migration_energy_min {
            return false;
        }
        let (seed, id) = (self.shared.seed, self.agent.id);
        let rng = self.rng.get_or_insert_with(|| Stream::Agent(id).rng(seed));
        rng.random_bool(params.migration_probability)
    }

    fn in_meeting(&mut self) -> bool {
        if matches!(self.state, AgentState::Waiting | AgentState::InMeeting) {
            self.state = AgentState::InMeeting;
            true
        } else {
            false
        }
    }
}

impl Entity for AgentEntity {
    fn handle(&mut self, msg: Message, ctx: &Ctx) -> Flow {
        let id = self.agent.id;
        match msg {
            Message::Start => {
                if self.state == AgentState::Idle {
                    return self.act(ctx);
                }
            }
            Message::JoinArena(kind) => {
                if self.state == AgentState::Idle {
                    self.join(kind, ctx);
                }
            }
            Message::AskState { meeting, reply } => {
                let msg = if self.in_meeting() {
                    Message::State { meeting, id, record: self.record(), from: ctx.me().clone() }
                } else {
                    Message::Refused { meeting, id }
                };
                reply.send(msg);
            }
            Message::Surrender { meeting, amount, reply } => {
                let msg = if self.state == AgentState::InMeeting {
                    let amount = self.agent.energy.take_up_to(amount);
                    Message::Surrendered { meeting, id, amount, from: ctx.me().clone() }
                } else {
                    Message::Refused { meeting, id }
                };
                reply.send(msg);
            }
            Message::Receive { amount } => self.agent.energy += amount,
            Message::AskParent { meeting, transfer, reply } => {
                let msg = if self.in_meeting() {
                    let record = self.record();
                    let paid = match self.agent.energy.checked_sub(transfer) {
                        Some(rest) => {
                            self.agent.energy = rest;
                            transfer
                        }
                        None => Energy::ZERO,
                    };
                    Message::Parent { meeting, id, record, sol: self.agent.sol.clone(), paid, from: ctx.me().clone() }
                } else {
                    Message::Refused { meeting, id }
                };
                reply.send(msg);
            }
            Message::MeetingEnded => {
                if matches!(self.state, AgentState::Waiting | AgentState::InMeeting) {
                    self.state = AgentState::Idle;
                    if self.shared.autonomous {
                        return self.act(ctx);
                    }
                    self.go_dormant();
                }
            }
            Message::Die => {
                if self.state != AgentState::Dormant {
                    self.shared.active.fetch_sub(1, Ordering::AcqRel);
                }
                return Flow::Stop;
            }
            Message::Report { reply } => {
                let _ = reply.send(Some(self.agent.clone()));
            }
            _ => {}
        }
        Flow::Continue
    }
}

struct Member {
    id: AgentId,
    addr: Addr,
}

enum Answer {
    Pending,
    Refused,
    State(AgentRecord),
    Parent { record: AgentRecord, sol: Solution, paid: Energy },
}

enum Phase {
    Query,
    /// Fight: waiting for losers to hand over energy.
    Surrender { winner: usize, owed: BTreeMap<AgentId, Energy>, paid: BTreeMap<AgentId, Energy> },
}

struct Meeting {
    members: Vec<Member>,
    answers: Vec<Answer>,
    phase: Phase,
    started: Instant,
}

impl Meeting {
    fn index_of(&self, id: AgentId) -> Option<usize> {
        self.members.iter().position(|m| m.id == id)
    }

    fn responders(&self) -> impl Iterator<Item = (usize, &Member, &AgentRecord)> {
        self.members.iter().zip(&self.answers).enumerate().filter_map(|(i, (m, a))| match a {
            Answer::State(r) | Answer::Parent { record: r, .. } => Some((i, m, r)),
            _ => None,
        })
    }

    fn end(&self) {
        for (_, m, _) in self.responders() {
            m.addr.send(Message::MeetingEnded);
        }
    }

    fn snapshot(&self) -> Result<(Vec<AgentId>, Snapshot), ContractError> {
        let mut snap = Snapshot::new();
        let mut ids = Vec::new();
        for (_, m, r) in self.responders() {
            snap.insert(m.id, r.clone())?;
            ids.push(m.id);
        }
        Ok((ids, snap))
    }
}

/// A meeting arena. Collects joining agents in an [`ArenaBarrier`] and runs
/// each released group as a message-driven meeting.
pub(crate) struct ArenaEntity {
    kind: ArenaKind,
    barrier: ArenaBarrier<Addr>,
    meetings: BTreeMap<u64, Meeting>,
    next_meeting: u64,
    shared: Arc<Shared>,
    evaluator: Evaluator,
    ids: Arc<IdSource>,
    rng: EmasRng,
}

impl ArenaEntity {
    pub fn new(
        kind: ArenaKind,
        capacity: usize,
        timeout: Duration,
        shared: Arc<Shared>,
        evaluator: Evaluator,
        ids: Arc<IdSource>,
    ) -> Self {
        let rng = Stream::Arena(shared.island, kind.index()).rng(shared.seed);
        Self {
            kind,
            barrier: ArenaBarrier::new(capacity, timeout),
            meetings: BTreeMap::new(),
            next_meeting: 0,
            shared,
            evaluator,
            ids,
            rng,
        }
    }

    fn begin(&mut self, group: Vec<(AgentId, Addr)>, ctx: &Ctx) {
        let key = self.next_meeting;
        self.next_meeting += 1;
        let mut answers = Vec::with_capacity(group.len());
        for (_, addr) in &group {
            let transfer = Energy(self.shared.params.reproduction_transfer);
            let reply = ctx.me().clone();
            let asked = match self.kind {
                ArenaKind::Reproduction => addr.send(Message::AskParent { meeting: key, transfer, reply }),
                _ => addr.send(Message::AskState { meeting: key, reply }),
            };
            answers.push(if asked { Answer::Pending } else { Answer::Refused });
        }
        let meeting = Meeting {
            members: group.into_iter().map(|(id, addr)| Member { id, addr }).collect(),
            answers,
            phase: Phase::Query,
            started: Instant::now(),
        };
        self.meetings.insert(key, meeting);
        self.advance(key, ctx);
    }

    fn answer(&mut self, key: u64, id: AgentId, answer: Answer, from: Addr, ctx: &Ctx) {
        let Some(meeting) = self.meetings.get_mut(&key) else {
            // The meeting was aborted before this member answered: undo any
            // payment and release the member.
            if let Answer::Parent { paid, .. } = &answer {
                if !paid.is_zero() {
                    from.send(Message::Receive { amount: *paid });
                }
            }
            from.send(Message::MeetingEnded);
            return;
        };
        let Some(i) = meeting.index_of(id) else { return };
        if matches!(meeting.phase, Phase::Query) {
            meeting.answers[i] = answer;
            self.advance(key, ctx);
        }
    }

    fn surrendered(&mut self, key: u64, id: AgentId, amount: Energy, from: Addr) {
        let Some(meeting) = self.meetings.get_mut(&key) else {
            // Meeting aborted while the energy was on its way: give it back.
            if !amount.is_zero() {
                from.send(Message::Receive { amount });
            }
            return;
        };
        if let Phase::Surrender { owed, paid, .. } = &mut meeting.phase {
            if owed.remove(&id).is_some() {
                paid.insert(id, amount);
            }
        }
        self.try_settle(key);
    }

    fn refused(&mut self, key: u64, id: AgentId, ctx: &Ctx) {
        let Some(meeting) = self.meetings.get_mut(&key) else { return };
        match &mut meeting.phase {
            Phase::Query => {
                if let Some(i) = meeting.index_of(id) {
                    meeting.answers[i] = Answer::Refused;
                }
                self.advance(key, ctx);
            }
            Phase::Surrender { owed, paid, .. } => {
                if owed.remove(&id).is_some() {
                    paid.insert(id, Energy::ZERO);
                }
                self.try_settle(key);
            }
        }
    }

    /// Runs the meeting body once every member has answered the query.
    fn advance(&mut self, key: u64, ctx: &Ctx) {
        let meeting = &self.meetings[&key];
        if meeting.answers.iter().any(|a| matches!(a, Answer::Pending)) {
            return;
        }
        match self.kind {
            ArenaKind::Death => self.run_death(key),
            ArenaKind::Fight => self.run_fight(key),
            ArenaKind::Reproduction => self.run_reproduction(key, ctx),
        }
    }

    fn pre(&self, meeting: &Meeting) -> Option<(Vec<AgentId>, Snapshot)> {
        let contracts = self.shared.contracts.as_ref()?;
        let checked = meeting.snapshot().and_then(|(ids, snap)| {
            check_pre(contract_for(self.kind, ids.len(), contracts), &ids, &snap)?;
            Ok((ids, snap))
        });
        match checked {
            Ok(v) => Some(v),
            Err(e) => {
                self.shared.violation(e);
                None
            }
        }
    }

    fn post(&self, actors: &[AgentId], before: &Snapshot, outcome: &[Agent]) {
        let Some(contracts) = self.shared.contracts.as_ref() else { return };
        let mut after = before.clone();
        let result = after
            .apply_outcome(self.shared.island, actors, outcome)
            .and_then(|_| check_action(contract_for(self.kind, actors.len(), contracts), actors, before, &after));
        if let Err(e) = result {
            self.shared.violation(e);
        }
    }

    fn finish(&mut self, key: u64) {
        if let Some(meeting) = self.meetings.remove(&key) {
            meeting.end();
            self.shared.meetings.fetch_add(1, Ordering::AcqRel);
        }
    }

    fn abandon(&mut self, key: u64) {
        if let Some(meeting) = self.meetings.remove(&key) {
            meeting.end();
            self.shared.aborted.fetch_add(1, Ordering::AcqRel);
        }
    }

    fn checked(&self) -> bool {
        self.shared.contracts.is_some()
    }

    fn run_death(&mut self, key: u64) {
        let meeting = &self.meetings[&key];
        let checked = if self.checked() {
            match self.pre(meeting) {
                Some(v) => Some(v),
                None => return self.abandon(key),
            }
        } else {
            None
        };
        let victims: Vec<(AgentId, Addr)> = meeting
            .responders()
            .filter(|(_, _, r)| r.energy.is_zero())
            .map(|(_, m, _)| (m.id, m.addr.clone()))
            .collect();
        if victims.len() != meeting.responders().count() {
            return self.abandon(key);
        }
        if let Some((ids, before)) = checked {
            self.post(&ids, &before, &[]);
        }
        self.meetings.remove(&key);
        for (id, addr) in victims {
            addr.send(Message::Die);
            self.shared.dir().monitor.send(Message::Died { id });
        }
        self.shared.meetings.fetch_add(1, Ordering::AcqRel);
    }

    fn fight_agents(meeting: &Meeting) -> Vec<Agent> {
        meeting
            .responders()
            .map(|(_, m, r)| {
                let sol = match r.fitness {
                    Some(f) => Solution::with_fitness(Vec::new(), f),
                    None => Solution::uninitialized(0),
                };
                let mut a = Agent::new(m.id, sol, r.energy);
                a.tp = r.tp;
                a
            })
            .collect()
    }

    fn run_fight(&mut self, key: u64) {
        let meeting = &self.meetings[&key];
        let checked = if self.checked() {
            match self.pre(meeting) {
                Some(v) => Some(v),
                None => return self.abandon(key),
            }
        } else {
            None
        };
        let before = Self::fight_agents(meeting);
        if before.is_empty() {
            return self.finish(key);
        }
        let mut after = before.clone();
        fight_in_place(&mut after, &self.shared.params).expect("non-empty fight");
        let owed: BTreeMap<AgentId, Energy> = before
            .iter()
            .zip(&after)
            .filter(|(b, a)| a.energy < b.energy)
            .map(|(b, a)| (b.id, b.energy - a.energy))
            .collect();
        let winner = before.iter().zip(&after).position(|(b, a)| a.energy > b.energy);
        match winner {
            None => {
                if let Some((ids, snap)) = checked {
                    self.post(&ids, &snap, &after);
                }
                self.finish(key);
            }
            Some(w) => {
                let winner_index = meeting.responders().nth(w).map(|(i, _, _)| i).expect("winner is a responder");
                let me = self.shared.dir().arena(ArenaKind::Fight).clone();
                for (id, amount) in &owed {
                    let member = &meeting.members[meeting.index_of(*id).expect("member")];
                    member.addr.send(Message::Surrender { meeting: key, amount: *amount, reply: me.clone() });
                }
                let meeting = self.meetings.get_mut(&key).expect("meeting present");
                meeting.phase = Phase::Surrender { winner: winner_index, owed, paid: BTreeMap::new() };
                self.try_settle(key);
            }
        }
    }

    /// Pays the winner once every loser has surrendered.
    fn try_settle(&mut self, key: u64) {
        let Some(meeting) = self.meetings.get(&key) else { return };
        let Phase::Surrender { winner, owed, paid } = &meeting.phase else { return };
        if !owed.is_empty() {
            return;
        }
        let gained: Energy = paid.values().copied().sum();
        let winner_member = &meeting.members[*winner];
        if !gained.is_zero() {
            winner_member.addr.send(Message::Receive { amount: gained });
        }
        if self.checked() {
            let before = Self::fight_agents(meeting);
            let after: Vec<Agent> = before
                .iter()
                .map(|b| {
                    let mut a = b.clone();
                    if b.id == winner_member.id {
                        a.energy += gained;
                    } else if let Some(p) = paid.get(&b.id) {
                        a.energy -= *p;
                    }
                    a
                })
                .collect();
            if let Ok((ids, snap)) = meeting.snapshot() {
                self.post(&ids, &snap, &after);
            }
        }
        self.finish(key);
    }

    fn run_reproduction(&mut self, key: u64, ctx: &Ctx) {
        let meeting = &self.meetings[&key];
        let transfer = Energy(self.shared.params.reproduction_transfer);
        let checked = if self.checked() { self.pre(meeting) } else { None };
        let refund = |meeting: &Meeting| {
            for (m, a) in meeting.members.iter().zip(&meeting.answers) {
                if let Answer::Parent { paid, .. } = a {
                    if !paid.is_zero() {
                        m.addr.send(Message::Receive { amount: *paid });
                    }
                }
            }
        };
        let all_paid = meeting.answers.iter().all(|a| match a {
            Answer::Parent { paid, .. } => *paid == transfer,
            _ => true,
        });
        if (self.checked() && checked.is_none()) || !all_paid {
            refund(meeting);
            return self.abandon(key);
        }
        let parents: Vec<Agent> = meeting
            .members
            .iter()
            .zip(&meeting.answers)
            .filter_map(|(m, a)| match a {
                Answer::Parent { record, sol, .. } => {
                    let mut p = Agent::new(m.id, sol.clone(), record.energy);
                    p.tp = record.tp;
                    Some(p)
                }
                _ => None,
            })
            .collect();
        if parents.is_empty() {
            return self.finish(key);
        }
        let outcome =
            match reproduction_meeting(parents.clone(), &self.shared.params, &self.ids, &mut self.evaluator, &mut self.rng) {
                Ok(o) => o,
                Err(e) => {
                    log::error!("reproduction failed: {e}");
                    refund(&self.meetings[&key]);
                    return self.abandon(key);
                }
            };
        if let Some((ids, snap)) = checked {
            self.post(&ids, &snap, &outcome.agents);
        }
        for child in outcome.agents.into_iter().skip(parents.len()) {
            let objective = child.sol.objective().unwrap_or(f64::INFINITY);
            // Passive children never start, so they are never active.
            let addr = spawn_agent(ctx.runtime(), &self.shared, child, self.shared.autonomous);
            self.shared.dir().monitor.send(Message::Born { objective });
            if self.shared.autonomous {
                addr.send(Message::Start);
            }
        }
        self.finish(key);
    }

    fn on_tick(&mut self, ctx: &Ctx) {
        let now = Instant::now();
        if self.shared.is_stopping() && self.kind != ArenaKind::Death {
            for (_, addr) in self.barrier.flush() {
                addr.send(Message::MeetingEnded);
            }
        } else if let Some(group) = self.barrier.poll_timeout(now) {
            self.begin(group, ctx);
        }
        let expired: Vec<u64> = self
            .meetings
            .iter()
            .filter(|(_, m)| now.duration_since(m.started) > self.shared.reply_timeout)
            .map(|(k, _)| *k)
            .collect();
        for key in expired {
            log::debug!("{:?} meeting {key} timed out", self.kind);
            let meeting = &self.meetings[&key];
            if let Phase::Surrender { paid, .. } = &meeting.phase {
                for (id, amount) in paid {
                    let m = &meeting.members[meeting.index_of(*id).expect("member")];
                    if !amount.is_zero() {
                        m.addr.send(Message::Receive { amount: *amount });
                    }
                }
            }
            if let Phase::Query = meeting.phase {
                for (m, a) in meeting.members.iter().zip(&meeting.answers) {
                    if let Answer::Parent { paid, .. } = a {
                        if !paid.is_zero() {
                            m.addr.send(Message::Receive { amount: *paid });
                        }
                    }
                }
            }
            self.abandon(key);
        }
    }
}

impl Entity for ArenaEntity {
    fn handle(&mut self, msg: Message, ctx: &Ctx) -> Flow {
        match msg {
            Message::Join { from, id } => {
                if self.shared.is_stopping() && self.kind != ArenaKind::Death {
                    from.send(Message::MeetingEnded);
                    return Flow::Continue;
                }
                match self.barrier.join(id, from.clone(), Instant::now()) {
                    Ok(Some(group)) => self.begin(group, ctx),
                    Ok(None) => {}
                    Err(e) => {
                        log::error!("{e}");
                        self.shared.aborted.fetch_add(1, Ordering::AcqRel);
                    }
                }
            }
            Message::State { meeting, id, record, from } => self.answer(meeting, id, Answer::State(record), from, ctx),
            Message::Parent { meeting, id, record, sol, paid, from } => {
                self.answer(meeting, id, Answer::Parent { record, sol, paid }, from, ctx)
            }
            Message::Surrendered { meeting, id, amount, from } => self.surrendered(meeting, id, amount, from),
            Message::Refused { meeting, id } => self.refused(meeting, id, ctx),
            Message::Tick => self.on_tick(ctx),
            Message::Report { reply } => {
                let _ = reply.send(None);
            }
            _ => {}
        }
        Flow::Continue
    }
}

/// Keeps the island's metrics, decides when to stop, and routes migrants.
pub(crate) struct Monitor {
    shared: Arc<Shared>,
    clock: RunClock,
    stop: StopCondition,
    recorder: Recorder,
    sink: Option<Arc<MetricsSink>>,
    stop_tx: Sender<StopReason>,
    stopped: bool,
    gateway: Option<Gateway>,
    best: f64,
    population: u64,
    /// Initial energy plus immigrants minus emigrants: the island's total at
    /// quiescence, since meetings only move energy between agents.
    energy: u64,
}

impl Monitor {
    pub fn new(
        shared: Arc<Shared>,
        clock: RunClock,
        settings: &RunSettings,
        sink: Option<Arc<MetricsSink>>,
        stop_tx: Sender<StopReason>,
        gateway: Option<Gateway>,
        initial: IslandState,
    ) -> Self {
        let recorder = Recorder::new(shared.island, settings.snapshot_interval_ms);
        Self {
            shared,
            clock,
            stop: settings.stop.clone(),
            recorder,
            sink,
            stop_tx,
            stopped: false,
            gateway,
            best: initial.best,
            population: initial.population,
            energy: initial.total_energy,
        }
    }

    fn state(&self) -> IslandState {
        IslandState {
            best: self.best,
            evaluations: self.shared.counter.get(),
            population: self.population,
            total_energy: self.energy,
        }
    }

    fn now(&self) -> u64 {
        self.clock.now_ms(self.shared.meetings.load(Ordering::Acquire))
    }

    fn observe(&mut self) {
        if let Some(sink) = &self.sink {
            let (now, state) = (self.now(), self.state());
            self.recorder.observe(now, state, sink);
        }
        self.check_stop();
    }

    fn check_stop(&mut self) {
        if self.stopped || self.shared.is_stopping() {
            return;
        }
        let meetings = self.shared.meetings.load(Ordering::Acquire);
        let reason = self
            .stop
            .check(self.now(), self.shared.counter.get(), self.best, meetings)
            .or((self.population == 0).then_some(StopReason::Extinct));
        if let Some(reason) = reason {
            self.halt(reason);
        }
    }

    fn halt(&mut self, reason: StopReason) {
        if !self.stopped {
            self.stopped = true;
            self.shared.stopping.store(true, Ordering::Release);
            let _ = self.stop_tx.try_send(reason);
        }
    }

    fn emigrate(&mut self, agent: Agent, ctx: &Ctx) {
        let source = self.shared.island;
        let target = self.gateway.as_mut().and_then(|g| g.route(source));
        let back = match target {
            Some(destination) => {
                let energy = agent.energy.units();
                match self.gateway.as_ref().expect("gateway").send(MigrationEnvelope { agent, source, destination }) {
                    Ok(()) => {
                        self.population -= 1;
                        self.energy -= energy;
                        self.shared.active.fetch_sub(1, Ordering::AcqRel);
                        None
                    }
                    Err(envelope) => Some(envelope.agent),
                }
            }
            None => Some(agent),
        };
        if let Some(agent) = back {
            let addr = spawn_agent(ctx.runtime(), &self.shared, agent, false);
            addr.send(Message::Start);
        }
    }

    fn immigrate(&mut self, ctx: &Ctx) {
        let Some(gateway) = &self.gateway else { return };
        for envelope in gateway.receive(self.shared.island) {
            let agent = envelope.agent;
            self.population += 1;
            self.energy += agent.energy.units();
            if let Some(obj) = agent.sol.objective() {
                self.best = self.best.min(obj);
            }
            let addr = spawn_agent(ctx.runtime(), &self.shared, agent, true);
            addr.send(Message::Start);
        }
    }
}

impl Entity for Monitor {
    fn handle(&mut self, msg: Message, ctx: &Ctx) -> Flow {
        match msg {
            Message::Born { objective } => {
                self.population += 1;
                self.best = self.best.min(objective);
                self.observe();
            }
            Message::Died { .. } => {
                self.population -= 1;
                self.observe();
            }
            Message::Emigrate { agent } => self.emigrate(agent, ctx),
            Message::Tick => {
                if !self.shared.is_stopping() {
                    self.immigrate(ctx);
                }
                self.observe();
            }
            Message::StopNow(reason) => self.halt(reason),
            Message::Finish { state, reply } => {
                let state = IslandState { best: self.best, ..state };
                if let Some(sink) = &self.sink {
                    let clock = self.clock;
                    let shared = self.shared.clone();
                    self.recorder.finish(|| clock.now_ms(shared.meetings.load(Ordering::Acquire)), state, sink);
                }
                let _ = reply.send(self.best);
            }
            Message::Report { reply } => {
                let _ = reply.send(None);
            }
            _ => {}
        }
        Flow::Continue
    }
}
