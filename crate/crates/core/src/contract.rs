//! Runtime-checked action contracts.
//!
//! Each action is a `(type gate, precondition, postcondition)` triple. The
//! engines run their meetings through [`check_action`] when contract checking
//! is enabled; a failing clause is reported by name.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{subsumes, Agent, AgentId, EmasParams, Energy, IslandId, TypeTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckMode {
    #[default]
    Fast,
    Checked,
}

impl CheckMode {
    pub fn is_checked(self) -> bool {
        self == CheckMode::Checked
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clause {
    TypeGate,
    Pre,
    Post,
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Clause::TypeGate => "type-gate",
            Clause::Pre => "pre",
            Clause::Post => "post",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContractError {
    #[error("contract violation in `{action}`: {clause} clause failed")]
    Violation { action: String, clause: Clause },
    #[error("malformed snapshot: {0}")]
    Structural(String),
}

impl ContractError {
    pub fn clause(&self) -> Option<Clause> {
        match self {
            ContractError::Violation { clause, .. } => Some(*clause),
            ContractError::Structural(_) => None,
        }
    }
}

/// The part of an agent's state contracts reason about.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub env: IslandId,
    pub tp: TypeTag,
    pub energy: Energy,
    pub fitness: Option<f64>,
}

impl AgentRecord {
    pub fn of(env: IslandId, agent: &Agent) -> Self {
        Self { env, tp: agent.tp, energy: agent.energy, fitness: agent.sol.fitness() }
    }

    pub fn initialized(&self) -> bool {
        self.fitness.is_some()
    }
}

/// System state as seen by contracts: agents keyed by id, tagged with their
/// environment, plus the island neighbourhoods used by migration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    agents: BTreeMap<AgentId, AgentRecord>,
    neighbors: BTreeMap<IslandId, Vec<IslandId>>,
}

impl Snapshot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn of_population(env: IslandId, population: &[Agent]) -> Result<Self, ContractError> {
        let mut snap = Self::new();
        for agent in population {
            snap.insert_agent(env, agent)?;
        }
        Ok(snap)
    }

    pub fn insert_agent(&mut self, env: IslandId, agent: &Agent) -> Result<(), ContractError> {
        self.insert(agent.id, AgentRecord::of(env, agent))
    }

    pub fn insert(&mut self, id: AgentId, record: AgentRecord) -> Result<(), ContractError> {
        if self.agents.insert(id, record).is_some() {
            return Err(ContractError::Structural(format!("duplicate agent id {id}")));
        }
        Ok(())
    }

    pub fn remove(&mut self, id: AgentId) -> Option<AgentRecord> {
        self.agents.remove(&id)
    }

    pub fn get(&self, id: AgentId) -> Option<&AgentRecord> {
        self.agents.get(&id)
    }

    pub fn get_mut(&mut self, id: AgentId) -> Option<&mut AgentRecord> {
        self.agents.get_mut(&id)
    }

    pub fn contains(&self, id: AgentId) -> bool {
        self.agents.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AgentId, &AgentRecord)> {
        self.agents.iter()
    }

    /// Number of agents living in `env`.
    pub fn population(&self, env: IslandId) -> usize {
        self.agents.values().filter(|r| r.env == env).count()
    }

    pub fn total_energy(&self) -> Energy {
        self.agents.values().map(|r| r.energy).sum()
    }

    pub fn set_neighbors(&mut self, env: IslandId, neighbors: Vec<IslandId>) {
        self.neighbors.insert(env, neighbors);
    }

    pub fn neighbors(&self, env: IslandId) -> &[IslandId] {
        self.neighbors.get(&env).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Replaces `members` by the agents of a meeting outcome.
    pub fn apply_outcome(&mut self, env: IslandId, members: &[AgentId], outcome: &[Agent]) -> Result<(), ContractError> {
        for id in members {
            if self.agents.remove(id).is_none() {
                return Err(ContractError::Structural(format!("meeting member {id} not in snapshot")));
            }
        }
        for agent in outcome {
            self.insert_agent(env, agent)?;
        }
        Ok(())
    }
}

/// What a clause gets to look at.
pub struct ActionContext<'a> {
    pub actors: &'a [AgentId],
    pub before: &'a Snapshot,
}

impl<'a> ActionContext<'a> {
    pub fn record(&self, i: usize) -> &'a AgentRecord {
        self.before.get(self.actors[i]).expect("actors validated against snapshot")
    }

    pub fn records(&self) -> impl Iterator<Item = &'a AgentRecord> + '_ {
        (0..self.actors.len()).map(|i| self.record(i))
    }

    pub fn env(&self) -> Option<IslandId> {
        self.actors.first().map(|_| self.record(0).env)
    }

    fn same_env(&self) -> bool {
        let env = self.env();
        self.records().all(|r| Some(r.env) == env)
    }
}

type PreClause = dyn Fn(&ActionContext<'_>) -> bool + Send + Sync;
type PostClause = dyn Fn(&ActionContext<'_>, &Snapshot) -> bool + Send + Sync;

pub struct ActionContract {
    name: String,
    tp: TypeTag,
    pre: Box<PreClause>,
    post: Box<PostClause>,
}

impl fmt::Debug for ActionContract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActionContract").field("name", &self.name).field("tp", &self.tp).finish_non_exhaustive()
    }
}

impl ActionContract {
    pub fn new(
        name: impl Into<String>,
        tp: TypeTag,
        pre: impl Fn(&ActionContext<'_>) -> bool + Send + Sync + 'static,
        post: impl Fn(&ActionContext<'_>, &Snapshot) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), tp, pre: Box::new(pre), post: Box::new(post) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tp(&self) -> TypeTag {
        self.tp
    }

    fn violation(&self, clause: Clause) -> ContractError {
        ContractError::Violation { action: self.name.clone(), clause }
    }
}

/// Type gate and precondition only, for use before an action is carried out.
pub fn check_pre(contract: &ActionContract, actors: &[AgentId], before: &Snapshot) -> Result<(), ContractError> {
    validate_actors(actors, before)?;
    let ctx = ActionContext { actors, before };
    if !ctx.records().all(|r| subsumes(r.tp, contract.tp)) {
        return Err(contract.violation(Clause::TypeGate));
    }
    if !(contract.pre)(&ctx) {
        return Err(contract.violation(Clause::Pre));
    }
    Ok(())
}

fn validate_actors(actors: &[AgentId], before: &Snapshot) -> Result<(), ContractError> {
    for (i, id) in actors.iter().enumerate() {
        if !before.contains(*id) {
            return Err(ContractError::Structural(format!("actor {id} missing from the before-state")));
        }
        if actors[..i].contains(id) {
            return Err(ContractError::Structural(format!("actor {id} listed twice")));
        }
    }
    Ok(())
}

/// Checks one executed action: type gate, then precondition on `before`, then
/// the postcondition relating `before` and `after`.
pub fn check_action(
    contract: &ActionContract,
    actors: &[AgentId],
    before: &Snapshot,
    after: &Snapshot,
) -> Result<(), ContractError> {
    check_pre(contract, actors, before)?;
    let ctx = ActionContext { actors, before };
    if !(contract.post)(&ctx, after) {
        return Err(contract.violation(Clause::Post));
    }
    Ok(())
}

/// `after` equals `before` except for the listed agents, which must appear in
/// `after` with the given records (or be absent when `None`), plus exactly
/// the `newborn` agents which must be new ids.
fn matches_with_changes(
    before: &Snapshot,
    after: &Snapshot,
    changed: &[(AgentId, Option<AgentRecord>)],
    newborn: usize,
) -> bool {
    let expected_len = before.len() - changed.iter().filter(|(_, r)| r.is_none()).count() + newborn;
    if after.len() != expected_len {
        return false;
    }
    for (id, rec) in before.iter() {
        let change = changed.iter().find(|(c, _)| c == id);
        match (change, after.get(*id)) {
            (None, Some(a)) if a == rec => {}
            (Some((_, Some(expected))), Some(a)) if a == expected => {}
            (Some((_, None)), None) => {}
            _ => return false,
        }
    }
    true
}

fn newborns<'a>(before: &'a Snapshot, after: &'a Snapshot) -> impl Iterator<Item = (&'a AgentId, &'a AgentRecord)> {
    after.iter().filter(move |(id, _)| !before.contains(**id))
}

/// Index of the fight winner: the first member with the greatest fitness,
/// so an exact tie goes to whoever came first in the meeting.
pub fn fight_winner(fitnesses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &f) in fitnesses.iter().enumerate() {
        if best.is_none_or(|b| f > fitnesses[b]) {
            best = Some(i);
        }
    }
    best
}

/// The full action set of an EMAS individual, parameterised by the run's
/// energy constants.
#[derive(Debug)]
pub struct ContractSet {
    pub init: ActionContract,
    pub get: ActionContract,
    pub repr: ActionContract,
    pub repr_mutation_only: ActionContract,
    pub die: ActionContract,
    pub idle: ActionContract,
    pub migr: ActionContract,
}

impl ContractSet {
    pub fn new(params: &EmasParams) -> Self {
        let fight_transfer = Energy(params.fight_transfer);
        let threshold = Energy(params.reproduction_threshold);
        let transfer = Energy(params.reproduction_transfer);
        let migration_min = Energy(params.migration_energy_min);

        let init = ActionContract::new(
            "init",
            TypeTag::Ind,
            |ctx| ctx.actors.len() == 1 && !ctx.record(0).initialized(),
            |ctx, after| {
                let old = ctx.record(0);
                match after.get(ctx.actors[0]) {
                    Some(new) => {
                        new.initialized()
                            && new.energy == old.energy
                            && new.env == old.env
                            && matches_with_changes(ctx.before, after, &[(ctx.actors[0], Some(new.clone()))], 0)
                    }
                    None => false,
                }
            },
        );

        let get = ActionContract::new(
            "get",
            TypeTag::Ind,
            |ctx| {
                ctx.actors.len() >= 2
                    && ctx.same_env()
                    && ctx.env().is_some_and(|env| ctx.before.population(env) > 1)
            },
            move |ctx, after| {
                let fits: Vec<f64> = ctx.records().map(|r| r.fitness.unwrap_or(f64::NEG_INFINITY)).collect();
                let mut changes: Vec<(AgentId, Option<AgentRecord>)> = Vec::new();
                if let Some(w) = fight_winner(&fits) {
                    let mut gained = Energy::ZERO;
                    for (i, id) in ctx.actors.iter().enumerate() {
                        if i == w {
                            continue;
                        }
                        let mut rec = ctx.record(i).clone();
                        gained += rec.energy.take_up_to(fight_transfer);
                        changes.push((*id, Some(rec)));
                    }
                    let mut winner = ctx.record(w).clone();
                    winner.energy += gained;
                    changes.push((ctx.actors[w], Some(winner)));
                }
                after.total_energy() == ctx.before.total_energy() && matches_with_changes(ctx.before, after, &changes, 0)
            },
        );

        let repr_post = move |ctx: &ActionContext<'_>, after: &Snapshot| {
            let env = ctx.record(0).env;
            let mut changes = Vec::new();
            for (i, id) in ctx.actors.iter().enumerate() {
                let mut rec = ctx.record(i).clone();
                match rec.energy.checked_sub(transfer) {
                    Some(e) => rec.energy = e,
                    None => return false,
                }
                changes.push((*id, Some(rec)));
            }
            let children_ok = newborns(ctx.before, after)
                .all(|(_, c)| c.energy == transfer && c.tp == TypeTag::Ind && c.initialized() && c.env == env);
            children_ok && matches_with_changes(ctx.before, after, &changes, ctx.actors.len())
        };

        let repr = ActionContract::new(
            "repr",
            TypeTag::Ind,
            move |ctx| {
                ctx.actors.len() == 2
                    && ctx.same_env()
                    && ctx.env().is_some_and(|env| ctx.before.population(env) > 1)
                    && ctx.records().all(|r| r.energy > threshold)
            },
            repr_post,
        );

        let repr_mutation_only = ActionContract::new(
            "repr-mutation-only",
            TypeTag::Ind,
            move |ctx| ctx.actors.len() == 1 && ctx.record(0).energy > threshold,
            repr_post,
        );

        let die = ActionContract::new(
            "die",
            TypeTag::Ind,
            |ctx| ctx.actors.len() == 1 && ctx.record(0).energy.is_zero(),
            |ctx, after| matches_with_changes(ctx.before, after, &[(ctx.actors[0], None)], 0),
        );

        let idle = ActionContract::new("idle", TypeTag::Ind, |_| true, |ctx, after| after == ctx.before);

        let migr = ActionContract::new(
            "migr",
            TypeTag::Ind,
            |ctx| ctx.actors.len() == 1 && ctx.env().is_some_and(|env| !ctx.before.neighbors(env).is_empty()),
            move |ctx, after| {
                let old = ctx.record(0);
                if old.energy <= migration_min {
                    return matches_with_changes(ctx.before, after, &[], 0);
                }
                match after.get(ctx.actors[0]) {
                    Some(new) if ctx.before.neighbors(old.env).contains(&new.env) && new.env != old.env => {
                        let moved = AgentRecord { env: new.env, ..old.clone() };
                        new == &moved && matches_with_changes(ctx.before, after, &[(ctx.actors[0], Some(moved.clone()))], 0)
                    }
                    _ => false,
                }
            },
        );

        Self { init, get, repr, repr_mutation_only, die, idle, migr }
    }
}
