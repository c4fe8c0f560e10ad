//! Domain types: agents, their energy and solutions, the two-type hierarchy
//! and the parameters of an evolutionary multi-agent system.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub, SubAssign};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EmasError, Result};

/// Agent type. Individuals evolve; islands aggregate individuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TypeTag {
    Ind,
    Isl,
}

/// Subtype relation on [`TypeTag`]. The two types are incomparable, so the
/// order is the identity relation.
pub fn subsumes(a: TypeTag, b: TypeTag) -> bool {
    a == b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u64);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IslandId(pub u32);

impl fmt::Display for IslandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Life energy in integer units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Energy(pub u64);

impl Energy {
    pub const ZERO: Energy = Energy(0);

    pub fn units(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_sub(self, rhs: Energy) -> Option<Energy> {
        self.0.checked_sub(rhs.0).map(Energy)
    }

    /// Withdraws up to `amount` and returns what was actually taken.
    pub fn take_up_to(&mut self, amount: Energy) -> Energy {
        let taken = self.0.min(amount.0);
        self.0 -= taken;
        Energy(taken)
    }
}

impl fmt::Display for Energy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Add for Energy {
    type Output = Energy;
    fn add(self, rhs: Energy) -> Energy {
        Energy(self.0 + rhs.0)
    }
}

impl AddAssign for Energy {
    fn add_assign(&mut self, rhs: Energy) {
        self.0 += rhs.0;
    }
}

impl Sub for Energy {
    type Output = Energy;
    fn sub(self, rhs: Energy) -> Energy {
        Energy(self.0.checked_sub(rhs.0).expect("energy underflow"))
    }
}

impl SubAssign for Energy {
    fn sub_assign(&mut self, rhs: Energy) {
        *self = *self - rhs;
    }
}

impl Sum for Energy {
    fn sum<I: Iterator<Item = Energy>>(iter: I) -> Energy {
        Energy(iter.map(|e| e.0).sum())
    }
}

/// A candidate solution. The fitness cache doubles as the "initialised"
/// indicator: a solution is initialised exactly when its fitness is known.
///
/// Fitness is stored negated relative to the objective so that the best agent
/// is the one with the *largest* fitness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    values: Vec<f64>,
    fitness: Option<f64>,
}

impl Solution {
    pub fn uninitialized(dimension: usize) -> Self {
        Self { values: vec![0.0; dimension], fitness: None }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values, fitness: None }
    }

    /// Rebuilds an evaluated solution, e.g. one received from another island.
    pub fn with_fitness(values: Vec<f64>, fitness: f64) -> Self {
        Self { values, fitness: Some(fitness) }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.fitness.is_some()
    }

    pub fn fitness(&self) -> Option<f64> {
        self.fitness
    }

    /// Raw objective value (minimisation orientation).
    pub fn objective(&self) -> Option<f64> {
        self.fitness.map(|f| -f)
    }

    pub(crate) fn set_fitness(&mut self, fitness: f64) {
        self.fitness = Some(fitness);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: AgentId,
    pub tp: TypeTag,
    pub sol: Solution,
    pub energy: Energy,
}

impl Agent {
    pub fn new(id: AgentId, sol: Solution, energy: Energy) -> Self {
        Self { id, tp: TypeTag::Ind, sol, energy }
    }

    /// Internal fitness; `-inf` for an unevaluated solution.
    pub fn fitness(&self) -> f64 {
        self.sol.fitness().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Hands out agent identifiers. Each island draws from its own block of the
/// id space (island index in the upper bits) so ids stay unique system-wide
/// without coordination and without depending on thread interleaving.
#[derive(Debug)]
pub struct IdSource {
    next: AtomicU64,
}

const ISLAND_ID_SHIFT: u32 = 40;

impl IdSource {
    pub fn new() -> Self {
        Self::starting_at(0)
    }

    pub fn starting_at(first: u64) -> Self {
        Self { next: AtomicU64::new(first) }
    }

    pub fn for_island(island: IslandId) -> Self {
        Self::starting_at((island.0 as u64) << ISLAND_ID_SHIFT)
    }

    pub fn next_id(&self) -> AgentId {
        AgentId(self.next.fetch_add(1, Ordering::Relaxed))
    }

    pub fn peek(&self) -> u64 {
        self.next.load(Ordering::Relaxed)
    }
}

impl Default for IdSource {
    fn default() -> Self {
        Self::new()
    }
}

/// Island a given id was originally issued on.
pub fn issuing_island(id: AgentId) -> IslandId {
    IslandId((id.0 >> ISLAND_ID_SHIFT) as u32)
}

/// Parameters of an EMAS run. Defaults are the reference experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct EmasParams {
    pub initial_size: usize,
    pub initial_energy: u64,
    pub reproduction_threshold: u64,
    pub reproduction_transfer: u64,
    pub fight_transfer: u64,
    pub fight_arena_size: usize,
    pub migration_probability: f64,
    pub migration_energy_min: u64,
    pub problem_size: usize,
    pub mutation_rate: f64,
    pub mutation_range: f64,
    pub mutation_probability: f64,
    pub recombination_probability: f64,
}

impl Default for EmasParams {
    fn default() -> Self {
        Self {
            initial_size: 50,
            initial_energy: 10,
            reproduction_threshold: 10,
            reproduction_transfer: 5,
            fight_transfer: 10,
            fight_arena_size: 2,
            migration_probability: 0.001,
            migration_energy_min: 0,
            problem_size: 100,
            mutation_rate: 0.1,
            mutation_range: 0.05,
            mutation_probability: 0.75,
            recombination_probability: 0.3,
        }
    }
}

impl EmasParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(EmasError::InvalidParams(msg));
        for (name, p) in [
            ("migration-probability", self.migration_probability),
            ("mutation-rate", self.mutation_rate),
            ("mutation-probability", self.mutation_probability),
            ("recombination-probability", self.recombination_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.initial_size < 1 {
            return fail("initial-size must be at least 1".into());
        }
        if self.problem_size < 1 {
            return fail("problem-size must be at least 1".into());
        }
        if self.fight_arena_size < 2 {
            return fail(format!("fight-arena-size must be at least 2, got {}", self.fight_arena_size));
        }
        if !(self.mutation_range > 0.0 && self.mutation_range.is_finite()) {
            return fail(format!("mutation-range must be positive, got {}", self.mutation_range));
        }
        // A zero transfer would create zero-energy children, breaking the
        // one-unit-per-live-agent population bound.
        if self.reproduction_transfer < 1 {
            return fail("reproduction-transfer must be at least 1".into());
        }
        if self.reproduction_transfer > self.reproduction_threshold {
            return fail(format!(
                "reproduction-transfer ({}) exceeds reproduction-threshold ({})",
                self.reproduction_transfer, self.reproduction_threshold
            ));
        }
        Ok(())
    }

    pub fn initial_total_energy(&self) -> Energy {
        Energy(self.initial_size as u64 * self.initial_energy)
    }
}

pub fn total_energy<'a>(population: impl IntoIterator<Item = &'a Agent>) -> Energy {
    population.into_iter().map(|a| a.energy).sum()
}

/// Picks a meeting partner for `me`, uniformly among the other agents.
pub fn find_ag<'a, R: Rng + ?Sized>(population: &'a [Agent], me: AgentId, rng: &mut R) -> Result<&'a Agent> {
    let others = population.iter().filter(|a| a.id != me).count();
    if others == 0 {
        return Err(EmasError::NoNeighbor);
    }
    let pick = rng.random_range(0..others);
    Ok(population.iter().filter(|a| a.id != me).nth(pick).expect("index within count"))
}
