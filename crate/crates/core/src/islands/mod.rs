//! Islands: populations that evolve independently and exchange agents.
//!
//! Each island runs its own engine. After every step, each agent migrates
//! with a small probability to a target island, travelling in a
//! [`MigrationEnvelope`] through a [`Transport`].

mod cluster;
pub mod tcp;
pub mod wire;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arena::SyncEngine;
use crate::error::{EmasError, Result};
use crate::model::{Agent, Energy, IslandId};
use crate::rng::{EmasRng, Stream};

pub use cluster::{run_async_cluster, run_cluster, AbortableBarrier, Cluster, ClusterReport, ClusterSpec, IslandReport};

/// How migration targets are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Each island neighbours the previous and next one.
    Ring,
    /// Every island neighbours every other one.
    Complete,
    /// Target drawn uniformly from all islands, the origin included.
    #[default]
    Experiment,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Ring => "ring",
            Topology::Complete => "complete",
            Topology::Experiment => "experiment",
        })
    }
}

impl FromStr for Topology {
    type Err = EmasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(Topology::Ring),
            "complete" => Ok(Topology::Complete),
            "experiment" => Ok(Topology::Experiment),
            _ => Err(EmasError::Config(format!("unknown topology `{s}` (ring|complete|experiment)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Island {
    pub id: IslandId,
    pub neighbors: Vec<IslandId>,
}

impl Island {
    pub fn new(id: IslandId, neighbors: Vec<IslandId>) -> Result<Self> {
        if neighbors.contains(&id) {
            return Err(EmasError::InvalidParams(format!("island {id} cannot neighbour itself")));
        }
        Ok(Self { id, neighbors })
    }
}

/// Islands `0..count` wired according to `topology`. The experiment mode
/// uses complete neighbourhoods.
pub fn build_islands(count: usize, topology: Topology) -> Vec<Island> {
    (0..count)
        .map(|i| {
            let mut neighbors: Vec<IslandId> = match topology {
                Topology::Ring if count > 1 => vec![(i + count - 1) % count, (i + 1) % count],
                Topology::Ring => vec![],
                Topology::Complete | Topology::Experiment => (0..count).filter(|&j| j != i).collect(),
            }
            .into_iter()
            .map(|j| IslandId(j as u32))
            .collect();
            neighbors.sort_unstable();
            neighbors.dedup();
            Island { id: IslandId(i as u32), neighbors }
        })
        .collect()
}

/// Uniform choice among the island's neighbours.
pub fn find_loc<R: Rng + ?Sized>(island: &Island, rng: &mut R) -> Result<IslandId> {
    if island.neighbors.is_empty() {
        return Err(EmasError::NoNeighbor);
    }
    Ok(island.neighbors[rng.random_range(0..island.neighbors.len())])
}

/// Picks migration destinations for one island.
#[derive(Debug, Clone)]
pub struct Router {
    topology: Topology,
    island: Island,
    island_count: usize,
}

impl Router {
    pub fn new(topology: Topology, island: Island, island_count: usize) -> Self {
        Self { topology, island, island_count }
    }

    pub fn for_island(id: IslandId, count: usize, topology: Topology) -> Self {
        let island = build_islands(count, topology).swap_remove(id.0 as usize);
        Self::new(topology, island, count)
    }

    pub fn island(&self) -> &Island {
        &self.island
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// Destination for a migrant, or `None` when it stays home (self target
    /// in experiment mode, or no neighbours).
    pub fn target<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<IslandId> {
        let dest = match self.topology {
            Topology::Experiment => IslandId(rng.random_range(0..self.island_count.max(1)) as u32),
            Topology::Ring | Topology::Complete => find_loc(&self.island, rng).ok()?,
        };
        (dest != self.island.id).then_some(dest)
    }
}

/// An agent in transit between islands. Its energy left the source when the
/// envelope was made; its cached fitness travels with it.
#[derive(Debug, Clone, PartialEq)]
pub struct MigrationEnvelope {
    pub agent: Agent,
    pub source: IslandId,
    pub destination: IslandId,
}

impl MigrationEnvelope {
    pub fn energy(&self) -> Energy {
        self.agent.energy
    }
}

/// Moves envelopes between islands. A failed send hands the envelope back so
/// the source can reinstate the agent.
pub trait Transport: Send + Sync {
    fn send(&self, envelope: MigrationEnvelope) -> std::result::Result<(), MigrationEnvelope>;

    /// Everything delivered to `island`, ordered by (source, agent id).
    fn receive(&self, island: IslandId) -> Vec<MigrationEnvelope>;

    /// Energy in envelopes sent but not yet received.
    fn in_flight_energy(&self) -> Energy {
        Energy::ZERO
    }
}

/// Per-island mailboxes in shared memory.
#[derive(Debug)]
pub struct InProcessTransport {
    mailboxes: Vec<Mutex<Vec<MigrationEnvelope>>>,
    down: Vec<AtomicBool>,
}

impl InProcessTransport {
    pub fn new(islands: usize) -> Self {
        Self {
            mailboxes: (0..islands).map(|_| Mutex::new(Vec::new())).collect(),
            down: (0..islands).map(|_| AtomicBool::new(false)).collect(),
        }
    }

    /// Makes sends to `island` fail, as if it were unreachable.
    pub fn set_down(&self, island: IslandId, down: bool) {
        if let Some(flag) = self.down.get(island.0 as usize) {
            flag.store(down, Ordering::Release);
        }
    }

    pub fn pending(&self) -> usize {
        self.mailboxes.iter().map(|m| m.lock().unwrap().len()).sum()
    }
}

impl Transport for InProcessTransport {
    fn send(&self, envelope: MigrationEnvelope) -> std::result::Result<(), MigrationEnvelope> {
        let i = envelope.destination.0 as usize;
        match (self.mailboxes.get(i), self.down.get(i)) {
            (Some(mailbox), Some(down)) if !down.load(Ordering::Acquire) => {
                mailbox.lock().unwrap().push(envelope);
                Ok(())
            }
            _ => Err(envelope),
        }
    }

    fn receive(&self, island: IslandId) -> Vec<MigrationEnvelope> {
        let Some(mailbox) = self.mailboxes.get(island.0 as usize) else { return Vec::new() };
        let mut got = std::mem::take(&mut *mailbox.lock().unwrap());
        got.sort_by_key(|e| (e.source, e.agent.id));
        got
    }

    fn in_flight_energy(&self) -> Energy {
        self.mailboxes.iter().flat_map(|m| m.lock().unwrap().iter().map(|e| e.energy()).collect::<Vec<_>>()).sum()
    }
}

/// An island's connection to the others: its router, the shared transport
/// and the random stream migration decisions are drawn from.
pub struct Gateway {
    router: Router,
    transport: Arc<dyn Transport>,
    rng: EmasRng,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("router", &self.router).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(router: Router, transport: Arc<dyn Transport>, seed: u64) -> Self {
        let rng = Stream::Migration(router.island().id).rng(seed);
        Self { router, transport, rng }
    }

    pub fn island(&self) -> IslandId {
        self.router.island().id
    }

    /// Destination for one migrant leaving `source`.
    pub fn route(&mut self, source: IslandId) -> Option<IslandId> {
        debug_assert_eq!(source, self.island());
        self.router.target(&mut self.rng)
    }

    pub fn send(&self, envelope: MigrationEnvelope) -> std::result::Result<(), MigrationEnvelope> {
        self.transport.send(envelope)
    }

    pub fn receive(&self, island: IslandId) -> Vec<MigrationEnvelope> {
        self.transport.receive(island)
    }

    /// Runs the migration phase on `engine` and sends the migrants; agents
    /// whose envelope cannot be delivered return to the engine.
    pub fn migrate(&mut self, engine: &mut SyncEngine) -> usize {
        let envelopes = migration_phase(engine, &self.router, &mut self.rng);
        let mut sent = 0;
        for envelope in envelopes {
            match self.transport.send(envelope) {
                Ok(()) => sent += 1,
                Err(back) => engine.absorb([back.agent]),
            }
        }
        sent
    }

    /// Appends everything addressed to this island.
    pub fn deliver(&self, engine: &mut SyncEngine) -> usize {
        let arrived = self.transport.receive(self.island());
        let n = arrived.len();
        engine.absorb(arrived.into_iter().map(|e| e.agent));
        n
    }
}

/// Selects this step's migrants: each agent independently with the
/// migration probability; those with energy above the migration minimum
/// and a destination other than home are removed and enveloped.
pub fn migration_phase<R: Rng + ?Sized>(engine: &mut SyncEngine, router: &Router, rng: &mut R) -> Vec<MigrationEnvelope> {
    let p = engine.params().migration_probability;
    let min = engine.params().migration_energy_min;
    if p <= 0.0 {
        return Vec::new();
    }
    let source = engine.island();
    let mut destinations = Vec::new();
    let migrants = engine.take_agents(|agent| {
        if !rng.random_bool(p) || agent.energy.units() <= min {
            return false;
        }
        match router.target(rng) {
            Some(dest) => {
                destinations.push(dest);
                true
            }
            None => false,
        }
    });
    migrants
        .into_iter()
        .zip(destinations)
        .map(|(agent, destination)| MigrationEnvelope { agent, source, destination })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::CheckMode;
    use crate::model::EmasParams;
    use crate::operators::Objective;
    use crate::rng::seed_rng;

    #[test]
    fn topologies() {
        let ring = build_islands(4, Topology::Ring);
        assert_eq!(ring[0].neighbors, vec![IslandId(1), IslandId(3)]);
        assert_eq!(build_islands(2, Topology::Ring)[0].neighbors, vec![IslandId(1)]);
        assert!(build_islands(1, Topology::Ring)[0].neighbors.is_empty());
        let complete = build_islands(3, Topology::Complete);
        assert_eq!(complete[2].neighbors, vec![IslandId(0), IslandId(1)]);
        for island in build_islands(5, Topology::Ring) {
            assert!(!island.neighbors.contains(&island.id));
        }
        assert!(Island::new(IslandId(1), vec![IslandId(1)]).is_err());
    }

    #[test]
    fn find_loc_forced_and_empty() {
        let mut rng = seed_rng(1, 1);
        let single = Island::new(IslandId(0), vec![IslandId(1)]).unwrap();
        for _ in 0..10 {
            assert_eq!(find_loc(&single, &mut rng).unwrap(), IslandId(1));
        }
        let lonely = Island::new(IslandId(0), vec![]).unwrap();
        assert!(matches!(find_loc(&lonely, &mut rng), Err(EmasError::NoNeighbor)));
    }

    fn engine(island: u32, p: f64) -> SyncEngine {
        let params = EmasParams { problem_size: 3, migration_probability: p, ..Default::default() };
        SyncEngine::new(params, Objective::rastrigin(3), IslandId(island), 5, CheckMode::Fast).unwrap()
    }

    #[test]
    fn zero_probability_no_envelopes() {
        let mut e = engine(0, 0.0);
        let router = Router::for_island(IslandId(0), 4, Topology::Complete);
        assert!(migration_phase(&mut e, &router, &mut seed_rng(1, 2)).is_empty());
        assert_eq!(e.population().len(), 50);
    }

    #[test]
    fn single_island_experiment_keeps_everyone() {
        let mut e = engine(0, 1.0);
        let router = Router::for_island(IslandId(0), 1, Topology::Experiment);
        assert!(migration_phase(&mut e, &router, &mut seed_rng(1, 2)).is_empty());
        assert_eq!(e.population().len(), 50);
    }

    #[test]
    fn envelopes_carry_the_removed_energy() {
        let mut e = engine(0, 0.5);
        let router = Router::for_island(IslandId(0), 2, Topology::Complete);
        let before = e.total_energy();
        let envs = migration_phase(&mut e, &router, &mut seed_rng(3, 2));
        assert!(!envs.is_empty());
        let moved: Energy = envs.iter().map(|e| e.energy()).sum();
        assert_eq!(e.total_energy() + moved, before);
        assert!(envs.iter().all(|env| env.destination == IslandId(1) && env.source == IslandId(0)));
    }

    #[test]
    fn in_process_transport_orders_and_bounces() {
        let t = InProcessTransport::new(2);
        let mk = |id: u64, src: u32| MigrationEnvelope {
            agent: Agent::new(crate::model::AgentId(id), crate::model::Solution::with_fitness(vec![1.0], -1.0), Energy(3)),
            source: IslandId(src),
            destination: IslandId(1),
        };
        t.send(mk(9, 0)).unwrap();
        t.send(mk(2, 0)).unwrap();
        assert_eq!(t.in_flight_energy(), Energy(6));
        let got = t.receive(IslandId(1));
        assert_eq!(got.iter().map(|e| e.agent.id.0).collect::<Vec<_>>(), vec![2, 9]);
        assert_eq!(t.in_flight_energy(), Energy::ZERO);
        t.set_down(IslandId(1), true);
        assert!(t.send(mk(5, 0)).is_err());
        let mut unknown = mk(6, 0);
        unknown.destination = IslandId(7);
        assert!(t.send(unknown).is_err());
    }
}
