//! Seeded random streams.
//!
//! Every consumer (island step loop, migration, arena, agent) gets its own
//! ChaCha8 stream derived from `(seed, stream id)`. Adding an island or an
//! arena never shifts the draws seen by another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{AgentId, IslandId};

pub type EmasRng = ChaCha8Rng;

/// Recorded in run provenance so CSV files from different builds can be compared.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9), seed_from_u64(seed) + set_stream(stream)";

pub fn seed_rng(seed: u64, stream: u64) -> EmasRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream identifiers: an 8-bit role in the top byte, an index below.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init(IslandId),
    Step(IslandId),
    Migration(IslandId),
    Arena(IslandId, u8),
    Agent(AgentId),
    Test(u64),
}

impl Stream {
    pub fn id(self) -> u64 {
        let (role, index): (u64, u64) = match self {
            Stream::Init(i) => (1, i.0 as u64),
            Stream::Step(i) => (2, i.0 as u64),
            Stream::Migration(i) => (3, i.0 as u64),
            Stream::Arena(i, k) => (4, ((i.0 as u64) << 8) | k as u64),
            Stream::Agent(a) => (5, a.0),
            Stream::Test(n) => (6, n),
        };
        (role << 56) | (index & ((1 << 56) - 1))
    }

    pub fn rng(self, seed: u64) -> EmasRng {
        seed_rng(seed, self.id())
    }
}
