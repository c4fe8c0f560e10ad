//! Evolutionary multi-agent system (EMAS) with synchronous and asynchronous
//! engines, island migration and run tooling.

pub mod arena;
pub mod cli;
pub mod config;
pub mod contract;
pub mod engine_async;
pub mod error;
pub mod islands;
pub mod metrics;
pub mod model;
pub mod operators;
pub mod rng;
pub mod run;
pub mod summary;

pub use error::{EmasError, Result};
