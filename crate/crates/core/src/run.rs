//! Stop conditions, clocks and run reports shared by all engines.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::contract::CheckMode;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct StopCondition {
    #[serde(with = "duration_ms", skip_serializing_if = "Option::is_none")]
    pub duration: Option<Duration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_evaluations: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

impl StopCondition {
    pub fn duration(d: Duration) -> Self {
        Self { duration: Some(d), ..Self::default() }
    }

    pub fn steps(n: u64) -> Self {
        Self { max_steps: Some(n), ..Self::default() }
    }

    pub fn evaluations(n: u64) -> Self {
        Self { max_evaluations: Some(n), ..Self::default() }
    }

    pub fn or_target(mut self, target: f64) -> Self {
        self.target_objective = Some(target);
        self
    }

    pub fn is_unbounded(&self) -> bool {
        self.duration.is_none() && self.max_evaluations.is_none() && self.target_objective.is_none() && self.max_steps.is_none()
    }

    /// First condition that has fired, if any.
    pub fn check(&self, elapsed_ms: u64, evaluations: u64, best: f64, steps: u64) -> Option<StopReason> {
        if self.target_objective.is_some_and(|t| best < t) {
            return Some(StopReason::Target);
        }
        if self.max_evaluations.is_some_and(|m| evaluations >= m) {
            return Some(StopReason::MaxEvaluations);
        }
        if self.max_steps.is_some_and(|m| steps >= m) {
            return Some(StopReason::MaxSteps);
        }
        if self.duration.is_some_and(|d| elapsed_ms >= d.as_millis() as u64) {
            return Some(StopReason::Duration);
        }
        None
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match d {
            Some(d) => s.serialize_u64(d.as_millis() as u64),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<u64>::deserialize(d)?.map(Duration::from_millis))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Duration,
    MaxEvaluations,
    Target,
    MaxSteps,
    Extinct,
    Failed,
}

/// Time base for metrics rows and duration budgets. `Steps` counts one
/// millisecond per synchronous step, which makes timelines reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockKind {
    #[default]
    Wall,
    Steps,
}

#[derive(Debug, Clone, Copy)]
pub struct RunClock {
    kind: ClockKind,
    start: Instant,
}

impl RunClock {
    pub fn start(kind: ClockKind) -> Self {
        Self { kind, start: Instant::now() }
    }

    pub fn kind(&self) -> ClockKind {
        self.kind
    }

    pub fn now_ms(&self, steps: u64) -> u64 {
        match self.kind {
            ClockKind::Wall => self.start.elapsed().as_millis() as u64,
            ClockKind::Steps => steps,
        }
    }

    pub fn wall_elapsed(&self) -> Duration {
        self.start.elapsed()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct RunSettings {
    pub seed: u64,
    pub stop: StopCondition,
    pub check: CheckMode,
    pub clock: ClockKind,
    pub snapshot_interval_ms: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            stop: StopCondition::default(),
            check: CheckMode::Fast,
            clock: ClockKind::Wall,
            snapshot_interval_ms: 1000,
        }
    }
}

impl RunSettings {
    pub fn new(seed: u64, stop: StopCondition) -> Self {
        Self { seed, stop, ..Self::default() }
    }

    pub fn checked(mut self) -> Self {
        self.check = CheckMode::Checked;
        self
    }

    pub fn with_clock(mut self, clock: ClockKind) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_snapshot_interval_ms(mut self, ms: u64) -> Self {
        self.snapshot_interval_ms = ms;
        self
    }
}

/// Summary of a finished single-island run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub reason: StopReason,
    pub steps: u64,
    pub evaluations: u64,
    pub best_objective: f64,
    pub population: usize,
    pub total_energy: u64,
    pub wall_time: Duration,
}

impl RunReport {
    pub fn evaluations_per_second(&self) -> f64 {
        self.evaluations as f64 / self.wall_time.as_secs_f64().max(1e-9)
    }
}
