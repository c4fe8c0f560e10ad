//! Metrics samples, the bounded sink engines publish into, and the CSV
//! format runs are written in.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{EmasError, Result};
use crate::model::IslandId;

pub const CSV_HEADER: &str = "time_ms,island,best_fitness,evaluations,population,total_energy";
pub const CONFIG_PREFIX: &str = "# config: ";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time_ms: u64,
    pub island: u32,
    /// Best raw objective value found so far (lower is better).
    pub best_fitness: f64,
    pub evaluations: u64,
    pub population: u64,
    pub total_energy: u64,
}

/// Observable state of one island at a point in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IslandState {
    pub best: f64,
    pub evaluations: u64,
    pub population: u64,
    pub total_energy: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTimeline {
    pub samples: Vec<Sample>,
    /// Set when a population died out before the stop condition fired.
    pub extinct: bool,
    /// Samples lost to sink overflow.
    pub dropped: u64,
}

impl MetricsTimeline {
    pub fn from_samples(mut samples: Vec<Sample>) -> Self {
        samples.sort_by_key(|s| (s.time_ms, s.island));
        Self { samples, extinct: false, dropped: 0 }
    }

    pub fn islands(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.island).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn for_island(&self, island: u32) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.island == island)
    }

    pub fn last_for(&self, island: u32) -> Option<&Sample> {
        self.for_island(island).last()
    }

    /// Final best objective of each island, in island order.
    pub fn final_bests(&self) -> Vec<f64> {
        self.islands().into_iter().filter_map(|i| self.last_for(i).map(|s| s.best_fitness)).collect()
    }

    /// Mean over islands of each island's final best objective.
    pub fn aggregate_final_best(&self) -> Option<f64> {
        let bests = self.final_bests();
        (!bests.is_empty()).then(|| bests.iter().sum::<f64>() / bests.len() as f64)
    }

    pub fn total_evaluations(&self) -> u64 {
        self.islands().into_iter().filter_map(|i| self.last_for(i).map(|s| s.evaluations)).sum()
    }

    /// Per island: time strictly increasing, best non-increasing, evaluations non-decreasing.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut last: BTreeMap<u32, Sample> = BTreeMap::new();
        for s in &self.samples {
            if let Some(prev) = last.get(&s.island) {
                if s.time_ms <= prev.time_ms {
                    return Err(format!("island {}: time {} not after {}", s.island, s.time_ms, prev.time_ms));
                }
                if s.best_fitness > prev.best_fitness {
                    return Err(format!("island {}: best rose from {} to {}", s.island, prev.best_fitness, s.best_fitness));
                }
                if s.evaluations < prev.evaluations {
                    return Err(format!("island {}: evaluations fell from {} to {}", s.island, prev.evaluations, s.evaluations));
                }
            }
            last.insert(s.island, *s);
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W, config_echo: Option<&str>) -> Result<()> {
        let mut out = BufWriter::new(out);
        if let Some(echo) = config_echo {
            writeln!(out, "{CONFIG_PREFIX}{echo}")?;
        }
        if self.dropped > 0 {
            writeln!(out, "# dropped-samples: {}", self.dropped)?;
        }
        if self.extinct {
            writeln!(out, "# extinct: true")?;
        }
        writeln!(out, "{CSV_HEADER}")?;
        for s in &self.samples {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.time_ms, s.island, s.best_fitness, s.evaluations, s.population, s.total_energy
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path, config_echo: Option<&str>) -> Result<()> {
        self.write_csv(File::create(path)?, config_echo)
    }
}

/// A parsed CSV file.
#[derive(Debug, Clone, Default)]
pub struct CsvRun {
    pub config: Option<serde_json::Value>,
    pub timeline: MetricsTimeline,
    pub warnings: Vec<String>,
}

/// Reads a run CSV. A bad header is an error; malformed rows are skipped with
/// a warning.
pub fn read_csv(path: &Path) -> Result<CsvRun> {
    let reader = BufReader::new(File::open(path)?);
    let mut run = CsvRun::default();
    let mut header_seen = false;
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end();
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(json) = line.strip_prefix(CONFIG_PREFIX) {
                run.config = serde_json::from_str(json).ok();
            } else if rest.trim() == "extinct: true" {
                run.timeline.extinct = true;
            }
            continue;
        }
        if !header_seen {
            if line != CSV_HEADER {
                return Err(EmasError::Config(format!("{}: unexpected header {line:?}", path.display())));
            }
            header_seen = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        match parse_row(line) {
            Some(s) => samples.push(s),
            None => run.warnings.push(format!("{}:{}: malformed row {line:?}", path.display(), lineno + 1)),
        }
    }
    if !header_seen {
        return Err(EmasError::Config(format!("{}: missing header", path.display())));
    }
    run.timeline.samples = samples;
    Ok(run)
}

fn parse_row(line: &str) -> Option<Sample> {
    let mut f = line.split(',');
    let s = Sample {
        time_ms: f.next()?.parse().ok()?,
        island: f.next()?.parse().ok()?,
        best_fitness: f.next()?.parse().ok()?,
        evaluations: f.next()?.parse().ok()?,
        population: f.next()?.parse().ok()?,
        total_energy: f.next()?.parse().ok()?,
    };
    f.next().is_none().then_some(s)
}

/// Bounded sample buffer. Pushing never blocks: when full, the oldest sample
/// is discarded and counted.
#[derive(Debug)]
pub struct MetricsSink {
    buffer: Mutex<VecDeque<Sample>>,
    capacity: usize,
    dropped: AtomicU64,
}

impl MetricsSink {
    pub const DEFAULT_CAPACITY: usize = 1 << 16;

    pub fn new(capacity: usize) -> Self {
        Self { buffer: Mutex::new(VecDeque::new()), capacity: capacity.max(1), dropped: AtomicU64::new(0) }
    }

    pub fn unbounded() -> Self {
        Self::new(usize::MAX)
    }

    pub fn push(&self, sample: Sample) {
        let mut buf = self.buffer.lock().expect("sink poisoned");
        if buf.len() >= self.capacity {
            buf.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        buf.push_back(sample);
    }

    pub fn drain(&self) -> Vec<Sample> {
        self.buffer.lock().expect("sink poisoned").drain(..).collect()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    /// Drains everything into a timeline.
    pub fn timeline(&self) -> MetricsTimeline {
        let mut t = MetricsTimeline::from_samples(self.drain());
        t.dropped = self.dropped();
        t
    }
}

impl Default for MetricsSink {
    fn default() -> Self {
        Self::new(Self::DEFAULT_CAPACITY)
    }
}

/// Background thread that keeps emptying a sink so engines never lose samples
/// to overflow in long runs.
pub struct Collector {
    sink: Arc<MetricsSink>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<Vec<Sample>>>,
}

impl Collector {
    pub fn spawn(sink: Arc<MetricsSink>) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let sink = sink.clone();
            let stop = stop.clone();
            std::thread::Builder::new()
                .name("metrics-collector".into())
                .spawn(move || {
                    let mut all = Vec::new();
                    while !stop.load(Ordering::Acquire) {
                        all.extend(sink.drain());
                        std::thread::sleep(Duration::from_millis(20));
                    }
                    all.extend(sink.drain());
                    all
                })
                .expect("spawn collector")
        };
        Self { sink, stop, handle: Some(handle) }
    }

    pub fn finish(mut self) -> MetricsTimeline {
        self.stop.store(true, Ordering::Release);
        let samples = self.handle.take().expect("joined once").join().unwrap_or_default();
        let mut t = MetricsTimeline::from_samples(samples);
        t.dropped = self.sink.dropped();
        t
    }
}

/// Decides when an island emits a row: on every snapshot tick and whenever
/// the best objective improves, with at most one row per clock millisecond.
#[derive(Debug, Clone)]
pub struct Recorder {
    island: IslandId,
    interval_ms: u64,
    last_row: Option<(u64, IslandState)>,
    last_snapshot_ms: u64,
}

impl Recorder {
    pub fn new(island: IslandId, interval_ms: u64) -> Self {
        Self { island, interval_ms: interval_ms.max(1), last_row: None, last_snapshot_ms: 0 }
    }

    pub fn observe(&mut self, now_ms: u64, state: IslandState, sink: &MetricsSink) {
        let (emit, snapshot) = match self.last_row {
            None => (true, true),
            Some((t, prev)) => {
                let due = now_ms >= self.last_snapshot_ms + self.interval_ms;
                (now_ms > t && (due || state.best < prev.best), due)
            }
        };
        if emit {
            if snapshot {
                self.last_snapshot_ms = now_ms;
            }
            self.emit(now_ms, state, sink);
        }
    }

    /// Final row, emitted only if the state changed since the last one. Waits
    /// for the wall clock to move past the previous row if it must.
    pub fn finish(&mut self, now_ms: impl Fn() -> u64, state: IslandState, sink: &MetricsSink) {
        match self.last_row {
            Some((_, prev)) if prev == state => {}
            Some((t, _)) => {
                let mut now = now_ms();
                let mut spins = 0;
                while now <= t && spins < 100 {
                    std::thread::sleep(Duration::from_millis(1));
                    now = now_ms();
                    spins += 1;
                }
                if now > t {
                    self.emit(now, state, sink);
                }
            }
            None => self.emit(now_ms(), state, sink),
        }
    }

    pub fn last_time(&self) -> Option<u64> {
        self.last_row.map(|(t, _)| t)
    }

    fn emit(&mut self, now_ms: u64, state: IslandState, sink: &MetricsSink) {
        sink.push(Sample {
            time_ms: now_ms,
            island: self.island.0,
            best_fitness: state.best,
            evaluations: state.evaluations,
            population: state.population,
            total_energy: state.total_energy,
        });
        self.last_row = Some((now_ms, state));
    }
}
