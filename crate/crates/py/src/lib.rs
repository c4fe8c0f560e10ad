//! Python bindings for the `emas` engine.

use std::path::PathBuf;

use emas::arena::SyncEngine;
use emas::config::RunConfig;
use emas::contract::CheckMode;
use emas::islands::wire::{decode, encode, Frame};
use emas::metrics::{read_csv, MetricsTimeline};
use emas::model::{Agent, AgentId, EmasParams, Energy, IslandId, Solution};
use emas::operators::{rastrigin as rastrigin_fn, Objective};
use emas::EmasError;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

/// A metrics row: `(time_ms, island, best, evaluations, population, energy)`.
type Row = (u64, u32, f64, u64, u64, u64);
/// `(config, rows, warnings)` of a CSV file.
type CsvRun = (Option<String>, Vec<Row>, Vec<String>);
/// `(label, runs, mean_best, median_best, mean_evaluations)`.
type ScenarioRow = (String, usize, f64, f64, f64);

fn py_err(e: EmasError) -> PyErr {
    match e {
        EmasError::Config(_) | EmasError::InvalidParams(_) | EmasError::DimensionMismatch { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Model parameters; every field defaults to the reference settings.
#[pyclass(get_all, set_all, from_py_object)]
#[derive(Clone)]
struct Params {
    initial_size: usize,
    initial_energy: u64,
    reproduction_threshold: u64,
    reproduction_transfer: u64,
    fight_transfer: u64,
    fight_arena_size: usize,
    migration_probability: f64,
    migration_energy_min: u64,
    problem_size: usize,
    mutation_rate: f64,
    mutation_range: f64,
    mutation_probability: f64,
    recombination_probability: f64,
}

impl From<&EmasParams> for Params {
    fn from(p: &EmasParams) -> Self {
        Self {
            initial_size: p.initial_size,
            initial_energy: p.initial_energy,
            reproduction_threshold: p.reproduction_threshold,
            reproduction_transfer: p.reproduction_transfer,
            fight_transfer: p.fight_transfer,
            fight_arena_size: p.fight_arena_size,
            migration_probability: p.migration_probability,
            migration_energy_min: p.migration_energy_min,
            problem_size: p.problem_size,
            mutation_rate: p.mutation_rate,
            mutation_range: p.mutation_range,
            mutation_probability: p.mutation_probability,
            recombination_probability: p.recombination_probability,
        }
    }
}

impl From<&Params> for EmasParams {
    fn from(p: &Params) -> Self {
        Self {
            initial_size: p.initial_size,
            initial_energy: p.initial_energy,
            reproduction_threshold: p.reproduction_threshold,
            reproduction_transfer: p.reproduction_transfer,
            fight_transfer: p.fight_transfer,
            fight_arena_size: p.fight_arena_size,
            migration_probability: p.migration_probability,
            migration_energy_min: p.migration_energy_min,
            problem_size: p.problem_size,
            mutation_rate: p.mutation_rate,
            mutation_range: p.mutation_range,
            mutation_probability: p.mutation_probability,
            recombination_probability: p.recombination_probability,
        }
    }
}

#[pymethods]
impl Params {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let this = Bound::new(py, Params::from(&EmasParams::default()))?;
        if let Some(kwargs) = kwargs {
            for (key, value) in kwargs.iter() {
                this.setattr(key.extract::<String>()?.as_str(), value)?;
            }
        }
        let params = this.borrow().clone();
        Ok(params)
    }

    /// Raises `ValueError` if the parameters are inconsistent.
    fn validate(&self) -> PyResult<()> {
        EmasParams::from(self).validate().map_err(py_err)
    }

    fn initial_total_energy(&self) -> u64 {
        EmasParams::from(self).initial_total_energy().units()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", EmasParams::from(self))
    }
}

/// A single synchronous island that Python steps by hand.
#[pyclass(unsendable)]
struct Engine {
    inner: SyncEngine,
}

#[pymethods]
impl Engine {
    #[new]
    #[pyo3(signature = (params=None, seed=0, checked=false, island=0))]
    fn new(params: Option<Params>, seed: u64, checked: bool, island: u32) -> PyResult<Self> {
        let params = params.as_ref().map_or_else(EmasParams::default, EmasParams::from);
        let objective = Objective::rastrigin(params.problem_size);
        let check = if checked { CheckMode::Checked } else { CheckMode::Fast };
        let inner = SyncEngine::new(params, objective, IslandId(island), seed, check).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Runs `n` steps; stops early if the population dies out.
    #[pyo3(signature = (n=1))]
    fn step(&mut self, n: u64) -> PyResult<u64> {
        let mut done = 0;
        while done < n && !self.inner.is_extinct() {
            self.inner.step().map_err(py_err)?;
            done += 1;
        }
        Ok(done)
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.inner.steps()
    }

    #[getter]
    fn evaluations(&self) -> u64 {
        self.inner.evaluations()
    }

    /// Lowest objective value evaluated so far.
    #[getter]
    fn best(&self) -> f64 {
        self.inner.best_objective()
    }

    #[getter]
    fn population(&self) -> usize {
        self.inner.population().len()
    }

    #[getter]
    fn total_energy(&self) -> u64 {
        self.inner.total_energy().units()
    }

    #[getter]
    fn extinct(&self) -> bool {
        self.inner.is_extinct()
    }

    /// Agents as `(id, energy, objective, values)` tuples.
    fn agents(&self) -> Vec<(u64, u64, Option<f64>, Vec<f64>)> {
        self.inner.population().iter().map(|a| (a.id.0, a.energy.units(), a.sol.objective(), a.sol.values().to_vec())).collect()
    }
}

/// Outcome of a configured run.
#[pyclass(get_all)]
struct RunResult {
    /// Why the run stopped, e.g. `"Duration"` or `"Extinct"`.
    reason: String,
    evaluations: u64,
    /// Mean over islands of each island's best objective.
    aggregate_best: f64,
    global_best: f64,
    population: usize,
    total_energy: u64,
    wall_time: f64,
    /// Per island: `(island, steps, evaluations, best, population, energy)`.
    islands: Vec<(u32, u64, u64, f64, usize, u64)>,
    /// CSV rows: `(time_ms, island, best, evaluations, population, energy)`.
    samples: Vec<Row>,
}

fn rows(t: &MetricsTimeline) -> Vec<Row> {
    t.samples.iter().map(|s| (s.time_ms, s.island, s.best_fitness, s.evaluations, s.population, s.total_energy)).collect()
}

/// Runs the configuration given as TOML (the format of `emas run --config`).
/// Writes the CSV if the configuration names an `out` file.
#[pyfunction]
fn run(py: Python<'_>, config: &str) -> PyResult<RunResult> {
    let cfg: RunConfig = toml::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    cfg.validate().map_err(py_err)?;
    let outcome = py.detach(|| cfg.execute_to_file()).map_err(py_err)?;
    let r = &outcome.report;
    Ok(RunResult {
        reason: format!("{:?}", r.reason),
        evaluations: r.evaluations(),
        aggregate_best: r.aggregate_best(),
        global_best: r.global_best(),
        population: r.population(),
        total_energy: r.total_energy(),
        wall_time: r.wall_time.as_secs_f64(),
        islands: r.islands.iter().map(|i| (i.island.0, i.steps, i.evaluations, i.best_objective, i.population, i.total_energy)).collect(),
        samples: rows(&outcome.timeline),
    })
}

/// The default run configuration as TOML.
#[pyfunction]
fn default_config() -> PyResult<String> {
    toml::to_string(&RunConfig::default()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Reads a run CSV: `(config, rows, warnings)`, the config as JSON text.
#[pyfunction]
fn read_run(path: PathBuf) -> PyResult<CsvRun> {
    let run = read_csv(&path).map_err(py_err)?;
    Ok((run.config.map(|c| c.to_string()), rows(&run.timeline), run.warnings))
}

/// Per scenario: `(label, runs, mean_best, median_best, mean_evaluations)`.
#[pyfunction]
fn summarize(paths: Vec<PathBuf>) -> PyResult<Vec<ScenarioRow>> {
    let summary = emas::summary::summarize(&paths).map_err(py_err)?;
    Ok(summary.rows.into_iter().map(|r| (r.scenario, r.runs, r.mean_best, r.median_best, r.mean_evaluations)).collect())
}

#[pyfunction]
fn rastrigin(x: Vec<f64>) -> f64 {
    rastrigin_fn(&x)
}

/// Encodes an agent as the payload of a `MIGRATE` frame.
#[pyfunction]
fn encode_migrate(id: u64, energy: u64, values: Vec<f64>, fitness: f64) -> PyResult<String> {
    let agent = Agent::new(AgentId(id), Solution::with_fitness(values, fitness), Energy(energy));
    encode(&Frame::Migrate(agent)).map_err(py_err)
}

/// Decodes a `MIGRATE` payload into `(id, energy, values, fitness)`.
#[pyfunction]
fn decode_migrate(payload: &str) -> PyResult<(u64, u64, Vec<f64>, f64)> {
    match decode(payload).map_err(py_err)? {
        Frame::Migrate(a) => {
            let fitness = a.sol.fitness().ok_or_else(|| PyValueError::new_err("agent without fitness"))?;
            Ok((a.id.0, a.energy.units(), a.sol.values().to_vec(), fitness))
        }
        other => Err(PyValueError::new_err(format!("not a MIGRATE frame: {other:?}"))),
    }
}

#[pymodule]
fn pyemas(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Params>()?;
    m.add_class::<Engine>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(read_run, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(rastrigin, m)?)?;
    m.add_function(wrap_pyfunction!(encode_migrate, m)?)?;
    m.add_function(wrap_pyfunction!(decode_migrate, m)?)?;
    m.add("RNG_ALGORITHM", emas::rng::RNG_ALGORITHM)?;
    Ok(())
}
