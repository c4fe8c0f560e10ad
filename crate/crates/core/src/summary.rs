//! Aggregation of run CSVs into per-scenario tables and plot series.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{EmasError, Result};
use crate::metrics::{read_csv, MetricsTimeline};

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRow {
    pub scenario: String,
    pub runs: usize,
    pub mean_best: f64,
    pub median_best: f64,
    pub mean_evaluations: f64,
}

/// A run that was read successfully.
#[derive(Debug, Clone)]
pub struct SummarizedRun {
    pub path: PathBuf,
    pub scenario: String,
    pub timeline: MetricsTimeline,
}

#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub rows: Vec<ScenarioRow>,
    pub runs: Vec<SummarizedRun>,
    pub warnings: Vec<String>,
}

/// Label grouping repetitions of one experiment: everything in the config
/// echo except the seed and output path.
pub fn scenario_label(config: Option<&serde_json::Value>) -> String {
    let Some(cfg) = config else { return "unlabelled".into() };
    let get = |path: &[&str]| {
        let mut v = cfg;
        for key in path {
            v = v.get(key)?;
        }
        Some(match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    };
    let mut parts = vec![
        get(&["engine"]).unwrap_or_else(|| "?".into()),
        get(&["dispatch"]).map(|d| format!("dispatch={d}")).unwrap_or_default(),
        format!("islands={}", get(&["cluster", "islands"]).unwrap_or_else(|| "1".into())),
        get(&["cluster", "topology"]).unwrap_or_default(),
        format!("{}-{}", get(&["problem"]).unwrap_or_else(|| "?".into()), get(&["params", "problem-size"]).unwrap_or_else(|| "?".into())),
    ];
    parts.retain(|p| !p.is_empty());
    // Different parameter sets must not be pooled together.
    if let Some(params) = cfg.get("params") {
        let defaults = serde_json::to_value(crate::model::EmasParams::default()).expect("params serialize");
        if let (Some(p), Some(d)) = (params.as_object(), defaults.as_object()) {
            for (k, v) in p {
                if k != "problem-size" && d.get(k) != Some(v) {
                    parts.push(format!("{k}={v}"));
                }
            }
        }
    }
    parts.join(" ")
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Reads every file and aggregates per scenario. Unreadable files are
/// skipped with a warning; an empty input list is a usage error.
pub fn summarize(paths: &[PathBuf]) -> Result<Summary> {
    if paths.is_empty() {
        return Err(EmasError::Config("summarize needs at least one CSV file".into()));
    }
    let mut summary = Summary::default();
    for path in paths {
        match read_csv(path) {
            Ok(run) => {
                summary.warnings.extend(run.warnings);
                if run.timeline.samples.is_empty() {
                    summary.warnings.push(format!("{}: no samples, skipped", path.display()));
                    continue;
                }
                summary.runs.push(SummarizedRun {
                    path: path.clone(),
                    scenario: scenario_label(run.config.as_ref()),
                    timeline: run.timeline,
                });
            }
            Err(e) => summary.warnings.push(format!("{}: {e}; skipped", path.display())),
        }
    }
    let mut groups: BTreeMap<&str, Vec<&MetricsTimeline>> = BTreeMap::new();
    for run in &summary.runs {
        groups.entry(&run.scenario).or_default().push(&run.timeline);
    }
    summary.rows = groups
        .into_iter()
        .map(|(scenario, runs)| {
            let mut bests: Vec<f64> = runs.iter().filter_map(|t| t.aggregate_final_best()).collect();
            let evals: f64 = runs.iter().map(|t| t.total_evaluations() as f64).sum();
            ScenarioRow {
                scenario: scenario.to_string(),
                runs: runs.len(),
                mean_best: bests.iter().sum::<f64>() / bests.len() as f64,
                median_best: median(&mut bests),
                mean_evaluations: evals / runs.len() as f64,
            }
        })
        .collect();
    Ok(summary)
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.scenario.len()).max().unwrap_or(0).max("scenario".len());
        writeln!(f, "{:<width$}  {:>4}  {:>14}  {:>14}  {:>16}", "scenario", "runs", "mean best", "median best", "mean evals")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<width$}  {:>4}  {:>14.6e}  {:>14.6e}  {:>16.1}",
                r.scenario, r.runs, r.mean_best, r.median_best, r.mean_evaluations
            )?;
        }
        Ok(())
    }
}

/// Whole-run series: at each sample time, the mean over islands of their
/// best so far and the summed evaluation count.
pub fn run_series(timeline: &MetricsTimeline) -> Vec<(u64, f64, u64)> {
    let mut latest: BTreeMap<u32, (f64, u64)> = BTreeMap::new();
    let mut out: Vec<(u64, f64, u64)> = Vec::new();
    for s in &timeline.samples {
        latest.insert(s.island, (s.best_fitness, s.evaluations));
        let best = latest.values().map(|v| v.0).sum::<f64>() / latest.len() as f64;
        let evals = latest.values().map(|v| v.1).sum();
        match out.last_mut() {
            Some(last) if last.0 == s.time_ms => *last = (s.time_ms, best, evals),
            _ => out.push((s.time_ms, best, evals)),
        }
    }
    out
}

/// Writes `<stem>.best.dat` (time, best) and `<stem>.evals.dat` (time,
/// evaluations) for every run into `dir`.
pub fn write_series(summary: &Summary, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for run in &summary.runs {
        let stem = run.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        let series = run_series(&run.timeline);
        let best_path = dir.join(format!("{stem}.best.dat"));
        let evals_path = dir.join(format!("{stem}.evals.dat"));
        let mut best = std::io::BufWriter::new(std::fs::File::create(&best_path)?);
        let mut evals = std::io::BufWriter::new(std::fs::File::create(&evals_path)?);
        writeln!(best, "# {}\n# time_s best_fitness", run.scenario)?;
        writeln!(evals, "# {}\n# time_s evaluations", run.scenario)?;
        for (t, b, e) in series {
            let secs = t as f64 / 1000.0;
            writeln!(best, "{secs} {b}")?;
            writeln!(evals, "{secs} {e}")?;
        }
        best.flush()?;
        evals.flush()?;
        written.extend([best_path, evals_path]);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Sample;

    fn sample(time_ms: u64, island: u32, best: f64, evaluations: u64) -> Sample {
        Sample { time_ms, island, best_fitness: best, evaluations, population: 5, total_energy: 50 }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn series_combines_islands() {
        let t = MetricsTimeline::from_samples(vec![
            sample(0, 0, 10.0, 5),
            sample(0, 1, 20.0, 5),
            sample(5, 0, 4.0, 9),
        ]);
        assert_eq!(run_series(&t), vec![(0, 15.0, 10), (5, 12.0, 14)]);
    }

    #[test]
    fn label_ignores_seed_but_not_params() {
        let a = serde_json::json!({"engine": "sync", "seed": 1, "problem": "rastrigin", "params": {"problem-size": 10}, "cluster": {"islands": 1, "topology": "experiment"}});
        let mut b = a.clone();
        b["seed"] = 2.into();
        assert_eq!(scenario_label(Some(&a)), scenario_label(Some(&b)));
        b["params"]["fight-transfer"] = 3.into();
        assert_ne!(scenario_label(Some(&a)), scenario_label(Some(&b)));
        assert_eq!(scenario_label(None), "unlabelled");
    }
}
