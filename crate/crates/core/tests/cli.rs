//! End-to-end runs through the `emas` binary and the CSV it writes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emas::arena::{run_sync, SyncEngine};
use emas::contract::CheckMode;
use emas::metrics::{read_csv, MetricsSink, CSV_HEADER};
use emas::model::{EmasParams, IslandId};
use emas::operators::{EvaluationCounter, Evaluator, Objective};
use emas::run::{ClockKind, RunSettings, StopCondition};
use emas::summary::summarize;
use tempfile::TempDir;

fn emas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emas")).args(args).output().expect("binary runs")
}

fn body(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

fn out_path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

#[test]
fn init_only_run_writes_a_single_row() {
    let dir = TempDir::new().unwrap();
    let out = out_path(&dir, "seven.csv");
    let o = emas(&["run", "--engine", "sync", "--seed", "7", "--max-evals", "50", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], CSV_HEADER);
    assert_eq!(rows.len(), 2, "{text}");
    let fields: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(fields[3], "50");
    assert_eq!(fields[4], "50");
    assert_eq!(fields[5], "500");

    let run = read_csv(&out).unwrap();
    let cfg = run.config.expect("config echo");
    assert_eq!(cfg["seed"], 7);
    assert_eq!(cfg["params"]["initial-size"], 50);
    assert!(cfg["rng"].as_str().unwrap().contains("ChaCha8"));
}

#[test]
fn csv_goes_to_stdout_without_out() {
    let o = emas(&["run", "--max-evals", "50", "--problem-size", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().any(|l| l == CSV_HEADER));
}

#[test]
fn exit_codes() {
    let o = emas(&["run", "--engine", "sync", "--dispatch", "own", "--max-evals", "10"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--dispatch"));

    assert_eq!(emas(&["run", "--problem", "griewank", "--max-evals", "10"]).status.code(), Some(1));
    assert_eq!(emas(&["run", "--duration", "soon"]).status.code(), Some(1));
    assert_eq!(emas(&["run"]).status.code(), Some(1), "no stop condition");
    assert_eq!(emas(&["summarize"]).status.code(), Some(1));
    assert_eq!(emas(&["--help"]).status.code(), Some(0));

    // Zero initial energy: every agent dies in the first step.
    let dir = TempDir::new().unwrap();
    let out = out_path(&dir, "dead.csv");
    let o = emas(&["run", "--initial-energy", "0", "--problem-size", "3", "--max-steps", "20", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let run = read_csv(&out).unwrap();
    assert!(run.timeline.extinct);
    assert_eq!(run.timeline.samples.last().unwrap().population, 0);
}

#[test]
fn identical_invocations_give_identical_bodies() {
    let dir = TempDir::new().unwrap();
    for (tag, extra) in [("one", vec![]), ("four", vec!["--islands", "4", "--topology", "ring", "--migration-probability", "0.05"])] {
        let mut bodies = Vec::new();
        for k in 0..2 {
            let out = out_path(&dir, &format!("{tag}-{k}.csv"));
            let mut args = vec!["run", "--seed", "3", "--problem-size", "10", "--clock", "steps", "--duration", "3s", "--snapshot-interval", "250ms"];
            args.extend(&extra);
            args.extend(["--out", out.to_str().unwrap()]);
            let o = emas(&args);
            assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
            bodies.push(body(&out));
        }
        assert_eq!(bodies[0], bodies[1], "{tag}");
        assert!(bodies[0].lines().count() > 10);
    }
}

#[test]
fn csv_rows_satisfy_timeline_invariants() {
    let dir = TempDir::new().unwrap();
    let cases: [&[&str]; 3] = [
        &["--problem-size", "20", "--duration", "1500ms", "--snapshot-interval", "100ms"],
        &["--problem-size", "20", "--duration", "1500ms", "--islands", "3", "--migration-probability", "0.01"],
        &["--engine", "async", "--dispatch", "single", "--problem-size", "20", "--duration", "1500ms", "--snapshot-interval", "100ms"],
    ];
    for (i, case) in cases.iter().enumerate() {
        let out = out_path(&dir, &format!("inv-{i}.csv"));
        let mut args = vec!["run", "--seed", "11"];
        args.extend_from_slice(case);
        args.extend(["--out", out.to_str().unwrap()]);
        let o = emas(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let run = read_csv(&out).unwrap();
        assert!(run.warnings.is_empty(), "{:?}", run.warnings);
        run.timeline.check_invariants().unwrap_or_else(|e| panic!("case {i}: {e}"));
        assert!(run.timeline.samples.len() >= 2);
    }
}

#[test]
fn best_column_matches_evaluation_log() {
    let params = EmasParams { problem_size: 6, ..EmasParams::default() };
    let objective = Objective::rastrigin(6);
    let seed = 21;
    let steps = 400;

    let mut logged = SyncEngine::with_evaluator(
        params.clone(),
        Evaluator::new(objective.clone(), EvaluationCounter::new()).with_log(),
        IslandId(0),
        seed,
        CheckMode::Fast,
    )
    .unwrap();
    for _ in 0..steps {
        logged.step().unwrap();
    }
    let log = logged.evaluator().log().unwrap();
    assert_eq!(log.len() as u64, logged.evaluations());

    let settings = RunSettings::new(seed, StopCondition::steps(steps)).with_clock(ClockKind::Steps).with_snapshot_interval_ms(7);
    let sink = MetricsSink::default();
    let report = run_sync(&params, objective, &settings, &sink).unwrap();
    assert_eq!(report.evaluations, logged.evaluations());
    let timeline = sink.timeline();
    assert!(timeline.samples.len() > 10);
    for s in &timeline.samples {
        let min = log[..s.evaluations as usize].iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(s.best_fitness, min, "row at {} ms", s.time_ms);
    }
}

#[test]
fn repeat_and_summarize() {
    let dir = TempDir::new().unwrap();
    let out = out_path(&dir, "rep.csv");
    let o = emas(&["run", "--seed", "10", "--repeat", "3", "--problem-size", "4", "--clock", "steps", "--duration", "200ms", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let files: Vec<PathBuf> = (0..3).map(|i| out_path(&dir, &format!("rep-{i}.csv"))).collect();
    for (i, f) in files.iter().enumerate() {
        let run = read_csv(f).unwrap();
        assert_eq!(run.config.unwrap()["seed"], 10 + i as u64);
    }

    let summary = summarize(&files).unwrap();
    assert_eq!(summary.rows.len(), 1, "repetitions share one scenario");
    let row = &summary.rows[0];
    assert_eq!(row.runs, 3);
    let finals: Vec<(f64, u64)> = files
        .iter()
        .map(|f| {
            let s = *read_csv(f).unwrap().timeline.samples.last().unwrap();
            (s.best_fitness, s.evaluations)
        })
        .collect();
    let mean_best = finals.iter().map(|f| f.0).sum::<f64>() / 3.0;
    let mean_evals = finals.iter().map(|f| f.1 as f64).sum::<f64>() / 3.0;
    let mut bests: Vec<f64> = finals.iter().map(|f| f.0).collect();
    bests.sort_by(f64::total_cmp);
    assert!((row.mean_best - mean_best).abs() < 1e-12);
    assert_eq!(row.median_best, bests[1]);
    assert!((row.mean_evaluations - mean_evals).abs() < 1e-9);

    // A single file summarizes to its own final sample.
    let one = summarize(&files[..1]).unwrap();
    assert_eq!(one.rows[0].mean_best, finals[0].0);
    assert_eq!(one.rows[0].median_best, finals[0].0);
    assert_eq!(one.rows[0].mean_evaluations, finals[0].1 as f64);

    let series = out_path(&dir, "series");
    let o = emas(&["summarize", files[0].to_str().unwrap(), "--series-dir", series.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout).unwrap().contains("mean best"));
    let best = std::fs::read_to_string(series.join("rep-0.best.dat")).unwrap();
    let points: Vec<&str> = best.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(!points.is_empty());
    assert!(points.iter().all(|l| l.split(' ').count() == 2));
}

#[test]
fn summarize_tolerates_bad_input() {
    let dir = TempDir::new().unwrap();
    let good = out_path(&dir, "good.csv");
    std::fs::write(&good, format!("{CSV_HEADER}\n0,0,12.5,50,50,500\nnot,a,row\n1000,0,3.5,900,48,500\n")).unwrap();
    let bad = out_path(&dir, "bad.csv");
    std::fs::write(&bad, "time,best\n1,2\n").unwrap();
    let summary = summarize(&[good.clone(), bad]).unwrap();
    assert_eq!(summary.rows.len(), 1);
    assert_eq!(summary.rows[0].mean_best, 3.5);
    assert_eq!(summary.rows[0].mean_evaluations, 900.0);
    assert_eq!(summary.warnings.len(), 2, "{:?}", summary.warnings);
    assert!(summarize(&[]).is_err());
}

#[test]
fn config_file_and_flag_override() {
    let dir = TempDir::new().unwrap();
    let cfg = out_path(&dir, "run.toml");
    std::fs::write(&cfg, "seed = 5\nclock = \"steps\"\n[params]\nproblem-size = 3\nfight-transfer = 4\n[stop]\nmax-steps = 30\n").unwrap();
    let o = emas(&["run", "--config", cfg.to_str().unwrap(), "--fight-transfer", "6", "--print-config"]);
    assert_eq!(o.status.code(), Some(0));
    let printed: emas::config::RunConfig = toml::from_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(printed.seed, 5);
    assert_eq!(printed.params.problem_size, 3);
    assert_eq!(printed.params.fight_transfer, 6);
    assert_eq!(printed.stop.max_steps, Some(30));

    let bad = out_path(&dir, "bad.toml");
    std::fs::write(&bad, "sed = 5\n").unwrap();
    assert_eq!(emas(&["run", "--config", bad.to_str().unwrap(), "--max-steps", "1"]).status.code(), Some(1));
}
