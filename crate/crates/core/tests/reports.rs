mod common;

use std::collections::HashMap;
use std::fs;

use staged_stopping::harness::{emit_reports, run_study, RunOptions, StudyConfig};
use staged_stopping::stopping::sensitivity_sweep;
use staged_stopping::CostSchedule;

fn toy_run(reps: usize) -> (tempfile::TempDir, staged_stopping::harness::RunArtifacts) {
    let dir = tempfile::tempdir().unwrap();
    let path = common::write_toy_study(dir.path(), 300, reps);
    let config = StudyConfig::from_path(&path).unwrap();
    let run = run_study(&config, RunOptions::default()).unwrap();
    (dir, run)
}

fn read_csv(path: &std::path::Path) -> Vec<HashMap<String, String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            headers
                .iter()
                .map(String::from)
                .zip(r.iter().map(String::from))
                .collect()
        })
        .collect()
}

#[test]
fn summary_header_and_metric_rows() {
    let (dir, run) = toy_run(10);
    let out = dir.path().join("out");
    emit_reports(&[run], &out).unwrap();
    let text = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "study,stage,metric,mean,sd");
    for metric in [
        "auc",
        "brier",
        "log_loss",
        "decision_loss",
        "tp",
        "fn",
        "n_test",
    ] {
        assert_eq!(
            text.lines()
                .filter(|l| l.split(',').nth(2) == Some(metric))
                .count(),
            3,
            "{metric}"
        );
    }
    assert_eq!(text.lines().filter(|l| l.contains(",drift_m,")).count(), 2);
}

#[test]
fn sensitivity_file_only_when_swept() {
    let (dir, mut run) = toy_run(5);
    let out = dir.path().join("out");
    emit_reports(std::slice::from_ref(&run), &out).unwrap();
    assert!(!out.join("sensitivity.csv").exists());

    let schedules = [CostSchedule::new(vec![0.0, 0.0, 0.0]).unwrap()];
    run.sensitivity = sensitivity_sweep(&run.stopping.decision_loss, &schedules).unwrap();
    emit_reports(std::slice::from_ref(&run), &out).unwrap();
    assert!(out.join("sensitivity.csv").exists());

    run.sensitivity.clear();
    emit_reports(&[run], &out).unwrap();
    assert!(!out.join("sensitivity.csv").exists());
}

#[test]
fn re_emission_is_byte_identical() {
    let (dir, run) = toy_run(12);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let files = emit_reports(std::slice::from_ref(&run), &a).unwrap();
    emit_reports(&[run], &b).unwrap();
    for f in files {
        let name = f.file_name().unwrap();
        assert_eq!(
            fs::read(&f).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn decision_loss_recomputed_from_confusion_aggregates() {
    let (dir, run) = toy_run(25);
    let out = dir.path().join("out");
    emit_reports(&[run], &out).unwrap();
    let summary = read_csv(&out.join("summary.csv"));
    let stopping = read_csv(&out.join("stopping.csv"));
    let mean = |stage: &str, metric: &str| -> f64 {
        summary
            .iter()
            .find(|r| r["stage"] == stage && r["metric"] == metric)
            .unwrap()["mean"]
            .parse()
            .unwrap()
    };
    for row in &stopping {
        let stage = row["stage"].as_str();
        let n = mean(stage, "n_test");
        let counted = mean(stage, "tp") + mean(stage, "fp") + mean(stage, "tn") + mean(stage, "fn");
        assert!((n - counted).abs() < 1e-9);
        let recomputed = (1.0 * mean(stage, "fp") + 5.0 * mean(stage, "fn")) / n;
        let reported: f64 = row["decision_loss"].parse().unwrap();
        assert!(
            (recomputed - reported).abs() < 1e-9,
            "{stage}: {recomputed} vs {reported}"
        );
        let total: f64 = row["total_cost"].parse().unwrap();
        let cost: f64 = row["cumulative_cost"].parse().unwrap();
        assert!((total - reported - cost).abs() < 1e-12);
    }
}

#[test]
fn single_rep_has_zero_spread() {
    let (_dir, run) = toy_run(1);
    for stage in &run.stage_report.stages {
        assert_eq!(stage.auc.sd, 0.0);
        assert_eq!(stage.auc.n, 1);
    }
    assert!(run
        .stage_report
        .stages
        .iter()
        .all(|s| s.brier.sd >= 0.0 && s.decision_loss.sd >= 0.0));
}
