//! CSV and JSON report emission, and a plain-text summary reader.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::harness::run::RunArtifacts;
use crate::stopping::SweepRow;
use crate::types::Summary;

pub const SUMMARY_HEADER: [&str; 5] = ["study", "stage", "metric", "mean", "sd"];

fn num(v: f64) -> String {
    v.to_string()
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(dir.join(name))?)
}

/// Writes every report file for the given studies into `out_dir`, creating it
/// if needed. Returns the written paths.
pub fn emit_reports(artifacts: &[RunArtifacts], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let mut w = writer(out_dir, "summary.csv")?;
    w.write_record(SUMMARY_HEADER)?;
    for a in artifacts {
        for (t, m) in a.stage_report.stages.iter().enumerate() {
            let rows: [(&str, &Summary); 13] = [
                ("auc", &m.auc),
                ("brier", &m.brier),
                ("log_loss", &m.log_loss),
                ("accuracy", &m.accuracy),
                ("accuracy_at_half", &m.accuracy_at_half),
                ("sensitivity", &m.sensitivity),
                ("specificity", &m.specificity),
                ("decision_loss", &m.decision_loss),
                ("tp", &m.true_positives),
                ("fp", &m.false_positives),
                ("tn", &m.true_negatives),
                ("fn", &m.false_negatives),
                ("n_test", &m.n_test),
            ];
            for (metric, s) in rows {
                w.write_record([
                    &a.study,
                    &a.stage_names[t],
                    metric,
                    &num(s.mean),
                    &num(s.sd),
                ])?;
            }
        }
        for (t, d) in a.drift.iter().enumerate() {
            let label = a.transition_label(t);
            for (metric, s) in [
                ("drift_m", &d.mean_drift),
                ("drift_s", &d.mean_squared_drift),
            ] {
                w.write_record([&a.study, &label, metric, &num(s.mean), &num(s.sd)])?;
            }
        }
    }
    w.flush()?;
    written.push(out_dir.join("summary.csv"));

    let mut w = writer(out_dir, "stopping.csv")?;
    w.write_record([
        "study",
        "stage",
        "decision_loss",
        "cumulative_cost",
        "total_cost",
        "preferred",
    ])?;
    for a in artifacts {
        let s = &a.stopping;
        for t in 0..s.total_cost.len() {
            w.write_record([
                a.study.as_str(),
                &a.stage_names[t],
                &num(s.decision_loss[t]),
                &num(s.cumulative_cost[t]),
                &num(s.total_cost[t]),
                if t == s.preferred_stage { "1" } else { "0" },
            ])?;
        }
    }
    w.flush()?;
    written.push(out_dir.join("stopping.csv"));

    let mut w = writer(out_dir, "drift.csv")?;
    w.write_record([
        "study",
        "transition",
        "bin",
        "lower",
        "upper",
        "weight",
        "mean_increment",
        "sd_increment",
        "n",
    ])?;
    for a in artifacts {
        for (t, d) in a.drift.iter().enumerate() {
            let label = a.transition_label(t);
            for b in &d.bins {
                w.write_record([
                    a.study.as_str(),
                    &label,
                    &(b.bin + 1).to_string(),
                    &num(b.lower.mean),
                    &num(b.upper.mean),
                    &num(b.weight.mean),
                    &num(b.mean_increment.mean),
                    &num(b.mean_increment.sd),
                    &b.mean_increment.n.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    written.push(out_dir.join("drift.csv"));

    let mut w = writer(out_dir, "bridge.csv")?;
    w.write_record(["study", "quantity", "stage", "mean", "sd", "n"])?;
    for a in artifacts {
        for (t, s) in a.bridge.stability.iter().enumerate() {
            w.write_record([
                a.study.as_str(),
                "stability",
                &a.transition_label(t),
                &num(s.mean),
                &num(s.sd),
                &s.n.to_string(),
            ])?;
        }
        for (t, s) in a.bridge.threshold_distance.iter().enumerate() {
            w.write_record([
                a.study.as_str(),
                "threshold_distance",
                &a.stage_names[t],
                &num(s.mean),
                &num(s.sd),
                &s.n.to_string(),
            ])?;
        }
    }
    w.flush()?;
    written.push(out_dir.join("bridge.csv"));

    let mut w = writer(out_dir, "projection.csv")?;
    w.write_record(["study", "model", "metric", "mean", "sd"])?;
    for a in artifacts {
        let last = a.stage_report.stages.last().expect("at least one stage");
        let full = format!("full {}", a.stage_names.last().expect("at least one stage"));
        for (metric, s) in [
            ("auc", &last.auc),
            ("brier", &last.brier),
            ("decision_loss", &last.decision_loss),
        ] {
            w.write_record([&a.study, &full, metric, &num(s.mean), &num(s.sd)])?;
        }
        w.write_record([&a.study, &full, "projection_loss", "0", "0"])?;
        for c in &a.compression {
            let model = format!("PCA{}", c.components);
            for (metric, s) in [
                ("auc", &c.auc),
                ("brier", &c.brier),
                ("decision_loss", &c.decision_loss),
                ("projection_loss", &c.projection_loss),
                ("regret", &c.regret),
                ("regret_bound", &c.regret_bound),
            ] {
                w.write_record([&a.study, &model, metric, &num(s.mean), &num(s.sd)])?;
            }
            w.write_record([&a.study, &model, "bound_held", &num(c.bound_held), "0"])?;
        }
        for (t, s) in a.transition_projection_loss.iter().enumerate() {
            w.write_record([
                a.study.as_str(),
                &a.transition_label(t),
                "projection_loss",
                &num(s.mean),
                &num(s.sd),
            ])?;
        }
    }
    w.flush()?;
    written.push(out_dir.join("projection.csv"));

    let mut w = writer(out_dir, "calibration.csv")?;
    w.write_record([
        "study",
        "stage",
        "slope_mean",
        "slope_sd",
        "intercept_mean",
        "intercept_sd",
        "raw_slope_mean",
        "raw_slope_sd",
        "degenerate_fraction",
        "n",
    ])?;
    for a in artifacts {
        for (t, c) in a.calibration.iter().enumerate() {
            w.write_record([
                a.study.as_str(),
                &a.stage_names[t],
                &num(c.slope.mean),
                &num(c.slope.sd),
                &num(c.intercept.mean),
                &num(c.intercept.sd),
                &num(c.raw_slope.mean),
                &num(c.raw_slope.sd),
                &num(c.degenerate_fraction),
                &c.slope.n.to_string(),
            ])?;
        }
    }
    w.flush()?;
    written.push(out_dir.join("calibration.csv"));

    let tables: Vec<SensitivityTable> = artifacts
        .iter()
        .filter(|a| !a.sensitivity.is_empty())
        .map(|a| SensitivityTable {
            study: a.study.clone(),
            stage_names: a.stage_names.clone(),
            rows: a.sensitivity.clone(),
        })
        .collect();
    let sensitivity = out_dir.join("sensitivity.csv");
    if tables.is_empty() {
        if sensitivity.exists() {
            fs::remove_file(&sensitivity)?;
        }
    } else {
        written.push(emit_sensitivity(&tables, out_dir)?);
    }

    let json = serde_json::to_string_pretty(artifacts)?;
    fs::write(out_dir.join("report.json"), json + "\n")?;
    written.push(out_dir.join("report.json"));
    Ok(written)
}

/// Preferred stages of one study under alternative cost schedules.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTable {
    pub study: String,
    pub stage_names: Vec<String>,
    pub rows: Vec<SweepRow>,
}

/// Writes `sensitivity.csv` (one line per schedule and stage).
pub fn emit_sensitivity(tables: &[SensitivityTable], out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let mut w = writer(out_dir, "sensitivity.csv")?;
    w.write_record([
        "study",
        "row",
        "schedule",
        "stage",
        "total_cost",
        "preferred",
    ])?;
    for table in tables {
        for (i, row) in table.rows.iter().enumerate() {
            let schedule = row
                .schedule
                .iter()
                .map(|c| num(*c))
                .collect::<Vec<_>>()
                .join(";");
            for (t, total) in row.total_cost.iter().enumerate() {
                w.write_record([
                    table.study.as_str(),
                    &(i + 1).to_string(),
                    &schedule,
                    &table.stage_names[t],
                    &num(*total),
                    if t == row.preferred_stage { "1" } else { "0" },
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(out_dir.join("sensitivity.csv"))
}

#[derive(Debug, Deserialize)]
struct SummaryRow {
    study: String,
    stage: String,
    metric: String,
    mean: f64,
    sd: f64,
}

#[derive(Debug, Deserialize)]
struct StoppingRow {
    study: String,
    stage: String,
    decision_loss: f64,
    cumulative_cost: f64,
    total_cost: f64,
    preferred: u8,
}

/// Human-readable digest of a report directory.
pub fn render_summary(dir: &Path) -> Result<String> {
    let open = |name: &str| {
        let path = dir.join(name);
        csv::Reader::from_path(&path)
            .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))
    };
    let summary: Vec<SummaryRow> = open("summary.csv")?
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    let stopping: Vec<StoppingRow> = open("stopping.csv")?
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;

    let mut out = String::new();
    let mut studies: Vec<&str> = summary.iter().map(|r| r.study.as_str()).collect();
    studies.dedup();
    for study in studies {
        let _ = writeln!(out, "== {study} ==");
        let _ = writeln!(
            out,
            "{:<10} {:>16} {:>16} {:>16} {:>10}",
            "stage", "AUC", "Brier", "decision loss", "total"
        );
        for s in stopping.iter().filter(|r| r.study == study) {
            let get = |metric: &str| {
                summary
                    .iter()
                    .find(|r| r.study == study && r.stage == s.stage && r.metric == metric)
                    .map(|r| format!("{:.4} ({:.4})", r.mean, r.sd))
                    .unwrap_or_default()
            };
            let _ = writeln!(
                out,
                "{:<10} {:>16} {:>16} {:>16} {:>10.4}{}",
                s.stage,
                get("auc"),
                get("brier"),
                format!("{:.4} +{:.3}", s.decision_loss, s.cumulative_cost),
                s.total_cost,
                if s.preferred == 1 {
                    "  <- preferred"
                } else {
                    ""
                }
            );
        }
        for r in summary
            .iter()
            .filter(|r| r.study == study && r.metric == "drift_m")
        {
            let _ = writeln!(out, "drift {:<14} M = {:.4} ({:.4})", r.stage, r.mean, r.sd);
        }
        out.push('\n');
    }
    Ok(out)
}
