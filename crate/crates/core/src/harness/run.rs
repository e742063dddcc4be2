//! The repeated stratified-split experiment and its aggregation.

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{
    bridge_quantities, drift_diagnostic, projection_loss, regret_bound_check,
};
use crate::error::{Error, Result};
use crate::glm::{fit_pca_pipeline, select_columns, select_rows, StageModel};
use crate::harness::config::StudyConfig;
use crate::harness::dataset::{impute_fold, load_dataset};
use crate::harness::split::stratified_split;
use crate::metrics::{
    auc, brier, confusion_at_threshold, empirical_decision_loss, log_loss, recalibrate,
    winsorized_mean_sd, CalibrationFit, ConfusionCounts,
};
use crate::stopping::{retrospective_total_cost, SweepRow};
use crate::types::{
    DriftReport, LossSpec, RiskMatrix, StageMetrics, StageReport, StagedDataset, StoppingReport,
    Summary,
};

/// Largest tolerated share of failed repetitions.
pub const MAX_FAILURE_RATE: f64 = 0.01;
pub const WINSOR_LOWER: f64 = 2.5;
pub const WINSOR_UPPER: f64 = 97.5;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
struct StageRep {
    auc: f64,
    brier: f64,
    log_loss: f64,
    counts: ConfusionCounts,
    accuracy_at_half: f64,
    decision_loss: f64,
    calibration: CalibrationFit,
}

#[derive(Debug, Clone)]
struct CompressionRep {
    auc: f64,
    brier: f64,
    decision_loss: f64,
    projection_loss: f64,
    regret: f64,
    bound: f64,
}

#[derive(Debug, Clone)]
struct RepResult {
    stages: Vec<StageRep>,
    transition_loss: Vec<f64>,
    drift: Vec<DriftReport>,
    compression: Vec<CompressionRep>,
    bridge: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSummary {
    /// Winsorized mean and SD of the slope.
    pub slope: Summary,
    pub intercept: Summary,
    /// Unwinsorized slope, for reference.
    pub raw_slope: Summary,
    pub degenerate_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionSummary {
    pub components: usize,
    pub auc: Summary,
    pub brier: Summary,
    pub decision_loss: Summary,
    pub projection_loss: Summary,
    pub regret: Summary,
    pub regret_bound: Summary,
    /// Share of reps in which regret stayed within the bound.
    pub bound_held: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftBinSummary {
    pub bin: usize,
    pub lower: Summary,
    pub upper: Summary,
    pub weight: Summary,
    pub mean_increment: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftSummary {
    pub mean_drift: Summary,
    pub mean_squared_drift: Summary,
    /// Per-bin aggregates over the reps in which that bin exists.
    pub bins: Vec<DriftBinSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeSummary {
    pub stability: Vec<Summary>,
    pub threshold_distance: Vec<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepFailure {
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunArtifacts {
    pub study: String,
    pub stage_names: Vec<String>,
    pub loss: LossSpec,
    pub master_seed: u64,
    pub n_reps: usize,
    pub failures: Vec<RepFailure>,
    pub stage_report: StageReport,
    pub stopping: StoppingReport,
    pub transition_projection_loss: Vec<Summary>,
    pub drift: Vec<DriftSummary>,
    pub bridge: BridgeSummary,
    pub compression: Vec<CompressionSummary>,
    pub calibration: Vec<CalibrationSummary>,
    pub sensitivity: Vec<SweepRow>,
}

impl RunArtifacts {
    pub fn transition_label(&self, t: usize) -> String {
        format!("{}->{}", self.stage_names[t], self.stage_names[t + 1])
    }
}

pub fn run_study(config: &StudyConfig, options: RunOptions) -> Result<RunArtifacts> {
    let dataset = load_dataset(config)?;
    run_on_dataset(config, &dataset, options)
}

/// Runs the experiment on an already loaded dataset.
pub fn run_on_dataset(
    config: &StudyConfig,
    dataset: &StagedDataset,
    options: RunOptions,
) -> Result<RunArtifacts> {
    let plan = config.split_plan()?;
    let reps = plan.n_reps();
    let work = || -> Vec<Result<RepResult>> {
        (0..reps)
            .into_par_iter()
            .map(|rep| run_rep(config, dataset, rep))
            .collect()
    };
    let results = match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut ok = Vec::with_capacity(reps);
    let mut failures = Vec::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push((rep, v)),
            Err(e) => failures.push(RepFailure {
                rep,
                error: e.to_string(),
            }),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_RATE * reps as f64 {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: reps,
            first_rep: failures[0].rep,
            first_error: failures[0].error.clone(),
        });
    }
    aggregate(config, ok, failures)
}

fn run_rep(config: &StudyConfig, dataset: &StagedDataset, rep: usize) -> Result<RepResult> {
    let plan = config.split_plan()?;
    let loss = config.loss;
    let c_star = loss.threshold();
    let ridge = config.model.ridge;
    let labels = dataset.outcome();
    let split = stratified_split(labels, rep, &plan)?;
    let x = impute_fold(dataset, config.missing.policy, &split.train)?;
    let x_train = select_rows(&x, &split.train);
    let x_test = select_rows(&x, &split.test);
    let y_train: Vec<bool> = split.train.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<bool> = split.test.iter().map(|&i| labels[i]).collect();

    let mut stage_risks = Vec::with_capacity(dataset.stages().len());
    let mut stages = Vec::with_capacity(dataset.stages().len());
    for active in dataset.stages() {
        let model = StageModel::fit(&x_train, &y_train, active, ridge)?;
        let p = model.predict(&x_test)?;
        let counts = confusion_at_threshold(&p, &y_test, c_star)?;
        stages.push(StageRep {
            auc: auc(&p, &y_test)?,
            brier: brier(&p, &y_test)?,
            log_loss: log_loss(&p, &y_test)?,
            counts,
            accuracy_at_half: confusion_at_threshold(&p, &y_test, 0.5)?.accuracy(),
            decision_loss: empirical_decision_loss(&counts, &loss)?,
            calibration: recalibrate(&p, &y_test)?,
        });
        stage_risks.push(p);
    }
    let risks = RiskMatrix::from_stage_columns(&stage_risks, split.test.clone())?;

    let n_transitions = stage_risks.len() - 1;
    let transition_loss = (0..n_transitions)
        .map(|t| projection_loss(&stage_risks[t], &stage_risks[t + 1]))
        .collect::<Result<Vec<_>>>()?;
    let drift = (0..n_transitions)
        .map(|t| {
            drift_diagnostic(
                &stage_risks[t],
                &stage_risks[t + 1],
                config.model.drift_bins,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let final_active = dataset.stages().last().expect("at least one stage");
    let final_risk = stage_risks.last().expect("at least one stage");
    let final_train = select_columns(&x_train, final_active)?;
    let final_test = select_columns(&x_test, final_active)?;
    let compression = config
        .model
        .compression
        .iter()
        .map(|&k| {
            let pipe = fit_pca_pipeline(&final_train, &y_train, k, ridge)?;
            let q = pipe.predict(&final_test)?;
            let regret = regret_bound_check(final_risk, &q, &loss)?;
            let counts = confusion_at_threshold(&q, &y_test, c_star)?;
            Ok(CompressionRep {
                auc: auc(&q, &y_test)?,
                brier: brier(&q, &y_test)?,
                decision_loss: empirical_decision_loss(&counts, &loss)?,
                projection_loss: projection_loss(final_risk, &q)?,
                regret: regret.regret,
                bound: regret.bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let bridge = if rep < config.split.bridge_reps {
        let b = bridge_quantities(&risks, c_star)?;
        Some((b.stability, b.threshold_distance))
    } else {
        None
    };

    Ok(RepResult {
        stages,
        transition_loss,
        drift,
        compression,
        bridge,
    })
}

fn summarize<T>(items: &[&T], f: impl Fn(&T) -> f64) -> Summary {
    let values: Vec<f64> = items.iter().map(|x| f(x)).collect();
    Summary::of(&values)
}

fn winsorized(values: &[f64]) -> Summary {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    match winsorized_mean_sd(&finite, WINSOR_LOWER, WINSOR_UPPER) {
        Ok((mean, sd)) => Summary {
            mean,
            sd,
            n: finite.len(),
        },
        Err(_) => Summary::of(&[]),
    }
}

fn aggregate(
    config: &StudyConfig,
    reps: Vec<(usize, RepResult)>,
    failures: Vec<RepFailure>,
) -> Result<RunArtifacts> {
    let results: Vec<&RepResult> = reps.iter().map(|(_, r)| r).collect();
    if results.is_empty() {
        return Err(Error::invalid("no successful repetitions"));
    }
    let n_stages = config.stages.len();

    let mut stage_metrics = Vec::with_capacity(n_stages);
    let mut calibration = Vec::with_capacity(n_stages);
    for t in 0..n_stages {
        let s: Vec<&StageRep> = results.iter().map(|r| &r.stages[t]).collect();
        stage_metrics.push(StageMetrics {
            auc: summarize(&s, |x| x.auc),
            brier: summarize(&s, |x| x.brier),
            log_loss: summarize(&s, |x| x.log_loss),
            accuracy: summarize(&s, |x| x.counts.accuracy()),
            accuracy_at_half: summarize(&s, |x| x.accuracy_at_half),
            sensitivity: summarize(&s, |x| x.counts.sensitivity()),
            specificity: summarize(&s, |x| x.counts.specificity()),
            decision_loss: summarize(&s, |x| x.decision_loss),
            true_positives: summarize(&s, |x| x.counts.tp as f64),
            false_positives: summarize(&s, |x| x.counts.fp as f64),
            true_negatives: summarize(&s, |x| x.counts.tn as f64),
            false_negatives: summarize(&s, |x| x.counts.fn_ as f64),
            n_test: summarize(&s, |x| x.counts.n() as f64),
        });
        let slopes: Vec<f64> = s.iter().map(|x| x.calibration.slope).collect();
        let intercepts: Vec<f64> = s.iter().map(|x| x.calibration.intercept).collect();
        calibration.push(CalibrationSummary {
            slope: winsorized(&slopes),
            intercept: winsorized(&intercepts),
            raw_slope: Summary::of(&slopes),
            degenerate_fraction: s.iter().filter(|x| x.calibration.degenerate).count() as f64
                / s.len() as f64,
        });
    }

    let mean_losses: Vec<f64> = stage_metrics.iter().map(|m| m.decision_loss.mean).collect();
    let stopping = retrospective_total_cost(&mean_losses, &config.costs.cumulative)?;

    let transition_projection_loss = (0..n_stages - 1)
        .map(|t| summarize(&results, |r| r.transition_loss[t]))
        .collect();

    let drift = (0..n_stages - 1)
        .map(|t| {
            let reports: Vec<&DriftReport> = results.iter().map(|r| &r.drift[t]).collect();
            let max_bins = reports.iter().map(|d| d.bins.len()).max().unwrap_or(0);
            let bins = (0..max_bins)
                .map(|b| {
                    let present: Vec<_> = reports.iter().filter_map(|d| d.bins.get(b)).collect();
                    DriftBinSummary {
                        bin: b,
                        lower: summarize(&present, |x| x.lower),
                        upper: summarize(&present, |x| x.upper),
                        weight: summarize(&present, |x| x.weight),
                        mean_increment: summarize(&present, |x| x.mean_increment),
                    }
                })
                .collect();
            DriftSummary {
                mean_drift: summarize(&reports, |d| d.mean_drift),
                mean_squared_drift: summarize(&reports, |d| d.mean_squared_drift),
                bins,
            }
        })
        .collect();

    let bridged: Vec<&(Vec<f64>, Vec<f64>)> =
        results.iter().filter_map(|r| r.bridge.as_ref()).collect();
    let bridge = BridgeSummary {
        stability: (0..n_stages - 1)
            .map(|t| summarize(&bridged, |b| b.0[t]))
            .collect(),
        threshold_distance: (0..n_stages)
            .map(|t| summarize(&bridged, |b| b.1[t]))
            .collect(),
    };

    let compression = config
        .model
        .compression
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let c: Vec<&CompressionRep> = results.iter().map(|r| &r.compression[i]).collect();
            let held = c
                .iter()
                .filter(|x| x.regret <= x.bound * (1.0 + 1e-12) + 1e-15)
                .count();
            CompressionSummary {
                components: k,
                auc: summarize(&c, |x| x.auc),
                brier: summarize(&c, |x| x.brier),
                decision_loss: summarize(&c, |x| x.decision_loss),
                projection_loss: summarize(&c, |x| x.projection_loss),
                regret: summarize(&c, |x| x.regret),
                regret_bound: summarize(&c, |x| x.bound),
                bound_held: held as f64 / c.len() as f64,
            }
        })
        .collect();

    Ok(RunArtifacts {
        study: config.name.clone(),
        stage_names: config.stage_names(),
        loss: config.loss,
        master_seed: config.split.master_seed,
        n_reps: config.split.reps,
        failures,
        stage_report: StageReport {
            stages: stage_metrics,
        },
        stopping,
        transition_projection_loss,
        drift,
        bridge,
        compression,
        calibration,
        sensitivity: Vec::new(),
    })
}
