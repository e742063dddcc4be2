//! Discrimination, calibration and decision metrics on held-out risks.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::glm::fit_logistic;
use crate::types::LossSpec;

pub const LOG_LOSS_CLIP: f64 = 1e-15;
pub const LOGIT_CLIP: f64 = 1e-12;
/// Recalibration slopes beyond this magnitude are flagged degenerate.
pub const MAX_CALIBRATION_SLOPE: f64 = 50.0;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::invalid("empty input"));
    }
    Ok(())
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y).count();
    (pos, labels.len() - pos)
}

/// Midranks (1-based) of `values`; tied values share their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Mann–Whitney AUC, `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

fn check_risks(risks: &[f64]) -> Result<()> {
    match risks.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        Some(r) => Err(Error::invalid(format!("risk {r} outside [0,1]"))),
        None => Ok(()),
    }
}

fn label(y: bool) -> f64 {
    if y {
        1.0
    } else {
        0.0
    }
}

pub fn brier(risks: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(risks.len(), labels.len())?;
    check_risks(risks)?;
    let sum: f64 = risks
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (p - label(y)).powi(2))
        .sum();
    Ok(sum / risks.len() as f64)
}

pub fn log_loss(risks: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(risks.len(), labels.len())?;
    check_risks(risks)?;
    let sum: f64 = risks
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(LOG_LOSS_CLIP, 1.0 - LOG_LOSS_CLIP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / risks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.n() as f64
    }

    /// NaN when there are no positives.
    pub fn sensitivity(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    /// NaN when there are no negatives.
    pub fn specificity(&self) -> f64 {
        self.tn as f64 / (self.tn + self.fp) as f64
    }
}

/// Treat iff `risk > c_star`; a risk exactly at the threshold is a negative decision.
pub fn confusion_at_threshold(
    risks: &[f64],
    labels: &[bool],
    c_star: f64,
) -> Result<ConfusionCounts> {
    check_lengths(risks.len(), labels.len())?;
    if !(c_star > 0.0 && c_star < 1.0) {
        return Err(Error::invalid(format!("threshold {c_star} outside (0,1)")));
    }
    let mut counts = ConfusionCounts::default();
    for (&p, &y) in risks.iter().zip(labels) {
        match (p > c_star, y) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, false) => counts.tn += 1,
            (false, true) => counts.fn_ += 1,
        }
    }
    Ok(counts)
}

/// `(c_FP·FP + c_FN·FN) / n`.
pub fn empirical_decision_loss(counts: &ConfusionCounts, loss: &LossSpec) -> Result<f64> {
    let n = counts.n();
    if n == 0 {
        return Err(Error::invalid("decision loss of an empty fold"));
    }
    Ok((loss.c_fp() * counts.fp as f64 + loss.c_fn() * counts.fn_ as f64) / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationFit {
    pub slope: f64,
    pub intercept: f64,
    /// Set on separation, non-convergence or `|slope| > 50`.
    pub degenerate: bool,
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_CLIP, 1.0 - LOGIT_CLIP);
    (p / (1.0 - p)).ln()
}

/// Unpenalised logistic regression of the label on `logit(risk)`.
pub fn recalibrate(risks: &[f64], labels: &[bool]) -> Result<CalibrationFit> {
    check_lengths(risks.len(), labels.len())?;
    check_risks(risks)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "recalibration needs both classes".into(),
        ));
    }
    let z: Vec<f64> = risks.iter().map(|&p| logit(p)).collect();
    let extreme = |want: bool, max: bool| {
        z.iter()
            .zip(labels)
            .filter(|(_, &y)| y == want)
            .map(|(&v, _)| v)
            .fold(
                if max {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                },
                |a, b| {
                    if max {
                        a.max(b)
                    } else {
                        a.min(b)
                    }
                },
            )
    };
    let separated =
        extreme(false, true) < extreme(true, false) || extreme(true, true) < extreme(false, false);
    let constant = z.iter().all(|&v| v == z[0]);

    let x = DMatrix::from_column_slice(z.len(), 1, &z);
    let fit = if constant {
        None
    } else {
        fit_logistic(&x, labels, 0.0).ok()
    };
    Ok(match fit {
        Some(m) => CalibrationFit {
            slope: m.coefficients[0],
            intercept: m.intercept,
            degenerate: separated
                || !m.converged
                || m.coefficients[0].abs() > MAX_CALIBRATION_SLOPE,
        },
        None => CalibrationFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            degenerate: true,
        },
    })
}

/// Percentile with linear interpolation between closest ranks
/// (position `q/100 · (n − 1)` in the sorted sample).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Mean and sample SD after clamping to the `[lower_pct, upper_pct]`
/// percentile bounds. Non-finite values are dropped first.
pub fn winsorized_mean_sd(values: &[f64], lower_pct: f64, upper_pct: f64) -> Result<(f64, f64)> {
    if !(0.0..=100.0).contains(&lower_pct) || !(lower_pct..=100.0).contains(&upper_pct) {
        return Err(Error::invalid(format!(
            "bad percentile bounds {lower_pct}/{upper_pct}"
        )));
    }
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return Err(Error::invalid("winsorizing an empty sample"));
    }
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, lower_pct);
    let hi = percentile(&sorted, upper_pct);
    let clamped: Vec<f64> = values
        .iter()
        .filter(|v| v.is_finite())
        .map(|v| v.clamp(lo, hi))
        .collect();
    let s = crate::types::Summary::of(&clamped);
    Ok((s.mean, s.sd))
}
