//! Drift, projection loss, bridge quantities and the compression regret bound.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stopping::acting_loss;
use crate::types::{BridgeReport, DriftBin, DriftReport, LossSpec, RiskMatrix};

pub const DEFAULT_DRIFT_BINS: usize = 10;

fn same_length(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

fn assemble(
    risk_t: &[f64],
    increments: &[f64],
    weights: &[f64],
    groups: &[Vec<usize>],
) -> DriftReport {
    let total: f64 = weights.iter().sum();
    let bins: Vec<DriftBin> = groups
        .iter()
        .map(|g| {
            let w: f64 = g.iter().map(|&i| weights[i]).sum();
            let m: f64 = g.iter().map(|&i| weights[i] * increments[i]).sum::<f64>() / w;
            DriftBin {
                lower: risk_t[g[0]],
                upper: risk_t[*g.last().expect("bins are nonempty")],
                count: g.len(),
                weight: w / total,
                mean_increment: m,
            }
        })
        .collect();
    let mean_drift = bins.iter().map(|b| b.weight * b.mean_increment).sum();
    let mean_squared_drift = bins
        .iter()
        .map(|b| b.weight * b.mean_increment * b.mean_increment)
        .sum();
    DriftReport {
        bins,
        mean_drift,
        mean_squared_drift,
    }
}

fn sorted_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order
}

/// Equal-count quantile bins of `risk_t` (stable sort; the first `n mod b`
/// bins get one extra member). Adjacent bins whose boundary values tie are
/// merged, so equal risks never straddle bins.
pub fn drift_diagnostic(risk_t: &[f64], risk_next: &[f64], n_bins: usize) -> Result<DriftReport> {
    same_length(risk_t.len(), risk_next.len())?;
    let n = risk_t.len();
    if n_bins == 0 || n < n_bins {
        return Err(Error::invalid(format!(
            "{n} observations cannot fill {n_bins} bins"
        )));
    }
    let order = sorted_order(risk_t);
    let (base, extra) = (n / n_bins, n % n_bins);
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(n_bins);
    let mut start = 0;
    for b in 0..n_bins {
        let len = base + usize::from(b < extra);
        let chunk = &order[start..start + len];
        start += len;
        match groups.last_mut() {
            Some(prev) if risk_t[*prev.last().unwrap()] == risk_t[chunk[0]] => {
                prev.extend_from_slice(chunk)
            }
            _ => groups.push(chunk.to_vec()),
        }
    }
    let increments: Vec<f64> = risk_next.iter().zip(risk_t).map(|(b, a)| b - a).collect();
    Ok(assemble(risk_t, &increments, &vec![1.0; n], &groups))
}

/// Probability-weighted drift: each group of equal `risk_t` values goes to
/// bin `⌊b · (mass below it) / total⌋`, so every bin is a union of level
/// sets of `risk_t`.
pub fn weighted_drift_diagnostic(
    risk_t: &[f64],
    risk_next: &[f64],
    weights: &[f64],
    n_bins: usize,
) -> Result<DriftReport> {
    same_length(risk_t.len(), risk_next.len())?;
    same_length(risk_t.len(), weights.len())?;
    if n_bins == 0 || risk_t.is_empty() {
        return Err(Error::invalid(
            "weighted drift needs data and at least one bin",
        ));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::invalid("weights must be positive"));
    }
    let total: f64 = weights.iter().sum();
    let order = sorted_order(risk_t);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current_bin = usize::MAX;
    let mut below = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && risk_t[order[j]] == risk_t[order[i]] {
            j += 1;
        }
        let bin = ((n_bins as f64 * below / total) as usize).min(n_bins - 1);
        if bin != current_bin {
            groups.push(Vec::new());
            current_bin = bin;
        }
        groups.last_mut().unwrap().extend_from_slice(&order[i..j]);
        below += order[i..j].iter().map(|&k| weights[k]).sum::<f64>();
        i = j;
    }
    let increments: Vec<f64> = risk_next.iter().zip(risk_t).map(|(b, a)| b - a).collect();
    Ok(assemble(risk_t, &increments, weights, &groups))
}

/// Drift for every successive stage pair of a risk matrix.
pub fn drift_by_transition(risks: &RiskMatrix, n_bins: usize) -> Result<Vec<DriftReport>> {
    (0..risks.n_stages().saturating_sub(1))
        .map(|t| drift_diagnostic(&risks.stage(t), &risks.stage(t + 1), n_bins))
        .collect()
}

/// Mean squared difference `n⁻¹ Σ (x̂_i − ŷ_i)²`.
pub fn projection_loss(x_hat: &[f64], y_hat: &[f64]) -> Result<f64> {
    same_length(x_hat.len(), y_hat.len())?;
    if x_hat.is_empty() {
        return Err(Error::invalid("projection loss of an empty vector"));
    }
    let sum: f64 = x_hat.iter().zip(y_hat).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(sum / x_hat.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecompositionCheck {
    /// `E[(D − Y)²] − E[(D − X)²]`
    pub lhs: f64,
    /// `E[(X − Y)²]`
    pub rhs: f64,
}

impl DecompositionCheck {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

/// Both sides of the projection-loss decomposition under outcome weights
/// (probabilities for exact enumeration, `1/n` for a sample).
pub fn decomposition_check(
    d: &[bool],
    x: &[f64],
    y: &[f64],
    weights: &[f64],
) -> Result<DecompositionCheck> {
    same_length(d.len(), x.len())?;
    same_length(d.len(), y.len())?;
    same_length(d.len(), weights.len())?;
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::invalid("weights must have positive mass"));
    }
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for i in 0..d.len() {
        let di = if d[i] { 1.0 } else { 0.0 };
        let w = weights[i] / total;
        lhs += w * ((di - y[i]).powi(2) - (di - x[i]).powi(2));
        rhs += w * (x[i] - y[i]).powi(2);
    }
    Ok(DecompositionCheck { lhs, rhs })
}

/// Fraction of patients whose threshold decision is unchanged between stages.
pub fn decision_stability(risk_t: &[f64], risk_next: &[f64], c_star: f64) -> Result<f64> {
    same_length(risk_t.len(), risk_next.len())?;
    if risk_t.is_empty() {
        return Err(Error::invalid("stability of an empty fold"));
    }
    let stable = risk_t
        .iter()
        .zip(risk_next)
        .filter(|(a, b)| (**a > c_star) == (**b > c_star))
        .count();
    Ok(stable as f64 / risk_t.len() as f64)
}

/// Mean `|risk − c*|`.
pub fn threshold_distance(risks: &[f64], c_star: f64) -> Result<f64> {
    if risks.is_empty() {
        return Err(Error::invalid("threshold distance of an empty fold"));
    }
    if let Some(r) = risks.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::invalid(format!("risk {r} outside [0,1]")));
    }
    Ok(risks.iter().map(|r| (r - c_star).abs()).sum::<f64>() / risks.len() as f64)
}

/// Stability for every transition and distance for every stage of one fold.
pub fn bridge_quantities(risks: &RiskMatrix, c_star: f64) -> Result<BridgeReport> {
    let stability = (0..risks.n_stages().saturating_sub(1))
        .map(|t| decision_stability(&risks.stage(t), &risks.stage(t + 1), c_star))
        .collect::<Result<Vec<_>>>()?;
    let distance = (0..risks.n_stages())
        .map(|t| threshold_distance(&risks.stage(t), c_star))
        .collect::<Result<Vec<_>>>()?;
    BridgeReport::new(stability, distance, risks.n_patients())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretCheck {
    /// `mean ℓ(ŷ) − mean ℓ(x̂)`; may be negative.
    pub regret: f64,
    /// `max(c_FP, c_FN) · mean |x̂ − ŷ|`
    pub bound: f64,
}

impl RegretCheck {
    pub fn holds(&self) -> bool {
        self.regret <= self.bound * (1.0 + 1e-12) + 1e-15
    }
}

pub fn regret_bound_check(x_hat: &[f64], y_hat: &[f64], loss: &LossSpec) -> Result<RegretCheck> {
    same_length(x_hat.len(), y_hat.len())?;
    if x_hat.is_empty() {
        return Err(Error::invalid("regret of an empty vector"));
    }
    let n = x_hat.len() as f64;
    let regret = x_hat
        .iter()
        .zip(y_hat)
        .map(|(&x, &y)| acting_loss(y, loss) - acting_loss(x, loss))
        .sum::<f64>()
        / n;
    let gap = x_hat
        .iter()
        .zip(y_hat)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n;
    Ok(RegretCheck {
        regret,
        bound: loss.lipschitz() * gap,
    })
}
