//! Domain types shared by every analysis module.
//!
//! All types validate their invariants on construction and are immutable
//! afterwards, so they can be shared freely across worker threads.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A feature matrix with binary outcomes and a nested sequence of stage
/// feature sets `S_1 ⊆ S_2 ⊆ … ⊆ S_T` (column indices into `features`).
#[derive(Debug, Clone)]
pub struct StagedDataset {
    name: String,
    features: DMatrix<f64>,
    outcome: Vec<bool>,
    stages: Vec<Vec<usize>>,
    feature_names: Vec<String>,
    missing_cells: Vec<(usize, usize)>,
}

impl StagedDataset {
    pub fn new(
        name: impl Into<String>,
        features: DMatrix<f64>,
        outcome: Vec<bool>,
        stages: Vec<Vec<usize>>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = features.shape();
        if outcome.len() != n {
            return Err(Error::invariant(
                "outcome length",
                format!("{} outcomes for {} rows", outcome.len(), n),
            ));
        }
        if n < 2 {
            return Err(Error::invariant("n >= 2", format!("dataset has {n} rows")));
        }
        let positives = outcome.iter().filter(|&&y| y).count();
        if positives == 0 || positives == n {
            return Err(Error::invariant(
                "both classes present",
                format!("{positives} positives among {n} rows"),
            ));
        }
        if feature_names.len() != p {
            return Err(Error::invariant(
                "feature names",
                format!("{} names for {} columns", feature_names.len(), p),
            ));
        }
        if stages.is_empty() {
            return Err(Error::invariant("stages", "at least one stage is required"));
        }
        for (t, stage) in stages.iter().enumerate() {
            if let Some(&bad) = stage.iter().find(|&&j| j >= p) {
                return Err(Error::invariant(
                    "stage indices < p",
                    format!("stage {} references column {bad} but p = {p}", t + 1),
                ));
            }
        }
        for t in 1..stages.len() {
            if let Some(&missing) = stages[t - 1].iter().find(|j| !stages[t].contains(j)) {
                return Err(Error::invariant(
                    "nested stages",
                    format!(
                        "column {missing} is in stage {} but not in stage {}",
                        t,
                        t + 1
                    ),
                ));
            }
        }
        if let Some((i, j)) = features
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
            .map(|(k, _)| (k % n, k / n))
        {
            return Err(Error::invariant(
                "no missing values",
                format!("non-finite value at row {i}, column {j}"),
            ));
        }
        Ok(Self {
            name: name.into(),
            features,
            outcome,
            stages,
            feature_names,
            missing_cells: Vec::new(),
        })
    }

    /// Records cells that were missing in the source and hold a provisional
    /// fill. Fold-local imputation overwrites exactly these cells.
    pub fn with_missing_cells(mut self, cells: Vec<(usize, usize)>) -> Result<Self> {
        let (n, p) = self.features.shape();
        if let Some(&(i, j)) = cells.iter().find(|&&(i, j)| i >= n || j >= p) {
            return Err(Error::invariant(
                "missing cell in range",
                format!("cell ({i}, {j}) outside {n}x{p}"),
            ));
        }
        self.missing_cells = cells;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn outcome(&self) -> &[bool] {
        &self.outcome
    }

    pub fn stages(&self) -> &[Vec<usize>] {
        &self.stages
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn missing_cells(&self) -> &[(usize, usize)] {
        &self.missing_cells
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_positive(&self) -> usize {
        self.outcome.iter().filter(|&&y| y).count()
    }
}

/// Asymmetric misclassification costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLossSpec")]
pub struct LossSpec {
    c_fp: f64,
    c_fn: f64,
}

#[derive(Deserialize)]
struct RawLossSpec {
    c_fp: f64,
    c_fn: f64,
}

impl TryFrom<RawLossSpec> for LossSpec {
    type Error = Error;

    fn try_from(raw: RawLossSpec) -> Result<Self> {
        LossSpec::new(raw.c_fp, raw.c_fn)
    }
}

impl LossSpec {
    pub fn new(c_fp: f64, c_fn: f64) -> Result<Self> {
        if !(c_fp.is_finite() && c_fp > 0.0) {
            return Err(Error::invariant("c_fp > 0", format!("c_fp = {c_fp}")));
        }
        if !(c_fn.is_finite() && c_fn > 0.0) {
            return Err(Error::invariant("c_fn > 0", format!("c_fn = {c_fn}")));
        }
        Ok(Self { c_fp, c_fn })
    }

    pub fn c_fp(&self) -> f64 {
        self.c_fp
    }

    pub fn c_fn(&self) -> f64 {
        self.c_fn
    }

    /// Bayes threshold `c_fp / (c_fp + c_fn)`.
    pub fn threshold(&self) -> f64 {
        self.c_fp / (self.c_fp + self.c_fn)
    }

    /// Lipschitz constant of the acting loss.
    pub fn lipschitz(&self) -> f64 {
        self.c_fp.max(self.c_fn)
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.c_fp * k, self.c_fn * k)
    }
}

/// Cumulative test cost through each stage; `cumulative[0] == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CostSchedule {
    cumulative: Vec<f64>,
}

impl TryFrom<Vec<f64>> for CostSchedule {
    type Error = Error;

    fn try_from(cumulative: Vec<f64>) -> Result<Self> {
        CostSchedule::new(cumulative)
    }
}

impl From<CostSchedule> for Vec<f64> {
    fn from(schedule: CostSchedule) -> Self {
        schedule.cumulative
    }
}

impl CostSchedule {
    pub fn new(cumulative: Vec<f64>) -> Result<Self> {
        match cumulative.first() {
            None => return Err(Error::invariant("nonempty schedule", "no stages")),
            Some(&c0) if c0 != 0.0 => {
                return Err(Error::invariant("cumulative[0] = 0", format!("got {c0}")))
            }
            _ => {}
        }
        if let Some(w) = cumulative
            .windows(2)
            .find(|w| !(w[1].is_finite() && w[1] >= w[0]))
        {
            return Err(Error::invariant(
                "nondecreasing",
                format!("{} follows {}", w[1], w[0]),
            ));
        }
        Ok(Self { cumulative })
    }

    /// All-zero schedule over `stages` stages.
    pub fn free(stages: usize) -> Self {
        Self {
            cumulative: vec![0.0; stages.max(1)],
        }
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Cost `c_t` of moving from stage `t` to stage `t + 1`.
    pub fn incremental(&self, t: usize) -> f64 {
        self.cumulative[t + 1] - self.cumulative[t]
    }
}

/// Per-patient, per-stage fitted risks (rows are patients, columns stages).
#[derive(Debug, Clone, PartialEq)]
pub struct RiskMatrix {
    risks: DMatrix<f64>,
    patient_ids: Vec<usize>,
}

impl RiskMatrix {
    pub fn new(risks: DMatrix<f64>, patient_ids: Vec<usize>) -> Result<Self> {
        if patient_ids.len() != risks.nrows() {
            return Err(Error::invariant(
                "patient ids",
                format!("{} ids for {} rows", patient_ids.len(), risks.nrows()),
            ));
        }
        if let Some(v) = risks.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invariant("risks in [0,1]", format!("found {v}")));
        }
        Ok(Self { risks, patient_ids })
    }

    pub fn from_stage_columns(columns: &[Vec<f64>], patient_ids: Vec<usize>) -> Result<Self> {
        let n = patient_ids.len();
        if let Some(c) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::invariant(
                "stage column length",
                format!("{} risks for {} patients", c.len(), n),
            ));
        }
        let risks = DMatrix::from_fn(n, columns.len(), |i, t| columns[t][i]);
        Self::new(risks, patient_ids)
    }

    pub fn n_patients(&self) -> usize {
        self.risks.nrows()
    }

    pub fn n_stages(&self) -> usize {
        self.risks.ncols()
    }

    pub fn stage(&self, t: usize) -> Vec<f64> {
        self.risks.column(t).iter().copied().collect()
    }

    /// Increments `X̂_{t+1} − X̂_t` for every patient.
    pub fn increments(&self, t: usize) -> Vec<f64> {
        self.risks
            .column(t + 1)
            .iter()
            .zip(self.risks.column(t).iter())
            .map(|(next, cur)| next - cur)
            .collect()
    }

    pub fn patient_ids(&self) -> &[usize] {
        &self.patient_ids
    }

    pub fn risks(&self) -> &DMatrix<f64> {
        &self.risks
    }
}

/// Repeated stratified split protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    master_seed: u64,
    n_reps: usize,
    train_fraction: f64,
    stratified: bool,
}

impl SplitPlan {
    pub fn new(master_seed: u64, n_reps: usize, train_fraction: f64) -> Result<Self> {
        if n_reps == 0 {
            return Err(Error::invariant("n_reps > 0", "zero repetitions"));
        }
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::invariant(
                "train_fraction in (0,1)",
                format!("got {train_fraction}"),
            ));
        }
        Ok(Self {
            master_seed,
            n_reps,
            train_fraction,
            stratified: true,
        })
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn n_reps(&self) -> usize {
        self.n_reps
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction
    }

    pub fn stratified(&self) -> bool {
        self.stratified
    }

    pub fn with_reps(self, n_reps: usize) -> Result<Self> {
        Self::new(self.master_seed, n_reps, self.train_fraction)
    }

    pub fn with_seed(self, master_seed: u64) -> Result<Self> {
        Self::new(master_seed, self.n_reps, self.train_fraction)
    }

    /// Seed for repetition `rep`: a SplitMix64 finalizer applied to
    /// `master_seed + (rep + 1) * 0x9E3779B97F4A7C15` (wrapping).
    pub fn rep_seed(&self, rep: usize) -> u64 {
        splitmix64(
            self.master_seed.wrapping_add(
                (rep as u64)
                    .wrapping_add(1)
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ),
        )
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean, sample SD and count of a per-repetition quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Summary {
    /// Non-finite values are skipped. SD uses the `n − 1` denominator and is
    /// zero when fewer than two values remain.
    pub fn of(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let n = finite.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                sd: f64::NAN,
                n: 0,
            };
        }
        let mean = pairwise_sum(&finite) / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            let sq: Vec<f64> = finite.iter().map(|v| (v - mean) * (v - mean)).collect();
            (pairwise_sum(&sq) / (n - 1) as f64).sqrt()
        };
        Self { mean, sd, n }
    }
}

/// Pairwise (cascade) summation; deterministic for a given input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let (a, b) = values.split_at(values.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Repetition-level means and SDs of the stagewise metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageMetrics {
    pub auc: Summary,
    pub brier: Summary,
    pub log_loss: Summary,
    /// Accuracy of the threshold decision `risk > c*`.
    pub accuracy: Summary,
    /// Accuracy of the `risk > 0.5` classification.
    pub accuracy_at_half: Summary,
    pub sensitivity: Summary,
    pub specificity: Summary,
    pub decision_loss: Summary,
    pub true_positives: Summary,
    pub false_positives: Summary,
    pub true_negatives: Summary,
    pub false_negatives: Summary,
    pub n_test: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stages: Vec<StageMetrics>,
}

/// Retrospective stopping analysis: decision loss plus cumulative test cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingReport {
    pub decision_loss: Vec<f64>,
    pub cumulative_cost: Vec<f64>,
    pub total_cost: Vec<f64>,
    /// Zero-based index of the minimal total cost (earliest on ties).
    pub preferred_stage: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub weight: f64,
    pub mean_increment: f64,
}

/// Quantile-binned conditional drift for one stage transition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub bins: Vec<DriftBin>,
    /// `M_t = Σ_b w_b Δ̄_b`
    pub mean_drift: f64,
    /// `S_t = Σ_b w_b Δ̄_b²`
    pub mean_squared_drift: f64,
}

/// Patient-level bridge quantities for one test fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeReport {
    /// Decision stability per transition `t → t+1`.
    pub stability: Vec<f64>,
    /// Mean distance from the threshold per stage.
    pub threshold_distance: Vec<f64>,
    pub n_test: usize,
}

impl BridgeReport {
    pub fn new(stability: Vec<f64>, threshold_distance: Vec<f64>, n_test: usize) -> Result<Self> {
        if let Some(v) = stability
            .iter()
            .chain(threshold_distance.iter())
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::invariant(
                "bridge quantities in [0,1]",
                format!("{v}"),
            ));
        }
        Ok(Self {
            stability,
            threshold_distance,
            n_test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(stages: Vec<Vec<usize>>) -> Result<StagedDataset> {
        StagedDataset::new(
            "tiny",
            DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            vec![true, false, true],
            stages,
            vec!["a".into(), "b".into()],
        )
    }

    #[test]
    fn nested_stages_accepted() {
        assert!(tiny(vec![vec![0], vec![0, 1]]).is_ok());
    }

    #[test]
    fn non_nested_stages_rejected() {
        let err = tiny(vec![vec![0], vec![1]]).unwrap_err();
        assert!(err.to_string().contains("nested stages"), "{err}");
    }

    #[test]
    fn out_of_range_stage_rejected() {
        let err = tiny(vec![vec![0, 2]]).unwrap_err();
        assert!(err.to_string().contains("stage indices"), "{err}");
    }

    #[test]
    fn single_class_rejected() {
        let err = StagedDataset::new(
            "x",
            DMatrix::zeros(2, 1),
            vec![true, true],
            vec![vec![0]],
            vec!["a".into()],
        )
        .unwrap_err();
        assert!(err.to_string().contains("both classes"), "{err}");
    }

    #[test]
    fn nan_feature_rejected() {
        let err = StagedDataset::new(
            "x",
            DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]),
            vec![true, false],
            vec![vec![0]],
            vec!["a".into()],
        )
        .unwrap_err();
        assert!(err.to_string().contains("no missing values"), "{err}");
    }

    #[test]
    fn loss_spec_threshold() {
        let loss = LossSpec::new(1.0, 5.0).unwrap();
        assert!((loss.threshold() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(loss.lipschitz(), 5.0);
        assert!(LossSpec::new(0.0, 1.0).is_err());
        assert!(LossSpec::new(1.0, -2.0).is_err());
    }

    #[test]
    fn cost_schedule_invariants() {
        let s = CostSchedule::new(vec![0.0, 0.02, 0.06]).unwrap();
        assert!((s.incremental(1) - 0.04).abs() < 1e-15);
        assert!(CostSchedule::new(vec![0.01, 0.02]).is_err());
        assert!(CostSchedule::new(vec![0.0, 0.02, 0.01]).is_err());
        assert!(CostSchedule::new(vec![]).is_err());
    }

    #[test]
    fn risk_matrix_rejects_out_of_range() {
        assert!(RiskMatrix::from_stage_columns(&[vec![0.2, 1.2]], vec![0, 1]).is_err());
        let m =
            RiskMatrix::from_stage_columns(&[vec![0.2, 0.4], vec![0.3, 0.1]], vec![7, 9]).unwrap();
        let inc = m.increments(0);
        assert!((inc[0] - 0.1).abs() < 1e-15 && (inc[1] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn split_plan_seeds_are_pure() {
        let plan = SplitPlan::new(42, 10, 0.7).unwrap();
        assert_eq!(
            plan.rep_seed(3),
            SplitPlan::new(42, 500, 0.7).unwrap().rep_seed(3)
        );
        assert_ne!(plan.rep_seed(3), plan.rep_seed(4));
        assert!(SplitPlan::new(1, 0, 0.7).is_err());
        assert!(SplitPlan::new(1, 5, 1.0).is_err());
    }

    #[test]
    fn summary_of_single_value_has_zero_sd() {
        let s = Summary::of(&[0.3]);
        assert_eq!((s.mean, s.sd, s.n), (0.3, 0.0, 1));
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.sd - 2f64.sqrt()).abs() < 1e-15);
    }
}
