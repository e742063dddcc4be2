//! Sequential clinical prediction as optimal stopping.
//!
//! Staged risk models ([`glm`]), held-out metrics ([`metrics`]), Bayes
//! threshold decisions and Bellman stopping ([`stopping`]), martingale and
//! projection diagnostics ([`diagnostics`]), exact finite worlds used as a
//! correctness oracle ([`synth`]), and the repeated-split study harness
//! ([`harness`]).

pub mod diagnostics;
pub mod error;
pub mod glm;
pub mod harness;
pub mod metrics;
pub mod stopping;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    BridgeReport, CostSchedule, DriftBin, DriftReport, LossSpec, RiskMatrix, SplitPlan,
    StageMetrics, StageReport, StagedDataset, StoppingReport, Summary,
};
