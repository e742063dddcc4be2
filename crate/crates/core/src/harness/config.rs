//! Study configuration documents (TOML, one study per file).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CostSchedule, LossSpec, SplitPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveClass {
    /// Outcome cell equals this text exactly.
    Equals(String),
    /// Outcome cell parses as a number strictly greater than this.
    GreaterThan(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub column: String,
    pub positive: PositiveClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Any missing cell is an ingestion error.
    #[default]
    None,
    /// Replace with the training-fold mode of the column.
    FoldMode,
    /// Replace with the training-fold median of the column.
    FoldMedian,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingSpec {
    #[serde(default)]
    pub policy: MissingPolicy,
    /// Cell texts read as missing (e.g. `"?"`).
    #[serde(default)]
    pub markers: Vec<String>,
    /// Columns in which a value of exactly zero means "not measured".
    #[serde(default)]
    pub zero_coded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    /// Full column list of the stage (earlier stages' columns included).
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub cumulative: CostSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    /// Bridge quantities are aggregated over the first `bridge_reps` reps.
    #[serde(default = "default_bridge_reps")]
    pub bridge_reps: usize,
}

fn default_seed() -> u64 {
    2026
}
fn default_reps() -> usize {
    1000
}
fn default_fraction() -> f64 {
    0.7
}
fn default_bridge_reps() -> usize {
    200
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            master_seed: default_seed(),
            reps: default_reps(),
            train_fraction: default_fraction(),
            bridge_reps: default_bridge_reps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    /// Principal-component counts of the compressed final-stage models.
    #[serde(default = "default_compression")]
    pub compression: Vec<usize>,
    #[serde(default = "default_bins")]
    pub drift_bins: usize,
}

fn default_ridge() -> f64 {
    crate::glm::DEFAULT_RIDGE
}
fn default_compression() -> Vec<usize> {
    vec![1, 3]
}
fn default_bins() -> usize {
    crate::diagnostics::DEFAULT_DRIFT_BINS
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            ridge: default_ridge(),
            compression: default_compression(),
            drift_bins: default_bins(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub name: String,
    /// Delimited text source; relative paths resolve against the config file.
    pub source: PathBuf,
    pub expected_rows: Option<usize>,
    pub outcome: OutcomeSpec,
    #[serde(default)]
    pub missing: MissingSpec,
    pub stages: Vec<StageSpec>,
    pub loss: LossSpec,
    pub costs: CostSpec,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl StudyConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut config: StudyConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.base_dir = base_dir.into();
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("study {}: {msg}", self.name)));
        if self.stages.is_empty() {
            return fail("no stages".into());
        }
        let mut names = HashSet::new();
        for s in &self.stages {
            if !names.insert(&s.name) {
                return fail(format!("duplicate stage name {}", s.name));
            }
            let unique: HashSet<_> = s.columns.iter().collect();
            if unique.len() != s.columns.len() {
                return fail(format!("stage {} repeats a column", s.name));
            }
        }
        for w in self.stages.windows(2) {
            if let Some(c) = w[0].columns.iter().find(|c| !w[1].columns.contains(c)) {
                return fail(format!(
                    "stages not nested: {c} is in {} but not in {}",
                    w[0].name, w[1].name
                ));
            }
        }
        if self.costs.cumulative.len() != self.stages.len() {
            return fail(format!(
                "{} stage costs for {} stages",
                self.costs.cumulative.len(),
                self.stages.len()
            ));
        }
        if self
            .stages
            .iter()
            .any(|s| s.columns.contains(&self.outcome.column))
        {
            return fail("outcome column used as a feature".into());
        }
        let final_stage = &self.stages[self.stages.len() - 1].columns;
        for c in &self.missing.zero_coded {
            if !final_stage.contains(c) {
                return fail(format!("zero-coded column {c} is not a feature"));
            }
        }
        if (!self.missing.zero_coded.is_empty() || !self.missing.markers.is_empty())
            && self.missing.policy == MissingPolicy::None
        {
            return fail("missing markers given but policy is none".into());
        }
        if !(self.model.ridge.is_finite() && self.model.ridge >= 0.0) {
            return fail(format!("ridge {} must be >= 0", self.model.ridge));
        }
        if self.model.drift_bins == 0 {
            return fail("drift_bins must be positive".into());
        }
        if let Some(&k) = self
            .model
            .compression
            .iter()
            .find(|&&k| k == 0 || k > final_stage.len())
        {
            return fail(format!(
                "compression to {k} components with {} features",
                final_stage.len()
            ));
        }
        self.split_plan()
            .map_err(|e| Error::Config(format!("study {}: {e}", self.name)))?;
        Ok(())
    }

    pub fn split_plan(&self) -> Result<SplitPlan> {
        SplitPlan::new(
            self.split.master_seed,
            self.split.reps,
            self.split.train_fraction,
        )
    }

    pub fn source_path(&self) -> PathBuf {
        if self.source.is_absolute() {
            self.source.clone()
        } else {
            self.base_dir.join(&self.source)
        }
    }

    pub fn feature_columns(&self) -> &[String] {
        &self.stages[self.stages.len() - 1].columns
    }

    pub fn stage_names(&self) -> Vec<String> {
        self.stages.iter().map(|s| s.name.clone()).collect()
    }

    pub fn with_reps(mut self, reps: usize) -> Result<Self> {
        self.split.reps = reps;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.split.master_seed = seed;
        self
    }
}

/// One config file, or every `*.toml` directly inside a directory (sorted by name).
pub fn load_configs(path: &Path) -> Result<Vec<StudyConfig>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Config(format!(
                "no .toml files in {}",
                path.display()
            )));
        }
        files.iter().map(|f| StudyConfig::from_path(f)).collect()
    } else {
        Ok(vec![StudyConfig::from_path(path)?])
    }
}

/// Alternative cumulative cost schedules for a sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub schedule: Vec<ScheduleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub study: String,
    pub cumulative: CostSchedule,
    /// Fixed decision losses; when absent the study is run to obtain them.
    pub losses: Option<Vec<f64>>,
}

impl ScheduleFile {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let file: ScheduleFile =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if file.schedule.is_empty() {
            return Err(Error::Config(format!("{}: no schedules", path.display())));
        }
        Ok(file)
    }
}
