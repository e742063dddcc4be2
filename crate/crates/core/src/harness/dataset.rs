//! Delimited-text ingestion and fold-local imputation.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::harness::config::{MissingPolicy, PositiveClass, StudyConfig};
use crate::types::StagedDataset;

/// Reads the configured source into a dataset whose columns are the final
/// stage's columns, in that order. Missing cells receive a provisional
/// whole-data fill and are recorded so each fold can re-impute them from its
/// own training rows.
pub fn load_dataset(config: &StudyConfig) -> Result<StagedDataset> {
    let path = config.source_path();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let locate = |name: &str| {
        position.get(name).copied().ok_or_else(|| {
            Error::Ingestion(format!("{}: no column named {name:?}", path.display()))
        })
    };
    let features = config.feature_columns();
    let feature_pos = features
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>>>()?;
    let outcome_pos = locate(&config.outcome.column)?;
    let zero_coded: Vec<bool> = features
        .iter()
        .map(|c| config.missing.zero_coded.contains(c))
        .collect();

    let mut values: Vec<f64> = Vec::new();
    let mut outcome = Vec::new();
    let mut missing = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cell = |pos: usize| record.get(pos).unwrap_or("");
        for (j, (&pos, name)) in feature_pos.iter().zip(features).enumerate() {
            let text = cell(pos);
            let value = if config.missing.markers.iter().any(|m| m == text) {
                None
            } else {
                let v: f64 = text.parse().map_err(|_| {
                    Error::Ingestion(format!(
                        "{}: row {row}, column {name}: cannot parse {text:?}",
                        path.display()
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingestion(format!(
                        "{}: row {row}, column {name}: non-finite value",
                        path.display()
                    )));
                }
                (!(zero_coded[j] && v == 0.0)).then_some(v)
            };
            match value {
                Some(v) => values.push(v),
                None if config.missing.policy == MissingPolicy::None => {
                    return Err(Error::Ingestion(format!(
                        "{}: row {row}, column {name}: missing value with no imputation policy",
                        path.display()
                    )))
                }
                None => {
                    missing.push((r, j));
                    values.push(f64::NAN);
                }
            }
        }
        let text = cell(outcome_pos);
        let positive = match &config.outcome.positive {
            PositiveClass::Equals(s) => text == s,
            PositiveClass::GreaterThan(t) => {
                let v: f64 = text.parse().map_err(|_| {
                    Error::Ingestion(format!(
                        "{}: row {row}, column {}: cannot parse outcome {text:?}",
                        path.display(),
                        config.outcome.column
                    ))
                })?;
                v > *t
            }
        };
        outcome.push(positive);
    }
    let n = outcome.len();
    if let Some(expected) = config.expected_rows {
        if expected != n {
            return Err(Error::Ingestion(format!(
                "{}: expected {expected} rows, found {n}",
                path.display()
            )));
        }
    }
    let mut matrix = DMatrix::from_row_slice(n, features.len(), &values);
    let all_rows: Vec<usize> = (0..n).collect();
    fill_missing(&mut matrix, &missing, config.missing.policy, &all_rows)?;

    let index: HashMap<&str, usize> = features
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let stages = config
        .stages
        .iter()
        .map(|s| s.columns.iter().map(|c| index[c.as_str()]).collect())
        .collect();
    StagedDataset::new(
        config.name.clone(),
        matrix,
        outcome,
        stages,
        features.to_vec(),
    )?
    .with_missing_cells(missing)
}

/// Most frequent value; ties go to the smallest.
pub fn mode(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, usize)> = None;
    for group in sorted.chunk_by(|a, b| a == b) {
        if best.is_none_or(|(_, count)| group.len() > count) {
            best = Some((group[0], group.len()));
        }
    }
    best.map(|(v, _)| v)
}

/// Middle value, or the mean of the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    })
}

fn fill_missing(
    matrix: &mut DMatrix<f64>,
    missing: &[(usize, usize)],
    policy: MissingPolicy,
    source_rows: &[usize],
) -> Result<()> {
    if missing.is_empty() {
        return Ok(());
    }
    let mut by_column: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(i, j) in missing {
        by_column.entry(j).or_default().push(i);
    }
    for (j, rows) in by_column {
        let mut is_missing = vec![false; matrix.nrows()];
        for &i in &rows {
            is_missing[i] = true;
        }
        let observed: Vec<f64> = source_rows
            .iter()
            .filter(|&&i| !is_missing[i])
            .map(|&i| matrix[(i, j)])
            .collect();
        let fill = match policy {
            MissingPolicy::None => None,
            MissingPolicy::FoldMode => mode(&observed),
            MissingPolicy::FoldMedian => median(&observed),
        }
        .ok_or_else(|| {
            Error::Ingestion(format!("column {j} has no observed values to impute from"))
        })?;
        for i in rows {
            matrix[(i, j)] = fill;
        }
    }
    Ok(())
}

/// Feature matrix with the dataset's missing cells re-imputed from the
/// given training rows only.
pub fn impute_fold(
    dataset: &StagedDataset,
    policy: MissingPolicy,
    train_rows: &[usize],
) -> Result<DMatrix<f64>> {
    let mut matrix = dataset.features().clone();
    fill_missing(&mut matrix, dataset.missing_cells(), policy, train_rows)?;
    Ok(matrix)
}
