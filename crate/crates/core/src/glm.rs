//! Fold-local standardization, ridge logistic regression and PCA compression.
//!
//! The logistic fit minimises
//!
//! ```text
//! (1/n) Σ_i [log(1 + e^{η_i}) − y_i η_i] + (λ / 2n) ‖w‖²,   η = b + X w
//! ```
//!
//! with an unpenalised intercept `b`, by Newton/IRLS steps with step halving.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1.0;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
const MAX_HALVINGS: usize = 50;
const DEGENERATE_SCALE: f64 = 1e-12;

/// Per-feature centring and scaling fitted on a training fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    /// Column means and population SDs. Columns whose SD is zero (up to
    /// rounding) get scale 1.
    pub fn fit(train: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = train.shape();
        if n == 0 {
            return Err(Error::invalid("cannot standardize an empty matrix"));
        }
        let mut mean = Vec::with_capacity(p);
        let mut scale = Vec::with_capacity(p);
        for col in train.column_iter() {
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            mean.push(m);
            scale.push(if sd <= DEGENERATE_SCALE * m.abs().max(1.0) {
                1.0
            } else {
                sd
            });
        }
        Ok(Self { mean, scale })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::invalid(format!(
                "standardizer fitted on {} columns, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[j]) / self.scale[j]
        }))
    }
}

/// Copies the listed columns of `x`, in order.
pub fn select_columns(x: &DMatrix<f64>, columns: &[usize]) -> Result<DMatrix<f64>> {
    if let Some(&bad) = columns.iter().find(|&&j| j >= x.ncols()) {
        return Err(Error::invalid(format!(
            "column {bad} out of range for matrix with {} columns",
            x.ncols()
        )));
    }
    Ok(DMatrix::from_fn(x.nrows(), columns.len(), |i, j| {
        x[(i, columns[j])]
    }))
}

/// Copies the listed rows of `x`, in order.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub ridge: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// False when the gradient tolerance was not reached.
    pub converged: bool,
}

impl LogisticModel {
    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(Error::invalid(format!(
                "model has {} coefficients, input has {} columns",
                self.coefficients.len(),
                x.ncols()
            )));
        }
        Ok(x.row_iter()
            .map(|row| {
                self.intercept
                    + row
                        .iter()
                        .zip(&self.coefficients)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect())
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.linear_predictor(x)?.into_iter().map(sigmoid).collect())
    }
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^η)` without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn check_design(x: &DMatrix<f64>, y: &[bool]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("design matrix has non-finite entries"));
    }
    Ok(())
}

fn linear(x: &DMatrix<f64>, intercept: f64, coefficients: &[f64]) -> Vec<f64> {
    x.row_iter()
        .map(|row| {
            intercept
                + row
                    .iter()
                    .zip(coefficients)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect()
}

/// Penalised mean negative log-likelihood.
pub fn objective(
    x: &DMatrix<f64>,
    y: &[bool],
    ridge: f64,
    intercept: f64,
    coefficients: &[f64],
) -> f64 {
    let n = y.len() as f64;
    let eta = linear(x, intercept, coefficients);
    let nll: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| softplus(e) - if yi { e } else { 0.0 })
        .sum();
    let penalty: f64 = coefficients.iter().map(|w| w * w).sum();
    nll / n + 0.5 * ridge / n * penalty
}

/// Gradient of [`objective`]: intercept component first, then coefficients.
pub fn gradient(
    x: &DMatrix<f64>,
    y: &[bool],
    ridge: f64,
    intercept: f64,
    coefficients: &[f64],
) -> Vec<f64> {
    let n = y.len() as f64;
    let eta = linear(x, intercept, coefficients);
    let resid: Vec<f64> = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| sigmoid(e) - if yi { 1.0 } else { 0.0 })
        .collect();
    let mut g = vec![0.0; coefficients.len() + 1];
    g[0] = resid.iter().sum::<f64>() / n;
    for (j, col) in x.column_iter().enumerate() {
        let dot: f64 = col.iter().zip(&resid).map(|(a, r)| a * r).sum();
        g[j + 1] = dot / n + ridge / n * coefficients[j];
    }
    g
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Ridge logistic regression with unpenalised intercept.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[bool], ridge: f64) -> Result<LogisticModel> {
    fit_logistic_traced(x, y, ridge).map(|(model, _)| model)
}

/// Same as [`fit_logistic`], also returning the objective after every
/// accepted iterate (starting point first).
pub fn fit_logistic_traced(
    x: &DMatrix<f64>,
    y: &[bool],
    ridge: f64,
) -> Result<(LogisticModel, Vec<f64>)> {
    check_design(x, y)?;
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::invalid(format!(
            "ridge strength must be >= 0, got {ridge}"
        )));
    }
    let n = y.len();
    let positives = y.iter().filter(|&&v| v).count();
    if positives == 0 || positives == n {
        return Err(Error::invalid("logistic fit needs both classes"));
    }
    let k = x.ncols();
    let nf = n as f64;

    let prevalence = positives as f64 / nf;
    let mut intercept = (prevalence / (1.0 - prevalence)).ln();
    let mut coefs = vec![0.0; k];
    let mut current = objective(x, y, ridge, intercept, &coefs);
    let mut trace = vec![current];
    let mut grad = gradient(x, y, ridge, intercept, &coefs);
    let mut iterations = 0;

    while max_abs(&grad) >= GRADIENT_TOLERANCE && iterations < MAX_ITERATIONS {
        iterations += 1;

        // Hessian of the mean objective over [intercept, coefs].
        let eta = linear(x, intercept, &coefs);
        let w: Vec<f64> = eta
            .iter()
            .map(|&e| {
                let p = sigmoid(e);
                p * (1.0 - p)
            })
            .collect();
        let mut h = DMatrix::<f64>::zeros(k + 1, k + 1);
        for (i, wi) in w.iter().enumerate() {
            let wi = wi / nf;
            let row = x.row(i);
            h[(0, 0)] += wi;
            for a in 0..k {
                let xa = row[a] * wi;
                h[(0, a + 1)] += xa;
                for b in a..k {
                    h[(a + 1, b + 1)] += xa * row[b];
                }
            }
        }
        for a in 0..=k {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for j in 1..=k {
            h[(j, j)] += ridge / nf;
        }
        let g = DVector::from_column_slice(&grad);
        let step = match h.clone().cholesky() {
            Some(chol) => chol.solve(&g),
            None => match h.lu().solve(&g) {
                Some(s) => s,
                None => break,
            },
        };
        if step.iter().any(|v| !v.is_finite()) {
            break;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand_b = intercept - t * step[0];
            let cand_w: Vec<f64> = coefs
                .iter()
                .enumerate()
                .map(|(j, c)| c - t * step[j + 1])
                .collect();
            let value = objective(x, y, ridge, cand_b, &cand_w);
            if value <= current {
                accepted = Some((cand_b, cand_w, value));
                break;
            }
            t *= 0.5;
        }
        let Some((b, w_new, value)) = accepted else {
            break;
        };
        let stalled = value == current && b == intercept && w_new == coefs;
        intercept = b;
        coefs = w_new;
        current = value;
        trace.push(current);
        grad = gradient(x, y, ridge, intercept, &coefs);
        if stalled {
            break;
        }
    }

    let gradient_norm = max_abs(&grad);
    if coefs.iter().any(|c| !c.is_finite()) || !intercept.is_finite() {
        return Err(Error::invalid(
            "logistic fit produced non-finite coefficients",
        ));
    }
    Ok((
        LogisticModel {
            intercept,
            coefficients: coefs,
            ridge,
            iterations,
            gradient_norm,
            converged: gradient_norm < GRADIENT_TOLERANCE,
        },
        trace,
    ))
}

/// Risks for the `active` columns of raw (unstandardized) data.
pub fn predict_proba(
    model: &LogisticModel,
    standardizer: &Standardizer,
    x_raw: &DMatrix<f64>,
    active: &[usize],
) -> Result<Vec<f64>> {
    if active.len() != standardizer.dim() || active.len() != model.coefficients.len() {
        return Err(Error::invalid(format!(
            "{} active columns, standardizer has {}, model has {}",
            active.len(),
            standardizer.dim(),
            model.coefficients.len()
        )));
    }
    let sub = select_columns(x_raw, active)?;
    model.predict(&standardizer.transform(&sub)?)
}

/// Standardizer plus logistic model on one stage's active columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageModel {
    pub active: Vec<usize>,
    pub standardizer: Standardizer,
    pub model: LogisticModel,
}

impl StageModel {
    pub fn fit(x_raw: &DMatrix<f64>, y: &[bool], active: &[usize], ridge: f64) -> Result<Self> {
        let sub = select_columns(x_raw, active)?;
        let standardizer = Standardizer::fit(&sub)?;
        let model = fit_logistic(&standardizer.transform(&sub)?, y, ridge)?;
        Ok(Self {
            active: active.to_vec(),
            standardizer,
            model,
        })
    }

    pub fn predict(&self, x_raw: &DMatrix<f64>) -> Result<Vec<f64>> {
        predict_proba(&self.model, &self.standardizer, x_raw, &self.active)
    }
}

/// Standardize, project onto the top-`k` principal axes, then logistic fit
/// on the projection scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaPipeline {
    pub standardizer: Standardizer,
    /// `p × k`, orthonormal columns in descending eigenvalue order.
    #[serde(skip)]
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub model: LogisticModel,
}

/// Relative eigenvalue cut-off used to decide numerical rank.
const RANK_TOLERANCE: f64 = 1e-10;

/// Eigenpairs of the covariance of `z` (assumed centred), sorted by
/// descending eigenvalue, with each eigenvector's largest-magnitude loading
/// made positive.
pub fn principal_axes(z: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = z.nrows() as f64;
    let cov = (z.transpose() * z) / n;
    let eig = SymmetricEigen::new(cov);
    let p = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..p {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..p {
            vectors[(i, dst)] = sign * col[i];
        }
    }
    (values, vectors)
}

pub fn fit_pca_pipeline(
    x_raw: &DMatrix<f64>,
    y: &[bool],
    k: usize,
    ridge: f64,
) -> Result<PcaPipeline> {
    if k == 0 {
        return Err(Error::invalid("PCA pipeline needs at least one component"));
    }
    check_design(x_raw, y)?;
    let standardizer = Standardizer::fit(x_raw)?;
    let z = standardizer.transform(x_raw)?;
    let (values, vectors) = principal_axes(&z);
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let rank = values
        .iter()
        .filter(|&&v| top > 0.0 && v > RANK_TOLERANCE * top)
        .count();
    if k > rank {
        return Err(Error::invalid(format!(
            "requested {k} components but standardized data has rank {rank}"
        )));
    }
    let components = vectors.columns(0, k).into_owned();
    let scores = &z * &components;
    let model = fit_logistic(&scores, y, ridge)?;
    Ok(PcaPipeline {
        standardizer,
        components,
        eigenvalues: values[..k].to_vec(),
        model,
    })
}

impl PcaPipeline {
    pub fn scores(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.standardizer.transform(x_raw)? * &self.components)
    }

    pub fn predict(&self, x_raw: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.model.predict(&self.scores(x_raw)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, k: usize) -> (DMatrix<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, k, |_, _| rng.random_range(-2.0..2.0));
        let y: Vec<bool> = (0..n)
            .map(|i| {
                let eta: f64 = x
                    .row(i)
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v * (j as f64 - 1.0))
                    .sum();
                rng.random::<f64>() < sigmoid(eta)
            })
            .collect();
        (x, y)
    }

    #[test]
    fn standardizer_two_point_column() {
        let s = Standardizer::fit(&DMatrix::from_column_slice(2, 1, &[1.0, 3.0])).unwrap();
        assert_eq!(s.mean(), &[2.0]);
        assert_eq!(s.scale(), &[1.0]);
    }

    #[test]
    fn standardizer_constant_column_gets_unit_scale() {
        let s = Standardizer::fit(&DMatrix::from_column_slice(3, 1, &[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(s.mean(), &[5.0]);
        assert_eq!(s.scale(), &[1.0]);
    }

    #[test]
    fn standardizer_population_sd() {
        // values 0,0,3,3: mean 1.5, squared deviations all 2.25, population SD 1.5
        let s =
            Standardizer::fit(&DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 3.0, 3.0])).unwrap();
        assert_eq!(s.mean(), &[1.5]);
        assert_eq!(s.scale(), &[1.5]);
    }

    #[test]
    fn standardizer_rejects_empty() {
        assert!(Standardizer::fit(&DMatrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn intercept_only_matches_bernoulli_mle() {
        let y: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let m = fit_logistic(&DMatrix::zeros(10, 0), &y, 0.0).unwrap();
        assert!((m.intercept - (0.3f64 / 0.7).ln()).abs() < 1e-12);
        assert!((m.intercept + 0.8473).abs() < 1e-4);
        assert!(m.converged);
    }

    #[test]
    fn ridge_keeps_separable_fit_finite() {
        let x = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let y = vec![false, false, false, true, true, true];
        let m = fit_logistic(&x, &y, 1.0).unwrap();
        assert!(m.converged);
        assert!(m.coefficients[0].is_finite() && m.coefficients[0] > 0.0);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(fit_logistic(&DMatrix::zeros(3, 1), &[true, true, true], 1.0).is_err());
    }

    #[test]
    fn objective_decreases_monotonically() {
        for seed in 0..20 {
            let (x, y) = random_problem(seed, 40, 3);
            let (_, trace) = fit_logistic_traced(&x, &y, 0.5).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0], "seed {seed}: {} then {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let h = 1e-5;
        for seed in 0..25 {
            let (x, y) = random_problem(100 + seed, 5, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: f64 = rng.random_range(-1.0..1.0);
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ridge = 0.7;
            let g = gradient(&x, &y, ridge, b, &w);
            let mut params = vec![b];
            params.extend(&w);
            for j in 0..params.len() {
                let eval = |delta: f64| {
                    let mut q = params.clone();
                    q[j] += delta;
                    objective(&x, &y, ridge, q[0], &q[1..])
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let rel = (fd - g[j]).abs() / g[j].abs().max(1e-3);
                assert!(
                    rel < 1e-5,
                    "seed {seed} param {j}: fd {fd} vs analytic {}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn row_permutation_leaves_fit_unchanged() {
        let (x, y) = random_problem(7, 50, 4);
        let a = fit_logistic(&x, &y, 1.0).unwrap();
        let perm: Vec<usize> = (0..50).map(|i| (i * 17 + 3) % 50).collect();
        let xp = select_rows(&x, &perm);
        let yp: Vec<bool> = perm.iter().map(|&i| y[i]).collect();
        let b = fit_logistic(&xp, &yp, 1.0).unwrap();
        assert!((a.intercept - b.intercept).abs() < 1e-10);
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = LogisticModel {
            intercept: 0.0,
            coefficients: vec![0.0, 0.0],
            ridge: 1.0,
            iterations: 0,
            gradient_norm: 0.0,
            converged: true,
        };
        let s = Standardizer {
            mean: vec![0.0, 0.0],
            scale: vec![1.0, 1.0],
        };
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -4.0, 5.0, 6.0]);
        let p = predict_proba(&m, &s, &x, &[0, 2]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn saturated_intercept() {
        let m = LogisticModel {
            intercept: 30.0,
            coefficients: vec![],
            ridge: 0.0,
            iterations: 0,
            gradient_norm: 0.0,
            converged: true,
        };
        let p = m.predict(&DMatrix::zeros(1, 0)).unwrap();
        assert!(p[0] > 1.0 - 1e-9);
    }

    #[test]
    fn single_feature_at_mean_gives_half() {
        let m = LogisticModel {
            intercept: 0.0,
            coefficients: vec![1.0],
            ridge: 0.0,
            iterations: 0,
            gradient_norm: 0.0,
            converged: true,
        };
        let s = Standardizer {
            mean: vec![4.0],
            scale: vec![2.0],
        };
        let p = predict_proba(&m, &s, &DMatrix::from_element(1, 1, 4.0), &[0]).unwrap();
        assert_eq!(p, vec![0.5]);
    }

    #[test]
    fn predict_dimension_mismatch() {
        let (x, y) = random_problem(3, 20, 2);
        let sm = StageModel::fit(&x, &y, &[0, 1], 1.0).unwrap();
        assert!(predict_proba(&sm.model, &sm.standardizer, &x, &[0]).is_err());
        assert!(predict_proba(&sm.model, &sm.standardizer, &x, &[0, 5]).is_err());
    }

    #[test]
    fn first_component_of_axis_aligned_data() {
        let x = DMatrix::from_row_slice(4, 2, &[-2.0, 1.0, -1.0, 1.0, 1.0, 1.0, 2.0, 1.0]);
        let y = vec![false, false, true, true];
        let pipe = fit_pca_pipeline(&x, &y, 1, 1.0).unwrap();
        assert!((pipe.components[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(pipe.components[(1, 0)].abs() < 1e-12);
        // the second column is constant, so rank is 1
        assert!(fit_pca_pipeline(&x, &y, 2, 1.0).is_err());
    }

    #[test]
    fn components_are_orthonormal() {
        let (x, y) = random_problem(11, 60, 5);
        let pipe = fit_pca_pipeline(&x, &y, 3, 1.0).unwrap();
        let gram = pipe.components.transpose() * &pipe.components;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn full_rank_pca_matches_direct_fit() {
        for seed in 0..10 {
            let (x, y) = random_problem(200 + seed, 80, 4);
            let direct = StageModel::fit(&x, &y, &[0, 1, 2, 3], 1.0).unwrap();
            let pipe = fit_pca_pipeline(&x, &y, 4, 1.0).unwrap();
            let a = direct.predict(&x).unwrap();
            let b = pipe.predict(&x).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-6, "seed {seed}: {u} vs {v}");
            }
        }
    }
}
