use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::autodiff::Tensor;
use crate::train::median_bandwidth;

/// Default ridge of the linear probe.
pub const LINEAR_RIDGE: f64 = 1e-6;
/// Default ridge of the kernel probe.
pub const KERNEL_RIDGE: f64 = 1e-3;
/// Fraction of rows used for fitting; the rest are held out.
pub const TRAIN_FRACTION: f64 = 0.7;
/// Kernel fits use at most this many training rows.
const KERNEL_MAX_TRAIN: usize = 1500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Regressor {
    OlsRidge { ridge: f64 },
    KernelRidge { ridge: f64 },
}

impl Default for Regressor {
    fn default() -> Self {
        Regressor::OlsRidge {
            ridge: LINEAR_RIDGE,
        }
    }
}

/// Held-out fit quality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct R2Fit {
    /// Mean of `per_target`.
    pub r2: f64,
    pub per_target: Vec<f64>,
    pub train_rows: usize,
    pub test_rows: usize,
}

fn to_dmatrix(t: &Tensor, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), t.cols(), |i, j| t.get(rows[i], j))
}

fn split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64) * TRAIN_FRACTION).round() as usize;
    let test = idx.split_off(cut);
    (idx, test)
}

fn check(pred: &Tensor, target: &Tensor) -> Result<(), EvalError> {
    if pred.shape().len() != 2 || target.shape().len() != 2 || pred.rows() != target.rows() {
        return Err(EvalError::Dimension(format!(
            "predictors {:?} and targets {:?} must be matrices with equal rows",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.rows() < 10 * pred.cols().max(1) {
        return Err(EvalError::TooFewSamples {
            rows: pred.rows(),
            needed: 10 * pred.cols().max(1),
        });
    }
    if !pred.is_finite() || !target.is_finite() {
        return Err(EvalError::NonFinite);
    }
    Ok(())
}

/// Per-column `1 − SSE/SST` on held-out rows.
fn held_out_r2(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> Result<Vec<f64>, EvalError> {
    (0..y.ncols())
        .map(|j| {
            let col = y.column(j);
            let mean = col.mean();
            let sst: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let sse: f64 = col
                .iter()
                .zip(y_hat.column(j).iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            if !(sst > 0.0) {
                return Err(EvalError::DegenerateTarget(j));
            }
            Ok(1.0 - sse / sst)
        })
        .collect()
}

fn summarize(per_target: Vec<f64>, train: usize, test: usize) -> R2Fit {
    R2Fit {
        r2: per_target.iter().sum::<f64>() / per_target.len().max(1) as f64,
        per_target,
        train_rows: train,
        test_rows: test,
    }
}

/// Least squares with intercept and an (unpenalized-intercept) ridge,
/// fitted on a seeded 70% split and scored on the remaining 30%.
pub fn fit_linear_r2(
    pred: &Tensor,
    target: &Tensor,
    ridge: f64,
    split_seed: u64,
) -> Result<R2Fit, EvalError> {
    check(pred, target)?;
    let (train, test) = split(pred.rows(), split_seed);
    let p = pred.cols();
    let design = |rows: &[usize]| {
        let x = to_dmatrix(pred, rows);
        x.insert_column(p, 1.0)
    };
    let (xa, ya) = (design(&train), to_dmatrix(target, &train));
    let mut gram = xa.transpose() * &xa;
    for i in 0..p {
        gram[(i, i)] += ridge;
    }
    let rhs = xa.transpose() * &ya;
    let beta = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| gram.lu().solve(&rhs))
        .ok_or_else(|| EvalError::Singular("normal equations".into()))?;
    let y_hat = design(&test) * beta;
    let r2 = held_out_r2(&to_dmatrix(target, &test), &y_hat)?;
    Ok(summarize(r2, train.len(), test.len()))
}

/// RBF kernel ridge regression with a median-heuristic bandwidth, on the
/// same split as [`fit_linear_r2`]. Targets are centred on the training
/// mean.
pub fn fit_kernel_r2(
    pred: &Tensor,
    target: &Tensor,
    ridge: f64,
    split_seed: u64,
) -> Result<R2Fit, EvalError> {
    check(pred, target)?;
    let (mut train, test) = split(pred.rows(), split_seed);
    train.truncate(KERNEL_MAX_TRAIN);
    let xa = pred.select_rows(&train);
    let sigma = median_bandwidth(&xa);
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let kern = |a: &[f64], b: &[f64]| {
        (-gamma * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).exp()
    };
    let n = train.len();
    let mut k = DMatrix::from_fn(n, n, |i, j| kern(xa.row(i), xa.row(j)));
    for i in 0..n {
        k[(i, i)] += ridge * n as f64;
    }
    let ya = to_dmatrix(target, &train);
    let means: Vec<f64> = (0..ya.ncols()).map(|j| ya.column(j).mean()).collect();
    let centred = DMatrix::from_fn(n, ya.ncols(), |i, j| ya[(i, j)] - means[j]);
    let alpha = k
        .cholesky()
        .ok_or_else(|| EvalError::Singular("kernel matrix".into()))?
        .solve(&centred);
    let kt = DMatrix::from_fn(test.len(), n, |i, j| kern(pred.row(test[i]), xa.row(j)));
    let mut y_hat = kt * alpha;
    for j in 0..y_hat.ncols() {
        y_hat.column_mut(j).add_scalar_mut(means[j]);
    }
    let r2 = held_out_r2(&to_dmatrix(target, &test), &y_hat)?;
    Ok(summarize(r2, n, test.len()))
}

/// Dispatches on the regressor kind.
pub fn fit_r2(
    pred: &Tensor,
    target: &Tensor,
    regressor: Regressor,
    split_seed: u64,
) -> Result<R2Fit, EvalError> {
    match regressor {
        Regressor::OlsRidge { ridge } => fit_linear_r2(pred, target, ridge, split_seed),
        Regressor::KernelRidge { ridge } => fit_kernel_r2(pred, target, ridge, split_seed),
    }
}
