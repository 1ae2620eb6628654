//! Exact GP posterior for classification posed as regression on one-hot
//! targets, with escalating diagonal jitter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::Scalar;

pub const TARGET_ON: f64 = 0.9;
pub const TARGET_OFF: f64 = -0.1;

/// Most times the noise may be multiplied by 10 before giving up.
pub const MAX_ESCALATIONS: u32 = 10;

/// One row per label: `TARGET_ON` at the label, `TARGET_OFF` elsewhere.
pub fn encode_targets<T: Scalar>(labels: &[usize], n_classes: usize) -> Result<Matrix<T>> {
    if n_classes == 0 {
        return Err(Error::usage("need at least one class"));
    }
    if let Some(k) = labels.iter().position(|&l| l >= n_classes) {
        return Err(Error::usage(format!(
            "label {} at row {k} is outside 0..{n_classes}",
            labels[k]
        )));
    }
    let (on, off) = (T::of(TARGET_ON), T::of(TARGET_OFF));
    Ok(Matrix::from_fn(labels.len(), n_classes, |i, c| if labels[i] == c { on } else { off }))
}

/// Cholesky factor of `K + noise_used * I`.
#[derive(Debug, Clone)]
pub struct JitteredCholesky<T> {
    pub factor: Cholesky<T>,
    pub noise_used: f64,
    pub escalations: u32,
}

/// Noise level after `k` escalations.
pub fn escalated_noise(noise0: f64, k: u32) -> f64 {
    noise0 * 10f64.powi(k as i32)
}

/// Factor `k_train + noise * I`, starting from `noise0` and multiplying the
/// noise by 10 after each failure, at most [`MAX_ESCALATIONS`] times.
///
/// A pivot fails when it does not exceed `PIVOT_RTOL` times the largest
/// diagonal entry of the shifted matrix (see [`crate::linalg::PIVOT_RTOL`]).
/// With `noise0 = 0` escalation cannot help, so a failure at the first
/// attempt goes straight to the cap.
pub fn solve_with_jitter<T: Scalar>(k_train: &Matrix<T>, noise0: f64) -> Result<JitteredCholesky<T>> {
    if !k_train.is_square() {
        return Err(Error::usage(format!("training kernel is {}x{}", k_train.nrows(), k_train.ncols())));
    }
    if !k_train.all_finite() {
        return Err(Error::usage("training kernel has non-finite entries"));
    }
    if !(noise0.is_finite() && noise0 >= 0.0) {
        return Err(Error::usage(format!("noise must be finite and nonnegative, got {noise0}")));
    }
    for k in 0..=MAX_ESCALATIONS {
        let noise = escalated_noise(noise0, k);
        if let Ok(factor) = Cholesky::factor_shifted(k_train, T::of(noise)) {
            return Ok(JitteredCholesky { factor, noise_used: noise, escalations: k });
        }
        if noise0 == 0.0 {
            break;
        }
    }
    Err(Error::Conditioning { noise: escalated_noise(noise0, MAX_ESCALATIONS), escalations: MAX_ESCALATIONS })
}

/// Predictive mean (and optionally the shared covariance) on a test batch.
#[derive(Debug, Clone)]
pub struct PosteriorResult<T> {
    pub mean: Matrix<T>,
    pub cov: Option<Matrix<T>>,
    pub noise_used: f64,
    pub escalations: u32,
}

fn check_cross<T: Scalar>(k_train: &Matrix<T>, k_cross: &Matrix<T>) -> Result<()> {
    if k_cross.ncols() != k_train.nrows() {
        return Err(Error::usage(format!(
            "cross kernel has {} columns for {} training points",
            k_cross.ncols(),
            k_train.nrows()
        )));
    }
    Ok(())
}

/// `K_cross (K_train + noise I)^{-1} targets` through the jittered factor.
pub fn posterior_mean<T: Scalar>(
    k_train: &Matrix<T>,
    k_cross: &Matrix<T>,
    targets: &Matrix<T>,
    noise0: f64,
) -> Result<PosteriorResult<T>> {
    posterior(k_train, k_cross, targets, None, noise0)
}

/// Mean and, when `k_test` is given, `K_test - K_cross (K_train + noise I)^{-1} K_cross^T`,
/// both from one factorization. The covariance is symmetrized as `(S + S^T) / 2`.
pub fn posterior<T: Scalar>(
    k_train: &Matrix<T>,
    k_cross: &Matrix<T>,
    targets: &Matrix<T>,
    k_test: Option<&Matrix<T>>,
    noise0: f64,
) -> Result<PosteriorResult<T>> {
    check_cross(k_train, k_cross)?;
    if targets.nrows() != k_train.nrows() {
        return Err(Error::usage(format!(
            "{} target rows for {} training points",
            targets.nrows(),
            k_train.nrows()
        )));
    }
    let jc = solve_with_jitter(k_train, noise0)?;
    let alpha = jc.factor.solve(targets);
    let mean = k_cross.matmul(&alpha)?;
    let cov = match k_test {
        Some(kt) => Some(covariance_from(&jc, k_cross, kt)?),
        None => None,
    };
    Ok(PosteriorResult { mean, cov, noise_used: jc.noise_used, escalations: jc.escalations })
}

pub fn posterior_cov<T: Scalar>(
    k_train: &Matrix<T>,
    k_cross: &Matrix<T>,
    k_test: &Matrix<T>,
    noise0: f64,
) -> Result<Matrix<T>> {
    check_cross(k_train, k_cross)?;
    let jc = solve_with_jitter(k_train, noise0)?;
    covariance_from(&jc, k_cross, k_test)
}

fn covariance_from<T: Scalar>(jc: &JitteredCholesky<T>, k_cross: &Matrix<T>, k_test: &Matrix<T>) -> Result<Matrix<T>> {
    let m = k_cross.nrows();
    if k_test.shape() != (m, m) {
        return Err(Error::usage(format!("test kernel must be {m}x{m}")));
    }
    // V = L^{-1} K_cross^T, so the subtracted term is V^T V
    let v = jc.factor.forward_solve(&k_cross.transpose());
    let vt = v.transpose();
    let mut s = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let q = crate::linalg::dot(vt.row(i), vt.row(j));
            s[(i, j)] = k_test[(i, j)] - q;
        }
    }
    let half = T::of(0.5);
    for i in 0..m {
        for j in 0..i {
            let avg = (s[(i, j)] + s[(j, i)]) * half;
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    Ok(s)
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict_classes<T: Scalar>(mean: &Matrix<T>) -> Vec<usize> {
    mean.rows_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::usage(format!(
            "{} predictions for {} labels (need equal, nonzero)",
            pred.len(),
            truth.len()
        )));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Accuracy restricted to each true class; `None` for classes absent from `truth`.
pub fn per_class_accuracy(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Vec<Option<f64>>> {
    accuracy(pred, truth)?;
    let mut hits = vec![0usize; n_classes];
    let mut totals = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if t >= n_classes {
            return Err(Error::usage(format!("label {t} outside 0..{n_classes}")));
        }
        totals[t] += 1;
        hits[t] += usize::from(p == t);
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect())
}

/// Summary of one inference run, the JSON prediction report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub n_train: usize,
    pub n_test: usize,
    pub params: crate::kernel::KernelParams,
    pub noise_used: f64,
    pub escalations: u32,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub wall_time_seconds: f64,
}
