use nalgebra::{DMatrix, DVector};

use super::{LearnerModel, LearnerParams, LearnerSpec, LogisticParams};
use crate::dataset::sigmoid;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// L2 penalty on logistic weights; keeps the optimum finite under separation.
pub const LOGISTIC_PENALTY: f64 = 1e-6;

pub(super) fn affine(weights: &[f64], intercept: f64, x: &[f64]) -> f64 {
    intercept + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
}

/// Logistic link, kept strictly inside (0, 1).
pub(super) fn probability(z: f64) -> f64 {
    sigmoid(z).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

/// Validates sample weights and returns their total (`n` when absent).
fn check_weights(weights: Option<&[f64]>, n: usize) -> Result<f64> {
    match weights {
        None => Ok(n as f64),
        Some(w) => {
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Fit(
                    "sample weights must be finite and non-negative".into(),
                ));
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return Err(Error::Fit("sample weights sum to zero".into()));
            }
            Ok(total)
        }
    }
}

/// Minimum-norm solution of the symmetric system `a · x = b`; singular
/// values below `dim · ε · σ_max` are treated as zero.
fn solve_min_norm(a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let dim = a.nrows();
    if dim == 0 {
        return DVector::zeros(0);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DVector::zeros(dim);
    }
    let eps = smax * dim as f64 * f64::EPSILON;
    svd.solve(b, eps).expect("both SVD factors were computed")
}

/// Ridge regression with an unpenalized intercept:
/// minimizes `‖y − Xw − b‖² + λ‖w‖²`.
pub fn fit_ridge(x: &Matrix, y: &[f64], lambda: f64) -> Result<LearnerModel> {
    fit_weighted_ridge(x, y, None, lambda)
}

/// Weighted ridge: minimizes `Σ ω_i (y_i − x_i·w − b)² + λ‖w‖²` through the
/// normal equations on weighted-centered data. A singular system yields the
/// minimum-norm solution.
pub fn fit_weighted_ridge(
    x: &Matrix,
    y: &[f64],
    weights: Option<&[f64]>,
    lambda: f64,
) -> Result<LearnerModel> {
    let n = x.nrows();
    let d = x.ncols();
    if n == 0 || y.len() != n {
        return Err(Error::Fit(format!("{n} rows for {} targets", y.len())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Fit(format!("ridge lambda {lambda} is invalid")));
    }
    let total = check_weights(weights, n)?;
    let w_of = |i: usize| weights.map_or(1.0, |w| w[i]);

    let mut x_mean = vec![0.0; d];
    let mut y_mean = 0.0;
    for i in 0..n {
        let wi = w_of(i);
        for (m, v) in x_mean.iter_mut().zip(x.row(i)) {
            *m += wi * v;
        }
        y_mean += wi * y[i];
    }
    x_mean.iter_mut().for_each(|m| *m /= total);
    y_mean /= total;

    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    let mut centered = vec![0.0; d];
    for i in 0..n {
        let wi = w_of(i);
        if wi == 0.0 {
            continue;
        }
        for (c, (v, m)) in centered.iter_mut().zip(x.row(i).iter().zip(&x_mean)) {
            *c = v - m;
        }
        let yc = y[i] - y_mean;
        for a in 0..d {
            let ca = wi * centered[a];
            rhs[a] += ca * yc;
            for b in a..d {
                gram[(a, b)] += ca * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
        gram[(a, a)] += lambda;
    }
    let coef = solve_min_norm(gram, &rhs);
    let weights_out: Vec<f64> = coef.iter().copied().collect();
    let intercept = y_mean - affine(&weights_out, 0.0, &x_mean);
    Ok(LearnerModel {
        spec: LearnerSpec::ridge(lambda),
        params: LearnerParams::Linear {
            weights: weights_out,
            intercept,
        },
        train_dims: (n, d),
    })
}

/// Penalized logistic regression fitted by damped Newton iterations.
pub fn fit_logistic(x: &Matrix, y: &[f64], spec: &LearnerSpec) -> Result<LearnerModel> {
    let mut model = fit_logistic_weighted(x, y, None, &spec.logistic)?;
    model.spec = spec.clone();
    Ok(model)
}

/// Mean weighted log-likelihood minus `LOGISTIC_PENALTY/2 · ‖w‖²`.
fn objective(x: &Matrix, y: &[f64], wts: &[f64], total: f64, beta: &[f64]) -> f64 {
    let d = x.ncols();
    let mut ll = 0.0;
    for i in 0..x.nrows() {
        if wts[i] == 0.0 {
            continue;
        }
        let z = affine(&beta[..d], beta[d], x.row(i));
        // log σ(z) and log(1 − σ(z)) without overflow
        let log1pexp = if z > 0.0 {
            z + (-z).exp().ln_1p()
        } else {
            z.exp().ln_1p()
        };
        ll += wts[i] * (y[i] * z - log1pexp);
    }
    let pen: f64 = beta[..d].iter().map(|b| b * b).sum();
    ll / total - 0.5 * LOGISTIC_PENALTY * pen
}

pub(super) fn fit_logistic_weighted(
    x: &Matrix,
    y: &[f64],
    weights: Option<&[f64]>,
    params: &LogisticParams,
) -> Result<LearnerModel> {
    let n = x.nrows();
    let d = x.ncols();
    if n == 0 || y.len() != n {
        return Err(Error::Fit(format!("{n} rows for {} targets", y.len())));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Fit("logistic regression needs 0/1 targets".into()));
    }
    check_weights(weights, n)?;
    let wts: Vec<f64> = weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
    let total: f64 = wts.iter().sum();
    let has = |class: f64| (0..n).any(|i| wts[i] > 0.0 && y[i] == class);
    if !has(0.0) || !has(1.0) {
        return Err(Error::Fit(
            "outcome has a single class; handle this degenerate arm before fitting a logistic model"
                .into(),
        ));
    }

    let p = d + 1;
    let mut beta = vec![0.0; p];
    let mut current = objective(x, y, &wts, total, &beta);
    for _ in 0..params.max_iter {
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        for i in 0..n {
            if wts[i] == 0.0 {
                continue;
            }
            let row = x.row(i);
            let prob = sigmoid(affine(&beta[..d], beta[d], row));
            let r = wts[i] * (y[i] - prob) / total;
            let s = wts[i] * prob * (1.0 - prob) / total;
            for a in 0..p {
                let xa = if a < d { row[a] } else { 1.0 };
                grad[a] += r * xa;
                for b in a..p {
                    let xb = if b < d { row[b] } else { 1.0 };
                    hess[(a, b)] += s * xa * xb;
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }
        for a in 0..d {
            grad[a] -= LOGISTIC_PENALTY * beta[a];
            hess[(a, a)] += LOGISTIC_PENALTY;
        }
        if grad.amax() < params.tol {
            break;
        }
        let step = solve_min_norm(hess, &grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            let value = objective(x, y, &wts, total, &trial);
            if value >= current {
                beta = trial;
                current = value;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(LearnerModel {
        spec: LearnerSpec::logistic(),
        params: LearnerParams::Logistic {
            weights: beta[..d].to_vec(),
            intercept: beta[d],
        },
        train_dims: (n, d),
    })
}
