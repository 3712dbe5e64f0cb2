use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::propensity::estimate_propensity;
use super::{check_clip, fit_cate, predict_cate, CateModel};
use crate::dataset::{naive_ate, ExperimentFrame};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_BOOTSTRAP: usize = 200;
const MIN_BOOTSTRAP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AteMethod {
    Naive,
    Ipw,
    CateMean,
}

/// Average effect of one arm with a percentile-bootstrap interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteReport {
    pub arm: String,
    pub method: AteMethod,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Bootstrap draws behind the interval.
    pub b: usize,
}

fn check_draws(b: usize) -> Result<()> {
    if b < MIN_BOOTSTRAP {
        return Err(Error::Config(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP} draws, got {b}"
        )));
    }
    Ok(())
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 2.5/97.5 percentile interval, widened if needed so it contains `estimate`.
fn interval(mut draws: Vec<f64>, estimate: f64) -> (f64, f64) {
    draws.sort_by(f64::total_cmp);
    let lo = percentile(&draws, 0.025).min(estimate);
    let hi = percentile(&draws, 0.975).max(estimate);
    (lo, hi)
}

/// Resamples every arm of `frame` with replacement, keeping arm sizes.
fn stratified_resample(frame: &ExperimentFrame, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx = Vec::with_capacity(frame.n());
    for g in 0..=frame.n_arms() {
        let rows = frame.rows_in_arm(g);
        for _ in 0..rows.len() {
            idx.push(rows[rng.random_range(0..rows.len())]);
        }
    }
    idx
}

/// Runs `stat` on `b` stratified resamples in parallel; draw `j` uses the
/// seed stream `(seed, j)`, so results do not depend on the thread count.
fn bootstrap<T, F>(frame: &ExperimentFrame, b: usize, seed: u64, stat: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&ExperimentFrame, u64) -> Result<T> + Sync,
{
    (0..b)
        .into_par_iter()
        .map(|j| {
            let draw_seed = rng::derive_seed(seed, j as u64);
            let mut rng = rng::rng_from(draw_seed);
            let sample = frame.select_rows(&stratified_resample(frame, &mut rng))?;
            stat(&sample, draw_seed)
        })
        .collect()
}

fn column_means(model: &CateModel, frame: &ExperimentFrame) -> Result<Vec<f64>> {
    let tau = predict_cate(model, frame.features())?;
    let n = tau.nrows() as f64;
    Ok((0..tau.ncols())
        .map(|k| tau.column(k).iter().sum::<f64>() / n)
        .collect())
}

/// Mean predicted effect per arm; the interval refits the model on each
/// bootstrap resample and recomputes the mean there.
pub fn ate_from_cate(
    model: &CateModel,
    frame: &ExperimentFrame,
    b: usize,
    seed: u64,
) -> Result<Vec<AteReport>> {
    check_draws(b)?;
    let estimates = column_means(model, frame)?;
    let draws = bootstrap(frame, b, seed, |sample, s| {
        let refit = fit_cate(sample, &model.config, s)?;
        column_means(&refit, sample)
    })?;
    Ok(estimates
        .iter()
        .enumerate()
        .map(|(k, &estimate)| {
            let (ci_low, ci_high) = interval(draws.iter().map(|d| d[k]).collect(), estimate);
            AteReport {
                arm: model.arm_labels[k + 1].clone(),
                method: AteMethod::CateMean,
                estimate,
                ci_low,
                ci_high,
                b,
            }
        })
        .collect())
}

fn ipw_point(frame: &ExperimentFrame, arm: usize, eps: f64) -> Result<f64> {
    let e = estimate_propensity(frame, arm, eps)?;
    let (pair, _) = frame.arm_pair(arm)?;
    let total: f64 = pair
        .treatment()
        .iter()
        .zip(pair.outcome())
        .zip(&e)
        .map(|((&w, &y), &p)| if w == 1 { y / p } else { -y / (1.0 - p) })
        .sum();
    Ok(total / pair.n() as f64)
}

/// Inverse-propensity-weighted effect of `arm` over `arm ∪ control` rows.
/// The propensity model is refitted on every bootstrap draw.
pub fn ipw_ate(
    frame: &ExperimentFrame,
    arm: usize,
    eps: f64,
    b: usize,
    seed: u64,
) -> Result<AteReport> {
    check_clip(eps)?;
    check_draws(b)?;
    let (pair, _) = frame
        .arm_pair(arm)
        .map_err(|e| Error::Propensity(e.to_string()))?;
    let estimate = ipw_point(&pair, 1, eps)?;
    let draws = bootstrap(&pair, b, seed, |sample, _| ipw_point(sample, 1, eps))?;
    let (ci_low, ci_high) = interval(draws, estimate);
    Ok(AteReport {
        arm: frame.arm_labels()[arm].clone(),
        method: AteMethod::Ipw,
        estimate,
        ci_low,
        ci_high,
        b,
    })
}

/// Difference in means with a stratified-bootstrap interval.
pub fn naive_report(frame: &ExperimentFrame, arm: usize, b: usize, seed: u64) -> Result<AteReport> {
    check_draws(b)?;
    let (pair, _) = frame.arm_pair(arm)?;
    let estimate = naive_ate(&pair, 1)?;
    let draws = bootstrap(&pair, b, seed, |sample, _| naive_ate(sample, 1))?;
    let (ci_low, ci_high) = interval(draws, estimate);
    Ok(AteReport {
        arm: frame.arm_labels()[arm].clone(),
        method: AteMethod::Naive,
        estimate,
        ci_low,
        ci_high,
        b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::OutcomeKind;
    use crate::matrix::Matrix;

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_eq!(percentile(&v, 0.125), 1.5);
        assert_eq!(percentile(&v, 1.0), 5.0);
    }

    #[test]
    fn ipw_with_half_propensity_is_naive() {
        // 4 rows, two per group: mean_i[2·w·y − 2·(1−w)·y] = ȳ_T − ȳ_C
        let f = ExperimentFrame::from_parts(
            Matrix::from_rows(&[[0.1], [0.2], [0.3], [0.4]]).unwrap(),
            vec![1, 1, 0, 0],
            vec![3.0, 5.0, 1.0, 2.0],
            OutcomeKind::Continuous,
        )
        .unwrap()
        .with_propensity(Some(vec![0.5; 4]))
        .unwrap();
        let r = ipw_ate(&f, 1, 0.01, 50, 1).unwrap();
        assert!((r.estimate - 2.5).abs() < 1e-15);
        assert_eq!(r.estimate, naive_ate(&f, 1).unwrap());
        assert!(r.ci_low <= r.estimate && r.estimate <= r.ci_high);
    }

    #[test]
    fn ipw_zero_outcomes() {
        let f = ExperimentFrame::from_parts(
            Matrix::from_rows(&[[0.1], [0.9], [0.3], [0.4], [0.5], [0.2]]).unwrap(),
            vec![1, 1, 0, 0, 1, 0],
            vec![0.0; 6],
            OutcomeKind::Binary,
        )
        .unwrap();
        let r = ipw_ate(&f, 1, 0.01, 20, 0).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert_eq!((r.ci_low, r.ci_high), (0.0, 0.0));
    }

    #[test]
    fn too_few_draws() {
        let f = ExperimentFrame::from_parts(
            Matrix::from_rows(&[[0.1], [0.2]]).unwrap(),
            vec![1, 0],
            vec![1.0, 0.0],
            OutcomeKind::Binary,
        )
        .unwrap();
        assert!(matches!(naive_report(&f, 1, 9, 0), Err(Error::Config(_))));
    }
}
