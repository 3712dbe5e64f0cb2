use super::{predict_cate, CateModel};
use crate::dataset::ExperimentFrame;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Best arm per row from an `m × K` effect matrix: `argmax_k τ̂_k`, or
/// control (`0`) when that maximum is `<= threshold`. Ties go to the lowest
/// arm index. Arms are reported 1-based.
pub fn recommend_from_effects(effects: &Matrix, threshold: f64) -> Vec<usize> {
    effects
        .rows_iter()
        .map(|row| {
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            if row.is_empty() || row[best] <= threshold {
                0
            } else {
                best + 1
            }
        })
        .collect()
}

pub fn recommend(model: &CateModel, x: &Matrix, threshold: f64) -> Result<Vec<usize>> {
    Ok(recommend_from_effects(&predict_cate(model, x)?, threshold))
}

/// Indices of the top `⌈fraction·n⌉` scores, highest first; equal scores
/// keep index order.
pub fn top_k_by_score(scores: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::Estimation(
            "cannot target an empty population".into(),
        ));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = scores.len();
    // the small slack keeps e.g. 0.3·10 from rounding up to 4
    let k = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Units ranked by their best-arm predicted uplift; returns the top fraction.
pub fn top_k_targeting(
    model: &CateModel,
    frame: &ExperimentFrame,
    fraction: f64,
) -> Result<Vec<usize>> {
    let tau = predict_cate(model, frame.features())?;
    let scores: Vec<f64> = tau
        .rows_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    top_k_by_score(&scores, fraction)
}
