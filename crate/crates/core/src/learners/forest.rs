use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ForestParams, LearnerModel, LearnerParams, LearnerSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// CART regression tree node. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<RegressionNode>,
        right: Box<RegressionNode>,
    },
}

impl RegressionNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                RegressionNode::Leaf { value } => return *value,
                RegressionNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            RegressionNode::Leaf { .. } => 0,
            RegressionNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// Bagged CART regression forest with variance-reduction splits.
pub fn fit_regression_forest(
    x: &Matrix,
    y: &[f64],
    spec: &LearnerSpec,
    seed: u64,
) -> Result<LearnerModel> {
    let mut model = fit_weighted_forest(x, y, None, &spec.forest, seed)?;
    model.spec = spec.clone();
    Ok(model)
}

/// Number of features examined per split.
pub(crate) fn subsample_count(d: usize, fraction: f64) -> usize {
    ((fraction * d as f64).round() as usize).clamp(1, d)
}

/// Midpoint between two adjacent distinct sorted values, guaranteed to
/// separate them under the `x <= t` rule.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo + (hi - lo) / 2.0;
    if t >= hi {
        lo
    } else {
        t
    }
}

/// Picks the features to examine at one split, in ascending order.
pub(crate) fn choose_features(d: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if m >= d {
        return (0..d).collect();
    }
    let mut f = index::sample(rng, d, m).into_vec();
    f.sort_unstable();
    f
}

pub(super) fn fit_weighted_forest(
    x: &Matrix,
    y: &[f64],
    weights: Option<&[f64]>,
    params: &ForestParams,
    seed: u64,
) -> Result<LearnerModel> {
    let n = x.nrows();
    if n < 2 * params.min_leaf {
        return Err(Error::Fit(format!(
            "{n} rows is too few for min_leaf = {}; need at least {}",
            params.min_leaf,
            2 * params.min_leaf
        )));
    }
    if let Some(w) = weights {
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Fit(
                "sample weights must be non-negative with a positive sum".into(),
            ));
        }
    }
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, t as u64);
            let counts: Vec<u32> = if params.bootstrap {
                let mut c = vec![0u32; n];
                for _ in 0..n {
                    c[rng.random_range(0..n)] += 1;
                }
                c
            } else {
                vec![1; n]
            };
            let builder = TreeBuilder {
                x,
                y,
                weights,
                counts: &counts,
                params,
                n_sub: subsample_count(x.ncols(), params.feature_subsample),
            };
            let rows: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
            builder.build(rows, 0, &mut rng)
        })
        .collect();
    Ok(LearnerModel {
        spec: LearnerSpec::forest(params.clone()),
        params: LearnerParams::Forest { trees },
        train_dims: (n, x.ncols()),
    })
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    weights: Option<&'a [f64]>,
    counts: &'a [u32],
    params: &'a ForestParams,
    n_sub: usize,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_> {
    fn weight(&self, i: usize) -> f64 {
        f64::from(self.counts[i]) * self.weights.map_or(1.0, |w| w[i])
    }

    fn build(&self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> RegressionNode {
        let (mut sw, mut swy) = (0.0, 0.0);
        for &i in &rows {
            let w = self.weight(i);
            sw += w;
            swy += w * self.y[i];
        }
        let mean = if sw > 0.0 {
            swy / sw
        } else {
            rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64
        };
        let count: u64 = rows.iter().map(|&i| u64::from(self.counts[i])).sum();
        if depth >= self.params.max_depth || count < 2 * self.params.min_leaf as u64 || sw <= 0.0 {
            return RegressionNode::Leaf { value: mean };
        }
        let features = choose_features(self.x.ncols(), self.n_sub, rng);
        let parent_sse: f64 = rows
            .iter()
            .map(|&i| self.weight(i) * (self.y[i] - mean).powi(2))
            .sum();
        let min_gain = 1e-12 * parent_sse + 1e-20 * sw * (1.0 + mean * mean);

        let mut best: Option<Best> = None;
        let mut sorted = rows.clone();
        for &f in &features {
            sorted.sort_by(|&a, &b| {
                self.x
                    .get(a, f)
                    .total_cmp(&self.x.get(b, f))
                    .then(a.cmp(&b))
            });
            let (mut lw, mut lwy, mut lc) = (0.0, 0.0, 0u64);
            for p in 0..sorted.len() - 1 {
                let i = sorted[p];
                let w = self.weight(i);
                lw += w;
                lwy += w * self.y[i];
                lc += u64::from(self.counts[i]);
                let lo = self.x.get(i, f);
                let hi = self.x.get(sorted[p + 1], f);
                if lo == hi {
                    continue;
                }
                let rc = count - lc;
                if lc < self.params.min_leaf as u64 || rc < self.params.min_leaf as u64 {
                    continue;
                }
                let rw = sw - lw;
                if lw <= 0.0 || rw <= 0.0 {
                    continue;
                }
                let diff = lwy / lw - (swy - lwy) / rw;
                let gain = lw * rw / sw * diff * diff;
                if gain > min_gain && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Best {
                        gain,
                        feature: f,
                        threshold: midpoint(lo, hi),
                    });
                }
            }
        }
        match best {
            None => RegressionNode::Leaf { value: mean },
            Some(b) => {
                let (left, right): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&i| self.x.get(i, b.feature) <= b.threshold);
                RegressionNode::Split {
                    feature: b.feature,
                    threshold: b.threshold,
                    left: Box::new(self.build(left, depth + 1, rng)),
                    right: Box::new(self.build(right, depth + 1, rng)),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n_trees: usize, max_depth: usize, min_leaf: usize, bootstrap: bool) -> ForestParams {
        ForestParams {
            n_trees,
            max_depth,
            min_leaf,
            feature_subsample: 1.0,
            bootstrap,
        }
    }

    fn grid(n: usize) -> Matrix {
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|i| [i as f64 / n as f64 - 0.5, ((i * 37) % n) as f64])
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn constant_target_predicts_constant() {
        let x = grid(50);
        let m = fit_regression_forest(
            &x,
            &[0.1; 50],
            &LearnerSpec::forest(params(10, 6, 2, true)),
            3,
        )
        .unwrap();
        for p in m.predict(&x).unwrap() {
            assert!((p - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn single_deep_tree_interpolates() {
        let x = grid(40);
        let y: Vec<f64> = (0..40).map(|i| ((i * 13) % 7) as f64 - 2.5).collect();
        let spec = LearnerSpec::forest(params(1, usize::MAX, 1, false));
        let m = fit_regression_forest(&x, &y, &spec, 0).unwrap();
        assert_eq!(m.predict(&x).unwrap(), y);
    }

    #[test]
    fn step_function_beats_variance() {
        let n = 200;
        let rows: Vec<[f64; 1]> = (0..n).map(|i| [(i as f64 - 99.5) / 50.0]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| if r[0] > 0.0 { 1.0 } else { 0.0 })
            .collect();
        let m = fit_regression_forest(&x, &y, &LearnerSpec::forest(ForestParams::default()), 1)
            .unwrap();
        let pred = m.predict(&x).unwrap();
        let mse: f64 = pred
            .iter()
            .zip(&y)
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / n as f64;
        let mean = y.iter().sum::<f64>() / n as f64;
        let var: f64 = y.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mse < var, "mse {mse} var {var}");
        assert!(mse < 0.01);
    }

    #[test]
    fn too_few_rows() {
        let x = grid(9);
        let spec = LearnerSpec::forest(ForestParams::default());
        assert!(matches!(
            fit_regression_forest(&x, &[0.0; 9], &spec, 0),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let x = grid(120);
        let y: Vec<f64> = (0..120).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut spec = LearnerSpec::forest(params(16, 5, 3, true));
        spec.forest.feature_subsample = 0.5;
        let fit_with = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fit_regression_forest(&x, &y, &spec, 11).unwrap())
        };
        let a = serde_json::to_string(&fit_with(1)).unwrap();
        let b = serde_json::to_string(&fit_with(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn leaves_respect_min_leaf() {
        fn check(node: &RegressionNode, x: &Matrix, rows: &[usize], min_leaf: usize) {
            match node {
                RegressionNode::Leaf { .. } => assert!(rows.len() >= min_leaf),
                RegressionNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let (l, r): (Vec<usize>, Vec<usize>) = rows
                        .iter()
                        .partition(|&&i| x.get(i, *feature) <= *threshold);
                    check(left, x, &l, min_leaf);
                    check(right, x, &r, min_leaf);
                }
            }
        }
        let x = grid(100);
        let y: Vec<f64> = (0..100).map(|i| (i % 10) as f64).collect();
        let m =
            fit_regression_forest(&x, &y, &LearnerSpec::forest(params(3, 8, 7, false)), 2).unwrap();
        let LearnerParams::Forest { trees } = &m.params else {
            unreachable!()
        };
        let all: Vec<usize> = (0..100).collect();
        for t in trees {
            check(t, &x, &all, 7);
        }
    }

    #[test]
    fn weighted_leaf_means() {
        // one feature, a single forced leaf: prediction is the weighted mean
        let x = Matrix::from_rows(&[[0.0], [0.0], [0.0], [0.0]]).unwrap();
        let y = [1.0, 2.0, 3.0, 4.0];
        let w = [1.0, 1.0, 1.0, 5.0];
        let m = fit_weighted_forest(&x, &y, Some(&w), &params(1, 3, 1, false), 0).unwrap();
        assert!((m.predict_row(&[0.0]) - 26.0 / 8.0).abs() < 1e-15);
    }
}
