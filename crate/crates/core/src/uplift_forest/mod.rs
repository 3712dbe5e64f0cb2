//! Uplift trees and forests for binary outcomes.
//!
//! Splits maximize the gain in divergence between each arm's positive rate
//! and the control positive rate. Three divergences are supported: KL,
//! squared Euclidean and chi-squared. Multiple arms are handled by summing
//! the per-arm divergences against control.

mod tree;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ExperimentFrame;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

pub(crate) use tree::fit_tree_with_rng;
pub use tree::{fit_uplift_tree, split_gain, LeafStats, NodeStats, UpliftTree, UpliftTreeNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Kl,
    Euclidean,
    ChiSquared,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Kl, Criterion::Euclidean, Criterion::ChiSquared];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Kl => "kl",
            Criterion::Euclidean => "euclidean",
            Criterion::ChiSquared => "chi_squared",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split criterion `{s}`")))
    }
}

pub const DEFAULT_DELTA: f64 = 1e-6;

/// Divergence between the Bernoulli distributions with positive rates `p`
/// (treated) and `q` (control). KL and chi-squared clamp both rates into
/// `[delta, 1 - delta]` first.
pub fn divergence_with_delta(p: f64, q: f64, kind: Criterion, delta: f64) -> f64 {
    let value = match kind {
        Criterion::Euclidean => 2.0 * (p - q) * (p - q),
        Criterion::Kl => {
            let p = p.clamp(delta, 1.0 - delta);
            let q = q.clamp(delta, 1.0 - delta);
            p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
        }
        Criterion::ChiSquared => {
            let p = p.clamp(delta, 1.0 - delta);
            let q = q.clamp(delta, 1.0 - delta);
            let d2 = (p - q) * (p - q);
            d2 / q + d2 / (1.0 - q)
        }
    };
    value.max(0.0)
}

/// [`divergence_with_delta`] with the default smoothing `delta = 1e-6`.
pub fn divergence(p: f64, q: f64, kind: Criterion) -> f64 {
    divergence_with_delta(p, q, kind, DEFAULT_DELTA)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftForestSpec {
    pub criterion: Criterion,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf_per_group: usize,
    /// Fraction of features examined per split; `None` means `sqrt(d)/d`.
    pub feature_subsample: Option<f64>,
    pub bootstrap: bool,
    pub delta: f64,
}

impl Default for UpliftForestSpec {
    fn default() -> Self {
        Self {
            criterion: Criterion::Kl,
            n_trees: 100,
            max_depth: 5,
            min_leaf_per_group: 10,
            feature_subsample: None,
            bootstrap: true,
            delta: DEFAULT_DELTA,
        }
    }
}

impl UpliftForestSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 0.1) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 0.1), got {}",
                self.delta
            )));
        }
        if self.n_trees == 0 || self.max_depth == 0 || self.min_leaf_per_group == 0 {
            return Err(Error::Config(
                "n_trees, max_depth and min_leaf_per_group must be positive".into(),
            ));
        }
        if let Some(f) = self.feature_subsample {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "feature_subsample must lie in (0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }

    pub fn subsample_fraction(&self, d: usize) -> f64 {
        self.feature_subsample
            .unwrap_or_else(|| (d as f64).sqrt() / d as f64)
    }
}

/// Ensemble of uplift trees; predictions average the per-arm leaf uplifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftForest {
    pub spec: UpliftForestSpec,
    pub n_features: usize,
    pub n_arms: usize,
    pub trees: Vec<UpliftTreeNode>,
}

/// Grows `spec.n_trees` trees, each on an arm-stratified bootstrap resample
/// (when enabled) and with its own seed stream `(seed, tree index)`.
pub fn fit_uplift_forest(
    frame: &ExperimentFrame,
    spec: &UpliftForestSpec,
    seed: u64,
) -> Result<UpliftForest> {
    spec.validate()?;
    tree::check_frame(frame, spec)?;
    let groups: Vec<Vec<usize>> = (0..=frame.n_arms()).map(|g| frame.rows_in_arm(g)).collect();
    let trees = (0..spec.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, t as u64);
            if spec.bootstrap {
                let sample = tree::stratified_bootstrap(&groups, &mut rng);
                let resampled = frame.select_rows(&sample)?;
                fit_tree_with_rng(&resampled, spec, &mut rng).map(|t| t.root)
            } else {
                fit_tree_with_rng(frame, spec, &mut rng).map(|t| t.root)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UpliftForest {
        spec: spec.clone(),
        n_features: frame.d(),
        n_arms: frame.n_arms(),
        trees,
    })
}

impl UpliftForest {
    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_arms];
        for t in &self.trees {
            for (a, u) in acc.iter_mut().zip(t.route(x).uplift.iter()) {
                *a += u;
            }
        }
        let m = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        acc
    }
}

/// Per-arm uplift predictions, one column per arm.
pub fn predict_uplift(model: &UpliftForest, x: &Matrix) -> Result<Matrix> {
    if x.ncols() != model.n_features {
        return Err(Error::Dimension {
            expected: model.n_features,
            got: x.ncols(),
        });
    }
    let mut out = Matrix::zeros(x.nrows(), model.n_arms);
    for (i, row) in x.rows_iter().enumerate() {
        for (k, v) in model.predict_row(row).into_iter().enumerate() {
            out.set(i, k, v);
        }
    }
    Ok(out)
}
