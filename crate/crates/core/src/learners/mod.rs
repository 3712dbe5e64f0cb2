//! Supervised base learners behind one fit/predict contract.
//!
//! Meta-learners only ever see a [`LearnerSpec`] and a fitted
//! [`LearnerModel`]; which kind sits behind them is a configuration choice.

mod forest;
mod linear;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub(crate) use forest::{choose_features, midpoint, subsample_count};
pub use forest::{fit_regression_forest, RegressionNode};
pub use linear::{fit_logistic, fit_ridge, fit_weighted_ridge, LOGISTIC_PENALTY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Ridge,
    Logistic,
    RegressionForest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features examined at each split.
    pub feature_subsample: f64,
    /// Draw a bootstrap resample per tree.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 6,
            min_leaf: 5,
            feature_subsample: 1.0,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub ridge_lambda: f64,
    pub forest: ForestParams,
    pub logistic: LogisticParams,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self::ridge(1e-3)
    }
}

impl LearnerSpec {
    pub fn ridge(lambda: f64) -> Self {
        Self {
            kind: LearnerKind::Ridge,
            ridge_lambda: lambda,
            forest: ForestParams::default(),
            logistic: LogisticParams::default(),
        }
    }

    pub fn logistic() -> Self {
        Self {
            kind: LearnerKind::Logistic,
            ..Self::default()
        }
    }

    pub fn forest(params: ForestParams) -> Self {
        Self {
            kind: LearnerKind::RegressionForest,
            forest: params,
            ..Self::default()
        }
    }

    /// Same hyperparameters with a different kind.
    pub fn with_kind(&self, kind: LearnerKind) -> Self {
        Self {
            kind,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::Config(format!(
                "ridge_lambda must be a finite non-negative number, got {}",
                self.ridge_lambda
            )));
        }
        let f = &self.forest;
        if f.n_trees == 0 || f.max_depth == 0 || f.min_leaf == 0 {
            return Err(Error::Config(
                "forest n_trees, max_depth and min_leaf must all be at least 1".into(),
            ));
        }
        if !(f.feature_subsample > 0.0 && f.feature_subsample <= 1.0) {
            return Err(Error::Config(format!(
                "feature_subsample must lie in (0, 1], got {}",
                f.feature_subsample
            )));
        }
        if self.logistic.max_iter == 0 || self.logistic.tol.is_nan() || self.logistic.tol <= 0.0 {
            return Err(Error::Config(
                "logistic max_iter and tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LearnerParams {
    Linear { weights: Vec<f64>, intercept: f64 },
    Logistic { weights: Vec<f64>, intercept: f64 },
    Forest { trees: Vec<RegressionNode> },
}

/// A fitted base learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerModel {
    pub spec: LearnerSpec,
    pub params: LearnerParams,
    /// `(n, d)` of the training data.
    pub train_dims: (usize, usize),
}

impl LearnerModel {
    /// Affine model `x·weights + intercept`, mostly for tests and injection.
    pub fn linear(weights: Vec<f64>, intercept: f64) -> Self {
        let d = weights.len();
        Self {
            spec: LearnerSpec::ridge(0.0),
            params: LearnerParams::Linear { weights, intercept },
            train_dims: (0, d),
        }
    }

    pub fn n_features(&self) -> usize {
        self.train_dims.1
    }

    /// Conditional-mean estimate for one row; probabilities for logistic models.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match &self.params {
            LearnerParams::Linear { weights, intercept } => linear::affine(weights, *intercept, x),
            LearnerParams::Logistic { weights, intercept } => {
                linear::probability(linear::affine(weights, *intercept, x))
            }
            LearnerParams::Forest { trees } => {
                trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len() as f64
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        Ok(x.rows_iter().map(|r| self.predict_row(r)).collect())
    }
}

/// Fits the learner named by `spec.kind`. `weights` are per-row sample
/// weights (`None` = all ones); `seed` only matters for forests.
pub fn fit(
    spec: &LearnerSpec,
    x: &Matrix,
    y: &[f64],
    weights: Option<&[f64]>,
    seed: u64,
) -> Result<LearnerModel> {
    spec.validate()?;
    if x.nrows() != y.len() || weights.is_some_and(|w| w.len() != y.len()) {
        return Err(Error::Fit(format!(
            "{} feature rows for {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::Fit("no training rows".into()));
    }
    let mut model = match spec.kind {
        LearnerKind::Ridge => fit_weighted_ridge(x, y, weights, spec.ridge_lambda)?,
        LearnerKind::Logistic => linear::fit_logistic_weighted(x, y, weights, &spec.logistic)?,
        LearnerKind::RegressionForest => {
            forest::fit_weighted_forest(x, y, weights, &spec.forest, seed)?
        }
    };
    model.spec = spec.clone();
    Ok(model)
}

/// Free-function form of [`LearnerModel::predict`].
pub fn predict(model: &LearnerModel, x: &Matrix) -> Result<Vec<f64>> {
    model.predict(x)
}
