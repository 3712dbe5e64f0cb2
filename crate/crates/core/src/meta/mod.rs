//! CATE estimators and the workflows built on them.
//!
//! Every estimator treats a multi-arm experiment as K one-vs-control
//! problems; control rows are shared across arms. A fitted [`CateModel`]
//! predicts an `m × K` matrix whose column `k` is the effect of arm `k + 1`
//! relative to control.

mod ate;
mod fitters;
mod propensity;
mod recommend;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{ExperimentFrame, OutcomeKind};
use crate::error::{Error, Result};
use crate::learners::{LearnerKind, LearnerModel, LearnerSpec};
use crate::matrix::Matrix;
use crate::uplift_forest::{self, UpliftForest, UpliftForestSpec};

pub use ate::{
    ate_from_cate, ipw_ate, naive_report, percentile, AteMethod, AteReport, DEFAULT_BOOTSTRAP,
};
pub use fitters::{fit_r, fit_r_effect, fit_s, fit_t, fit_x, fit_x_arm, r_pseudo_outcomes, XArm};
pub use propensity::{estimate_propensity, fit_propensity_model, PropensityModel};
pub use recommend::{recommend, recommend_from_effects, top_k_by_score, top_k_targeting};

pub const DEFAULT_PROPENSITY_CLIP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    S,
    T,
    X,
    R,
    UpliftForest,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::S,
        Method::T,
        Method::X,
        Method::R,
        Method::UpliftForest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::S => "s",
            Method::T => "t",
            Method::X => "x",
            Method::R => "r",
            Method::UpliftForest => "uplift_forest",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Everything needed to (re)fit a CATE model apart from data and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateConfig {
    pub method: Method,
    pub base: LearnerSpec,
    pub forest: UpliftForestSpec,
    pub propensity_clip: f64,
}

impl CateConfig {
    pub fn new(method: Method, base: LearnerSpec) -> Self {
        Self {
            method,
            base,
            forest: UpliftForestSpec::default(),
            propensity_clip: DEFAULT_PROPENSITY_CLIP,
        }
    }

    pub fn uplift_forest(spec: UpliftForestSpec) -> Self {
        Self {
            forest: spec,
            ..Self::new(Method::UpliftForest, LearnerSpec::default())
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_clip(self.propensity_clip)?;
        self.base.validate()?;
        self.forest.validate()
    }
}

pub(crate) fn check_clip(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "propensity clip must lie in (0, 0.5), got {eps}"
        )))
    }
}

/// Method-specific fitted parts, one entry per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CateComponents {
    /// Outcome model on `[x, 1{w = k}]` per arm.
    S {
        models: Vec<LearnerModel>,
    },
    T {
        control: LearnerModel,
        arms: Vec<LearnerModel>,
    },
    X {
        arms: Vec<XArm>,
    },
    /// Effect model per arm, fitted on R-loss pseudo-outcomes.
    R {
        effects: Vec<LearnerModel>,
    },
    UpliftForest {
        forest: UpliftForest,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateModel {
    pub config: CateConfig,
    pub seed: u64,
    pub n_features: usize,
    /// Control label first, then one label per arm.
    pub arm_labels: Vec<String>,
    pub components: CateComponents,
}

impl CateModel {
    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn n_arms(&self) -> usize {
        self.arm_labels.len() - 1
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        predict_cate(self, x)
    }

    /// Effect of every arm for one row.
    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        match &self.components {
            CateComponents::S { models } => {
                let mut with_w = x.to_vec();
                with_w.push(0.0);
                models
                    .iter()
                    .map(|m| {
                        *with_w.last_mut().unwrap() = 1.0;
                        let treated = m.predict_row(&with_w);
                        *with_w.last_mut().unwrap() = 0.0;
                        treated - m.predict_row(&with_w)
                    })
                    .collect()
            }
            CateComponents::T { control, arms } => {
                let base = control.predict_row(x);
                arms.iter().map(|m| m.predict_row(x) - base).collect()
            }
            CateComponents::X { arms } => arms.iter().map(|a| a.predict_row(x)).collect(),
            CateComponents::R { effects } => effects.iter().map(|m| m.predict_row(x)).collect(),
            CateComponents::UpliftForest { forest } => forest.predict_row(x),
        }
    }
}

/// `m × K` matrix of estimated effects; column `k` is arm `k + 1` vs control.
pub fn predict_cate(model: &CateModel, x: &Matrix) -> Result<Matrix> {
    if x.ncols() != model.n_features {
        return Err(Error::Dimension {
            expected: model.n_features,
            got: x.ncols(),
        });
    }
    let k = model.n_arms();
    let mut out = Matrix::zeros(x.nrows(), k);
    for (i, row) in x.rows_iter().enumerate() {
        for (j, v) in model.predict_row(row).into_iter().enumerate() {
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Learner for outcome regressions: binary outcomes swap a ridge base for
/// logistic regression so predictions are probabilities.
pub(crate) fn outcome_spec(base: &LearnerSpec, kind: OutcomeKind) -> Result<LearnerSpec> {
    match (kind, base.kind) {
        (OutcomeKind::Binary, LearnerKind::Ridge) => Ok(base.with_kind(LearnerKind::Logistic)),
        (OutcomeKind::Continuous, LearnerKind::Logistic) => Err(Error::Config(
            "logistic base learner needs a binary outcome".into(),
        )),
        _ => Ok(base.clone()),
    }
}

/// Learner for effect and pseudo-outcome regressions, whose targets are
/// unbounded reals.
pub(crate) fn effect_spec(base: &LearnerSpec) -> LearnerSpec {
    match base.kind {
        LearnerKind::Logistic => base.with_kind(LearnerKind::Ridge),
        _ => base.clone(),
    }
}

/// Fits the estimator named by `config.method`.
pub fn fit_cate(frame: &ExperimentFrame, config: &CateConfig, seed: u64) -> Result<CateModel> {
    config.validate()?;
    let components = match config.method {
        Method::S => fitters::fit_s_components(frame, config, seed)?,
        Method::T => fitters::fit_t_components(frame, config, seed)?,
        Method::X => fitters::fit_x_components(frame, config, seed)?,
        Method::R => fitters::fit_r_components(frame, config, seed)?,
        Method::UpliftForest => CateComponents::UpliftForest {
            forest: uplift_forest::fit_uplift_forest(frame, &config.forest, seed)?,
        },
    };
    Ok(CateModel {
        config: config.clone(),
        seed,
        n_features: frame.d(),
        arm_labels: frame.arm_labels().to_vec(),
        components,
    })
}

/// Uplift forest wrapped as a [`CateModel`].
pub fn fit_forest(
    frame: &ExperimentFrame,
    spec: &UpliftForestSpec,
    seed: u64,
) -> Result<CateModel> {
    fit_cate(frame, &CateConfig::uplift_forest(spec.clone()), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("q".parse::<Method>().is_err());
    }

    #[test]
    fn clip_bounds() {
        assert!(check_clip(0.01).is_ok());
        assert!(check_clip(0.0).is_err());
        assert!(check_clip(0.5).is_err());
    }

    #[test]
    fn learner_mapping() {
        let ridge = LearnerSpec::ridge(0.1);
        assert_eq!(
            outcome_spec(&ridge, OutcomeKind::Binary).unwrap().kind,
            LearnerKind::Logistic
        );
        assert_eq!(
            outcome_spec(&ridge, OutcomeKind::Continuous).unwrap().kind,
            LearnerKind::Ridge
        );
        assert!(outcome_spec(&LearnerSpec::logistic(), OutcomeKind::Continuous).is_err());
        assert_eq!(
            effect_spec(&LearnerSpec::logistic()).kind,
            LearnerKind::Ridge
        );
    }
}
