//! Uplift modeling toolkit: conditional average treatment effect (CATE)
//! estimation with meta-learners and uplift random forests, propensity
//! weighting, Qini/AUUC evaluation and treatment recommendation.

// Index loops mirror the formulas in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod dataset;
pub mod error;
pub mod eval;
pub mod learners;
pub mod matrix;
pub mod meta;
pub mod rng;
pub mod uplift_forest;

pub use dataset::{ExperimentFrame, OutcomeKind, Schema, SyntheticTruth};
pub use error::{Error, Result};
pub use learners::{LearnerKind, LearnerModel, LearnerSpec};
pub use matrix::Matrix;
pub use meta::{fit_cate, predict_cate, CateConfig, CateModel, Method};
pub use uplift_forest::{Criterion, UpliftForest, UpliftForestSpec};
