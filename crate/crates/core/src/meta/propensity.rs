use serde::{Deserialize, Serialize};

use super::check_clip;
use crate::dataset::ExperimentFrame;
use crate::error::{Error, Result};
use crate::learners::{self, LearnerModel, LearnerSpec};
use crate::matrix::Matrix;

/// Treatment-probability model used at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityModel {
    Constant { value: f64 },
    Logistic { model: LearnerModel, clip: f64 },
}

impl PropensityModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            PropensityModel::Constant { value } => *value,
            PropensityModel::Logistic { model, clip } => {
                model.predict_row(x).clamp(*clip, 1.0 - *clip)
            }
        }
    }
}

/// Logistic model of `1{w = 1}` on features, with clipped outputs.
pub fn fit_propensity_model(x: &Matrix, w: &[f64], eps: f64) -> Result<PropensityModel> {
    check_clip(eps)?;
    let model = learners::fit(&LearnerSpec::logistic(), x, w, None, 0)
        .map_err(|e| Error::Propensity(format!("cannot fit propensity model: {e}")))?;
    Ok(PropensityModel::Logistic { model, clip: eps })
}

/// Propensity of `arm` versus control for every unit in `arm ∪ control`,
/// in row order, clipped to `[eps, 1 - eps]`. A propensity column already
/// present in the frame is returned (clipped) instead of being refitted.
pub fn estimate_propensity(frame: &ExperimentFrame, arm: usize, eps: f64) -> Result<Vec<f64>> {
    check_clip(eps)?;
    let (pair, _) = frame
        .arm_pair(arm)
        .map_err(|e| Error::Propensity(e.to_string()))?;
    if let Some(p) = pair.propensity() {
        return Ok(p.iter().map(|e| e.clamp(eps, 1.0 - eps)).collect());
    }
    let w: Vec<f64> = pair.treatment().iter().map(|&t| t as f64).collect();
    let model = fit_propensity_model(pair.features(), &w, eps)?;
    Ok(pair
        .features()
        .rows_iter()
        .map(|r| model.predict_row(r))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::OutcomeKind;

    #[test]
    fn intercept_only_is_half() {
        let x = Matrix::zeros(8, 2);
        let w = vec![0, 1, 0, 1, 1, 0, 1, 0];
        let f = ExperimentFrame::from_parts(x, w, vec![0.0; 8], OutcomeKind::Continuous).unwrap();
        for e in estimate_propensity(&f, 1, 0.01).unwrap() {
            assert!((e - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn provided_column_is_clipped() {
        let x = Matrix::zeros(2, 1);
        let f = ExperimentFrame::from_parts(x, vec![1, 0], vec![0.0; 2], OutcomeKind::Continuous)
            .unwrap()
            .with_propensity(Some(vec![0.001, 0.5]))
            .unwrap();
        assert_eq!(estimate_propensity(&f, 1, 0.01).unwrap(), vec![0.01, 0.5]);
    }

    #[test]
    fn separable_assignment_saturates_at_clip() {
        let rows: Vec<[f64; 1]> = (0..20).map(|i| [i as f64 - 9.5]).collect();
        let w: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let f = ExperimentFrame::from_parts(
            Matrix::from_rows(&rows).unwrap(),
            w,
            vec![0.0; 20],
            OutcomeKind::Continuous,
        )
        .unwrap();
        let e = estimate_propensity(&f, 1, 0.01).unwrap();
        assert_eq!(e[0], 0.01);
        assert_eq!(e[19], 0.99);
        assert!(e.iter().all(|&v| (0.01..=0.99).contains(&v)));
    }

    #[test]
    fn missing_arm_is_a_propensity_error() {
        let f = ExperimentFrame::new(
            Matrix::zeros(3, 1),
            vec![0, 1, 0],
            vec![0.0; 3],
            None,
            OutcomeKind::Continuous,
            vec!["x1".into()],
            vec!["c".into(), "a".into(), "b".into()],
        )
        .unwrap();
        assert!(matches!(
            estimate_propensity(&f, 2, 0.01),
            Err(Error::Propensity(_))
        ));
    }
}
