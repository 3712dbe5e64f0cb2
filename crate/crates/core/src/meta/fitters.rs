use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::propensity::{fit_propensity_model, PropensityModel};
use super::{effect_spec, fit_cate, outcome_spec, CateComponents, CateConfig, CateModel, Method};
use crate::dataset::ExperimentFrame;
use crate::error::{Error, Result};
use crate::learners::{self, LearnerModel, LearnerSpec};
use crate::matrix::Matrix;
use crate::rng::{self, derive_seed};

// Seed streams for the fitted parts of arm `k`.
const MU0: u64 = 0;
const MU1: u64 = 1;
const TAU0: u64 = 2;
const TAU1: u64 = 3;
const FOLDS: u64 = 4;
const EFFECT: u64 = 5;

fn part_seed(seed: u64, arm: usize, role: u64) -> u64 {
    derive_seed(seed, (arm as u64) << 8 | role)
}

fn empty_arm(frame: &ExperimentFrame, arm: usize) -> Error {
    Error::Fit(format!("arm `{}` has no units", frame.arm_labels()[arm]))
}

/// S-learner with the default propensity clip.
pub fn fit_s(frame: &ExperimentFrame, base: &LearnerSpec, seed: u64) -> Result<CateModel> {
    fit_cate(frame, &CateConfig::new(Method::S, base.clone()), seed)
}

pub fn fit_t(frame: &ExperimentFrame, base: &LearnerSpec, seed: u64) -> Result<CateModel> {
    fit_cate(frame, &CateConfig::new(Method::T, base.clone()), seed)
}

pub fn fit_x(frame: &ExperimentFrame, base: &LearnerSpec, seed: u64) -> Result<CateModel> {
    fit_cate(frame, &CateConfig::new(Method::X, base.clone()), seed)
}

pub fn fit_r(frame: &ExperimentFrame, base: &LearnerSpec, seed: u64) -> Result<CateModel> {
    fit_cate(frame, &CateConfig::new(Method::R, base.clone()), seed)
}

fn fit_on_rows(
    spec: &LearnerSpec,
    frame: &ExperimentFrame,
    rows: &[usize],
    targets: &[f64],
    seed: u64,
) -> Result<LearnerModel> {
    learners::fit(
        spec,
        &frame.features().select_rows(rows),
        targets,
        None,
        seed,
    )
}

pub(super) fn fit_s_components(
    frame: &ExperimentFrame,
    config: &CateConfig,
    seed: u64,
) -> Result<CateComponents> {
    let spec = outcome_spec(&config.base, frame.outcome_kind())?;
    let models = (1..=frame.n_arms())
        .map(|k| {
            let (pair, _) = frame.arm_pair(k).map_err(|_| empty_arm(frame, k))?;
            let indicator: Vec<f64> = pair.treatment().iter().map(|&w| w as f64).collect();
            let x = pair.features().with_column(&indicator);
            learners::fit(&spec, &x, pair.outcome(), None, part_seed(seed, k, MU1))
        })
        .collect::<Result<_>>()?;
    Ok(CateComponents::S { models })
}

fn outcome_models(
    frame: &ExperimentFrame,
    spec: &LearnerSpec,
    seed: u64,
) -> Result<(LearnerModel, Vec<LearnerModel>)> {
    let fit_group = |g: usize, role: u64| {
        let rows = frame.rows_in_arm(g);
        if rows.is_empty() {
            return Err(empty_arm(frame, g));
        }
        let y: Vec<f64> = rows.iter().map(|&i| frame.outcome()[i]).collect();
        fit_on_rows(spec, frame, &rows, &y, part_seed(seed, g, role))
    };
    let control = fit_group(0, MU0)?;
    let arms = (1..=frame.n_arms())
        .map(|k| fit_group(k, MU1))
        .collect::<Result<_>>()?;
    Ok((control, arms))
}

pub(super) fn fit_t_components(
    frame: &ExperimentFrame,
    config: &CateConfig,
    seed: u64,
) -> Result<CateComponents> {
    let spec = outcome_spec(&config.base, frame.outcome_kind())?;
    let (control, arms) = outcome_models(frame, &spec, seed)?;
    Ok(CateComponents::T { control, arms })
}

/// One arm of an X-learner: imputed-effect models for both groups blended by
/// the propensity `g(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XArm {
    /// Effect model fitted on control units, target `μ̂_k(x) − y`.
    pub tau0: LearnerModel,
    /// Effect model fitted on treated units, target `y − μ̂_0(x)`.
    pub tau1: LearnerModel,
    pub g: PropensityModel,
}

impl XArm {
    /// `g(x)·τ̂₀(x) + (1 − g(x))·τ̂₁(x)`.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let g = self.g.predict_row(x);
        g * self.tau0.predict_row(x) + (1.0 - g) * self.tau1.predict_row(x)
    }
}

/// Stage two of the X-learner on a two-label frame (`0` control, `1`
/// treated), given stage-one outcome models `mu0` and `mu1`.
pub fn fit_x_arm(
    pair: &ExperimentFrame,
    mu0: &LearnerModel,
    mu1: &LearnerModel,
    effect: &LearnerSpec,
    g: PropensityModel,
    seed: u64,
) -> Result<XArm> {
    let x = pair.features();
    let y = pair.outcome();
    let treated = pair.rows_in_arm(1);
    let control = pair.rows_in_arm(0);
    let d1: Vec<f64> = treated
        .iter()
        .map(|&i| y[i] - mu0.predict_row(x.row(i)))
        .collect();
    let d0: Vec<f64> = control
        .iter()
        .map(|&i| mu1.predict_row(x.row(i)) - y[i])
        .collect();
    let tau1 = fit_on_rows(effect, pair, &treated, &d1, derive_seed(seed, TAU1))?;
    let tau0 = fit_on_rows(effect, pair, &control, &d0, derive_seed(seed, TAU0))?;
    Ok(XArm { tau0, tau1, g })
}

/// Propensity used to blend X-learner effects. A recorded propensity column
/// has no model to evaluate at new points, so its clipped mean is used.
fn blend_model(pair: &ExperimentFrame, eps: f64) -> Result<PropensityModel> {
    match pair.propensity() {
        Some(p) => {
            let mean = p.iter().map(|e| e.clamp(eps, 1.0 - eps)).sum::<f64>() / p.len() as f64;
            Ok(PropensityModel::Constant { value: mean })
        }
        None => {
            let w: Vec<f64> = pair.treatment().iter().map(|&t| t as f64).collect();
            fit_propensity_model(pair.features(), &w, eps)
        }
    }
}

pub(super) fn fit_x_components(
    frame: &ExperimentFrame,
    config: &CateConfig,
    seed: u64,
) -> Result<CateComponents> {
    let spec = outcome_spec(&config.base, frame.outcome_kind())?;
    let effect = effect_spec(&config.base);
    let (mu0, mus) = outcome_models(frame, &spec, seed)?;
    let arms = mus
        .iter()
        .enumerate()
        .map(|(j, mu1)| {
            let k = j + 1;
            let (pair, _) = frame.arm_pair(k)?;
            let g = blend_model(&pair, config.propensity_clip)?;
            fit_x_arm(&pair, &mu0, mu1, &effect, g, part_seed(seed, k, EFFECT))
        })
        .collect::<Result<_>>()?;
    Ok(CateComponents::X { arms })
}

/// R-loss pseudo-outcomes `ψ = (y − m̂)/(w − ê)` and weights `ω = (w − ê)²`.
///
/// Panics if some `|w − ê|` is zero; with `ê` clipped to `[ε, 1 − ε]` and
/// `w ∈ {0, 1}` that cannot happen.
pub fn r_pseudo_outcomes(
    y: &[f64],
    w: &[f64],
    m_hat: &[f64],
    e_hat: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    y.iter()
        .zip(w)
        .zip(m_hat.iter().zip(e_hat))
        .map(|((&yi, &wi), (&m, &e))| {
            let resid = wi - e;
            assert!(
                resid != 0.0 && resid.is_finite(),
                "treatment residual is zero; propensities must be clipped away from 0 and 1"
            );
            ((yi - m) / resid, resid * resid)
        })
        .unzip()
}

/// Weighted regression of R-loss pseudo-outcomes on `x`.
pub fn fit_r_effect(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    m_hat: &[f64],
    e_hat: &[f64],
    spec: &LearnerSpec,
    seed: u64,
) -> Result<LearnerModel> {
    let (psi, omega) = r_pseudo_outcomes(y, w, m_hat, e_hat);
    learners::fit(spec, x, &psi, Some(&omega), seed)
}

/// Two folds from a seeded shuffle, done per treatment group so both folds
/// see treated and control units.
fn two_folds(pair: &ExperimentFrame, seed: u64) -> Vec<usize> {
    let mut fold = vec![0; pair.n()];
    let mut rng = rng::rng_from(seed);
    let mut next = 0;
    for g in 0..=1 {
        let mut rows = pair.rows_in_arm(g);
        rows.shuffle(&mut rng);
        for i in rows {
            fold[i] = next;
            next = 1 - next;
        }
    }
    fold
}

pub(super) fn fit_r_components(
    frame: &ExperimentFrame,
    config: &CateConfig,
    seed: u64,
) -> Result<CateComponents> {
    let spec = outcome_spec(&config.base, frame.outcome_kind())?;
    let effect = effect_spec(&config.base);
    let eps = config.propensity_clip;
    let effects = (1..=frame.n_arms())
        .map(|k| {
            let (pair, _) = frame.arm_pair(k).map_err(|_| empty_arm(frame, k))?;
            let n = pair.n();
            let w: Vec<f64> = pair.treatment().iter().map(|&t| t as f64).collect();
            let fold = two_folds(&pair, part_seed(seed, k, FOLDS));
            let mut m_hat = vec![0.0; n];
            let mut e_hat = vec![0.0; n];
            for f in 0..2 {
                let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
                let held: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
                let xt = pair.features().select_rows(&train);
                let yt: Vec<f64> = train.iter().map(|&i| pair.outcome()[i]).collect();
                let m = learners::fit(
                    &spec,
                    &xt,
                    &yt,
                    None,
                    part_seed(seed, k, MU0 + 16 * f as u64),
                )?;
                let e_model = match pair.propensity() {
                    Some(_) => None,
                    None => {
                        let wt: Vec<f64> = train.iter().map(|&i| w[i]).collect();
                        Some(fit_propensity_model(&xt, &wt, eps)?)
                    }
                };
                for &i in &held {
                    let row = pair.features().row(i);
                    m_hat[i] = m.predict_row(row);
                    e_hat[i] = match (&e_model, pair.propensity()) {
                        (Some(model), _) => model.predict_row(row),
                        (None, Some(p)) => p[i].clamp(eps, 1.0 - eps),
                        (None, None) => unreachable!(),
                    };
                }
            }
            fit_r_effect(
                pair.features(),
                pair.outcome(),
                &w,
                &m_hat,
                &e_hat,
                &effect,
                part_seed(seed, k, EFFECT),
            )
        })
        .collect::<Result<_>>()?;
    Ok(CateComponents::R { effects })
}
