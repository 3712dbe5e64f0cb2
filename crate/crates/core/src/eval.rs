//! Ranking metrics for uplift scores: cumulative-gain (uplift) and Qini
//! curves with their discrete areas, plus PEHE against known effects.
//!
//! Units are ranked by score, highest first; equal scores keep their
//! original order. For every prefix of `k` units:
//!
//! * `cum_gain(k) = (ȳ_T(k) − ȳ_C(k)) · k`, or 0 while either group is empty;
//! * `qini(k) = ΣY_T(k) − ΣY_C(k) · N_T(k)/N_C(k)`, or 0 while `N_C(k) = 0`.
//!
//! `auuc` is the mean of `cum_gain` over `k = 1..n` and the Qini coefficient
//! is `(1/n) Σ_k [qini(k) − (k/n)·qini(n)]`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{ExperimentFrame, SyntheticTruth};
use crate::error::{Error, Result};

pub const TIE_RULE: &str = "stable-by-index";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub k: usize,
    pub fraction: f64,
    pub cum_gain: f64,
    pub qini: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub tie_rule: String,
    pub auuc: f64,
    pub qini_coefficient: f64,
    pub rows: Vec<CurveRow>,
}

impl CurveTable {
    pub fn cum_gain(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cum_gain).collect()
    }

    pub fn qini(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.qini).collect()
    }
}

/// Builds the curve table from scores, a treated flag and outcomes per unit.
pub fn uplift_curve(scores: &[f64], treated: &[bool], outcome: &[f64]) -> Result<CurveTable> {
    let n = scores.len();
    if treated.len() != n || outcome.len() != n {
        return Err(Error::Invariant(format!(
            "{n} scores for {} treatment flags and {} outcomes",
            treated.len(),
            outcome.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Invariant(format!("score {i} is not finite")));
    }
    if !treated.contains(&true) || !treated.contains(&false) {
        return Err(Error::Estimation(
            "uplift curve needs both treated and control units".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let (mut nt, mut nc) = (0usize, 0usize);
    let (mut yt, mut yc) = (0.0, 0.0);
    let mut rows = Vec::with_capacity(n);
    for (pos, &i) in order.iter().enumerate() {
        if treated[i] {
            nt += 1;
            yt += outcome[i];
        } else {
            nc += 1;
            yc += outcome[i];
        }
        let k = pos + 1;
        let cum_gain = if nt > 0 && nc > 0 {
            (yt / nt as f64 - yc / nc as f64) * k as f64
        } else {
            0.0
        };
        let qini = if nc > 0 {
            yt - yc * nt as f64 / nc as f64
        } else {
            0.0
        };
        rows.push(CurveRow {
            k,
            fraction: k as f64 / n as f64,
            cum_gain,
            qini,
        });
    }
    let nf = n as f64;
    let auuc = rows.iter().map(|r| r.cum_gain).sum::<f64>() / nf;
    let q_end = rows[n - 1].qini;
    let qini_coefficient = rows
        .iter()
        .map(|r| r.qini - r.k as f64 / nf * q_end)
        .sum::<f64>()
        / nf;
    Ok(CurveTable {
        tie_rule: TIE_RULE.to_owned(),
        auuc,
        qini_coefficient,
        rows,
    })
}

/// Scores, treated flags and outcomes of the `arm ∪ control` units.
fn arm_view(frame: &ExperimentFrame, arm: usize) -> Result<(Vec<usize>, Vec<bool>, Vec<f64>)> {
    let (pair, idx) = frame.arm_pair(arm)?;
    let treated = pair.treatment().iter().map(|&w| w == 1).collect();
    Ok((idx, treated, pair.outcome().to_vec()))
}

/// Curve for one arm against control. `scores` has one entry per frame row;
/// rows in other arms are ignored.
pub fn uplift_curve_for_arm(
    scores: &[f64],
    frame: &ExperimentFrame,
    arm: usize,
) -> Result<CurveTable> {
    if scores.len() != frame.n() {
        return Err(Error::Invariant(format!(
            "{} scores for {} rows",
            scores.len(),
            frame.n()
        )));
    }
    let (idx, treated, outcome) = arm_view(frame, arm)?;
    let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
    uplift_curve(&s, &treated, &outcome)
}

pub fn qini_coefficient(scores: &[f64], frame: &ExperimentFrame, arm: usize) -> Result<f64> {
    Ok(uplift_curve_for_arm(scores, frame, arm)?.qini_coefficient)
}

/// Root mean squared difference between predicted and true effects of `arm`.
pub fn pehe(predicted: &[f64], truth: &SyntheticTruth, arm: usize) -> Result<f64> {
    let tau = truth.arm_tau(arm);
    pehe_values(predicted, &tau)
}

pub fn pehe_values(predicted: &[f64], tau: &[f64]) -> Result<f64> {
    if predicted.len() != tau.len() || tau.is_empty() {
        return Err(Error::Invariant(format!(
            "{} predictions for {} true effects",
            predicted.len(),
            tau.len()
        )));
    }
    let mse = predicted
        .iter()
        .zip(tau)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / tau.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveFormat {
    Csv,
    Json,
}

#[derive(Serialize, Deserialize)]
struct CurveSummary {
    tie_rule: String,
    auuc: f64,
    qini_coefficient: f64,
}

/// Sidecar path holding the scalar summary next to a CSV curve.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes the table. CSV goes to `path` with columns `k,fraction,cum_gain,qini`
/// and the scalars to `<path>.json`; JSON writes one object with everything.
pub fn emit_curve(table: &CurveTable, path: &Path, format: CurveFormat) -> Result<()> {
    match format {
        CurveFormat::Json => {
            let mut s = serde_json::to_string_pretty(table)?;
            s.push('\n');
            fs::write(path, s)?;
        }
        CurveFormat::Csv => {
            let mut out = String::from("k,fraction,cum_gain,qini\n");
            for r in &table.rows {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    r.k, r.fraction, r.cum_gain, r.qini
                ));
            }
            fs::write(path, out)?;
            let summary = CurveSummary {
                tie_rule: table.tie_rule.clone(),
                auuc: table.auuc,
                qini_coefficient: table.qini_coefficient,
            };
            let mut s = serde_json::to_string_pretty(&summary)?;
            s.push('\n');
            fs::write(sidecar_path(path), s)?;
        }
    }
    Ok(())
}

/// Reads a table written by [`emit_curve`].
pub fn read_curve(path: &Path, format: CurveFormat) -> Result<CurveTable> {
    match format {
        CurveFormat::Json => Ok(serde_json::from_str(&fs::read_to_string(path)?)?),
        CurveFormat::Csv => {
            let summary: CurveSummary =
                serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
            let mut reader = csv::Reader::from_path(path)?;
            let rows = reader
                .deserialize::<CurveRow>()
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(CurveTable {
                tie_rule: summary.tie_rule,
                auuc: summary.auuc,
                qini_coefficient: summary.qini_coefficient,
                rows,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<f64>, Vec<bool>, Vec<f64>) {
        (
            vec![0.9, 0.7, 0.5, 0.1],
            vec![true, false, true, false],
            vec![1.0, 0.0, 0.0, 1.0],
        )
    }

    #[test]
    fn four_unit_prefixes() {
        let (s, t, y) = fixture();
        let c = uplift_curve(&s, &t, &y).unwrap();
        // k=1: no control yet; k=2: (1 − 0)·2; k=3: (1/2 − 0)·3; k=4: (1/2 − 1/2)·4
        assert_eq!(c.cum_gain(), vec![0.0, 2.0, 1.5, 0.0]);
        // qini: 0 (no control), 1 − 0, 1 − 0·2, 1 − 1·(2/2)
        assert_eq!(c.qini(), vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(c.auuc, 3.5 / 4.0);
        assert_eq!(c.qini_coefficient, 0.5);
        assert_eq!(c.rows[3].fraction, 1.0);
    }

    #[test]
    fn zero_outcomes_zero_table() {
        let (s, t, _) = fixture();
        let c = uplift_curve(&s, &t, &[0.0; 4]).unwrap();
        assert!(c.rows.iter().all(|r| r.cum_gain == 0.0 && r.qini == 0.0));
        assert_eq!((c.auuc, c.qini_coefficient), (0.0, 0.0));
    }

    #[test]
    fn errors() {
        assert!(uplift_curve(&[1.0], &[true, false], &[0.0, 1.0]).is_err());
        assert!(matches!(
            uplift_curve(&[1.0, 2.0], &[true, true], &[0.0, 1.0]),
            Err(Error::Estimation(_))
        ));
        assert!(pehe_values(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pehe_offsets() {
        assert_eq!(pehe_values(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(pehe_values(&[2.0, 3.0], &[1.0, 2.0]).unwrap(), 1.0);
    }

    #[test]
    fn csv_and_json_round_trip() {
        let (s, t, y) = fixture();
        let c = uplift_curve(&s, &t, &y).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("curve.csv");
        emit_curve(&c, &p, CurveFormat::Csv).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().next().unwrap(), "k,fraction,cum_gain,qini");
        assert_eq!(read_curve(&p, CurveFormat::Csv).unwrap(), c);

        let p = dir.path().join("curve.json");
        emit_curve(&c, &p, CurveFormat::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        assert!(v.get("auuc").is_some() && v.get("qini_coefficient").is_some());
        assert_eq!(read_curve(&p, CurveFormat::Json).unwrap(), c);
    }

    #[test]
    fn unwritable_path() {
        let (s, t, y) = fixture();
        let c = uplift_curve(&s, &t, &y).unwrap();
        let p = Path::new("/nonexistent-dir/curve.csv");
        assert!(matches!(
            emit_curve(&c, p, CurveFormat::Csv),
            Err(Error::Io(_))
        ));
    }
}
