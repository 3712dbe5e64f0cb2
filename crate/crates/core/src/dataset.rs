//! Experiment data: the validated frame every estimator consumes, CSV
//! ingestion, stratified splitting and synthetic data with known effects.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// Columns whose header starts with this prefix are never picked up as features.
pub const RESERVED_PREFIX: &str = "__";
/// Header of the true-effect column written for single-arm synthetic data.
pub const TAU_COLUMN: &str = "__tau";
/// Header of the recorded-propensity column written by `simulate`.
pub const PROPENSITY_COLUMN: &str = "__propensity";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

/// Units `(x_i, w_i, y_i)` plus optional known propensities.
///
/// Treatment is stored as an arm index: `0` is control, `1..=K` are the
/// treatment arms, named by `arm_labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentFrame {
    features: Matrix,
    treatment: Vec<usize>,
    outcome: Vec<f64>,
    propensity: Option<Vec<f64>>,
    outcome_kind: OutcomeKind,
    feature_names: Vec<String>,
    arm_labels: Vec<String>,
}

impl ExperimentFrame {
    pub fn new(
        features: Matrix,
        treatment: Vec<usize>,
        outcome: Vec<f64>,
        propensity: Option<Vec<f64>>,
        outcome_kind: OutcomeKind,
        feature_names: Vec<String>,
        arm_labels: Vec<String>,
    ) -> Result<Self> {
        let frame = Self {
            features,
            treatment,
            outcome,
            propensity,
            outcome_kind,
            feature_names,
            arm_labels,
        };
        frame.validate()?;
        Ok(frame)
    }

    /// Frame with default names `x1..xd` and arm labels `0..=K`.
    pub fn from_parts(
        features: Matrix,
        treatment: Vec<usize>,
        outcome: Vec<f64>,
        outcome_kind: OutcomeKind,
    ) -> Result<Self> {
        let d = features.ncols();
        let k = treatment.iter().copied().max().unwrap_or(0).max(1);
        Self::new(
            features,
            treatment,
            outcome,
            None,
            outcome_kind,
            default_feature_names(d),
            (0..=k).map(|a| a.to_string()).collect(),
        )
    }

    fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        let d = self.features.ncols();
        if n == 0 {
            return Err(Error::Invariant("frame has no rows".into()));
        }
        if d == 0 {
            return Err(Error::Invariant("frame has no feature columns".into()));
        }
        if self.feature_names.len() != d {
            return Err(Error::Invariant(format!(
                "{} feature names for {d} feature columns",
                self.feature_names.len()
            )));
        }
        if self.treatment.len() != n || self.outcome.len() != n {
            return Err(Error::Invariant(format!(
                "treatment/outcome lengths ({}, {}) differ from row count {n}",
                self.treatment.len(),
                self.outcome.len()
            )));
        }
        if let Some(row) = (0..n).find(|&i| self.features.row(i).iter().any(|v| !v.is_finite())) {
            return Err(Error::Invariant(format!(
                "non-finite feature value in row {row}"
            )));
        }
        if let Some(row) = self.outcome.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("non-finite outcome in row {row}")));
        }
        if self.arm_labels.len() < 2 {
            return Err(Error::Invariant(
                "need a control label and at least one arm label".into(),
            ));
        }
        let k = self.arm_labels.len() - 1;
        if let Some(row) = self.treatment.iter().position(|&w| w > k) {
            return Err(Error::Invariant(format!(
                "treatment index {} in row {row} exceeds arm count {k}",
                self.treatment[row]
            )));
        }
        if !self.treatment.contains(&0) {
            return Err(Error::Invariant("no control units".into()));
        }
        if !self.treatment.iter().any(|&w| w > 0) {
            return Err(Error::Invariant("no treated units".into()));
        }
        if self.outcome_kind == OutcomeKind::Binary {
            if let Some(row) = self.outcome.iter().position(|&y| y != 0.0 && y != 1.0) {
                return Err(Error::Invariant(format!(
                    "binary outcome has value {} in row {row}",
                    self.outcome[row]
                )));
            }
        }
        if let Some(p) = &self.propensity {
            if p.len() != n {
                return Err(Error::Invariant(format!(
                    "propensity length {} differs from row count {n}",
                    p.len()
                )));
            }
            if let Some(row) = p.iter().position(|&e| !(e > 0.0 && e < 1.0)) {
                return Err(Error::Invariant(format!(
                    "propensity {} in row {row} is outside (0, 1)",
                    p[row]
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Number of non-control arms.
    pub fn n_arms(&self) -> usize {
        self.arm_labels.len() - 1
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn treatment(&self) -> &[usize] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn propensity(&self) -> Option<&[f64]> {
        self.propensity.as_deref()
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn arm_labels(&self) -> &[String] {
        &self.arm_labels
    }

    pub fn arm_index(&self, label: &str) -> Option<usize> {
        self.arm_labels.iter().position(|l| l == label)
    }

    /// Units per arm index, control first.
    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.arm_labels.len()];
        for &w in &self.treatment {
            counts[w] += 1;
        }
        counts
    }

    pub fn rows_in_arm(&self, arm: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.treatment[i] == arm)
            .collect()
    }

    /// Sub-frame over `idx` (in that order, duplicates allowed), keeping the arm encoding.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        Self::new(
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.treatment[i]).collect(),
            idx.iter().map(|&i| self.outcome[i]).collect(),
            self.propensity
                .as_ref()
                .map(|p| idx.iter().map(|&i| p[i]).collect()),
            self.outcome_kind,
            self.feature_names.clone(),
            self.arm_labels.clone(),
        )
    }

    /// Control plus one arm, re-encoded as a two-label frame (`0` control,
    /// `1` the arm). Also returns the original row index of every kept unit.
    pub fn arm_pair(&self, arm: usize) -> Result<(Self, Vec<usize>)> {
        if arm == 0 || arm > self.n_arms() {
            return Err(Error::Estimation(format!(
                "arm index {arm} is not a treatment arm"
            )));
        }
        let idx: Vec<usize> = (0..self.n())
            .filter(|&i| self.treatment[i] == 0 || self.treatment[i] == arm)
            .collect();
        let counts = self.arm_counts();
        if counts[arm] == 0 {
            return Err(Error::Estimation(format!(
                "arm `{}` has no units",
                self.arm_labels[arm]
            )));
        }
        let frame = Self::new(
            self.features.select_rows(&idx),
            idx.iter()
                .map(|&i| usize::from(self.treatment[i] == arm))
                .collect(),
            idx.iter().map(|&i| self.outcome[i]).collect(),
            self.propensity
                .as_ref()
                .map(|p| idx.iter().map(|&i| p[i]).collect()),
            self.outcome_kind,
            self.feature_names.clone(),
            vec![self.arm_labels[0].clone(), self.arm_labels[arm].clone()],
        )?;
        Ok((frame, idx))
    }

    /// Copy of this frame with the propensity column replaced.
    pub fn with_propensity(&self, propensity: Option<Vec<f64>>) -> Result<Self> {
        let mut frame = self.clone();
        frame.propensity = propensity;
        frame.validate()?;
        Ok(frame)
    }
}

pub fn default_feature_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

/// Column roles for CSV input and output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub treatment: String,
    pub control: String,
    pub outcome: String,
    /// Feature columns. Empty means every column not used by another role
    /// and not starting with `__`.
    pub features: Vec<String>,
    pub propensity: Option<String>,
    /// Overrides outcome-kind inference.
    pub outcome_kind: Option<OutcomeKind>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            treatment: "w".into(),
            control: "0".into(),
            outcome: "y".into(),
            features: Vec::new(),
            propensity: None,
            outcome_kind: None,
        }
    }
}

/// Raw CSV table: header plus string cells. Comma separated, no quoting.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .quoting(false)
            .from_path(path)?;
        let headers = reader.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            rows.push(record?.iter().map(str::to_owned).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    }

    /// Parses a numeric column; errors name the 1-based data row.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| parse_cell(&r[j], i + 1, name))
            .collect()
    }

    /// Row-major matrix of the named numeric columns.
    pub fn matrix(&self, columns: &[String]) -> Result<Matrix> {
        let n = self.rows.len();
        if n == 0 {
            return Err(Error::Invariant("csv has no data rows".into()));
        }
        let parsed: Vec<Vec<f64>> = columns
            .iter()
            .map(|c| self.numeric_column(c))
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(n * columns.len());
        for i in 0..n {
            data.extend(parsed.iter().map(|c| c[i]));
        }
        Matrix::new(n, columns.len(), data)
    }
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    match f64::from_str(cell.trim()) {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            column: column.to_owned(),
            value: cell.to_owned(),
        }),
    }
}

/// Reads and validates an experiment CSV.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<ExperimentFrame> {
    frame_from_table(&CsvTable::read(path)?, schema)
}

pub fn frame_from_table(table: &CsvTable, schema: &Schema) -> Result<ExperimentFrame> {
    let t_col = table.column_index(&schema.treatment)?;
    table.column_index(&schema.outcome)?;
    let feature_cols: Vec<String> = if schema.features.is_empty() {
        table
            .headers
            .iter()
            .filter(|h| {
                **h != schema.treatment
                    && **h != schema.outcome
                    && Some(h.as_str()) != schema.propensity.as_deref()
                    && !h.starts_with(RESERVED_PREFIX)
            })
            .cloned()
            .collect()
    } else {
        schema.features.clone()
    };
    if feature_cols.is_empty() {
        return Err(Error::Invariant("no feature columns".into()));
    }
    let features = table.matrix(&feature_cols)?;
    let outcome = table.numeric_column(&schema.outcome)?;
    let propensity = schema
        .propensity
        .as_deref()
        .map(|c| table.numeric_column(c))
        .transpose()?;

    let raw: Vec<&str> = table.rows.iter().map(|r| r[t_col].as_str()).collect();
    if !raw.contains(&schema.control.as_str()) {
        return Err(Error::Invariant(format!(
            "control label `{}` not present in column `{}`",
            schema.control, schema.treatment
        )));
    }
    let others: BTreeSet<&str> = raw
        .iter()
        .copied()
        .filter(|l| *l != schema.control)
        .collect();
    let mut arm_labels = vec![schema.control.clone()];
    arm_labels.extend(others.iter().map(|s| (*s).to_owned()));
    let index: HashMap<&str, usize> = arm_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let treatment = raw.iter().map(|l| index[l]).collect();

    let outcome_kind = schema.outcome_kind.unwrap_or_else(|| {
        if outcome.iter().all(|&y| y == 0.0 || y == 1.0) {
            OutcomeKind::Binary
        } else {
            OutcomeKind::Continuous
        }
    });
    ExperimentFrame::new(
        features,
        treatment,
        outcome,
        propensity,
        outcome_kind,
        feature_cols,
        arm_labels,
    )
}

/// Writes `frame` as CSV: features, treatment label, outcome, then the
/// propensity column (if the frame has one and the schema names it) and true
/// effects (if given).
pub fn write_csv(
    frame: &ExperimentFrame,
    path: &Path,
    schema: &Schema,
    truth: Option<&SyntheticTruth>,
) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .from_path(path)?;
    let mut header: Vec<String> = frame.feature_names().to_vec();
    header.push(schema.treatment.clone());
    header.push(schema.outcome.clone());
    let prop = match (frame.propensity(), &schema.propensity) {
        (Some(p), Some(name)) => {
            header.push(name.clone());
            Some(p)
        }
        _ => None,
    };
    if let Some(t) = truth {
        header.extend(t.column_names(frame.arm_labels()));
    }
    writer.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..frame.n() {
        record.clear();
        record.extend(frame.features().row(i).iter().map(|v| v.to_string()));
        record.push(frame.arm_labels()[frame.treatment()[i]].clone());
        record.push(frame.outcome()[i].to_string());
        if let Some(p) = prop {
            record.push(p[i].to_string());
        }
        if let Some(t) = truth {
            record.extend(t.tau.row(i).iter().map(|v| v.to_string()));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Splits every arm separately: `floor(test_fraction * n_arm)` of its units,
/// chosen by a seeded shuffle, go to the test part. Both parts keep the
/// original row order.
pub fn stratified_split(
    frame: &ExperimentFrame,
    test_fraction: f64,
    seed: u64,
) -> Result<(ExperimentFrame, ExperimentFrame)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test fraction {test_fraction} is outside (0, 1)"
        )));
    }
    let counts = frame.arm_counts();
    if let Some(arm) = counts.iter().position(|&c| c < 2) {
        return Err(Error::Split(format!(
            "arm `{}` has {} unit(s); at least 2 are needed",
            frame.arm_labels()[arm],
            counts[arm]
        )));
    }
    let mut in_test = vec![false; frame.n()];
    for arm in 0..counts.len() {
        let mut rows = frame.rows_in_arm(arm);
        let mut rng = rng::stream(seed, arm as u64);
        rows.shuffle(&mut rng);
        let n_test = (test_fraction * rows.len() as f64).floor() as usize;
        for &i in &rows[..n_test] {
            in_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..frame.n()).partition(|&i| in_test[i]);
    let part = |idx: &[usize], name: &str| {
        frame
            .select_rows(idx)
            .map_err(|e| Error::Split(format!("{name} part is not a valid frame: {e}")))
    };
    Ok((part(&train, "train")?, part(&test, "test")?))
}

fn group_mean(frame: &ExperimentFrame, arm: usize) -> Option<f64> {
    let (sum, count) = frame
        .treatment()
        .iter()
        .zip(frame.outcome())
        .filter(|(&w, _)| w == arm)
        .fold((0.0, 0usize), |(s, c), (_, &y)| (s + y, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Difference in outcome means between `arm` and control.
pub fn naive_ate(frame: &ExperimentFrame, arm: usize) -> Result<f64> {
    let label = |a: usize| {
        frame
            .arm_labels()
            .get(a)
            .cloned()
            .unwrap_or_else(|| a.to_string())
    };
    let treated = group_mean(frame, arm)
        .filter(|_| arm > 0)
        .ok_or_else(|| Error::Estimation(format!("arm `{}` has no units", label(arm))))?;
    let control = group_mean(frame, 0)
        .ok_or_else(|| Error::Estimation("control group has no units".into()))?;
    Ok(treated - control)
}

/// Synthetic data-generating processes with a known effect function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dgp {
    /// `y = x·β + 0.5·w + ε`
    Linear,
    /// `y = x·β + (0.5 + x1)·w + ε`
    HeterogeneousLinear,
    /// `P(y = 1) = σ(x·β + (0.5 + 0.5·x1)·w)`
    BinaryLogistic,
    /// `y = sin(π·x1·x2) + 2(x3 − 0.5)² + (x1 + x2)/2 · w + ε`
    Nonlinear,
    /// Observational variant of `Linear`: `P(w = 1) = σ(x1)` and x1 also
    /// raises the outcome, so the naive difference is biased upwards.
    Confounded,
}

impl Dgp {
    pub const ALL: [Dgp; 5] = [
        Dgp::Linear,
        Dgp::HeterogeneousLinear,
        Dgp::BinaryLogistic,
        Dgp::Nonlinear,
        Dgp::Confounded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dgp::Linear => "linear",
            Dgp::HeterogeneousLinear => "heterogeneous_linear",
            Dgp::BinaryLogistic => "binary_logistic",
            Dgp::Nonlinear => "nonlinear",
            Dgp::Confounded => "confounded",
        }
    }

    fn min_features(self) -> usize {
        match self {
            Dgp::Nonlinear => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for Dgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dgp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Dgp::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown dgp `{s}`")))
    }
}

/// True per-unit effects of a synthetic frame, one column per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub tau: Matrix,
    pub dgp: Dgp,
    pub seed: u64,
}

impl SyntheticTruth {
    /// Effects for arm index `arm` (1-based, as in the frame).
    pub fn arm_tau(&self, arm: usize) -> Vec<f64> {
        self.tau.column(arm - 1)
    }

    pub fn column_names(&self, arm_labels: &[String]) -> Vec<String> {
        truth_columns(arm_labels)
    }
}

/// CSV columns holding true effects: `__tau` for a single arm, otherwise
/// `__tau_<label>` per arm.
pub fn truth_columns(arm_labels: &[String]) -> Vec<String> {
    if arm_labels.len() == 2 {
        vec![TAU_COLUMN.to_owned()]
    } else {
        arm_labels[1..]
            .iter()
            .map(|l| format!("{TAU_COLUMN}_{l}"))
            .collect()
    }
}

/// Noise standard deviation for the continuous processes.
pub const NOISE_SD: f64 = 0.5;
/// Treatment probability of the randomized processes.
pub const TREATMENT_PROB: f64 = 0.5;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Draws a frame and its true effects. A pure function of its arguments.
pub fn generate_synthetic(
    dgp: Dgp,
    n: usize,
    d: usize,
    seed: u64,
) -> Result<(ExperimentFrame, SyntheticTruth)> {
    if n < 10 {
        return Err(Error::Config(format!(
            "n = {n}; at least 10 rows are required"
        )));
    }
    if d < dgp.min_features() {
        return Err(Error::Config(format!(
            "dgp `{dgp}` needs at least {} features, got {d}",
            dgp.min_features()
        )));
    }
    let mut coef_rng = rng::stream(seed, 0);
    let beta: Vec<f64> = (0..d).map(|_| coef_rng.random_range(-1.0..1.0)).collect();
    let mut rng = rng::stream(seed, 1);
    let normal = StandardNormal;

    loop {
        let mut x = Vec::with_capacity(n * d);
        let mut w = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut tau = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
            let xb: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p_treat = match dgp {
                Dgp::Confounded => sigmoid(row[0]),
                _ => TREATMENT_PROB,
            };
            let treated = rng.random_bool(p_treat);
            let wf = if treated { 1.0 } else { 0.0 };
            let z: f64 = normal.sample(&mut rng);
            let eps = NOISE_SD * z;
            let (yi, ti) = match dgp {
                Dgp::Linear => (xb + 0.5 * wf + eps, 0.5),
                Dgp::HeterogeneousLinear => {
                    let t = 0.5 + row[0];
                    (xb + t * wf + eps, t)
                }
                Dgp::BinaryLogistic => {
                    let t = 0.5 + 0.5 * row[0];
                    let p0 = sigmoid(xb);
                    let p1 = sigmoid(xb + t);
                    let u: f64 = rng.random();
                    let p = if treated { p1 } else { p0 };
                    (if u < p { 1.0 } else { 0.0 }, p1 - p0)
                }
                Dgp::Nonlinear => {
                    let t = (row[0] + row[1]) / 2.0;
                    let base = (std::f64::consts::PI * row[0] * row[1]).sin()
                        + 2.0 * (row[2] - 0.5).powi(2);
                    (base + t * wf + eps, t)
                }
                Dgp::Confounded => (xb + row[0] + 0.5 * wf + eps, 0.5),
            };
            x.extend(row);
            w.push(usize::from(treated));
            y.push(yi);
            tau.push(ti);
        }
        // A draw with an empty group cannot form a frame; keep drawing from the
        // same stream so the result stays a function of the arguments.
        if !w.contains(&0) || !w.contains(&1) {
            continue;
        }
        let propensity = match dgp {
            Dgp::Confounded => None,
            _ => Some(vec![TREATMENT_PROB; n]),
        };
        let kind = if dgp == Dgp::BinaryLogistic {
            OutcomeKind::Binary
        } else {
            OutcomeKind::Continuous
        };
        let frame = ExperimentFrame::new(
            Matrix::new(n, d, x)?,
            w,
            y,
            propensity,
            kind,
            default_feature_names(d),
            vec!["0".into(), "1".into()],
        )?;
        let truth = SyntheticTruth {
            tau: Matrix::column_vector(&tau),
            dgp,
            seed,
        };
        return Ok((frame, truth));
    }
}
