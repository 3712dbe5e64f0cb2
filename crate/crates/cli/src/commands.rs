use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use uplift_core::dataset::{
    self, frame_from_table, generate_synthetic, naive_ate, stratified_split, truth_columns,
    CsvTable, Schema, PROPENSITY_COLUMN,
};
use uplift_core::eval::{emit_curve, pehe_values, uplift_curve_for_arm, CurveFormat};
use uplift_core::meta::{
    ate_from_cate, fit_cate, ipw_ate, naive_report, predict_cate, recommend_from_effects,
    top_k_by_score,
};
use uplift_core::{Error, ExperimentFrame, Matrix};

use crate::args::{
    Command, EvaluateArgs, FormatArg, ImpactArgs, PredictArgs, RecommendArgs, SimulateArgs,
    TrainArgs,
};
use crate::error::CliError;
use crate::model_file::ModelFile;
use crate::output::Staging;

pub fn dispatch(command: Command) -> Result<Value, CliError> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Recommend(a) => recommend(a),
        Command::Impact(a) => impact(a),
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn simulate(a: SimulateArgs) -> Result<Value, CliError> {
    let (frame, truth) = generate_synthetic(a.dgp.into(), a.n, a.d, a.seed)?;
    let mut staging = Staging::default();
    let out = staging.path_for(&a.out)?;
    let schema = Schema {
        propensity: Some(PROPENSITY_COLUMN.to_owned()),
        ..Schema::default()
    };
    dataset::write_csv(&frame, &out, &schema, a.truth.then_some(&truth))?;
    staging.commit()?;
    Ok(json!({
        "command": "simulate",
        "dgp": truth.dgp.as_str(),
        "n": frame.n(),
        "d": frame.d(),
        "seed": a.seed,
        "naive_ate": naive_ate(&frame, 1)?,
        "out": display(&a.out),
    }))
}

fn check_fraction(name: &str, v: f64, closed_top: bool) -> Result<(), CliError> {
    let ok = v > 0.0 && (v < 1.0 || (closed_top && v == 1.0));
    if ok {
        Ok(())
    } else {
        let range = if closed_top { "(0, 1]" } else { "(0, 1)" };
        Err(CliError::Usage(format!(
            "--{name} must lie in {range}, got {v}"
        )))
    }
}

fn column_means(m: &Matrix) -> Vec<f64> {
    (0..m.ncols())
        .map(|k| m.column(k).iter().sum::<f64>() / m.nrows() as f64)
        .collect()
}

fn by_arm(labels: &[String], values: &[f64]) -> Value {
    let map: Map<String, Value> = labels[1..]
        .iter()
        .zip(values)
        .map(|(l, v)| (l.clone(), json!(v)))
        .collect();
    Value::Object(map)
}

/// Scores of every model arm for the rows of `frame`, with the frame's arm
/// index for each model arm.
fn model_scores(
    file: &ModelFile,
    frame: &ExperimentFrame,
) -> Result<Vec<(usize, Vec<f64>)>, CliError> {
    let tau = predict_cate(&file.model, frame.features())?;
    file.arm_labels[1..]
        .iter()
        .enumerate()
        .map(|(k, label)| {
            let arm = frame.arm_index(label).filter(|&i| i > 0).ok_or_else(|| {
                Error::Invariant(format!("model arm `{label}` does not occur in the data"))
            })?;
            Ok((arm, tau.column(k)))
        })
        .collect()
}

fn train(a: TrainArgs) -> Result<Value, CliError> {
    let config = a.fit.config()?;
    if let Some(f) = a.test_fraction {
        check_fraction("test-fraction", f, false)?;
    }
    let schema = a.schema.resolve(&Schema::default());
    let mut staging = Staging::default();
    let model_path = staging.path_for(&a.model_out)?;

    let frame = dataset::load_csv(&a.data, &schema)?;
    let (train, test) = match a.test_fraction {
        Some(f) => {
            let (tr, te) = stratified_split(&frame, f, a.fit.seed)?;
            (tr, Some(te))
        }
        None => (frame, None),
    };
    let model = fit_cate(&train, &config, a.fit.seed)?;
    let schema = Schema {
        features: train.feature_names().to_vec(),
        ..schema
    };
    let file = ModelFile::new(model, schema);
    fs::write(&model_path, file.to_json()?)?;

    let labels = &file.arm_labels;
    let mut summary = json!({
        "command": "train",
        "method": file.method.as_str(),
        "seed": a.fit.seed,
        "n_train": train.n(),
        "arms": labels[1..].to_vec(),
        "mean_effect": by_arm(labels, &column_means(&predict_cate(&file.model, train.features())?)),
        "model": display(&a.model_out),
    });
    if let Some(test) = test {
        let scores = model_scores(&file, &test)?;
        let q = scores
            .iter()
            .map(|(arm, s)| Ok(uplift_curve_for_arm(s, &test, *arm)?.qini_coefficient))
            .collect::<Result<Vec<_>, Error>>()?;
        summary["n_test"] = json!(test.n());
        summary["holdout_qini"] = by_arm(labels, &q);
    }
    staging.commit()?;
    Ok(summary)
}

fn write_table(
    path: &Path,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn predict(a: PredictArgs) -> Result<Value, CliError> {
    let file = ModelFile::load(&a.model)?;
    let mut staging = Staging::default();
    let out = staging.path_for(&a.out)?;
    let table = CsvTable::read(&a.data)?;
    let tau = predict_cate(&file.model, &table.matrix(&file.feature_names)?)?;
    let header: Vec<String> = file.arm_labels[1..]
        .iter()
        .map(|l| format!("cate_{l}"))
        .collect();
    write_table(
        &out,
        &header,
        tau.rows_iter()
            .map(|r| r.iter().map(f64::to_string).collect()),
    )?;
    staging.commit()?;
    Ok(json!({
        "command": "predict",
        "rows": tau.nrows(),
        "arms": file.arm_labels[1..].to_vec(),
        "out": display(&a.out),
    }))
}

/// `curve.csv` becomes `curve_<label>.csv`.
fn arm_path(path: &Path, label: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{label}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{label}"),
    };
    path.with_file_name(name)
}

fn evaluate(a: EvaluateArgs) -> Result<Value, CliError> {
    let format = match a.format {
        FormatArg::Csv => CurveFormat::Csv,
        FormatArg::Json => CurveFormat::Json,
    };
    let model = a.model.as_deref().map(ModelFile::load).transpose()?;
    let schema = a
        .schema
        .resolve(model.as_ref().map_or(&Schema::default(), |m| &m.schema));
    let mut staging = Staging::default();
    staging.reserve(&a.out)?;

    let table = CsvTable::read(&a.data)?;
    let frame = frame_from_table(&table, &schema)?;
    let scores: Vec<(usize, Vec<f64>)> = match (&model, &a.scores) {
        (Some(m), _) => model_scores(m, &frame)?,
        (None, Some(col)) => {
            let s = table.numeric_column(col)?;
            (1..=frame.n_arms()).map(|k| (k, s.clone())).collect()
        }
        (None, None) => unreachable!("clap requires --model or --scores"),
    };
    let truth_cols = truth_columns(frame.arm_labels());
    let mut arms = Vec::new();
    for (arm, s) in &scores {
        let label = &frame.arm_labels()[*arm];
        let curve = uplift_curve_for_arm(s, &frame, *arm)?;
        let dest = if scores.len() == 1 {
            a.out.clone()
        } else {
            arm_path(&a.out, label)
        };
        let staged = staging.path_for(&dest)?;
        if format == CurveFormat::Csv {
            staging.path_for(&uplift_core::eval::sidecar_path(&dest))?;
        }
        emit_curve(&curve, &staged, format)?;
        let mut entry = json!({
            "arm": label,
            "auuc": curve.auuc,
            "qini_coefficient": curve.qini_coefficient,
            "out": display(&dest),
        });
        if let Ok(tau) = table.numeric_column(&truth_cols[arm - 1]) {
            entry["pehe"] = json!(pehe_values(s, &tau)?);
        }
        arms.push(entry);
    }
    staging.commit()?;
    Ok(json!({ "command": "evaluate", "n": frame.n(), "arms": arms }))
}

fn recommend(a: RecommendArgs) -> Result<Value, CliError> {
    check_fraction("fraction", a.fraction, true)?;
    if !a.threshold.is_finite() {
        return Err(CliError::Usage("--threshold must be finite".into()));
    }
    let file = ModelFile::load(&a.model)?;
    let mut staging = Staging::default();
    let out = staging.path_for(&a.out)?;
    let table = CsvTable::read(&a.data)?;
    let tau = predict_cate(&file.model, &table.matrix(&file.feature_names)?)?;
    let best = recommend_from_effects(&tau, a.threshold);
    let scores: Vec<f64> = tau
        .rows_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut targeted = vec![false; scores.len()];
    for i in top_k_by_score(&scores, a.fraction)? {
        targeted[i] = true;
    }
    let labels = &file.arm_labels;
    write_table(
        &out,
        &["recommended".to_owned(), "targeted".to_owned()],
        best.iter()
            .zip(&targeted)
            .map(|(&b, &t)| vec![labels[b].clone(), u8::from(t).to_string()]),
    )?;
    staging.commit()?;
    let mut counts = Map::new();
    for (k, l) in labels.iter().enumerate() {
        counts.insert(l.clone(), json!(best.iter().filter(|&&b| b == k).count()));
    }
    Ok(json!({
        "command": "recommend",
        "rows": best.len(),
        "targeted": targeted.iter().filter(|&&t| t).count(),
        "recommended": counts,
        "out": display(&a.out),
    }))
}

fn impact(a: ImpactArgs) -> Result<Value, CliError> {
    let config = a.fit.config()?;
    if a.b < 10 {
        return Err(CliError::Usage(format!(
            "--b must be at least 10, got {}",
            a.b
        )));
    }
    let schema = a.schema.resolve(&Schema::default());
    let mut staging = Staging::default();
    let out = a.out.as_deref().map(|p| staging.path_for(p)).transpose()?;

    let frame = dataset::load_csv(&a.data, &schema)?;
    let seed = a.fit.seed;
    let mut reports = Vec::new();
    for arm in 1..=frame.n_arms() {
        reports.push(naive_report(&frame, arm, a.b, seed)?);
        reports.push(ipw_ate(&frame, arm, config.propensity_clip, a.b, seed)?);
    }
    let model = fit_cate(&frame, &config, seed)?;
    reports.extend(ate_from_cate(&model, &frame, a.b, seed)?);
    if let Some(out) = out {
        let mut s = serde_json::to_string_pretty(&reports)?;
        s.push('\n');
        fs::write(out, s)?;
    }
    staging.commit()?;
    let mut summary = json!({
        "command": "impact",
        "method": model.method().as_str(),
        "seed": seed,
        "reports": reports,
    });
    if let Some(p) = &a.out {
        summary["out"] = json!(display(p));
    }
    Ok(summary)
}
