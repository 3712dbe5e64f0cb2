use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use uplift_core::dataset::{Dgp, Schema};
use uplift_core::learners::{ForestParams, LearnerKind, LogisticParams};
use uplift_core::meta::{CateConfig, Method, DEFAULT_BOOTSTRAP, DEFAULT_PROPENSITY_CLIP};
use uplift_core::uplift_forest::{Criterion, UpliftForestSpec, DEFAULT_DELTA};
use uplift_core::{LearnerSpec, OutcomeKind};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(
    name = "uplift",
    version,
    about = "Uplift modeling: simulate, train, evaluate, target"
)]
pub struct Cli {
    /// JSON object of flag values; explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for forests and bootstrap draws. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic experiment CSV.
    Simulate(SimulateArgs),
    /// Fit a CATE model and save it as JSON.
    Train(TrainArgs),
    /// Write per-arm effect predictions for a CSV.
    Predict(PredictArgs),
    /// Uplift and Qini curves (and PEHE when true effects are present).
    Evaluate(EvaluateArgs),
    /// Best arm per row and the top-fraction targeting set.
    Recommend(RecommendArgs),
    /// Naive, IPW and CATE-mean average effects with bootstrap intervals.
    Impact(ImpactArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum DgpArg {
    Linear,
    HeterogeneousLinear,
    BinaryLogistic,
    Nonlinear,
    Confounded,
}

impl From<DgpArg> for Dgp {
    fn from(d: DgpArg) -> Self {
        match d {
            DgpArg::Linear => Dgp::Linear,
            DgpArg::HeterogeneousLinear => Dgp::HeterogeneousLinear,
            DgpArg::BinaryLogistic => Dgp::BinaryLogistic,
            DgpArg::Nonlinear => Dgp::Nonlinear,
            DgpArg::Confounded => Dgp::Confounded,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub dgp: DgpArg,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Append the true effect column `__tau`.
    #[arg(long)]
    pub truth: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum OutcomeKindArg {
    Continuous,
    Binary,
}

/// Column roles. Unset fields fall back to the model file (if any), then to
/// `w`, `0` and `y`.
#[derive(Debug, Args, Default)]
pub struct SchemaArgs {
    #[arg(long)]
    pub treatment: Option<String>,
    /// Label of the control group in the treatment column.
    #[arg(long)]
    pub control: Option<String>,
    #[arg(long)]
    pub outcome: Option<String>,
    /// Comma-separated feature columns; default is every other column not
    /// starting with `__`.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// Column of known treatment probabilities.
    #[arg(long)]
    pub propensity: Option<String>,
    #[arg(long, value_enum)]
    pub outcome_kind: Option<OutcomeKindArg>,
}

impl SchemaArgs {
    pub fn resolve(&self, fallback: &Schema) -> Schema {
        Schema {
            treatment: self
                .treatment
                .clone()
                .unwrap_or_else(|| fallback.treatment.clone()),
            control: self
                .control
                .clone()
                .unwrap_or_else(|| fallback.control.clone()),
            outcome: self
                .outcome
                .clone()
                .unwrap_or_else(|| fallback.outcome.clone()),
            features: self
                .features
                .clone()
                .unwrap_or_else(|| fallback.features.clone()),
            propensity: self
                .propensity
                .clone()
                .or_else(|| fallback.propensity.clone()),
            outcome_kind: self
                .outcome_kind
                .map(|k| match k {
                    OutcomeKindArg::Continuous => OutcomeKind::Continuous,
                    OutcomeKindArg::Binary => OutcomeKind::Binary,
                })
                .or(fallback.outcome_kind),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum MethodArg {
    S,
    T,
    X,
    R,
    UpliftForest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum BaseArg {
    Ridge,
    Logistic,
    Forest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum CriterionArg {
    Kl,
    Euclidean,
    ChiSquared,
}

/// Estimator choice and hyperparameters.
#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum, default_value = "t")]
    pub method: MethodArg,
    /// Base learner of the meta-learners.
    #[arg(long, value_enum, default_value = "ridge")]
    pub base: BaseArg,
    /// Ridge penalty.
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 100)]
    pub base_trees: usize,
    #[arg(long, default_value_t = 6)]
    pub base_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub base_min_leaf: usize,
    #[arg(long, default_value_t = 1.0)]
    pub base_subsample: f64,
    #[arg(long)]
    pub base_no_bootstrap: bool,
    /// Split criterion of the uplift forest.
    #[arg(long, value_enum, default_value = "kl")]
    pub criterion: CriterionArg,
    #[arg(long, default_value_t = 100)]
    pub n_trees: usize,
    #[arg(long, default_value_t = 5)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 10)]
    pub min_leaf_per_group: usize,
    /// Fraction of features tried per split; default sqrt(d)/d.
    #[arg(long)]
    pub feature_subsample: Option<f64>,
    #[arg(long)]
    pub no_bootstrap: bool,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, default_value_t = DEFAULT_PROPENSITY_CLIP)]
    pub propensity_clip: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

impl FitArgs {
    /// Builds and validates the estimator configuration.
    pub fn config(&self) -> Result<CateConfig, CliError> {
        let method = match self.method {
            MethodArg::S => Method::S,
            MethodArg::T => Method::T,
            MethodArg::X => Method::X,
            MethodArg::R => Method::R,
            MethodArg::UpliftForest => Method::UpliftForest,
        };
        let base = LearnerSpec {
            kind: match self.base {
                BaseArg::Ridge => LearnerKind::Ridge,
                BaseArg::Logistic => LearnerKind::Logistic,
                BaseArg::Forest => LearnerKind::RegressionForest,
            },
            ridge_lambda: self.lambda,
            forest: ForestParams {
                n_trees: self.base_trees,
                max_depth: self.base_depth,
                min_leaf: self.base_min_leaf,
                feature_subsample: self.base_subsample,
                bootstrap: !self.base_no_bootstrap,
            },
            logistic: LogisticParams::default(),
        };
        let forest = UpliftForestSpec {
            criterion: match self.criterion {
                CriterionArg::Kl => Criterion::Kl,
                CriterionArg::Euclidean => Criterion::Euclidean,
                CriterionArg::ChiSquared => Criterion::ChiSquared,
            },
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_leaf_per_group: self.min_leaf_per_group,
            feature_subsample: self.feature_subsample,
            bootstrap: !self.no_bootstrap,
            delta: self.delta,
        };
        let config = CateConfig {
            method,
            base,
            forest,
            propensity_clip: self.propensity_clip,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model_out: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Hold out this fraction of every arm and report its Qini coefficient.
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, args = ["model", "scores"])]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Score rows with this model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use this CSV column as the score of the single arm.
    #[arg(long)]
    pub scores: Option<String>,
    /// Curve file; with several arms `_<label>` is added before the extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    #[command(flatten)]
    pub schema: SchemaArgs,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct RecommendArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Recommend control unless the best effect exceeds this value.
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
    /// Fraction of rows flagged for targeting, ranked by best-arm effect.
    #[arg(long, default_value_t = 1.0)]
    pub fraction: f64,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct ImpactArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Bootstrap draws per interval.
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
    pub b: usize,
    /// Also write the reports to this JSON file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
