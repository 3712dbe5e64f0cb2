use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use uplift_core::dataset::Schema;
use uplift_core::meta::{CateModel, Method};

use crate::error::CliError;

pub const SCHEMA_VERSION: &str = "1";

/// Saved model: the fitted estimator plus what is needed to apply it to a
/// new CSV. Holds no timestamps so identical runs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: String,
    pub method: Method,
    pub arm_labels: Vec<String>,
    pub feature_names: Vec<String>,
    /// Column roles used at training time; `features` lists the columns in
    /// model order.
    pub schema: Schema,
    pub seed: u64,
    pub created_by: String,
    pub model: CateModel,
}

impl ModelFile {
    pub fn new(model: CateModel, schema: Schema) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_owned(),
            method: model.method(),
            arm_labels: model.arm_labels.clone(),
            feature_names: schema.features.clone(),
            schema,
            seed: model.seed,
            created_by: concat!("uplift ", env!("CARGO_PKG_VERSION")).to_owned(),
            model,
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| CliError::Model(format!("not valid JSON: {e}")))?;
        match value.get("schema_version").and_then(Value::as_str) {
            Some(SCHEMA_VERSION) => {}
            Some(other) => {
                return Err(CliError::Model(format!(
                    "unsupported schema_version `{other}` (expected `{SCHEMA_VERSION}`)"
                )))
            }
            None => return Err(CliError::Model("missing schema_version".into())),
        }
        let file: ModelFile = serde_json::from_value(value)
            .map_err(|e| CliError::Model(format!("malformed model: {e}")))?;
        let m = &file.model;
        if m.method() != file.method
            || m.arm_labels != file.arm_labels
            || m.n_features != file.feature_names.len()
            || file.schema.features != file.feature_names
        {
            return Err(CliError::Model(
                "header fields disagree with the stored model".into(),
            ));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Model(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use uplift_core::dataset::{generate_synthetic, Dgp};
    use uplift_core::meta::{fit_cate, CateConfig};
    use uplift_core::LearnerSpec;

    fn file(method: Method) -> ModelFile {
        let (frame, _) = generate_synthetic(Dgp::BinaryLogistic, 300, 3, 5).unwrap();
        let mut config = CateConfig::new(method, LearnerSpec::ridge(1e-3));
        config.forest.n_trees = 3;
        let model = fit_cate(&frame, &config, 5).unwrap();
        let schema = Schema {
            features: frame.feature_names().to_vec(),
            ..Schema::default()
        };
        ModelFile::new(model, schema)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for method in Method::ALL {
            let text = file(method).to_json().unwrap();
            let back = ModelFile::from_json(&text).unwrap();
            assert_eq!(back, file(method));
            assert_eq!(back.to_json().unwrap(), text);
        }
    }

    #[test]
    fn rejects_other_versions_and_inconsistent_headers() {
        let mut v: Value = serde_json::from_str(&file(Method::T).to_json().unwrap()).unwrap();
        v["schema_version"] = Value::from("2");
        assert!(ModelFile::from_json(&v.to_string()).is_err());
        v["schema_version"] = Value::from("1");
        assert!(ModelFile::from_json(&v.to_string()).is_ok());
        v["arm_labels"] = serde_json::json!(["0", "z"]);
        assert!(ModelFile::from_json(&v.to_string()).is_err());
        assert!(ModelFile::from_json("{}").is_err());
    }
}
