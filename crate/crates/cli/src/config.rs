use std::path::{Path, PathBuf};

use acae_core::data::{BinarizeMode, ColumnRoles, LogFormat};
use acae_core::{ActivationKind, AdvConfig, NoiseSite, PretrainConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub gamma: f64,
    pub out: PathBuf,
    pub dataset: DatasetSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub adversarial: AdversarialSection,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    pub format: String,
    pub threshold: f64,
    pub mode: String,
    pub dedupe: bool,
    pub user_column: usize,
    pub item_column: usize,
    pub rating_column: usize,
    /// Negative means the log has no timestamps.
    pub timestamp_column: i64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            path: PathBuf::new(),
            format: "double_colon".into(),
            threshold: 3.0,
            mode: "above_is_one".into(),
            dedupe: false,
            user_column: 0,
            item_column: 1,
            rating_column: 2,
            timestamp_column: 3,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub seed: Option<u64>,
    pub n_neg: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { seed: None, n_neg: 200 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub k: usize,
    pub encoder: String,
    pub decoder: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            k: 64,
            encoder: "sigmoid".into(),
            decoder: "sigmoid".into(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub init_std: f64,
    pub eval_every: usize,
    pub patience: usize,
    pub input_drop: f64,
    pub seed: Option<u64>,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let d = PretrainConfig::default();
        PretrainSection {
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            init_std: d.init_std,
            eval_every: d.eval_every,
            patience: d.patience,
            input_drop: d.input_drop,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialSection {
    pub epsilon: f64,
    pub lambda_encoder: f64,
    pub lambda_decoder: f64,
    pub lambda_embedding: f64,
    pub lambda_hidden: f64,
    pub base_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub seed: Option<u64>,
}

impl Default for AdversarialSection {
    fn default() -> Self {
        let d = AdvConfig::default();
        AdversarialSection {
            epsilon: d.epsilon,
            lambda_encoder: 1.0,
            lambda_decoder: 1.0,
            lambda_embedding: 0.0,
            lambda_hidden: 0.0,
            base_rate: d.adagrad_base_rate,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            eval_every: d.eval_every,
            patience: d.patience,
            seed: None,
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` to a TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), UsageError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| UsageError(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| UsageError(format!("override {key:?}: {part} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>, out: Option<&Path>) -> Result<ExperimentConfig, UsageError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| UsageError(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("config: {e}")))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = o.to_path_buf();
    }
    if cfg.out.as_os_str().is_empty() {
        cfg.out = PathBuf::from("out");
    }
    if !cfg.gamma.is_finite() || cfg.gamma < 0.0 {
        return Err(UsageError("gamma must be >= 0".into()));
    }
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn require_dataset(&self) -> Result<&Path, UsageError> {
        let p = &self.dataset.path;
        if p.as_os_str().is_empty() {
            return Err(UsageError("dataset.path is not set".into()));
        }
        if !p.is_file() {
            return Err(UsageError(format!("dataset file {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn format(&self) -> Result<LogFormat, UsageError> {
        self.dataset.format.parse().map_err(|e| UsageError(format!("dataset.format: {e}")))
    }

    pub fn mode(&self) -> Result<BinarizeMode, UsageError> {
        self.dataset.mode.parse().map_err(|e| UsageError(format!("dataset.mode: {e}")))
    }

    pub fn roles(&self) -> ColumnRoles {
        let d = &self.dataset;
        ColumnRoles {
            user: d.user_column,
            item: d.item_column,
            rating: d.rating_column,
            timestamp: usize::try_from(d.timestamp_column).ok(),
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(self.seed)
    }

    pub fn activations(&self) -> Result<(ActivationKind, ActivationKind), UsageError> {
        let parse = |s: &str, what: &str| {
            s.parse::<ActivationKind>()
                .map_err(|e| UsageError(format!("model.{what}: {e}")))
        };
        Ok((parse(&self.model.encoder, "encoder")?, parse(&self.model.decoder, "decoder")?))
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        let p = &self.pretrain;
        PretrainConfig {
            learning_rate: p.learning_rate,
            batch_size: p.batch_size,
            max_epochs: p.max_epochs,
            gamma: self.gamma,
            init_std: p.init_std,
            eval_every: p.eval_every,
            patience: p.patience,
            input_drop: p.input_drop,
            seed: p.seed.unwrap_or(self.seed),
        }
    }

    pub fn adv_config(&self) -> AdvConfig {
        let a = &self.adversarial;
        AdvConfig {
            epsilon: a.epsilon,
            lambdas: vec![
                (NoiseSite::EncoderWeights, a.lambda_encoder),
                (NoiseSite::DecoderWeights, a.lambda_decoder),
                (NoiseSite::UserEmbedding, a.lambda_embedding),
                (NoiseSite::HiddenLayer, a.lambda_hidden),
            ],
            adagrad_base_rate: a.base_rate,
            batch_size: a.batch_size,
            max_epochs: a.max_epochs,
            eval_every: a.eval_every,
            patience: a.patience,
            seed: a.seed.unwrap_or(self.seed.wrapping_add(1)),
        }
    }
}
