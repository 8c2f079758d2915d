use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use etnet::model::ModelConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detect,
    Cluster,
}

/// Everything a pipeline run needs. Serialized flat: the model keys
/// (`N_E`, `K`, `lambda`, ...) sit next to the run keys.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: Option<PathBuf>,
    /// Bins per window when the input is a raw value stream.
    pub window: usize,
    /// Fraction of the corpus used for training; the rest is the test split.
    pub train_fraction: f64,
    /// Fraction of training series replaced by injected anomalies.
    pub contamination: f64,
    pub task: Task,
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct RunKeys {
    data: Option<PathBuf>,
    window: usize,
    train_fraction: f64,
    contamination: f64,
    task: Task,
    out: Option<PathBuf>,
}

impl Default for RunKeys {
    fn default() -> Self {
        Self {
            data: None,
            window: 120,
            train_fraction: 0.4,
            contamination: 0.0,
            task: Task::Detect,
            out: None,
        }
    }
}

const RUN_KEYS: [&str; 6] = ["data", "window", "train_fraction", "contamination", "task", "out"];

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_parts(ModelConfig::default(), RunKeys::default())
    }
}

impl RunConfig {
    fn from_parts(model: ModelConfig, k: RunKeys) -> Self {
        Self {
            model,
            data: k.data,
            window: k.window,
            train_fraction: k.train_fraction,
            contamination: k.contamination,
            task: k.task,
            out: k.out,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).context("config is not valid JSON")?;
        let serde_json::Value::Object(mut all) = value else {
            bail!("config must be a JSON object");
        };
        let mut run = serde_json::Map::new();
        for key in RUN_KEYS {
            if let Some(v) = all.remove(key) {
                run.insert(key.to_string(), v);
            }
        }
        let keys: RunKeys = serde_json::from_value(run.into()).context("run settings")?;
        let model: ModelConfig = serde_json::from_value(all.into()).context("model settings")?;
        let cfg = Self::from_parts(model, keys);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_value()?)?)
    }

    pub fn to_value(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(&self.model)?;
        let run = serde_json::to_value(RunKeys {
            data: self.data.clone(),
            window: self.window,
            train_fraction: self.train_fraction,
            contamination: self.contamination,
            task: self.task,
            out: self.out.clone(),
        })?;
        if let (Some(m), serde_json::Value::Object(r)) = (v.as_object_mut(), run) {
            m.extend(r);
        }
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.window < 2 {
            bail!("window must be at least 2 bins, got {}", self.window);
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("train_fraction must lie in (0, 1), got {}", self.train_fraction);
        }
        if !(0.0..=0.5).contains(&self.contamination) {
            bail!("contamination must lie in [0, 0.5], got {}", self.contamination);
        }
        Ok(())
    }
}
