use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NORMAL: &str = "normal";

/// One univariate series of per-bin volumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub id: String,
    /// Seconds per bin.
    pub interval: f64,
    /// `normal`, `anomaly-<type>`, a cluster name, or nothing.
    pub label: Option<String>,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(id: impl Into<String>, interval: f64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("series values"));
        }
        if !(interval > 0.0 && interval.is_finite()) {
            return Err(Error::invalid("interval", format!("{interval} is not a positive number")));
        }
        Ok(Self {
            id: id.into(),
            interval,
            label: None,
            values,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Anything labeled other than `normal` counts as anomalous; unlabeled
    /// series have no binary label.
    pub fn is_anomalous(&self) -> Option<bool> {
        self.label.as_deref().map(|l| l != NORMAL)
    }
}

pub fn anomaly_label(kind: u8) -> String {
    format!("anomaly-{kind}")
}
