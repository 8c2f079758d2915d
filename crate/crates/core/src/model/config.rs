use serde::{Deserialize, Serialize};

use crate::cells::CellKind;
use crate::error::{Error, Result};
use crate::mixture::DEFAULT_EPS_REG;

/// Hyperparameters of both branches and of training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Encoder/decoder pairs in the W branch.
    #[serde(rename = "N_E")]
    pub n_e: usize,
    /// Dilated layers in the D branch.
    #[serde(rename = "N_L")]
    pub n_l: usize,
    /// Hidden width of every recurrent cell.
    #[serde(rename = "N_N")]
    pub n_n: usize,
    /// Mixture components per branch.
    #[serde(rename = "K")]
    pub k: usize,
    /// Compressed latent width.
    #[serde(rename = "L_c")]
    pub latent: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop when the loss has not improved by `early_stop_tol` for this many
    /// epochs; 0 disables.
    pub early_stop_patience: usize,
    pub early_stop_tol: f64,
    pub seed: u64,
    pub w_cell: CellKind,
    pub d_cell: CellKind,
    /// Replaces the `3^i` dilations when set.
    pub dilations: Option<Vec<usize>>,
    pub eps_reg: f64,
    pub em_iterations: usize,
    pub standard_lstm_output: bool,
    pub normalize_ensemble_energy: bool,
    /// Weight of the cross-entropy pulling γ towards the EM posteriors.
    pub membership_weight: f64,
    /// Samples per Adam step; 0 trains on the whole set at once.
    pub batch_size: usize,
    /// Largest number of distinct rows recorded in one graph; bigger training
    /// sets are processed in chunks with identical gradients.
    pub chunk_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_e: 3,
            n_l: 2,
            n_n: 8,
            k: 3,
            latent: 1,
            lambda: 0.1,
            learning_rate: 1e-3,
            epochs: 200,
            early_stop_patience: 20,
            early_stop_tol: 1e-6,
            seed: 0,
            w_cell: CellKind::Lstm,
            d_cell: CellKind::Gru,
            dilations: None,
            eps_reg: DEFAULT_EPS_REG,
            em_iterations: 1,
            standard_lstm_output: false,
            normalize_ensemble_energy: false,
            membership_weight: 1.0,
            batch_size: 8,
            chunk_size: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("N_E", self.n_e),
            ("N_L", self.n_l),
            ("N_N", self.n_n),
            ("K", self.k),
            ("L_c", self.latent),
            ("em_iterations", self.em_iterations),
            ("chunk_size", self.chunk_size),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("eps_reg", self.eps_reg),
            ("membership_weight", self.membership_weight),
            ("early_stop_tol", self.early_stop_tol),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("{v} must be finite and >= 0")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if let Some(d) = &self.dilations {
            if d.len() != self.n_l {
                return Err(Error::invalid(
                    "dilations",
                    format!("{} entries for N_L = {}", d.len(), self.n_l),
                ));
            }
            if d.contains(&0) {
                return Err(Error::invalid("dilations", "every dilation must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Dataset-wide min-max scaling to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: f64,
    pub max: f64,
}

impl Scaler {
    pub fn fit<'a>(series: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for s in series {
            for &v in s {
                if !v.is_finite() {
                    return Err(Error::invalid("values", "series contain a non-finite value"));
                }
                min = min.min(v);
                max = max.max(v);
            }
        }
        if min > max {
            return Err(Error::EmptyInput("training set"));
        }
        Ok(Self { min, max })
    }

    fn span(&self) -> f64 {
        let s = self.max - self.min;
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / self.span()
    }

    pub fn apply_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&v| self.apply(v)).collect()
    }
}
