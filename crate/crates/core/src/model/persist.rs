//! Versioned JSON model files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Compressor, EnergyStats, EtNet, ModelConfig, Scaler};
use crate::cells::SrnnMask;
use crate::error::{Error, Result};
use crate::mixture::GmmState;
use crate::numcore::{ParamSet, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    shape: Vec<usize>,
    /// Row-major.
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PerBranch<T> {
    w: T,
    d: T,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    config: ModelConfig,
    series_len: usize,
    scaler: Scaler,
    params: Vec<NamedArray>,
    gmm: PerBranch<GmmState>,
    masks: Vec<SrnnMask>,
    energy_stats: PerBranch<EnergyStats>,
    training_scores: Vec<f64>,
}

fn arrays(params: &ParamSet) -> impl Iterator<Item = NamedArray> + '_ {
    params.iter().map(|(name, t)| NamedArray {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        data: t.data().to_vec(),
    })
}

impl EtNet {
    pub fn to_json(&self) -> Result<String> {
        let masks = match &self.w.compressor {
            Compressor::W(w) => w.masks(),
            Compressor::D(_) => unreachable!("w slot holds the W branch"),
        };
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            series_len: self.series_len,
            scaler: self.scaler,
            params: arrays(&self.w.params).chain(arrays(&self.d.params)).collect(),
            gmm: PerBranch {
                w: self.w.gmm.clone(),
                d: self.d.gmm.clone(),
            },
            masks,
            energy_stats: PerBranch {
                w: self.w.stats,
                d: self.d.stats,
            },
            training_scores: self.training_scores.clone(),
        };
        let mut out = serde_json::to_string_pretty(&file)?;
        out.push('\n');
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        match probe.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(Error::Format(format!("unsupported format_version {v}"))),
            None => return Err(Error::Format("missing format_version".into())),
        }
        let file: ModelFile = serde_json::from_value(probe)?;
        let mut model = EtNet::build(file.config, file.series_len, file.scaler)?;

        let mut tensors: Vec<(String, Tensor)> = Vec::with_capacity(file.params.len());
        for a in file.params {
            let t = Tensor::new(a.shape, a.data).map_err(|e| Error::Format(format!("{}: {e}", a.name)))?;
            tensors.push((a.name, t));
        }
        let (w, d): (Vec<_>, Vec<_>) = tensors.iter().partition(|(n, _)| n.starts_with("w."));
        model.w.params.load(w.into_iter().map(|(n, t)| (n.as_str(), t)))?;
        model.d.params.load(d.into_iter().map(|(n, t)| (n.as_str(), t)))?;

        if let Compressor::W(w) = &mut model.w.compressor {
            w.set_masks(file.masks)?;
        }
        for (slot, gmm) in [(&mut model.w, file.gmm.w), (&mut model.d, file.gmm.d)] {
            if gmm.k != model.config.k || gmm.dim != model.config.latent + 2 {
                return Err(Error::Format("mixture shape disagrees with config".into()));
            }
            gmm.factor()?;
            slot.gmm = gmm;
        }
        model.w.stats = file.energy_stats.w;
        model.d.stats = file.energy_stats.d;
        model.training_scores = file.training_scores;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
