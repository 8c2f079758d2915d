//! The assembled detector: two independently trained branches, each a
//! compression network followed by a membership net and a GMM, scored by
//! the larger of the two energies.

mod config;
mod persist;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::DilationSchedule;
use crate::compnet::{BranchShape, DBranch, Encoded, WBranch};
use crate::error::{Error, Result};
use crate::mixture::{GmmState, MembershipNet};
use crate::numcore::{Bound, Graph, ParamSet, Tensor};
use crate::series::TimeSeries;

pub use config::{ModelConfig, Scaler};
pub use persist::FORMAT_VERSION;
pub use train::{branch_loss, BranchHistory, EpochLoss, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    W,
    D,
}

impl BranchKind {
    pub fn name(self) -> &'static str {
        match self {
            BranchKind::W => "w",
            BranchKind::D => "d",
        }
    }

    fn stream(self) -> u64 {
        match self {
            BranchKind::W => 1,
            BranchKind::D => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Compressor {
    W(WBranch),
    D(DBranch),
}

impl Compressor {
    pub fn forward(&self, g: &mut Graph, b: &Bound, x: &Tensor) -> Result<Encoded> {
        match self {
            Compressor::W(w) => w.forward(g, b, x),
            Compressor::D(d) => d.forward(g, b, x),
        }
    }

    pub fn kind(&self) -> BranchKind {
        match self {
            Compressor::W(_) => BranchKind::W,
            Compressor::D(_) => BranchKind::D,
        }
    }
}

/// Mean and standard deviation of training-set energies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyStats {
    pub mean: f64,
    pub std: f64,
}

impl EnergyStats {
    fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }

    pub fn normalize(&self, e: f64) -> f64 {
        (e - self.mean) / self.std.max(1e-12)
    }
}

/// One branch with its estimation network and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchModel {
    pub compressor: Compressor,
    pub membership: MembershipNet,
    pub params: ParamSet,
    pub gmm: GmmState,
    pub stats: EnergyStats,
}

/// Latents, memberships and energies for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    /// `[batch, L_c + 2]`.
    pub z: Tensor,
    /// `[batch, K]`.
    pub gamma: Tensor,
    pub energy: Vec<f64>,
}

pub(crate) fn branch_rng(seed: u64, kind: BranchKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(kind.stream());
    rng
}

impl BranchModel {
    fn build(kind: BranchKind, cfg: &ModelConfig, series_len: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = ParamSet::new();
        let shape = |cell| BranchShape {
            cell,
            hidden: cfg.n_n,
            latent: cfg.latent,
            series_len,
            standard_lstm_output: cfg.standard_lstm_output,
        };
        let compressor = match kind {
            BranchKind::W => Compressor::W(WBranch::new(shape(cfg.w_cell), cfg.n_e, &mut params, rng)?),
            BranchKind::D => {
                let schedule = match &cfg.dilations {
                    Some(d) => DilationSchedule::new(d.clone())?,
                    None => DilationSchedule::exponential(cfg.n_l),
                };
                Compressor::D(DBranch::new(shape(cfg.d_cell), schedule, &mut params, rng)?)
            }
        };
        let membership = MembershipNet::new(
            &format!("{}.gamma", kind.name()),
            cfg.latent + 2,
            cfg.k,
            &mut params,
            rng,
        )?;
        Ok(Self {
            compressor,
            membership,
            params,
            gmm: GmmState::new(cfg.k, cfg.latent + 2, cfg.eps_reg)?,
            stats: EnergyStats { mean: 0.0, std: 1.0 },
        })
    }

    pub fn kind(&self) -> BranchKind {
        self.compressor.kind()
    }

    /// Latents and memberships of scaled rows, `chunk` rows per graph.
    pub fn encode(&self, x: &Tensor, chunk: usize) -> Result<(Tensor, Tensor)> {
        let (rows, len) = x.dims2();
        let width = self.gmm.dim;
        let mut z = Vec::with_capacity(rows * width);
        let mut gamma = Vec::with_capacity(rows * self.gmm.k);
        for start in (0..rows).step_by(chunk.max(1)) {
            let end = (start + chunk.max(1)).min(rows);
            let part = Tensor::matrix(end - start, len, x.data()[start * len..end * len].to_vec())?;
            let mut g = Graph::new();
            let b = self.params.bind_frozen(&mut g);
            let enc = self.compressor.forward(&mut g, &b, &part)?;
            let gm = self.membership.forward(&mut g, &b, enc.z)?;
            z.extend_from_slice(g.value(enc.z).data());
            gamma.extend_from_slice(g.value(gm).data());
        }
        Ok((
            Tensor::matrix(rows, width, z)?,
            Tensor::matrix(rows, self.gmm.k, gamma)?,
        ))
    }

    pub fn embed(&self, x: &Tensor, chunk: usize) -> Result<Embedding> {
        let (z, gamma) = self.encode(x, chunk)?;
        let energy = self.gmm.energies(&z)?;
        Ok(Embedding { z, gamma, energy })
    }

    /// φ-weighted mean of the component means.
    pub fn center(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.gmm.dim];
        let total: f64 = self.gmm.phi.iter().sum();
        for (phi, mu) in self.gmm.phi.iter().zip(&self.gmm.means) {
            for (ci, m) in c.iter_mut().zip(mu) {
                *ci += phi * m / total;
            }
        }
        c
    }
}

/// Scores and memberships of one series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub id: String,
    pub z_w: Vec<f64>,
    pub z_d: Vec<f64>,
    #[serde(rename = "E_w")]
    pub e_w: f64,
    #[serde(rename = "E_d")]
    pub e_d: f64,
    pub score: f64,
    pub gamma_w: Vec<f64>,
    pub gamma_d: Vec<f64>,
    pub cluster: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Pick the branch whose largest membership is larger (W on ties) and
/// return that branch's most probable component (lowest index on ties).
pub fn cluster_assign(gamma_w: &[f64], gamma_d: &[f64]) -> usize {
    let best = |g: &[f64]| {
        g.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
    };
    let (iw, mw) = best(gamma_w);
    let (id, md) = best(gamma_d);
    if md > mw {
        id
    } else {
        iw
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub id: String,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinePoint {
    /// Fraction of the way from the anomaly to the center.
    pub position: f64,
    pub z: Vec<f64>,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub branch: BranchKind,
    pub anomaly_z: Vec<f64>,
    pub center: Vec<f64>,
    /// Anomaly end first.
    pub points: Vec<LinePoint>,
}

/// Trained detector.
#[derive(Clone, Debug, PartialEq)]
pub struct EtNet {
    pub config: ModelConfig,
    pub series_len: usize,
    pub scaler: Scaler,
    pub w: BranchModel,
    pub d: BranchModel,
    /// Ensemble scores of the training set, ascending.
    pub training_scores: Vec<f64>,
}

impl EtNet {
    /// Untrained model with freshly initialized parameters.
    pub fn build(config: ModelConfig, series_len: usize, scaler: Scaler) -> Result<Self> {
        config.validate()?;
        if series_len == 0 {
            return Err(Error::invalid("series_len", "must be at least 1"));
        }
        let w = BranchModel::build(
            BranchKind::W,
            &config,
            series_len,
            &mut branch_rng(config.seed, BranchKind::W),
        )?;
        let d = BranchModel::build(
            BranchKind::D,
            &config,
            series_len,
            &mut branch_rng(config.seed, BranchKind::D),
        )?;
        Ok(Self {
            config,
            series_len,
            scaler,
            w,
            d,
            training_scores: Vec::new(),
        })
    }

    pub fn branch(&self, kind: BranchKind) -> &BranchModel {
        match kind {
            BranchKind::W => &self.w,
            BranchKind::D => &self.d,
        }
    }

    /// Scaled `[batch, len]` matrix of the series values.
    pub fn prepare(&self, data: &[TimeSeries]) -> Result<Tensor> {
        if data.is_empty() {
            return Err(Error::EmptyInput("series set"));
        }
        let mut values = Vec::with_capacity(data.len() * self.series_len);
        for s in data {
            if s.len() != self.series_len {
                return Err(Error::LengthMismatch {
                    expected: self.series_len,
                    actual: s.len(),
                });
            }
            values.extend(s.values.iter().map(|&v| self.scaler.apply(v)));
        }
        Tensor::matrix(data.len(), self.series_len, values)
    }

    /// `max(E_w, E_d)`, after z-scoring each energy when configured.
    pub fn combine(&self, e_w: f64, e_d: f64) -> f64 {
        if self.config.normalize_ensemble_energy {
            self.w.stats.normalize(e_w).max(self.d.stats.normalize(e_d))
        } else {
            e_w.max(e_d)
        }
    }

    pub fn score(&self, data: &[TimeSeries]) -> Result<Vec<ScoredSample>> {
        let x = self.prepare(data)?;
        let chunk = self.config.chunk_size;
        let ew = self.w.embed(&x, chunk)?;
        let ed = self.d.embed(&x, chunk)?;
        Ok(data
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let gamma_w = ew.gamma.row(i).to_vec();
                let gamma_d = ed.gamma.row(i).to_vec();
                ScoredSample {
                    id: s.id.clone(),
                    z_w: ew.z.row(i).to_vec(),
                    z_d: ed.z.row(i).to_vec(),
                    e_w: ew.energy[i],
                    e_d: ed.energy[i],
                    score: self.combine(ew.energy[i], ed.energy[i]),
                    cluster: cluster_assign(&gamma_w, &gamma_d),
                    gamma_w,
                    gamma_d,
                    label: s.label.clone(),
                }
            })
            .collect())
    }

    pub fn anomaly_score(&self, x: &TimeSeries) -> Result<ScoredSample> {
        Ok(self.score(std::slice::from_ref(x))?.remove(0))
    }

    pub fn cluster(&self, data: &[TimeSeries]) -> Result<Vec<usize>> {
        Ok(self.score(data)?.into_iter().map(|s| s.cluster).collect())
    }

    /// Score at the given percentile of training scores, linearly
    /// interpolated between order statistics.
    pub fn threshold(&self, percentile: f64) -> Result<f64> {
        if !(0.0..=100.0).contains(&percentile) {
            return Err(Error::invalid("percentile", format!("{percentile} not in [0, 100]")));
        }
        let s = &self.training_scores;
        if s.is_empty() {
            return Err(Error::EmptyInput("training scores"));
        }
        let pos = percentile / 100.0 * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        Ok(s[lo] + (s[hi] - s[lo]) * (pos - lo as f64))
    }

    /// Training samples nearest to `n_points` equally spaced interior points
    /// of the latent segment from `anomaly` to the branch's normal center.
    pub fn attribute(
        &self,
        anomaly: &TimeSeries,
        training: &[TimeSeries],
        branch: BranchKind,
        n_points: usize,
        k_neighbors: usize,
    ) -> Result<Attribution> {
        if training.is_empty() {
            return Err(Error::EmptyInput("training set"));
        }
        if n_points == 0 || k_neighbors == 0 {
            return Err(Error::invalid("n_points", "points and neighbors must be at least 1"));
        }
        let b = self.branch(branch);
        let (za, _) = b.encode(&self.prepare(std::slice::from_ref(anomaly))?, 1)?;
        let (zt, _) = b.encode(&self.prepare(training)?, self.config.chunk_size)?;
        let anomaly_z = za.row(0).to_vec();
        let center = b.center();
        let points = (0..n_points)
            .map(|j| {
                let t = (j + 1) as f64 / (n_points + 1) as f64;
                let z: Vec<f64> = anomaly_z
                    .iter()
                    .zip(&center)
                    .map(|(a, c)| a + t * (c - a))
                    .collect();
                let mut all: Vec<(f64, usize)> = (0..training.len())
                    .map(|i| (euclid(zt.row(i), &z), i))
                    .collect();
                all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let neighbors = all
                    .into_iter()
                    .take(k_neighbors)
                    .map(|(distance, index)| Neighbor {
                        index,
                        id: training[index].id.clone(),
                        distance,
                    })
                    .collect();
                LinePoint {
                    position: t,
                    z,
                    neighbors,
                }
            })
            .collect();
        Ok(Attribution {
            branch,
            anomaly_z,
            center,
            points,
        })
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
