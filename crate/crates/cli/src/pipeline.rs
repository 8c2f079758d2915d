use std::collections::HashSet;

use anyhow::{anyhow, bail, Result};
use etnet::datagen::{contaminate_training, synthesize, AnomalyParams, SynthSpec};
use etnet::eval::{auc, dtw, edr, euclidean, nmi, LabeledScores, MetricReport};
use etnet::mixture::GmmState;
use etnet::model::{BranchKind, EtNet, ScoredSample, TrainReport};
use etnet::TimeSeries;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{RunConfig, Task};

// Keeps the split and contamination streams apart from model initialization.
const SPLIT_STREAM: u64 = 0x5eed_0001;
const CONTAMINATION_STREAM: u64 = 0x5eed_0002;

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<TimeSeries>,
    pub test: Vec<TimeSeries>,
    /// Ids of training series replaced by injected anomalies.
    pub contaminated: Vec<String>,
}

/// Detection keeps every labeled anomaly in the test split and draws
/// ⌊train_fraction·N⌋ training series from the rest; clustering draws them
/// from the whole corpus. Both splits keep corpus order.
pub fn split(data: &[TimeSeries], cfg: &RunConfig) -> Result<Split> {
    let mut pool: Vec<usize> = match cfg.task {
        Task::Detect => (0..data.len())
            .filter(|&i| !data[i].is_anomalous().unwrap_or(false))
            .collect(),
        Task::Cluster => (0..data.len()).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.model.seed ^ SPLIT_STREAM);
    pool.shuffle(&mut rng);
    let n_train = ((cfg.train_fraction * data.len() as f64).floor() as usize).min(pool.len());
    if n_train == 0 {
        bail!("training split is empty: {} series, fraction {}", data.len(), cfg.train_fraction);
    }
    let picked: HashSet<usize> = pool[..n_train].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in data.iter().enumerate() {
        if picked.contains(&i) {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }
    let mut contaminated = Vec::new();
    if cfg.contamination > 0.0 {
        let (dirty, idx) = contaminate_training(
            &train,
            cfg.contamination,
            &[1, 2, 3, 4],
            &AnomalyParams::default(),
            cfg.model.seed ^ CONTAMINATION_STREAM,
        )?;
        contaminated = idx.iter().map(|&i| dirty[i].id.clone()).collect();
        train = dirty;
    }
    Ok(Split {
        train,
        test,
        contaminated,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config: serde_json::Value,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub contaminated_ids: Vec<String>,
    pub history: TrainReport,
    pub gmm_w: GmmState,
    pub gmm_d: GmmState,
}

pub fn run_train(cfg: &RunConfig, data: &[TimeSeries]) -> Result<(EtNet, Split, TrainSummary)> {
    cfg.validate()?;
    let split = split(data, cfg)?;
    let (model, history) = EtNet::train(cfg.model.clone(), &split.train)?;
    let summary = TrainSummary {
        config: cfg.to_value()?,
        train_ids: split.train.iter().map(|s| s.id.clone()).collect(),
        test_ids: split.test.iter().map(|s| s.id.clone()).collect(),
        contaminated_ids: split.contaminated.clone(),
        history,
        gmm_w: model.w.gmm.clone(),
        gmm_d: model.d.gmm.clone(),
    };
    Ok((model, split, summary))
}

/// One emitted score line; `flag` appears when a threshold was requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    #[serde(flatten)]
    pub sample: ScoredSample,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flag: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreOutput {
    pub rows: Vec<ScoreRow>,
    pub threshold: Option<f64>,
    pub auc: Option<f64>,
}

/// Binary labels when every sample has one and both classes occur.
pub fn binary_labels(data: &[TimeSeries]) -> Option<Vec<bool>> {
    let labels: Vec<bool> = data.iter().map(|s| s.is_anomalous()).collect::<Option<_>>()?;
    let pos = labels.iter().filter(|&&l| l).count();
    (pos > 0 && pos < labels.len()).then_some(labels)
}

pub fn run_score(model: &EtNet, data: &[TimeSeries], threshold_percentile: Option<f64>) -> Result<ScoreOutput> {
    let scored = model.score(data)?;
    let threshold = threshold_percentile.map(|p| model.threshold(p)).transpose()?;
    let auc = match binary_labels(data) {
        Some(labels) => Some(auc(&LabeledScores::new(labels, scored.iter().map(|s| s.score).collect())?)),
        None => None,
    };
    let rows = scored
        .into_iter()
        .map(|sample| ScoreRow {
            flag: threshold.map(|t| sample.score > t),
            sample,
        })
        .collect();
    Ok(ScoreOutput { rows, threshold, auc })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub id: String,
    pub cluster: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterOutput {
    pub rows: Vec<ClusterRow>,
    pub scored: Vec<ScoredSample>,
    pub nmi: Option<f64>,
}

pub fn run_cluster(model: &EtNet, data: &[TimeSeries]) -> Result<ClusterOutput> {
    let scored = model.score(data)?;
    let rows: Vec<ClusterRow> = scored
        .iter()
        .map(|s| ClusterRow {
            id: s.id.clone(),
            cluster: s.cluster,
            label: s.label.clone(),
        })
        .collect();
    let gold: Option<Vec<&str>> = data.iter().map(|s| s.label.as_deref()).collect();
    let nmi = match gold {
        Some(gold) => {
            let pred: Vec<usize> = rows.iter().map(|r| r.cluster).collect();
            Some(nmi(&gold, &pred)?)
        }
        None => None,
    };
    Ok(ClusterOutput { rows, scored, nmi })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    /// Fraction of the way from the explained sample to the normal center.
    pub position: f64,
    pub rank: usize,
    pub id: String,
    pub distance: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    pub id: String,
    pub branch: BranchKind,
    pub score: f64,
    pub values: Vec<f64>,
    /// Nearest end to the sample first.
    pub references: Vec<Reference>,
}

/// Without an explicit branch, the one contributing the larger energy is
/// explained.
pub fn run_explain(
    model: &EtNet,
    data: &[TimeSeries],
    reference: &[TimeSeries],
    id: &str,
    n_points: usize,
    k_neighbors: usize,
    branch: Option<BranchKind>,
) -> Result<ExplainReport> {
    let sample = data
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| anyhow!("no series with id `{id}`"))?;
    let scored = model.anomaly_score(sample)?;
    let branch = branch.unwrap_or_else(|| {
        let (w, d) = if model.config.normalize_ensemble_energy {
            (model.w.stats.normalize(scored.e_w), model.d.stats.normalize(scored.e_d))
        } else {
            (scored.e_w, scored.e_d)
        };
        if d > w {
            BranchKind::D
        } else {
            BranchKind::W
        }
    });
    let att = model.attribute(sample, reference, branch, n_points, k_neighbors)?;
    let references = att
        .points
        .iter()
        .flat_map(|p| {
            p.neighbors.iter().enumerate().map(move |(rank, n)| Reference {
                position: p.position,
                rank,
                id: n.id.clone(),
                distance: n.distance,
                values: reference[n.index].values.clone(),
            })
        })
        .collect();
    Ok(ExplainReport {
        id: sample.id.clone(),
        branch,
        score: scored.score,
        values: sample.values.clone(),
        references,
    })
}

/// Generates the corpus described by a JSON spec; `seed` overrides the
/// spec's own.
pub fn run_synth(spec_json: &str, seed: Option<u64>) -> Result<Vec<TimeSeries>> {
    let mut spec = SynthSpec::from_json(spec_json)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(synthesize(&spec)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub a: String,
    pub b: String,
    pub ed: f64,
    pub dtw: f64,
    pub edr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceOutput {
    pub pairs: Vec<DistanceRow>,
    /// Leave-one-out 1-NN label accuracy per distance, when labels exist.
    pub reports: Vec<MetricReport>,
}

/// All pairwise ED/DTW/EDR distances, plus the Euclidean distance between
/// concatenated `[z_w, z_d]` latents when a model is given.
pub fn run_eval_dist(
    data: &[TimeSeries],
    model: Option<&EtNet>,
    dtw_window: Option<usize>,
    epsilon: f64,
) -> Result<DistanceOutput> {
    if data.len() < 2 {
        bail!("need at least two series, got {}", data.len());
    }
    let latents: Option<Vec<Vec<f64>>> = model
        .map(|m| -> Result<_> {
            Ok(m.score(data)?
                .into_iter()
                .map(|s| s.z_w.into_iter().chain(s.z_d).collect())
                .collect())
        })
        .transpose()?;
    let mut pairs = Vec::new();
    for i in 0..data.len() {
        for j in i + 1..data.len() {
            let (x, y) = (&data[i].values, &data[j].values);
            pairs.push(DistanceRow {
                a: data[i].id.clone(),
                b: data[j].id.clone(),
                ed: euclidean(x, y)?,
                dtw: dtw(x, y, dtw_window)?,
                edr: edr(x, y, epsilon)?,
                latent: latents.as_ref().map(|z| euclidean(&z[i], &z[j])).transpose()?,
            });
        }
    }
    let mut reports = Vec::new();
    let labels: Option<Vec<&str>> = data.iter().map(|s| s.label.as_deref()).collect();
    if let Some(labels) = labels {
        let n = data.len();
        let mut metrics: Vec<(&str, fn(&DistanceRow) -> f64)> =
            vec![("ed", |r| r.ed), ("dtw", |r| r.dtw), ("edr", |r| r.edr)];
        if latents.is_some() {
            metrics.push(("latent", |r| r.latent.unwrap_or(f64::NAN)));
        }
        for (name, get) in metrics {
            let mut m = vec![vec![0.0; n]; n];
            let mut p = pairs.iter();
            for i in 0..n {
                for j in i + 1..n {
                    let d = get(p.next().expect("one row per pair"));
                    m[i][j] = d;
                    m[j][i] = d;
                }
            }
            let hits = (0..n)
                .filter(|&i| {
                    let nn = (0..n)
                        .filter(|&j| j != i)
                        .min_by(|&a, &b| m[i][a].total_cmp(&m[i][b]))
                        .expect("at least two series");
                    labels[nn] == labels[i]
                })
                .count();
            reports.push(MetricReport::new(
                format!("1nn_accuracy_{name}"),
                hits as f64 / n as f64,
                n,
                json!({ "dtw_window": dtw_window, "epsilon": epsilon }),
            ));
        }
    }
    Ok(DistanceOutput { pairs, reports })
}
