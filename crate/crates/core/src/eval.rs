//! Detection/clustering metrics and the classic sequence distances used as
//! baselines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary labels (`true` = positive/anomalous) with one score each.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScores {
    labels: Vec<bool>,
    scores: Vec<f64>,
}

impl LabeledScores {
    pub fn new(labels: Vec<bool>, scores: Vec<f64>) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::LengthMismatch {
                expected: labels.len(),
                actual: scores.len(),
            });
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::invalid("scores", "NaN score"));
        }
        let pos = labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == labels.len() {
            return Err(Error::invalid("labels", "AUC needs both positives and negatives"));
        }
        Ok(Self { labels, scores })
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Mann-Whitney AUC from mid-ranks: ties between a positive and a negative
/// count one half.
pub fn auc(ls: &LabeledScores) -> f64 {
    let n = ls.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ls.scores[a].total_cmp(&ls.scores[b]));
    // Ranks are doubled so tied mid-ranks stay integral.
    let mut rank2_pos: u64 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && ls.scores[order[j + 1]] == ls.scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        rank2_pos += mid2 * order[i..=j].iter().filter(|&&k| ls.labels[k]).count() as u64;
        i = j + 1;
    }
    let p = ls.labels.iter().filter(|&&l| l).count() as u64;
    let q = n as u64 - p;
    let u2 = rank2_pos - p * (p + 1);
    u2 as f64 / (2 * p * q) as f64
}

/// Mutual information normalized by the geometric mean of the entropies.
/// Two constant labelings score 1, exactly one constant labeling scores 0.
pub fn nmi<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("labelings"));
    }
    let n = a.len() as f64;
    let mut ca: BTreeMap<&A, usize> = BTreeMap::new();
    let mut cb: BTreeMap<&B, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(&A, &B), usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let entropy = |counts: &mut dyn Iterator<Item = usize>| -> f64 {
        counts
            .map(|c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let ha = entropy(&mut ca.values().copied());
    let hb = entropy(&mut cb.values().copied());
    let eps = 1e-15;
    match (ha < eps, hb < eps) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let mi: f64 = joint
        .iter()
        .map(|((x, y), &c)| {
            let pxy = c as f64 / n;
            let px = ca[x] as f64 / n;
            let py = cb[y] as f64 / n;
            pxy * (pxy / (px * py)).ln()
        })
        .sum();
    Ok((mi.max(0.0) / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

pub fn euclidean(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

fn check_points<L>(points: &[Vec<f64>], labels: &[L]) -> Result<()> {
    if points.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: points.len(),
            actual: labels.len(),
        });
    }
    let Some(first) = points.first() else {
        return Err(Error::EmptyInput("points"));
    };
    if let Some(p) = points.iter().find(|p| p.len() != first.len()) {
        return Err(Error::LengthMismatch {
            expected: first.len(),
            actual: p.len(),
        });
    }
    Ok(())
}

/// Per-point silhouette values; points alone in their cluster get 0.
pub fn silhouette_samples<L: Ord>(points: &[Vec<f64>], labels: &[L]) -> Result<Vec<f64>> {
    check_points(points, labels)?;
    let mut ids: BTreeMap<&L, usize> = BTreeMap::new();
    for l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    let k = ids.len();
    if k < 2 {
        return Err(Error::invalid("labels", "silhouette needs at least two clusters"));
    }
    let cluster: Vec<usize> = labels.iter().map(|l| ids[l]).collect();
    let mut size = vec![0usize; k];
    for &c in &cluster {
        size[c] += 1;
    }
    let n = points.len();
    let mut out = Vec::with_capacity(n);
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.fill(0.0);
        for j in 0..n {
            if j != i {
                sums[cluster[j]] += euclidean(&points[i], &points[j])?;
            }
        }
        let own = cluster[i];
        if size[own] == 1 {
            out.push(0.0);
            continue;
        }
        let a = sums[own] / (size[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / size[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        out.push(if m > 0.0 { (b - a) / m } else { 0.0 });
    }
    Ok(out)
}

pub fn silhouette<L: Ord>(points: &[Vec<f64>], labels: &[L]) -> Result<f64> {
    let s = silhouette_samples(points, labels)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

pub const SCR_GUARD: f64 = 1e-9;

/// Mean silhouettes of the normal and anomalous groups under the two-group
/// partition, and their ratio. The ratio is `+inf` when the anomalous mean is
/// within `SCR_GUARD` of zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scr {
    pub ratio: f64,
    pub normal_sc: f64,
    pub abnormal_sc: f64,
}

pub fn scr(points: &[Vec<f64>], anomalous: &[bool]) -> Result<Scr> {
    let s = silhouette_samples(points, anomalous)?;
    let mean = |want: bool| {
        let v: Vec<f64> = s.iter().zip(anomalous).filter(|(_, &a)| a == want).map(|(x, _)| *x).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let normal_sc = mean(false);
    let abnormal_sc = mean(true);
    let ratio = if abnormal_sc.abs() < SCR_GUARD {
        f64::INFINITY
    } else {
        normal_sc / abnormal_sc
    };
    Ok(Scr {
        ratio,
        normal_sc,
        abnormal_sc,
    })
}

/// DTW with absolute-difference cost. `window` is a Sakoe-Chiba band
/// half-width on |i - j|.
pub fn dtw(x: &[f64], y: &[f64], window: Option<usize>) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("dtw sequences"));
    }
    let (n, m) = (x.len(), y.len());
    let w = window.unwrap_or(n.max(m));
    if w < n.abs_diff(m) {
        return Err(Error::invalid(
            "window",
            format!("band {w} cannot connect lengths {n} and {m}"),
        ));
    }
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur.fill(f64::INFINITY);
        let lo = i.saturating_sub(w).max(1);
        let hi = (i + w).min(m);
        for j in lo..=hi {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (x[i - 1] - y[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Edit distance where two elements match when they differ by at most
/// `epsilon`; insertions, deletions and substitutions cost 1.
pub fn edr(x: &[f64], y: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("epsilon", format!("{epsilon} is negative")));
    }
    let m = y.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for (i, a) in x.iter().enumerate() {
        cur[0] = i + 1;
        for (j, b) in y.iter().enumerate() {
            let sub = usize::from((a - b).abs() > epsilon);
            cur[j + 1] = (prev[j] + sub).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m] as f64)
}

/// One JSON metric line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub params: serde_json::Value,
}

impl MetricReport {
    pub fn new(metric: impl Into<String>, value: f64, n: usize, params: serde_json::Value) -> Self {
        Self {
            metric: metric.into(),
            value,
            n,
            params,
        }
    }
}
