//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero when a criterion fails that is not listed in `KNOWN_FAILURES`.

use std::process::ExitCode;
use std::time::Instant;

use etnet::cells::{dilated_forward, CellKind, CellParams, DilationSchedule, SrnnCell, SrnnMask};
use etnet::datagen::{apply_noise, contaminate_training, gen_wave, inject_anomaly, resample, synthesize, AnomalyParams, SynthSpec, WaveKind};
use etnet::eval::{auc, dtw, edr, euclidean, nmi, scr, silhouette, LabeledScores};
use etnet::mixture::{GmmState, MembershipNet, DEFAULT_EPS_REG};
use etnet::model::{EtNet, ModelConfig, ScoredSample};
use etnet::numcore::{gradcheck, Bound, Graph, ParamSet, Tensor, Var};
use etnet::TimeSeries;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Criteria whose failure is analysed and expected; they still print FAIL.
const KNOWN_FAILURES: &[u8] = &[8];

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: u8, name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, name, pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn row(g: &mut Graph, xs: &[f64]) -> Var {
    g.constant(Tensor::matrix(1, xs.len(), xs.to_vec()).unwrap())
}

// ---- 1: gradients ---------------------------------------------------------

type Probe = fn(&mut Graph, &[Var]) -> etnet::Result<Var>;

fn finish(g: &mut Graph, v: Var) -> etnet::Result<Var> {
    let w = g.tanh(v);
    let s = g.mul(w, v)?;
    Ok(g.sum(s))
}

fn op_probes() -> Vec<(&'static str, Probe)> {
    vec![
        ("add", |g, v| { let r = g.add(v[0], v[1])?; finish(g, r) }),
        ("add_bcast", |g, v| { let r = g.add(v[0], v[2])?; finish(g, r) }),
        ("sub", |g, v| { let r = g.sub(v[0], v[1])?; finish(g, r) }),
        ("mul", |g, v| { let r = g.mul(v[0], v[1])?; finish(g, r) }),
        ("div", |g, v| { let e = g.exp(v[1]); let r = g.div(v[0], e)?; finish(g, r) }),
        ("neg_scale", |g, v| { let n = g.neg(v[0]); let r = g.scale(n, -1.5); finish(g, r) }),
        ("sigmoid", |g, v| { let r = g.sigmoid(v[0]); finish(g, r) }),
        ("tanh", |g, v| { let r = g.tanh(v[0]); finish(g, r) }),
        ("exp_log", |g, v| { let e = g.exp(v[0]); let l = g.log(e); let r = g.mul(l, e)?; finish(g, r) }),
        ("sqrt", |g, v| { let e = g.exp(v[0]); let r = g.sqrt(e); finish(g, r) }),
        ("clamp", |g, v| { let r = g.clamp(v[0], -0.9, 0.9); finish(g, r) }),
        ("matmul", |g, v| { let r = g.matmul(v[0], v[3])?; finish(g, r) }),
        ("softmax", |g, v| { let s = g.softmax(v[0])?; let r = g.mul(s, v[1])?; finish(g, r) }),
        ("logsumexp_rows", |g, v| { let r = g.logsumexp_rows(v[0])?; finish(g, r) }),
        ("row_sum", |g, v| { let r = g.row_sum(v[0]); finish(g, r) }),
        ("col_mean", |g, v| { let r = g.col_mean(v[0]); finish(g, r) }),
        ("mean", |g, v| { let t = g.tanh(v[0]); let r = g.mean(t); finish(g, r) }),
        ("concat_slice", |g, v| { let c = g.concat_cols(&[v[0], v[1]])?; let r = g.slice_cols(c, 2, 3)?; finish(g, r) }),
    ]
}

fn sequence_check(kind: CellKind, dilated: bool, seed: u64) -> f64 {
    let mut params = ParamSet::new();
    let mut r = rng(seed);
    let xs: Vec<f64> = (0..10).map(|t| (t as f64 * 0.7).sin()).collect();
    if dilated {
        let cells = vec![
            CellParams::new(kind, 1, 3, "l0", &mut params, &mut r),
            CellParams::new(kind, 3, 3, "l1", &mut params, &mut r),
        ];
        let schedule = DilationSchedule::exponential(2);
        gradcheck::check(params.tensors(), 1e-6, |g, vars| {
            let b = Bound::from_vars(vars.to_vec());
            let inputs: Vec<Var> = xs.iter().map(|v| row(g, &[*v])).collect();
            let out = dilated_forward(g, &b, &cells, &schedule, &inputs)?;
            let last = *out.finals.last().unwrap();
            let sq = g.mul(last, last)?;
            Ok(g.sum(sq))
        })
        .unwrap()
        .max_rel_error
    } else {
        let cell = CellParams::new(kind, 1, 3, "c", &mut params, &mut r);
        let mask = SrnnMask::sample(10, 2, &mut r).unwrap();
        let srnn = SrnnCell::new(cell, mask, "s", &mut params, &mut r);
        gradcheck::check(params.tensors(), 1e-6, |g, vars| {
            let b = Bound::from_vars(vars.to_vec());
            let inputs: Vec<Var> = xs.iter().map(|v| row(g, &[*v])).collect();
            let states = srnn.run(g, &b, &inputs)?;
            let last = states.last().unwrap().h;
            let sq = g.mul(last, last)?;
            Ok(g.sum(sq))
        })
        .unwrap()
        .max_rel_error
    }
}

fn criterion_gradients() -> Outcome {
    let t = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut note = |err: f64, what: String| {
        if err > worst.0 || err.is_nan() {
            worst = (if err.is_nan() { f64::INFINITY } else { err }, what);
        }
    };
    let mut r = rng(2024);
    for (name, probe) in op_probes() {
        for _ in 0..10 {
            let inputs = vec![random(&[2, 3], &mut r), random(&[2, 3], &mut r), random(&[1, 3], &mut r), random(&[3, 2], &mut r)];
            note(gradcheck::check(&inputs, 1e-5, probe).unwrap().max_rel_error, name.to_string());
        }
    }
    for kind in [CellKind::Lstm, CellKind::Gru] {
        for seed in 0..2 {
            note(sequence_check(kind, false, seed), format!("srnn {kind:?}"));
            note(sequence_check(kind, true, seed), format!("dilated {kind:?}"));
        }
    }
    // Membership network and mixture energy.
    let mut params = ParamSet::new();
    let net = MembershipNet::new("m", 3, 3, &mut params, &mut r).unwrap();
    let z0 = random(&[5, 3], &mut r);
    note(
        gradcheck::check(params.tensors(), 1e-6, |g, vars| {
            let b = Bound::from_vars(vars.to_vec());
            let z = g.constant(z0.clone());
            let gamma = net.forward(g, &b, z)?;
            let sq = g.mul(gamma, gamma)?;
            Ok(g.sum(sq))
        })
        .unwrap()
        .max_rel_error,
        "membership".into(),
    );
    let gmm = GmmState::seeded(3, &z0, DEFAULT_EPS_REG, &mut r).unwrap();
    let phi0 = Tensor::matrix(1, 3, vec![0.2, 0.5, 0.3]).unwrap();
    note(
        gradcheck::check(&[z0.clone(), phi0], 1e-6, |g, v| {
            let e = gmm.energy_graph(g, v[0], v[1])?;
            Ok(g.sum(e))
        })
        .unwrap()
        .max_rel_error,
        "energy".into(),
    );
    let secs = t.elapsed().as_secs_f64();
    outcome(
        1,
        "gradient correctness",
        worst.0 <= 1e-4 && secs < 60.0,
        format!("max rel err {:.2e} ({}), {secs:.1}s", worst.0, worst.1),
    )
}

// ---- 2: oracles -----------------------------------------------------------

fn auc_oracle(labels: &[bool], scores: &[f64]) -> f64 {
    let (mut twice, mut p, mut q) = (0u64, 0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li { p += 1 } else { q += 1 }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if !lj {
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice as f64 / (2 * p * q) as f64
}

fn dtw_rec(x: &[f64], y: &[f64], i: usize, j: usize) -> f64 {
    // Cost of aligning x[..i] with y[..j].
    match (i, j) {
        (0, 0) => 0.0,
        (0, _) | (_, 0) => f64::INFINITY,
        _ => {
            let best = dtw_rec(x, y, i - 1, j - 1).min(dtw_rec(x, y, i - 1, j)).min(dtw_rec(x, y, i, j - 1));
            (x[i - 1] - y[j - 1]).abs() + best
        }
    }
}

fn edr_rec(x: &[f64], y: &[f64], eps: f64) -> f64 {
    match (x.split_first(), y.split_first()) {
        (None, _) => y.len() as f64,
        (_, None) => x.len() as f64,
        (Some((a, xr)), Some((b, yr))) => {
            let sub = if (a - b).abs() <= eps { 0.0 } else { 1.0 };
            (edr_rec(xr, yr, eps) + sub).min(edr_rec(xr, y, eps) + 1.0).min(edr_rec(x, yr, eps) + 1.0)
        }
    }
}

fn criterion_oracles() -> Outcome {
    let mut r = rng(7);
    let mut bad = Vec::new();
    for t in 0..100 {
        let n = r.random_range(2..=200);
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        // Coarse scores so ties occur.
        let scores: Vec<f64> = (0..n).map(|_| (r.random_range(0..20) as f64) * 0.5).collect();
        let got = auc(&LabeledScores::new(labels.clone(), scores.clone()).unwrap());
        if got != auc_oracle(&labels, &scores) {
            bad.push(format!("auc#{t}"));
        }
    }
    for t in 0..100 {
        let (n, m) = (r.random_range(1..=6), r.random_range(1..=6));
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..m).map(|_| r.random_range(-2.0..2.0)).collect();
        if dtw(&x, &y, None).unwrap() != dtw_rec(&x, &y, n, m) {
            bad.push(format!("dtw#{t}"));
        }
        let eps = r.random_range(0.0..1.0);
        if edr(&x, &y, eps).unwrap() != edr_rec(&x, &y, eps) {
            bad.push(format!("edr#{t}"));
        }
    }
    outcome(2, "oracle equivalence", bad.is_empty(), format!("300 instances, mismatches {bad:?}"))
}

// ---- 3: EM ----------------------------------------------------------------

fn criterion_em() -> Outcome {
    let mut worst_drop = 0.0f64;
    for b in 0..50u64 {
        let mut r = rng(100 + b);
        let (m, k) = (r.random_range(20..80), r.random_range(1..4));
        let z = random(&[m, 3], &mut r);
        let mut state = GmmState::seeded(k, &z, DEFAULT_EPS_REG, &mut r).unwrap();
        let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        state.set_phi(raw.iter().map(|v| v / total).collect()).unwrap();
        let mut ll = state.log_likelihood(&z).unwrap();
        for _ in 0..10 {
            state = state.em_update(&z, 1).unwrap();
            let next = state.log_likelihood(&z).unwrap();
            worst_drop = worst_drop.max(ll - next);
            ll = next;
        }
    }
    let centers = [[-4.0, 1.0, 0.5], [3.0, -2.0, 2.0]];
    let mut r = rng(11);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let data: Vec<f64> = (0..200).flat_map(|i| centers[i % 2].map(|v| v + noise.sample(&mut r))).collect();
    let z = Tensor::matrix(200, 3, data).unwrap();
    let mut state = GmmState::seeded(2, &z, DEFAULT_EPS_REG, &mut rng(12)).unwrap();
    state.set_phi(vec![0.5, 0.5]).unwrap();
    let state = state.em_update(&z, 20).unwrap();
    let mut blob_err = 0.0f64;
    for which in 0..2 {
        let c: Vec<f64> = (0..3)
            .map(|a| (0..200).filter(|i| i % 2 == which).map(|i| z.get2(i, a)).sum::<f64>() / 100.0)
            .collect();
        let best = state
            .means
            .iter()
            .map(|mu| mu.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min);
        blob_err = blob_err.max(best);
    }
    outcome(
        3,
        "EM soundness",
        worst_drop <= 1e-9 && blob_err < 1e-3,
        format!("largest log-likelihood drop {worst_drop:.2e}, blob mean error {blob_err:.2e}"),
    )
}

// ---- shared detection setup ----------------------------------------------

fn base_waves(len: usize) -> Vec<TimeSeries> {
    WaveKind::ALL.iter().map(|&k| gen_wave(k, len, 30.0, 1.0, 0.0).unwrap()).collect()
}

fn detection_train() -> Vec<TimeSeries> {
    let w = base_waves(120);
    (0..1500)
        .map(|i| {
            let mut s = w[i % 3].clone();
            s.id = format!("t{i}");
            s.label = Some("normal".into());
            s
        })
        .collect()
}

/// 100 normals then 25 of each anomaly type, built from `waves`.
fn detection_test(waves: &[TimeSeries]) -> (Vec<TimeSeries>, Vec<TimeSeries>) {
    let normals = (0..100).map(|i| waves[i % 3].clone()).collect();
    let anomalies = (1..=4u8)
        .flat_map(|kind| {
            (0..25).map(move |i| inject_anomaly(&waves[i % 3], kind, &AnomalyParams::default(), 1000 + i as u64).unwrap())
        })
        .collect();
    (normals, anomalies)
}

struct Detection {
    per_type_auc: Vec<f64>,
    pooled_auc: f64,
    normals: Vec<ScoredSample>,
    anomalies: Vec<ScoredSample>,
}

fn evaluate(model: &EtNet, normals: &[TimeSeries], anomalies: &[TimeSeries]) -> Detection {
    let ns = model.score(normals).unwrap();
    let an = model.score(anomalies).unwrap();
    let auc_of = |group: &[ScoredSample]| {
        let labels = vec![false; ns.len()].into_iter().chain(vec![true; group.len()]).collect();
        let scores = ns.iter().chain(group).map(|s| s.score).collect();
        auc(&LabeledScores::new(labels, scores).unwrap())
    };
    Detection {
        per_type_auc: an.chunks(25).map(auc_of).collect(),
        pooled_auc: auc_of(&an),
        normals: ns,
        anomalies: an,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn percentile(mut v: Vec<f64>, p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Reconstruction features `(d_rel, cos)` of both branches.
fn feature_plane(s: &ScoredSample) -> Vec<f64> {
    let tail = |z: &[f64]| z[z.len() - 2..].to_vec();
    [tail(&s.z_w), tail(&s.z_d)].concat()
}

fn full_latent(s: &ScoredSample) -> Vec<f64> {
    [s.z_w.clone(), s.z_d.clone()].concat()
}

fn scr_per_type(d: &Detection, space: fn(&ScoredSample) -> Vec<f64>) -> Vec<f64> {
    d.anomalies
        .chunks(25)
        .map(|group| {
            let points: Vec<Vec<f64>> = d.normals.iter().chain(group).map(space).collect();
            let labels: Vec<bool> = (0..points.len()).map(|i| i >= d.normals.len()).collect();
            scr(&points, &labels).unwrap().ratio
        })
        .collect()
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/")
}

fn criterion_detection(d: &Detection, train_secs: f64) -> Outcome {
    let feature = scr_per_type(d, feature_plane);
    let full = scr_per_type(d, full_latent);
    let p95 = percentile(d.normals.iter().map(|s| s.score).collect(), 95.0);
    let medians: Vec<f64> = d.anomalies.chunks(25).map(|g| median(g.iter().map(|s| s.score).collect())).collect();
    let pass = d.per_type_auc.iter().all(|&a| a >= 0.95)
        && feature.iter().all(|&s| s > 1.0)
        && medians.iter().all(|&m| m > p95)
        && train_secs < 600.0;
    outcome(
        4,
        "synthetic anomaly detection",
        pass,
        format!(
            "AUC {}; SCR on reconstruction features {} (full latent {}); median anomaly score {} vs normal p95 {p95:.3}; train {train_secs:.0}s",
            fmt(&d.per_type_auc),
            fmt(&feature),
            fmt(&full),
            fmt(&medians)
        ),
    )
}

// ---- 5: clustering --------------------------------------------------------

fn clustering_corpus() -> Vec<TimeSeries> {
    let group = |kind: &str| {
        format!(
            r#"{{"name":"{kind}","count":100,"label":"{kind}","phase_jitter":0.2,"awgn":0.05,"source":{{"wave":{{"kind":"{kind}","period":30}}}}}}"#
        )
    };
    let spec = format!(r#"{{"seed":11,"length":120,"groups":[{},{},{}]}}"#, group("sine"), group("square"), group("triangle"));
    synthesize(&SynthSpec::from_json(&spec).unwrap()).unwrap()
}

fn criterion_clustering(model: &EtNet, data: &[TimeSeries]) -> Outcome {
    let scored = model.score(data).unwrap();
    let pred: Vec<usize> = scored.iter().map(|s| s.cluster).collect();
    let gold: Vec<&str> = data.iter().map(|s| s.label.as_deref().unwrap()).collect();
    let v = nmi(&gold, &pred).unwrap();
    let points: Vec<Vec<f64>> = scored.iter().map(full_latent).collect();
    let distinct = pred.iter().collect::<std::collections::BTreeSet<_>>().len();
    let sc = if distinct > 1 { silhouette(&points, &pred).unwrap() } else { f64::NAN };
    let sc_gold = silhouette(&points, &gold).unwrap();
    outcome(
        5,
        "synthetic clustering",
        v >= 0.9 && sc > 0.0,
        format!("NMI {v:.4}, SC {sc:.4} (against true classes {sc_gold:.4}); phase jitter 0.2 rad, AWGN 0.05"),
    )
}

// ---- 6: noise robustness --------------------------------------------------

fn latent(model: &EtNet, s: &[TimeSeries]) -> Vec<Vec<f64>> {
    model.score(s).unwrap().iter().map(full_latent).collect()
}

fn crop(s: TimeSeries, len: usize) -> TimeSeries {
    TimeSeries::new(s.id, s.interval, s.values[..len].to_vec()).unwrap()
}

fn criterion_noise(model: &EtNet) -> Outcome {
    let waves = base_waves(120);
    let zl = latent(model, &waves);
    // Distances are normalized by the mean distance between the three normal
    // classes in the same space.
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let scale_x = pairs.iter().map(|&(i, j)| euclidean(&waves[i].values, &waves[j].values).unwrap()).sum::<f64>() / 3.0;
    let scale_z = pairs.iter().map(|&(i, j)| euclidean(&zl[i], &zl[j]).unwrap()).sum::<f64>() / 3.0;
    let sine = &waves[0];
    let long_sine = gen_wave(WaveKind::Sine, 240, 30.0, 1.0, 0.0).unwrap();
    let mut r = rng(5);
    let mut parts = Vec::new();
    let mut pass = true;
    for kind in 1..=4u8 {
        let (mut wins, mut small) = (0, 0);
        let (mut sx, mut sz) = (0.0, 0.0);
        for _ in 0..100 {
            let seed: u64 = r.random();
            let noisy = match kind {
                1 => crop(apply_noise(sine, 1, r.random_range(1.1..1.5), seed).unwrap(), 120),
                2 => crop(apply_noise(&long_sine, 2, r.random_range(1.1..1.5), seed).unwrap(), 120),
                3 => apply_noise(sine, 3, r.random_range(1..=2) as f64, seed).unwrap(),
                _ => apply_noise(sine, 4, r.random_range(0.05..0.2), seed).unwrap(),
            };
            let z = latent(model, &[sine.clone(), noisy.clone()]);
            let dx = euclidean(&sine.values, &noisy.values).unwrap() / scale_x;
            let dz = euclidean(&z[0], &z[1]).unwrap() / scale_z;
            wins += usize::from(dz < dx);
            small += usize::from(dx < 1.0 && dz < 1.0);
            sx += dx;
            sz += dz;
        }
        let ok = if kind == 3 { small >= 80 } else { wins >= 80 };
        pass &= ok;
        let count = if kind == 3 { format!("both < 1 in {small}/100") } else { format!("latent closer in {wins}/100") };
        parts.push(format!("type {kind}: {count}, mean {:.3} -> {:.3}", sx / 100.0, sz / 100.0));
    }
    outcome(6, "noise robustness", pass, parts.join("; "))
}

// ---- 7: contamination -----------------------------------------------------

fn contaminated_train() -> (Vec<TimeSeries>, usize) {
    let (dirty, idx) = contaminate_training(&detection_train(), 0.1, &[1, 2, 3, 4], &AnomalyParams::default(), 77).unwrap();
    (dirty, idx.len())
}

/// `early` is the contaminated run under the default early-stopping rule,
/// reported alongside the equal-budget comparison.
fn criterion_contamination(clean: &Detection, dirty: &Detection, early: (&Detection, usize), injected: usize) -> Outcome {
    let drops: Vec<f64> = clean.per_type_auc.iter().zip(&dirty.per_type_auc).map(|(a, b)| 100.0 * (a - b)).collect();
    let pooled = 100.0 * (clean.pooled_auc - dirty.pooled_auc);
    outcome(
        7,
        "contamination robustness",
        pooled <= 10.0 && drops.iter().all(|&d| d <= 10.0),
        format!(
            "{injected} injected, 200 epochs each; AUC clean {} -> contaminated {} (pooled {:.4} -> {:.4}, drop {pooled:.2} pp); \
             with early stopping the contaminated run stops after {} epochs at AUC {} (pooled {:.4})",
            fmt(&clean.per_type_auc),
            fmt(&dirty.per_type_auc),
            clean.pooled_auc,
            dirty.pooled_auc,
            early.1,
            fmt(&early.0.per_type_auc),
            early.0.pooled_auc
        ),
    )
}

// ---- 8: granularity -------------------------------------------------------

fn criterion_granularity(model: &EtNet) -> Outcome {
    // 240 bins at 60 s cover the same span as 120 bins at 120 s.
    let fine = base_waves(240);
    let (normals, anomalies) = detection_test(&fine);
    let coarse = |v: Vec<TimeSeries>| -> Vec<TimeSeries> { v.iter().map(|s| resample(s, 120.0).unwrap()).collect() };
    let d = evaluate(model, &coarse(normals), &coarse(anomalies));
    outcome(
        8,
        "granularity transfer",
        d.pooled_auc >= 0.85,
        format!("AUC at 2x interval: pooled {:.4}, per type {}", d.pooled_auc, fmt(&d.per_type_auc)),
    )
}

// ---- 9: reproducibility ---------------------------------------------------

fn criterion_reproducibility() -> Outcome {
    let data: Vec<TimeSeries> = clustering_corpus().into_iter().step_by(5).collect();
    let cfg = ModelConfig { epochs: 5, ..ModelConfig::default() };
    let run = || {
        let (m, _) = EtNet::train(cfg.clone(), &data).unwrap();
        let scores: String = m.score(&data).unwrap().iter().map(|s| serde_json::to_string(s).unwrap() + "\n").collect();
        (m.to_json().unwrap(), scores)
    };
    let (m1, s1) = run();
    let (m2, s2) = run();
    outcome(
        9,
        "reproducibility",
        m1 == m2 && s1 == s2,
        format!("model {} bytes identical: {}, score stream {} bytes identical: {}", m1.len(), m1 == m2, s1.len(), s1 == s2),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results = vec![criterion_gradients(), criterion_oracles(), criterion_em()];

    let t = Instant::now();
    let (clean, clean_report) = EtNet::train(ModelConfig::default(), &detection_train()).unwrap();
    let clean_secs = t.elapsed().as_secs_f64();
    let (dirty_train, injected) = contaminated_train();
    // The clean run never triggers early stopping, so a fixed budget gives
    // both runs the same number of epochs.
    assert_eq!(clean_report.w.epochs.len(), 200);
    let fixed = ModelConfig { early_stop_patience: 0, ..ModelConfig::default() };
    let dirty = EtNet::train(fixed, &dirty_train).unwrap().0;
    let (dirty_early, early_report) = EtNet::train(ModelConfig::default(), &dirty_train).unwrap();
    let early_epochs = early_report.w.epochs.len().max(early_report.d.epochs.len());
    let cluster_data = clustering_corpus();
    let clustered = EtNet::train(ModelConfig::default(), &cluster_data).unwrap().0;

    let (normals, anomalies) = detection_test(&base_waves(120));
    let clean_eval = evaluate(&clean, &normals, &anomalies);
    results.push(criterion_detection(&clean_eval, clean_secs));
    results.push(criterion_clustering(&clustered, &cluster_data));
    results.push(criterion_noise(&clean));
    let dirty_eval = evaluate(&dirty, &normals, &anomalies);
    let early_eval = evaluate(&dirty_early, &normals, &anomalies);
    results.push(criterion_contamination(&clean_eval, &dirty_eval, (&early_eval, early_epochs), injected));
    results.push(criterion_granularity(&clean));
    results.push(criterion_reproducibility());

    let mut unexpected = 0;
    for o in &results {
        let known = KNOWN_FAILURES.contains(&o.id);
        let tag = match (o.pass, known) {
            (true, false) => "PASS",
            (true, true) => "PASS (listed as a known failure)",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("{tag} [{}] {}: {}", o.id, o.name, o.detail);
    }
    let passed = results.iter().filter(|o| o.pass).count();
    println!(
        "acceptance: {passed}/{} criteria pass, {unexpected} unexpected failure(s), {:.0}s",
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if unexpected == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
