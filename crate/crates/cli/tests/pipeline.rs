mod common;

use std::collections::HashSet;

use common::{detect_corpus, tiny_run, waves_spec};
use etnet::eval::{auc, nmi, LabeledScores};
use etnet::model::{BranchKind, EtNet, ModelConfig};
use etnet::TimeSeries;
use etnet_cli::output::write_jsonl;
use etnet_cli::pipeline::{binary_labels, ScoreRow};
use etnet_cli::{run_cluster, run_eval_dist, run_explain, run_score, run_synth, run_train, split, RunConfig, Task};

#[test]
fn detection_split_keeps_anomalies_in_test() {
    let data = detect_corpus(50, 0.2, 1);
    let cfg = RunConfig { train_fraction: 0.4, ..tiny_run(Task::Detect) };
    let s = split(&data, &cfg).unwrap();
    assert_eq!(s.train.len(), 20);
    assert_eq!(s.train.len() + s.test.len(), data.len());
    assert!(s.train.iter().all(|x| x.is_anomalous() == Some(false)));
    let anomalies = data.iter().filter(|x| x.is_anomalous() == Some(true)).count();
    assert_eq!(s.test.iter().filter(|x| x.is_anomalous() == Some(true)).count(), anomalies);
    assert!(s.contaminated.is_empty());
    assert_eq!(split(&data, &cfg).unwrap(), s);
}

#[test]
fn cluster_split_draws_from_everything() {
    let data = run_synth(&waves_spec(10, 0.2, 0.05, 1), None).unwrap();
    let s = split(&data, &tiny_run(Task::Cluster)).unwrap();
    assert_eq!(s.train.len(), 15);
    let ids: HashSet<_> = s.train.iter().chain(&s.test).map(|x| x.id.clone()).collect();
    assert_eq!(ids.len(), 30);
}

#[test]
fn contamination_flags_ten_percent_of_training_ids() {
    let data = detect_corpus(100, 0.0, 2);
    let cfg = RunConfig { contamination: 0.1, ..tiny_run(Task::Detect) };
    let s = split(&data, &cfg).unwrap();
    assert_eq!(s.train.len(), 50);
    assert_eq!(s.contaminated.len(), 5);
    for id in &s.contaminated {
        let x = s.train.iter().find(|x| &x.id == id).unwrap();
        assert_eq!(x.is_anomalous(), Some(true));
    }
    assert_eq!(s.train.iter().filter(|x| x.is_anomalous() == Some(true)).count(), 5);
}

#[test]
fn empty_training_split_is_an_error() {
    let data = detect_corpus(1, 0.0, 2);
    let cfg = RunConfig { train_fraction: 0.4, ..tiny_run(Task::Detect) };
    assert!(split(&data, &cfg).is_err());
}

#[test]
fn trained_model_reloads_and_rescores_identically() {
    let data = detect_corpus(40, 0.2, 3);
    let cfg = tiny_run(Task::Detect);
    let (model, split, summary) = run_train(&cfg, &data).unwrap();
    assert_eq!(summary.history.w.epochs.len(), 5);
    assert_eq!(summary.history.d.epochs.len(), 5);
    assert_eq!(summary.gmm_w, model.w.gmm);
    assert_eq!(summary.train_ids.len(), split.train.len());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    let back = EtNet::load(&path).unwrap();
    assert_eq!(back.score(&split.test).unwrap(), model.score(&split.test).unwrap());
}

#[test]
fn same_seed_gives_identical_model_files() {
    let data = detect_corpus(30, 0.0, 4);
    let cfg = tiny_run(Task::Detect);
    let a = run_train(&cfg, &data).unwrap().0.to_json().unwrap();
    let b = run_train(&cfg, &data).unwrap().0.to_json().unwrap();
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.model.seed = 9;
    assert_ne!(run_train(&other, &data).unwrap().0.to_json().unwrap(), a);
}

#[test]
fn emitted_scores_reproduce_the_auc_exactly() {
    let data = detect_corpus(40, 0.25, 5);
    let (model, split, _) = run_train(&tiny_run(Task::Detect), &data).unwrap();
    let out = run_score(&model, &split.test, None).unwrap();
    let printed = out.auc.unwrap();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &out.rows).unwrap();
    let rows: Vec<ScoreRow> = std::str::from_utf8(&buf)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.sample.label.as_deref() != Some("normal")).collect();
    let scores: Vec<f64> = rows.iter().map(|r| r.sample.score).collect();
    assert_eq!(auc(&LabeledScores::new(labels, scores).unwrap()), printed);
    assert!(rows.iter().all(|r| r.flag.is_none()));
}

#[test]
fn unlabeled_data_gets_no_auc() {
    let data = detect_corpus(20, 0.0, 6);
    let (model, split, _) = run_train(&tiny_run(Task::Detect), &data).unwrap();
    let unlabeled: Vec<TimeSeries> = split.test.iter().cloned().map(|mut s| {
        s.label = None;
        s
    }).collect();
    assert!(run_score(&model, &unlabeled, None).unwrap().auc.is_none());
    assert!(binary_labels(&split.test).is_none(), "all-normal labels give no AUC");
}

#[test]
fn percentile_threshold_flags_about_five_percent_of_training_data() {
    let data = detect_corpus(200, 0.0, 7);
    let (model, split, _) = run_train(&tiny_run(Task::Detect), &data).unwrap();
    let out = run_score(&model, &split.train, Some(95.0)).unwrap();
    let t = out.threshold.unwrap();
    assert_eq!(t, model.threshold(95.0).unwrap());
    let rate = out.rows.iter().filter(|r| r.flag == Some(true)).count() as f64 / out.rows.len() as f64;
    assert!((rate - 0.05).abs() <= 0.011, "flag rate {rate}");
    assert!(run_score(&model, &split.train, Some(101.0)).is_err());
}

#[test]
fn three_wave_corpus_clusters_with_high_nmi() {
    let data = run_synth(&waves_spec(200, 0.2, 0.05, 11), None).unwrap();
    let mut cfg = RunConfig { train_fraction: 0.5, task: Task::Cluster, window: 120, ..RunConfig::default() };
    cfg.model = ModelConfig { epochs: 150, early_stop_patience: 0, ..ModelConfig::default() };
    let (model, split, _) = run_train(&cfg, &data).unwrap();
    let out = run_cluster(&model, &split.test).unwrap();
    let v = out.nmi.unwrap();
    assert!(v >= 0.9, "NMI {v}");
}

#[test]
fn nmi_ignores_label_names() {
    let data = run_synth(&waves_spec(5, 0.2, 0.05, 1), None).unwrap();
    let (model, _, _) = run_train(&tiny_run(Task::Cluster), &data).unwrap();
    let out = run_cluster(&model, &data).unwrap();
    let pred: Vec<usize> = out.rows.iter().map(|r| r.cluster).collect();
    assert_eq!(nmi(&pred, &pred).unwrap(), 1.0);
    let renamed: Vec<usize> = pred.iter().map(|c| 7 - c).collect();
    assert_eq!(nmi(&renamed, &pred).unwrap(), 1.0);
    assert_eq!(out.nmi.unwrap(), nmi(&data.iter().map(|s| s.label.clone().unwrap()).collect::<Vec<_>>(), &pred).unwrap());
    let unlabeled: Vec<TimeSeries> = data.into_iter().map(|mut s| { s.label = None; s }).collect();
    assert!(run_cluster(&model, &unlabeled).unwrap().nmi.is_none());
}

#[test]
fn explain_emits_one_reference_per_point_and_neighbor() {
    let data = detect_corpus(40, 0.2, 8);
    let (model, split, _) = run_train(&tiny_run(Task::Detect), &data).unwrap();
    let target = split.test.iter().find(|s| s.is_anomalous() == Some(true)).unwrap();
    let rep = run_explain(&model, &split.test, &split.train, &target.id, 3, 1, Some(BranchKind::W)).unwrap();
    assert_eq!(rep.references.len(), 3);
    assert_eq!(rep.values, target.values);
    let pos: Vec<f64> = rep.references.iter().map(|r| r.position).collect();
    assert_eq!(pos, vec![0.25, 0.5, 0.75]);
    let rep2 = run_explain(&model, &split.test, &split.train, &target.id, 2, 3, None).unwrap();
    assert_eq!(rep2.references.len(), 6);
    assert!(run_explain(&model, &split.test, &split.train, "missing", 3, 1, None).is_err());
}

#[test]
fn explain_references_match_a_brute_force_scan() {
    let data = detect_corpus(40, 0.2, 9);
    let (model, split, _) = run_train(&tiny_run(Task::Detect), &data).unwrap();
    let target = split.test.iter().find(|s| s.is_anomalous() == Some(true)).unwrap();
    let rep = run_explain(&model, &split.test, &split.train, &target.id, 4, 2, Some(BranchKind::D)).unwrap();
    let zt: Vec<Vec<f64>> = model.score(&split.train).unwrap().into_iter().map(|s| s.z_d).collect();
    let za = model.anomaly_score(target).unwrap().z_d;
    let center = model.d.center();
    for r in &rep.references {
        let p: Vec<f64> = za.iter().zip(&center).map(|(a, c)| a + r.position * (c - a)).collect();
        let mut d: Vec<(f64, usize)> = zt
            .iter()
            .enumerate()
            .map(|(i, z)| (z.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (dist, idx) = d[r.rank];
        assert!((dist - r.distance).abs() < 1e-9);
        assert_eq!(split.train[idx].values, r.values);
    }
}

#[test]
fn sample_at_the_center_gets_nearest_to_center_references() {
    let data = detect_corpus(30, 0.0, 10);
    let (model, split, _) = run_train(&tiny_run(Task::Detect), &data).unwrap();
    let center = model.w.center();
    let zt: Vec<Vec<f64>> = model.score(&split.train).unwrap().into_iter().map(|s| s.z_w).collect();
    let nearest = (0..zt.len())
        .min_by(|&a, &b| {
            let d = |i: usize| zt[i].iter().zip(&center).map(|(x, c)| (x - c) * (x - c)).sum::<f64>();
            d(a).total_cmp(&d(b))
        })
        .unwrap();
    // The training series nearest the center stands in for a sample at it.
    let probe = split.train[nearest].clone();
    let rep = run_explain(&model, &split.train, &split.train, &probe.id, 3, 1, Some(BranchKind::W)).unwrap();
    assert!(rep.references.iter().all(|r| r.id == probe.id));
}

#[test]
fn synth_copies_are_identical_rows() {
    let spec = r#"{"seed": 1, "groups": [{"name": "s", "count": 500, "source": {"wave": {"kind": "sine", "period": 30}}}]}"#;
    let d = run_synth(spec, None).unwrap();
    assert_eq!(d.len(), 500);
    assert!(d.iter().all(|s| s.values == d[0].values));
}

#[test]
fn synth_labels_exactly_the_requested_anomaly_count() {
    let spec = r#"{"seed": 1, "groups": [{"name": "s", "count": 200, "source": {"wave": {"kind": "sine", "period": 30}},
        "anomaly": {"types": [3], "fraction": 0.1}}]}"#;
    let d = run_synth(spec, None).unwrap();
    assert_eq!(d.iter().filter(|s| s.label.as_deref() == Some("anomaly-3")).count(), 20);
}

#[test]
fn synth_is_deterministic_under_its_seed() {
    let spec = waves_spec(20, 0.5, 0.1, 3);
    let write = |d: &[TimeSeries]| {
        let mut buf = Vec::new();
        etnet::corpus::write_corpus(&mut buf, d).unwrap();
        buf
    };
    let a = write(&run_synth(&spec, None).unwrap());
    assert_eq!(a, write(&run_synth(&spec, None).unwrap()));
    assert_ne!(a, write(&run_synth(&spec, Some(4)).unwrap()));
}

#[test]
fn synth_names_the_bad_field() {
    let err = run_synth(r#"{"groups": [{"name": "s", "count": 2, "colour": 1, "source": {"wave": {"kind": "sine", "period": 30}}}]}"#, None)
        .unwrap_err();
    assert!(format!("{err:#}").contains("colour"));
    let err = run_synth(r#"{"length": 1, "groups": []}"#, None).unwrap_err();
    assert!(format!("{err:#}").contains("length"));
}

#[test]
fn distance_report_covers_every_pair() {
    let data = run_synth(&waves_spec(3, 0.2, 0.05, 1), None).unwrap();
    let out = run_eval_dist(&data, None, None, 0.1).unwrap();
    assert_eq!(out.pairs.len(), 9 * 8 / 2);
    let index = |id: &str| data.iter().position(|s| s.id == id).unwrap();
    for p in &out.pairs {
        assert!(p.latent.is_none());
        // The diagonal alignment is one DTW path.
        let l1: f64 = data[index(&p.a)].values.iter().zip(&data[index(&p.b)].values).map(|(x, y)| (x - y).abs()).sum();
        assert!(p.dtw <= l1 + 1e-12);
    }
    let names: Vec<_> = out.reports.iter().map(|r| r.metric.as_str()).collect();
    assert_eq!(names, ["1nn_accuracy_ed", "1nn_accuracy_dtw", "1nn_accuracy_edr"]);
    let p = &out.pairs[0];
    assert_eq!(p.ed, etnet::eval::euclidean(&data[0].values, &data[1].values).unwrap());
    assert_eq!(p.dtw, etnet::eval::dtw(&data[0].values, &data[1].values, None).unwrap());
    assert!(run_eval_dist(&data[..1], None, None, 0.1).is_err());
}

#[test]
fn distance_report_adds_latent_distances_with_a_model() {
    let data = run_synth(&waves_spec(4, 0.2, 0.05, 1), None).unwrap();
    let cfg = RunConfig { window: 120, ..tiny_run(Task::Cluster) };
    let (model, _, _) = run_train(&cfg, &data).unwrap();
    let out = run_eval_dist(&data, Some(&model), Some(5), 0.1).unwrap();
    assert!(out.pairs.iter().all(|p| p.latent.is_some_and(|v| v >= 0.0)));
    assert_eq!(out.reports.len(), 4);
}
