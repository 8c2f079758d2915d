use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::gradcheck;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn shape(cell: CellKind, hidden: usize, latent: usize, len: usize) -> BranchShape {
    BranchShape {
        cell,
        hidden,
        latent,
        series_len: len,
        standard_lstm_output: false,
    }
}

fn batch(rows: usize, len: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let data = (0..rows * len).map(|_| r.random_range(0.0..1.0)).collect();
    Tensor::matrix(rows, len, data).unwrap()
}

#[test]
fn rel_distance_examples() {
    let x = [0.3, -1.2, 4.0];
    assert_eq!(rel_distance(&x, &x).unwrap(), 0.0);
    assert!((rel_distance(&x, &[0.0; 3]).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(rel_distance(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 1.0);
    assert!((rel_distance(&[3.0, 4.0], &[3.0, 0.0]).unwrap() - 0.8).abs() < 1e-15);
    assert!(matches!(
        rel_distance(&[1.0], &[1.0, 2.0]),
        Err(Error::LengthMismatch { .. })
    ));
}

#[test]
fn cos_similarity_examples() {
    let x = [0.3, -1.2, 4.0];
    assert!((cos_similarity(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(cos_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    let c = cos_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
    assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-10);
    assert_eq!(cos_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
    assert!(cos_similarity(&[1.0], &[]).is_err());
}

#[test]
fn graph_features_match_plain_functions() {
    let x = batch(4, 7, 1);
    let r = batch(4, 7, 2);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let rv = g.constant(r.clone());
    let (rel, cos) = features(&mut g, xv, &x, rv).unwrap();
    for row in 0..4 {
        let er = rel_distance(x.row(row), r.row(row)).unwrap();
        let ec = cos_similarity(x.row(row), r.row(row)).unwrap();
        assert!((g.value(rel).data()[row] - er).abs() < 1e-14);
        assert!((g.value(cos).data()[row] - ec).abs() < 1e-14);
    }
}

#[test]
fn perfect_reconstruction_features() {
    let x = batch(3, 5, 3);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let (rel, cos) = features(&mut g, xv, &x, xv).unwrap();
    assert!(g.value(rel).data().iter().all(|v| *v == 0.0));
    assert!(g.value(cos).data().iter().all(|v| (v - 1.0).abs() < 1e-10));
}

fn w_branch(n_e: usize, latent: usize, seed: u64) -> (ParamSet, WBranch) {
    let mut params = ParamSet::new();
    let w = WBranch::new(shape(CellKind::Lstm, 3, latent, 8), n_e, &mut params, &mut rng(seed)).unwrap();
    (params, w)
}

fn d_branch(n_l: usize, latent: usize, seed: u64) -> (ParamSet, DBranch) {
    let mut params = ParamSet::new();
    let sched = DilationSchedule::exponential(n_l);
    let d = DBranch::new(shape(CellKind::Gru, 3, latent, 8), sched, &mut params, &mut rng(seed)).unwrap();
    (params, d)
}

#[test]
fn single_pair_picks_itself() {
    let (params, w) = w_branch(1, 1, 4);
    let mut g = Graph::new();
    let b = params.bind_frozen(&mut g);
    let out = w.forward(&mut g, &b, &batch(5, 8, 5)).unwrap();
    assert!(out.picks.iter().all(|p| *p == (0, 0)));
}

#[test]
fn w_reports_minimum_rel_distance_and_maximum_cosine() {
    for seed in 0..4 {
        let (params, w) = w_branch(3, 2, seed);
        let x = batch(6, 8, seed + 50);
        let mut g = Graph::new();
        let b = params.bind_frozen(&mut g);
        let out = w.forward(&mut g, &b, &x).unwrap();
        let z = g.value(out.z).clone();
        assert_eq!(z.dims2(), (6, 4));
        for row in 0..6 {
            let rels: Vec<f64> = out
                .recons
                .iter()
                .map(|&r| rel_distance(x.row(row), g.value(r).row(row)).unwrap())
                .collect();
            let coss: Vec<f64> = out
                .recons
                .iter()
                .map(|&r| cos_similarity(x.row(row), g.value(r).row(row)).unwrap())
                .collect();
            let min = rels.iter().copied().fold(f64::INFINITY, f64::min);
            let max = coss.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((z.get2(row, 2) - min).abs() < 1e-12);
            assert!((z.get2(row, 3) - max).abs() < 1e-12);
            assert!(rels.iter().all(|r| z.get2(row, 2) <= r + 1e-15));
        }
    }
}

#[test]
fn reconstructions_keep_length() {
    let (params, w) = w_branch(2, 1, 6);
    let (dparams, d) = d_branch(2, 1, 7);
    let x = batch(2, 8, 8);
    let mut g = Graph::new();
    let b = params.bind_frozen(&mut g);
    let out = w.forward(&mut g, &b, &x).unwrap();
    assert!(out.recons.iter().all(|&r| g.shape(r) == [2, 8]));
    let db = dparams.bind_frozen(&mut g);
    let out = d.forward(&mut g, &db, &x).unwrap();
    assert_eq!(g.shape(out.recons[0]), &[2, 8]);
    assert_eq!(g.shape(out.z), &[2, 3]);
    assert_eq!(g.shape(out.z_c), &[2, 1]);
}

#[test]
fn d_encoder_finals_are_last_states() {
    let (params, d) = d_branch(2, 1, 9);
    let x = batch(3, 8, 10);
    let mut g = Graph::new();
    let b = params.bind_frozen(&mut g);
    let cols = columns(&mut g, &x);
    let enc = dilated_forward(&mut g, &b, d.layers(), &d.schedule, &cols).unwrap();
    for (layer, fin) in enc.states.iter().zip(&enc.finals) {
        assert_eq!(g.value(layer.last().unwrap().h).data(), g.value(*fin).data());
    }
    // The branch's z_c must be the combiner applied to those finals.
    let joined = g.concat_cols(&enc.finals).unwrap();
    let expect = d.combiner.apply(&mut g, &b, joined).unwrap();
    let out = d.forward(&mut g, &b, &x).unwrap();
    assert_eq!(g.value(out.z_c).data(), g.value(expect).data());
}

#[test]
fn forward_rejects_empty_and_overlong() {
    let (params, w) = w_branch(1, 1, 11);
    let mut g = Graph::new();
    let b = params.bind_frozen(&mut g);
    let empty = Tensor::new(vec![0, 8], vec![]).unwrap();
    assert!(matches!(w.forward(&mut g, &b, &empty), Err(Error::EmptyInput(_))));
    assert!(w.forward(&mut g, &b, &batch(1, 9, 1)).is_err());
}

#[test]
fn masks_round_trip() {
    let (_, mut w) = w_branch(3, 1, 12);
    let masks = w.masks();
    assert_eq!(masks.len(), 6);
    assert_eq!(masks[0].skip(), 1);
    assert_eq!(masks[1].skip(), 2);
    assert_eq!(masks[2].skip(), 3);
    let (_, mut other) = w_branch(3, 1, 13);
    assert_ne!(other.masks(), masks);
    other.set_masks(masks.clone()).unwrap();
    assert_eq!(other.masks(), masks);
    assert!(w.set_masks(masks[..2].to_vec()).is_err());
}

fn branch_gradcheck(params: &ParamSet, f: impl Fn(&mut Graph, &Bound) -> Result<Encoded>) {
    let report = gradcheck::check(params.tensors(), 1e-6, |g, vars| {
        let b = Bound::from_vars(vars.to_vec());
        let out = f(g, &b)?;
        let sq = g.mul(out.z, out.z)?;
        let zs = g.sum(sq);
        let r = out.recons[0];
        let rs = g.sum(r);
        g.add(zs, rs)
    })
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn w_branch_gradients_match_finite_differences() {
    let mut params = ParamSet::new();
    let w = WBranch::new(shape(CellKind::Lstm, 2, 1, 5), 2, &mut params, &mut rng(14)).unwrap();
    let x = batch(2, 5, 15);
    branch_gradcheck(&params, |g, b| w.forward(g, b, &x));
}

#[test]
fn d_branch_gradients_match_finite_differences() {
    let mut params = ParamSet::new();
    let sched = DilationSchedule::exponential(2);
    let d = DBranch::new(shape(CellKind::Gru, 2, 1, 5), sched, &mut params, &mut rng(16)).unwrap();
    let x = batch(2, 11, 17);
    branch_gradcheck(&params, |g, b| d.forward(g, b, &x));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn latent_width_and_purity(seed in any::<u64>(), n_e in 1usize..4, latent in 1usize..3, rows in 1usize..4) {
        let (params, w) = w_branch(n_e, latent, seed);
        let (dparams, d) = d_branch(1 + (seed % 2) as usize, latent, seed);
        let x = batch(rows, 8, seed ^ 0xabc);
        let run = || {
            let mut g = Graph::new();
            let b = params.bind_frozen(&mut g);
            let wz = w.forward(&mut g, &b, &x).unwrap().z;
            let db = dparams.bind_frozen(&mut g);
            let dz = d.forward(&mut g, &db, &x).unwrap().z;
            (g.value(wz).clone(), g.value(dz).clone())
        };
        let (wz, dz) = run();
        prop_assert_eq!(wz.dims2(), (rows, latent + 2));
        prop_assert_eq!(dz.dims2(), (rows, latent + 2));
        for z in [&wz, &dz] {
            for r in 0..rows {
                prop_assert!(z.get2(r, latent) >= 0.0);
                prop_assert!((-1.0..=1.0).contains(&z.get2(r, latent + 1)));
            }
        }
        let (wz2, dz2) = run();
        prop_assert_eq!(wz, wz2);
        prop_assert_eq!(dz, dz2);
    }
}
