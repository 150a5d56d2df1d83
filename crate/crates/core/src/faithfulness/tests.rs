use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::explainers::explain_random;
use crate::models::Architecture;
use crate::testutil::{cls2, randn, toy_model};

fn heatmap(id: &str, method: Method, scores: Vec<f64>) -> Heatmap {
    Heatmap {
        bag_id: id.into(),
        method,
        target: ExplanationTarget::ClassLogit(1),
        signed: false,
        scores,
    }
}

fn constant_model(bias: [f64; 2]) -> MilModel {
    let mut m = toy_model(Architecture::AttnMil, cls2(), 3, true, 1);
    let w = m.params.get_mut("head.w").unwrap();
    *w = Tensor::zeros(w.shape().to_vec());
    m.params.insert("head.b".into(), Tensor::row(bias.to_vec()));
    m
}

#[test]
fn chunk_sizes_follow_floor_slicing() {
    let scores: Vec<f64> = (0..100).map(|i| (i * 37 % 100) as f64).collect();
    let plan = partition_patches(&scores, FlipOrder::Descending).unwrap();
    assert!(plan.chunks.iter().all(|c| c.len() == 1));
    assert_eq!(plan.chunks[0], vec![scores.iter().position(|&s| s == 99.0).unwrap()]);

    let plan = partition_patches(&[0.3, 0.1, 0.2], FlipOrder::Ascending).unwrap();
    assert_eq!(plan.chunks.iter().filter(|c| c.is_empty()).count(), 97);
    let flat: Vec<usize> = plan.chunks.concat();
    assert_eq!(flat, vec![1, 2, 0]);

    let scores: Vec<f64> = (0..250).map(|i| i as f64).collect();
    let plan = partition_patches(&scores, FlipOrder::Descending).unwrap();
    for (i, c) in plan.chunks.iter().enumerate() {
        let (lo, hi) = ((250 * i) / 100, (250 * (i + 1)) / 100);
        assert_eq!(c.len(), hi - lo);
        assert_eq!(c.len(), if i % 2 == 0 { 2 } else { 3 });
        let expect: Vec<usize> = (lo..hi).map(|k| 249 - k).collect();
        assert_eq!(*c, expect);
    }
    assert!(partition_patches(&[], FlipOrder::Ascending).is_err());
}

#[test]
fn ties_break_by_index_in_both_orders() {
    let s = [1.0, 2.0, 1.0, 2.0];
    let asc = partition_patches(&s, FlipOrder::Ascending).unwrap().chunks.concat();
    let desc = partition_patches(&s, FlipOrder::Descending).unwrap().chunks.concat();
    assert_eq!(asc, vec![0, 2, 1, 3]);
    assert_eq!(desc, vec![1, 3, 0, 2]);
}

#[test]
fn aupc_closed_forms() {
    assert_eq!(aupc(&[0.0; 101]), 0.0);
    let lin: Vec<f64> = (0..=100).map(|m| 1.0 - m as f64 / 100.0).collect();
    assert!((aupc(&lin) - 0.505).abs() < 1e-12);
    let c = 0.375;
    assert_eq!(aupc(&[c; 101]), 101.0 * c / 100.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let c: f64 = rng.random_range(-3.0..3.0);
        assert_eq!(aupc(&[c; 101]), 101.0 * c / 100.0, "c = {c}");
    }
}

#[test]
fn constant_model_gives_constant_curves() {
    let model = constant_model([0.0, 0.0]);
    let x = randn(&mut ChaCha8Rng::seed_from_u64(2), 7, 3);
    let h = heatmap("b", Method::Random, explain_random(7, 3));
    let rec = evaluate_heatmap(&model, &x, &h, Track::Softmax).unwrap();
    assert!(rec.ascending.iter().chain(&rec.descending).all(|&v| v == 0.5));
    assert_eq!(rec.aupc_asc, 101.0 * 0.5 / 100.0);
    assert_eq!(rec.srg, 0.0);

    let model = constant_model([0.3, -1.1]);
    let rec = evaluate_heatmap(&model, &x, &h, Track::Logit).unwrap();
    assert!(rec.ascending.iter().all(|&v| v == -1.1));
    assert_eq!(rec.srg, 0.0);
}

#[test]
fn curve_endpoints() {
    let model = toy_model(Architecture::MambaMil, cls2(), 3, true, 4);
    let x = randn(&mut ChaCha8Rng::seed_from_u64(5), 9, 3);
    let t = ExplanationTarget::ClassLogit(1);
    let plan = partition_patches(&explain_random(9, 1), FlipOrder::Descending).unwrap();
    let curve = flip_curve(&model, &x, &plan, t, Track::Softmax).unwrap();
    assert_eq!(curve.len(), 101);
    let full = tracked_output(&model.predict(&x).unwrap(), t, Track::Softmax).unwrap();
    assert_eq!(curve[0], full);
    let empty = tracked_output(&model.predict(&Tensor::zeros(vec![1, 3])).unwrap(), t, Track::Softmax).unwrap();
    assert_eq!(curve[100], empty);
    // removing chunks in a different order keeps the original instance order
    let rest: Vec<usize> = (0..9).filter(|i| !plan.chunks[..50].concat().contains(i)).collect();
    let mid = tracked_output(&model.predict(&x.select_rows(&rest)).unwrap(), t, Track::Softmax).unwrap();
    assert_eq!(curve[50], mid);
}

#[test]
fn descending_curve_drops_at_the_key_instance() {
    // uniform attention, logit of class 1 reads one feature carried by instance 4
    let mut model = toy_model(Architecture::AttnMil, cls2(), 3, true, 6);
    let hidden = model.spec.hidden;
    let mut ew = Tensor::zeros(vec![3, hidden]);
    ew.set(0, 0, 1.0);
    model.params.insert("embed.w".into(), ew);
    model.params.insert("embed.b".into(), Tensor::zeros(vec![1, hidden]));
    let mut hw = Tensor::zeros(vec![hidden, 2]);
    hw.set(0, 1, 4.0);
    model.params.insert("head.w".into(), hw);
    model.params.insert("head.b".into(), Tensor::row(vec![0.0, -1.0]));
    let pw = model.params.get_mut("pool.w").unwrap();
    *pw = Tensor::zeros(pw.shape().to_vec());
    let mut x = Tensor::zeros(vec![100, 3]);
    x.set(4, 0, 100.0);
    let mut scores = vec![0.0; 100];
    scores[4] = 1.0;
    let t = ExplanationTarget::ClassLogit(1);
    let plan = partition_patches(&scores, FlipOrder::Descending).unwrap();
    let curve = flip_curve(&model, &x, &plan, t, Track::Softmax).unwrap();
    assert_eq!(plan.chunks[0], vec![4]);
    assert!(curve[0] > 0.5);
    assert!(curve[1] < curve[0] - 0.2);
    let asc = flip_curve(
        &model,
        &x,
        &partition_patches(&scores, FlipOrder::Ascending).unwrap(),
        t,
        Track::Softmax,
    )
    .unwrap();
    assert!(aupc(&asc) - aupc(&curve) > 0.1);
}

#[test]
fn srg_antisymmetry_and_identity() {
    assert_eq!(srg(0.4, 0.4), 0.0);
    assert_eq!(srg(0.7, 0.2), -srg(0.2, 0.7));
}

#[test]
fn cohort_matrix_layout_and_missing_cells() {
    let model = toy_model(Architecture::AttnMil, cls2(), 3, true, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bags: Vec<(String, Tensor)> = (0..3)
        .map(|i| (format!("bag_{i}"), randn(&mut rng, 4 + i, 3)))
        .collect();
    let methods = [Method::Random, Method::Attention];
    let mut maps = Vec::new();
    for (id, x) in &bags {
        for (k, m) in methods.iter().enumerate() {
            maps.push(heatmap(id, *m, explain_random(x.rows(), k as u64)));
        }
    }
    let mat = evaluate_cohort(&model, &bags, &maps, &methods, Track::Softmax).unwrap();
    assert_eq!(mat.srg.len(), 3);
    assert_eq!(mat.methods, methods.to_vec());
    for (i, row) in mat.srg.iter().enumerate() {
        let first = &mat.records[i * 2];
        let second = &mat.records[i * 2 + 1];
        assert_eq!(first.ascending[0], second.ascending[0]);
        assert_eq!(first.descending[0], first.ascending[0]);
        assert_eq!(row[1], second.srg);
    }
    let dir = tempfile::tempdir().unwrap();
    write_srg(&dir.path().join("srg.csv"), &mat.records).unwrap();
    write_curves(&dir.path().join("curves.csv"), &mat.records).unwrap();
    let back = read_srg(&dir.path().join("srg.csv")).unwrap();
    assert_eq!(back.srg, mat.srg);
    assert_eq!(read_curves(&dir.path().join("curves.csv")).unwrap(), mat.records);
    let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 6 * 2 * 101);
    assert!(curves.starts_with("bag_id,method,ordering,m,output\n"));

    maps.pop();
    assert!(evaluate_cohort(&model, &bags, &maps, &methods, Track::Softmax).is_err());
}

#[test]
fn random_heatmaps_are_neutral() {
    let model = toy_model(Architecture::AttnMil, cls2(), 3, true, 9);
    let x = randn(&mut ChaCha8Rng::seed_from_u64(10), 30, 3);
    let srgs: Vec<f64> = (0..200)
        .map(|s| {
            let h = heatmap("b", Method::Random, explain_random(30, s));
            evaluate_heatmap(&model, &x, &h, Track::Softmax).unwrap().srg
        })
        .collect();
    let n = srgs.len() as f64;
    let mean = srgs.iter().sum::<f64>() / n;
    let sd = (srgs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() <= 1.96 * sd / n.sqrt(), "mean {mean} sd {sd}");
}

proptest! {
    #[test]
    fn plans_cover_every_instance(n in 1usize..400, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        for order in [FlipOrder::Ascending, FlipOrder::Descending] {
            let plan = partition_patches(&scores, order).unwrap();
            let mut all = plan.chunks.concat();
            prop_assert_eq!(all.len(), n);
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn srg_invariant_under_monotone_maps(seed in 0u64..50, a in 0.1f64..3.0, b in -2.0f64..2.0) {
        let model = toy_model(Architecture::AttnMil, cls2(), 3, true, 11);
        let x = randn(&mut ChaCha8Rng::seed_from_u64(seed), 12, 3);
        let s = explain_random(12, seed);
        let mapped: Vec<f64> = s.iter().map(|v| (a * v + b).exp() + v.powi(3)).collect();
        let r1 = evaluate_heatmap(&model, &x, &heatmap("b", Method::Random, s), Track::Softmax).unwrap();
        let r2 = evaluate_heatmap(&model, &x, &heatmap("b", Method::Random, mapped), Track::Softmax).unwrap();
        prop_assert_eq!(r1.srg, r2.srg);
    }
}
