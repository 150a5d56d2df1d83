use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::models::{Architecture, MilModel, TaskHeadSpec};
use crate::numeric::SsmStep;
use crate::testutil::{cls2, randn, toy_model, toy_spec, ARCHS};

fn t(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn one_neuron_linear_rule() {
    let a = t(&[vec![1.5, -2.0, 0.5]]);
    let w = t(&[vec![2.0], vec![1.0], vec![-4.0]]);
    let y = -1.0;
    let r = lrp_linear(&a, &w, &Tensor::scalar(y), 1e-12, 0.0).unwrap();
    assert_eq!(r.dims(), (1, 3));
    for (i, expect) in [3.0, -2.0, -2.0].iter().enumerate() {
        assert!(close(r.data()[i], *expect, 1e-10));
    }
    assert!(close(r.sum(), y, 1e-10));
}

#[test]
fn linear_rule_positive_shares() {
    // contributions 1*2 = 2 and 3*2 = 6, so R = 8 splits 2 : 6
    let r = lrp_linear(&t(&[vec![1.0, 3.0]]), &t(&[vec![2.0], vec![2.0]]), &Tensor::scalar(8.0), 1e-9, 0.0)
        .unwrap();
    assert!(close(r.data()[0], 2.0, 1e-9) && close(r.data()[1], 6.0, 1e-9));
    // gamma boosts positive weights uniformly here, so the shares are unchanged
    let g = lrp_linear(&t(&[vec![1.0, 3.0]]), &t(&[vec![2.0], vec![2.0]]), &Tensor::scalar(8.0), 1e-9, 0.5)
        .unwrap();
    assert!(close(g.data()[0], 2.0, 1e-9));
}

#[test]
fn large_epsilon_shrinks_and_keeps_signs() {
    let a = t(&[vec![1.0, -2.0, 0.5]]);
    let w = t(&[vec![1.0], vec![1.5], vec![2.0]]);
    let small = lrp_linear(&a, &w, &Tensor::scalar(1.0), 1e-9, 0.0).unwrap();
    let big = lrp_linear(&a, &w, &Tensor::scalar(1.0), 1e6, 0.0).unwrap();
    for i in 0..3 {
        assert!(big.data()[i].abs() < 1e-5 * small.data()[i].abs());
        assert_eq!(big.data()[i].signum(), small.data()[i].signum());
    }
}

#[test]
fn ah_rule_cases() {
    let z = t(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]]);
    let onehot = t(&[vec![0.0, 1.0, 0.0]]);
    let r = t(&[vec![0.7, -0.2]]);
    let out = lrp_attention_ah(&onehot, &z, &r, 1e-9).unwrap();
    assert!(close(out.get(1, 0), 0.7, 1e-9) && close(out.get(1, 1), -0.2, 1e-9));
    assert_eq!(out.get(0, 0), 0.0);

    let same = t(&vec![vec![2.0, 1.0]; 4]);
    let uni = Tensor::filled(vec![1, 4], 0.25);
    let out = lrp_attention_ah(&uni, &same, &t(&[vec![1.0, 2.0]]), 1e-9).unwrap();
    for k in 0..4 {
        assert!(close(out.get(k, 0), 0.25, 1e-9) && close(out.get(k, 1), 0.5, 1e-9));
    }
}

#[test]
fn ln_rule_cases() {
    let r = t(&[vec![0.3, -0.4]]);
    assert_eq!(lrp_layernorm_ln(&t(&[vec![1.0, 2.0]]), &r, 1e-9).unwrap(), r);
    // z = (v, -v): both tokens receive (r1 + r2) / 2
    let z = t(&[vec![1.5], vec![-1.5]]);
    let out = lrp_layernorm_ln(&z, &t(&[vec![0.8], vec![0.2]]), 1e-12).unwrap();
    assert!(close(out.get(0, 0), 0.5, 1e-9) && close(out.get(1, 0), 0.5, 1e-9));
}

#[test]
fn silu_and_gate_rules() {
    let r = t(&[vec![1.0, -3.0]]);
    assert_eq!(lrp_silu(&r), r);
    let (a, b) = lrp_gate(&r);
    assert_eq!(a, t(&[vec![0.5, -1.5]]));
    assert_eq!(a, b);
    let (z, _) = lrp_gate(&Tensor::zeros(vec![1, 2]));
    assert_eq!(z.sum(), 0.0);
}

fn scalar_step(a: f64, b: f64, c: f64) -> SsmStep {
    SsmStep {
        a: Tensor::scalar(a),
        b: Tensor::scalar(b),
        c: Tensor::scalar(c),
    }
}

#[test]
fn ssm_rule_cases() {
    let eps = 1e-12;
    // A = 0: the state relevance goes to the current input only
    let steps = vec![scalar_step(0.0, 2.0, 1.0), scalar_step(0.0, 3.0, 1.0)];
    let x = vec![vec![1.0], vec![0.5]];
    let (rx, _) = lrp_ssm(&steps, &x, &[vec![0.0], vec![0.0]], Some(&[1.0]), eps).unwrap();
    assert!(close(rx[1][0], 1.0, 1e-9) && rx[0][0] == 0.0);

    let (rx, rh0) = lrp_ssm(&[scalar_step(0.7, 2.0, 1.0)], &[vec![1.5]], &[vec![0.0]], Some(&[0.9]), eps)
        .unwrap();
    assert!(close(rx[0][0], 0.9, 1e-9) && rh0 == vec![0.0]);

    // T = 2 hand-unrolled: h1 = b1 x1, h2 = a2 h1 + b2 x2, y2 = c2 h1
    let (a2, b1, b2, c2) = (0.6, 1.2, -0.8, 2.0);
    let (x1, x2) = (0.9, 1.1);
    let (ry2, rh2) = (0.4, -0.3);
    let steps = vec![scalar_step(0.5, b1, 1.0), scalar_step(a2, b2, c2)];
    let (rx, _) = lrp_ssm(&steps, &[vec![x1], vec![x2]], &[vec![0.0], vec![ry2]], Some(&[rh2]), eps).unwrap();
    let h1 = b1 * x1;
    let h2 = a2 * h1 + b2 * x2;
    assert!(close(rx[1][0], b2 * x2 * rh2 / h2, 1e-9));
    assert!(close(rx[0][0], a2 * h1 * rh2 / h2 + ry2, 1e-9));
}

fn bias_free(arch: Architecture, head: TaskHeadSpec, seed: u64) -> MilModel {
    let m = MilModel::init(toy_spec(arch, head, 4, false), seed).unwrap();
    if let Some(cls) = m.params.get("cls") {
        assert!(cls.data().iter().all(|&v| v == 0.0));
    }
    m
}

#[test]
fn conservation_on_bias_free_models() {
    let cfg = LrpConfig::default();
    for arch in ARCHS {
        for case in 0..5 {
            let model = bias_free(arch, cls2(), case);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + case);
            let x = randn(&mut rng, 3 + case as usize, 4);
            let trace = model.forward(&x).unwrap();
            let target = crate::explainers::ExplanationTarget::default_for(&trace.output);
            let res = lrp_explain(&trace, target, &cfg).unwrap();
            let total: f64 = res.scores.iter().sum();
            let drift = (total - res.seeded).abs() / res.seeded.abs();
            assert!(drift <= 1e-6, "{arch:?} case {case}: drift {drift}");
            assert_eq!(res.state.absorbed(), 0.0, "{arch:?}");
        }
    }
}

#[test]
fn relevance_is_linear_in_the_seed() {
    for arch in ARCHS {
        let model = toy_model(arch, cls2(), 4, true, 3);
        let x = randn(&mut ChaCha8Rng::seed_from_u64(4), 5, 4);
        let trace = model.forward(&x).unwrap();
        let seed = Tensor::row(vec![0.0, 1.25]);
        let cfg = LrpConfig::default();
        let base = lrp_from_seed(&trace, trace.head_pre, seed.clone(), &cfg).unwrap().scores;
        let neg = lrp_from_seed(&trace, trace.head_pre, seed.scale(-1.0), &cfg).unwrap().scores;
        let tri = lrp_from_seed(&trace, trace.head_pre, seed.scale(3.0), &cfg).unwrap().scores;
        for i in 0..5 {
            assert_eq!(neg[i], -base[i], "{arch:?}");
            assert!(close(tri[i], 3.0 * base[i], 1e-12), "{arch:?}");
        }
    }
}

#[test]
fn zero_instances_get_no_relevance() {
    for arch in ARCHS {
        let model = toy_model(arch, cls2(), 4, true, 5);
        let mut x = randn(&mut ChaCha8Rng::seed_from_u64(6), 4, 4);
        for d in 0..4 {
            x.set(1, d, 0.0);
        }
        let trace = model.forward(&x).unwrap();
        let res = lrp_explain(&trace, ExplanationTarget::ClassLogit(0), &LrpConfig::default()).unwrap();
        assert_eq!(res.scores[1], 0.0, "{arch:?}");
    }
}

#[test]
fn scaling_target_weights_keeps_the_ordering() {
    let model = toy_model(Architecture::AttnMil, cls2(), 4, true, 7);
    let x = randn(&mut ChaCha8Rng::seed_from_u64(8), 6, 4);
    let target = ExplanationTarget::ClassLogit(1);
    let mut scaled = model.clone();
    let w = scaled.params.get_mut("head.w").unwrap();
    for r in 0..w.rows() {
        w.set(r, 1, 2.5 * w.get(r, 1));
    }
    let b = scaled.params.get_mut("head.b").unwrap();
    b.set(0, 1, 2.5 * b.get(0, 1));
    let cfg = LrpConfig::default();
    let s1 = lrp_explain(&model.forward(&x).unwrap(), target, &cfg).unwrap().scores;
    let s2 = lrp_explain(&scaled.forward(&x).unwrap(), target, &cfg).unwrap().scores;
    for i in 0..6 {
        assert!(close(s2[i], 2.5 * s1[i], 1e-9));
    }
}

#[test]
fn survival_composite() {
    let head = TaskHeadSpec::Survival { intervals: 2 };
    let model = toy_model(Architecture::AttnMil, head, 4, true, 9);
    let x = randn(&mut ChaCha8Rng::seed_from_u64(10), 3, 4);
    let trace = model.forward(&x).unwrap();
    let l = trace.graph.value(trace.head_pre).data().to_vec();
    // r = -(1 - h1) - (1 - h1)(1 - h2) with h = sigmoid(l)
    let h: Vec<f64> = l.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
    let d1 = h[0] * (1.0 - h[0]) * (2.0 - h[1]);
    let d2 = (1.0 - h[0]) * h[1] * (1.0 - h[1]);
    let seed = lrp_survival_composite(&trace).unwrap();
    assert!(close(seed.data()[0], l[0] * d1, 1e-12));
    assert!(close(seed.data()[1], l[1] * d2, 1e-12));

    let head = TaskHeadSpec::Survival { intervals: 4 };
    let model = toy_model(Architecture::MambaMil, head, 4, true, 11);
    let trace = model.forward(&x).unwrap();
    let grads = trace.graph.backward(&[(trace.risk.unwrap(), Tensor::scalar(1.0))]).unwrap();
    let g = grads.get(trace.head_pre).unwrap();
    let expect = trace.graph.value(trace.head_pre).zip_map(g, |a, b| a * b).unwrap();
    assert_eq!(lrp_survival_composite(&trace).unwrap(), expect);

    let mut zero = model.clone();
    for name in ["head.w", "head.b"] {
        let p = zero.params.get_mut(name).unwrap();
        *p = Tensor::zeros(p.shape().to_vec());
    }
    let res = lrp_explain(&zero.forward(&x).unwrap(), ExplanationTarget::SurvivalRisk, &LrpConfig::default())
        .unwrap();
    assert_eq!(res.scores, vec![0.0; 3]);
}

#[test]
fn relevance_into_a_softmax_is_rejected() {
    let model = toy_model(Architecture::AttnMil, cls2(), 4, true, 12);
    let x = randn(&mut ChaCha8Rng::seed_from_u64(13), 3, 4);
    let trace = model.forward(&x).unwrap();
    let sm = trace
        .graph
        .nodes()
        .iter()
        .position(|n| matches!(n.op, Op::Softmax(_)))
        .map(NodeId)
        .unwrap();
    let seed = trace.graph.value(sm).clone();
    match lrp_propagate(&trace.graph, &[(sm, seed)], &LrpConfig::default()) {
        Err(Error::UnsupportedNode { op: "softmax", .. }) => {}
        other => panic!("unexpected {:?}", other.map(|s| s.ledger)),
    }
}

#[test]
fn ledger_csv() {
    let model = bias_free(Architecture::AttnMil, cls2(), 1);
    let x = randn(&mut ChaCha8Rng::seed_from_u64(2), 3, 4);
    let res = lrp_explain(&model.forward(&x).unwrap(), ExplanationTarget::ClassLogit(0), &LrpConfig::default())
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.csv");
    write_ledger(&path, &res.state).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("node,op,relevance,absorbed\n"));
    assert_eq!(text.lines().count(), res.state.ledger.len() + 1);
    assert!(text.contains(",input,"));
}

proptest! {
    #[test]
    fn ah_and_ln_rules_conserve(seed in any::<u64>(), n in 2usize..6, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = randn(&mut rng, n, d);
        let logits = randn(&mut rng, 3, n);
        let p = crate::numeric::softmax_rows(&logits);
        let r = randn(&mut rng, 3, d);
        let eps = 1e-9;
        let out = lrp_attention_ah(&p, &z, &r, eps).unwrap();
        let y = p.matmul(&z).unwrap();
        for c in 0..d {
            let got: f64 = (0..n).map(|k| out.get(k, c)).sum();
            let want: f64 = (0..3).map(|j| r.get(j, c)).sum();
            let e = eps * y.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let leak: f64 = (0..3).map(|j| r.get(j, c).abs() * e / y.get(j, c).abs()).sum();
            prop_assert!((got - want).abs() <= leak + 1e-12 * (1.0 + want.abs()));
        }
        let r2 = randn(&mut rng, n, d);
        let ln = lrp_layernorm_ln(&z, &r2, eps).unwrap();
        for c in 0..d {
            let mean = (0..n).map(|k| z.get(k, c)).sum::<f64>() / n as f64;
            let got: f64 = (0..n).map(|k| ln.get(k, c)).sum();
            let want: f64 = (0..n).map(|k| r2.get(k, c)).sum();
            let e = eps * (0..n).fold(0.0f64, |m, k| m.max((z.get(k, c) - mean).abs()));
            let leak: f64 = (0..n).map(|k| r2.get(k, c).abs() * e / (z.get(k, c) - mean).abs()).sum();
            prop_assert!((got - want).abs() <= leak + 1e-12 * (1.0 + want.abs()));
        }
    }
}

