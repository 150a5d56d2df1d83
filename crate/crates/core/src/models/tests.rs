use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn small(arch: Architecture, head: TaskHeadSpec) -> ModelSpec {
    ModelSpec {
        hidden: 8,
        layers: 2,
        heads: 2,
        state_size: 4,
        ..ModelSpec::new(arch, 5, head)
    }
}

fn cls2() -> TaskHeadSpec {
    TaskHeadSpec::Classification { classes: 2 }
}

/// Perturbs every parameter so that biases and the class token are nonzero.
fn jitter(model: &mut MilModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params.values_mut() {
        for v in t.data_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn logits(out: &HeadOutput) -> Vec<f64> {
    match out {
        HeadOutput::Classification { logits, .. } => logits.clone(),
        HeadOutput::Regression { diff, .. } => vec![*diff],
        HeadOutput::Survival { logits, .. } => logits.clone(),
    }
}

// Plain-loop reference implementations.
mod oracle {
    pub type M = Vec<Vec<f64>>;

    pub fn from(t: &crate::numeric::Tensor) -> M {
        (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
    }

    pub fn mm(a: &M, b: &M) -> M {
        let mut out = vec![vec![0.0; b[0].len()]; a.len()];
        for i in 0..a.len() {
            for j in 0..b[0].len() {
                for k in 0..b.len() {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    pub fn add_b(a: &M, b: &M) -> M {
        a.iter()
            .map(|r| r.iter().zip(&b[0]).map(|(x, y)| x + y).collect())
            .collect()
    }

    pub fn map(a: &M, f: impl Fn(f64) -> f64) -> M {
        a.iter().map(|r| r.iter().map(|&x| f(x)).collect()).collect()
    }

    pub fn softmax(v: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    pub fn layernorm(v: &[f64]) -> Vec<f64> {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        v.iter().map(|x| (x - mean) / (sd + 1e-5)).collect()
    }

    pub fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }
}

#[test]
fn attnmil_singleton_weight_is_one() {
    let model = MilModel::init(small(Architecture::AttnMil, cls2()), 1).unwrap();
    let x = randn(&mut ChaCha8Rng::seed_from_u64(2), 1, 5);
    let t = model.forward(&x).unwrap();
    assert_eq!(t.attention, AttentionRecord::Pooling(vec![1.0]));
}

#[test]
fn mambamil_singleton_weight_is_one() {
    let model = MilModel::init(small(Architecture::MambaMil, cls2()), 1).unwrap();
    let x = randn(&mut ChaCha8Rng::seed_from_u64(2), 1, 5);
    let t = model.forward(&x).unwrap();
    assert_eq!(t.attention, AttentionRecord::Pooling(vec![1.0]));
}

#[test]
fn attnmil_duplication_leaves_output_unchanged() {
    let mut model = MilModel::init(small(Architecture::AttnMil, cls2()), 3).unwrap();
    jitter(&mut model, 4);
    let x = randn(&mut ChaCha8Rng::seed_from_u64(5), 6, 5);
    let doubled = x.select_rows(&[0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5]);
    let a = logits(&model.predict(&x).unwrap());
    let b = logits(&model.predict(&doubled).unwrap());
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn attnmil_matches_straight_line_oracle() {
    use oracle::*;
    let mut model = MilModel::init(small(Architecture::AttnMil, cls2()), 6).unwrap();
    jitter(&mut model, 7);
    let x = randn(&mut ChaCha8Rng::seed_from_u64(8), 7, 5);
    let p = |n: &str| from(&model.params[n]);
    let h = map(&add_b(&mm(&from(&x), &p("embed.w")), &p("embed.b")), |v| v.max(0.0));
    let t = map(&add_b(&mm(&h, &p("pool.v.w")), &p("pool.v.b")), f64::tanh);
    let s: Vec<f64> = mm(&t, &p("pool.w")).iter().map(|r| r[0]).collect();
    let a = softmax(&s);
    let mut z = vec![vec![0.0; 8]];
    for (n, row) in h.iter().enumerate() {
        for d in 0..8 {
            z[0][d] += a[n] * row[d];
        }
    }
    let out = add_b(&mm(&z, &p("head.w")), &p("head.b"));
    let got = logits(&model.predict(&x).unwrap());
    for (g, e) in got.iter().zip(&out[0]) {
        assert!((g - e).abs() < 1e-12, "{g} vs {e}");
    }
}

#[test]
fn pooling_invariant_to_permutation() {
    for arch in [Architecture::AttnMil, Architecture::TransMil] {
        let mut model = MilModel::init(small(arch, cls2()), 9).unwrap();
        jitter(&mut model, 10);
        let x = randn(&mut ChaCha8Rng::seed_from_u64(11), 9, 5);
        let perm = [3, 8, 0, 5, 1, 7, 2, 6, 4];
        let a = logits(&model.predict(&x).unwrap());
        let b = logits(&model.predict(&x.select_rows(&perm)).unwrap());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9, "{arch:?}: {u} vs {v}");
        }
    }
}

#[test]
fn mambamil_depends_on_order() {
    let mut model = MilModel::init(small(Architecture::MambaMil, cls2()), 9).unwrap();
    jitter(&mut model, 10);
    let x = randn(&mut ChaCha8Rng::seed_from_u64(11), 6, 5);
    let a = logits(&model.predict(&x).unwrap());
    let b = logits(&model.predict(&x.select_rows(&[5, 4, 3, 2, 1, 0])).unwrap());
    assert!(a.iter().zip(&b).any(|(u, v)| (u - v).abs() > 1e-9));
}

#[test]
fn transmil_singleton_attention_rows_sum_to_one() {
    let model = MilModel::init(small(Architecture::TransMil, cls2()), 12).unwrap();
    let x = randn(&mut ChaCha8Rng::seed_from_u64(13), 1, 5);
    let t = model.forward(&x).unwrap();
    let AttentionRecord::Layers(layers) = &t.attention else {
        panic!()
    };
    assert_eq!(layers.len(), 2);
    for a in layers {
        assert_eq!(a.dims(), (2, 2));
        for s in a.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn transmil_single_block_matches_oracle() {
    use oracle::*;
    let spec = ModelSpec {
        layers: 1,
        heads: 1,
        ..small(Architecture::TransMil, cls2())
    };
    let mut model = MilModel::init(spec, 14).unwrap();
    jitter(&mut model, 15);
    let x = randn(&mut ChaCha8Rng::seed_from_u64(16), 4, 5);
    let p = |n: &str| from(&model.params[n]);
    let h = map(&add_b(&mm(&from(&x), &p("embed.w")), &p("embed.b")), |v| v.max(0.0));
    let mut tok = vec![p("cls")[0].clone()];
    tok.extend(h);
    let ln: M = tok.iter().map(|r| layernorm(r)).collect();
    let q = mm(&ln, &p("l0.h0.q.w"));
    let k = mm(&ln, &p("l0.h0.k.w"));
    let v = mm(&ln, &p("l0.h0.v.w"));
    let n = tok.len();
    let mut o = vec![vec![0.0; 8]; n];
    for i in 0..n {
        let s: Vec<f64> = (0..n)
            .map(|j| (0..8).map(|d| q[i][d] * k[j][d]).sum::<f64>() / 8f64.sqrt())
            .collect();
        let a = softmax(&s);
        for j in 0..n {
            for d in 0..8 {
                o[i][d] += a[j] * v[j][d];
            }
        }
    }
    let att = add_b(&mm(&o, &p("l0.o.w")), &p("l0.o.b"));
    let tok: M = tok
        .iter()
        .zip(&att)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    let ln: M = tok.iter().map(|r| layernorm(r)).collect();
    let f = map(&add_b(&mm(&ln, &p("l0.ff1.w")), &p("l0.ff1.b")), |v| v.max(0.0));
    let f = add_b(&mm(&f, &p("l0.ff2.w")), &p("l0.ff2.b"));
    let cls: Vec<f64> = tok[0].iter().zip(&f[0]).map(|(a, b)| a + b).collect();
    let z = vec![layernorm(&cls)];
    let out = add_b(&mm(&z, &p("head.w")), &p("head.b"));
    let got = logits(&model.predict(&x).unwrap());
    for (g, e) in got.iter().zip(&out[0]) {
        assert!((g - e).abs() < 1e-10, "{g} vs {e}");
    }
}

#[test]
fn mambamil_null_output_path_gives_head_of_zero() {
    let mut model = MilModel::init(small(Architecture::MambaMil, cls2()), 17).unwrap();
    jitter(&mut model, 18);
    for name in ["mamba.out.w", "mamba.out.b"] {
        let t = model.params.get_mut(name).unwrap();
        *t = t.map(|_| 0.0);
    }
    let x = randn(&mut ChaCha8Rng::seed_from_u64(19), 5, 5);
    let t = model.forward(&x).unwrap();
    assert!(t.graph.value(t.embedding).data().iter().all(|&v| v == 0.0));
    assert_eq!(logits(&t.output), model.params["head.b"].data().to_vec());
}

#[test]
fn mambamil_three_steps_match_unrolled_recurrence() {
    use oracle::*;
    let spec = ModelSpec {
        hidden: 2,
        state_size: 1,
        ..small(Architecture::MambaMil, TaskHeadSpec::Regression { reference_value: 0.0 })
    };
    let mut model = MilModel::init(spec, 20).unwrap();
    jitter(&mut model, 21);
    let x = randn(&mut ChaCha8Rng::seed_from_u64(22), 3, 5);
    let p = |n: &str| from(&model.params[n]);
    let silu = |v: f64| v * sig(v);
    let h = map(&add_b(&mm(&from(&x), &p("embed.w")), &p("embed.b")), |v| v.max(0.0));
    let xa = map(&add_b(&mm(&h, &p("mamba.x.w")), &p("mamba.x.b")), silu);
    let dt = map(&add_b(&mm(&xa, &p("mamba.dt.w")), &p("mamba.dt.b")), sig);
    let bm = mm(&xa, &p("mamba.b.w"));
    let cm = mm(&xa, &p("mamba.c.w"));
    let a_log = p("mamba.a_log");
    let zb = map(&add_b(&mm(&h, &p("mamba.z.w")), &p("mamba.z.b")), silu);
    let mut y = vec![vec![0.0; 2]; 3];
    for ch in 0..2 {
        let mut state = 0.0;
        for t in 0..3 {
            y[t][ch] = cm[t][0] * state;
            let a = (-dt[t][ch] * a_log[ch][0].exp()).exp();
            state = a * state + dt[t][ch] * bm[t][0] * xa[t][ch];
        }
    }
    let gated: M = y
        .iter()
        .zip(&zb)
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u * v).collect())
        .collect();
    let m = add_b(&mm(&gated, &p("mamba.out.w")), &p("mamba.out.b"));
    let t = map(&add_b(&mm(&m, &p("pool.v.w")), &p("pool.v.b")), f64::tanh);
    let s: Vec<f64> = mm(&t, &p("pool.w")).iter().map(|r| r[0]).collect();
    let a = softmax(&s);
    let z: Vec<f64> = (0..2).map(|d| (0..3).map(|n| a[n] * m[n][d]).sum()).collect();
    let out = add_b(&mm(&vec![z], &p("head.w")), &p("head.b"));
    let got = logits(&model.predict(&x).unwrap());
    assert!((got[0] - out[0][0]).abs() < 1e-12, "{} vs {}", got[0], out[0][0]);
}

#[test]
fn survival_reference_hazard() {
    let (s, r) = survival_from_hazards(&[0.5; 4]);
    assert_eq!(s, vec![0.5, 0.25, 0.125, 0.0625]);
    assert_eq!(r, -0.9375);
    let out = head_forward(&[0.0; 4], &TaskHeadSpec::Survival { intervals: 4 }).unwrap();
    let HeadOutput::Survival { risk, .. } = out else {
        panic!()
    };
    assert_eq!(risk, -0.9375);
}

#[test]
fn survival_risk_limits() {
    let (_, r) = survival_from_hazards(&[1e-12; 4]);
    assert!((r + 4.0).abs() < 1e-10);
    let (_, r) = survival_from_hazards(&[1.0 - 1e-12, 0.3, 0.3, 0.3]);
    assert!(r.abs() < 1e-10);
}

#[test]
fn in_graph_risk_matches_closed_form() {
    let spec = small(Architecture::AttnMil, TaskHeadSpec::Survival { intervals: 4 });
    let mut model = MilModel::init(spec, 23).unwrap();
    jitter(&mut model, 24);
    let x = randn(&mut ChaCha8Rng::seed_from_u64(25), 5, 5);
    let t = model.forward(&x).unwrap();
    let HeadOutput::Survival { risk, .. } = t.output else {
        panic!()
    };
    let node = t.graph.value(t.risk.unwrap()).data()[0];
    assert!((risk - node).abs() < 1e-14);
}

#[test]
fn regression_head_reports_difference() {
    let out = head_forward(&[1.5], &TaskHeadSpec::Regression { reference_value: 42.0 }).unwrap();
    assert_eq!(
        out,
        HeadOutput::Regression {
            diff: 1.5,
            reference_value: 42.0
        }
    );
}

#[test]
fn spec_validation() {
    let bad = ModelSpec {
        heads: 3,
        ..small(Architecture::TransMil, cls2())
    };
    assert!(MilModel::init(bad, 0).is_err());
    let bad = small(Architecture::AttnMil, TaskHeadSpec::Classification { classes: 1 });
    assert!(bad.validate().is_err());
    let model = MilModel::init(small(Architecture::AttnMil, cls2()), 0).unwrap();
    assert!(model.forward(&Tensor::zeros(vec![3, 4])).is_err());
    assert!(transmil_forward(&Tensor::zeros(vec![3, 5]), &model).is_err());
    assert!(attnmil_forward(&Tensor::zeros(vec![3, 5]), &model).is_ok());
}

#[test]
fn checkpoint_round_trip_reproduces_forward() {
    for arch in [Architecture::AttnMil, Architecture::TransMil, Architecture::MambaMil] {
        let model = MilModel::init(small(arch, cls2()), 26).unwrap();
        let meta = CheckpointMeta {
            seed: 26,
            epochs: 3,
            best_epoch: 2,
            val_metric: Some(0.75),
            metric_name: Some("auroc".into()),
        };
        let ck = ModelCheckpoint::new(&model, meta);
        let bytes = ck.to_bytes().unwrap();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let x = randn(&mut ChaCha8Rng::seed_from_u64(27), 4, 5);
        let a = logits(&model.predict(&x).unwrap());
        let b = logits(&back.model().unwrap().predict(&x).unwrap());
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn checkpoint_rejects_garbage() {
    assert!(ModelCheckpoint::from_bytes(b"XMILBAG1").is_err());
    let model = MilModel::init(small(Architecture::AttnMil, cls2()), 0).unwrap();
    let bytes = ModelCheckpoint::new(&model, CheckpointMeta::default())
        .to_bytes()
        .unwrap();
    assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn dropout_only_in_training() {
    let spec = ModelSpec {
        dropout: Dropout {
            embedding: 0.5,
            block: 0.5,
            head: 0.5,
        },
        ..small(Architecture::AttnMil, cls2())
    };
    let model = MilModel::init(spec, 28).unwrap();
    let x = randn(&mut ChaCha8Rng::seed_from_u64(29), 6, 5);
    let infer = model.forward(&x).unwrap();
    assert!(infer.graph.nodes().iter().all(|n| n.op.name() != "mask"));
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let train = model.forward_train(&x, &mut rng).unwrap();
    assert!(train.graph.nodes().iter().any(|n| n.op.name() == "mask"));
}

proptest! {
    #[test]
    fn risk_bounds_and_monotone_survival(
        hz in proptest::collection::vec(1e-6f64..1.0 - 1e-6, 2..8)
    ) {
        let (s, r) = survival_from_hazards(&hz);
        let k = hz.len() as f64;
        prop_assert!(r > -k && r < 0.0);
        for w in s.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn attention_rows_are_stochastic(seed in 0u64..1000, n in 1usize..9) {
        for arch in [Architecture::AttnMil, Architecture::TransMil, Architecture::MambaMil] {
            let model = MilModel::init(small(arch, cls2()), seed).unwrap();
            let x = randn(&mut ChaCha8Rng::seed_from_u64(seed + 1), n, 5);
            match model.forward(&x).unwrap().attention {
                AttentionRecord::Pooling(w) => {
                    prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
                AttentionRecord::Layers(ls) => {
                    for a in ls {
                        for s in a.row_sums() {
                            prop_assert!((s - 1.0).abs() < 1e-9);
                        }
                    }
                }
            }
        }
    }
}
