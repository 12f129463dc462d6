use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use afford_core::nn::*;
use afford_core::error::Error;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
}

fn loss_value(store: &ParameterStore, build: &dyn Fn(&mut Tape, &ParameterStore) -> Var) -> f64 {
    let mut tape = Tape::new();
    let l = build(&mut tape, store);
    tape.value(l)[[0, 0]]
}

/// Largest relative error between tape gradients and central differences
/// over every scalar of every parameter (or a strided subset for large
/// stores). Relative error uses a floor of 1e-4 on the magnitude.
fn max_fd_error(store: &ParameterStore, build: &dyn Fn(&mut Tape, &ParameterStore) -> Var, max_checks: usize) -> f64 {
    let mut tape = Tape::new();
    let l = build(&mut tape, store);
    let grads = tape.backward(l).for_params(&tape, store);
    let total = store.num_scalars();
    let stride = total.div_ceil(max_checks).max(1);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut work = store.clone();
    let mut flat = 0usize;
    for id in store.ids() {
        let base = store.get(id).clone();
        for (j, _) in base.iter().enumerate() {
            flat += 1;
            if (flat - 1) % stride != 0 {
                continue;
            }
            let mut plus = base.clone();
            let mut minus = base.clone();
            let (r, c) = (j / base.ncols(), j % base.ncols());
            plus[[r, c]] += h;
            minus[[r, c]] -= h;
            work.set(id, plus).unwrap();
            let fp = loss_value(&work, build);
            work.set(id, minus).unwrap();
            let fm = loss_value(&work, build);
            work.set(id, base.clone()).unwrap();
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads[id.index()][[r, c]];
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-4);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn dense_identity_passes_input_through() {
    let mut store = ParameterStore::new(0);
    let layer = Dense::new(&mut store, "d", 3, 3, Activation::Linear).unwrap();
    store.set(layer.weight, Array2::eye(3)).unwrap();
    let x = array![[0.5, -1.0, 2.0], [3.0, 0.0, -0.25]];
    assert_eq!(dense_forward(&store, &layer, &x).unwrap(), x);
}

#[test]
fn dense_hand_arithmetic() {
    let mut store = ParameterStore::new(0);
    let layer = Dense::new(&mut store, "d", 2, 2, Activation::Linear).unwrap();
    // Row-vector convention: y = x Wᵀ for the matrix written row by row.
    store.set(layer.weight, array![[1.0, 3.0], [2.0, 4.0]]).unwrap();
    let y = dense_forward(&store, &layer, &array![[1.0, 1.0]]).unwrap();
    assert_eq!(y, array![[3.0, 7.0]]);
}

#[test]
fn dense_rejects_wrong_width() {
    let mut store = ParameterStore::new(0);
    let layer = Dense::new(&mut store, "d", 2, 2, Activation::Linear).unwrap();
    let err = dense_forward(&store, &layer, &Array2::zeros((1, 3))).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn dense_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new(seed);
        let act = if seed % 2 == 0 { Activation::Linear } else { Activation::Gelu };
        let layer = Dense::new(&mut store, "d", 4, 3, act).unwrap();
        let b = randn(&mut rng, 1, 3);
        store.set(layer.bias, b).unwrap();
        let x = randn(&mut rng, 5, 4);
        let target = randn(&mut rng, 5, 3);
        let build = move |t: &mut Tape, s: &ParameterStore| {
            let xi = t.input(x.clone());
            let y = layer.forward(t, s, xi).unwrap();
            t.mse(y, target.clone())
        };
        let err = max_fd_error(&store, &build, 1000);
        assert!(err < 1e-4, "seed {seed}: rel err {err}");
    }
}

/// Builds a loss around a single tape op whose operands are parameters
/// named `a`, `b`, `c`.
fn op_case(seed: u64, shapes: &[(usize, usize)], op: impl Fn(&mut Tape, &[Var]) -> Var + 'static) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new(seed);
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| store.add(&format!("p{i}"), randn(&mut rng, r, c)).unwrap())
        .collect();
    let probe = {
        let mut t = Tape::new();
        let vars: Vec<Var> = ids.iter().map(|&id| t.param(&store, id)).collect();
        let out = op(&mut t, &vars);
        t.shape(out)
    };
    let target = randn(&mut rng, probe.0, probe.1);
    let build = move |t: &mut Tape, s: &ParameterStore| {
        let vars: Vec<Var> = ids.iter().map(|&id| t.param(s, id)).collect();
        let out = op(t, &vars);
        if t.shape(out) == (1, 1) {
            out
        } else {
            t.mse(out, target.clone())
        }
    };
    max_fd_error(&store, &build, 400)
}

#[test]
fn every_op_matches_finite_differences() {
    type OpFn = fn(&mut Tape, &[Var]) -> Var;
    let cases: Vec<(&str, Vec<(usize, usize)>, OpFn)> = vec![
        ("matmul", vec![(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1])),
        ("add_row", vec![(3, 4), (1, 4)], |t, v| t.add_row(v[0], v[1])),
        ("add", vec![(3, 4), (3, 4)], |t, v| t.add(v[0], v[1])),
        ("sub", vec![(3, 4), (3, 4)], |t, v| t.sub(v[0], v[1])),
        ("mul", vec![(3, 4), (3, 4)], |t, v| t.mul(v[0], v[1])),
        ("scale", vec![(3, 4)], |t, v| t.scale(v[0], -1.7)),
        ("gelu", vec![(3, 4)], |t, v| t.gelu(v[0])),
        ("layer_norm", vec![(3, 6), (1, 6), (1, 6)], |t, v| t.layer_norm(v[0], v[1], v[2])),
        ("attention", vec![(6, 4), (6, 4), (6, 4)], |t, v| t.attention(v[0], v[1], v[2], 3, 2)),
        ("segment_max", vec![(6, 3)], |t, v| t.segment_max(v[0], 3)),
        ("concat_cols", vec![(3, 2), (3, 3)], |t, v| t.concat_cols(&[v[0], v[1]])),
        ("concat_rows", vec![(2, 3), (1, 3)], |t, v| t.concat_rows(&[v[0], v[1]])),
        ("gather_rows", vec![(4, 3)], |t, v| t.gather_rows(v[0], &[3, 0, 3, 1])),
        ("sum_squares", vec![(3, 4)], |t, v| t.sum_squares(v[0])),
        ("shared_operand", vec![(3, 3)], |t, v| {
            let m = t.matmul(v[0], v[0]);
            t.mul(m, v[0])
        }),
    ];
    for (name, shapes, op) in cases {
        for seed in 0..20 {
            let err = op_case(seed, &shapes, op);
            assert!(err < 1e-3, "{name} seed {seed}: rel err {err}");
        }
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut store = ParameterStore::new(seed);
        let cfg = EncoderConfig {
            model_dim: 8,
            heads: 2,
            layers: 2,
            ffn_dim: 12,
            positional: true,
        };
        let enc = AttentionEncoder::new(&mut store, "enc", 3, cfg).unwrap();
        let tokens = randn(&mut rng, 8, 3);
        let target = randn(&mut rng, 2, 8);
        let build = move |t: &mut Tape, s: &ParameterStore| {
            let x = t.input(tokens.clone());
            let y = enc.encode(t, s, x, 4).unwrap();
            t.mse(y, target.clone())
        };
        let err = max_fd_error(&store, &build, 120);
        assert!(err < 1e-3, "seed {seed}: rel err {err}");
    }
}

#[test]
fn input_gradients_are_exposed() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0 = randn(&mut rng, 2, 3);
    let mut t = Tape::new();
    let x = t.input(x0.clone());
    let l = t.sum_squares(x);
    let g = t.backward(l);
    assert_eq!(g.wrt(x).unwrap(), &(&x0 * 2.0));
}

#[test]
fn layer_norm_output_is_standardised() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParameterStore::new(3);
    let ln = LayerNorm::new(&mut store, "ln", 64).unwrap();
    let mut t = Tape::new();
    let x = t.input(randn(&mut rng, 10, 64) * 5.0 + 2.0);
    let y = ln.forward(&mut t, &store, x);
    for row in t.value(y).rows() {
        let mean = row.mean().unwrap();
        let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4, "variance {var}");
    }
}

fn encoder_pair(positional: bool) -> (AttentionEncoder, ParameterStore) {
    let mut store = ParameterStore::new(11);
    let cfg = EncoderConfig {
        positional,
        ..EncoderConfig::default()
    };
    let enc = AttentionEncoder::new(&mut store, "enc", 3, cfg).unwrap();
    (enc, store)
}

#[test]
fn single_element_sequence_has_model_dim_output() {
    let (enc, store) = encoder_pair(true);
    let out = attention_encode(&enc, &store, &[vec![0.1, 0.2, 0.3]]).unwrap();
    assert_eq!(out.len(), 64);
    assert!(out.iter().all(|v| v.is_finite()));
}

#[test]
fn empty_sequence_is_rejected() {
    let (enc, store) = encoder_pair(true);
    assert!(matches!(attention_encode(&enc, &store, &[]), Err(Error::Contract(_))));
}

#[test]
fn permutation_invariance_depends_on_positional_codes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seq: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let mut rev = seq.clone();
    rev.reverse();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    let (enc, store) = encoder_pair(false);
    let a = attention_encode(&enc, &store, &seq).unwrap();
    let b = attention_encode(&enc, &store, &rev).unwrap();
    assert!(diff(&a, &b) < 1e-6);

    let (enc, store) = encoder_pair(true);
    let a = attention_encode(&enc, &store, &seq).unwrap();
    let b = attention_encode(&enc, &store, &rev).unwrap();
    assert!(diff(&a, &b) > 1e-6);
}

#[test]
fn batched_encoding_matches_single_sequences() {
    let (enc, store) = encoder_pair(true);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tokens = randn(&mut rng, 10, 3);
    let mut t = Tape::new();
    let x = t.input(tokens.clone());
    let y = enc.encode(&mut t, &store, x, 5).unwrap();
    for b in 0..2 {
        let seq: Vec<Vec<f64>> = (0..5).map(|i| tokens.row(b * 5 + i).to_vec()).collect();
        let single = attention_encode(&enc, &store, &seq).unwrap();
        for (u, v) in single.iter().zip(t.value(y).row(b)) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn squared_norm_gradient_is_twice_the_weight() {
    let mut store = ParameterStore::new(1);
    let w = store.gaussian("w", 4, 5, 1.0).unwrap();
    let mut t = Tape::new();
    let wv = t.param(&store, w);
    let l = t.sum_squares(wv);
    let g = t.backward(l).for_params(&t, &store);
    assert_eq!(g[0], store.get(w) * 2.0);
}

#[test]
fn constant_loss_and_unused_parameters_get_zero_gradients() {
    let mut store = ParameterStore::new(1);
    let used = store.gaussian("used", 2, 2, 1.0).unwrap();
    store.gaussian("unused", 3, 1, 1.0).unwrap();
    let mut t = Tape::new();
    let u = t.param(&store, used);
    let z = t.scale(u, 0.0);
    let l = t.sum_squares(z);
    let g = t.backward(l).for_params(&t, &store);
    assert!(g.iter().all(|a| a.iter().all(|&v| v == 0.0)));
    assert_eq!(g[1].dim(), (3, 1));
}

#[test]
fn adam_first_step_is_learning_rate() {
    let mut store = ParameterStore::new(0);
    let p = store.add("p", array![[0.0]]).unwrap();
    let mut opt = Adam::new(
        &store,
        AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
    );
    opt.step(&mut store, &[array![[1.0]]]).unwrap();
    // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps).
    let expected = -0.1 / (1.0 + 1e-8);
    assert!((store.get(p)[[0, 0]] - expected).abs() < 1e-15);
}

#[test]
fn adam_zero_gradient_only_decays() {
    let mut store = ParameterStore::new(0);
    let p = store.add("p", array![[2.0, -4.0]]).unwrap();
    let cfg = AdamConfig {
        lr: 0.01,
        weight_decay: 0.5,
        ..AdamConfig::default()
    };
    let mut opt = Adam::new(&store, cfg);
    opt.step(&mut store, &[Array2::zeros((1, 2))]).unwrap();
    let shrink = 1.0 - 0.01 * 0.5;
    assert_eq!(store.get(p), &array![[2.0 * shrink, -4.0 * shrink]]);
}

#[test]
fn adam_refuses_nan_gradients() {
    let mut store = ParameterStore::new(0);
    store.add("a", array![[1.0]]).unwrap();
    store.add("b", array![[1.0, 2.0]]).unwrap();
    let before = store.clone();
    let mut opt = Adam::new(&store, AdamConfig::default());
    let err = opt.step(&mut store, &[array![[0.5]], array![[f64::NAN, 0.0]]]).unwrap_err();
    assert!(matches!(err, Error::PoisonedUpdate(_)));
    assert_eq!(store, before);
    assert_eq!(opt.steps(), 0);
}

#[test]
fn clipping_bounds_the_joint_norm() {
    let mut g = vec![array![[3.0]], array![[4.0]]];
    let n = clip_grad_norm(&mut g, 1.0);
    assert_eq!(n, 5.0);
    assert!((g[0][[0, 0]] - 0.6).abs() < 1e-15 && (g[1][[0, 0]] - 0.8).abs() < 1e-15);
}

fn train_run(steps: usize) -> ParameterStore {
    let mut store = ParameterStore::new(42);
    let mlp = Mlp::new(&mut store, "m", &[3, 16, 2], Activation::Linear).unwrap();
    let mut opt = Adam::new(&store, AdamConfig { lr: 1e-2, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..steps {
        let x = randn(&mut rng, 8, 3);
        let y = x.slice(ndarray::s![.., 0..2]).mapv(|v| v.sin());
        let mut t = Tape::new();
        let xi = t.input(x);
        let out = mlp.forward(&mut t, &store, xi).unwrap();
        let l = t.mse(out, y);
        let g = t.backward(l).for_params(&t, &store);
        opt.step(&mut store, &g).unwrap();
    }
    store
}

#[test]
fn training_is_bitwise_deterministic() {
    let a = train_run(120);
    let b = train_run(120);
    assert_eq!(a, b);
    assert_ne!(a, ParameterStore::new(42));
}

#[test]
fn checkpoint_round_trip_and_tamper_detection() {
    let dir = tempfile::tempdir().unwrap();
    let store = train_run(5);
    let meta = vec![("config_hash".to_string(), "abc123".to_string())];
    store.save(dir.path(), &meta).unwrap();
    let (loaded, m) = ParameterStore::load(dir.path()).unwrap();
    assert_eq!(loaded, store);
    assert_eq!(m, meta);

    let mut fresh = ParameterStore::new(42);
    Mlp::new(&mut fresh, "m", &[3, 16, 2], Activation::Linear).unwrap();
    fresh.load_values_from(&loaded).unwrap();
    assert_eq!(fresh, store);

    let path = dir.path().join("weights.bin");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[3] ^= 0x40;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(ParameterStore::load(dir.path()), Err(Error::Parse(_))));
}

#[test]
fn parameter_names_are_unique() {
    let mut store = ParameterStore::new(0);
    store.zeros("w", 1, 1).unwrap();
    assert!(store.zeros("w", 2, 2).is_err());
    assert!(store.zeros("bad name", 1, 1).is_err());
}
