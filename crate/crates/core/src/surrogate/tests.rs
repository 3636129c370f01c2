use super::*;
use ndarray::array;
use proptest::prelude::{any, prop_assert_eq, proptest};

fn small_model(seed: u64, output: OutputActivation, dropout: f64) -> Mlp {
    let spec = MlpSpec {
        input_dim: 4,
        hidden: vec![6, 5],
        output,
        dropout,
        sim_box: SimBox::default(),
        cv_name: "test".into(),
    };
    let mut m = Mlp::init(&spec, seed).unwrap();
    // non-zero biases so the bias gradients are exercised too
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for (i, t) in m.tensors_mut().into_iter().enumerate() {
        if i % 2 == 1 {
            for v in t.iter_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    m
}

fn random_input(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-4.0..4.0)).collect()
}

fn min_abs_pre_activation(m: &Mlp, x: &[f64]) -> f64 {
    let (_, tape) = m.forward(x, Mode::Eval).unwrap();
    tape.pre.iter().flat_map(|z| z.iter().map(|v| v.abs())).fold(f64::INFINITY, f64::min)
}

fn scaled_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(1e-12, f64::max);
    diff / scale
}

fn linear_1d(w: f64, b: f64) -> Mlp {
    Mlp::from_layers(
        vec![Dense {
            weight: array![[w]],
            bias: array![b],
        }],
        OutputActivation::Identity,
        0.0,
        SimBox::default(),
        "linear",
    )
    .unwrap()
}

#[test]
fn zero_network_outputs_zero() {
    let m = Mlp::from_layers(
        vec![Dense::zeros(6, 8), Dense::zeros(8, 1)],
        OutputActivation::Identity,
        0.0,
        SimBox::default(),
        "zero",
    )
    .unwrap();
    let x = [0.3, -2.0, 5.0, 1.0, 0.0, 7.7];
    assert_eq!(m.predict(&x).unwrap(), 0.0);
    assert_eq!(m.input_jacobian(&x).unwrap().grad, vec![0.0; 6]);
}

#[test]
fn single_layer_sums_wrapped_inputs() {
    let b = SimBox::default();
    let m = Mlp::from_layers(
        vec![Dense {
            weight: Array2::ones((1, 3)),
            bias: Array1::zeros(1),
        }],
        OutputActivation::Identity,
        0.0,
        b,
        "sum",
    )
    .unwrap();
    let x = [2.8, -1.4, 0.5];
    let expected: f64 = x.iter().map(|&v| b.wrap(v)).sum();
    assert!((m.predict(&x).unwrap() - expected).abs() < 1e-15);
    assert_eq!(m.input_jacobian(&x).unwrap().grad, vec![1.0; 3]);
}

#[test]
fn forward_is_periodic_per_coordinate() {
    let m = Mlp::init(&MlpSpec::for_cv(CvKind::Distance, SimBox::default()), 11).unwrap();
    // dyadic coordinates: x + L is exact, so wrap recovers x bit for bit
    let x = [0.5, -0.25, 1.125, 0.0625, -1.0, 0.75];
    let base = m.predict(&x).unwrap();
    for i in 0..6 {
        let mut shifted = x;
        shifted[i] += 2.7;
        assert_eq!(m.predict(&shifted).unwrap().to_bits(), base.to_bits());
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let m = small_model(1, OutputActivation::Identity, 0.0);
    assert!(matches!(m.predict(&[0.0; 3]), Err(Error::Dimension { .. })));
    assert!(matches!(m.predict(&[f64::NAN, 0.0, 0.0, 0.0]), Err(Error::NonFinite(_))));
    assert!(Mlp::from_layers(
        vec![Dense::zeros(3, 4), Dense::zeros(5, 1)],
        OutputActivation::Identity,
        0.0,
        SimBox::default(),
        "bad",
    )
    .is_err());
}

#[test]
fn linear_model_gradients() {
    let m = linear_1d(0.7, -0.2);
    let (y, tape) = m.forward(&[0.4], Mode::Eval).unwrap();
    assert!((y - (0.7 * 0.4 - 0.2)).abs() < 1e-15);
    let g = m.backward_weights(&tape, &[1.5]).unwrap();
    assert!((g.layers[0].weight[[0, 0]] - 1.5 * 0.4).abs() < 1e-15);
    assert_eq!(g.layers[0].bias[0], 1.5);
    assert_eq!(m.input_jacobian(&[0.4]).unwrap().grad, vec![0.7]);

    let zero = m.backward_weights(&tape, &[0.0]).unwrap();
    assert!(zero.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let m = small_model(5, OutputActivation::Absolute, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Array2::from_shape_fn((8, 4), |_| rng.random_range(-1.0..1.0));
    let (_, tape) = m.forward_batch(x.view(), Mode::Train(&mut rng)).unwrap();
    let g = m.backward_weights(&tape, &[0.0; 8]).unwrap();
    assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
}

#[test]
fn stale_tape_is_rejected() {
    let mut m = small_model(2, OutputActivation::Identity, 0.0);
    let (_, tape) = m.forward(&[0.1, 0.2, 0.3, 0.4], Mode::Eval).unwrap();
    m.tensors_mut()[1][0] += 1.0;
    assert!(matches!(m.backward_weights(&tape, &[1.0]), Err(Error::StaleTape { .. })));
}

#[test]
fn input_jacobian_matches_finite_differences() {
    let h = 1e-6;
    let mut checked = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..200u64 {
        let output = if trial % 2 == 0 {
            OutputActivation::Identity
        } else {
            OutputActivation::Absolute
        };
        let m = small_model(trial, output, 0.1);
        let x = random_input(&mut rng, 4);
        if min_abs_pre_activation(&m, &x) < 1e-4
            || x.iter().any(|&v| (m.sim_box.wrap(v + h) - m.sim_box.wrap(v) - h).abs() > 1e-9
                || (m.sim_box.wrap(v) - m.sim_box.wrap(v - h) - h).abs() > 1e-9)
        {
            continue;
        }
        let j = m.input_jacobian(&x).unwrap().grad;
        let fd: Vec<f64> = (0..4)
            .map(|i| {
                let mut p = x.clone();
                p[i] += h;
                let mut q = x.clone();
                q[i] -= h;
                (m.predict(&p).unwrap() - m.predict(&q).unwrap()) / (2.0 * h)
            })
            .collect();
        assert!(scaled_err(&j, &fd) < 1e-6, "trial {trial}: {j:?} vs {fd:?}");
        checked += 1;
    }
    assert!(checked >= 100, "only {checked} kink-free samples");
}

#[test]
fn weight_gradients_match_finite_differences_under_dropout() {
    let h = 1e-6;
    let mut checked = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..150u64 {
        let output = if trial % 3 == 0 {
            OutputActivation::Absolute
        } else {
            OutputActivation::Identity
        };
        let mut m = small_model(1000 + trial, output, 0.1);
        let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.3..1.3));
        let targets = [0.3, -0.1, 0.8];
        let mask_seed = trial;
        let loss = |m: &Mlp| {
            let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
            let (y, _) = m.forward_batch(x.view(), Mode::Train(&mut r)).unwrap();
            y.iter().zip(targets).map(|(a, t)| 0.5 * (a - t) * (a - t)).sum::<f64>()
        };
        let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
        let (y, tape) = m.forward_batch(x.view(), Mode::Train(&mut r)).unwrap();
        if tape.pre.iter().flat_map(|z| z.iter()).any(|v| v.abs() < 1e-4) {
            continue;
        }
        let upstream: Vec<f64> = y.iter().zip(targets).map(|(a, t)| a - t).collect();
        let analytic: Vec<f64> = m
            .backward_weights(&tape, &upstream)
            .unwrap()
            .tensors()
            .concat();
        let n_tensors = m.tensors().len();
        let mut fd = Vec::with_capacity(analytic.len());
        for ti in 0..n_tensors {
            let len = m.tensors()[ti].len();
            for k in 0..len {
                let orig = m.tensors()[ti][k];
                m.tensors_mut()[ti][k] = orig + h;
                let lp = loss(&m);
                m.tensors_mut()[ti][k] = orig - h;
                let lm = loss(&m);
                m.tensors_mut()[ti][k] = orig;
                fd.push((lp - lm) / (2.0 * h));
            }
        }
        assert!(scaled_err(&analytic, &fd) < 1e-6, "trial {trial}");
        checked += 1;
    }
    assert!(checked >= 100, "only {checked} kink-free samples");
}

#[test]
fn init_is_deterministic_and_bounded() {
    let spec = MlpSpec::for_cv(CvKind::Coordination, SimBox::default());
    let a = Mlp::init(&spec, 42).unwrap();
    let b = Mlp::init(&spec, 42).unwrap();
    let c = Mlp::init(&spec, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for l in a.layers() {
        let bound = (6.0 / l.fan_in() as f64).sqrt();
        assert!(l.weight.iter().all(|w| w.abs() < bound));
        assert!(l.bias.iter().all(|&v| v == 0.0));
    }
    let widths: Vec<usize> = a.layers().iter().map(|l| l.fan_out()).collect();
    assert_eq!(widths, vec![64, 128, 64, 32, 1]);
    assert_eq!(a.layers()[0].fan_in(), 63);
}

#[test]
fn absolute_output_is_non_negative_and_flips_jacobian_sign() {
    let mut m = linear_1d(-2.0, 0.1);
    m.output = OutputActivation::Absolute;
    // pre-activation -2*0.5+0.1 < 0
    assert!((m.predict(&[0.5]).unwrap() - 0.9).abs() < 1e-15);
    assert_eq!(m.input_jacobian(&[0.5]).unwrap().grad, vec![2.0]);
    // pre-activation positive
    assert_eq!(m.input_jacobian(&[0.0]).unwrap().grad, vec![-2.0]);
}

#[test]
fn eval_forward_is_deterministic() {
    let m = Mlp::init(&MlpSpec::for_cv(CvKind::Distance, SimBox::default()), 3).unwrap();
    let x = [0.1, 0.2, 2.3, 1.1, 0.7, 0.9];
    let a = m.predict(&x).unwrap();
    for _ in 0..10 {
        assert_eq!(m.predict(&x).unwrap().to_bits(), a.to_bits());
    }
}

#[test]
fn dropout_masks_only_in_training() {
    let m = small_model(8, OutputActivation::Identity, 0.5);
    let x = Array2::from_elem((4, 4), 0.3);
    let (_, eval_tape) = m.forward_batch(x.view(), Mode::Eval).unwrap();
    assert!(eval_tape.masks.iter().all(|m| m.is_none()));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, train_tape) = m.forward_batch(x.view(), Mode::Train(&mut rng)).unwrap();
    let mask = train_tape.masks[0].as_ref().unwrap();
    assert!(mask.iter().all(|&v| v == 0.0 || v == 2.0));
    assert_eq!(train_tape.len(), m.layers().len());
}

#[test]
fn wrap_boundary_is_flagged() {
    let m = small_model(4, OutputActivation::Identity, 0.0);
    assert!(m.input_jacobian(&[1.35, 0.0, 0.0, 0.0]).unwrap().on_wrap_boundary);
    assert!(!m.input_jacobian(&[1.3, 0.0, 0.0, 0.0]).unwrap().on_wrap_boundary);
}

#[test]
fn batched_jacobians_agree_with_single_rows() {
    let m = Mlp::init(&MlpSpec::for_cv(CvKind::Distance, SimBox::default()), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..20).map(|_| random_input(&mut rng, 6)).collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let batch = m.jacobians(&refs).unwrap();
    for (r, jb) in rows.iter().zip(&batch) {
        let js = m.input_jacobian(r).unwrap().grad;
        assert!(scaled_err(&js, jb) < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = Mlp::init(&MlpSpec::for_cv(CvKind::Coordination, SimBox::default()), 17).unwrap();
    let split = SplitInfo {
        seed: 9,
        train_fraction: 0.75,
    };
    let bytes = encode_checkpoint(&m, split);
    let (back, split_back) = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(split_back, split);
    assert_eq!(encode_checkpoint(&back, split_back), bytes);
}

#[test]
fn checkpoint_rejects_corruption() {
    let m = small_model(1, OutputActivation::Absolute, 0.1);
    let bytes = encode_checkpoint(&m, SplitInfo::default());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    let err = decode_checkpoint(&bad).unwrap_err();
    assert!(err.to_string().contains("bad checkpoint header"));
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode_checkpoint(&long).is_err());
    let mut bad_tag = bytes;
    bad_tag[20] = 7;
    assert!(decode_checkpoint(&bad_tag).is_err());
}

proptest! {
    #[test]
    fn checkpoint_round_trip_any_seed(seed in any::<u64>(), abs in any::<bool>()) {
        let out = if abs { OutputActivation::Absolute } else { OutputActivation::Identity };
        let m = small_model(seed, out, 0.1);
        let (back, _) = decode_checkpoint(&encode_checkpoint(&m, SplitInfo::default())).unwrap();
        prop_assert_eq!(back, m);
    }
}
