use super::*;
use crate::cv::CvKind;
use crate::datagen::gen_uniform;
use crate::dataset::Provenance;
use crate::geometry::SimBox;
use crate::surrogate::{MlpSpec, OutputActivation};
use rand::Rng;

fn linear_dataset(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = LabeledDataset::new(CvKind::Distance, SimBox::default(), Provenance::External, seed);
    for _ in 0..n {
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = x.iter().sum::<f64>();
        ds.push(&x, y, &[1.0; 6]).unwrap();
    }
    ds
}

fn small_spec(dropout: f64) -> MlpSpec {
    MlpSpec {
        input_dim: 6,
        hidden: vec![32, 32],
        output: OutputActivation::Identity,
        dropout,
        sim_box: SimBox::default(),
        cv_name: "linear".into(),
    }
}

fn without_timing(mut r: TrainingReport) -> TrainingReport {
    r.wall_time_s = None;
    r
}

#[test]
fn mse_examples() {
    assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 4.0]).unwrap(), 2.0);
    assert!(mse_loss(&[], &[]).is_err());
    assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn mse_gradient_matches_finite_differences() {
    let p = [0.3, -1.2, 2.0, 0.7];
    let t = [0.1, -1.0, 2.5, 0.0];
    let g = mse_grad(&p, &t);
    let h = 1e-6;
    for i in 0..4 {
        let mut a = p;
        a[i] += h;
        let mut b = p;
        b[i] -= h;
        let fd = (mse_loss(&a, &t).unwrap() - mse_loss(&b, &t).unwrap()) / (2.0 * h);
        assert!((fd - g[i]).abs() < 1e-8);
    }
}

#[test]
fn zero_epochs_returns_initial_model() {
    let ds = linear_dataset(100, 1);
    let m = Mlp::init(&small_spec(0.1), 3).unwrap();
    let cfg = TrainConfig {
        max_epochs: 0,
        ..Default::default()
    };
    let (out, report) = train(m.clone(), &ds, &cfg).unwrap();
    assert_eq!(out, m);
    assert_eq!(report.epochs_run, 0);
    assert_eq!(report.best_epoch, None);
    assert_eq!(report.status, TrainStatus::Completed);
}

#[test]
fn learns_a_linear_target() {
    let ds = linear_dataset(1000, 2);
    let m = Mlp::init(&small_spec(0.0), 4).unwrap();
    let cfg = TrainConfig {
        batch_size: 32,
        max_epochs: 200,
        seed: 5,
        ..Default::default()
    };
    let (m, report) = train(m, &ds, &cfg).unwrap();
    let split = split_indices(ds.len(), cfg.train_fraction, cfg.seed);
    let train_mse = eval_loss(&m, &ds, &split.train).unwrap();
    assert!(train_mse < 1e-3, "train mse {train_mse}");
    assert!(report.best_val_loss <= report.epochs[0].val_loss);
}

#[test]
fn overfits_a_single_batch() {
    let ds = gen_uniform(CvKind::Distance, 64, SimBox::default(), 9).unwrap();
    let mut spec = MlpSpec::for_cv(CvKind::Distance, SimBox::default());
    spec.dropout = 0.0;
    let mut m = Mlp::init(&spec, 1).unwrap();
    let idx: Vec<usize> = (0..64).collect();
    let (x, y) = gather(&ds, &idx);
    let mut adam = AdamState::new(m.tensors().iter().map(|t| t.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..2000 {
        let (p, tape) = m.forward_batch(x.view(), Mode::Train(&mut rng)).unwrap();
        let g = m.backward_weights(&tape, &mse_grad(&p, &y)).unwrap();
        adam_step(&mut m.tensors_mut(), &g.tensors(), &mut adam, 1e-3, 1e-5, Mlp::tensor_name).unwrap();
    }
    let mse = eval_loss(&m, &ds, &idx).unwrap();
    assert!(mse < 1e-4, "single-batch mse {mse}");
}

#[test]
fn training_is_reproducible() {
    let ds = gen_uniform(CvKind::Distance, 600, SimBox::default(), 3).unwrap();
    let spec = MlpSpec::for_cv(CvKind::Distance, SimBox::default());
    let cfg = TrainConfig {
        max_epochs: 5,
        batch_size: 64,
        seed: 11,
        ..Default::default()
    };
    let (a, ra) = train(Mlp::init(&spec, 8).unwrap(), &ds, &cfg).unwrap();
    let (b, rb) = train(Mlp::init(&spec, 8).unwrap(), &ds, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(without_timing(ra.clone()), without_timing(rb));
    assert!(ra.best_val_loss <= ra.epochs[0].val_loss);

    let text = without_timing(ra.clone()).to_toml();
    assert!(!text.contains("wall_time"));
    assert_eq!(TrainingReport::from_toml(&text).unwrap(), without_timing(ra));
}

#[test]
fn divergence_is_reported() {
    let ds = linear_dataset(200, 4);
    let m = Mlp::init(&small_spec(0.0), 4).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e300,
        max_epochs: 10,
        ..Default::default()
    };
    let (_, report) = train(m, &ds, &cfg).unwrap();
    assert_eq!(report.status, TrainStatus::Diverged);
}

#[test]
fn rejects_bad_config_and_dimension() {
    let ds = linear_dataset(10, 1);
    let m = Mlp::init(&small_spec(0.0), 4).unwrap();
    let bad = TrainConfig {
        train_fraction: 1.0,
        ..Default::default()
    };
    assert!(train(m.clone(), &ds, &bad).is_err());
    let coord = Mlp::init(&MlpSpec::for_cv(CvKind::Coordination, SimBox::default()), 0).unwrap();
    assert!(matches!(
        train(coord, &ds, &TrainConfig::default()),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn plateau_schedule_halves_on_flat_validation() {
    // constant targets and a zero-initialised net give an exactly flat loss
    let mut ds = LabeledDataset::new(CvKind::Distance, SimBox::default(), Provenance::External, 0);
    for i in 0..20 {
        ds.push(&[0.01 * i as f64; 6], 1.0, &[0.0; 6]).unwrap();
    }
    let layers = vec![crate::surrogate::Dense::zeros(6, 4), crate::surrogate::Dense::zeros(4, 1)];
    let m = Mlp::from_layers(layers, OutputActivation::Identity, 0.0, SimBox::default(), "flat").unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-6,
        weight_decay: 0.0,
        scheduler_patience: 3,
        max_epochs: 5,
        ..Default::default()
    };
    let (_, report) = train(m, &ds, &cfg).unwrap();
    assert_eq!(report.lr_events.len(), 1);
    assert_eq!(report.lr_events[0].epoch, 4);
    assert_eq!(report.final_lr, 5e-7);
}
