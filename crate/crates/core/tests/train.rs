use lrs_flow::autodiff::Tensor;
use lrs_flow::eval::nll_summary;
use lrs_flow::flow::FlowModel;
use lrs_flow::train::{fit, TrainConfig};
use lrs_flow::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// Differential entropy of the 2-D standard normal: 1 + ln(2 pi).
const ENTROPY_2D: f64 = 1.0 + 1.837_877_066_409_345_5;

fn normal_data(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(n, 2, (0..2 * n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn small_config(iterations: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(5e-3, 64, iterations, 2, 4, 3.0);
    cfg.resnet_hidden_features = 16;
    cfg.resnet_layers = 1;
    cfg.eval_interval = 20;
    cfg.seed = 3;
    cfg
}

fn model_for(cfg: &TrainConfig) -> FlowModel {
    FlowModel::new(cfg.model_config(2), cfg.seed).unwrap()
}

#[test]
fn standard_normal_is_recovered() {
    let mut cfg = TrainConfig::new(5e-4, 256, 2000, 2, 4, 3.0);
    cfg.resnet_hidden_features = 32;
    let mut model = model_for(&cfg);
    let train = normal_data(20_000, 1);
    let val = normal_data(2_000, 2);
    let test = normal_data(10_000, 3);
    let report = fit(&mut model, &train, Some(&val), &cfg).unwrap();
    assert_eq!(report.history.len(), 2000);
    assert!(report.history.iter().all(|r| r.train_nll.is_finite()));
    let nll = nll_summary(&model, &test).unwrap();
    assert!((nll.mean - ENTROPY_2D).abs() < 0.05, "{nll:?}");
}

#[test]
fn zero_iterations_keep_the_initial_model() {
    let cfg = small_config(0);
    let mut model = model_for(&cfg);
    let initial = model.clone();
    let report = fit(&mut model, &normal_data(100, 1), None, &cfg).unwrap();
    assert!(report.history.is_empty());
    assert_eq!(model, initial);
}

#[test]
fn zero_learning_rate_never_changes_parameters() {
    let mut cfg = small_config(30);
    cfg.learning_rate = 0.0;
    let mut model = model_for(&cfg);
    let initial = model.clone();
    fit(&mut model, &normal_data(300, 1), Some(&normal_data(50, 2)), &cfg).unwrap();
    assert_eq!(model.params(), initial.params());
}

#[test]
fn training_is_reproducible() {
    let mut cfg = small_config(60);
    cfg.dropout_probability = 0.2;
    let data = normal_data(500, 4).map(|v| v * v.abs());
    let val = normal_data(100, 5);
    let run = || {
        let mut model = model_for(&cfg);
        let report = fit(&mut model, &data, Some(&val), &cfg).unwrap();
        let mut csv = Vec::new();
        report.write_history_csv(&mut csv).unwrap();
        (model, csv)
    };
    let (m1, c1) = run();
    let (m2, c2) = run();
    assert_eq!(c1, c2);
    assert_eq!(m1.params(), m2.params());
}

#[test]
fn best_validation_parameters_are_restored() {
    let cfg = small_config(100);
    let data = normal_data(500, 4).map(|v| 0.5 * v + 1.0);
    let val = normal_data(200, 5).map(|v| 0.5 * v + 1.0);
    let mut model = model_for(&cfg);
    let report = fit(&mut model, &data, Some(&val), &cfg).unwrap();
    let scores: Vec<f64> = report.history.iter().filter_map(|r| r.val_nll).collect();
    assert_eq!(scores.len(), 5);
    let best = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(report.best_val_nll, Some(best));
    assert_eq!(nll_summary(&model, &val).unwrap().mean, best);
    assert!(report.history[0].train_nll > report.history[99].train_nll);
}

#[test]
fn non_finite_loss_names_the_iteration() {
    let cfg = small_config(10);
    let mut data = normal_data(64, 1);
    data.data_mut()[5] = f64::NAN;
    let mut model = model_for(&cfg);
    let err = fit(&mut model, &data, None, &cfg).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { iteration: 0 }), "{err}");
}

#[test]
fn dimension_mismatch_is_rejected() {
    let cfg = small_config(1);
    let mut model = model_for(&cfg);
    assert!(fit(&mut model, &Tensor::zeros(&[10, 3]), None, &cfg).is_err());
}
