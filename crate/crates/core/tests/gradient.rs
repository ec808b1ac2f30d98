mod common;

use common::{random_rows, randomize};
use lrs_flow::autodiff::{Tape, Tensor};
use lrs_flow::flow::{FlowMode, FlowModel, ModelConfig, TransformKind};

fn nll(model: &FlowModel, x: &Tensor) -> f64 {
    let lp = model.log_prob(x).unwrap();
    -lp.iter().sum::<f64>() / lp.len() as f64
}

fn analytic(model: &FlowModel, x: &Tensor) -> Vec<Tensor> {
    let mut tape = Tape::training(model.params(), None);
    let xv = tape.graph.constant(x.clone());
    let lp = model.log_prob_var(&mut tape, xv).unwrap();
    let m = tape.graph.mean(lp);
    let loss = tape.graph.scale(m, -1.0);
    tape.graph.backward(loss).unwrap();
    tape.param_grads(model.params())
}

/// Largest relative error between analytic and fourth-order central
/// finite-difference gradients over every scalar parameter.
fn worst_error(model: &FlowModel, x: &Tensor) -> (f64, String) {
    let grads = analytic(model, x);
    let h = 1e-4;
    let mut worst = (0.0, String::new());
    for (p, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let eval = |k: f64| {
                let mut m = model.clone();
                m.params_mut().tensors_mut()[p].data_mut()[i] += k * h;
                nll(&m, x)
            };
            let fd = (-eval(2.0) + 8.0 * eval(1.0) - 8.0 * eval(-1.0) + eval(-2.0)) / (12.0 * h);
            let a = g.data()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{}[{i}]: analytic {a} fd {fd}", model.params().names()[p]));
            }
        }
    }
    worst
}

fn base(dim: usize) -> ModelConfig {
    let mut c = ModelConfig::coupling(dim, 2, 4, 3.0);
    c.hidden_features = 6;
    c.num_blocks = 1;
    c
}

#[test]
fn coupling_model_gradients_match_finite_differences() {
    let mut model = FlowModel::new(base(2), 1).unwrap();
    randomize(&mut model, 0.5, 2);
    let x = random_rows(16, 2, 2.5, 3);
    let (err, at) = worst_error(&model, &x);
    assert!(err < 1e-4, "{err} at {at}");
}

#[test]
fn affine_and_autoregressive_gradients_match_finite_differences() {
    let mut affine = base(3);
    affine.transform = TransformKind::Affine;
    let mut ar = base(3);
    ar.mode = FlowMode::Autoregressive;
    for config in [affine, ar] {
        let mut model = FlowModel::new(config, 4).unwrap();
        randomize(&mut model, 0.5, 5);
        let x = random_rows(8, 3, 2.5, 6);
        let (err, at) = worst_error(&model, &x);
        assert!(err < 1e-4, "{err} at {at}");
    }
}
