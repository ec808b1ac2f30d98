use rand_chacha::ChaCha8Rng;

use super::Linear;
use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Residual network: input affine layer, `num_blocks` blocks of
/// `h + tanh(A2 tanh(A1 h))` each followed by dropout, and a zero-initialized
/// output affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNetConditioner {
    in_features: usize,
    hidden_features: usize,
    out_features: usize,
    dropout: f64,
    input: Linear,
    blocks: Vec<(Linear, Linear)>,
    output: Linear,
}

impl ResNetConditioner {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        hidden_features: usize,
        num_blocks: usize,
        out_features: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let input = Linear::uniform(store, &format!("{name}.input"), in_features, hidden_features, rng);
        let blocks = (0..num_blocks)
            .map(|b| {
                let first = Linear::uniform(store, &format!("{name}.block{b}.0"), hidden_features, hidden_features, rng);
                let second = Linear::uniform(store, &format!("{name}.block{b}.1"), hidden_features, hidden_features, rng);
                (first, second)
            })
            .collect();
        let output = Linear::zeros(store, &format!("{name}.output"), hidden_features, out_features);
        ResNetConditioner {
            in_features,
            hidden_features,
            out_features,
            dropout,
            input,
            blocks,
            output,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn hidden_features(&self) -> usize {
        self.hidden_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `[rows, in_features] -> [rows, out_features]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.graph.shape(x);
        if shape.len() != 2 || shape[1] != self.in_features {
            return Err(Error::shape("resnet", shape, &[0, self.in_features]));
        }
        let mut h = affine(tape, x, self.input)?;
        for &(first, second) in &self.blocks {
            let a = affine(tape, h, first)?;
            let a = tape.graph.tanh(a);
            let a = affine(tape, a, second)?;
            let a = tape.graph.tanh(a);
            h = tape.graph.add(h, a)?;
            h = tape.dropout(h, self.dropout);
        }
        affine(tape, h, self.output)
    }
}

fn affine(tape: &mut Tape, x: Var, layer: Linear) -> Result<Var> {
    let (w, b) = (tape.param(layer.weight), tape.param(layer.bias));
    tape.graph.affine(x, w, b)
}
