use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::Linear;
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Masked autoencoder: `dim` inputs, tanh hidden layers, and `dim` output
/// blocks of `block` columns each. Block `i` depends only on inputs `< i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MadeConditioner {
    dim: usize,
    block: usize,
    dropout: f64,
    layers: Vec<Linear>,
    masks: Vec<Arc<Tensor>>,
}

/// Hidden unit degrees cycle through `1..=max(dim - 1, 1)`.
fn hidden_degrees(width: usize, dim: usize) -> Vec<usize> {
    let span = dim.saturating_sub(1).max(1);
    (0..width).map(|k| k % span + 1).collect()
}

fn mask(in_deg: &[usize], out_deg: &[usize], strict: bool) -> Tensor {
    let mut data = Vec::with_capacity(in_deg.len() * out_deg.len());
    for &i in in_deg {
        for &o in out_deg {
            let connected = if strict { o > i } else { o >= i };
            data.push(if connected { 1.0 } else { 0.0 });
        }
    }
    Tensor::matrix(in_deg.len(), out_deg.len(), data).expect("mask shape")
}

impl MadeConditioner {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: &[usize],
        block: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut degrees: Vec<usize> = (1..=dim).collect();
        let mut layers = Vec::new();
        let mut masks = Vec::new();
        for (l, &width) in hidden.iter().enumerate() {
            let next = hidden_degrees(width, dim);
            masks.push(Arc::new(mask(&degrees, &next, false)));
            layers.push(Linear::uniform(store, &format!("{name}.hidden{l}"), degrees.len(), width, rng));
            degrees = next;
        }
        let out_deg: Vec<usize> = (1..=dim).flat_map(|d| std::iter::repeat_n(d, block)).collect();
        masks.push(Arc::new(mask(&degrees, &out_deg, true)));
        layers.push(Linear::zeros(store, &format!("{name}.output"), degrees.len(), out_deg.len()));
        MadeConditioner {
            dim,
            block,
            dropout,
            layers,
            masks,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn hidden_features(&self) -> Vec<usize> {
        self.masks[..self.masks.len() - 1].iter().map(|m| m.cols()).collect()
    }

    /// `[rows, dim] -> [rows, dim * block]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let shape = tape.graph.shape(x);
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::shape("made", shape, &[0, self.dim]));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, (layer, m)) in self.layers.iter().zip(&self.masks).enumerate() {
            let w = tape.param(layer.weight);
            let b = tape.param(layer.bias);
            let z = tape.graph.masked_matmul(h, w, Arc::clone(m))?;
            h = tape.graph.add(z, b)?;
            if l < last {
                h = tape.graph.tanh(h);
                h = tape.dropout(h, self.dropout);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn randomized(dim: usize, hidden: &[usize], block: usize, seed: u64) -> (ParamStore, MadeConditioner) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let made = MadeConditioner::new(&mut store, "m", dim, hidden, block, 0.0, &mut rng);
        for t in store.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        (store, made)
    }

    fn eval(store: &ParamStore, made: &MadeConditioner, x: Tensor) -> Tensor {
        let mut tape = Tape::inference(store);
        let xv = tape.graph.constant(x);
        let y = made.forward(&mut tape, xv).unwrap();
        tape.graph.value(y).clone()
    }

    #[test]
    fn zero_output_layer_at_init() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let made = MadeConditioner::new(&mut store, "m", 3, &[8], 2, 0.0, &mut rng);
        let y = eval(&store, &made, Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_block_is_data_independent() {
        let (store, made) = randomized(4, &[16, 16], 3, 1);
        let a = eval(&store, &made, Tensor::from_rows(&[vec![0.2, 0.1, -0.3, 0.9]]).unwrap());
        let b = eval(&store, &made, Tensor::from_rows(&[vec![0.2, 5.0, 1.3, -2.0]]).unwrap());
        assert_eq!(a.data()[..3], b.data()[..3]);
        assert_ne!(a.data()[3..], b.data()[3..]);
    }

    proptest! {
        #[test]
        fn perturbing_input_leaves_earlier_blocks_unchanged(
            dim in 1usize..6,
            hidden in proptest::collection::vec(1usize..12, 1..3),
            block in 1usize..4,
            j_frac in 0.0f64..1.0,
            seed in 0u64..1000,
        ) {
            let (store, made) = randomized(dim, &hidden, block, seed);
            let j = ((j_frac * dim as f64) as usize).min(dim - 1);
            let base: Vec<f64> = (0..dim).map(|i| 0.3 * i as f64 - 0.5).collect();
            let mut moved = base.clone();
            moved[j] += 1.7;
            let a = eval(&store, &made, Tensor::from_rows(&[base]).unwrap());
            let b = eval(&store, &made, Tensor::from_rows(&[moved]).unwrap());
            for i in 0..=j {
                prop_assert_eq!(&a.data()[i * block..(i + 1) * block], &b.data()[i * block..(i + 1) * block]);
            }
        }
    }
}
