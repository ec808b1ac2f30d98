use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// A graph with every parameter of a store registered as a node, plus the
/// randomness used by stochastic layers during training.
pub struct Tape {
    pub graph: Graph,
    params: Vec<Var>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl Tape {
    /// Parameters enter as constants; nothing is differentiated and dropout is off.
    pub fn inference(store: &ParamStore) -> Self {
        let mut graph = Graph::new();
        let params = store.tensors().iter().map(|t| graph.constant(t.clone())).collect();
        Tape {
            graph,
            params,
            dropout_rng: None,
        }
    }

    /// Parameters enter as leaves. Dropout masks are drawn from `dropout_rng` when given.
    pub fn training(store: &ParamStore, dropout_rng: Option<ChaCha8Rng>) -> Self {
        let mut graph = Graph::new();
        let params = store.tensors().iter().map(|t| graph.leaf(t.clone())).collect();
        Tape {
            graph,
            params,
            dropout_rng,
        }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    /// Gradient of every parameter after `graph.backward`, zero where none flowed.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(store.tensors())
            .map(|(&v, t)| self.graph.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }

    /// Applies inverted dropout with drop probability `p`; identity when
    /// `p == 0` or outside training.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        let Some(rng) = self.dropout_rng.as_mut() else {
            return x;
        };
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let shape = self.graph.shape(x).to_vec();
        let n = shape.iter().product();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = self.graph.constant(Tensor::new(shape, mask).expect("mask shape"));
        self.graph.mul(x, mask).expect("same shape")
    }

    /// Convenience for seeding a dropout generator from a parent generator.
    pub fn child_rng(parent: &mut ChaCha8Rng) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(parent.random())
    }
}
