use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Density the flow pushes forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseDistribution {
    /// Standard normal in `D` dimensions.
    #[default]
    Normal,
    /// Uniform on the unit cube `[0, 1]^D`.
    Uniform,
}

impl BaseDistribution {
    pub fn log_prob_row(&self, z: &[f64]) -> f64 {
        match self {
            BaseDistribution::Normal => -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * LN_2PI,
            BaseDistribution::Uniform => {
                if z.iter().all(|v| (0.0..=1.0).contains(v)) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Per-row log density `[rows]` as a graph node. The uniform density is
    /// constant on its support; support violations are handled by callers.
    pub fn log_prob(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let g = &mut tape.graph;
        let shape = g.shape(z).to_vec();
        let (rows, dim) = (shape[0], shape.get(1).copied().unwrap_or(1));
        Ok(match self {
            BaseDistribution::Normal => {
                let sq = g.square(z);
                let s = g.sum_last(sq);
                let s = g.scale(s, -0.5);
                g.add_scalar(s, -0.5 * dim as f64 * LN_2PI)
            }
            BaseDistribution::Uniform => g.constant(Tensor::zeros(&[rows])),
        })
    }

    pub fn sample(&self, n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data = match self {
            BaseDistribution::Normal => (0..n * dim).map(|_| rng.sample(StandardNormal)).collect(),
            BaseDistribution::Uniform => (0..n * dim).map(|_| rng.random::<f64>()).collect(),
        };
        Tensor::matrix(n, dim, data).expect("sample shape")
    }
}
