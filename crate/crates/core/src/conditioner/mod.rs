//! Networks mapping conditioning inputs to raw spline parameters.
//!
//! Hidden layers use a uniform fan-in initialization; the final affine layer
//! starts at zero so every spline begins as the identity-like uniform spline.

mod made;
mod resnet;

pub use made::MadeConditioner;
pub use resnet::ResNetConditioner;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tensor};

/// Weight `[in, out]` and bias `[out]` of one affine layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn uniform(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("weight shape");
        let b = Tensor::vector(draw(fan_out));
        Linear {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), b),
        }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: store.add(format!("{name}.weight"), Tensor::zeros(&[fan_in, fan_out])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }
}
