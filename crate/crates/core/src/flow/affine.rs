use rand_chacha::ChaCha8Rng;

use super::coupling::{check_width, merge, split_ranges};
use crate::autodiff::{ParamStore, Tape, Var};
use crate::conditioner::ResNetConditioner;
use crate::error::{Error, Result};
use crate::spline::Direction;

/// Affine coupling baseline: `x2 = z2 * exp(s(x1)) + t(x1)`, `x1 = z1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCoupling {
    dim: usize,
    flip: bool,
    conditioner: ResNetConditioner,
}

impl AffineCoupling {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        flip: bool,
        hidden_features: usize,
        num_blocks: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("coupling layers need at least 2 dimensions, got {dim}")));
        }
        let (cond, trans) = split_ranges(dim, flip);
        let conditioner = ResNetConditioner::new(
            store,
            &format!("{name}.conditioner"),
            cond.len(),
            hidden_features,
            num_blocks,
            2 * trans.len(),
            dropout,
            rng,
        );
        Ok(AffineCoupling { dim, flip, conditioner })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn flip(&self) -> bool {
        self.flip
    }

    pub fn conditioner(&self) -> &ResNetConditioner {
        &self.conditioner
    }

    pub fn transform(&self, tape: &mut Tape, input: Var, direction: Direction) -> Result<(Var, Var)> {
        check_width(tape, input, self.dim, "affine_coupling")?;
        let (cond, trans) = split_ranges(self.dim, self.flip);
        let n = trans.len();
        let a = tape.graph.slice_cols(input, cond.start, cond.end)?;
        let b = tape.graph.slice_cols(input, trans.start, trans.end)?;
        let st = self.conditioner.forward(tape, a)?;
        let g = &mut tape.graph;
        let s = g.slice_cols(st, 0, n)?;
        let t = g.slice_cols(st, n, 2 * n)?;
        let (out, lad) = match direction {
            Direction::Forward => {
                let scale = g.exp(s);
                let scaled = g.mul(b, scale)?;
                (g.add(scaled, t)?, g.sum_last(s))
            }
            Direction::Inverse => {
                let neg = g.scale(s, -1.0);
                let scale = g.exp(neg);
                let shifted = g.sub(b, t)?;
                (g.mul(shifted, scale)?, g.sum_last(neg))
            }
        };
        let merged = merge(tape, a, out, self.flip)?;
        Ok((merged, lad))
    }
}
