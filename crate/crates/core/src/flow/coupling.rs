use std::ops::Range;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{spline_node, ParamId, ParamStore, Tape, Tensor, Var};
use crate::conditioner::ResNetConditioner;
use crate::error::{Error, Result};
use crate::spline::{Direction, SquashConfig};

/// Column ranges of a two-way split of `dim` columns. The conditioning split
/// has `ceil(dim / 2)` columns and sits first, or last when `flip` is set.
pub(crate) fn split_ranges(dim: usize, flip: bool) -> (Range<usize>, Range<usize>) {
    let d = dim.div_ceil(2);
    if flip {
        (dim - d..dim, 0..dim - d)
    } else {
        (0..d, d..dim)
    }
}

/// Reassembles the two splits in original column order.
pub(crate) fn merge(tape: &mut Tape, cond: Var, trans: Var, flip: bool) -> Result<Var> {
    if flip {
        tape.graph.concat_cols(&[trans, cond])
    } else {
        tape.graph.concat_cols(&[cond, trans])
    }
}

pub(crate) fn zero_log_det(tape: &mut Tape, rows: usize) -> Var {
    tape.graph.constant(Tensor::zeros(&[rows]))
}

pub(crate) fn check_width(tape: &Tape, x: Var, dim: usize, op: &'static str) -> Result<usize> {
    let shape = tape.graph.shape(x);
    if shape.len() != 2 || shape[1] != dim {
        return Err(Error::shape(op, shape, &[0, dim]));
    }
    Ok(shape[0])
}

/// Spline coupling layer. The conditioning split is itself transformed by a
/// data-independent spline (when enabled); the other split is transformed by
/// a spline whose parameters a residual network computes from the transformed
/// conditioning split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineCoupling {
    dim: usize,
    flip: bool,
    squash: SquashConfig,
    first_split: Option<ParamId>,
    conditioner: ResNetConditioner,
}

impl SplineCoupling {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        flip: bool,
        squash: SquashConfig,
        first_split_spline: bool,
        hidden_features: usize,
        num_blocks: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("coupling layers need at least 2 dimensions, got {dim}")));
        }
        squash.validate()?;
        let (cond, trans) = split_ranges(dim, flip);
        let p = squash.num_raw();
        let first_split =
            first_split_spline.then(|| store.add(format!("{name}.first_split"), Tensor::zeros(&[cond.len() * p])));
        let conditioner = ResNetConditioner::new(
            store,
            &format!("{name}.conditioner"),
            cond.len(),
            hidden_features,
            num_blocks,
            trans.len() * p,
            dropout,
            rng,
        );
        Ok(SplineCoupling {
            dim,
            flip,
            squash,
            first_split,
            conditioner,
        })
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
        let rows = check_width(tape, input, self.dim, "coupling")?;
        let (cond, trans) = split_ranges(self.dim, self.flip);
        let a = tape.graph.slice_cols(input, cond.start, cond.end)?;
        let b = tape.graph.slice_cols(input, trans.start, trans.end)?;
        // `a` is on the input side; the conditioner always sees the generated-side split.
        let (a_out, lad_a) = match self.first_split {
            Some(id) => {
                let raw = tape.param(id);
                spline_node(&mut tape.graph, raw, a, &self.squash, direction)?
            }
            None => (a, zero_log_det(tape, rows)),
        };
        let generated_side = match direction {
            Direction::Forward => a_out,
            Direction::Inverse => a,
        };
        let theta = self.conditioner.forward(tape, generated_side)?;
        let (b_out, lad_b) = spline_node(&mut tape.graph, theta, b, &self.squash, direction)?;
        let out = merge(tape, a_out, b_out, self.flip)?;
        let lad = tape.graph.add(lad_a, lad_b)?;
        Ok((out, lad))
    }
}
