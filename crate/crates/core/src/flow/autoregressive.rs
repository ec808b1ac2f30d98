use rand_chacha::ChaCha8Rng;

use super::coupling::check_width;
use crate::autodiff::{spline_node, ParamStore, Tape, Tensor, Var};
use crate::conditioner::MadeConditioner;
use crate::error::Result;
use crate::spline::{Direction, SquashConfig};

/// Autoregressive spline layer: dimension `i` of the output is a spline of
/// input dimension `i` whose parameters depend on input dimensions `< i`.
///
/// The forward (generation) direction needs one network pass; the inverse
/// recovers dimensions one at a time and needs `dim` passes. With `reverse`
/// set the ordering of dimensions is reversed.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoregressiveSpline {
    dim: usize,
    reverse: bool,
    squash: SquashConfig,
    made: MadeConditioner,
}

impl AutoregressiveSpline {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        reverse: bool,
        squash: SquashConfig,
        hidden: &[usize],
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        squash.validate()?;
        let made = MadeConditioner::new(store, &format!("{name}.made"), dim, hidden, squash.num_raw(), dropout, rng);
        Ok(AutoregressiveSpline {
            dim,
            reverse,
            squash,
            made,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn reverse(&self) -> bool {
        self.reverse
    }

    pub fn conditioner(&self) -> &MadeConditioner {
        &self.made
    }

    fn reorder(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.reverse {
            let perm: Vec<usize> = (0..self.dim).rev().collect();
            tape.graph.permute_cols(x, &perm)
        } else {
            Ok(x)
        }
    }

    pub fn transform(&self, tape: &mut Tape, input: Var, direction: Direction) -> Result<(Var, Var)> {
        let rows = check_width(tape, input, self.dim, "autoregressive")?;
        let input = self.reorder(tape, input)?;
        let (out, lad) = match direction {
            Direction::Forward => {
                let theta = self.made.forward(tape, input)?;
                spline_node(&mut tape.graph, theta, input, &self.squash, Direction::Forward)?
            }
            Direction::Inverse => self.inverse_sequential(tape, input, rows)?,
        };
        Ok((self.reorder(tape, out)?, lad))
    }

    fn inverse_sequential(&self, tape: &mut Tape, x: Var, rows: usize) -> Result<(Var, Var)> {
        let p = self.squash.num_raw();
        let mut recovered: Vec<Var> = Vec::with_capacity(self.dim);
        let mut lad: Option<Var> = None;
        for i in 0..self.dim {
            // Later dimensions are placeholders: the masks make block `i` ignore them.
            let mut parts = recovered.clone();
            parts.push(tape.graph.constant(Tensor::zeros(&[rows, self.dim - i])));
            let current = tape.graph.concat_cols(&parts)?;
            let theta = self.made.forward(tape, current)?;
            let theta_i = tape.graph.slice_cols(theta, i * p, (i + 1) * p)?;
            let x_i = tape.graph.slice_cols(x, i, i + 1)?;
            let (z_i, l_i) = spline_node(&mut tape.graph, theta_i, x_i, &self.squash, Direction::Inverse)?;
            recovered.push(z_i);
            lad = Some(match lad {
                Some(acc) => tape.graph.add(acc, l_i)?,
                None => l_i,
            });
        }
        let z = tape.graph.concat_cols(&recovered)?;
        let lad = match lad {
            Some(l) => l,
            None => tape.graph.constant(Tensor::zeros(&[rows])),
        };
        Ok((z, lad))
    }
}
