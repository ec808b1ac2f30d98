use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AffineCoupling, AutoregressiveSpline, BaseDistribution, LuLinear, SplineCoupling};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::spline::{Direction, SquashConfig};

/// Rows evaluated per graph when scoring or sampling without gradients.
const EVAL_CHUNK: usize = 4096;

/// How transformed dimensions are conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    #[default]
    Coupling,
    Autoregressive,
}

/// Element-wise transform used inside each layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// Linear rational spline.
    #[default]
    Lrs,
    /// Affine coupling baseline (coupling mode only).
    Affine,
}

/// Architecture of a [`FlowModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub mode: FlowMode,
    pub transform: TransformKind,
    pub base: BaseDistribution,
    pub layers: usize,
    pub num_bins: usize,
    pub tail_bound: f64,
    pub hidden_features: usize,
    /// Residual blocks (coupling) or hidden layers (autoregressive).
    pub num_blocks: usize,
    pub dropout: f64,
    /// Linear mixing before every coupling layer. Ignored in autoregressive
    /// mode and with a uniform base, whose unit-cube support it would not preserve.
    pub lu_mixing: bool,
    /// Data-independent spline on the conditioning split of each coupling layer.
    pub first_split_spline: bool,
    pub shared_lambda: bool,
}

impl ModelConfig {
    /// Spline coupling with standard defaults for everything but the size.
    pub fn coupling(dim: usize, layers: usize, num_bins: usize, tail_bound: f64) -> Self {
        ModelConfig {
            dim,
            mode: FlowMode::Coupling,
            transform: TransformKind::Lrs,
            base: BaseDistribution::Normal,
            layers,
            num_bins,
            tail_bound,
            hidden_features: 32,
            num_blocks: 2,
            dropout: 0.0,
            lu_mixing: true,
            first_split_spline: true,
            shared_lambda: false,
        }
    }

    pub fn squash(&self) -> SquashConfig {
        let mut cfg = match self.base {
            BaseDistribution::Normal => SquashConfig::symmetric(self.num_bins, self.tail_bound),
            BaseDistribution::Uniform => SquashConfig::unit(self.num_bins),
        };
        cfg.shared_lambda = self.shared_lambda;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if self.mode == FlowMode::Coupling && self.dim < 2 {
            return bad(format!("coupling mode needs at least 2 dimensions, got {}", self.dim));
        }
        if self.transform == TransformKind::Affine && self.mode != FlowMode::Coupling {
            return bad("the affine transform is only available in coupling mode".into());
        }
        if self.transform == TransformKind::Affine && self.base == BaseDistribution::Uniform {
            return bad("the affine transform cannot be combined with a uniform base".into());
        }
        if self.hidden_features == 0 {
            return bad("hidden width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout probability must be in [0, 1), got {}", self.dropout));
        }
        self.squash().validate()
    }

    fn uses_lu(&self) -> bool {
        self.lu_mixing && self.mode == FlowMode::Coupling && self.base == BaseDistribution::Normal
    }
}

/// One invertible layer. `transform(Forward)` maps towards the data
/// (generation direction).
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Lu(LuLinear),
    SplineCoupling(SplineCoupling),
    AffineCoupling(AffineCoupling),
    Autoregressive(AutoregressiveSpline),
}

/// Serializable summary of a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerInfo {
    Lu { permutation: Vec<usize> },
    SplineCoupling { flip: bool },
    AffineCoupling { flip: bool },
    Autoregressive { reverse: bool },
}

impl Layer {
    pub fn transform(&self, tape: &mut Tape, x: Var, direction: Direction) -> Result<(Var, Var)> {
        match self {
            Layer::Lu(l) => l.transform(tape, x, direction),
            Layer::SplineCoupling(l) => l.transform(tape, x, direction),
            Layer::AffineCoupling(l) => l.transform(tape, x, direction),
            Layer::Autoregressive(l) => l.transform(tape, x, direction),
        }
    }

    pub fn info(&self) -> LayerInfo {
        match self {
            Layer::Lu(l) => LayerInfo::Lu {
                permutation: l.permutation().to_vec(),
            },
            Layer::SplineCoupling(l) => LayerInfo::SplineCoupling { flip: l.flip() },
            Layer::AffineCoupling(l) => LayerInfo::AffineCoupling { flip: l.flip() },
            Layer::Autoregressive(l) => LayerInfo::Autoregressive { reverse: l.reverse() },
        }
    }
}

/// Stack of invertible layers over a base distribution.
///
/// Layers are stored in generation order (base sample to data). Densities are
/// evaluated along the normalizing direction, which applies each layer's
/// inverse in reverse order and accumulates the inverse log-determinants.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    config: ModelConfig,
    seed: u64,
    layers: Vec<Layer>,
    params: ParamStore,
}

impl FlowModel {
    /// Builds the architecture and initializes every parameter from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let squash = config.squash();
        let c = &config;
        for l in 0..c.layers {
            let flip = l % 2 == 1;
            let name = format!("layer{l}");
            match c.mode {
                FlowMode::Coupling => {
                    if c.uses_lu() {
                        layers.push(Layer::Lu(LuLinear::new(&mut params, &format!("{name}.lu"), c.dim, &mut rng)));
                    }
                    layers.push(match c.transform {
                        TransformKind::Lrs => Layer::SplineCoupling(SplineCoupling::new(
                            &mut params,
                            &name,
                            c.dim,
                            flip,
                            squash,
                            c.first_split_spline,
                            c.hidden_features,
                            c.num_blocks,
                            c.dropout,
                            &mut rng,
                        )?),
                        TransformKind::Affine => Layer::AffineCoupling(AffineCoupling::new(
                            &mut params,
                            &name,
                            c.dim,
                            flip,
                            c.hidden_features,
                            c.num_blocks,
                            c.dropout,
                            &mut rng,
                        )?),
                    });
                }
                FlowMode::Autoregressive => {
                    let hidden = vec![c.hidden_features; c.num_blocks];
                    layers.push(Layer::Autoregressive(AutoregressiveSpline::new(
                        &mut params,
                        &name,
                        c.dim,
                        flip,
                        squash,
                        &hidden,
                        c.dropout,
                        &mut rng,
                    )?));
                }
            }
        }
        Ok(FlowModel {
            config,
            seed,
            layers,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn topology(&self) -> Vec<LayerInfo> {
        self.layers.iter().map(Layer::info).collect()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Maps data to the base space. Returns `(z, log_det)` where `log_det` is
    /// the per-row log-abs-determinant of the normalizing map.
    pub fn normalize(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        self.check_input(tape, x)?;
        let mut h = x;
        let mut total: Option<Var> = None;
        for layer in self.layers.iter().rev() {
            let (next, lad) = layer.transform(tape, h, Direction::Inverse)?;
            h = next;
            total = Some(match total {
                Some(t) => tape.graph.add(t, lad)?,
                None => lad,
            });
        }
        let rows = tape.graph.shape(x)[0];
        let total = total.unwrap_or_else(|| tape.graph.constant(Tensor::zeros(&[rows])));
        Ok((h, total))
    }

    /// Maps base samples to data space. Returns `(x, log_det)` of the generating map.
    pub fn generate(&self, tape: &mut Tape, z: Var) -> Result<(Var, Var)> {
        self.check_input(tape, z)?;
        let mut h = z;
        let mut total: Option<Var> = None;
        for layer in &self.layers {
            let (next, lad) = layer.transform(tape, h, Direction::Forward)?;
            h = next;
            total = Some(match total {
                Some(t) => tape.graph.add(t, lad)?,
                None => lad,
            });
        }
        let rows = tape.graph.shape(z)[0];
        let total = total.unwrap_or_else(|| tape.graph.constant(Tensor::zeros(&[rows])));
        Ok((h, total))
    }

    /// Per-row log density as a graph node.
    pub fn log_prob_var(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (z, lad) = self.normalize(tape, x)?;
        let base = self.config.base.log_prob(tape, z)?;
        tape.graph.add(base, lad)
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let shape = tape.graph.shape(x);
        if shape.len() != 2 || shape[1] != self.dim() {
            return Err(Error::shape("flow", shape, &[0, self.dim()]));
        }
        Ok(())
    }

    fn map_chunks(&self, x: &Tensor, direction: Direction) -> Result<(Tensor, Vec<f64>)> {
        let (rows, dim) = x.require_matrix("flow")?;
        if dim != self.dim() {
            return Err(Error::shape("flow", x.shape(), &[rows, self.dim()]));
        }
        let mut out = Vec::with_capacity(rows * dim);
        let mut lads = Vec::with_capacity(rows);
        for start in (0..rows).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(rows);
            let chunk = Tensor::matrix(end - start, dim, x.data()[start * dim..end * dim].to_vec())?;
            let mut tape = Tape::inference(&self.params);
            let v = tape.graph.constant(chunk);
            let (y, lad) = match direction {
                Direction::Forward => self.generate(&mut tape, v)?,
                Direction::Inverse => self.normalize(&mut tape, v)?,
            };
            out.extend_from_slice(tape.graph.value(y).data());
            lads.extend_from_slice(tape.graph.value(lad).data());
        }
        Ok((Tensor::matrix(rows, dim, out)?, lads))
    }

    /// Data to base space without gradients: `(z, log_det)` per row.
    pub fn to_latent(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.map_chunks(x, Direction::Inverse)
    }

    /// Base space to data without gradients: `(x, log_det)` per row.
    pub fn from_latent(&self, z: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.map_chunks(z, Direction::Forward)
    }

    /// Log density of every row of `x` (`[rows, dim]`).
    pub fn log_prob(&self, x: &Tensor) -> Result<Vec<f64>> {
        if !x.all_finite() {
            return Err(Error::Data("log_prob requires finite inputs".into()));
        }
        let (z, lad) = self.to_latent(x)?;
        Ok(lad
            .iter()
            .enumerate()
            .map(|(r, l)| self.config.base.log_prob_row(z.row(r)) + l)
            .collect())
    }

    /// Draws `n` samples; deterministic for a given `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = self.config.base.sample(n, self.dim(), &mut rng);
        if n == 0 {
            return Ok(z);
        }
        Ok(self.from_latent(&z)?.0)
    }
}
