use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Concentric noisy circles. A ring is chosen uniformly, then an angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingsConfig {
    pub radii: Vec<f64>,
    pub scale: f64,
    pub noise: f64,
}

impl Default for RingsConfig {
    fn default() -> Self {
        RingsConfig {
            radii: vec![0.25, 0.5, 0.75, 1.0],
            scale: 3.0,
            noise: 0.08,
        }
    }
}

fn from_points(points: Vec<f64>, source: String) -> Dataset {
    let rows = points.len() / 2;
    Dataset::new(Tensor::matrix(rows, 2, points).expect("2-D points"), source).expect("finite points")
}

pub fn rings(n: usize, seed: u64) -> Dataset {
    rings_with(n, seed, &RingsConfig::default())
}

pub fn rings_with(n: usize, seed: u64, cfg: &RingsConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let r = cfg.radii[rng.random_range(0..cfg.radii.len())] * cfg.scale;
        let a = rng.random_range(0.0..2.0 * PI);
        let (nx, ny): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        pts.push(r * a.cos() + cfg.noise * nx);
        pts.push(r * a.sin() + cfg.noise * ny);
    }
    from_points(pts, format!("rings:{n}:{seed}"))
}

/// Eight alternating 2x2 squares tiling `[-4, 4]^2`: a point is in an
/// occupied square iff `floor(x / 2) + floor(y / 2)` is even.
pub fn checkerboard(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let x = rng.random_range(-2.0..2.0f64);
        let y = rng.random::<f64>() - 2.0 * rng.random_range(0..2) as f64 + (x.floor().rem_euclid(2.0));
        pts.push(2.0 * x);
        pts.push(2.0 * y);
    }
    from_points(pts, format!("checkerboard:{n}:{seed}"))
}

/// Two interleaved half circles with Gaussian noise 0.1, shifted to zero mean.
pub fn two_moons(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).expect("valid noise");
    let mut pts = Vec::with_capacity(2 * n);
    for i in 0..n {
        let t = rng.random_range(0.0..PI);
        let (x, y) = if i % 2 == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        pts.push(x - 0.5 + noise.sample(&mut rng));
        pts.push(y - 0.25 + noise.sample(&mut rng));
    }
    from_points(pts, format!("moons:{n}:{seed}"))
}

pub fn standard_normal(n: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    Dataset::new(Tensor::matrix(n, dim, data).expect("shape"), format!("normal:{n}:{seed}")).expect("finite")
}

/// Looks up a generator by name: `rings`, `checkerboard`, `moons` or `normal`.
pub fn generator(name: &str, n: usize, seed: u64) -> Result<Dataset> {
    match name {
        "rings" => Ok(rings(n, seed)),
        "checkerboard" => Ok(checkerboard(n, seed)),
        "moons" | "two_moons" => Ok(two_moons(n, seed)),
        "normal" => Ok(standard_normal(n, 2, seed)),
        other => Err(Error::Data(format!("unknown generator {other:?}"))),
    }
}
