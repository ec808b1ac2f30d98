//! Scoring and density-grid evaluation of trained models.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::flow::FlowModel;

/// Mean negative log-likelihood (nats) with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllSummary {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Mean and standard error of `-log_prob` over the rows of `data`.
pub fn nll_summary(model: &FlowModel, data: &Tensor) -> Result<NllSummary> {
    let lp = model.log_prob(data)?;
    let n = lp.len();
    if n == 0 {
        return Err(Error::Data("cannot score an empty dataset".into()));
    }
    let nf = n as f64;
    let mean = -lp.iter().sum::<f64>() / nf;
    let stderr = if n > 1 {
        let var = lp.iter().map(|l| (-l - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        (var / nf).sqrt()
    } else {
        0.0
    };
    Ok(NllSummary { mean, stderr, count: n })
}

/// Density values on the centers of an `steps x steps` grid covering
/// `[lo, hi]^2`, row-major with the first coordinate varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
    pub points: Vec<[f64; 2]>,
    pub density: Vec<f64>,
}

impl DensityGrid {
    pub fn cell_area(&self) -> f64 {
        let h = (self.hi - self.lo) / self.steps as f64;
        h * h
    }

    /// Midpoint-rule integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_area()
    }

    /// Grayscale heat map scaled so the largest density maps to 255. Image
    /// rows run from high to low second coordinate.
    pub fn to_pgm(&self) -> Vec<u8> {
        let m = self.steps;
        let max = self.density.iter().cloned().fold(0.0, f64::max);
        let mut out = format!("P5\n{m} {m}\n255\n").into_bytes();
        for row in (0..m).rev() {
            for col in 0..m {
                let d = self.density[row * m + col];
                let v = if max > 0.0 { (d / max * 255.0).round() } else { 0.0 };
                out.push(v.clamp(0.0, 255.0) as u8);
            }
        }
        out
    }
}

/// Evaluates `exp(log_prob)` of a 2-D model on a regular grid.
pub fn density_grid(model: &FlowModel, lo: f64, hi: f64, steps: usize) -> Result<DensityGrid> {
    if model.dim() != 2 {
        return Err(Error::Config(format!("density grids need a 2-D model, got dimension {}", model.dim())));
    }
    if steps == 0 || !(hi > lo) {
        return Err(Error::Config(format!("invalid grid: range [{lo}, {hi}] with {steps} steps")));
    }
    let h = (hi - lo) / steps as f64;
    let mut points = Vec::with_capacity(steps * steps);
    for row in 0..steps {
        for col in 0..steps {
            points.push([lo + (col as f64 + 0.5) * h, lo + (row as f64 + 0.5) * h]);
        }
    }
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    let lp = model.log_prob(&Tensor::matrix(points.len(), 2, flat)?)?;
    Ok(DensityGrid {
        lo,
        hi,
        steps,
        points,
        density: lp.iter().map(|l| l.exp()).collect(),
    })
}
