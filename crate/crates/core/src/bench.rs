//! Paired spline-versus-affine comparisons over depths and seeds, and timing
//! of the two flow directions.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::data::Splits;
use crate::error::{Error, Result};
use crate::eval::nll_summary;
use crate::flow::{FlowModel, TransformKind};
use crate::train::{fit, TrainConfig};

/// Grid of runs; every cell gets the same budget from the base config.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonMatrix {
    pub transforms: Vec<TransformKind>,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for ComparisonMatrix {
    fn default() -> Self {
        ComparisonMatrix {
            transforms: vec![TransformKind::Lrs, TransformKind::Affine],
            depths: vec![2, 4],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub transform: TransformKind,
    pub depth: usize,
    pub seed: u64,
    /// Test NLL of the best-validation parameters; NaN when the cell failed.
    pub test_nll: f64,
    pub wall_seconds: f64,
    /// `ok`, or the error that aborted the cell.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub transform: TransformKind,
    pub depth: usize,
    pub mean: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: f64,
    pub completed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<CellResult>,
}

fn transform_name(t: TransformKind) -> &'static str {
    match t {
        TransformKind::Lrs => "lrs",
        TransformKind::Affine => "affine",
    }
}

impl ComparisonReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["transform", "depth", "seed", "test_nll", "wall_seconds", "status"])
            .map_err(|e| Error::Data(e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                transform_name(r.transform).to_string(),
                r.depth.to_string(),
                r.seed.to_string(),
                r.test_nll.to_string(),
                format!("{:.3}", r.wall_seconds),
                r.status.clone(),
            ])
            .map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean and spread per (transform, depth) over the completed seeds.
    pub fn summary(&self) -> Vec<CellSummary> {
        let mut keys: Vec<(TransformKind, usize)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.transform, r.depth)) {
                keys.push((r.transform, r.depth));
            }
        }
        keys.into_iter()
            .map(|(transform, depth)| {
                let vals: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.transform == transform && r.depth == depth && r.status == "ok")
                    .map(|r| r.test_nll)
                    .collect();
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let std = if vals.len() > 1 {
                    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                CellSummary {
                    transform,
                    depth,
                    mean,
                    std,
                    completed: vals.len(),
                }
            })
            .collect()
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["transform", "depth", "mean_test_nll", "std_test_nll", "completed"])
            .map_err(|e| Error::Data(e.to_string()))?;
        for s in self.summary() {
            w.write_record([
                transform_name(s.transform).to_string(),
                s.depth.to_string(),
                s.mean.to_string(),
                s.std.to_string(),
                s.completed.to_string(),
            ])
            .map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn run_cell(base: &TrainConfig, splits: &Splits) -> Result<f64> {
    base.validate()?;
    let mut model = FlowModel::new(base.model_config(splits.train.dim()), base.seed)?;
    let val = (splits.val.rows() > 0).then(|| splits.val.data());
    fit(&mut model, splits.train.data(), val, base)?;
    Ok(nll_summary(&model, splits.test.data())?.mean)
}

/// Trains every cell of `matrix` in sequence. A cell that fails becomes a
/// row with its error in `status` and does not stop the sweep.
pub fn run_comparison(base: &TrainConfig, matrix: &ComparisonMatrix, splits: &Splits) -> ComparisonReport {
    let mut rows = Vec::new();
    for &transform in &matrix.transforms {
        for &depth in &matrix.depths {
            for &seed in &matrix.seeds {
                let cfg = TrainConfig {
                    transform,
                    transformation_layers: depth,
                    seed,
                    ..base.clone()
                };
                let start = Instant::now();
                let outcome = run_cell(&cfg, splits);
                let wall_seconds = start.elapsed().as_secs_f64();
                log::info!("{} depth {depth} seed {seed}: {outcome:?}", transform_name(transform));
                let (test_nll, status) = match outcome {
                    Ok(v) => (v, "ok".to_string()),
                    Err(e) => (f64::NAN, e.to_string().replace(['\n', ','], " ")),
                };
                rows.push(CellResult {
                    transform,
                    depth,
                    seed,
                    test_nll,
                    wall_seconds,
                    status,
                });
            }
        }
    }
    ComparisonReport { rows }
}

/// Median wall-clock seconds of the generation pass (`forward`) and of the
/// normalizing pass (`inverse`) on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub batch_size: usize,
    pub repeats: usize,
    pub forward_seconds: f64,
    pub inverse_seconds: f64,
}

impl TimingReport {
    pub fn ratio(&self) -> f64 {
        self.inverse_seconds / self.forward_seconds
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn time_forward_inverse(model: &FlowModel, batch_size: usize, repeats: usize, seed: u64) -> Result<TimingReport> {
    if repeats == 0 || batch_size == 0 {
        return Err(Error::Config("timing needs a positive batch size and repeat count".into()));
    }
    let base = model.config().base;
    let z = base.sample(batch_size, model.dim(), &mut ChaCha8Rng::seed_from_u64(seed));
    let x = model.from_latent(&z)?.0;
    let time = |f: &dyn Fn() -> Result<()>| -> Result<f64> {
        let start = Instant::now();
        f()?;
        Ok(start.elapsed().as_secs_f64())
    };
    let run = |input: &Tensor, forward: bool| -> Result<()> {
        let out = if forward { model.from_latent(input)? } else { model.to_latent(input)? };
        std::hint::black_box(out);
        Ok(())
    };
    // One untimed pass each to settle caches and the thread pool.
    run(&z, true)?;
    run(&x, false)?;
    let mut fwd = Vec::with_capacity(repeats);
    let mut inv = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        fwd.push(time(&|| run(&z, true))?);
        inv.push(time(&|| run(&x, false))?);
    }
    Ok(TimingReport {
        batch_size,
        repeats,
        forward_seconds: median(fwd),
        inverse_seconds: median(inv),
    })
}
