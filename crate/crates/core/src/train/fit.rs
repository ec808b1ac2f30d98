use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clip_gradients, cosine_lr, AdamState, TrainConfig};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::eval::nll_summary;
use crate::flow::FlowModel;

/// Stream of the training generator; stream 0 of the same seed initializes the model.
const TRAIN_STREAM: u64 = 1;

/// Position of the training random generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Word position, as a decimal string since it is a 128-bit value.
    pub word_pos: String,
}

impl RngState {
    fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("invalid rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub train_nll: f64,
    pub val_nll: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<HistoryRow>,
    pub best_val_nll: Option<f64>,
    pub best_iteration: Option<usize>,
    pub optimizer: AdamState,
    pub rng: RngState,
}

impl TrainReport {
    /// Writes `iteration,train_nll,val_nll,lr` rows; `val_nll` is empty where
    /// no validation pass ran.
    pub fn write_history_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,train_nll,val_nll,lr")?;
        for row in &self.history {
            let val = row.val_nll.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", row.iteration, row.train_nll, val, row.lr)?;
        }
        Ok(())
    }
}

/// Endless shuffled pass over row indices, reshuffled whenever exhausted.
struct BatchOrder {
    order: Vec<usize>,
    cursor: usize,
}

impl BatchOrder {
    fn new(rows: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(rng);
        BatchOrder { order, cursor: 0 }
    }

    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}

fn gather(data: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let dim = data.cols();
    let mut out = Vec::with_capacity(rows.len() * dim);
    for &r in rows {
        out.extend_from_slice(data.row(r));
    }
    Tensor::matrix(rows.len(), dim, out)
}

/// Trains `model` by minimizing the mean negative log-likelihood of `train`.
///
/// When `val` is given the model is scored every `eval_interval` iterations
/// and after the last one, and the best-scoring parameters are restored at the
/// end. All randomness derives from `config.seed`.
pub fn fit(model: &mut FlowModel, train: &Tensor, val: Option<&Tensor>, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let (rows, dim) = train.require_matrix("fit")?;
    if dim != model.dim() {
        return Err(Error::shape("fit", train.shape(), &[rows, model.dim()]));
    }
    if rows == 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    let val = val.filter(|v| v.rows() > 0);
    let iterations = config.number_of_learning_iterations;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut order = BatchOrder::new(rows, &mut rng);
    let mut adam = AdamState::new(model.params());
    let mut history = Vec::with_capacity(iterations);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;

    for it in 0..iterations {
        let idx = order.next(config.batch_size.min(rows), &mut rng);
        let batch = gather(train, &idx)?;
        let dropout_rng = Tape::child_rng(&mut rng);
        let mut tape = Tape::training(model.params(), Some(dropout_rng));
        let x = tape.graph.constant(batch);
        let lp = model.log_prob_var(&mut tape, x)?;
        let mean = tape.graph.mean(lp);
        let loss = tape.graph.scale(mean, -1.0);
        let train_nll = tape.graph.value(loss).data()[0];
        if !train_nll.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        tape.graph.backward(loss)?;
        let mut grads = tape.param_grads(model.params());
        drop(tape);
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        clip_gradients(&mut grads, config.maximum_gradient_value);
        let lr = if config.cosine_annealing {
            cosine_lr(it, iterations, config.learning_rate)
        } else {
            config.learning_rate
        };
        adam.step(model.params_mut(), &grads, lr)?;

        let mut val_nll = None;
        if let Some(v) = val {
            if (it + 1) % config.eval_interval == 0 || it + 1 == iterations {
                let score = nll_summary(model, v)?.mean;
                log::info!("iteration {} train_nll {train_nll:.5} val_nll {score:.5}", it + 1);
                if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
                    best = Some((score, it + 1, model.params().tensors().to_vec()));
                }
                val_nll = Some(score);
            }
        }
        history.push(HistoryRow {
            iteration: it,
            train_nll,
            val_nll,
            lr,
        });
    }

    let (best_val_nll, best_iteration) = match best {
        Some((score, it, params)) => {
            for (dst, src) in model.params_mut().tensors_mut().iter_mut().zip(params) {
                *dst = src;
            }
            (Some(score), Some(it))
        }
        None => (None, None),
    };
    Ok(TrainReport {
        history,
        best_val_nll,
        best_iteration,
        optimizer: adam,
        rng: RngState::capture(config.seed, &rng),
    })
}
