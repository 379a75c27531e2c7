//! Losses, metrics, Adam, node splits and the mini-batch training loop.

mod adam;
mod metrics;
mod split;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use metrics::{accuracy, accuracy_ci, cross_entropy_loss, mse, r2_score, sse};
pub use split::{split_nodes, SplitMasks};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::Trainable;
use crate::tokens::TokenTensor;

/// Per-node supervision.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Row-major `[N, width]` real targets, fitted with MSE and scored by R².
    Regression { values: Vec<f64>, width: usize },
    /// Class indices, fitted with cross-entropy and scored by accuracy.
    Classes { labels: Vec<usize>, classes: usize },
}

impl Targets {
    pub fn n_nodes(&self) -> usize {
        match self {
            Targets::Regression { values, width } => values.len() / (*width).max(1),
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Targets::Regression { width, .. } => *width,
            Targets::Classes { classes, .. } => *classes,
        }
    }

    fn regression_rows(values: &[f64], width: usize, nodes: &[usize]) -> Vec<f64> {
        nodes
            .iter()
            .flat_map(|&i| values[i * width..(i + 1) * width].iter().copied())
            .collect()
    }

    /// Validation metric of predictions `[B, width]` for `nodes`.
    pub fn metric(&self, pred: &Tensor, nodes: &[usize]) -> Result<f64> {
        match self {
            Targets::Regression { values, width } => {
                r2_score(pred.data(), &Self::regression_rows(values, *width, nodes))
            }
            Targets::Classes { labels, classes } => {
                let y: Vec<usize> = nodes.iter().map(|&i| labels[i]).collect();
                accuracy(pred.data(), *classes, &y)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// `None` trains full-batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::invalid("weight decay must be >= 0"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be positive"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::invalid(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub test_metric: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose state was restored.
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
}

/// Copies node rows out of a `[N, T, d]` token tensor.
pub fn gather_rows(tokens: &Tensor, nodes: &[usize]) -> Result<Tensor> {
    let s = tokens.shape();
    if s.len() != 3 {
        return Err(Error::shape("gather_rows", format!("{s:?} is not [N, T, d]")));
    }
    let row = s[1] * s[2];
    let mut data = Vec::with_capacity(nodes.len() * row);
    for &i in nodes {
        if i >= s[0] {
            return Err(Error::invalid(format!("node {i} outside 0..{}", s[0])));
        }
        data.extend_from_slice(&tokens.data()[i * row..(i + 1) * row]);
    }
    Tensor::new(&[nodes.len(), s[1], s[2]], data)
}

/// All nodes of a token tensor as a `[N, T, d]` batch.
pub fn token_batch(tokens: &TokenTensor) -> Tensor {
    let all: Vec<usize> = (0..tokens.n_nodes()).collect();
    let shape = [tokens.n_nodes(), tokens.order() + 1, tokens.dim()];
    Tensor::new(&shape, tokens.gather(&all)).expect("token tensors have three axes")
}

/// Loss and parameter gradients of one batch.
pub fn batch_gradients<M: Trainable + ?Sized>(
    model: &M,
    tokens: &Tensor,
    targets: &Targets,
    nodes: &[usize],
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let params = model.register(&mut tape);
    let x = tape.constant(gather_rows(tokens, nodes)?);
    let out = model.forward_tape(&mut tape, &params, x, dropout)?;
    let loss = match targets {
        Targets::Regression { values, width } => {
            let t = Tensor::new(&[nodes.len(), *width], Targets::regression_rows(values, *width, nodes))?;
            tape.mse_loss(out, &t)?
        }
        Targets::Classes { labels, .. } => {
            let y: Vec<usize> = nodes.iter().map(|&i| labels[i]).collect();
            tape.cross_entropy(out, &y)?
        }
    };
    let value = tape.value(loss).item().expect("scalar loss");
    tape.backward(loss)?;
    let grads = params
        .iter()
        .map(|v| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(*v).shape())))
        .collect();
    Ok((value, grads))
}

/// Predictions for `nodes`, evaluation mode.
pub fn predict_nodes<M: Trainable + ?Sized>(model: &M, tokens: &Tensor, nodes: &[usize]) -> Result<Tensor> {
    model.predict(&gather_rows(tokens, nodes)?)
}

fn check_inputs<M: Trainable + ?Sized>(model: &M, tokens: &Tensor, targets: &Targets, masks: &SplitMasks) -> Result<()> {
    let s = tokens.shape();
    let (t, d) = model.input_shape();
    if s.len() != 3 || s[1] != t || s[2] != d {
        return Err(Error::shape("train_loop", format!("tokens {s:?}, model expects [N, {t}, {d}]")));
    }
    if targets.n_nodes() != s[0] || masks.n_nodes() != s[0] {
        return Err(Error::shape(
            "train_loop",
            format!("{} token rows, {} targets, {} mask entries", s[0], targets.n_nodes(), masks.n_nodes()),
        ));
    }
    if targets.width() != model.outputs() {
        return Err(Error::shape(
            "train_loop",
            format!("model has {} outputs, targets need {}", model.outputs(), targets.width()),
        ));
    }
    if let Targets::Classes { labels, classes } = targets {
        if let Some(bad) = labels.iter().find(|&&l| l >= *classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{classes}")));
        }
    }
    Ok(())
}

/// Mini-batch Adam with early stopping on the validation metric.
///
/// Each epoch shuffles the training nodes with a seeded generator and steps
/// once per batch (the last partial batch is kept). The model ends in the
/// state of the epoch with the best validation metric; only strict
/// improvements count, so ties keep the earlier epoch. Training stops after
/// `patience` epochs without improvement.
pub fn train_loop<M: Trainable + Clone>(
    model: &mut M,
    tokens: &Tensor,
    targets: &Targets,
    masks: &SplitMasks,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_inputs(model, tokens, targets, masks)?;
    let mut train_nodes = masks.train_nodes();
    let val_nodes = masks.val_nodes();
    let test_nodes = masks.test_nodes();
    if train_nodes.is_empty() || val_nodes.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    let batch = cfg.batch_size.unwrap_or(train_nodes.len()).min(train_nodes.len());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d20b);
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, M)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        train_nodes.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in train_nodes.chunks(batch) {
            let (loss, grads) = batch_gradients(model, tokens, targets, chunk, Some(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("loss became {loss} at epoch {epoch}")));
            }
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient at epoch {epoch}")));
            }
            opt.step(model.tensors_mut(), &grads)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_nodes.len() as f64;

        let val_metric = targets.metric(&predict_nodes(model, tokens, &val_nodes)?, &val_nodes)?;
        if !val_metric.is_finite() {
            return Err(Error::Numerical(format!("validation metric became {val_metric} at epoch {epoch}")));
        }
        let test_metric = if test_nodes.is_empty() {
            None
        } else {
            Some(targets.metric(&predict_nodes(model, tokens, &test_nodes)?, &test_nodes)?)
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_metric,
            test_metric,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });

        if best.as_ref().is_none_or(|(_, b, _)| val_metric > *b) {
            best = Some((epoch, val_metric, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, best_val, state) = best.expect("at least one epoch ran");
    *model = state;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val,
        stopped_early,
    })
}

/// Writes `epoch,train_loss,val_metric,test_metric,wall_ms` rows.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(["epoch", "train_loss", "val_metric", "test_metric", "wall_ms"]).map_err(err)?;
    for r in history {
        out.write_record([
            r.epoch.to_string(),
            format!("{:e}", r.train_loss),
            format!("{:e}", r.val_metric),
            r.test_metric.map(|t| format!("{t:e}")).unwrap_or_default(),
            format!("{:.3}", r.wall_ms),
        ])
        .map_err(err)?;
    }
    out.flush()?;
    Ok(())
}
