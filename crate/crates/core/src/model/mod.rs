//! Trainable models over node token batches `[B, K+1, d_in]`.

mod attnfilter;
mod checkpoint;
mod polyformer;
mod unifilter;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use attnfilter::{AttnFilter, AttnFilterConfig};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use polyformer::{block_forward, BlockParams, ModelConfig, PolyFormer, LAYER_NORM_EPS};
pub use unifilter::{UniFilter, UniFilterConfig};

use crate::autodiff::{Tape, Tensor, Var};
use crate::basis::BasisKind;
use crate::error::{Error, Result};

/// A model whose parameters live in an ordered list of named tensors.
///
/// `forward_tape` receives one handle per tensor, in `named_tensors` order.
pub trait Trainable {
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;

    /// Same order as [`Trainable::named_tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    /// `(K+1, d_in)` of the token batches this model consumes.
    fn input_shape(&self) -> (usize, usize);

    fn outputs(&self) -> usize;

    fn basis(&self) -> BasisKind;

    /// Maps `x: [B, K+1, d_in]` to `[B, outputs]`. A dropout generator is
    /// passed only in training mode.
    fn forward_tape(&self, tape: &mut Tape, params: &[Var], x: Var, dropout: Option<&mut ChaCha8Rng>) -> Result<Var>;

    fn n_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.named_tensors()
            .into_iter()
            .map(|(_, t)| tape.param(t.clone()))
            .collect()
    }

    /// Evaluation-mode forward pass.
    fn predict(&self, tokens: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.register(&mut tape);
        let x = tape.constant(tokens.clone());
        let out = self.forward_tape(&mut tape, &params, x, None)?;
        Ok(tape.value(out).clone())
    }
}

/// Serialized description of any model; the checkpoint header stores this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    PolyFormer(ModelConfig),
    UniFilter(UniFilterConfig),
    AttnFilter(AttnFilterConfig),
}

impl ModelSpec {
    /// Freshly initialized model from the seed in the config.
    pub fn build(&self) -> Result<AnyModel> {
        Ok(match self {
            ModelSpec::PolyFormer(c) => AnyModel::PolyFormer(PolyFormer::init(c.clone())?),
            ModelSpec::UniFilter(c) => AnyModel::UniFilter(UniFilter::init(c.clone())?),
            ModelSpec::AttnFilter(c) => AnyModel::AttnFilter(AttnFilter::init(c.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    PolyFormer(PolyFormer),
    UniFilter(UniFilter),
    AttnFilter(AttnFilter),
}

impl AnyModel {
    pub fn spec(&self) -> ModelSpec {
        match self {
            AnyModel::PolyFormer(m) => ModelSpec::PolyFormer(m.config.clone()),
            AnyModel::UniFilter(m) => ModelSpec::UniFilter(m.config.clone()),
            AnyModel::AttnFilter(m) => ModelSpec::AttnFilter(m.config.clone()),
        }
    }

    fn inner(&self) -> &dyn Trainable {
        match self {
            AnyModel::PolyFormer(m) => m,
            AnyModel::UniFilter(m) => m,
            AnyModel::AttnFilter(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Trainable {
        match self {
            AnyModel::PolyFormer(m) => m,
            AnyModel::UniFilter(m) => m,
            AnyModel::AttnFilter(m) => m,
        }
    }
}

impl Trainable for AnyModel {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.inner().named_tensors()
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.inner_mut().tensors_mut()
    }
    fn input_shape(&self) -> (usize, usize) {
        self.inner().input_shape()
    }
    fn outputs(&self) -> usize {
        self.inner().outputs()
    }
    fn basis(&self) -> BasisKind {
        self.inner().basis()
    }
    fn forward_tape(&self, tape: &mut Tape, params: &[Var], x: Var, dropout: Option<&mut ChaCha8Rng>) -> Result<Var> {
        self.inner().forward_tape(tape, params, x, dropout)
    }
}

pub(crate) struct Handles<'a> {
    it: std::slice::Iter<'a, Var>,
}

impl<'a> Handles<'a> {
    pub(crate) fn new(params: &'a [Var]) -> Self {
        Self { it: params.iter() }
    }

    pub(crate) fn next(&mut self) -> Result<Var> {
        self.it
            .next()
            .copied()
            .ok_or_else(|| Error::Autodiff("too few parameter handles".into()))
    }

    pub(crate) fn iter<'s>(&'s mut self) -> std::iter::Copied<&'s mut std::slice::Iter<'a, Var>> {
        self.it.by_ref().copied()
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.it.len() != 0 {
            return Err(Error::Autodiff("too many parameter handles".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_input(tape: &Tape, x: Var, t: usize, d_in: usize) -> Result<()> {
    let s = tape.value(x).shape();
    if s.len() != 3 || s[1] != t || s[2] != d_in {
        return Err(Error::shape("model input", format!("{s:?}, expected [B, {t}, {d_in}]")));
    }
    Ok(())
}

/// `x · w + b` over the last axis.
pub(crate) fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

/// Inverted dropout with a seeded mask; identity when `p == 0` or no rng.
pub(crate) fn dropout(tape: &mut Tape, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if p <= 0.0 {
        return Ok(x);
    }
    let shape = tape.value(x).shape().to_vec();
    let keep = 1.0 / (1.0 - p);
    let n: usize = shape.iter().product();
    let mask = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    let m = tape.constant(Tensor::new(&shape, mask)?);
    tape.hadamard(x, m)
}
