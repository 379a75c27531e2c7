use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{affine, check_input, Handles, PolyFormer, Trainable};
use crate::autodiff::{Tape, Tensor, Var};
use crate::basis::BasisKind;
use crate::error::{Error, Result};
use crate::polyattn::{polyattn_tape, uniform, AttnScores, NodeCoefficients, PolyAttnConfig, PolyAttnParams, PolyAttnVars};
use crate::polyattn::extract_node_coefficients;

/// A single PolyAttn layer over projected tokens; the filter-fitting model
/// of the synthetic lab.
///
/// With a readout width the attended tokens go through the order-sum
/// readout. Without one the layer mixes the raw input tokens and the output
/// is their order sum, so node `i` computes exactly `Σ_j α_j^(i) h_j^(i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttnFilterConfig {
    pub basis: BasisKind,
    #[serde(default)]
    pub cheb_shifted: bool,
    pub input_dim: usize,
    pub attn: PolyAttnConfig,
    #[serde(default)]
    pub readout_dim: Option<usize>,
    #[serde(default = "one")]
    pub outputs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnFilter {
    pub config: AttnFilterConfig,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    pub attn: PolyAttnParams,
    /// `[d, readout]` and `[readout, outputs]`.
    pub readout: Option<(Tensor, Tensor)>,
}

impl AttnFilter {
    pub fn init(config: AttnFilterConfig) -> Result<Self> {
        config.attn.validate()?;
        if config.input_dim == 0 || config.readout_dim == Some(0) || config.outputs == 0 {
            return Err(Error::invalid("widths must be positive"));
        }
        if config.readout_dim.is_none() && config.outputs != config.input_dim {
            return Err(Error::invalid(format!(
                "without a readout the output width is {}, not {}",
                config.input_dim, config.outputs
            )));
        }
        if config.readout_dim.is_none() && config.input_dim % config.attn.heads != 0 {
            return Err(Error::invalid(format!(
                "{} input channels do not split over {} heads",
                config.input_dim, config.attn.heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.attn.dim;
        let proj_w = uniform(&mut rng, &[config.input_dim, d], 1.0 / (config.input_dim as f64).sqrt());
        let attn = PolyAttnParams::init(config.attn.clone(), &mut rng)?;
        let readout = config.readout_dim.map(|r| {
            let w1 = uniform(&mut rng, &[d, r], 1.0 / (d as f64).sqrt());
            let w2 = uniform(&mut rng, &[r, config.outputs], 1.0 / (r as f64).sqrt());
            (w1, w2)
        });
        Ok(Self {
            proj_w,
            proj_b: Tensor::zeros(&[d]),
            attn,
            readout,
            config,
        })
    }

    /// Attention scores of the layer on a token batch.
    pub fn scores(&self, tokens: &Tensor) -> Result<AttnScores> {
        let mut tape = Tape::new();
        let params = self.register(&mut tape);
        let x = tape.constant(tokens.clone());
        check_input(&tape, x, self.config.attn.tokens(), self.config.input_dim)?;
        let h = affine(&mut tape, x, params[0], params[1])?;
        let vars = PolyAttnVars::bind(&mut params[2..].iter().copied())?;
        let values = self.config.readout_dim.is_none().then_some(x);
        let out = polyattn_tape(&mut tape, &self.config.attn, &vars, h, values)?;
        Ok(AttnScores {
            heads: out.scores.iter().map(|s| tape.value(*s).clone()).collect(),
        })
    }

    /// Per-node filter coefficients the layer applies to its values (the raw
    /// tokens when there is no readout).
    pub fn node_coefficients(&self, tokens: &Tensor) -> Result<NodeCoefficients> {
        Ok(extract_node_coefficients(&self.scores(tokens)?))
    }
}

impl Trainable for AttnFilter {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![("proj_w".to_string(), &self.proj_w), ("proj_b".to_string(), &self.proj_b)];
        v.extend(self.attn.named_tensors().into_iter().map(|(n, t)| (format!("attn.{n}"), t)));
        if let Some((w1, w2)) = &self.readout {
            v.push(("readout_w1".to_string(), w1));
            v.push(("readout_w2".to_string(), w2));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.proj_w, &mut self.proj_b];
        v.extend(self.attn.tensors_mut());
        if let Some((w1, w2)) = &mut self.readout {
            v.push(w1);
            v.push(w2);
        }
        v
    }

    fn input_shape(&self) -> (usize, usize) {
        (self.config.attn.tokens(), self.config.input_dim)
    }

    fn outputs(&self) -> usize {
        self.config.outputs
    }

    fn basis(&self) -> BasisKind {
        self.config.basis
    }

    fn forward_tape(&self, tape: &mut Tape, params: &[Var], x: Var, _dropout: Option<&mut ChaCha8Rng>) -> Result<Var> {
        check_input(tape, x, self.config.attn.tokens(), self.config.input_dim)?;
        let mut hs = Handles::new(params);
        let (w, b) = (hs.next()?, hs.next()?);
        let h = affine(tape, x, w, b)?;
        let vars = PolyAttnVars::bind(&mut hs.iter().take(7))?;
        let values = self.readout.is_none().then_some(x);
        let a = polyattn_tape(tape, &self.config.attn, &vars, h, values)?.tokens;
        if self.readout.is_none() {
            hs.finish()?;
            return tape.sum_rows(a);
        }
        let (w1, w2) = (hs.next()?, hs.next()?);
        hs.finish()?;
        PolyFormer::readout_tape(tape, a, w1, w2)
    }
}
