use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{affine, check_input, Handles, Trainable};
use crate::autodiff::{Tape, Tensor, Var};
use crate::basis::BasisKind;
use crate::error::{Error, Result};
use crate::polyattn::uniform;

/// Node-unified polynomial filter `Z = Σ_k α_k H_k`, one coefficient vector
/// for every node.
///
/// With `width` set, tokens are first mapped to `width` channels by a shared
/// affine map; with `per_channel`, each channel has its own `α`; with
/// `head`, a linear layer maps channels to `outputs`. None of these make the
/// filter node-dependent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniFilterConfig {
    pub basis: BasisKind,
    #[serde(default)]
    pub cheb_shifted: bool,
    pub order: usize,
    pub input_dim: usize,
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default)]
    pub per_channel: bool,
    #[serde(default)]
    pub head: bool,
    #[serde(default = "one")]
    pub outputs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl UniFilterConfig {
    pub fn new(basis: BasisKind, order: usize, input_dim: usize) -> Self {
        Self {
            basis,
            cheb_shifted: false,
            order,
            input_dim,
            width: None,
            per_channel: false,
            head: false,
            outputs: input_dim,
            seed: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.width.unwrap_or(self.input_dim)
    }

    /// Parameter count for a given projection width, without building.
    pub fn count_params(&self) -> usize {
        let c = self.channels();
        let proj = if self.width.is_some() { self.input_dim * c + c } else { 0 };
        let alpha = (self.order + 1) * if self.per_channel { c } else { 1 };
        let head = if self.head { c * self.outputs + self.outputs } else { 0 };
        proj + alpha + head
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniFilter {
    pub config: UniFilterConfig,
    /// `[d_in, width]` and `[width]` when projecting.
    pub proj: Option<(Tensor, Tensor)>,
    /// `[K+1, channels]` or `[K+1, 1]`.
    pub alpha: Tensor,
    /// `[channels, outputs]` and `[outputs]` with a head.
    pub head: Option<(Tensor, Tensor)>,
}

impl UniFilter {
    pub fn init(config: UniFilterConfig) -> Result<Self> {
        if config.input_dim == 0 || config.channels() == 0 || (config.head && config.outputs == 0) {
            return Err(Error::invalid("widths must be positive"));
        }
        if !config.head && config.outputs != config.channels() {
            return Err(Error::invalid(format!(
                "without a head the output width is {}, not {}",
                config.channels(),
                config.outputs
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let t = config.order + 1;
        let c = config.channels();
        let proj = config.width.map(|w| {
            (
                uniform(&mut rng, &[config.input_dim, w], 1.0 / (config.input_dim as f64).sqrt()),
                Tensor::zeros(&[w]),
            )
        });
        let alpha = Tensor::filled(&[t, if config.per_channel { c } else { 1 }], 1.0 / t as f64);
        let head = config.head.then(|| {
            (
                uniform(&mut rng, &[c, config.outputs], 1.0 / (c as f64).sqrt()),
                Tensor::zeros(&[config.outputs]),
            )
        });
        Ok(Self {
            config,
            proj,
            alpha,
            head,
        })
    }

    /// Filter with fixed coefficients and no projection or head.
    pub fn with_coefficients(basis: BasisKind, alpha: &[f64], input_dim: usize) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::invalid("empty coefficient vector"));
        }
        let mut f = Self::init(UniFilterConfig::new(basis, alpha.len() - 1, input_dim))?;
        f.alpha = Tensor::new(&[alpha.len(), 1], alpha.to_vec())?;
        Ok(f)
    }
}

impl Trainable for UniFilter {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        if let Some((w, b)) = &self.proj {
            v.push(("proj_w".to_string(), w));
            v.push(("proj_b".to_string(), b));
        }
        v.push(("alpha".to_string(), &self.alpha));
        if let Some((w, b)) = &self.head {
            v.push(("head_w".to_string(), w));
            v.push(("head_b".to_string(), b));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        if let Some((w, b)) = &mut self.proj {
            v.push(w);
            v.push(b);
        }
        v.push(&mut self.alpha);
        if let Some((w, b)) = &mut self.head {
            v.push(w);
            v.push(b);
        }
        v
    }

    fn input_shape(&self) -> (usize, usize) {
        (self.config.order + 1, self.config.input_dim)
    }

    fn outputs(&self) -> usize {
        if self.config.head {
            self.config.outputs
        } else {
            self.config.channels()
        }
    }

    fn basis(&self) -> BasisKind {
        self.config.basis
    }

    fn forward_tape(&self, tape: &mut Tape, params: &[Var], x: Var, _dropout: Option<&mut ChaCha8Rng>) -> Result<Var> {
        check_input(tape, x, self.config.order + 1, self.config.input_dim)?;
        let mut hs = Handles::new(params);
        let mut h = x;
        if self.proj.is_some() {
            let (w, b) = (hs.next()?, hs.next()?);
            h = affine(tape, h, w, b)?;
        }
        let alpha = hs.next()?;
        let weighted = tape.hadamard(h, alpha)?;
        let mut z = tape.sum_rows(weighted)?;
        if self.head.is_some() {
            let (w, b) = (hs.next()?, hs.next()?);
            z = affine(tape, z, w, b)?;
        }
        hs.finish()?;
        Ok(z)
    }
}
