use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{affine, check_input, dropout, Handles, Trainable};
use crate::autodiff::{Tape, Tensor, Var};
use crate::basis::BasisKind;
use crate::error::{Error, Result};
use crate::polyattn::{polyattn_tape, uniform, Activation, PolyAttnConfig, PolyAttnParams, PolyAttnVars};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub basis: BasisKind,
    #[serde(default)]
    pub cheb_shifted: bool,
    /// Highest token order `K`.
    pub order: usize,
    /// Raw feature width `d_in` of the tokens.
    pub input_dim: usize,
    /// Hidden width `d`.
    pub hidden: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Output width: classes, or 1 for signal regression.
    pub classes: usize,
    pub readout_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub r: f64,
    #[serde(default = "one")]
    pub mlp_factor: f64,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::invalid("need at least one block"));
        }
        if self.input_dim == 0 || self.hidden == 0 || self.ffn_dim == 0 || self.classes == 0 || self.readout_dim == 0 {
            return Err(Error::invalid("all widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.attn_config().validate()
    }

    pub fn attn_config(&self) -> PolyAttnConfig {
        PolyAttnConfig {
            dim: self.hidden,
            order: self.order,
            heads: self.heads,
            qk_dim: self.hidden,
            mlp_factor: self.mlp_factor,
            r: self.r,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gain: Tensor,
    pub ln1_offset: Tensor,
    pub attn: PolyAttnParams,
    pub ln2_gain: Tensor,
    pub ln2_offset: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
}

impl BlockParams {
    fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut v = vec![
            (format!("{prefix}.ln1_gain"), &self.ln1_gain),
            (format!("{prefix}.ln1_offset"), &self.ln1_offset),
        ];
        v.extend(self.attn.named_tensors().into_iter().map(|(n, t)| (format!("{prefix}.attn.{n}"), t)));
        v.extend([
            (format!("{prefix}.ln2_gain"), &self.ln2_gain),
            (format!("{prefix}.ln2_offset"), &self.ln2_offset),
            (format!("{prefix}.ffn_w1"), &self.ffn_w1),
            (format!("{prefix}.ffn_b1"), &self.ffn_b1),
            (format!("{prefix}.ffn_w2"), &self.ffn_w2),
            (format!("{prefix}.ffn_b2"), &self.ffn_b2),
        ]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.ln1_gain, &mut self.ln1_offset];
        v.extend(self.attn.tensors_mut());
        v.extend([
            &mut self.ln2_gain,
            &mut self.ln2_offset,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
        ]);
        v
    }

    /// Zeroes the attention layer and the FFN output layer, turning the
    /// block into the identity map.
    pub fn zero_residual_branches(&mut self) {
        for t in self.attn.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        self.ffn_w2.data_mut().fill(0.0);
        self.ffn_b2.data_mut().fill(0.0);
    }
}

struct BlockVars {
    ln1_gain: Var,
    ln1_offset: Var,
    attn: PolyAttnVars,
    ln2_gain: Var,
    ln2_offset: Var,
    ffn_w1: Var,
    ffn_b1: Var,
    ffn_w2: Var,
    ffn_b2: Var,
}

impl BlockVars {
    fn bind(h: &mut Handles) -> Result<Self> {
        let ln1_gain = h.next()?;
        let ln1_offset = h.next()?;
        let attn = PolyAttnVars::bind(&mut h.iter())?;
        Ok(Self {
            ln1_gain,
            ln1_offset,
            attn,
            ln2_gain: h.next()?,
            ln2_offset: h.next()?,
            ffn_w1: h.next()?,
            ffn_b1: h.next()?,
            ffn_w2: h.next()?,
            ffn_b2: h.next()?,
        })
    }
}

/// Input projection, `L` pre-norm residual blocks, order-sum readout.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFormer {
    pub config: ModelConfig,
    /// `[d_in, d]`
    pub input_w: Tensor,
    /// `[d]`
    pub input_b: Tensor,
    pub blocks: Vec<BlockParams>,
    /// `[d, d']`
    pub readout_w1: Tensor,
    /// `[d', c]`
    pub readout_w2: Tensor,
}

impl PolyFormer {
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, f) = (config.hidden, config.ffn_dim);
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let input_w = uniform(&mut rng, &[config.input_dim, d], fan(config.input_dim));
        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            let attn = PolyAttnParams::init(config.attn_config(), &mut rng)?;
            blocks.push(BlockParams {
                ln1_gain: Tensor::filled(&[d], 1.0),
                ln1_offset: Tensor::zeros(&[d]),
                attn,
                ln2_gain: Tensor::filled(&[d], 1.0),
                ln2_offset: Tensor::zeros(&[d]),
                ffn_w1: uniform(&mut rng, &[d, f], fan(d)),
                ffn_b1: Tensor::zeros(&[f]),
                ffn_w2: uniform(&mut rng, &[f, d], fan(f)),
                ffn_b2: Tensor::zeros(&[d]),
            });
        }
        let readout_w1 = uniform(&mut rng, &[d, config.readout_dim], fan(d));
        let readout_w2 = uniform(&mut rng, &[config.readout_dim, config.classes], fan(config.readout_dim));
        Ok(Self {
            input_w,
            input_b: Tensor::zeros(&[d]),
            blocks,
            readout_w1,
            readout_w2,
            config,
        })
    }

    /// `Z = relu((Σ_k H_k) W_1) W_2` on a `[B, K+1, d]` handle.
    pub fn readout_tape(tape: &mut Tape, h: Var, w1: Var, w2: Var) -> Result<Var> {
        let s = tape.sum_rows(h)?;
        let z = tape.matmul(s, w1)?;
        let z = tape.relu(z)?;
        tape.matmul(z, w2)
    }
}

fn block_tape(
    tape: &mut Tape,
    cfg: &ModelConfig,
    b: &BlockVars,
    h: Var,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let n1 = tape.layer_norm_rows(h, b.ln1_gain, b.ln1_offset, LAYER_NORM_EPS)?;
    let a = polyattn_tape(tape, &cfg.attn_config(), &b.attn, n1, None)?.tokens;
    let a = dropout(tape, a, cfg.dropout, rng.as_deref_mut())?;
    let h1 = tape.add(a, h)?;
    let n2 = tape.layer_norm_rows(h1, b.ln2_gain, b.ln2_offset, LAYER_NORM_EPS)?;
    let f = affine(tape, n2, b.ffn_w1, b.ffn_b1)?;
    let f = tape.relu(f)?;
    let f = dropout(tape, f, cfg.dropout, rng)?;
    let f = affine(tape, f, b.ffn_w2, b.ffn_b2)?;
    tape.add(f, h1)
}

impl Trainable for PolyFormer {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![("input_w".to_string(), &self.input_w), ("input_b".to_string(), &self.input_b)];
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(b.named(&format!("blocks.{i}")));
        }
        v.push(("readout_w1".to_string(), &self.readout_w1));
        v.push(("readout_w2".to_string(), &self.readout_w2));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.input_w, &mut self.input_b];
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v.push(&mut self.readout_w1);
        v.push(&mut self.readout_w2);
        v
    }

    fn input_shape(&self) -> (usize, usize) {
        (self.config.order + 1, self.config.input_dim)
    }

    fn outputs(&self) -> usize {
        self.config.classes
    }

    fn basis(&self) -> BasisKind {
        self.config.basis
    }

    fn forward_tape(&self, tape: &mut Tape, params: &[Var], x: Var, mut rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        check_input(tape, x, self.config.order + 1, self.config.input_dim)?;
        let mut hs = Handles::new(params);
        let (w, b) = (hs.next()?, hs.next()?);
        let mut h = affine(tape, x, w, b)?;
        for _ in 0..self.blocks.len() {
            let bv = BlockVars::bind(&mut hs)?;
            h = block_tape(tape, &self.config, &bv, h, rng.as_deref_mut())?;
        }
        let (w1, w2) = (hs.next()?, hs.next()?);
        hs.finish()?;
        PolyFormer::readout_tape(tape, h, w1, w2)
    }
}

/// Runs a single block outside of a model, for tests and diagnostics.
pub fn block_forward(config: &ModelConfig, block: &BlockParams, tokens: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let named = block.named("b");
    let vars: Vec<Var> = named.iter().map(|(_, t)| tape.param((*t).clone())).collect();
    let mut hs = Handles::new(&vars);
    let bv = BlockVars::bind(&mut hs)?;
    hs.finish()?;
    let x = tape.constant(tokens.clone());
    let out = block_tape(&mut tape, config, &bv, x, None)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> ModelConfig {
        ModelConfig {
            basis: BasisKind::Chebyshev,
            cheb_shifted: false,
            order: 2,
            input_dim: 3,
            hidden: 4,
            blocks: 2,
            heads: 2,
            ffn_dim: 5,
            classes: 3,
            readout_dim: 4,
            activation: Activation::Tanh,
            r: 1.0,
            mlp_factor: 1.0,
            dropout: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn zeroed_block_is_identity() {
        let cfg = small_config();
        let mut m = PolyFormer::init(cfg.clone()).unwrap();
        m.blocks[0].zero_residual_branches();
        let x = uniform(&mut ChaCha8Rng::seed_from_u64(1), &[3, 3, 4], 1.0);
        let y = block_forward(&cfg, &m.blocks[0], &x).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn scalar_block_by_hand() {
        let mut cfg = small_config();
        cfg.order = 0;
        cfg.hidden = 1;
        cfg.heads = 1;
        cfg.ffn_dim = 1;
        let mut m = PolyFormer::init(cfg.clone()).unwrap();
        let b = &mut m.blocks[0];
        // LN of a width-1 row is 0, so the normalized value is the offset
        b.ln1_offset = Tensor::filled(&[1], 0.5);
        b.ln2_offset = Tensor::filled(&[1], -1.0);
        b.ffn_w1 = Tensor::filled(&[1, 1], -2.0);
        b.ffn_b1 = Tensor::filled(&[1], 0.25);
        b.ffn_w2 = Tensor::filled(&[1, 1], 3.0);
        b.ffn_b2 = Tensor::filled(&[1], 0.1);
        let wq = b.attn.w_q.data()[0];
        let wk = b.attn.w_k.data()[0];
        let beta = b.attn.beta.data()[0];
        let p = &b.attn;
        // MLP on the single token 0.5
        let hid = p.config.hidden();
        let mut hm = p.mlp_b2.data()[0];
        for u in 0..hid {
            let z = (0.5 * p.mlp_w1.data()[u] + p.mlp_b1.data()[u]).max(0.0);
            hm += z * p.mlp_w2.data()[u];
        }
        let s = (hm * wq * hm * wk).tanh() * beta;
        let x = 2.0;
        let h1 = s * 0.5 + x;
        let f = ((-1.0f64) * -2.0 + 0.25).max(0.0) * 3.0 + 0.1;
        let want = f + h1;
        let out = block_forward(&cfg, &m.blocks[0], &Tensor::new(&[1, 1, 1], vec![x]).unwrap()).unwrap();
        assert!((out.data()[0] - want).abs() < 1e-14, "{} vs {want}", out.data()[0]);
    }

    #[test]
    fn readout_shapes_and_zero_tokens() {
        let mut cfg = small_config();
        cfg.blocks = 1;
        let mut m = PolyFormer::init(cfg).unwrap();
        m.blocks[0].zero_residual_branches();
        m.input_b = Tensor::zeros(&[4]);
        let logits = m.predict(&Tensor::zeros(&[5, 3, 3])).unwrap();
        assert_eq!(logits.shape(), &[5, 3]);
        assert!(logits.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn deterministic_and_node_independent() {
        let m = PolyFormer::init(small_config()).unwrap();
        let x = uniform(&mut ChaCha8Rng::seed_from_u64(2), &[4, 3, 3], 1.0);
        let a = m.predict(&x).unwrap();
        let b = PolyFormer::init(small_config()).unwrap().predict(&x).unwrap();
        assert!(a.bit_eq(&b));
        // drop node 1
        let keep: Vec<f64> = x.data().chunks_exact(9).enumerate().filter(|(i, _)| *i != 1).flat_map(|(_, c)| c.to_vec()).collect();
        let sub = m.predict(&Tensor::new(&[3, 3, 3], keep).unwrap()).unwrap();
        assert_eq!(&sub.data()[..3], &a.data()[..3]);
        assert_eq!(&sub.data()[3..], &a.data()[6..]);
    }

    #[test]
    fn invalid_configs() {
        let mut c = small_config();
        c.heads = 3;
        assert!(PolyFormer::init(c).is_err());
        let mut c = small_config();
        c.blocks = 0;
        assert!(PolyFormer::init(c).is_err());
    }
}
