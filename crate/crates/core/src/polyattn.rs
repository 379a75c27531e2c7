//! Attention over one node's own polynomial tokens.
//!
//! For every node the `K+1` tokens first pass through order-specific MLPs,
//! queries and keys are projected from the transformed tokens, and the
//! scores `act(QKᵀ) ⊙ B` with `B_kj = β_j / (j+1)^r` mix the *untransformed*
//! tokens. Summing the output over orders gives `Σ_j α_j h_j` with
//! `α_j = Σ_k S_kj`, a per-node polynomial filter whose coefficients are
//! recovered by [`extract_node_coefficients`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::basis::{scalar_basis, BasisKind, ChannelRecurrence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyAttnConfig {
    /// Token width `d`.
    pub dim: usize,
    /// Highest polynomial order `K`; each node has `K+1` tokens.
    pub order: usize,
    pub heads: usize,
    /// Total query/key width across heads.
    pub qk_dim: usize,
    /// Order-wise MLP hidden width is `round(mlp_factor · dim)`.
    pub mlp_factor: f64,
    /// Exponent of the per-order bias damping.
    pub r: f64,
    pub activation: Activation,
}

impl PolyAttnConfig {
    pub fn new(dim: usize, order: usize) -> Self {
        Self {
            dim,
            order,
            heads: 1,
            qk_dim: dim,
            mlp_factor: 1.0,
            r: 0.0,
            activation: Activation::Tanh,
        }
    }

    pub fn tokens(&self) -> usize {
        self.order + 1
    }

    pub fn hidden(&self) -> usize {
        ((self.mlp_factor * self.dim as f64).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.qk_dim == 0 {
            return Err(Error::invalid("token and query widths must be positive"));
        }
        if self.heads == 0 {
            return Err(Error::invalid("need at least one head"));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.qk_dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "query width {} is not divisible by {} heads",
                self.qk_dim, self.heads
            )));
        }
        if !(self.mlp_factor > 0.0 && self.mlp_factor.is_finite()) {
            return Err(Error::invalid("mlp_factor must be positive"));
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::invalid("constraint factor r must be >= 0"));
        }
        Ok(())
    }

    /// `1 / (j+1)^r` for every order `j`.
    pub fn decay(&self) -> Vec<f64> {
        (0..self.tokens()).map(|j| ((j + 1) as f64).powf(-self.r)).collect()
    }
}

/// Learnable state of one PolyAttn layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyAttnParams {
    pub config: PolyAttnConfig,
    /// `[d, d']`
    pub w_q: Tensor,
    /// `[d, d']`
    pub w_k: Tensor,
    /// `[K+1, d, hidden]`
    pub mlp_w1: Tensor,
    /// `[K+1, hidden]`
    pub mlp_b1: Tensor,
    /// `[K+1, hidden, d]`
    pub mlp_w2: Tensor,
    /// `[K+1, d]`
    pub mlp_b2: Tensor,
    /// `[heads, K+1]`
    pub beta: Tensor,
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape matches length")
}

impl PolyAttnParams {
    /// Seeded init: `β = 1/(K+1)`, projections `U(±1/√d)`, MLP weights
    /// `U(±1/√fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(config: PolyAttnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, t, hid, dq) = (config.dim, config.tokens(), config.hidden(), config.qk_dim);
        let bq = 1.0 / (d as f64).sqrt();
        Ok(Self {
            w_q: uniform(rng, &[d, dq], bq),
            w_k: uniform(rng, &[d, dq], bq),
            mlp_w1: uniform(rng, &[t, d, hid], 1.0 / (d as f64).sqrt()),
            mlp_b1: Tensor::zeros(&[t, hid]),
            mlp_w2: uniform(rng, &[t, hid, d], 1.0 / (hid as f64).sqrt()),
            mlp_b2: Tensor::zeros(&[t, d]),
            beta: Tensor::filled(&[config.heads, t], 1.0 / t as f64),
            config,
        })
    }

    /// All-zero weights with the given config (β included).
    pub fn zeros(config: PolyAttnConfig) -> Result<Self> {
        config.validate()?;
        let (d, t, hid, dq) = (config.dim, config.tokens(), config.hidden(), config.qk_dim);
        Ok(Self {
            w_q: Tensor::zeros(&[d, dq]),
            w_k: Tensor::zeros(&[d, dq]),
            mlp_w1: Tensor::zeros(&[t, d, hid]),
            mlp_b1: Tensor::zeros(&[t, hid]),
            mlp_w2: Tensor::zeros(&[t, hid, d]),
            mlp_b2: Tensor::zeros(&[t, d]),
            beta: Tensor::zeros(&[config.heads, t]),
            config,
        })
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("mlp_w1", &self.mlp_w1),
            ("mlp_b1", &self.mlp_b1),
            ("mlp_w2", &self.mlp_w2),
            ("mlp_b2", &self.mlp_b2),
            ("beta", &self.beta),
        ]
    }

    /// Same order as [`PolyAttnParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_q,
            &mut self.w_k,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
            &mut self.beta,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let (d, t, hid, dq) = (c.dim, c.tokens(), c.hidden(), c.qk_dim);
        let expected: [(&str, &Tensor, Vec<usize>); 7] = [
            ("w_q", &self.w_q, vec![d, dq]),
            ("w_k", &self.w_k, vec![d, dq]),
            ("mlp_w1", &self.mlp_w1, vec![t, d, hid]),
            ("mlp_b1", &self.mlp_b1, vec![t, hid]),
            ("mlp_w2", &self.mlp_w2, vec![t, hid, d]),
            ("mlp_b2", &self.mlp_b2, vec![t, d]),
            ("beta", &self.beta, vec![c.heads, t]),
        ];
        for (name, tensor, shape) in expected {
            if tensor.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "polyattn",
                    format!("{name} is {:?}, expected {shape:?}", tensor.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Single-head parameters for head `m`: its query/key columns and bias
    /// row, with the order-wise MLPs shared.
    pub fn head_slice(&self, m: usize) -> Result<PolyAttnParams> {
        let c = &self.config;
        if m >= c.heads {
            return Err(Error::invalid(format!("head {m} of {}", c.heads)));
        }
        let dh = c.qk_dim / c.heads;
        let cols = |w: &Tensor| {
            let data = w
                .data()
                .chunks_exact(c.qk_dim)
                .flat_map(|row| row[m * dh..(m + 1) * dh].iter().copied())
                .collect();
            Tensor::new(&[c.dim, dh], data)
        };
        let t = c.tokens();
        let mut config = c.clone();
        config.heads = 1;
        config.qk_dim = dh;
        Ok(PolyAttnParams {
            w_q: cols(&self.w_q)?,
            w_k: cols(&self.w_k)?,
            mlp_w1: self.mlp_w1.clone(),
            mlp_b1: self.mlp_b1.clone(),
            mlp_w2: self.mlp_w2.clone(),
            mlp_b2: self.mlp_b2.clone(),
            beta: Tensor::new(&[1, t], self.beta.data()[m * t..(m + 1) * t].to_vec())?,
            config,
        })
    }

    /// Registers every tensor on `tape` as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape) -> PolyAttnVars {
        let mut it = self.named_tensors().into_iter().map(|(_, t)| tape.param(t.clone())).collect::<Vec<_>>().into_iter();
        PolyAttnVars::bind(&mut it).expect("seven tensors registered")
    }
}

/// Tape handles for one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct PolyAttnVars {
    pub w_q: Var,
    pub w_k: Var,
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
    pub beta: Var,
}

impl PolyAttnVars {
    /// Takes handles in [`PolyAttnParams::named_tensors`] order.
    pub fn bind(it: &mut impl Iterator<Item = Var>) -> Result<Self> {
        let mut next = || it.next().ok_or_else(|| Error::Autodiff("too few parameter handles".into()));
        Ok(Self {
            w_q: next()?,
            w_k: next()?,
            mlp_w1: next()?,
            mlp_b1: next()?,
            mlp_w2: next()?,
            mlp_b2: next()?,
            beta: next()?,
        })
    }
}

/// Per-head attention scores, each `[B, K+1, K+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnScores {
    pub heads: Vec<Tensor>,
}

impl AttnScores {
    pub fn batch(&self) -> usize {
        self.heads.first().map_or(0, |t| t.shape()[0])
    }

    pub fn tokens(&self) -> usize {
        self.heads.first().map_or(0, |t| t.shape()[1])
    }

    /// Row-major `(K+1)×(K+1)` score matrix of `node` under `head`.
    pub fn node(&self, head: usize, node: usize) -> &[f64] {
        let t = self.tokens();
        &self.heads[head].data()[node * t * t..(node + 1) * t * t]
    }
}

/// Per-node filter coefficients, one `[B, K+1]` block per head.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeCoefficients {
    pub heads: Vec<Tensor>,
}

impl NodeCoefficients {
    pub fn batch(&self) -> usize {
        self.heads.first().map_or(0, |t| t.shape()[0])
    }

    pub fn node(&self, head: usize, node: usize) -> &[f64] {
        let t = self.heads[head].shape()[1];
        &self.heads[head].data()[node * t..(node + 1) * t]
    }
}

/// Output of [`polyattn_tape`]: new tokens plus per-head score handles.
pub struct PolyAttnOutput {
    pub tokens: Var,
    pub scores: Vec<Var>,
}

/// Records one PolyAttn layer on `tape`.
///
/// `x` is `[B, K+1, d]`. `values` defaults to `x` itself; passing another
/// `[B, K+1, d_v]` tensor (with `d_v` divisible by the head count) mixes it
/// instead, which lets a single head be replayed on a channel group.
pub fn polyattn_tape(
    tape: &mut Tape,
    config: &PolyAttnConfig,
    p: &PolyAttnVars,
    x: Var,
    values: Option<Var>,
) -> Result<PolyAttnOutput> {
    let t = config.tokens();
    let xs = tape.value(x).shape().to_vec();
    if xs.len() != 3 || xs[1] != t || xs[2] != config.dim {
        return Err(Error::shape(
            "polyattn",
            format!("tokens {xs:?}, expected [B, {t}, {}]", config.dim),
        ));
    }
    let v = values.unwrap_or(x);
    let vs = tape.value(v).shape().to_vec();
    if vs.len() != 3 || vs[0] != xs[0] || vs[1] != t || vs[2] % config.heads != 0 {
        return Err(Error::shape("polyattn", format!("values {vs:?} for tokens {xs:?}")));
    }

    let h1 = tape.slot_matmul(x, p.mlp_w1)?;
    let h1 = tape.add(h1, p.mlp_b1)?;
    let h1 = tape.relu(h1)?;
    let h2 = tape.slot_matmul(h1, p.mlp_w2)?;
    let hm = tape.add(h2, p.mlp_b2)?;

    let q = tape.matmul(hm, p.w_q)?;
    let k = tape.matmul(hm, p.w_k)?;
    let dh = config.qk_dim / config.heads;
    let dv = vs[2] / config.heads;
    let decay = tape.constant(Tensor::new(&[t], config.decay())?);
    let beta_flat = tape.reshape(p.beta, &[1, config.heads * t])?;

    let mut outs = Vec::with_capacity(config.heads);
    let mut scores = Vec::with_capacity(config.heads);
    for m in 0..config.heads {
        let (qm, km) = if config.heads == 1 {
            (q, k)
        } else {
            (tape.slice_cols(q, m * dh, dh)?, tape.slice_cols(k, m * dh, dh)?)
        };
        let logits = tape.bmm_nt(qm, km)?;
        let act = match config.activation {
            Activation::Tanh => tape.tanh(logits)?,
            Activation::Softmax => tape.softmax_rows(logits)?,
        };
        let beta_m = tape.slice_cols(beta_flat, m * t, t)?;
        let beta_m = tape.reshape(beta_m, &[t])?;
        let bias = tape.hadamard(beta_m, decay)?;
        let s = tape.hadamard(act, bias)?;
        let vm = if config.heads == 1 { v } else { tape.slice_cols(v, m * dv, dv)? };
        outs.push(tape.bmm(s, vm)?);
        scores.push(s);
    }
    let tokens = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    Ok(PolyAttnOutput { tokens, scores })
}

fn run(params: &PolyAttnParams, tokens: &Tensor, values: Option<&Tensor>) -> Result<(Tensor, AttnScores)> {
    params.check_shapes()?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let x = tape.constant(tokens.clone());
    let v = values.map(|v| tape.constant(v.clone()));
    let out = polyattn_tape(&mut tape, &params.config, &vars, x, v)?;
    let scores = AttnScores {
        heads: out.scores.iter().map(|s| tape.value(*s).clone()).collect(),
    };
    Ok((tape.value(out.tokens).clone(), scores))
}

/// Forward pass over a `[B, K+1, d]` batch of node token matrices.
pub fn polyattn_forward(params: &PolyAttnParams, tokens: &Tensor) -> Result<(Tensor, AttnScores)> {
    run(params, tokens, None)
}

/// Multi-head forward; identical to [`polyattn_forward`] (the head count is
/// part of the parameters), kept as a separate entry point for clarity at
/// call sites that depend on the head split.
pub fn multihead_polyattn_forward(params: &PolyAttnParams, tokens: &Tensor) -> Result<(Tensor, AttnScores)> {
    run(params, tokens, None)
}

/// Forward pass whose scores come from `tokens` but which mixes `values`.
pub fn polyattn_forward_with_values(
    params: &PolyAttnParams,
    tokens: &Tensor,
    values: &Tensor,
) -> Result<(Tensor, AttnScores)> {
    run(params, tokens, Some(values))
}

/// Column sums of every node's score matrix, per head.
pub fn extract_node_coefficients(scores: &AttnScores) -> NodeCoefficients {
    let heads = scores
        .heads
        .iter()
        .map(|s| {
            let (b, t) = (s.shape()[0], s.shape()[1]);
            let mut alpha = vec![0.0; b * t];
            for node in 0..b {
                let sm = &s.data()[node * t * t..(node + 1) * t * t];
                let a = &mut alpha[node * t..(node + 1) * t];
                for row in sm.chunks_exact(t) {
                    for (aj, sj) in a.iter_mut().zip(row) {
                        *aj += sj;
                    }
                }
            }
            Tensor::new(&[b, t], alpha).expect("sized above")
        })
        .collect();
    NodeCoefficients { heads }
}

/// `Σ_k α_k t_k(λ)` on every grid point, where `t_k` is the scalar response
/// of the basis at Laplacian eigenvalue `λ`.
pub fn filter_response(
    alpha: &[f64],
    basis: BasisKind,
    lambda_grid: &[f64],
    cheb_shifted: bool,
    recurrence: Option<&ChannelRecurrence>,
) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::invalid("empty coefficient vector"));
    }
    let k_max = alpha.len() - 1;
    lambda_grid
        .iter()
        .map(|&lambda| {
            let t = scalar_basis(basis, k_max, lambda, cheb_shifted, recurrence)?;
            Ok(alpha.iter().zip(&t).map(|(a, b)| a * b).sum())
        })
        .collect()
}

/// Single-channel two-order layer on which tanh scores give `α_0 > 0` for
/// the first node and `α_0 < 0` for the second.
///
/// The MLPs compute `relu(x) - relu(-x) = x`, `W_Q = W_K = 1`, `β = 1` and
/// `r = 0`, so node tokens `(1, 1)` score `tanh(1)` everywhere while
/// `(1, -2)` gives `α_0 = tanh(1) + tanh(-2)`.
pub fn tanh_sign_fixture() -> (PolyAttnParams, Tensor) {
    let mut config = PolyAttnConfig::new(1, 1);
    config.mlp_factor = 2.0;
    let params = PolyAttnParams {
        w_q: Tensor::filled(&[1, 1], 1.0),
        w_k: Tensor::filled(&[1, 1], 1.0),
        mlp_w1: Tensor::new(&[2, 1, 2], vec![1.0, -1.0, 1.0, -1.0]).expect("static"),
        mlp_b1: Tensor::zeros(&[2, 2]),
        mlp_w2: Tensor::new(&[2, 2, 1], vec![1.0, -1.0, 1.0, -1.0]).expect("static"),
        mlp_b2: Tensor::zeros(&[2, 1]),
        beta: Tensor::filled(&[1, 2], 1.0),
        config,
    };
    let tokens = Tensor::new(&[2, 2, 1], vec![1.0, 1.0, 1.0, -2.0]).expect("static");
    (params, tokens)
}

/// Parameters whose scores are exactly `diag(α)` for every node, so the
/// layer reproduces a node-unified filter with coefficients `alpha`.
///
/// The MLPs ignore their input and emit `c · e_j` for order `j`; with
/// identity projections `QKᵀ = c² I` and `tanh(c²)` rounds to 1 for
/// `c² ≥ 20`. Needs `dim ≥ alpha.len()`.
pub fn saturated_fixture(alpha: &[f64], dim: usize) -> Result<PolyAttnParams> {
    let t = alpha.len();
    if t == 0 || dim < t {
        return Err(Error::invalid(format!("saturated fixture needs 1 <= K+1 <= dim, got {t} and {dim}")));
    }
    let config = PolyAttnConfig::new(dim, t - 1);
    let mut p = PolyAttnParams::zeros(config)?;
    let c = 5.0;
    let mut eye = Tensor::zeros(&[dim, dim]);
    for i in 0..dim {
        eye.data_mut()[i * dim + i] = 1.0;
    }
    p.w_q = eye.clone();
    p.w_k = eye;
    for j in 0..t {
        p.mlp_b2.data_mut()[j * dim + j] = c;
    }
    p.beta = Tensor::new(&[1, t], alpha.to_vec())?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tokens(rng: &mut ChaCha8Rng, b: usize, t: usize, d: usize) -> Tensor {
        uniform(rng, &[b, t, d], 1.0)
    }

    #[test]
    fn zero_projections_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = PolyAttnParams::init(PolyAttnConfig::new(3, 2), &mut rng).unwrap();
        p.w_q = Tensor::zeros(&[3, 3]);
        p.w_k = Tensor::zeros(&[3, 3]);
        let x = random_tokens(&mut rng, 4, 3, 3);
        let (out, _) = polyattn_forward(&p, &x).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_computed_two_token_scores() {
        // d = 1, identity MLP, q = k = token; no 1/sqrt(d) scaling
        let (mut p, _) = tanh_sign_fixture();
        p.beta = Tensor::new(&[1, 2], vec![0.5, 2.0]).unwrap();
        p.config.r = 1.0;
        let x = Tensor::new(&[1, 2, 1], vec![0.3, -0.7]).unwrap();
        let (out, scores) = polyattn_forward(&p, &x).unwrap();
        let h = [0.3f64, -0.7];
        let b = [0.5, 2.0 / 2.0];
        for k in 0..2 {
            let mut o = 0.0;
            for j in 0..2 {
                let s = (h[k] * h[j]).tanh() * b[j];
                assert!((scores.node(0, 0)[k * 2 + j] - s).abs() < 1e-15);
                o += s * h[j];
            }
            assert!((out.data()[k] - o).abs() < 1e-15);
        }
    }

    #[test]
    fn tanh_fixture_has_opposite_signs() {
        let (p, x) = tanh_sign_fixture();
        let (_, s) = polyattn_forward(&p, &x).unwrap();
        let a = extract_node_coefficients(&s);
        assert!(a.node(0, 0)[0] > 0.0);
        assert!(a.node(0, 1)[0] < 0.0);
        assert!((a.node(0, 1)[0] - (1f64.tanh() + (-2f64).tanh())).abs() < 1e-15);
    }

    #[test]
    fn saturated_fixture_is_diagonal() {
        let alpha = [0.4, -1.3, 2.0];
        let p = saturated_fixture(&alpha, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tokens(&mut rng, 6, 3, 4);
        let (_, s) = polyattn_forward(&p, &x).unwrap();
        for node in 0..6 {
            let sm = s.node(0, node);
            for k in 0..3 {
                for j in 0..3 {
                    let want = if k == j { alpha[j] } else { 0.0 };
                    assert_eq!(sm[k * 3 + j], want);
                }
            }
        }
    }

    #[test]
    fn theorem_identity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = PolyAttnConfig::new(4, 3);
        cfg.r = 1.3;
        let p = PolyAttnParams::init(cfg, &mut rng).unwrap();
        let x = random_tokens(&mut rng, 5, 4, 4);
        let (out, s) = polyattn_forward(&p, &x).unwrap();
        let a = extract_node_coefficients(&s);
        for node in 0..5 {
            for c in 0..4 {
                let lhs: f64 = (0..4).map(|k| out.data()[(node * 4 + k) * 4 + c]).sum();
                let rhs: f64 = (0..4).map(|j| a.node(0, node)[j] * x.data()[(node * 4 + j) * 4 + c]).sum();
                assert!((lhs - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = PolyAttnConfig::new(6, 2);
        c.heads = 4;
        assert!(c.validate().is_err());
        c.heads = 3;
        assert!(c.validate().is_ok());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = PolyAttnParams::init(PolyAttnConfig::new(2, 1), &mut rng).unwrap();
        assert!(polyattn_forward(&p, &Tensor::zeros(&[1, 3, 2])).is_err());
    }

    #[test]
    fn responses_of_simple_coefficients() {
        let grid = [0.0, 0.5, 1.0, 2.0];
        let r = filter_response(&[1.0, 0.0], BasisKind::Monomial, &grid, false, None).unwrap();
        assert_eq!(r, vec![1.0; 4]);
        let r = filter_response(&[0.0, 1.0], BasisKind::Monomial, &grid, false, None).unwrap();
        assert_eq!(r, vec![1.0, 0.5, 0.0, -1.0]);
        let r = filter_response(&[1.0; 5], BasisKind::Bernstein, &grid, false, None).unwrap();
        assert!(r.iter().all(|v| (v - 1.0).abs() < 1e-14));
        assert!(filter_response(&[1.0], BasisKind::Optimal, &grid, false, None).is_err());
    }
}
