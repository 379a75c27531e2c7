//! Self-checks of the numerical core: token recursions against dense
//! evaluation, spectral identities, the attention coefficient identities and
//! gradient fidelity. Each check is seeded and reports its own timing.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, Tape, Tensor, Var};
use crate::basis::BasisKind;
use crate::error::{Error, Result};
use crate::filter::FilterSpec;
use crate::graph::{normalized_adjacency, normalized_laplacian, random_graph, Graph};
use crate::linalg::{dense_basis_terms, dense_optimal_terms, laplacian_spectrum};
use crate::matrix::DenseMatrix;
use crate::model::{ModelConfig, PolyFormer, Trainable};
use crate::polyattn::{
    extract_node_coefficients, multihead_polyattn_forward, polyattn_forward, polyattn_forward_with_values,
    polyattn_tape, saturated_fixture, tanh_sign_fixture, uniform, Activation, PolyAttnConfig, PolyAttnParams,
    PolyAttnVars,
};
use crate::tokens::{compute_tokens, TokenTensor};

pub const TOKEN_REL_TOL: f64 = 1e-10;
pub const SPECTRAL_TOL: f64 = 1e-8;
pub const THEOREM_TOL: f64 = 1e-10;
pub const MULTIHEAD_TOL: f64 = 1e-12;
pub const PARTITION_TOL: f64 = 1e-12;
pub const ORTHONORMAL_TOL: f64 = 1e-8;
pub const SPECTRUM_SLACK: f64 = 1e-8;
pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Tokens,
    Theorem,
    Gradients,
    Spectral,
    All,
}

impl Suite {
    fn parts(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::Tokens, Suite::Spectral, Suite::Theorem, Suite::Gradients],
            s => vec![s],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Tokens => "tokens",
            Suite::Theorem => "theorem",
            Suite::Gradients => "gradients",
            Suite::Spectral => "spectral",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Suite::Tokens, Suite::Theorem, Suite::Gradients, Suite::Spectral, Suite::All]
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown suite {s:?}; expected tokens, theorem, gradients, spectral or all")))
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Perturbs one sparse token before the dense comparison.
    pub inject_fault: bool,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error, or the failure message.
    pub detail: String,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Outcome of one check: the worst error seen and the tolerance it must beat.
struct Measured {
    worst: f64,
    tol: f64,
}

impl Measured {
    fn new(worst: f64, tol: f64) -> Self {
        Self { worst, tol }
    }
}

type CheckFn = fn(&VerifyOptions) -> Result<Measured>;

fn checks_of(suite: Suite) -> Vec<(&'static str, CheckFn)> {
    match suite {
        Suite::Tokens => vec![
            ("token-oracle", token_oracle as CheckFn),
            ("token-linearity", token_linearity),
            ("bernstein-partition", bernstein_partition),
            ("optimal-orthonormality", optimal_orthonormality),
        ],
        Suite::Spectral => vec![
            ("spectrum-bounds", spectrum_bounds as CheckFn),
            ("eigen-reconstruction", eigen_reconstruction),
            ("spectral-consistency", spectral_consistency),
        ],
        Suite::Theorem => vec![
            ("node-wise-coefficients", theorem_identity as CheckFn),
            ("multi-head-channel-groups", multihead_groups),
            ("softmax-sign-lock", softmax_sign_lock),
            ("tanh-sign-flip", tanh_sign_flip),
            ("saturated-unified-filter", saturated_unified),
        ],
        Suite::Gradients => vec![
            ("grad-primitives", grad_primitives as CheckFn),
            ("grad-polyattn", grad_polyattn),
            ("grad-polyformer-ce", grad_polyformer),
        ],
        Suite::All => Vec::new(),
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> VerifyReport {
    let mut report = VerifyReport::default();
    for part in suite.parts() {
        for (name, f) in checks_of(part) {
            let start = Instant::now();
            let res = f(opts);
            let elapsed = start.elapsed();
            let (passed, detail) = match res {
                Ok(m) if m.worst <= m.tol => (true, format!("worst={:.3e} tol={:.0e}", m.worst, m.tol)),
                Ok(m) => (false, format!("worst={:.3e} exceeds tol={:.0e}", m.worst, m.tol)),
                Err(e) => (false, e.to_string()),
            };
            report.checks.push(CheckResult {
                suite: part,
                name,
                passed,
                detail,
                elapsed,
            });
        }
    }
    report
}

fn rng(opts: &VerifyOptions, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt)
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DenseMatrix {
    let data = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseMatrix::from_vec(n, d, data).expect("sized")
}

fn seeded_graph(rng: &mut ChaCha8Rng, n_lo: usize, n_hi: usize, p: f64) -> Result<Graph> {
    let n = rng.gen_range(n_lo..=n_hi);
    random_graph(n, p, rng)
}

/// Dense `g_k(P) X` for every order, using the recurrence coefficients the
/// sparse run produced for the optimal basis.
pub fn dense_tokens(g: &Graph, x: &DenseMatrix, tokens: &TokenTensor) -> Result<Vec<DenseMatrix>> {
    match tokens.basis() {
        BasisKind::Optimal => {
            let coeffs = tokens
                .opt_coeffs()
                .ok_or_else(|| Error::invalid("optimal tokens without recurrence coefficients"))?;
            dense_optimal_terms(&normalized_adjacency(g).to_dense(), x, coeffs)
        }
        b => {
            let p = match b.operator() {
                crate::basis::Operator::Adjacency => normalized_adjacency(g),
                crate::basis::Operator::Laplacian => normalized_laplacian(g),
            };
            dense_basis_terms(&p.to_dense(), b, tokens.order(), x, tokens.cheb_shifted())
        }
    }
}

/// Largest token deviation relative to the largest dense token magnitude.
pub fn token_relative_error(tokens: &TokenTensor, dense: &[DenseMatrix]) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (k, d) in dense.iter().enumerate() {
        diff = diff.max(tokens.order_matrix(k).max_abs_diff(d));
        scale = scale.max(d.max_abs());
    }
    diff / scale.max(f64::MIN_POSITIVE)
}

fn token_oracle(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 1);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let g = seeded_graph(&mut r, 8, 64, 0.2)?;
        let d = r.gen_range(1..=4);
        let x = random_features(&mut r, g.n_nodes(), d);
        for basis in BasisKind::ALL {
            let k = r.gen_range(1..=8);
            let shifted = basis == BasisKind::Chebyshev && r.gen_bool(0.5);
            let mut tokens = compute_tokens(&g, &x, basis, k, shifted)?;
            if opts.inject_fault && case == 0 {
                let i = tokens.data().len() / 2;
                tokens.data_mut()[i] += 1e-3;
            }
            let dense = dense_tokens(&g, &x, &tokens)?;
            worst = worst.max(token_relative_error(&tokens, &dense));
        }
    }
    Ok(Measured::new(worst, TOKEN_REL_TOL))
}

fn token_linearity(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let g = seeded_graph(&mut r, 8, 40, 0.2)?;
        let n = g.n_nodes();
        let (x, y) = (random_features(&mut r, n, 2), random_features(&mut r, n, 2));
        let (a, b) = (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0));
        let mut comb = x.scale(a);
        comb.axpy(b, &y);
        for basis in [BasisKind::Monomial, BasisKind::Chebyshev, BasisKind::Bernstein] {
            let tc = compute_tokens(&g, &comb, basis, 6, false)?;
            let tx = compute_tokens(&g, &x, basis, 6, false)?;
            let ty = compute_tokens(&g, &y, basis, 6, false)?;
            for ((c, p), q) in tc.data().iter().zip(tx.data()).zip(ty.data()) {
                worst = worst.max((c - (a * p + b * q)).abs());
            }
        }
    }
    Ok(Measured::new(worst, THEOREM_TOL))
}

fn bernstein_partition(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let g = seeded_graph(&mut r, 8, 64, 0.2)?;
        let x = random_features(&mut r, g.n_nodes(), 2);
        for k in [2, 8, 16] {
            let t = compute_tokens(&g, &x, BasisKind::Bernstein, k, false)?;
            worst = worst.max(t.order_sum().max_abs_diff(&x));
        }
    }
    Ok(Measured::new(worst, PARTITION_TOL))
}

/// Largest deviation of each channel's token Gram matrix from the identity
/// over the orders before breakdown.
pub fn orthonormality_error(t: &TokenTensor) -> Result<f64> {
    let coeffs = t
        .opt_coeffs()
        .ok_or_else(|| Error::invalid("orthonormality needs optimal-basis tokens"))?;
    let mut worst: f64 = 0.0;
    for (c, rec) in coeffs.channels.iter().enumerate() {
        let live = rec.effective_len().min(t.order() + 1);
        for a in 0..live {
            for b in 0..live {
                let dot: f64 = (0..t.n_nodes()).map(|i| t.get(a, i, c) * t.get(b, i, c)).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
    }
    Ok(worst)
}

fn optimal_orthonormality(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 4);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let g = seeded_graph(&mut r, 16, 64, 0.2)?;
        let x = random_features(&mut r, g.n_nodes(), 3);
        let t = compute_tokens(&g, &x, BasisKind::Optimal, 10, false)?;
        worst = worst.max(orthonormality_error(&t)?);
    }
    Ok(Measured::new(worst, ORTHONORMAL_TOL))
}

fn spectrum_bounds(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let g = seeded_graph(&mut r, 8, 128, 0.2)?;
        let eig = laplacian_spectrum(&g)?;
        for &l in &eig.eigenvalues {
            worst = worst.max(-l).max(l - 2.0);
        }
    }
    // reported as the excursion beyond [0, 2]
    Ok(Measured::new(worst.max(0.0), SPECTRUM_SLACK))
}

fn eigen_reconstruction(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 6);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let g = seeded_graph(&mut r, 8, 96, 0.2)?;
        let l = normalized_laplacian(&g).to_dense();
        let eig = laplacian_spectrum(&g)?;
        worst = worst.max(eig.reconstruct().max_abs_diff(&l));
        let u = &eig.eigenvectors;
        let gram = u.transpose().matmul(u)?;
        worst = worst.max(gram.max_abs_diff(&DenseMatrix::identity(u.rows())));
    }
    Ok(Measured::new(worst, SPECTRAL_TOL))
}

fn spectral_consistency(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 7);
    let mut worst: f64 = 0.0;
    for _ in 0..6 {
        let g = seeded_graph(&mut r, 8, 128, 0.2)?;
        let eig = laplacian_spectrum(&g)?;
        let x = random_features(&mut r, g.n_nodes(), 2);
        for basis in [BasisKind::Monomial, BasisKind::Chebyshev, BasisKind::Bernstein] {
            let k = r.gen_range(1..=8);
            let alpha: Vec<f64> = (0..=k).map(|_| r.gen_range(-1.0..1.0)).collect();
            let t = compute_tokens(&g, &x, basis, k, false)?;
            let mut via_tokens = DenseMatrix::zeros(x.rows(), x.cols());
            for (j, a) in alpha.iter().enumerate() {
                via_tokens.axpy(*a, &t.order_matrix(j));
            }
            let exact = eig.filter(&FilterSpec::polynomial(basis, alpha), &x)?;
            worst = worst.max(via_tokens.max_abs_diff(&exact));
        }
    }
    Ok(Measured::new(worst, SPECTRAL_TOL))
}

fn random_attn(r: &mut ChaCha8Rng, activation: Activation, heads: usize) -> Result<(PolyAttnParams, Tensor)> {
    let per_head = r.gen_range(1..=3);
    let dim = heads * per_head;
    let order = r.gen_range(1..=6);
    let mut cfg = PolyAttnConfig::new(dim, order);
    cfg.heads = heads;
    cfg.activation = activation;
    cfg.r = r.gen_range(0.0..2.0);
    cfg.mlp_factor = [0.5, 1.0, 2.0][r.gen_range(0..3)];
    let mut p = PolyAttnParams::init(cfg, r)?;
    p.beta = uniform(r, p.beta.shape(), 1.0);
    let b = r.gen_range(1..=6);
    let x = uniform(r, &[b, order + 1, dim], 1.0);
    Ok((p, x))
}

fn theorem_identity(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 8);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let act = if case % 2 == 0 { Activation::Tanh } else { Activation::Softmax };
        let (p, x) = random_attn(&mut r, act, 1)?;
        worst = worst.max(theorem_gap(&p, &x)?);
    }
    Ok(Measured::new(worst, THEOREM_TOL))
}

/// Max gap between a single-head layer's order-summed output and
/// `Σ_j α_j h_j` with the extracted node coefficients.
pub fn theorem_gap(p: &PolyAttnParams, x: &Tensor) -> Result<f64> {
    let (out, scores) = polyattn_forward(p, x)?;
    let alpha = extract_node_coefficients(&scores);
    let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut worst: f64 = 0.0;
    for node in 0..b {
        let a = alpha.node(0, node);
        for c in 0..d {
            let lhs: f64 = (0..t).map(|k| out.data()[(node * t + k) * d + c]).sum();
            let rhs: f64 = (0..t).map(|j| a[j] * x.data()[(node * t + j) * d + c]).sum();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(worst)
}

/// Max gap between head `m`'s output channels and a single-head replay of
/// that head's parameter slice on the same channel group.
pub fn multihead_gap(p: &PolyAttnParams, x: &Tensor) -> Result<f64> {
    let (out, _) = multihead_polyattn_forward(p, x)?;
    let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let h = p.config.heads;
    let dv = d / h;
    let mut worst: f64 = 0.0;
    for m in 0..h {
        let group: Vec<f64> = x
            .data()
            .chunks_exact(d)
            .flat_map(|row| row[m * dv..(m + 1) * dv].iter().copied())
            .collect();
        let values = Tensor::new(&[b, t, dv], group)?;
        let (single, _) = polyattn_forward_with_values(&p.head_slice(m)?, x, &values)?;
        for (row, srow) in out.data().chunks_exact(d).zip(single.data().chunks_exact(dv)) {
            for (a, s) in row[m * dv..(m + 1) * dv].iter().zip(srow) {
                worst = worst.max((a - s).abs());
            }
        }
    }
    Ok(worst)
}

fn multihead_groups(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 9);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let heads = if case % 2 == 0 { 2 } else { 4 };
        let (p, x) = random_attn(&mut r, Activation::Tanh, heads)?;
        worst = worst.max(multihead_gap(&p, &x)?);
    }
    Ok(Measured::new(worst, MULTIHEAD_TOL))
}

/// Number of (node, order) pairs whose coefficient sign differs from the
/// sign of the shared bias weight.
pub fn softmax_sign_violations(p: &PolyAttnParams, x: &Tensor) -> Result<usize> {
    let (_, scores) = polyattn_forward(p, x)?;
    let alpha = extract_node_coefficients(&scores);
    let t = p.config.tokens();
    let mut bad = 0;
    for node in 0..alpha.batch() {
        for (j, a) in alpha.node(0, node).iter().enumerate() {
            let beta = p.beta.data()[j];
            if a.signum() != beta.signum() || *a == 0.0 {
                bad += 1;
            }
        }
        debug_assert_eq!(alpha.node(0, node).len(), t);
    }
    Ok(bad)
}

fn softmax_sign_lock(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 10);
    let mut bad = 0;
    for _ in 0..50 {
        let (mut p, x) = random_attn(&mut r, Activation::Softmax, 1)?;
        for b in p.beta.data_mut() {
            if b.abs() < 1e-3 {
                *b = 0.5;
            }
        }
        bad += softmax_sign_violations(&p, &x)?;
    }
    Ok(Measured::new(bad as f64, 0.0))
}

fn tanh_sign_flip(_: &VerifyOptions) -> Result<Measured> {
    let (p, x) = tanh_sign_fixture();
    let (_, scores) = polyattn_forward(&p, &x)?;
    let a = extract_node_coefficients(&scores);
    let (a0, a1) = (a.node(0, 0)[0], a.node(0, 1)[0]);
    let flipped = a0 > 0.0 && a1 < 0.0;
    Ok(Measured::new(if flipped { 0.0 } else { 1.0 }, 0.0))
}

fn saturated_unified(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 11);
    let alpha: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
    let p = saturated_fixture(&alpha, 5)?;
    let x = uniform(&mut r, &[6, 4, 5], 1.0);
    let (out, _) = polyattn_forward(&p, &x)?;
    let mut worst: f64 = 0.0;
    for node in 0..6 {
        for c in 0..5 {
            let lhs: f64 = (0..4).map(|k| out.data()[(node * 4 + k) * 5 + c]).sum();
            let rhs: f64 = (0..4).map(|j| alpha[j] * x.data()[(node * 4 + j) * 5 + c]).sum();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(Measured::new(worst, THEOREM_TOL))
}

/// Values bounded away from zero so ReLU kinks stay out of the stencil.
fn off_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = r.gen_range(0.2..1.0);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("at most three axes")
}

type Primitive = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

fn primitives(r: &mut ChaCha8Rng) -> Vec<Primitive> {
    let mut v: Vec<Primitive> = Vec::new();
    let target = off_zero(r, &[2, 3, 4]);
    // weights a scalar reduction so every output entry gets a distinct gradient
    let w24 = off_zero(r, &[2, 3, 4]);
    fn weigh(t: &mut Tape, x: Var, w: &Tensor) -> Result<Var> {
        let shape = t.value(x).shape().to_vec();
        let wv = t.constant(w.reshaped(&shape)?);
        let h = t.hadamard(x, wv)?;
        t.sum_all(h)
    }
    let w = w24.clone();
    v.push(("matmul", vec![off_zero(r, &[2, 3, 5]), off_zero(r, &[5, 4])], Box::new(move |t, p| {
        let y = t.matmul(p[0], p[1])?;
        weigh(t, y, &w)
    })));
    let w = w24.clone();
    v.push(("bmm", vec![off_zero(r, &[2, 3, 5]), off_zero(r, &[2, 5, 4])], Box::new(move |t, p| {
        let y = t.bmm(p[0], p[1])?;
        weigh(t, y, &w)
    })));
    let w = off_zero(r, &[2, 3, 3]);
    v.push(("bmm_nt", vec![off_zero(r, &[2, 3, 4]), off_zero(r, &[2, 3, 4])], Box::new(move |t, p| {
        let y = t.bmm_nt(p[0], p[1])?;
        weigh(t, y, &w)
    })));
    let w = w24.clone();
    v.push(("slot_matmul", vec![off_zero(r, &[2, 3, 5]), off_zero(r, &[3, 5, 4])], Box::new(move |t, p| {
        let y = t.slot_matmul(p[0], p[1])?;
        weigh(t, y, &w)
    })));
    let w = w24.clone();
    v.push(("add-broadcast", vec![off_zero(r, &[2, 3, 4]), off_zero(r, &[3, 4])], Box::new(move |t, p| {
        let y = t.add(p[0], p[1])?;
        weigh(t, y, &w)
    })));
    let w = w24.clone();
    v.push(("sub", vec![off_zero(r, &[2, 3, 4]), off_zero(r, &[4])], Box::new(move |t, p| {
        let y = t.sub(p[0], p[1])?;
        weigh(t, y, &w)
    })));
    let w = w24.clone();
    v.push(("hadamard-broadcast", vec![off_zero(r, &[2, 3, 4]), off_zero(r, &[3, 1])], Box::new(move |t, p| {
        let y = t.hadamard(p[0], p[1])?;
        weigh(t, y, &w)
    })));
    let w = off_zero(r, &[3, 4]);
    v.push(("broadcast_row", vec![off_zero(r, &[3, 4]), off_zero(r, &[4])], Box::new(move |t, p| {
        let y = t.broadcast_row(p[0], p[1])?;
        weigh(t, y, &w)
    })));
    let w = w24.clone();
    v.push(("scale", vec![off_zero(r, &[2, 3, 4])], Box::new(move |t, p| {
        let y = t.scale(p[0], -1.7)?;
        weigh(t, y, &w)
    })));
    let w = w24.clone();
    v.push(("tanh", vec![off_zero(r, &[2, 3, 4])], Box::new(move |t, p| {
        let y = t.tanh(p[0])?;
        weigh(t, y, &w)
    })));
    let w = w24.clone();
    v.push(("relu", vec![off_zero(r, &[2, 3, 4])], Box::new(move |t, p| {
        let y = t.relu(p[0])?;
        weigh(t, y, &w)
    })));
    let w = w24.clone();
    v.push(("softmax_rows", vec![off_zero(r, &[2, 3, 4])], Box::new(move |t, p| {
        let y = t.softmax_rows(p[0])?;
        weigh(t, y, &w)
    })));
    let w = w24.clone();
    v.push(("normalize_rows", vec![off_zero(r, &[2, 3, 4])], Box::new(move |t, p| {
        let y = t.normalize_rows(p[0], 1e-5)?;
        weigh(t, y, &w)
    })));
    let w = w24.clone();
    v.push(("layer_norm_rows", vec![off_zero(r, &[2, 3, 4]), off_zero(r, &[4]), off_zero(r, &[4])], Box::new(move |t, p| {
        let y = t.layer_norm_rows(p[0], p[1], p[2], 1e-5)?;
        weigh(t, y, &w)
    })));
    let w = off_zero(r, &[2, 4]);
    v.push(("sum_axis", vec![off_zero(r, &[2, 3, 4])], Box::new(move |t, p| {
        let y = t.sum_axis(p[0], 1)?;
        weigh(t, y, &w)
    })));
    let w = off_zero(r, &[2, 4]);
    v.push(("sum_rows", vec![off_zero(r, &[2, 3, 4])], Box::new(move |t, p| {
        let y = t.sum_rows(p[0])?;
        weigh(t, y, &w)
    })));
    v.push(("sum_all", vec![off_zero(r, &[2, 3, 4])], Box::new(|t, p| {
        let y = t.tanh(p[0])?;
        t.sum_all(y)
    })));
    let w = off_zero(r, &[2, 3, 2]);
    v.push(("slice_cols", vec![off_zero(r, &[2, 3, 4])], Box::new(move |t, p| {
        let y = t.slice_cols(p[0], 1, 2)?;
        weigh(t, y, &w)
    })));
    let w = off_zero(r, &[2, 3, 5]);
    v.push(("concat_cols", vec![off_zero(r, &[2, 3, 2]), off_zero(r, &[2, 3, 3])], Box::new(move |t, p| {
        let y = t.concat_cols(&[p[0], p[1]])?;
        weigh(t, y, &w)
    })));
    let w = off_zero(r, &[6, 4]);
    v.push(("reshape", vec![off_zero(r, &[2, 3, 4])], Box::new(move |t, p| {
        let y = t.reshape(p[0], &[6, 4])?;
        weigh(t, y, &w)
    })));
    v.push(("mse_loss", vec![off_zero(r, &[2, 3, 4])], Box::new(move |t, p| t.mse_loss(p[0], &target))));
    v.push(("cross_entropy", vec![off_zero(r, &[5, 3])], Box::new(|t, p| t.cross_entropy(p[0], &[0, 2, 1, 1, 0]))));
    v
}

fn grad_primitives(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 12);
    let mut worst: f64 = 0.0;
    for (name, params, f) in primitives(&mut r) {
        let rep = grad_check(&params, GRAD_EPS, f).map_err(|e| Error::Autodiff(format!("{name}: {e}")))?;
        if rep.max_rel_error > GRAD_REL_TOL {
            return Err(Error::Autodiff(format!(
                "{name}: relative error {:.3e} at {:?}",
                rep.max_rel_error, rep.worst
            )));
        }
        worst = worst.max(rep.max_rel_error);
    }
    Ok(Measured::new(worst, GRAD_REL_TOL))
}

fn grad_polyattn(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 13);
    let mut worst: f64 = 0.0;
    for (act, heads) in [(Activation::Tanh, 1), (Activation::Softmax, 1), (Activation::Tanh, 2)] {
        let mut cfg = PolyAttnConfig::new(4, 3);
        cfg.activation = act;
        cfg.heads = heads;
        cfg.r = 0.7;
        let p = PolyAttnParams::init(cfg.clone(), &mut r)?;
        let x = uniform(&mut r, &[3, 4, 4], 1.0);
        let target = uniform(&mut r, &[3, 4, 4], 1.0);
        let mut params: Vec<Tensor> = p.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
        params.push(x);
        let rep = grad_check(&params, GRAD_EPS, |tape, vars| {
            let n = vars.len();
            let pv = PolyAttnVars::bind(&mut vars[..n - 1].iter().copied())?;
            let out = polyattn_tape(tape, &cfg, &pv, vars[n - 1], None)?;
            tape.mse_loss(out.tokens, &target)
        })?;
        worst = worst.max(rep.max_rel_error);
    }
    Ok(Measured::new(worst, GRAD_REL_TOL))
}

/// The two-block classifier used by the gradient check.
pub fn gradcheck_model(seed: u64) -> Result<PolyFormer> {
    PolyFormer::init(ModelConfig {
        basis: BasisKind::Chebyshev,
        cheb_shifted: false,
        order: 3,
        input_dim: 3,
        hidden: 4,
        blocks: 2,
        heads: 2,
        ffn_dim: 5,
        classes: 3,
        readout_dim: 4,
        activation: Activation::Tanh,
        r: 0.5,
        mlp_factor: 1.0,
        dropout: 0.0,
        seed,
    })
}

fn grad_polyformer(opts: &VerifyOptions) -> Result<Measured> {
    let mut r = rng(opts, 14);
    let model = gradcheck_model(opts.seed)?;
    let x = uniform(&mut r, &[5, 4, 3], 1.0);
    let labels = [0, 2, 1, 1, 0];
    let params: Vec<Tensor> = model.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
    let rep = grad_check(&params, GRAD_EPS, |tape, vars| {
        let xv = tape.constant(x.clone());
        let logits = model.forward_tape(tape, vars, xv, None)?;
        tape.cross_entropy(logits, &labels)
    })?;
    Ok(Measured::new(rep.max_rel_error, GRAD_REL_TOL))
}
