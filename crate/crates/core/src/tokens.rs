//! Polynomial node tokens `H_k = g_k(P) X` computed by sparse recursions.
//!
//! Token `k` of node `i` is row `i` of `H_k`. The whole tensor is computed
//! once per graph and basis and then reused by every training epoch.

use crate::basis::{BasisKind, ChannelRecurrence, OptBasisCoeffs, MAX_BERNSTEIN_ORDER};
use crate::error::{Error, Result};
use crate::graph::{normalized_adjacency, normalized_laplacian, Graph};
use crate::matrix::{spmm, DenseMatrix, SparseMatrix};

/// Threshold on `β_k` below which the optimal-basis recurrence is treated
/// as broken down.
pub const BREAKDOWN_TOL: f64 = 1e-12;

/// `K + 1` stacked `N × d` token matrices, stored `[k][node][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTensor {
    basis: BasisKind,
    cheb_shifted: bool,
    n_nodes: usize,
    order: usize,
    dim: usize,
    data: Vec<f64>,
    opt: Option<OptBasisCoeffs>,
    warnings: Vec<String>,
}

impl TokenTensor {
    pub(crate) fn from_parts(
        basis: BasisKind,
        cheb_shifted: bool,
        n_nodes: usize,
        order: usize,
        dim: usize,
        data: Vec<f64>,
        opt: Option<OptBasisCoeffs>,
    ) -> Result<Self> {
        let expected = (order + 1)
            .checked_mul(n_nodes)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| Error::Format("token dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::shape(
                "TokenTensor",
                format!("expected {expected} values, got {}", data.len()),
            ));
        }
        if basis == BasisKind::Optimal
            && opt.as_ref().map(|o| o.channels.len()) != Some(dim)
        {
            return Err(Error::shape(
                "TokenTensor",
                "optimal basis tokens need one recurrence per channel",
            ));
        }
        Ok(Self {
            basis,
            cheb_shifted,
            n_nodes,
            order,
            dim,
            data,
            opt,
            warnings: Vec::new(),
        })
    }

    fn from_orders(
        basis: BasisKind,
        cheb_shifted: bool,
        orders: Vec<DenseMatrix>,
        opt: Option<OptBasisCoeffs>,
    ) -> Self {
        let (n, d) = orders[0].shape();
        let order = orders.len() - 1;
        let mut data = Vec::with_capacity(orders.len() * n * d);
        for h in orders {
            data.extend_from_slice(h.as_slice());
        }
        Self {
            basis,
            cheb_shifted,
            n_nodes: n,
            order,
            dim: d,
            data,
            opt,
            warnings: Vec::new(),
        }
    }

    pub fn basis(&self) -> BasisKind {
        self.basis
    }

    pub fn cheb_shifted(&self) -> bool {
        self.cheb_shifted
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Truncation order `K`; there are `K + 1` tokens per node.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable token values; the basis metadata is left untouched.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn opt_coeffs(&self) -> Option<&OptBasisCoeffs> {
        self.opt.as_ref()
    }

    /// Non-fatal conditions hit while building (zero channels, breakdowns).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    #[inline]
    pub fn get(&self, k: usize, node: usize, channel: usize) -> f64 {
        self.data[(k * self.n_nodes + node) * self.dim + channel]
    }

    /// The `N × d` matrix `H_k`.
    pub fn order_matrix(&self, k: usize) -> DenseMatrix {
        let span = self.n_nodes * self.dim;
        DenseMatrix::from_vec(
            self.n_nodes,
            self.dim,
            self.data[k * span..(k + 1) * span].to_vec(),
        )
        .expect("slice length matches")
    }

    /// The `(K+1) × d` token matrix of one node.
    pub fn node_tokens(&self, node: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.order + 1, self.dim);
        for k in 0..=self.order {
            let start = (k * self.n_nodes + node) * self.dim;
            m.row_mut(k).copy_from_slice(&self.data[start..start + self.dim]);
        }
        m
    }

    /// Gathers nodes into a `[B, K+1, d]` row-major buffer.
    pub fn gather(&self, nodes: &[usize]) -> Vec<f64> {
        let t = self.order + 1;
        let mut out = Vec::with_capacity(nodes.len() * t * self.dim);
        for &node in nodes {
            for k in 0..t {
                let start = (k * self.n_nodes + node) * self.dim;
                out.extend_from_slice(&self.data[start..start + self.dim]);
            }
        }
        out
    }

    /// `Σ_k H_k`.
    pub fn order_sum(&self) -> DenseMatrix {
        let mut s = DenseMatrix::zeros(self.n_nodes, self.dim);
        for k in 0..=self.order {
            s.axpy(1.0, &self.order_matrix(k));
        }
        s
    }
}

fn check_rows(op: &SparseMatrix, x: &DenseMatrix, name: &'static str) -> Result<()> {
    if op.rows() != op.cols() || op.cols() != x.rows() {
        return Err(Error::shape(
            name,
            format!("operator {}x{}, features {:?}", op.rows(), op.cols(), x.shape()),
        ));
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{name}: non-finite input features")));
    }
    Ok(())
}

/// `H_0 = X`, `H_k = Â H_{k-1}`.
pub fn monomial_tokens(a_hat: &SparseMatrix, x: &DenseMatrix, k_max: usize) -> Result<TokenTensor> {
    check_rows(a_hat, x, "monomial_tokens")?;
    let mut orders = vec![x.clone()];
    for k in 1..=k_max {
        let next = spmm(a_hat, &orders[k - 1])?;
        orders.push(next);
    }
    Ok(TokenTensor::from_orders(BasisKind::Monomial, false, orders, None))
}

/// `H_0 = X`, `H_1 = L̂X`, `H_k = 2 L̂ H_{k-1} - H_{k-2}`. With `shifted` the
/// recurrence runs on `L̂ - I` instead.
pub fn chebyshev_tokens(
    l_hat: &SparseMatrix,
    x: &DenseMatrix,
    k_max: usize,
    shifted: bool,
) -> Result<TokenTensor> {
    check_rows(l_hat, x, "chebyshev_tokens")?;
    let op = if shifted {
        l_hat.shifted(1.0, -1.0)?
    } else {
        l_hat.clone()
    };
    let mut orders = vec![x.clone()];
    if k_max >= 1 {
        orders.push(spmm(&op, x)?);
    }
    for k in 2..=k_max {
        let mut next = spmm(&op, &orders[k - 1])?.scale(2.0);
        next.axpy(-1.0, &orders[k - 2]);
        orders.push(next);
    }
    Ok(TokenTensor::from_orders(BasisKind::Chebyshev, shifted, orders, None))
}

/// `H_k = 2^{-K} C(K,k) (2I - L̂)^{K-k} L̂^k X`.
///
/// Built by raising the degree one step at a time: with `P_k = (L̂/2) H_k`,
/// degree `n` has `H_k ← H_k - P_k + P_{k-1}`. That is `K(K+1)/2` sparse
/// products, and every intermediate stays bounded by `X` in the spectral
/// norm. Forming `L̂^k X` first and then applying `2I - L̂` would
/// amplify rounding by up to `C(K, k)`.
pub fn bernstein_tokens(l_hat: &SparseMatrix, x: &DenseMatrix, k_max: usize) -> Result<TokenTensor> {
    check_rows(l_hat, x, "bernstein_tokens")?;
    if k_max > MAX_BERNSTEIN_ORDER {
        return Err(Error::invalid(format!(
            "Bernstein order {k_max} exceeds {MAX_BERNSTEIN_ORDER}"
        )));
    }
    let half = l_hat.shifted(0.5, 0.0)?;
    let mut orders = vec![x.clone()];
    for _ in 0..k_max {
        let p: Vec<DenseMatrix> = orders.iter().map(|h| spmm(&half, h)).collect::<Result<_>>()?;
        let mut next = Vec::with_capacity(orders.len() + 1);
        for k in 0..=orders.len() {
            let mut h = if k < orders.len() { orders[k].sub(&p[k])? } else { DenseMatrix::zeros(x.rows(), x.cols()) };
            if k > 0 {
                h.axpy(1.0, &p[k - 1]);
            }
            next.push(h);
        }
        orders = next;
    }
    Ok(TokenTensor::from_orders(BasisKind::Bernstein, false, orders, None))
}

/// Signal-adapted orthonormal basis: per channel, the Lanczos vectors of `Â`
/// started from the normalized channel signal.
///
/// A zero channel yields zero tokens; a recurrence whose `β_k` drops below
/// [`BREAKDOWN_TOL`] zero-pads the remaining orders. Both are recorded as
/// warnings and in the returned coefficients.
pub fn optimal_tokens(a_hat: &SparseMatrix, x: &DenseMatrix, k_max: usize) -> Result<TokenTensor> {
    check_rows(a_hat, x, "optimal_tokens")?;
    let (n, d) = x.shape();
    let mut orders = vec![DenseMatrix::zeros(n, d); k_max + 1];
    let mut channels = Vec::with_capacity(d);
    let mut warnings = Vec::new();

    for j in 0..d {
        let xj = x.column(j);
        let norm = xj.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut gamma = vec![0.0; k_max];
        let mut beta = vec![0.0; k_max + 1];
        if norm == 0.0 {
            warnings.push(format!("channel {j} is identically zero; its tokens are zero"));
            channels.push(ChannelRecurrence {
                gamma,
                beta,
                breakdown: Some(0),
            });
            continue;
        }
        beta[0] = norm;
        let mut prev = DenseMatrix::zeros(n, 1);
        let mut cur = DenseMatrix::column_vector(&xj).scale(1.0 / norm);
        orders[0].set_column(j, cur.as_slice());
        let mut breakdown = None;
        for k in 1..=k_max {
            let mut w = spmm(a_hat, &cur)?;
            let g = dot(w.as_slice(), cur.as_slice());
            w.axpy(-g, &cur);
            w.axpy(-beta[k - 1], &prev);
            gamma[k - 1] = g;
            let b = w.frobenius_norm();
            if b < BREAKDOWN_TOL {
                breakdown = Some(k);
                warnings.push(format!(
                    "channel {j}: recurrence broke down at order {k}; higher orders are zero"
                ));
                break;
            }
            beta[k] = b;
            let next = w.scale(1.0 / b);
            orders[k].set_column(j, next.as_slice());
            prev = cur;
            cur = next;
        }
        channels.push(ChannelRecurrence {
            gamma,
            beta,
            breakdown,
        });
    }
    let mut t = TokenTensor::from_orders(
        BasisKind::Optimal,
        false,
        orders,
        Some(OptBasisCoeffs { channels }),
    );
    t.warnings = warnings;
    Ok(t)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds the operator a basis needs and computes its tokens.
pub fn compute_tokens(
    g: &Graph,
    x: &DenseMatrix,
    basis: BasisKind,
    k_max: usize,
    cheb_shifted: bool,
) -> Result<TokenTensor> {
    if x.rows() != g.n_nodes() {
        return Err(Error::shape(
            "compute_tokens",
            format!("{} feature rows for {} nodes", x.rows(), g.n_nodes()),
        ));
    }
    match basis {
        BasisKind::Monomial => monomial_tokens(&normalized_adjacency(g), x, k_max),
        BasisKind::Optimal => optimal_tokens(&normalized_adjacency(g), x, k_max),
        BasisKind::Chebyshev => chebyshev_tokens(&normalized_laplacian(g), x, k_max, cheb_shifted),
        BasisKind::Bernstein => bernstein_tokens(&normalized_laplacian(g), x, k_max),
    }
}
