//! Polynomial bases for graph filters and their scalar responses.
//!
//! Monomial and optimal bases act on the normalized adjacency `Â`, Bernstein
//! and Chebyshev on the normalized Laplacian `L̂ = I - Â`. The scalar
//! response of a basis is expressed in the Laplacian eigenvalue `λ ∈ [0, 2]`,
//! so adjacency-based bases are evaluated at `μ = 1 - λ`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest order accepted for Bernstein tokens; beyond this the binomial
/// weights stop being exactly representable.
pub const MAX_BERNSTEIN_ORDER: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    #[serde(alias = "mono")]
    Monomial,
    #[serde(alias = "bern")]
    Bernstein,
    #[serde(alias = "cheb")]
    Chebyshev,
    #[serde(alias = "opt")]
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Adjacency,
    Laplacian,
}

impl BasisKind {
    pub const ALL: [BasisKind; 4] = [
        BasisKind::Monomial,
        BasisKind::Bernstein,
        BasisKind::Chebyshev,
        BasisKind::Optimal,
    ];

    /// Identifier used in the token cache header.
    pub fn id(self) -> u32 {
        match self {
            BasisKind::Monomial => 0,
            BasisKind::Bernstein => 1,
            BasisKind::Chebyshev => 2,
            BasisKind::Optimal => 3,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.id() == id)
    }

    pub fn operator(self) -> Operator {
        match self {
            BasisKind::Monomial | BasisKind::Optimal => Operator::Adjacency,
            BasisKind::Bernstein | BasisKind::Chebyshev => Operator::Laplacian,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            BasisKind::Monomial => "mono",
            BasisKind::Bernstein => "bern",
            BasisKind::Chebyshev => "cheb",
            BasisKind::Optimal => "opt",
        }
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mono" | "monomial" => Ok(BasisKind::Monomial),
            "bern" | "bernstein" => Ok(BasisKind::Bernstein),
            "cheb" | "chebyshev" => Ok(BasisKind::Chebyshev),
            "opt" | "optimal" => Ok(BasisKind::Optimal),
            other => Err(Error::invalid(format!("unknown basis {other:?}"))),
        }
    }
}

/// Three-term recurrence coefficients of the optimal basis for one channel.
///
/// Indexing follows `β_k v_k = (Â - γ_{k-1} I) v_{k-1} - β_{k-1} v_{k-2}`
/// with `v_{-1} = 0` and `v_0 = x / β_0`, so `β_0 = ‖x‖`. `gamma` has `K`
/// entries and `beta` has `K + 1`. Orders at or beyond `breakdown` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRecurrence {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub breakdown: Option<usize>,
}

impl ChannelRecurrence {
    pub fn order(&self) -> usize {
        self.gamma.len()
    }

    /// Number of non-zero basis vectors this channel produced.
    pub fn effective_len(&self) -> usize {
        self.breakdown.unwrap_or(self.gamma.len() + 1)
    }
}

/// Per-channel recurrence coefficients for an optimal-basis token tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptBasisCoeffs {
    pub channels: Vec<ChannelRecurrence>,
}

/// Scalar values `t_0(λ) .. t_K(λ)` of a basis at Laplacian eigenvalue `λ`.
///
/// `recurrence` is required for [`BasisKind::Optimal`] and ignored otherwise.
pub fn scalar_basis(
    basis: BasisKind,
    k_max: usize,
    lambda: f64,
    cheb_shifted: bool,
    recurrence: Option<&ChannelRecurrence>,
) -> Result<Vec<f64>> {
    let mut t = vec![0.0; k_max + 1];
    match basis {
        BasisKind::Monomial => {
            let mu = 1.0 - lambda;
            t[0] = 1.0;
            for k in 1..=k_max {
                t[k] = mu * t[k - 1];
            }
        }
        BasisKind::Chebyshev => {
            let y = if cheb_shifted { lambda - 1.0 } else { lambda };
            t[0] = 1.0;
            if k_max >= 1 {
                t[1] = y;
            }
            for k in 2..=k_max {
                t[k] = 2.0 * y * t[k - 1] - t[k - 2];
            }
        }
        BasisKind::Bernstein => {
            if k_max > MAX_BERNSTEIN_ORDER {
                return Err(Error::invalid(format!(
                    "Bernstein order {k_max} exceeds {MAX_BERNSTEIN_ORDER}"
                )));
            }
            let scale = 0.5f64.powi(k_max as i32);
            for (k, tk) in t.iter_mut().enumerate() {
                *tk = scale
                    * binomial(k_max, k)
                    * (2.0 - lambda).powi((k_max - k) as i32)
                    * lambda.powi(k as i32);
            }
        }
        BasisKind::Optimal => {
            let rec = recurrence.ok_or_else(|| {
                Error::invalid("optimal basis response needs recurrence coefficients")
            })?;
            if rec.order() < k_max {
                return Err(Error::invalid(format!(
                    "recurrence has order {} but {k_max} was requested",
                    rec.order()
                )));
            }
            let mu = 1.0 - lambda;
            let live = rec.effective_len().min(k_max + 1);
            if live == 0 {
                return Ok(t);
            }
            t[0] = 1.0 / rec.beta[0];
            for k in 1..live {
                let prev2 = if k >= 2 { rec.beta[k - 1] * t[k - 2] } else { 0.0 };
                t[k] = ((mu - rec.gamma[k - 1]) * t[k - 1] - prev2) / rec.beta[k];
            }
        }
    }
    Ok(t)
}

/// `n choose k` as an exact-as-possible `f64`.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as f64
}
