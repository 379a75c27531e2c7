//! Dense reference machinery: a cyclic Jacobi eigensolver, exact spectral
//! filtering `U h(Λ) Uᵀ X`, and dense evaluation of basis polynomials.
//!
//! Nothing here exploits sparsity. These routines are the ground truth the
//! sparse token recursions are checked against.

use crate::basis::{binomial, BasisKind, OptBasisCoeffs, MAX_BERNSTEIN_ORDER};
use crate::error::{Error, Result};
use crate::filter::FilterSpec;
use crate::graph::{normalized_laplacian, Graph};
use crate::matrix::DenseMatrix;

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-11;

/// `A = U diag(λ) Uᵀ` with eigenvalues ascending and column `k` of `U`
/// paired with `eigenvalues[k]`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DenseMatrix,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U diag(λ) Uᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        self.spectral_matrix(|l| l)
    }

    /// `U diag(f(λ)) Uᵀ`.
    pub fn spectral_matrix(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let n = self.dim();
        let u = &self.eigenvectors;
        let scaled: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = (0..n).map(|k| u.get(i, k) * scaled[k] * u.get(j, k)).sum();
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        out
    }

    /// `U h(Λ) Uᵀ x` without forming the N×N filter matrix.
    pub fn filter(&self, h: &FilterSpec, x: &DenseMatrix) -> Result<DenseMatrix> {
        let n = self.dim();
        if x.rows() != n {
            return Err(Error::shape(
                "exact_filter",
                format!("signal has {} rows, graph has {n} nodes", x.rows()),
            ));
        }
        let response = self
            .eigenvalues
            .iter()
            .map(|&l| h.eval(l))
            .collect::<Result<Vec<f64>>>()?;
        let ut = self.eigenvectors.transpose();
        // spectral coefficients Uᵀx, scaled per eigenvalue
        let mut coef = ut.matmul(x)?;
        for (k, r) in response.iter().enumerate() {
            for v in coef.row_mut(k) {
                *v *= r;
            }
        }
        self.eigenvectors.matmul(&coef)
    }
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Sweeps rotate every off-diagonal pair until the off-diagonal Frobenius
/// norm falls below `1e-11 ‖A‖_F`. Each eigenvector's largest-magnitude
/// component is made non-negative.
pub fn jacobi_eigh(a: &DenseMatrix) -> Result<EigenDecomposition> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape("jacobi_eigh", format!("{:?} is not square", a.shape())));
    }
    let asym = a.asymmetry();
    if asym > 1e-12 * a.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in eigensolver input".into()));
    }

    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    // rows of `vt` are the eigenvectors, kept contiguous for the rotation updates
    let mut vt = DenseMatrix::identity(n);
    let target = OFF_DIAGONAL_TOL * a.frobenius_norm();

    let mut converged = false;
    let mut residual = off_diagonal_norm(&m);
    for sweep in 0..MAX_SWEEPS {
        if residual <= target {
            converged = true;
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                // past the first few sweeps, drop entries that no longer move the diagonal
                if sweep > 3 && app + 100.0 * apq.abs() == app && aqq + 100.0 * apq.abs() == aqq {
                    m.set(p, q, 0.0);
                    m.set(q, p, 0.0);
                    continue;
                }
                rotate(&mut m, &mut vt, p, q);
            }
        }
        residual = off_diagonal_norm(&m);
    }
    if !converged && residual > target {
        return Err(Error::NoConvergence {
            sweeps: MAX_SWEEPS,
            residual,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).total_cmp(&m.get(j, j)).then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m.get(i, i)).collect();
    let mut eigenvectors = DenseMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let v = vt.row(src);
        let mut pivot = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (i, x) in v.iter().enumerate() {
            eigenvectors.set(i, col, sign * x);
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(m: &DenseMatrix) -> f64 {
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for (j, v) in m.row(i).iter().enumerate() {
            if i != j {
                s += v * v;
            }
        }
    }
    s.sqrt()
}

/// Applies the rotation annihilating `m[p][q]`.
fn rotate(m: &mut DenseMatrix, vt: &mut DenseMatrix, p: usize, q: usize) {
    let n = m.rows();
    let apq = m.get(p, q);
    let app = m.get(p, p);
    let aqq = m.get(q, q);
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let data = m.as_mut_slice();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = data[p * n + k];
        let akq = data[q * n + k];
        let np = c * akp - s * akq;
        let nq = s * akp + c * akq;
        data[p * n + k] = np;
        data[k * n + p] = np;
        data[q * n + k] = nq;
        data[k * n + q] = nq;
    }
    data[p * n + p] = app - t * apq;
    data[q * n + q] = aqq + t * apq;
    data[p * n + q] = 0.0;
    data[q * n + p] = 0.0;

    let v = vt.as_mut_slice();
    let (head, tail) = v.split_at_mut(q * n);
    let rp = &mut head[p * n..(p + 1) * n];
    let rq = &mut tail[..n];
    for (xp, xq) in rp.iter_mut().zip(rq.iter_mut()) {
        let a = *xp;
        let b = *xq;
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

/// Eigendecomposition of the dense normalized Laplacian of `g`.
pub fn laplacian_spectrum(g: &Graph) -> Result<EigenDecomposition> {
    jacobi_eigh(&normalized_laplacian(g).to_dense())
}

/// `U h(Λ) Uᵀ x` for the normalized Laplacian of `g`.
pub fn exact_filter(g: &Graph, h: &FilterSpec, x: &DenseMatrix) -> Result<DenseMatrix> {
    laplacian_spectrum(g)?.filter(h, x)
}

/// `g_0(p) x, …, g_K(p) x` with every `g_k(p)` formed as a dense matrix
/// by explicit products. Not available for the optimal basis, whose
/// polynomials depend on the signal; see [`dense_optimal_terms`].
pub fn dense_basis_terms(
    p: &DenseMatrix,
    basis: BasisKind,
    k_max: usize,
    x: &DenseMatrix,
    cheb_shifted: bool,
) -> Result<Vec<DenseMatrix>> {
    let n = p.rows();
    if p.cols() != n || x.rows() != n {
        return Err(Error::shape(
            "dense_poly_apply",
            format!("operator {:?}, signal {:?}", p.shape(), x.shape()),
        ));
    }
    let eye = DenseMatrix::identity(n);
    let mats: Vec<DenseMatrix> = match basis {
        BasisKind::Monomial => {
            let mut out = vec![eye];
            for k in 1..=k_max {
                out.push(p.matmul(&out[k - 1])?);
            }
            out
        }
        BasisKind::Chebyshev => {
            let op = if cheb_shifted { p.sub(&eye)? } else { p.clone() };
            let mut out = vec![eye];
            if k_max >= 1 {
                out.push(op.clone());
            }
            for k in 2..=k_max {
                let next = op.matmul(&out[k - 1])?.scale(2.0).sub(&out[k - 2])?;
                out.push(next);
            }
            out
        }
        BasisKind::Bernstein => {
            if k_max > MAX_BERNSTEIN_ORDER {
                return Err(Error::invalid(format!(
                    "Bernstein order {k_max} exceeds {MAX_BERNSTEIN_ORDER}"
                )));
            }
            let comp = eye.scale(2.0).sub(p)?;
            let powers = |m: &DenseMatrix| -> Result<Vec<DenseMatrix>> {
                let mut pw = vec![DenseMatrix::identity(n)];
                for k in 1..=k_max {
                    pw.push(m.matmul(&pw[k - 1])?);
                }
                Ok(pw)
            };
            let lp = powers(p)?;
            let cp = powers(&comp)?;
            let scale = 0.5f64.powi(k_max as i32);
            (0..=k_max)
                .map(|k| {
                    Ok(cp[k_max - k]
                        .matmul(&lp[k])?
                        .scale(scale * binomial(k_max, k)))
                })
                .collect::<Result<_>>()?
        }
        BasisKind::Optimal => {
            return Err(Error::invalid(
                "optimal basis depends on the signal; use dense_optimal_terms",
            ))
        }
    };
    mats.iter().map(|g| g.matmul(x)).collect()
}

/// Dense evaluation of the optimal-basis recurrence with given coefficients:
/// per channel `j`, `G_0 = I / β_0` and
/// `β_k G_k = (Â - γ_{k-1} I) G_{k-1} - β_{k-1} G_{k-2}`, returning `G_k x_j`.
pub fn dense_optimal_terms(
    a_hat: &DenseMatrix,
    x: &DenseMatrix,
    coeffs: &OptBasisCoeffs,
) -> Result<Vec<DenseMatrix>> {
    let n = a_hat.rows();
    if a_hat.cols() != n || x.rows() != n || coeffs.channels.len() != x.cols() {
        return Err(Error::shape(
            "dense_optimal_terms",
            format!(
                "operator {:?}, signal {:?}, {} channel recurrences",
                a_hat.shape(),
                x.shape(),
                coeffs.channels.len()
            ),
        ));
    }
    let k_max = coeffs.channels.first().map_or(0, |c| c.order());
    let mut out = vec![DenseMatrix::zeros(n, x.cols()); k_max + 1];
    let eye = DenseMatrix::identity(n);
    for (j, rec) in coeffs.channels.iter().enumerate() {
        let live = rec.effective_len().min(k_max + 1);
        if live == 0 {
            continue;
        }
        let xj = DenseMatrix::column_vector(&x.column(j));
        let mut mats: Vec<DenseMatrix> = vec![eye.scale(1.0 / rec.beta[0])];
        for k in 1..live {
            let shifted = a_hat.sub(&eye.scale(rec.gamma[k - 1]))?;
            let mut g = shifted.matmul(&mats[k - 1])?;
            if k >= 2 {
                g = g.sub(&mats[k - 2].scale(rec.beta[k - 1]))?;
            }
            mats.push(g.scale(1.0 / rec.beta[k]));
        }
        for (k, g) in mats.iter().enumerate() {
            out[k].set_column(j, &g.matmul(&xj)?.into_vec());
        }
    }
    Ok(out)
}

/// `Σ_k α_k g_k(p) x` by dense evaluation.
pub fn dense_poly_apply(
    p: &DenseMatrix,
    basis: BasisKind,
    coeffs: &[f64],
    x: &DenseMatrix,
) -> Result<DenseMatrix> {
    if coeffs.is_empty() {
        return Err(Error::invalid("at least one coefficient is required"));
    }
    let terms = dense_basis_terms(p, basis, coeffs.len() - 1, x, false)?;
    let mut z = DenseMatrix::zeros(x.rows(), x.cols());
    for (a, t) in coeffs.iter().zip(&terms) {
        z.axpy(*a, t);
    }
    Ok(z)
}
