//! Comparisons against independent implementations: nalgebra's symmetric
//! eigensolver and a fully reorthogonalized Arnoldi process.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use polyformer::basis::BasisKind;
use polyformer::filter::FilterSpec;
use polyformer::graph::{grid_graph, normalized_adjacency, normalized_laplacian, random_graph, Graph};
use polyformer::linalg::{dense_basis_terms, exact_filter, jacobi_eigh, laplacian_spectrum};
use polyformer::matrix::DenseMatrix;
use polyformer::synth::{make_synthetic_task, uniform_signal, TaskName};
use polyformer::tokens::compute_tokens;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn random_x(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DenseMatrix {
    DenseMatrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn graphs(seed: u64, count: usize, n_max: usize) -> Vec<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(4..=n_max);
            random_graph(n, 0.2, &mut rng).unwrap()
        })
        .collect()
}

/// `U h(Λ) Uᵀ x` from nalgebra's decomposition.
fn na_filter(l: &DenseMatrix, h: impl Fn(f64) -> f64, x: &DenseMatrix) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(to_na(l));
    let hd = DMatrix::from_diagonal(&eig.eigenvalues.map(h));
    &eig.eigenvectors * hd * eig.eigenvectors.transpose() * to_na(x)
}

#[test]
fn jacobi_eigenvalues_match_nalgebra() {
    for g in graphs(11, 12, 96) {
        let l = normalized_laplacian(&g).to_dense();
        let ours = jacobi_eigh(&l).unwrap();
        let mut theirs: Vec<f64> = SymmetricEigen::new(to_na(&l)).eigenvalues.iter().copied().collect();
        theirs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut mine = ours.eigenvalues.clone();
        mine.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in mine.iter().zip(&theirs) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn exact_filter_matches_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for g in graphs(13, 8, 80) {
        let l = normalized_laplacian(&g).to_dense();
        let x = random_x(&mut rng, g.n_nodes(), 2);
        let h = |lam: f64| (-3.0 * (lam - 0.7).powi(2)).exp();
        let ours = exact_filter(&g, &FilterSpec::custom(h), &x).unwrap();
        let theirs = na_filter(&l, h, &x);
        let gap = (to_na(&ours) - theirs).abs().max();
        assert!(gap < 1e-9, "gap {gap}");
    }
}

#[test]
fn polynomial_filters_agree_with_spectral_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for g in graphs(15, 6, 64) {
        let x = random_x(&mut rng, g.n_nodes(), 1);
        let l = normalized_laplacian(&g).to_dense();
        // Monomial in Â = I - L̂ against nalgebra's spectrum.
        let alpha: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = compute_tokens(&g, &x, BasisKind::Monomial, 5, false).unwrap();
        let mut via_tokens = DenseMatrix::zeros(x.rows(), 1);
        for (k, a) in alpha.iter().enumerate() {
            via_tokens.axpy(*a, &t.order_matrix(k));
        }
        let h = |lam: f64| alpha.iter().enumerate().map(|(k, a)| a * (1.0 - lam).powi(k as i32)).sum::<f64>();
        let gap = (to_na(&via_tokens) - na_filter(&l, h, &x)).abs().max();
        assert!(gap < 1e-8, "gap {gap}");
    }
}

#[test]
fn dense_terms_match_tokens_for_fixed_bases() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for g in graphs(17, 10, 64) {
        let x = random_x(&mut rng, g.n_nodes(), 3);
        for basis in [BasisKind::Monomial, BasisKind::Chebyshev, BasisKind::Bernstein] {
            for shifted in [false, true] {
                if shifted && basis != BasisKind::Chebyshev {
                    continue;
                }
                let p = match basis {
                    BasisKind::Monomial => normalized_adjacency(&g).to_dense(),
                    _ => normalized_laplacian(&g).to_dense(),
                };
                let dense = dense_basis_terms(&p, basis, 7, &x, shifted).unwrap();
                let t = compute_tokens(&g, &x, basis, 7, shifted).unwrap();
                for (k, d) in dense.iter().enumerate() {
                    let scale = d.max_abs().max(1e-300);
                    assert!(t.order_matrix(k).max_abs_diff(d) / scale < 1e-10, "{basis} k={k}");
                }
            }
        }
    }
}

/// Orthonormal Krylov vectors of `a` started at `x`, with two passes of
/// Gram-Schmidt per step. Stops when the new direction vanishes.
fn arnoldi(a: &DMatrix<f64>, x: &DVector<f64>, k_max: usize) -> Vec<DVector<f64>> {
    let mut q: Vec<DVector<f64>> = Vec::new();
    let norm = x.norm();
    if norm < 1e-12 {
        return q;
    }
    q.push(x / norm);
    while q.len() <= k_max {
        let mut v = a * q.last().unwrap();
        for _ in 0..2 {
            for b in &q {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let nv = v.norm();
        if nv < 1e-9 {
            break;
        }
        q.push(v / nv);
    }
    q
}

#[test]
fn optimal_tokens_match_arnoldi() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for g in graphs(19, 10, 64) {
        let x = random_x(&mut rng, g.n_nodes(), 2);
        let t = compute_tokens(&g, &x, BasisKind::Optimal, 8, false).unwrap();
        let a = to_na(&normalized_adjacency(&g).to_dense());
        let coeffs = t.opt_coeffs().unwrap();
        for c in 0..2 {
            let q = arnoldi(&a, &DVector::from_vec(x.column(c)), 8);
            let live = coeffs.channels[c].effective_len().min(9).min(q.len());
            for (k, qk) in q.iter().enumerate().take(live) {
                for i in 0..g.n_nodes() {
                    let gap = (t.get(k, i, c) - qk[i]).abs();
                    assert!(gap < 1e-8, "order {k} node {i} channel {c}: gap {gap}");
                }
            }
        }
    }
}

#[test]
fn grid_task_targets_recomputed_independently() {
    let g = grid_graph(8, 8).unwrap();
    let x = uniform_signal(64, 5);
    let task = make_synthetic_task(&g, &x, TaskName::LowAndHighPass).unwrap();
    let l = normalized_laplacian(&g).to_dense();
    let (h0, h1) = TaskName::LowAndHighPass.filters();
    let masked = |r: u8| {
        let v: Vec<f64> = x.iter().zip(&task.regime).map(|(v, g)| if *g == r { *v } else { 0.0 }).collect();
        DenseMatrix::from_vec(64, 1, v).unwrap()
    };
    let z0 = na_filter(&l, |lam| h0.eval(lam), &masked(0));
    let z1 = na_filter(&l, |lam| h1.eval(lam), &masked(1));
    for i in 0..64 {
        assert_eq!(task.regime[i], u8::from(x[i] >= 0.5));
        let want = if task.regime[i] == 0 { z0[(i, 0)] } else { z1[(i, 0)] };
        assert!((task.z[i] - want).abs() < 1e-9, "node {i}: {} vs {want}", task.z[i]);
    }
}

#[test]
fn laplacian_spectrum_orthonormal_vectors() {
    for g in graphs(20, 5, 100) {
        let eig = laplacian_spectrum(&g).unwrap();
        let u = to_na(&eig.eigenvectors);
        let gram = u.transpose() * &u;
        let gap = (gram - DMatrix::identity(g.n_nodes(), g.n_nodes())).norm();
        assert!(gap < 1e-8, "{gap}");
    }
}
