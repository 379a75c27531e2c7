use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: DenseMatrix,
    /// Sum of squared distances after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm seeded with `k` distinct rows drawn uniformly without
/// replacement. Stops when assignments stop changing or after
/// [`MAX_ITERATIONS`]. A cluster that empties is re-seeded with the point
/// farthest from its current centroid.
pub fn kmeans(points: &DenseMatrix, k: usize, seed: u64) -> Result<KMeansResult> {
    let (m, dim) = points.shape();
    if k == 0 || k > m {
        return Err(Error::invalid(format!("k must be in 1..={m}, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = DenseMatrix::zeros(k, dim);
    for (c, idx) in sample(&mut rng, m, k).into_iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(points.row(idx));
    }

    let mut assignments = vec![usize::MAX; m];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        let mut objective = 0.0;
        for i in 0..m {
            let (best, dist) = (0..k)
                .map(|c| (c, sq_dist(points.row(i), centroids.row(c))))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
            objective += dist;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        trace.push(objective);
        if !changed {
            break;
        }

        let mut sums = DenseMatrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..m)
                    .filter(|&i| assignments[i] != usize::MAX)
                    .map(|i| (i, sq_dist(points.row(i), centroids.row(assignments[i]))))
                    .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
                    .0;
                centroids.row_mut(c).copy_from_slice(points.row(far));
                counts[c] = 1;
                // force another assignment pass
                assignments[far] = usize::MAX;
            }
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        objective_trace: trace,
        iterations,
    })
}
