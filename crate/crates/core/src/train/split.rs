use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Train/validation/test node masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
    pub seed: u64,
    pub fractions: (f64, f64, f64),
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect()
}

impl SplitMasks {
    /// Every node in both the training and the validation set, no test set.
    /// Used when the whole signal is the fitting target.
    pub fn full(n: usize) -> Self {
        Self {
            train: vec![true; n],
            val: vec![true; n],
            test: vec![false; n],
            seed: 0,
            fractions: (1.0, 1.0, 0.0),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.train.len()
    }

    pub fn train_nodes(&self) -> Vec<usize> {
        indices(&self.train)
    }

    pub fn val_nodes(&self) -> Vec<usize> {
        indices(&self.val)
    }

    pub fn test_nodes(&self) -> Vec<usize> {
        indices(&self.test)
    }
}

/// Seeded shuffle of `0..n` cut into contiguous train/val/test runs of
/// `round(n·f)` nodes. When the fractions sum to 1 the test set takes the
/// remainder so every node is assigned.
pub fn split_nodes(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<SplitMasks> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::invalid(format!("fractions {fractions:?} must lie in [0, 1]")));
    }
    let sum = a + b + c;
    if sum > 1.0 + 1e-9 {
        return Err(Error::invalid(format!("fractions sum to {sum} > 1")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * a).round() as usize).min(n);
    let n_val = ((n as f64 * b).round() as usize).min(n - n_train);
    let n_test = if (sum - 1.0).abs() <= 1e-9 {
        n - n_train - n_val
    } else {
        ((n as f64 * c).round() as usize).min(n - n_train - n_val)
    };
    let mut masks = SplitMasks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
        seed,
        fractions,
    };
    for (pos, &node) in order.iter().enumerate() {
        if pos < n_train {
            masks.train[node] = true;
        } else if pos < n_train + n_val {
            masks.val[node] = true;
        } else if pos < n_train + n_val + n_test {
            masks.test[node] = true;
        }
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_determinism() {
        let m = split_nodes(10, (0.6, 0.2, 0.2), 4).unwrap();
        assert_eq!(m.train_nodes().len(), 6);
        assert_eq!(m.val_nodes().len(), 2);
        assert_eq!(m.test_nodes().len(), 2);
        assert_eq!(m, split_nodes(10, (0.6, 0.2, 0.2), 4).unwrap());
        for i in 0..10 {
            assert_eq!(m.train[i] as u8 + m.val[i] as u8 + m.test[i] as u8, 1);
        }
    }

    #[test]
    fn seeds_differ() {
        let a = split_nodes(1000, (0.6, 0.2, 0.2), 1).unwrap();
        let b = split_nodes(1000, (0.6, 0.2, 0.2), 2).unwrap();
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn partial_and_invalid() {
        let m = split_nodes(10, (0.5, 0.2, 0.1), 0).unwrap();
        assert_eq!(m.train_nodes().len() + m.val_nodes().len() + m.test_nodes().len(), 8);
        assert!(split_nodes(10, (0.6, 0.3, 0.2), 0).is_err());
        assert!(split_nodes(10, (-0.1, 0.3, 0.2), 0).is_err());
    }
}
