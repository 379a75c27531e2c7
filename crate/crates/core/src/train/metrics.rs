use crate::error::{Error, Result};

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a} predictions for {b} targets")));
    }
    if a == 0 {
        return Err(Error::shape(op, "empty input"));
    }
    Ok(())
}

pub fn sse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len("sse", pred.len(), target.len())?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    Ok(sse(pred, target)? / pred.len() as f64)
}

/// `1 - SSE / Σ(t - mean t)²`. A constant target has no defined score.
pub fn r2_score(pred: &[f64], target: &[f64]) -> Result<f64> {
    let e = sse(pred, target)?;
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
    if tot == 0.0 {
        return Err(Error::Numerical("R² is undefined for a constant target".into()));
    }
    Ok(1.0 - e / tot)
}

/// Mean negative log-likelihood of row-softmax probabilities, `logits` row-major `[N, c]`.
pub fn cross_entropy_loss(logits: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    if classes == 0 {
        return Err(Error::invalid("zero classes"));
    }
    check_len("cross_entropy", logits.len(), labels.len() * classes)?;
    let mut total = 0.0;
    for (row, &y) in logits.chunks_exact(classes).zip(labels) {
        if y >= classes {
            return Err(Error::invalid(format!("label {y} outside 0..{classes}")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}

/// Fraction of rows whose arg-max (first on ties) equals the label.
pub fn accuracy(logits: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    if classes == 0 {
        return Err(Error::invalid("zero classes"));
    }
    check_len("accuracy", logits.len(), labels.len() * classes)?;
    let hits = logits
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &y)| {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
            best == y
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean and 95% normal-approximation half-width `1.96 · sd / √n`, with the
/// sample standard deviation.
pub fn accuracy_ci(runs: &[f64]) -> Result<(f64, f64)> {
    if runs.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 runs, got {}", runs.len())));
    }
    let n = runs.len() as f64;
    // shifted by the first run so identical runs give an exact mean
    let mean = runs[0] + runs.iter().map(|r| r - runs[0]).sum::<f64>() / n;
    let var = runs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_metrics() {
        let t = [1.0, -1.0, 3.0];
        assert_eq!(sse(&t, &t).unwrap(), 0.0);
        assert_eq!(r2_score(&t, &t).unwrap(), 1.0);
        assert_eq!(r2_score(&[1.0; 3], &t).unwrap(), 0.0);
        assert_eq!(sse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 2.0);
        assert_eq!(r2_score(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!(r2_score(&[1.0, 2.0], &[2.0, 2.0]).is_err());
        assert!(sse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        assert!((cross_entropy_loss(&[0.0, 0.0], 2, &[0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(cross_entropy_loss(&[1000.0, 0.0], 2, &[0]).unwrap(), 0.0);
        // rows [1,2,3] label 2 and [0,0,ln 2] label 0
        let got = cross_entropy_loss(&[1.0, 2.0, 3.0, 0.0, 0.0, 2f64.ln()], 3, &[2, 0]).unwrap();
        let l1 = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        let l2 = 4f64.ln();
        assert!((got - (l1 + l2) / 2.0).abs() < 1e-14);
        assert!(cross_entropy_loss(&[0.0, 0.0], 2, &[2]).is_err());
    }

    #[test]
    fn ci_cases() {
        assert_eq!(accuracy_ci(&[0.8; 10]).unwrap(), (0.8, 0.0));
        let (m, h) = accuracy_ci(&[0.0, 1.0]).unwrap();
        assert_eq!(m, 0.5);
        assert!((h - 0.98).abs() < 1e-12);
        assert!(accuracy_ci(&[0.5]).is_err());
    }

    #[test]
    fn accuracy_ties_take_first() {
        assert_eq!(accuracy(&[1.0, 1.0, 0.0, 2.0], 2, &[0, 1]).unwrap(), 1.0);
    }
}
