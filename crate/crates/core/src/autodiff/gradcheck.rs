use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(parameter, element)` where the largest relative error occurred.
    pub worst: Option<(usize, usize)>,
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

fn eval<F>(params: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out)
        .item()
        .ok_or_else(|| Error::Autodiff("grad_check closure must return a scalar".into()))
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step `eps`. The forward is first evaluated twice at the base point; any
/// bitwise difference between the two runs is an error, since finite
/// differences of a non-deterministic function are meaningless.
pub fn grad_check<F>(params: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let a = eval(params, &f)?;
    let b = eval(params, &f)?;
    if a.to_bits() != b.to_bits() {
        return Err(Error::Autodiff(format!(
            "forward is not deterministic ({a} vs {b})"
        )));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut work = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        analytic: Vec::new(),
        numeric: Vec::new(),
    };
    for p in 0..params.len() {
        let mut num = Tensor::zeros(params[p].shape());
        for e in 0..params[p].len() {
            let base = params[p].data()[e];
            work[p].data_mut()[e] = base + eps;
            let plus = eval(&work, &f)?;
            work[p].data_mut()[e] = base - eps;
            let minus = eval(&work, &f)?;
            work[p].data_mut()[e] = base;
            let n = (plus - minus) / (2.0 * eps);
            num.data_mut()[e] = n;
            let an = analytic[p].data()[e];
            let abs = (an - n).abs();
            let rel = abs / (an.abs() + n.abs()).max(1e-8);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((p, e));
            }
        }
        numeric.push(num);
    }
    report.analytic = analytic;
    report.numeric = numeric;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn seq(shape: &[usize], scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| ((i as f64 + 1.0) * 0.913).sin() * scale).collect()).unwrap()
    }

    fn check<F>(params: &[Tensor], f: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let r = grad_check(params, 1e-6, f).unwrap();
        assert!(r.max_rel_error < 1e-6, "rel error {} at {:?}", r.max_rel_error, r.worst);
    }

    #[test]
    fn matmul_tanh_softmax() {
        check(&[seq(&[3, 4], 1.0), seq(&[4, 2], 0.7)], |tp, v| {
            let y = tp.matmul(v[0], v[1])?;
            let y = tp.tanh(y)?;
            let y = tp.softmax_rows(y)?;
            let w = tp.constant(seq(&[3, 2], 2.0));
            let y = tp.hadamard(y, w)?;
            tp.sum_all(y)
        });
    }

    #[test]
    fn batched_products() {
        check(&[seq(&[2, 3, 4], 0.5), seq(&[2, 4, 3], 0.9), seq(&[2, 5, 4], 1.1)], |tp, v| {
            let a = tp.bmm(v[0], v[1])?;
            let b = tp.bmm_nt(v[0], v[2])?;
            let a2 = tp.hadamard(a, a)?;
            let b2 = tp.tanh(b)?;
            let s1 = tp.sum_all(a2)?;
            let s2 = tp.sum_all(b2)?;
            tp.add(s1, s2)
        });
    }

    #[test]
    fn slot_matmul_and_axes() {
        check(&[seq(&[2, 3, 4], 1.0), seq(&[3, 4, 2], 0.8)], |tp, v| {
            let y = tp.slot_matmul(v[0], v[1])?;
            let y = tp.relu(y)?;
            let s = tp.sum_axis(y, 1)?;
            let s = tp.tanh(s)?;
            let target = seq(&[2, 2], 0.3);
            tp.mse_loss(s, &target)
        });
    }

    #[test]
    fn layer_norm_with_affine() {
        check(
            &[seq(&[4, 5], 2.0), t(&[5], &[1.0, 0.5, -0.3, 2.0, 1.1]), seq(&[5], 0.2)],
            |tp, v| {
                let y = tp.layer_norm_rows(v[0], v[1], v[2], 1e-5)?;
                let w = tp.constant(seq(&[4, 5], 1.7));
                let y = tp.hadamard(y, w)?;
                let y = tp.tanh(y)?;
                tp.sum_all(y)
            },
        );
    }

    #[test]
    fn slicing_concat_reshape_broadcast() {
        check(&[seq(&[2, 6], 1.0), seq(&[2, 1], 0.5), seq(&[3], 0.4)], |tp, v| {
            let a = tp.slice_cols(v[0], 0, 3)?;
            let b = tp.slice_cols(v[0], 3, 3)?;
            let b = tp.add(b, v[1])?;
            let a = tp.broadcast_row(a, v[2])?;
            let c = tp.concat_cols(&[b, a])?;
            let c = tp.reshape(c, &[3, 4])?;
            let c = tp.tanh(c)?;
            let c = tp.sub(c, v[1]).or_else(|_| tp.scale(c, -0.5))?;
            let c = tp.hadamard(c, c)?;
            tp.sum_all(c)
        });
    }

    #[test]
    fn cross_entropy_gradient() {
        check(&[seq(&[4, 3], 2.0)], |tp, v| tp.cross_entropy(v[0], &[0, 2, 1, 2]));
    }

    #[test]
    fn nondeterministic_forward_is_rejected() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let r = grad_check(&[Tensor::scalar(1.0)], 1e-6, |tp, v| {
            calls.set(calls.get() + 1.0);
            let c = tp.constant(Tensor::scalar(calls.get()));
            tp.hadamard(v[0], c)
        });
        assert!(matches!(r, Err(Error::Autodiff(_))));
    }
}
