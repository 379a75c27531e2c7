use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction; weight decay is added to the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adam", format!("{} params, {} grads", params.len(), grads.len())));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::shape("adam", "parameter list changed between steps"));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.len() != g.len() || self.m[i].len() != p.len() {
                return Err(Error::shape("adam", format!("tensor {i}: {:?} vs {:?}", p.shape(), g.shape())));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gj = gj + self.weight_decay * *w;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(1.0);
        let mut opt = Adam::new(0.01, 0.0);
        opt.step(vec![&mut p], &[Tensor::scalar(-3.0)]).unwrap();
        assert!((p.item().unwrap() - 1.01).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_or_rate_is_stationary() {
        let mut p = Tensor::scalar(2.5);
        let mut opt = Adam::new(0.1, 0.0);
        for _ in 0..5 {
            opt.step(vec![&mut p], &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(p.item(), Some(2.5));
        let mut opt = Adam::new(0.0, 0.3);
        opt.step(vec![&mut p], &[Tensor::scalar(4.0)]).unwrap();
        assert_eq!(p.item(), Some(2.5));
    }

    #[test]
    fn three_step_trace() {
        // independent scalar recomputation
        let (lr, wd, b1, b2, eps) = (0.05, 0.1, 0.9f64, 0.999f64, 1e-8);
        let grads = [0.5, -1.5, 2.0];
        let (mut w, mut m, mut v) = (1.0f64, 0.0, 0.0);
        let mut expected = Vec::new();
        for (t, g) in grads.iter().enumerate() {
            let g = g + wd * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let step = (m / (1.0 - b1.powi(t as i32 + 1))) / ((v / (1.0 - b2.powi(t as i32 + 1))).sqrt() + eps);
            w -= lr * step;
            expected.push(w);
        }
        let mut p = Tensor::scalar(1.0);
        let mut opt = Adam::new(lr, wd);
        for (g, e) in grads.iter().zip(&expected) {
            opt.step(vec![&mut p], &[Tensor::scalar(*g)]).unwrap();
            assert!((p.item().unwrap() - e).abs() < 1e-15);
        }
    }
}
