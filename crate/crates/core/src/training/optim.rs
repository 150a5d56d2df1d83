use serde::{Deserialize, Serialize};

use crate::models::Params;
use crate::numeric::Tensor;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Plain SGD or Adam with bias correction. Weight decay is an L2 term added
/// to the gradient.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f64,
    step: u64,
    m: Params,
    v: Params,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64) -> Self {
        Self {
            kind,
            weight_decay,
            step: 0,
            m: Params::new(),
            v: Params::new(),
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let wd = self.weight_decay;
            let pd = p.data().to_vec();
            let g: Vec<f64> = g.data().iter().zip(&pd).map(|(g, w)| g + wd * w).collect();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, d) in p.data_mut().iter_mut().zip(&g) {
                        *w -= lr * d;
                    }
                }
                OptimizerKind::Adam => {
                    let shape = p.shape().to_vec();
                    let m = self
                        .m
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(shape.clone()));
                    for (mi, gi) in m.data_mut().iter_mut().zip(&g) {
                        *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                    }
                    let v = self
                        .v
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(shape));
                    for (vi, gi) in v.data_mut().iter_mut().zip(&g) {
                        *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                    }
                    let c1 = 1.0 - BETA1.powi(t);
                    let c2 = 1.0 - BETA2.powi(t);
                    for ((w, mi), vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                        *w -= lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(kind: OptimizerKind, lr: f64, steps: usize) -> f64 {
        let mut params = Params::new();
        params.insert("w".into(), Tensor::row(vec![3.0, -2.0]));
        let mut opt = Optimizer::new(kind, 0.0);
        for _ in 0..steps {
            let g = params["w"].scale(2.0);
            let grads = Params::from([("w".to_string(), g)]);
            opt.step(&mut params, &grads, lr);
        }
        params["w"].data().iter().map(|v| v * v).sum()
    }

    #[test]
    fn both_optimisers_minimise_a_quadratic() {
        assert!(quad(OptimizerKind::Sgd, 0.1, 100) < 1e-8);
        assert!(quad(OptimizerKind::Adam, 0.05, 2000) < 1e-6);
    }

    #[test]
    fn first_adam_step_has_size_lr() {
        let mut params = Params::from([("w".to_string(), Tensor::row(vec![1.0, 1.0]))]);
        let grads = Params::from([("w".to_string(), Tensor::row(vec![0.3, -40.0]))]);
        Optimizer::new(OptimizerKind::Adam, 0.0).step(&mut params, &grads, 0.01);
        let w = params["w"].data();
        assert!((w[0] - 0.99).abs() < 1e-9 && (w[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut params = Params::from([("w".to_string(), Tensor::row(vec![2.0]))]);
        let grads = Params::from([("w".to_string(), Tensor::row(vec![0.0]))]);
        Optimizer::new(OptimizerKind::Sgd, 0.5).step(&mut params, &grads, 0.1);
        assert!((params["w"].data()[0] - 1.9).abs() < 1e-15);
    }
}
