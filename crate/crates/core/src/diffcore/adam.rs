use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, Zip};
use serde::{Deserialize, Serialize};

use super::{shape_err, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with bias-corrected moments. Moment buffers are allocated on the first
/// step from the parameter shapes and must keep matching afterwards.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<ArrayD<F>>,
    second: Vec<ArrayD<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<ArrayViewMutD<'_, F>>, grads: Vec<ArrayViewD<'_, F>>) -> Result<()> {
        if params.len() != grads.len() {
            return shape_err(format!("{} parameters but {} gradients", params.len(), grads.len()));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return shape_err("parameter count changed between Adam steps");
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return shape_err(format!("Adam: param {:?}, grad {:?}, moment {:?}", p.shape(), g.shape(), m.shape()));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let (one_b1, one_b2) = (F::lit(1.0 - c.beta1), F::lit(1.0 - c.beta2));
        let corr1 = F::lit(1.0 - c.beta1.powi(t));
        let corr2 = F::lit(1.0 - c.beta2.powi(t));
        let lr = F::lit(c.learning_rate);
        let eps = F::lit(c.epsilon);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            Zip::from(p).and(&g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let mhat = *m / corr1;
                let vhat = *v / corr2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            });
        }
        Ok(())
    }
}
