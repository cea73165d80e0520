use super::Parameterized;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    /// First moment (mean of gradients).
    m: Vec<f64>,
    /// Second moment (mean of squared gradients).
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update. Fails without touching anything if a gradient is
    /// not finite or the shapes disagree.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<()>
    where
        P: Parameterized + ?Sized,
        G: Parameterized + ?Sized,
    {
        let step = self.step_count + 1;
        let grads = grads.param_slices();
        let total: usize = grads.iter().map(|g| g.len()).sum();
        if total != self.m.len() {
            return Err(Error::param(format!(
                "optimizer holds {} moments but got {total} gradients",
                self.m.len()
            )));
        }
        if let Some(pos) = grads.iter().flat_map(|g| g.iter()).position(|g| !g.is_finite()) {
            return Err(Error::Training {
                step,
                message: format!("non-finite gradient at coordinate {pos}"),
            });
        }
        let mut slices = params.param_slices_mut();
        if slices.len() != grads.len() || slices.iter().zip(&grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::param("parameter and gradient layouts differ"));
        }

        self.step_count = step;
        let bc1 = 1.0 - self.beta1.powi(step as i32);
        let bc2 = 1.0 - self.beta2.powi(step as i32);
        let flat_params = slices.iter_mut().flat_map(|s| s.iter_mut());
        let flat_grads = grads.iter().flat_map(|g| g.iter());
        for (((p, &g), m), v) in flat_params.zip(flat_grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
