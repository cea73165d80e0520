use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Parameterized;
use crate::error::{Error, Result};

/// Hidden width used unless configured otherwise.
pub const DEFAULT_HIDDEN: usize = 20;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// `x ↦ w2 · ReLU(w1 · x + b1) + b2`, applied row-wise to a batch.
#[derive(Debug, Clone)]
pub struct Mlp {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
    // Changes whenever parameters may have been mutated; caches remember it.
    version: u64,
}

/// Activations saved by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: DMatrix<f64>,
    pre: DMatrix<f64>,
    version: u64,
}

/// Parameter gradients with the same shapes as the [`Mlp`] they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl Mlp {
    /// All-zero network; its output is identically zero.
    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Mlp::from_parts(
            DMatrix::zeros(hidden, in_dim),
            DVector::zeros(hidden),
            DMatrix::zeros(out_dim, hidden),
            DVector::zeros(out_dim),
        )
        .expect("zero shapes are consistent")
    }

    /// He-scaled Gaussian first layer (`std = √(2/in_dim)`), `std = √(1/hidden)`
    /// for the output layer, zero biases. Weights are drawn row by row, first
    /// layer first.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Self {
        let s1 = (2.0 / in_dim as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        let mut w1 = DMatrix::zeros(hidden, in_dim);
        for h in 0..hidden {
            for k in 0..in_dim {
                let z: f64 = rng.sample(StandardNormal);
                w1[(h, k)] = s1 * z;
            }
        }
        let mut w2 = DMatrix::zeros(out_dim, hidden);
        for o in 0..out_dim {
            for h in 0..hidden {
                let z: f64 = rng.sample(StandardNormal);
                w2[(o, h)] = s2 * z;
            }
        }
        Mlp::from_parts(w1, DVector::zeros(hidden), w2, DVector::zeros(out_dim))
            .expect("initialized shapes are consistent")
    }

    pub fn from_parts(
        w1: DMatrix<f64>,
        b1: DVector<f64>,
        w2: DMatrix<f64>,
        b2: DVector<f64>,
    ) -> Result<Self> {
        let hidden = w1.nrows();
        if w1.ncols() == 0 || hidden == 0 || w2.nrows() == 0 {
            return Err(Error::param("MLP dimensions must be positive"));
        }
        if b1.len() != hidden || w2.ncols() != hidden || b2.len() != w2.nrows() {
            return Err(Error::param(format!(
                "inconsistent MLP shapes: w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                w1.shape(),
                b1.len(),
                w2.shape(),
                b2.len()
            )));
        }
        Ok(Mlp { w1, b1, w2, b2, version: fresh_version() })
    }

    pub fn in_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn w1(&self) -> &DMatrix<f64> {
        &self.w1
    }

    pub fn b1(&self) -> &DVector<f64> {
        &self.b1
    }

    pub fn w2(&self) -> &DMatrix<f64> {
        &self.w2
    }

    pub fn b2(&self) -> &DVector<f64> {
        &self.b2
    }

    pub(crate) fn version(&self) -> u64 {
        self.version
    }

    /// Row-wise forward pass over a `batch × in_dim` input.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, MlpCache)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::param(format!(
                "input width {} does not match MLP input dimension {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        let mut pre = x * self.w1.transpose();
        for mut row in pre.row_iter_mut() {
            row += self.b1.transpose();
        }
        let act = pre.map(relu);
        let mut out = act * self.w2.transpose();
        for mut row in out.row_iter_mut() {
            row += self.b2.transpose();
        }
        let cache = MlpCache { input: x.clone(), pre, version: self.version };
        Ok((out, cache))
    }

    /// Reverse-mode gradients of `Σ out_grad ⊙ output` with respect to the
    /// parameters and the input. The ReLU subgradient at 0 is 0.
    pub fn backward(
        &self,
        cache: &MlpCache,
        out_grad: &DMatrix<f64>,
    ) -> Result<(MlpGrads, DMatrix<f64>)> {
        if cache.version != self.version {
            return Err(Error::Usage(
                "MLP cache is stale: parameters changed since the forward pass".into(),
            ));
        }
        let batch = cache.pre.nrows();
        if out_grad.shape() != (batch, self.out_dim()) {
            return Err(Error::Usage(format!(
                "output gradient shape {:?} does not match forward output ({batch}, {})",
                out_grad.shape(),
                self.out_dim()
            )));
        }
        let act = cache.pre.map(relu);
        let w2 = out_grad.transpose() * &act;
        let b2 = column_sums(out_grad);
        let mut d_pre = out_grad * &self.w2;
        d_pre.zip_apply(&cache.pre, |g, p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        let w1 = d_pre.transpose() * &cache.input;
        let b1 = column_sums(&d_pre);
        let d_input = d_pre * &self.w1;
        Ok((MlpGrads { w1, b1, w2, b2 }, d_input))
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            w1: DMatrix::zeros(net.hidden_dim(), net.in_dim()),
            b1: DVector::zeros(net.hidden_dim()),
            w2: DMatrix::zeros(net.out_dim(), net.hidden_dim()),
            b2: DVector::zeros(net.out_dim()),
        }
    }
}

impl Parameterized for Mlp {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version = fresh_version();
        vec![
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ]
    }
}

impl Parameterized for MlpGrads {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ]
    }
}
