//! Small hand-differentiated networks: a one-hidden-layer ReLU MLP, a
//! conditional diagonal-Gaussian density head built from two of them, the
//! Adam update rule and a finite-difference gradient checker.

mod adam;
mod cond_gaussian;
mod gradcheck;
mod mlp;

pub use adam::AdamState;
pub(crate) use cond_gaussian::row_logpdf;
pub use cond_gaussian::{CondGaussianForward, CondGaussianGrads, CondGaussianHead, LOGVAR_CLAMP};
pub use gradcheck::{gradient_check, GRADIENT_FLOOR};
pub use mlp::{Mlp, MlpCache, MlpGrads, DEFAULT_HIDDEN};

use crate::error::{Error, Result};

/// Anything whose trainable state is a fixed sequence of `f64` slices.
///
/// Gradients implement this too, with the same slice layout as the
/// parameters they belong to.
pub trait Parameterized {
    fn param_slices(&self) -> Vec<&[f64]>;

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(Error::param(format!(
                "expected {expected} parameters, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            let n = slice.len();
            slice.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}
