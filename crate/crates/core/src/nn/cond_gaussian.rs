use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;

use super::{Mlp, MlpCache, MlpGrads, Parameterized};
use crate::error::{Error, Result};

/// Log-variance outputs are clamped to `[-LOGVAR_CLAMP, LOGVAR_CLAMP]`.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Diagonal Gaussian `q(v | u) = N(mu(u), diag(exp(logvar(u))))` with both
/// statistics produced by separate MLPs.
#[derive(Debug, Clone)]
pub struct CondGaussianHead {
    pub mu_net: Mlp,
    pub logvar_net: Mlp,
}

/// Per-row conditional statistics plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct CondGaussianForward {
    /// `batch × v_dim` means.
    pub mu: DMatrix<f64>,
    /// `batch × v_dim` clamped log-variances.
    pub logvar: DMatrix<f64>,
    raw_logvar: DMatrix<f64>,
    mu_cache: MlpCache,
    logvar_cache: MlpCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondGaussianGrads {
    pub mu: MlpGrads,
    pub logvar: MlpGrads,
}

impl CondGaussianHead {
    /// Initializes the mean network first, then the log-variance network.
    pub fn init<R: Rng + ?Sized>(u_dim: usize, v_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mu_net = Mlp::init(u_dim, hidden, v_dim, rng);
        let logvar_net = Mlp::init(u_dim, hidden, v_dim, rng);
        CondGaussianHead { mu_net, logvar_net }
    }

    pub fn new(mu_net: Mlp, logvar_net: Mlp) -> Result<Self> {
        if mu_net.in_dim() != logvar_net.in_dim() || mu_net.out_dim() != logvar_net.out_dim() {
            return Err(Error::param(
                "mean and log-variance networks must share input and output widths",
            ));
        }
        Ok(CondGaussianHead { mu_net, logvar_net })
    }

    pub fn u_dim(&self) -> usize {
        self.mu_net.in_dim()
    }

    pub fn v_dim(&self) -> usize {
        self.mu_net.out_dim()
    }

    pub fn forward(&self, u: &DMatrix<f64>) -> Result<CondGaussianForward> {
        let (mu, mu_cache) = self.mu_net.forward(u)?;
        let (raw_logvar, logvar_cache) = self.logvar_net.forward(u)?;
        let logvar = raw_logvar.map(|x| x.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
        Ok(CondGaussianForward { mu, logvar, raw_logvar, mu_cache, logvar_cache })
    }

    /// `ln q(v_r | u_r)` for every row `r`.
    pub fn logpdf(&self, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_pair(self, u, v)?;
        let fwd = self.forward(u)?;
        Ok((0..u.nrows()).map(|r| row_logpdf(&fwd, r, v, r)).collect())
    }

    /// Gradients of `Σ_r row_grads[r] · ln q(v_r | u_r)` with respect to the
    /// head parameters, `u` and `v`.
    pub fn logpdf_backward(
        &self,
        fwd: &CondGaussianForward,
        v: &DMatrix<f64>,
        row_grads: &[f64],
    ) -> Result<(CondGaussianGrads, DMatrix<f64>, DMatrix<f64>)> {
        let (n, d) = fwd.mu.shape();
        if v.shape() != (n, d) || row_grads.len() != n {
            return Err(Error::Usage("log-density gradient shapes do not match".into()));
        }
        let mut d_mu = DMatrix::zeros(n, d);
        let mut d_logvar = DMatrix::zeros(n, d);
        let mut d_v = DMatrix::zeros(n, d);
        for r in 0..n {
            for k in 0..d {
                let diff = v[(r, k)] - fwd.mu[(r, k)];
                let inv_var = (-fwd.logvar[(r, k)]).exp();
                let g = row_grads[r];
                d_mu[(r, k)] = g * diff * inv_var;
                d_logvar[(r, k)] = g * (-0.5 + 0.5 * diff * diff * inv_var);
                d_v[(r, k)] = -g * diff * inv_var;
            }
        }
        let (grads, d_u) = self.stat_backward(fwd, &d_mu, &d_logvar)?;
        Ok((grads, d_u, d_v))
    }

    /// Backpropagates gradients with respect to `mu` and the clamped
    /// log-variance. Entries clamped away get zero gradient.
    pub fn stat_backward(
        &self,
        fwd: &CondGaussianForward,
        d_mu: &DMatrix<f64>,
        d_logvar: &DMatrix<f64>,
    ) -> Result<(CondGaussianGrads, DMatrix<f64>)> {
        let mut d_raw = d_logvar.clone();
        d_raw.zip_apply(&fwd.raw_logvar, |g, raw| {
            if raw.abs() > LOGVAR_CLAMP {
                *g = 0.0;
            }
        });
        let (mu, du_mu) = self.mu_net.backward(&fwd.mu_cache, d_mu)?;
        let (logvar, du_lv) = self.logvar_net.backward(&fwd.logvar_cache, &d_raw)?;
        Ok((CondGaussianGrads { mu, logvar }, du_mu + du_lv))
    }
}

fn check_pair(head: &CondGaussianHead, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<()> {
    if u.nrows() != v.nrows() {
        return Err(Error::param(format!(
            "batch sizes differ: u has {} rows, v has {}",
            u.nrows(),
            v.nrows()
        )));
    }
    if v.ncols() != head.v_dim() {
        return Err(Error::param(format!(
            "v width {} does not match head output width {}",
            v.ncols(),
            head.v_dim()
        )));
    }
    Ok(())
}

/// `ln q(v_j | u_i)` using the statistics of row `i` and the sample of row `j`.
pub(crate) fn row_logpdf(fwd: &CondGaussianForward, i: usize, v: &DMatrix<f64>, j: usize) -> f64 {
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    let mut acc = 0.0;
    for k in 0..fwd.mu.ncols() {
        let lv = fwd.logvar[(i, k)];
        let diff = v[(j, k)] - fwd.mu[(i, k)];
        acc += -half_log_2pi - 0.5 * lv - diff * diff / (2.0 * lv.exp());
    }
    acc
}

impl Parameterized for CondGaussianHead {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut s = self.mu_net.param_slices();
        s.extend(self.logvar_net.param_slices());
        s
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.mu_net.param_slices_mut();
        s.extend(self.logvar_net.param_slices_mut());
        s
    }
}

impl Parameterized for CondGaussianGrads {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut s = self.mu.param_slices();
        s.extend(self.logvar.param_slices());
        s
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.mu.param_slices_mut();
        s.extend(self.logvar.param_slices_mut());
        s
    }
}
