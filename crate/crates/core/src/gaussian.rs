//! Zero-mean multivariate Gaussians with unit variances.
//!
//! A [`GaussianModel`] is both the data source of the simulation study and
//! the source of ground truth: total correlation and mutual information of a
//! Gaussian have closed forms in terms of log-determinants of (sub)covariance
//! matrices, all of which are computed here from Cholesky factors.
//!
//! Variables are addressed by zero-based position. Every quantity is in nats.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const DIAGONAL_TOL: f64 = 1e-12;
const MIN_PIVOT: f64 = 1e-12;
/// Upper end of the bracket searched by [`solve_rho_for_tc`].
const RHO_BRACKET_MAX: f64 = 1.0 - 1e-12;

/// An ordered set of distinct zero-based variable positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    /// Builds a set from strictly increasing positions.
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param(format!(
                "index set must be strictly increasing, got {indices:?}"
            )));
        }
        Ok(IndexSet(indices))
    }

    /// The contiguous block `start..end`.
    pub fn range(start: usize, end: usize) -> Self {
        IndexSet((start..end).collect())
    }

    pub fn empty() -> Self {
        IndexSet(Vec::new())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn is_disjoint(&self, other: &IndexSet) -> bool {
        !self.0.iter().any(|&i| other.contains(i))
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        let mut all: Vec<usize> = self.0.iter().chain(other.0.iter()).copied().collect();
        all.sort_unstable();
        all.dedup();
        IndexSet(all)
    }

    /// Largest position, if any.
    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// A zero-mean Gaussian over `dim` scalar variables with unit variances.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl GaussianModel {
    /// Validates `sigma` (square, symmetric, unit diagonal, positive definite)
    /// and factorizes it.
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        let n = sigma.nrows();
        if n == 0 || sigma.ncols() != n {
            return Err(Error::param(format!(
                "covariance must be a non-empty square matrix, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        for i in 0..n {
            if (sigma[(i, i)] - 1.0).abs() > DIAGONAL_TOL {
                return Err(Error::param(format!(
                    "covariance diagonal must be 1, entry {i} is {}",
                    sigma[(i, i)]
                )));
            }
            for j in 0..i {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::param(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let chol = cholesky(&sigma)?;
        Ok(GaussianModel { sigma, chol })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Lower-triangular `L` with `L Lᵀ = Σ`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `ln det Σ`, from the Cholesky diagonal.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.chol[(i, i)].ln()).sum::<f64>()
    }

    /// The marginal model of the variables in `indices`.
    pub fn marginal(&self, indices: &IndexSet) -> Result<GaussianModel> {
        self.check_indices(indices)?;
        if indices.is_empty() {
            return Err(Error::param("marginal over an empty index set"));
        }
        GaussianModel::new(principal_submatrix(&self.sigma, indices.as_slice()))
    }

    fn check_indices(&self, indices: &IndexSet) -> Result<()> {
        match indices.max() {
            Some(m) if m >= self.dim() => Err(Error::param(format!(
                "index {m} out of range for a {}-variable model",
                self.dim()
            ))),
            _ => Ok(()),
        }
    }
}

/// Cholesky factor with the positive-definiteness tolerance applied to pivots.
fn cholesky(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let factor = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::param("covariance is not positive definite"))?;
    let l = factor.unpack();
    for i in 0..l.nrows() {
        let pivot = l[(i, i)] * l[(i, i)];
        if !(pivot > MIN_PIVOT) {
            return Err(Error::param(format!(
                "covariance is numerically singular (pivot {i} = {pivot:e})"
            )));
        }
    }
    Ok(l)
}

fn principal_submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let l = cholesky(m)?;
    Ok(2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Closed-form total correlation of `Σ = (1-ρ)I + ρ11ᵀ`.
fn equicorrelated_tc(dim: usize, rho: f64) -> f64 {
    let k = (dim - 1) as f64;
    -0.5 * (k * (1.0 - rho).ln() + (1.0 + k * rho).ln())
}

/// The equicorrelated covariance `Σ = (1-ρ)I + ρ11ᵀ`.
///
/// `rho` must lie in `(-1/(dim-1), 1)` for `Σ` to be positive definite.
pub fn equicorrelated_sigma(dim: usize, rho: f64) -> Result<GaussianModel> {
    if dim == 0 {
        return Err(Error::param("dimension must be positive"));
    }
    let lower = if dim > 1 {
        -1.0 / (dim as f64 - 1.0)
    } else {
        f64::NEG_INFINITY
    };
    if !(rho > lower && rho < 1.0) {
        return Err(Error::param(format!(
            "rho = {rho} outside the valid interval ({lower}, 1) for dim {dim}"
        )));
    }
    let sigma = DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { rho });
    GaussianModel::new(sigma)
}

/// Finds `ρ ∈ [0, 1)` whose equicorrelated model has total correlation
/// `target_tc`, by bisection on the monotone closed form.
pub fn solve_rho_for_tc(dim: usize, target_tc: f64) -> Result<f64> {
    if dim == 0 {
        return Err(Error::param("dimension must be positive"));
    }
    if !(target_tc >= 0.0) || !target_tc.is_finite() {
        return Err(Error::param(format!(
            "target TC must be finite and non-negative, got {target_tc}"
        )));
    }
    if target_tc == 0.0 {
        return Ok(0.0);
    }
    if dim == 1 {
        return Err(Error::param(
            "a single variable has zero total correlation; only target 0 is reachable",
        ));
    }
    let (mut lo, mut hi) = (0.0_f64, RHO_BRACKET_MAX);
    if equicorrelated_tc(dim, hi) < target_tc {
        return Err(Error::param(format!(
            "target TC {target_tc} exceeds what the rho bracket can reach"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if equicorrelated_tc(dim, mid) < target_tc {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Both ends are within an ulp; keep the one with the smaller residual.
    let r_lo = (equicorrelated_tc(dim, lo) - target_tc).abs();
    let r_hi = (equicorrelated_tc(dim, hi) - target_tc).abs();
    Ok(if r_lo <= r_hi { lo } else { hi })
}

/// `-½ ln det Σ`, the total correlation of a unit-variance Gaussian.
pub fn tc_closed_form(model: &GaussianModel) -> f64 {
    -0.5 * model.log_det()
}

/// Mutual information between two disjoint blocks of variables.
pub fn mi_closed_form(model: &GaussianModel, left: &IndexSet, right: &IndexSet) -> Result<f64> {
    model.check_indices(left)?;
    model.check_indices(right)?;
    if !left.is_disjoint(right) {
        return Err(Error::param(format!(
            "index sets {left} and {right} overlap"
        )));
    }
    if left.is_empty() || right.is_empty() {
        return Ok(0.0);
    }
    let joint = left.union(right);
    let sigma = model.sigma();
    let ld_left = log_det_spd(&principal_submatrix(sigma, left.as_slice()))?;
    let ld_right = log_det_spd(&principal_submatrix(sigma, right.as_slice()))?;
    let ld_joint = log_det_spd(&principal_submatrix(sigma, joint.as_slice()))?;
    Ok(0.5 * (ld_left + ld_right - ld_joint))
}

/// Draws `batch` rows `L z`, `z ~ N(0, I)`; the result is `batch × dim`.
pub fn sample<R: Rng + ?Sized>(model: &GaussianModel, batch: usize, rng: &mut R) -> DMatrix<f64> {
    let n = model.dim();
    let l = model.chol();
    let mut out = DMatrix::zeros(batch, n);
    let mut z = vec![0.0; n];
    for row in 0..batch {
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        for i in 0..n {
            let mut acc = 0.0;
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                acc += l[(i, k)] * zk;
            }
            out[(row, i)] = acc;
        }
    }
    out
}

/// A random unit-diagonal positive-definite model: `A Aᵀ + 0.1 I` for a
/// standard normal `A`, rescaled to unit variances.
pub fn random_correlation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<GaussianModel> {
    if dim == 0 {
        return Err(Error::param("dimension must be at least 1"));
    }
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.1;
    let mut sigma = DMatrix::identity(dim, dim);
    for i in 0..dim {
        for j in 0..i {
            let r = s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt();
            sigma[(i, j)] = r;
            sigma[(j, i)] = r;
        }
    }
    GaussianModel::new(sigma)
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte-Carlo total correlation: the sample mean of
/// `ln p(X) - Σᵢ ln p(xᵢ)` under draws from the model.
pub fn mc_tc_oracle<R: Rng + ?Sized>(
    model: &GaussianModel,
    num_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if num_samples == 0 {
        return Err(Error::param("num_samples must be positive"));
    }
    let n = model.dim();
    let l = model.chol();
    let sigma = model.sigma();
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    let log_det = model.log_det();
    let xs = sample(model, num_samples, rng);

    let mut log_ratios = Vec::with_capacity(num_samples);
    let mut w = vec![0.0; n];
    for row in 0..num_samples {
        // Whiten by forward substitution: L w = x.
        let mut quad = 0.0;
        for i in 0..n {
            let mut acc = xs[(row, i)];
            for (k, wk) in w.iter().enumerate().take(i) {
                acc -= l[(i, k)] * wk;
            }
            w[i] = acc / l[(i, i)];
            quad += w[i] * w[i];
        }
        let log_joint = -(n as f64) * half_log_2pi - 0.5 * log_det - 0.5 * quad;
        let log_marginals: f64 = (0..n)
            .map(|i| {
                let s = sigma[(i, i)];
                let x = xs[(row, i)];
                -half_log_2pi - 0.5 * s.ln() - x * x / (2.0 * s)
            })
            .sum();
        log_ratios.push(log_joint - log_marginals);
    }
    let m = num_samples as f64;
    let mean = log_ratios.iter().sum::<f64>() / m;
    let std_error = if num_samples > 1 {
        let var = log_ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate { mean, std_error })
}
