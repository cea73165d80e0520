//! Pairwise critic scores `f(u_i, v_j)` over a batch.
//!
//! The critic's first layer acting on `concat(u_i, v_j)` splits into
//! `W_u u_i + W_v v_j + b1`, so both halves are computed once per sample and
//! combined per pair. That keeps an `N × N` score matrix at `O(N² · hidden)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads};

/// A square matrix of critic scores: entry `(i, j)` scores `(u_i, v_j)`.
/// The diagonal holds joint pairs, off-diagonal entries stand in for the
/// product of marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(DMatrix<f64>);

impl ScoreMatrix {
    pub fn new(scores: DMatrix<f64>) -> Result<Self> {
        if !scores.is_square() || scores.nrows() < 2 {
            return Err(Error::param(format!(
                "score matrix must be square with N >= 2, got {:?}",
                scores.shape()
            )));
        }
        Ok(ScoreMatrix(scores))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Applies the same relabelling to rows and columns.
    pub fn permuted(&self, perm: &[usize]) -> ScoreMatrix {
        let n = self.n();
        ScoreMatrix(DMatrix::from_fn(n, n, |i, j| self.0[(perm[i], perm[j])]))
    }
}

/// Per-sample first-layer halves kept for [`pairwise_backward`].
#[derive(Debug, Clone)]
pub struct PairwiseCache {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    // Row-major `N × hidden`: `W_u u_i + b1` and `W_v v_j`.
    a: Vec<f64>,
    b: Vec<f64>,
    version: u64,
}

fn check_inputs(critic: &Mlp, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<()> {
    let n = u.nrows();
    if v.nrows() != n {
        return Err(Error::param(format!(
            "batch sizes differ: u has {n} rows, v has {}",
            v.nrows()
        )));
    }
    if n < 2 {
        return Err(Error::param(
            "contrastive bounds need at least two samples per batch",
        ));
    }
    if u.ncols() + v.ncols() != critic.in_dim() || critic.out_dim() != 1 {
        return Err(Error::param(format!(
            "critic expects {} inputs and one output, got u width {} + v width {}",
            critic.in_dim(),
            u.ncols(),
            v.ncols()
        )));
    }
    Ok(())
}

/// Half of the first layer applied to every row of `x`, using the weight
/// columns starting at `col0`. Returns a row-major `N × hidden` buffer.
fn half_layer(critic: &Mlp, x: &DMatrix<f64>, col0: usize, bias: Option<&DVector<f64>>) -> Vec<f64> {
    let hidden = critic.hidden_dim();
    let w1 = critic.w1();
    let mut out = vec![0.0; x.nrows() * hidden];
    for i in 0..x.nrows() {
        let row = &mut out[i * hidden..(i + 1) * hidden];
        for (h, cell) in row.iter_mut().enumerate() {
            let mut acc = bias.map_or(0.0, |b| b[h]);
            for k in 0..x.ncols() {
                acc += w1[(h, col0 + k)] * x[(i, k)];
            }
            *cell = acc;
        }
    }
    out
}

/// Scores every pair `(u_i, v_j)` with a scalar-output critic on
/// `concat(u_i, v_j)`.
pub fn score_matrix(critic: &Mlp, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<ScoreMatrix> {
    Ok(score_matrix_with_cache(critic, u, v)?.0)
}

pub(crate) fn score_matrix_with_cache(
    critic: &Mlp,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<(ScoreMatrix, PairwiseCache)> {
    check_inputs(critic, u, v)?;
    let n = u.nrows();
    let hidden = critic.hidden_dim();
    let a = half_layer(critic, u, 0, Some(critic.b1()));
    let b = half_layer(critic, v, u.ncols(), None);
    let w2: Vec<f64> = critic.w2().row(0).iter().copied().collect();
    let b2 = critic.b2()[0];

    let mut scores = DMatrix::zeros(n, n);
    for i in 0..n {
        let ai = &a[i * hidden..(i + 1) * hidden];
        for j in 0..n {
            let bj = &b[j * hidden..(j + 1) * hidden];
            let mut s = 0.0;
            for h in 0..hidden {
                s += w2[h] * (ai[h] + bj[h]).max(0.0);
            }
            scores[(i, j)] = s + b2;
        }
    }
    let cache = PairwiseCache { u: u.clone(), v: v.clone(), a, b, version: critic.version() };
    Ok((ScoreMatrix(scores), cache))
}

/// Critic parameter gradients of `Σ_ij grad[i, j] · score[i, j]`.
pub(crate) fn pairwise_backward(
    critic: &Mlp,
    cache: &PairwiseCache,
    grad: &DMatrix<f64>,
) -> Result<MlpGrads> {
    if cache.version != critic.version() {
        return Err(Error::Usage(
            "pairwise cache is stale: critic changed since the forward pass".into(),
        ));
    }
    let n = cache.u.nrows();
    if grad.shape() != (n, n) {
        return Err(Error::Usage(format!(
            "score gradient shape {:?} does not match batch size {n}",
            grad.shape()
        )));
    }
    let hidden = critic.hidden_dim();
    let w2: Vec<f64> = critic.w2().row(0).iter().copied().collect();
    let mut d_a = vec![0.0; n * hidden];
    let mut d_b = vec![0.0; n * hidden];
    let mut d_w2 = vec![0.0; hidden];
    let mut d_b2 = 0.0;
    for i in 0..n {
        let ai = &cache.a[i * hidden..(i + 1) * hidden];
        let dai = &mut d_a[i * hidden..(i + 1) * hidden];
        for j in 0..n {
            let g = grad[(i, j)];
            d_b2 += g;
            let bj = &cache.b[j * hidden..(j + 1) * hidden];
            let dbj = &mut d_b[j * hidden..(j + 1) * hidden];
            for h in 0..hidden {
                let z = ai[h] + bj[h];
                let on = if z > 0.0 { 1.0 } else { 0.0 };
                d_w2[h] += g * z * on;
                let t = g * w2[h] * on;
                dai[h] += t;
                dbj[h] += t;
            }
        }
    }

    let du = cache.u.ncols();
    let mut d_w1 = DMatrix::zeros(hidden, critic.in_dim());
    let mut d_b1 = DVector::zeros(hidden);
    for i in 0..n {
        for h in 0..hidden {
            let ga = d_a[i * hidden + h];
            let gb = d_b[i * hidden + h];
            d_b1[h] += ga;
            for k in 0..du {
                d_w1[(h, k)] += ga * cache.u[(i, k)];
            }
            for k in 0..cache.v.ncols() {
                d_w1[(h, du + k)] += gb * cache.v[(i, k)];
            }
        }
    }
    Ok(MlpGrads {
        w1: d_w1,
        b1: d_b1,
        w2: DMatrix::from_row_slice(1, hidden, &d_w2),
        b2: DVector::from_element(1, d_b2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Parameterized;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Oracle: run the critic on every concatenated pair explicitly.
    fn concat_pairs(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        let n = u.nrows();
        let (du, dv) = (u.ncols(), v.ncols());
        // Row index i * n + j holds concat(u_i, v_j).
        DMatrix::from_fn(n * n, du + dv, |r, c| {
            let (i, j) = (r / n, r % n);
            if c < du {
                u[(i, c)]
            } else {
                v[(j, c - du)]
            }
        })
    }

    fn batch(n: usize, d: usize, phase: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |i, k| ((i * 3 + k * 7) as f64 * 0.61 + phase).sin() * 1.3)
    }

    #[test]
    fn matches_explicit_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let critic = Mlp::init(3, 20, 1, &mut rng);
        let (u, v) = (batch(9, 2, 0.1), batch(9, 1, 0.9));
        let fast = score_matrix(&critic, &u, &v).unwrap();
        let (slow, _) = critic.forward(&concat_pairs(&u, &v)).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let d = fast.as_matrix()[(i, j)] - slow[(i * 9 + j, 0)];
                assert!(d.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_generic_mlp_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let critic = Mlp::init(4, 7, 1, &mut rng);
        let (u, v) = (batch(6, 2, 0.3), batch(6, 2, 1.7));
        let grad = DMatrix::from_fn(6, 6, |i, j| ((i * 6 + j) as f64 * 0.77).cos());
        let (_, cache) = score_matrix_with_cache(&critic, &u, &v).unwrap();
        let fast = pairwise_backward(&critic, &cache, &grad).unwrap();

        let (_, generic_cache) = critic.forward(&concat_pairs(&u, &v)).unwrap();
        let flat_grad = DMatrix::from_fn(36, 1, |r, _| grad[(r / 6, r % 6)]);
        let (slow, _) = critic.backward(&generic_cache, &flat_grad).unwrap();
        let diff: f64 = fast
            .flat_params()
            .iter()
            .zip(slow.flat_params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "max difference {diff}");
    }

    #[test]
    fn constant_critic_gives_constant_scores() {
        let mut critic = Mlp::zeros(2, 5, 1);
        let mut p = critic.flat_params();
        *p.last_mut().unwrap() = 0.75;
        critic.set_flat_params(&p).unwrap();
        let s = score_matrix(&critic, &batch(64, 1, 0.0), &batch(64, 1, 2.0)).unwrap();
        assert_eq!(s.n(), 64);
        assert!(s.as_matrix().iter().all(|&x| x == 0.75));
    }

    #[test]
    fn two_by_two_by_hand() {
        // f(u, v) = relu(u + v) - relu(u - v) + 0.5 with hidden width 2.
        let critic = Mlp::from_parts(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::from_element(1, 0.5),
        )
        .unwrap();
        let u = DMatrix::from_column_slice(2, 1, &[1.0, -2.0]);
        let v = DMatrix::from_column_slice(2, 1, &[0.5, 3.0]);
        let s = score_matrix(&critic, &u, &v).unwrap();
        // (1, .5): 1.5 - .5 + .5; (1, 3): 4 - 0 + .5; (-2, .5): 0 - 0 + .5; (-2, 3): 1 - 0 + .5
        let expected = DMatrix::from_row_slice(2, 2, &[1.5, 4.5, 0.5, 1.5]);
        assert_eq!(s.as_matrix(), &expected);
    }

    #[test]
    fn rejects_small_or_mismatched_batches() {
        let critic = Mlp::zeros(2, 3, 1);
        let one = DMatrix::zeros(1, 1);
        assert!(score_matrix(&critic, &one, &one).is_err());
        assert!(score_matrix(&critic, &DMatrix::zeros(3, 1), &DMatrix::zeros(2, 1)).is_err());
        assert!(score_matrix(&critic, &DMatrix::zeros(3, 2), &DMatrix::zeros(3, 1)).is_err());
        assert!(ScoreMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }
}
