//! Bound values and training losses.
//!
//! Every log-mean-exp is max-shifted. Score-based losses return their
//! gradient with respect to the score matrix; the caller chains it through
//! the critic.

use nalgebra::DMatrix;

use super::scores::ScoreMatrix;
use crate::error::{Error, Result};
use crate::nn::row_logpdf;
use crate::nn::{CondGaussianForward, CondGaussianGrads, CondGaussianHead};

/// Decay of the moving average that debiases MINE's gradient.
pub const MINE_EMA_DECAY: f64 = 0.99;
const MIN_EMA: f64 = 1e-30;

/// A scalar loss together with its gradient with respect to the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLoss {
    pub loss: f64,
    pub grad: DMatrix<f64>,
}

fn mean_diag(s: &DMatrix<f64>) -> f64 {
    s.diagonal().sum() / s.nrows() as f64
}

/// `ln mean_{i≠j} exp(s_ij + shift)`.
fn log_mean_exp_off_diag(s: &DMatrix<f64>, shift: f64) -> f64 {
    let n = s.nrows();
    let mut max = f64::NEG_INFINITY;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                max = max.max(s[(i, j)]);
            }
        }
    }
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                acc += (s[(i, j)] - max).exp();
            }
        }
    }
    max + shift + acc.ln() - ((n * (n - 1)) as f64).ln()
}

/// `mean(diag) - ln mean_{i≠j} exp(s_ij)`.
pub fn mine_value(scores: &ScoreMatrix) -> f64 {
    let s = scores.as_matrix();
    mean_diag(s) - log_mean_exp_off_diag(s, 0.0)
}

/// `mean(diag) - mean_{i≠j} exp(s_ij - 1)`.
pub fn nwj_value(scores: &ScoreMatrix) -> f64 {
    let s = scores.as_matrix();
    mean_diag(s) - log_mean_exp_off_diag(s, -1.0).exp()
}

/// Per row: `ln Σ_j exp(s_ij - s_ii)` (always ≥ 0) and the row softmax.
fn infonce_rows(s: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = s.nrows();
    let mut lse = Vec::with_capacity(n);
    let mut softmax = DMatrix::zeros(n, n);
    for i in 0..n {
        let max = s.row(i).max();
        let mut acc = 0.0;
        for j in 0..n {
            let e = (s[(i, j)] - max).exp();
            softmax[(i, j)] = e;
            acc += e;
        }
        for j in 0..n {
            softmax[(i, j)] /= acc;
        }
        // Both summands are non-negative, so the InfoNCE value below never
        // exceeds ln N, not even by rounding.
        lse.push((max - s[(i, i)]) + acc.ln());
    }
    (lse, softmax)
}

/// `(1/N) Σ_i [s_ii - ln((1/N) Σ_j exp(s_ij))]`, bounded above by `ln N`.
pub fn infonce_value(scores: &ScoreMatrix) -> f64 {
    let s = scores.as_matrix();
    let n = s.nrows() as f64;
    let (lse, _) = infonce_rows(s);
    n.ln() - lse.iter().sum::<f64>() / n
}

/// Negated InfoNCE bound.
pub fn infonce_loss(scores: &ScoreMatrix) -> ScoreLoss {
    let s = scores.as_matrix();
    let n = s.nrows();
    let nf = n as f64;
    let (lse, mut grad) = infonce_rows(s);
    let loss = lse.iter().sum::<f64>() / nf - nf.ln();
    grad /= nf;
    for i in 0..n {
        grad[(i, i)] -= 1.0 / nf;
    }
    ScoreLoss { loss, grad }
}

/// Negated NWJ bound.
pub fn nwj_loss(scores: &ScoreMatrix) -> ScoreLoss {
    let s = scores.as_matrix();
    let n = s.nrows();
    let nf = n as f64;
    let pairs = (n * (n - 1)) as f64;
    let mut grad = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            grad[(i, j)] = if i == j {
                -1.0 / nf
            } else {
                (s[(i, j)] - 1.0).exp() / pairs
            };
        }
    }
    ScoreLoss { loss: -nwj_value(scores), grad }
}

/// The MINE surrogate with the partition term divided by a fixed
/// `denominator`: `-mean(diag) + mean_{i≠j} exp(s_ij) / denominator`.
pub fn mine_loss_fixed(scores: &ScoreMatrix, denominator: f64) -> ScoreLoss {
    let s = scores.as_matrix();
    let n = s.nrows();
    let nf = n as f64;
    let pairs = (n * (n - 1)) as f64;
    let mean_exp = log_mean_exp_off_diag(s, 0.0).exp();
    let mut grad = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            grad[(i, j)] = if i == j {
                -1.0 / nf
            } else {
                s[(i, j)].exp() / (pairs * denominator)
            };
        }
    }
    ScoreLoss { loss: -mean_diag(s) + mean_exp / denominator, grad }
}

/// Updates the moving average of `mean_{i≠j} exp(s_ij)` and returns the
/// debiased MINE loss built on the updated average, plus that average.
pub fn mine_loss(scores: &ScoreMatrix, ema_denominator: f64) -> Result<(ScoreLoss, f64)> {
    let mean_exp = log_mean_exp_off_diag(scores.as_matrix(), 0.0).exp();
    let ema = MINE_EMA_DECAY * ema_denominator + (1.0 - MINE_EMA_DECAY) * mean_exp;
    if !ema.is_finite() || ema < MIN_EMA {
        return Err(Error::Training {
            step: 0,
            message: format!("MINE moving average left the representable range ({ema:e})"),
        });
    }
    Ok((mine_loss_fixed(scores, ema), ema))
}

/// `L[i, j] = ln q(v_j | u_i)`.
pub(crate) fn club_log_density_matrix(fwd: &CondGaussianForward, v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    DMatrix::from_fn(n, n, |i, j| row_logpdf(fwd, i, v, j))
}

/// `mean_i L_ii - mean_i mean_j L_ij` for the log-density matrix above.
pub(crate) fn club_value_from_matrix(l: &DMatrix<f64>) -> f64 {
    let n = l.nrows() as f64;
    let positive = l.diagonal().sum() / n;
    let negative = l.row_iter().map(|row| row.sum() / n).sum::<f64>() / n;
    positive - negative
}

fn check_club_batch(head: &CondGaussianHead, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<()> {
    if u.nrows() != v.nrows() || u.nrows() < 2 {
        return Err(Error::param(format!(
            "CLUB needs matching batches of at least two samples, got {} and {}",
            u.nrows(),
            v.nrows()
        )));
    }
    if u.ncols() != head.u_dim() || v.ncols() != head.v_dim() {
        return Err(Error::param(format!(
            "head maps {} -> {} but batch widths are {} and {}",
            head.u_dim(),
            head.v_dim(),
            u.ncols(),
            v.ncols()
        )));
    }
    Ok(())
}

/// Contrastive log-ratio upper bound under the head's `q(v | u)`.
pub fn club_value(head: &CondGaussianHead, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    check_club_batch(head, u, v)?;
    let fwd = head.forward(u)?;
    Ok(club_value_from_matrix(&club_log_density_matrix(&fwd, v)))
}

/// Negative conditional log-likelihood of the joint pairs and its gradient.
pub fn club_train_loss(
    head: &CondGaussianHead,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<(f64, CondGaussianGrads)> {
    check_club_batch(head, u, v)?;
    let fwd = head.forward(u)?;
    club_loss_from_forward(head, &fwd, v)
}

pub(crate) fn club_loss_from_forward(
    head: &CondGaussianHead,
    fwd: &CondGaussianForward,
    v: &DMatrix<f64>,
) -> Result<(f64, CondGaussianGrads)> {
    let n = v.nrows();
    let nf = n as f64;
    let loss = -(0..n).map(|r| row_logpdf(fwd, r, v, r)).sum::<f64>() / nf;
    let row_grads = vec![-1.0 / nf; n];
    let (grads, _, _) = head.logpdf_backward(fwd, v, &row_grads)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mlp, Parameterized};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant(n: usize, c: f64) -> ScoreMatrix {
        ScoreMatrix::new(DMatrix::from_element(n, n, c)).unwrap()
    }

    fn random_scores(n: usize, seed: u64, scale: f64) -> ScoreMatrix {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScoreMatrix::new(DMatrix::from_fn(n, n, |_, _| scale * (rng.random::<f64>() - 0.5))).unwrap()
    }

    /// Finite-difference gradient of a score-matrix functional.
    fn fd_grad(f: impl Fn(&ScoreMatrix) -> f64, s: &ScoreMatrix) -> DMatrix<f64> {
        let n = s.n();
        let h = 1e-6;
        DMatrix::from_fn(n, n, |i, j| {
            let mut plus = s.as_matrix().clone();
            plus[(i, j)] += h;
            let mut minus = s.as_matrix().clone();
            minus[(i, j)] -= h;
            (f(&ScoreMatrix::new(plus).unwrap()) - f(&ScoreMatrix::new(minus).unwrap())) / (2.0 * h)
        })
    }

    #[test]
    fn constant_scores() {
        for c in [-2.0, 0.0, 1.0, 3.5] {
            let s = constant(8, c);
            assert!(mine_value(&s).abs() < 1e-12);
            assert!(infonce_value(&s).abs() < 1e-12);
            let nwj = nwj_value(&s);
            assert!((nwj - (c - (c - 1.0_f64).exp())).abs() < 1e-12);
            assert!(nwj <= 1e-15);
        }
        assert!(nwj_value(&constant(4, 1.0)).abs() < 1e-15);
        assert!((nwj_value(&constant(4, 0.0)) + 0.3679).abs() < 1e-4);
    }

    #[test]
    fn infonce_saturates_at_log_n() {
        let n = 64;
        let s = ScoreMatrix::new(DMatrix::from_fn(n, n, |i, j| if i == j { 50.0 } else { -50.0 }))
            .unwrap();
        let v = infonce_value(&s);
        assert!((v - (64.0_f64).ln()).abs() < 1e-12);
        assert!(v <= (64.0_f64).ln());
        assert!(((64.0_f64).ln() - 4.1589).abs() < 1e-4);
    }

    #[test]
    fn infonce_never_exceeds_log_n() {
        for seed in 0..200 {
            let n = 2 + (seed as usize % 30);
            let s = random_scores(n, seed, 40.0);
            assert!(infonce_value(&s) <= (n as f64).ln());
        }
    }

    #[test]
    fn values_are_invariant_to_relabelling() {
        let s = random_scores(10, 3, 4.0);
        let perm = [3, 7, 1, 0, 9, 2, 8, 5, 6, 4];
        let p = s.permuted(&perm);
        assert!((mine_value(&s) - mine_value(&p)).abs() < 1e-10);
        assert!((nwj_value(&s) - nwj_value(&p)).abs() < 1e-10);
        assert!((infonce_value(&s) - infonce_value(&p)).abs() < 1e-10);
    }

    #[test]
    fn score_gradients_match_finite_differences() {
        let s = random_scores(6, 9, 3.0);
        let g = infonce_loss(&s).grad;
        let fd = fd_grad(|m| -infonce_value(m), &s);
        assert!((g - fd).abs().max() < 1e-7);

        let g = nwj_loss(&s).grad;
        let fd = fd_grad(|m| -nwj_value(m), &s);
        assert!((g - fd).abs().max() < 1e-7);

        let g = mine_loss_fixed(&s, 1.7).grad;
        let fd = fd_grad(|m| mine_loss_fixed(m, 1.7).loss, &s);
        assert!((g - fd).abs().max() < 1e-7);
    }

    #[test]
    fn mine_constant_case_gradient_pattern() {
        let n = 4;
        let (step, ema) = mine_loss(&constant(n, 0.0), 1.0).unwrap();
        assert_eq!(ema, 1.0);
        for i in 0..n {
            for j in 0..n {
                let expected = if i == j { -0.25 } else { 1.0 / 12.0 };
                assert!((step.grad[(i, j)] - expected).abs() < 1e-15);
            }
        }
        // Diagonal mass -1, off-diagonal mass +1.
        assert!(step.grad.sum().abs() < 1e-12);
    }

    #[test]
    fn mine_rejects_vanishing_average() {
        let err = mine_loss(&constant(3, -800.0), 1e-31).unwrap_err();
        assert!(matches!(err, Error::Training { .. }));
    }

    fn u_free_head(v_dim: usize, seed: u64) -> CondGaussianHead {
        // Zero first layers: outputs depend only on biases, never on u.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = CondGaussianHead::init(2, v_dim, 5, &mut rng);
        let mut mu = Mlp::zeros(2, 5, v_dim);
        let mut p = head.mu_net.flat_params();
        p.iter_mut().take(10).for_each(|x| *x = 0.0);
        p[10..15].copy_from_slice(&[0.3, 0.1, 0.7, 0.2, 0.9]);
        mu.set_flat_params(&p).unwrap();
        head.mu_net = mu;
        let mut lv = head.logvar_net.clone();
        let mut p = lv.flat_params();
        p.iter_mut().take(10).for_each(|x| *x = 0.0);
        p[10..15].copy_from_slice(&[0.5, 0.4, 0.1, 0.6, 0.8]);
        lv.set_flat_params(&p).unwrap();
        head.logvar_net = lv;
        head
    }

    #[test]
    fn club_with_u_free_head_is_zero() {
        let head = u_free_head(1, 4);
        let u = DMatrix::from_fn(16, 2, |i, k| (i as f64 * 0.9 + k as f64).sin());
        let v = DMatrix::from_fn(16, 1, |i, _| (i as f64 * 1.3).cos() * 2.0);
        assert!(club_value(&head, &u, &v).unwrap().abs() < 1e-12);
    }

    #[test]
    fn club_two_by_two_by_hand() {
        // mu(u) = u, logvar = 0 (linear mean head, zero log-variance head).
        let mu = Mlp::from_parts(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            nalgebra::DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            nalgebra::DVector::zeros(1),
        )
        .unwrap();
        let head = CondGaussianHead::new(mu, Mlp::zeros(1, 2, 1)).unwrap();
        let u = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let v = DMatrix::from_column_slice(2, 1, &[0.5, 2.0]);
        // L_ij = -½ln2π - (v_j - u_i)²/2; the constants cancel.
        let sq = |x: f64| -0.5 * x * x;
        let (l00, l01, l10, l11) = (sq(0.5), sq(2.0), sq(-0.5), sq(1.0));
        let expected = (l00 + l11) / 2.0 - (l00 + l01 + l10 + l11) / 4.0;
        assert!((club_value(&head, &u, &v).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn club_value_invariant_to_relabelling() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let head = CondGaussianHead::init(2, 1, 8, &mut rng);
        let u = DMatrix::from_fn(7, 2, |i, k| ((i * 2 + k) as f64 * 0.7).sin());
        let v = DMatrix::from_fn(7, 1, |i, _| (i as f64 * 0.4).cos());
        let perm = [6, 2, 4, 0, 1, 5, 3];
        let up = DMatrix::from_fn(7, 2, |i, k| u[(perm[i], k)]);
        let vp = DMatrix::from_fn(7, 1, |i, k| v[(perm[i], k)]);
        let a = club_value(&head, &u, &v).unwrap();
        let b = club_value(&head, &up, &vp).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}
