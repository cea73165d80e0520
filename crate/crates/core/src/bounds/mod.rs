//! Variational mutual-information bounds on paired batches `(u, v)`.
//!
//! Three lower bounds (MINE, NWJ, InfoNCE) score pairs with a scalar critic
//! `f(u, v)`; the CLUB upper bound instead fits a conditional density
//! `q(v | u)` by maximum likelihood and contrasts joint against shuffled
//! pairs. Within a batch of `N` joint samples, the `N(N-1)` off-diagonal
//! pairs serve as product-of-marginals samples.

mod objectives;
mod scores;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;

pub use objectives::{
    club_train_loss, club_value, infonce_loss, infonce_value, mine_loss, mine_loss_fixed,
    mine_value, nwj_loss, nwj_value, ScoreLoss, MINE_EMA_DECAY,
};
pub use scores::{score_matrix, ScoreMatrix};

use crate::error::{Error, Result};
use crate::nn::{AdamState, CondGaussianHead, Mlp, Parameterized};

/// Which variational bound a term estimator optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MiEstimatorKind {
    Mine,
    Nwj,
    InfoNce,
    Club,
}

impl MiEstimatorKind {
    pub const ALL: [MiEstimatorKind; 4] = [
        MiEstimatorKind::Mine,
        MiEstimatorKind::Nwj,
        MiEstimatorKind::InfoNce,
        MiEstimatorKind::Club,
    ];

    /// Lower bounds underestimate MI at the optimum; CLUB overestimates it.
    pub fn is_lower_bound(self) -> bool {
        !matches!(self, MiEstimatorKind::Club)
    }

    /// Lower-case identifier used in file names and CSV columns.
    pub fn as_str(self) -> &'static str {
        match self {
            MiEstimatorKind::Mine => "mine",
            MiEstimatorKind::Nwj => "nwj",
            MiEstimatorKind::InfoNce => "infonce",
            MiEstimatorKind::Club => "club",
        }
    }

    pub(crate) fn index(self) -> u64 {
        match self {
            MiEstimatorKind::Mine => 0,
            MiEstimatorKind::Nwj => 1,
            MiEstimatorKind::InfoNce => 2,
            MiEstimatorKind::Club => 3,
        }
    }
}

impl fmt::Display for MiEstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MiEstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mine" => Ok(MiEstimatorKind::Mine),
            "nwj" => Ok(MiEstimatorKind::Nwj),
            "infonce" => Ok(MiEstimatorKind::InfoNce),
            "club" => Ok(MiEstimatorKind::Club),
            other => Err(Error::param(format!(
                "unknown estimator '{other}' (expected mine, nwj, infonce or club)"
            ))),
        }
    }
}

/// The trainable part of a term estimator.
#[derive(Debug, Clone)]
pub enum Critic {
    /// Scalar critic on `concat(u, v)`.
    Pairwise(Mlp),
    /// Conditional density `q(v | u)`.
    Conditional(CondGaussianHead),
}

impl Parameterized for Critic {
    fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            Critic::Pairwise(m) => m.param_slices(),
            Critic::Conditional(h) => h.param_slices(),
        }
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Critic::Pairwise(m) => m.param_slices_mut(),
            Critic::Conditional(h) => h.param_slices_mut(),
        }
    }
}

/// Estimator of one MI term: a critic, its optimizer and, for MINE, the
/// moving average of the partition term.
#[derive(Debug, Clone)]
pub struct MiTermEstimator {
    kind: MiEstimatorKind,
    u_dim: usize,
    v_dim: usize,
    critic: Critic,
    adam: AdamState,
    ema_denominator: f64,
}

impl MiTermEstimator {
    /// Freshly initialized estimator for `I(u; v)` with `u_dim`/`v_dim` wide
    /// blocks.
    pub fn new<R: Rng + ?Sized>(
        kind: MiEstimatorKind,
        u_dim: usize,
        v_dim: usize,
        hidden: usize,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        let critic = match kind {
            MiEstimatorKind::Club => {
                Critic::Conditional(CondGaussianHead::init(u_dim, v_dim, hidden, rng))
            }
            _ => Critic::Pairwise(Mlp::init(u_dim + v_dim, hidden, 1, rng)),
        };
        Self::with_critic(kind, u_dim, v_dim, critic, lr).expect("widths match by construction")
    }

    /// Wraps an existing critic, checking that its shape fits the kind.
    pub fn with_critic(
        kind: MiEstimatorKind,
        u_dim: usize,
        v_dim: usize,
        critic: Critic,
        lr: f64,
    ) -> Result<Self> {
        let ok = match (&critic, kind) {
            (Critic::Conditional(h), MiEstimatorKind::Club) => {
                h.u_dim() == u_dim && h.v_dim() == v_dim
            }
            (Critic::Pairwise(m), k) if k.is_lower_bound() => {
                m.in_dim() == u_dim + v_dim && m.out_dim() == 1
            }
            _ => false,
        };
        if !ok {
            return Err(Error::param(format!(
                "critic does not fit a {kind} estimator on {u_dim} + {v_dim} inputs"
            )));
        }
        let adam = AdamState::new(critic.num_params(), lr);
        Ok(MiTermEstimator { kind, u_dim, v_dim, critic, adam, ema_denominator: 1.0 })
    }

    pub fn kind(&self) -> MiEstimatorKind {
        self.kind
    }

    pub fn u_dim(&self) -> usize {
        self.u_dim
    }

    pub fn v_dim(&self) -> usize {
        self.v_dim
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn ema_denominator(&self) -> f64 {
        self.ema_denominator
    }

    pub fn steps(&self) -> u64 {
        self.adam.step_count()
    }

    /// Replaces the critic parameters (optimizer state is kept).
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        self.critic.set_flat_params(flat)
    }

    pub fn params(&self) -> Vec<f64> {
        self.critic.flat_params()
    }

    /// Bound value on a batch, without touching any state.
    pub fn value(&self, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
        match &self.critic {
            Critic::Conditional(head) => club_value(head, u, v),
            Critic::Pairwise(net) => {
                let s = score_matrix(net, u, v)?;
                Ok(match self.kind {
                    MiEstimatorKind::Mine => mine_value(&s),
                    MiEstimatorKind::Nwj => nwj_value(&s),
                    MiEstimatorKind::InfoNce => infonce_value(&s),
                    MiEstimatorKind::Club => unreachable!("CLUB uses a conditional critic"),
                })
            }
        }
    }

    /// The training objective and its flat parameter gradient on a batch.
    /// For MINE the partition term is divided by the current moving average,
    /// held fixed.
    pub fn objective(&self, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
        match &self.critic {
            Critic::Conditional(head) => {
                let (loss, grads) = club_train_loss(head, u, v)?;
                Ok((loss, grads.flat_params()))
            }
            Critic::Pairwise(net) => {
                let (s, cache) = scores::score_matrix_with_cache(net, u, v)?;
                let step = match self.kind {
                    MiEstimatorKind::Mine => mine_loss_fixed(&s, self.ema_denominator),
                    MiEstimatorKind::Nwj => nwj_loss(&s),
                    _ => infonce_loss(&s),
                };
                let grads = scores::pairwise_backward(net, &cache, &step.grad)?;
                Ok((step.loss, grads.flat_params()))
            }
        }
    }

    /// One optimizer step on a joint batch. Returns the bound value measured
    /// on this batch before the update.
    pub fn train_step(&mut self, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
        let step = self.adam.step_count() + 1;
        let kind = self.kind;
        let fail = |message: String| Error::Training { step, message: format!("{kind}: {message}") };
        let annotate = |e: Error| match e {
            Error::Training { message, .. } => fail(message),
            other => other,
        };

        match &mut self.critic {
            Critic::Conditional(head) => {
                if u.nrows() < 2 || u.nrows() != v.nrows() {
                    return Err(Error::param("CLUB needs matching batches of at least two samples"));
                }
                let fwd = head.forward(u)?;
                let l = objectives::club_log_density_matrix(&fwd, v);
                let value = objectives::club_value_from_matrix(&l);
                let (loss, grads) = objectives::club_loss_from_forward(head, &fwd, v)?;
                if !loss.is_finite() || !value.is_finite() {
                    return Err(fail(format!("non-finite loss {loss} (value {value})")));
                }
                self.adam.step(head, &grads).map_err(annotate)?;
                Ok(value)
            }
            Critic::Pairwise(net) => {
                let (s, cache) = scores::score_matrix_with_cache(net, u, v)?;
                let (value, step_loss, ema) = match kind {
                    MiEstimatorKind::Mine => {
                        let (l, ema) = mine_loss(&s, self.ema_denominator).map_err(annotate)?;
                        (mine_value(&s), l, ema)
                    }
                    MiEstimatorKind::Nwj => (nwj_value(&s), nwj_loss(&s), self.ema_denominator),
                    _ => (infonce_value(&s), infonce_loss(&s), self.ema_denominator),
                };
                if !step_loss.loss.is_finite() || !value.is_finite() {
                    return Err(fail(format!(
                        "non-finite loss {} (value {value})",
                        step_loss.loss
                    )));
                }
                let grads = scores::pairwise_backward(net, &cache, &step_loss.grad)?;
                self.adam.step(net, &grads).map_err(annotate)?;
                self.ema_denominator = ema;
                Ok(value)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{equicorrelated_sigma, sample};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn split(batch: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (batch.columns(0, 1).into_owned(), batch.columns(1, 1).into_owned())
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MiEstimatorKind::ALL {
            assert_eq!(k.as_str().parse::<MiEstimatorKind>().unwrap(), k);
        }
        assert!("smile".parse::<MiEstimatorKind>().is_err());
        assert!(!MiEstimatorKind::Club.is_lower_bound());
        assert!(MiEstimatorKind::InfoNce.is_lower_bound());
    }

    #[test]
    fn zero_critic_mine_starts_at_zero() {
        let est = MiTermEstimator::with_critic(
            MiEstimatorKind::Mine,
            1,
            1,
            Critic::Pairwise(Mlp::zeros(2, 20, 1)),
            1e-4,
        )
        .unwrap();
        let mut est = est;
        let model = equicorrelated_sigma(2, 0.9).unwrap();
        let batch = sample(&model, 64, &mut ChaCha8Rng::seed_from_u64(1));
        let (u, v) = split(&batch);
        assert_eq!(est.train_step(&u, &v).unwrap(), 0.0);
        // All scores are 0, so the moving average stays at 1.
        assert_eq!(est.ema_denominator(), 1.0);
    }

    #[test]
    fn critic_shape_is_checked() {
        let bad = MiTermEstimator::with_critic(
            MiEstimatorKind::Club,
            1,
            1,
            Critic::Pairwise(Mlp::zeros(2, 4, 1)),
            1e-4,
        );
        assert!(bad.is_err());
        let bad = MiTermEstimator::with_critic(
            MiEstimatorKind::Nwj,
            2,
            1,
            Critic::Pairwise(Mlp::zeros(2, 4, 1)),
            1e-4,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let model = equicorrelated_sigma(2, 0.8).unwrap();
            let mut est = MiTermEstimator::new(MiEstimatorKind::InfoNce, 1, 1, 20, 1e-3, &mut rng);
            (0..30)
                .map(|_| {
                    let (u, v) = split(&sample(&model, 32, &mut rng));
                    est.train_step(&u, &v).unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn objectives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let model = equicorrelated_sigma(4, 0.6).unwrap();
        let batch = sample(&model, 16, &mut rng);
        let u = batch.columns(0, 2).into_owned();
        let v = batch.columns(2, 2).into_owned();
        for kind in MiEstimatorKind::ALL {
            let mut est = MiTermEstimator::new(kind, 2, 2, 20, 1e-4, &mut rng);
            // Move the MINE average away from its initial value.
            est.ema_denominator = 1.3;
            let p0 = est.params();
            let loss = |p: &[f64]| {
                let mut e = est.clone();
                e.set_params(p).unwrap();
                e.objective(&u, &v).unwrap()
            };
            let err = crate::nn::gradient_check(loss, &p0, 1e-5);
            assert!(err < 1e-4, "{kind}: {err}");
        }
    }

    /// With `q(v | u)` equal to the true Gaussian conditional `N(βu, σ²)`,
    /// the contrast averages `(v - βu')² / 2σ²` over independent pairs, whose
    /// expectation is `(1 + (1 - σ²)) / 2σ²`, against `1/2` on joint pairs.
    /// The bound is therefore `(1 - σ²) / σ² = e^{2I} - 1`, not `I`.
    #[test]
    fn club_with_exact_conditional_matches_its_gaussian_value() {
        use crate::gaussian::{mi_closed_form, solve_rho_for_tc, IndexSet};
        use crate::nn::CondGaussianHead;
        use nalgebra::DVector;

        let rho = solve_rho_for_tc(4, 2.0).unwrap();
        let model = equicorrelated_sigma(4, rho).unwrap();
        let s = model.sigma();
        let s_uu = s.view((0, 0), (3, 3)).into_owned();
        let s_uv = s.view((0, 3), (3, 1)).into_owned();
        let beta = s_uu.clone().cholesky().unwrap().solve(&s_uv);
        let cond_var = 1.0 - (s_uv.transpose() * &beta)[(0, 0)];

        let mut w1 = DMatrix::zeros(2, 3);
        for k in 0..3 {
            w1[(0, k)] = beta[k];
            w1[(1, k)] = -beta[k];
        }
        let mu = Mlp::from_parts(w1, DVector::zeros(2), DMatrix::from_row_slice(1, 2, &[1.0, -1.0]), DVector::zeros(1))
            .unwrap();
        let logvar = Mlp::from_parts(
            DMatrix::zeros(1, 3),
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
            DVector::from_element(1, cond_var.ln()),
        )
        .unwrap();
        let head = CondGaussianHead::new(mu, logvar).unwrap();

        let batch = sample(&model, 3000, &mut ChaCha8Rng::seed_from_u64(31));
        let u = batch.columns(0, 3).into_owned();
        let v = batch.columns(3, 1).into_owned();
        let value = club_value(&head, &u, &v).unwrap();

        let mi = mi_closed_form(&model, &IndexSet::range(0, 3), &IndexSet::range(3, 4)).unwrap();
        let expected = (1.0 - cond_var) / cond_var;
        assert!((expected - ((2.0 * mi).exp() - 1.0)).abs() < 1e-9);
        assert!((value - expected).abs() < 0.05 * expected, "value {value}, expected {expected}");
        assert!(value > 1.6 * mi);
    }

    #[test]
    fn club_training_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let model = equicorrelated_sigma(2, 0.9).unwrap();
        let mut est = MiTermEstimator::new(MiEstimatorKind::Club, 1, 1, 20, 1e-3, &mut rng);
        let mut window_means = Vec::new();
        let mut acc = 0.0;
        for step in 1..=2000 {
            let (u, v) = split(&sample(&model, 64, &mut rng));
            acc += est.objective(&u, &v).unwrap().0;
            est.train_step(&u, &v).unwrap();
            if step % 200 == 0 {
                window_means.push(acc / 200.0);
                acc = 0.0;
            }
        }
        assert!(
            window_means.windows(2).all(|w| w[1] < w[0] + 0.02),
            "{window_means:?}"
        );
        assert!(window_means.last().unwrap() < &(window_means[0] - 0.3));
    }
}
