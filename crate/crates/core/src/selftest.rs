//! Numerical self-checks with fixed seeds, one verdict per check.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::{infonce_value, Critic, MiEstimatorKind, MiTermEstimator, ScoreMatrix};
use crate::decomposition::{build_plan, closed_form_plan_sum, PathKind, TcEstimator};
use crate::gaussian::{
    equicorrelated_sigma, mc_tc_oracle, random_correlation, sample, solve_rho_for_tc, tc_closed_form,
};
use crate::nn::{gradient_check, Mlp, Parameterized};

/// Relative error allowed between reverse-mode and finite-difference gradients.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Random parameter points closer than this to a ReLU kink (on the batch
/// being checked) are redrawn, since central differences are only valid
/// where the loss is smooth.
pub const KINK_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {:<24} {}", self.name, self.detail)
    }
}

fn outcome(name: impl Into<String>, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name: name.into(), passed, detail }
}

/// Runs every check. `quick` shrinks sample counts so the suite finishes
/// in a few seconds.
pub fn run_selftest(quick: bool) -> Vec<CheckOutcome> {
    let mut out = vec![
        decomposition_identity(if quick { 20 } else { 100 }),
        target_calibration(),
        mlp_gradient(),
    ];
    for kind in MiEstimatorKind::ALL {
        out.push(estimator_gradient(kind, if quick { 3 } else { 10 }));
    }
    out.push(infonce_cap(if quick { 50 } else { 400 }));
    out.push(mc_oracle(if quick { 20_000 } else { 100_000 }));
    out
}

/// Plan sums against `tc_closed_form` on random correlation matrices.
pub fn decomposition_identity(models: usize) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut failure = None;
    for k in 0..models {
        let n = 2 + k % 7;
        let model = match random_correlation(n, &mut rng) {
            Ok(m) => m,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let tc = tc_closed_form(&model);
        for kind in PathKind::ALL {
            match build_plan(n, kind).and_then(|p| closed_form_plan_sum(&model, &p)) {
                Ok(sum) => worst = worst.max((sum - tc).abs()),
                Err(e) => failure = Some(e.to_string()),
            }
        }
    }
    match failure {
        Some(e) => outcome("decomposition identity", false, e),
        None => outcome(
            "decomposition identity",
            worst < 1e-9,
            format!("{models} models, max |plan sum - TC| = {worst:.3e}"),
        ),
    }
}

/// Solved correlations reproduce the reference targets.
pub fn target_calibration() -> CheckOutcome {
    let mut worst = 0.0f64;
    for target in [2.0, 4.0, 6.0, 8.0, 10.0] {
        let residual = solve_rho_for_tc(4, target)
            .and_then(|rho| equicorrelated_sigma(4, rho))
            .map(|m| (tc_closed_form(&m) - target).abs())
            .unwrap_or(f64::INFINITY);
        worst = worst.max(residual);
    }
    outcome("target calibration", worst < 1e-9, format!("max residual {worst:.3e}"))
}

/// Backward pass of a plain MLP on a squared-output loss.
pub fn mlp_gradient() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let net = Mlp::init(3, 20, 2, &mut rng);
    let x = DMatrix::from_fn(16, 3, |_, _| rng.random::<f64>() * 4.0 - 2.0);
    let loss = |p: &[f64]| {
        let mut m = net.clone();
        m.set_flat_params(p).expect("same layout");
        let (y, cache) = m.forward(&x).expect("shapes match");
        let value = 0.5 * y.iter().map(|v| v * v).sum::<f64>();
        let (g, _) = m.backward(&cache, &y).expect("fresh cache");
        (value, g.flat_params())
    };
    gradient_outcome("mlp backward", loss, &net.flat_params())
}

/// Compares a loss's reverse-mode gradient against central differences.
pub fn gradient_outcome<F>(name: &str, loss: F, params: &[f64]) -> CheckOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let err = gradient_check(loss, params, FD_STEP);
    outcome(name, err < GRADIENT_TOLERANCE, format!("max relative error {err:.3e}"))
}

/// Training objective of one estimator kind at `points` random parameter
/// draws: four variables split 2 + 2, batches of 16.
pub fn estimator_gradient(kind: MiEstimatorKind, points: usize) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103 + kind_seed(kind));
    let model = equicorrelated_sigma(4, 0.6).expect("valid rho");
    let mut worst = 0.0f64;
    for _ in 0..points {
        let batch = sample(&model, 16, &mut rng);
        let u = batch.columns(0, 2).into_owned();
        let v = batch.columns(2, 2).into_owned();
        let est = loop {
            let est = MiTermEstimator::new(kind, 2, 2, 20, 1e-4, &mut rng);
            if kink_distance(&est, &u, &v) >= KINK_MARGIN {
                break est;
            }
        };
        let p0 = est.params();
        let loss = |p: &[f64]| {
            let mut e = est.clone();
            e.set_params(p).expect("same layout");
            e.objective(&u, &v).expect("valid batch")
        };
        worst = worst.max(gradient_check(loss, &p0, FD_STEP));
    }
    outcome(
        format!("gradient {kind}"),
        worst < GRADIENT_TOLERANCE,
        format!("{points} points, max relative error {worst:.3e}"),
    )
}

/// Smallest `|preactivation|` of any hidden unit over the inputs the
/// estimator's objective evaluates on `(u, v)`.
pub fn kink_distance(est: &MiTermEstimator, u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    match est.critic() {
        Critic::Pairwise(net) => {
            let du = u.ncols();
            let w = net.w1();
            let a = u * w.columns(0, du).transpose() + DMatrix::from_fn(u.nrows(), w.nrows(), |_, h| net.b1()[h]);
            let b = v * w.columns(du, v.ncols()).transpose();
            let mut min = f64::INFINITY;
            for i in 0..a.nrows() {
                for j in 0..b.nrows() {
                    for h in 0..w.nrows() {
                        min = min.min((a[(i, h)] + b[(j, h)]).abs());
                    }
                }
            }
            min
        }
        Critic::Conditional(head) => [&head.mu_net, &head.logvar_net]
            .into_iter()
            .map(|net| {
                let z = u * net.w1().transpose();
                let mut min = f64::INFINITY;
                for i in 0..z.nrows() {
                    for h in 0..z.ncols() {
                        min = min.min((z[(i, h)] + net.b1()[h]).abs());
                    }
                }
                min
            })
            .fold(f64::INFINITY, f64::min),
    }
}

fn kind_seed(kind: MiEstimatorKind) -> u64 {
    MiEstimatorKind::ALL.iter().position(|k| *k == kind).unwrap_or(0) as u64
}

/// InfoNCE never exceeds `ln N` per term: on random score matrices, and on
/// every step of a short line-path run at a high target.
pub fn infonce_cap(train_steps: usize) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let n = 16;
    let cap = (n as f64).ln();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..500 {
        let scale = rng.random::<f64>() * 100.0;
        let m = DMatrix::from_fn(n, n, |i, j| {
            let bonus = if i == j { scale } else { 0.0 };
            bonus + scale * (rng.random::<f64>() - 0.5)
        });
        let s = ScoreMatrix::new(m).expect("square");
        worst = worst.max(infonce_value(&s) - cap);
    }

    let dim = 4;
    let mut run = || -> crate::Result<f64> {
        let model = equicorrelated_sigma(dim, solve_rho_for_tc(dim, 8.0)?)?;
        let plan = build_plan(dim, PathKind::Line)?;
        let mut est = TcEstimator::new(plan, MiEstimatorKind::InfoNce, &[1; 4], 20, 1e-3, &mut rng)?;
        let mut excess = f64::NEG_INFINITY;
        for _ in 0..train_steps {
            let step = est.train_step(&sample(&model, n, &mut rng))?;
            excess = excess.max(step.total - (dim - 1) as f64 * cap);
        }
        Ok(excess)
    };
    match run() {
        Ok(excess) => outcome(
            "infonce cap",
            worst <= 0.0 && excess <= 0.0,
            format!("max value - ln N = {worst:.3e}, max run excess over 3 ln N = {excess:.3e}"),
        ),
        Err(e) => outcome("infonce cap", false, e.to_string()),
    }
}

/// Monte-Carlo TC against the closed form within three standard errors.
pub fn mc_oracle(samples: usize) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst = 0.0f64;
    for rho in [0.3, 0.5, 0.826] {
        let model = equicorrelated_sigma(4, rho).expect("valid rho");
        match mc_tc_oracle(&model, samples, &mut rng) {
            Ok(est) => worst = worst.max((est.mean - tc_closed_form(&model)).abs() / est.std_error),
            Err(e) => return outcome("mc oracle", false, e.to_string()),
        }
    }
    outcome(
        "mc oracle",
        worst < 3.0,
        format!("{samples} samples, max deviation {worst:.2} standard errors"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes_and_is_deterministic() {
        let a = run_selftest(true);
        for c in &a {
            assert!(c.passed, "{c}");
        }
        assert_eq!(a.len(), 9);
        assert_eq!(a, run_selftest(true));
    }

    #[test]
    fn corrupted_gradients_are_caught() {
        let params = [0.3, -1.2, 2.0];
        let honest = |p: &[f64]| (p.iter().map(|x| x * x).sum(), p.iter().map(|x| 2.0 * x).collect());
        assert!(gradient_outcome("ok", honest, &params).passed);
        let flipped = |p: &[f64]| {
            let mut g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            g[1] = -g[1];
            (p.iter().map(|x| x * x).sum(), g)
        };
        assert!(!gradient_outcome("bad", flipped, &params).passed);
        let scaled = |p: &[f64]| (p.iter().map(|x| x * x).sum(), p.iter().map(|x| 2.002 * x).collect());
        assert!(!gradient_outcome("bad", scaled, &params).passed);
    }

    #[test]
    fn verdict_lines() {
        let c = outcome("x", false, "detail".into());
        assert_eq!(c.to_string(), format!("FAIL {:<24} detail", "x"));
    }
}
