use std::fs;
use std::path::Path;

use rand::Rng;

use crate::bounds::MiEstimatorKind;
use crate::decomposition::{PathKind, TcEstimator};
use crate::error::{Error, Result};
use crate::gaussian::{sample, tc_closed_form, GaussianModel};

use super::trace::{fmt_float, parse_field};

pub const METRICS_HEADER: &str = "estimator,path,target_tc,bias,variance,mse,eval_batches,seed";

/// Error moments of an estimator against the closed-form truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub bias: f64,
    /// Biased (divide by `n`) sample variance.
    pub variance: f64,
    pub mse: f64,
}

impl Metrics {
    /// Moments of `estimates` around `truth`. Each of the three quantities
    /// is computed directly from the sample, so `mse = bias² + variance`
    /// holds only up to rounding.
    pub fn from_estimates(estimates: &[f64], truth: f64) -> Result<Self> {
        if estimates.is_empty() {
            return Err(Error::param("metrics need at least one estimate"));
        }
        let n = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let variance = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n;
        Ok(Metrics { bias: mean - truth, variance, mse })
    }
}

/// Estimates TC on `eval_batches` fresh batches with all parameters frozen
/// and summarizes them against `tc_closed_form(model)`.
pub fn evaluate_metrics<R: Rng + ?Sized>(
    est: &TcEstimator,
    model: &GaussianModel,
    eval_batches: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Metrics> {
    if eval_batches < 2 {
        return Err(Error::param("evaluation needs at least two batches"));
    }
    let estimates = (0..eval_batches)
        .map(|_| est.estimate(&sample(model, batch_size, rng)).map(|s| s.total))
        .collect::<Result<Vec<_>>>()?;
    Metrics::from_estimates(&estimates, tc_closed_form(model))
}

/// One line of the metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub estimator: MiEstimatorKind,
    pub path: PathKind,
    pub target_tc: f64,
    pub metrics: Metrics,
    pub eval_batches: usize,
    pub seed: u64,
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.estimator,
            r.path,
            fmt_float(r.target_tc),
            fmt_float(r.metrics.bias),
            fmt_float(r.metrics.variance),
            fmt_float(r.metrics.mse),
            r.eval_batches,
            r.seed
        ));
    }
    out
}

pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == METRICS_HEADER => {}
        _ => return Err(Error::Parse { line: 1, message: format!("expected header '{METRICS_HEADER}'") }),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Parse { line: line_no, message: format!("expected 8 fields, found {}", f.len()) });
        }
        let relabel = |e: Error| Error::Parse { line: line_no, message: e.to_string() };
        rows.push(MetricsRow {
            estimator: f[0].parse().map_err(relabel)?,
            path: f[1].parse().map_err(relabel)?,
            target_tc: parse_field(f[2], "target_tc", line_no)?,
            metrics: Metrics {
                bias: parse_field(f[3], "bias", line_no)?,
                variance: parse_field(f[4], "variance", line_no)?,
                mse: parse_field(f[5], "mse", line_no)?,
            },
            eval_batches: parse_field(f[6], "eval_batches", line_no)?,
            seed: parse_field(f[7], "seed", line_no)?,
        });
    }
    Ok(rows)
}

pub fn persist_metrics(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, metrics_to_csv(rows))?;
    Ok(())
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    metrics_from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_estimates_have_zero_error() {
        let m = Metrics::from_estimates(&[1.5; 10], 1.5).unwrap();
        assert_eq!(m, Metrics { bias: 0.0, variance: 0.0, mse: 0.0 });
    }

    #[test]
    fn hand_computed_moments() {
        // mean 2, truth 1: bias 1, variance (1 + 0 + 1) / 3, mse (0 + 1 + 4) / 3
        let m = Metrics::from_estimates(&[1.0, 2.0, 3.0], 1.0).unwrap();
        assert_eq!(m.bias, 1.0);
        assert!((m.variance - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.mse - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rows_round_trip() {
        let rows = vec![
            MetricsRow {
                estimator: MiEstimatorKind::Club,
                path: PathKind::Line,
                target_tc: 2.0,
                metrics: Metrics { bias: 0.1, variance: 1.0 / 3.0, mse: 0.01 + 1.0 / 3.0 },
                eval_batches: 100,
                seed: 4,
            },
            MetricsRow {
                estimator: MiEstimatorKind::InfoNce,
                path: PathKind::Tree,
                target_tc: 10.0,
                metrics: Metrics { bias: -7.25, variance: 0.0, mse: 52.5625 },
                eval_batches: 3,
                seed: u64::MAX,
            },
        ];
        assert_eq!(metrics_from_csv(&metrics_to_csv(&rows)).unwrap(), rows);
        assert_eq!(metrics_from_csv(&metrics_to_csv(&[])).unwrap(), vec![]);
    }

    #[test]
    fn bad_rows_report_their_line() {
        let text = format!("{METRICS_HEADER}\nmine,tree,2,0,0,0,100,0\nmine,ring,2,0,0,0,100,0\n");
        assert!(matches!(metrics_from_csv(&text), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(metrics_from_csv("a,b\n"), Err(Error::Parse { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn mse_splits_into_bias_and_variance(
            estimates in prop::collection::vec(-20.0f64..20.0, 2..200),
            truth in 0.0f64..12.0,
        ) {
            let m = Metrics::from_estimates(&estimates, truth).unwrap();
            prop_assert!(m.variance >= 0.0);
            prop_assert!((m.mse - m.bias * m.bias - m.variance).abs() < 1e-9);
        }
    }
}
