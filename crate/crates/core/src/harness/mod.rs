//! The step-function tracking experiment.
//!
//! For each `(estimator, path)` pair, one continuous training run walks
//! through the configured TC targets in order. At each target the
//! correlation `ρ` is solved so the equicorrelated Gaussian has exactly that
//! TC, and `steps_per_target` fresh batches are fed to the estimator. After
//! each segment the frozen estimator is scored on `eval_batches` further
//! batches to produce bias, variance and MSE.
//!
//! # Random streams
//!
//! Every run owns two ChaCha8 generators seeded with `config.seed`:
//! training (network init and training batches) on stream
//! `2 · e + p`, evaluation batches on stream `2 · e + p + 8`, where `e` is
//! the estimator index (mine 0, nwj 1, infonce 2, club 3) and `p` the path
//! index (tree 0, line 1). A run's output therefore does not depend on
//! which other runs are selected or on the number of worker threads.

mod config;
mod metrics;
mod smooth;
mod trace;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::ExperimentConfig;
pub use metrics::{
    evaluate_metrics, load_metrics, metrics_from_csv, metrics_to_csv, persist_metrics, Metrics,
    MetricsRow, METRICS_HEADER,
};
pub use smooth::smooth;
pub use trace::{load_trace, persist_trace, TraceRow, TrainingTrace, TRACE_HEADER};

use crate::bounds::MiEstimatorKind;
use crate::decomposition::{build_plan, PathKind, TcEstimator};
use crate::error::{Error, Result};
use crate::gaussian::{equicorrelated_sigma, sample, solve_rho_for_tc};

const EVAL_STREAM_OFFSET: u64 = 8;

/// Generator for the training side of one run.
pub fn train_rng(seed: u64, estimator: MiEstimatorKind, path: PathKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(estimator, path));
    rng
}

/// Generator for the evaluation batches of one run.
pub fn eval_rng(seed: u64, estimator: MiEstimatorKind, path: PathKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(estimator, path) + EVAL_STREAM_OFFSET);
    rng
}

fn stream_id(estimator: MiEstimatorKind, path: PathKind) -> u64 {
    2 * estimator.index() + path.index()
}

/// Everything one successful run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: TrainingTrace,
    /// One row per target, in target order.
    pub metrics: Vec<MetricsRow>,
}

/// Outcome of one `(estimator, path)` run.
#[derive(Debug)]
pub struct RunRecord {
    pub estimator: MiEstimatorKind,
    pub path: PathKind,
    pub outcome: Result<RunOutput>,
}

impl RunRecord {
    pub fn trace_file_name(&self) -> String {
        trace_file_name(self.estimator, self.path)
    }
}

pub fn trace_file_name(estimator: MiEstimatorKind, path: PathKind) -> String {
    format!("trace_{estimator}_{path}.csv")
}

/// Runs a single `(estimator, path)` experiment.
pub fn run_single(config: &ExperimentConfig, estimator: MiEstimatorKind, path: PathKind) -> Result<RunOutput> {
    config.validate()?;
    let mut rng = train_rng(config.seed, estimator, path);
    let mut eval = eval_rng(config.seed, estimator, path);
    let plan = build_plan(config.dim, path)?;
    let dims = vec![1; config.dim];
    let fresh = |rng: &mut ChaCha8Rng| TcEstimator::new(plan.clone(), estimator, &dims, config.hidden, config.lr, rng);
    let mut est = fresh(&mut rng)?;

    let total_steps = config.steps_per_target * config.tc_targets.len();
    let mut rows = Vec::with_capacity(total_steps);
    let mut metrics = Vec::with_capacity(config.tc_targets.len());
    for (segment, &target) in config.tc_targets.iter().enumerate() {
        if segment > 0 && config.fresh_networks_per_target {
            est = fresh(&mut rng)?;
        }
        let rho = solve_rho_for_tc(config.dim, target)?;
        let model = equicorrelated_sigma(config.dim, rho)?;
        for _ in 0..config.steps_per_target {
            let global_step = rows.len() as u64 + 1;
            let batch = sample(&model, config.batch_size, &mut rng);
            let step = est.train_step(&batch).map_err(|e| match e {
                Error::Training { message, .. } => Error::Training {
                    step: global_step,
                    message: format!("{estimator}/{path}, target {target}: {message}"),
                },
                other => other,
            })?;
            rows.push(TraceRow {
                global_step,
                target_tc: target,
                raw_estimate: step.total,
                smoothed_estimate: 0.0,
                term_estimates: step.per_term,
            });
        }
        metrics.push(MetricsRow {
            estimator,
            path,
            target_tc: target,
            metrics: evaluate_metrics(&est, &model, config.eval_batches, config.batch_size, &mut eval)?,
            eval_batches: config.eval_batches,
            seed: config.seed,
        });
    }

    let raw: Vec<f64> = rows.iter().map(|r| r.raw_estimate).collect();
    for (row, s) in rows.iter_mut().zip(smooth(&raw, config.smoothing_bandwidth)?) {
        row.smoothed_estimate = s;
    }
    Ok(RunOutput { trace: TrainingTrace { rows }, metrics })
}

/// All `(estimator, path)` pairs of the config, in estimator-major order.
pub fn run_pairs(config: &ExperimentConfig) -> Vec<(MiEstimatorKind, PathKind)> {
    config
        .estimators
        .iter()
        .flat_map(|&e| config.paths.iter().map(move |&p| (e, p)))
        .collect()
}

/// Runs every configured pair sequentially. A failing run is recorded and
/// the remaining runs still execute.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    run_experiment_with_jobs(config, 1)
}

/// Like [`run_experiment`], spreading runs over `jobs` worker threads. The
/// records and their contents do not depend on `jobs`.
pub fn run_experiment_with_jobs(config: &ExperimentConfig, jobs: usize) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let pairs = run_pairs(config);
    let one = |&(estimator, path): &(MiEstimatorKind, PathKind)| RunRecord {
        estimator,
        path,
        outcome: run_single(config, estimator, path),
    };
    if jobs <= 1 {
        return Ok(pairs.iter().map(one).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(|| pairs.par_iter().map(one).collect()))
}

/// Writes `trace_{estimator}_{path}.csv` for every successful run and a
/// `metrics.csv` with their rows into `dir`, returning the written paths.
pub fn write_outputs(dir: impl AsRef<Path>, records: &[RunRecord]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut rows = Vec::new();
    for record in records {
        if let Ok(out) = &record.outcome {
            let path = dir.join(record.trace_file_name());
            persist_trace(&out.trace, &path)?;
            written.push(path);
            rows.extend(out.metrics.iter().cloned());
        }
    }
    let path = dir.join("metrics.csv");
    persist_metrics(&rows, &path)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            tc_targets: vec![1.0, 2.0],
            steps_per_target: 30,
            batch_size: 16,
            smoothing_bandwidth: 10,
            eval_batches: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn streams_are_distinct() {
        let mut firsts = Vec::new();
        for e in MiEstimatorKind::ALL {
            for p in PathKind::ALL {
                firsts.push(train_rng(0, e, p).random::<u64>());
                firsts.push(eval_rng(0, e, p).random::<u64>());
            }
        }
        let n = firsts.len();
        firsts.sort();
        firsts.dedup();
        assert_eq!(firsts.len(), n);
    }

    #[test]
    fn trace_shape() {
        let config = tiny();
        let out = run_single(&config, MiEstimatorKind::Nwj, PathKind::Tree).unwrap();
        let rows = &out.trace.rows;
        assert_eq!(rows.len(), 60);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.global_step, i as u64 + 1);
            assert_eq!(r.target_tc, if i < 30 { 1.0 } else { 2.0 });
            assert_eq!(r.term_estimates.len(), 3);
            assert_eq!(r.raw_estimate, r.term_estimates.iter().fold(0.0, |a, b| a + b));
        }
        let smoothed = smooth(&out.trace.raw(), 10).unwrap();
        assert_eq!(out.trace.smoothed(), smoothed);
        assert_eq!(out.metrics.len(), 2);
        for m in &out.metrics {
            let Metrics { bias, variance, mse } = m.metrics;
            assert!((mse - bias * bias - variance).abs() < 1e-9);
        }
    }

    #[test]
    fn runs_do_not_depend_on_selection_or_threads() {
        let config = tiny();
        let alone = run_single(&config, MiEstimatorKind::InfoNce, PathKind::Line).unwrap();
        let mut subset = config.clone();
        subset.estimators = vec![MiEstimatorKind::Mine, MiEstimatorKind::InfoNce];
        let records = run_experiment_with_jobs(&subset, 2).unwrap();
        let found = records
            .iter()
            .find(|r| r.estimator == MiEstimatorKind::InfoNce && r.path == PathKind::Line)
            .unwrap();
        assert_eq!(found.outcome.as_ref().unwrap(), &alone);
        let order: Vec<_> = records.iter().map(|r| (r.estimator, r.path)).collect();
        assert_eq!(order, run_pairs(&subset));
    }

    #[test]
    fn fresh_networks_change_later_segments_only() {
        let config = tiny();
        let kept = run_single(&config, MiEstimatorKind::Mine, PathKind::Line).unwrap();
        let reset = run_single(
            &ExperimentConfig { fresh_networks_per_target: true, ..config },
            MiEstimatorKind::Mine,
            PathKind::Line,
        )
        .unwrap();
        assert_eq!(kept.trace.rows[..30], reset.trace.rows[..30]);
        assert_ne!(kept.trace.rows[30].raw_estimate, reset.trace.rows[30].raw_estimate);
    }

    #[test]
    fn divergent_runs_fail_alone() {
        let config = ExperimentConfig { lr: 1e3, tc_targets: vec![8.0], ..tiny() };
        let records = run_experiment(&config).unwrap();
        let failed: Vec<_> = records.iter().filter(|r| r.outcome.is_err()).map(|r| (r.estimator, r.path)).collect();
        assert!(!failed.is_empty() && failed.len() < records.len());
        match &records[0].outcome {
            Err(Error::Training { step, message }) => {
                assert!(*step >= 1 && *step <= 30);
                assert!(message.starts_with("mine/tree, target 8: term "), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn outputs_land_in_the_directory() {
        let mut config = tiny();
        config.estimators = vec![MiEstimatorKind::Club];
        let records = run_experiment(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = write_outputs(dir.path().join("out"), &records).unwrap();
        let names: Vec<_> = written.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_owned()).collect();
        assert_eq!(names, ["trace_club_tree.csv", "trace_club_line.csv", "metrics.csv"]);
        let loaded = load_trace(&written[0]).unwrap();
        assert_eq!(&loaded, &records[0].outcome.as_ref().unwrap().trace);
        assert_eq!(load_metrics(&written[2]).unwrap().len(), 4);
    }
}
