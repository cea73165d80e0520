use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use totcorr::harness::{self, load_metrics, load_trace, ExperimentConfig, MetricsRow, TrainingTrace};
use totcorr::plot::render_svg;
use totcorr::selftest::run_selftest;

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "totcorr", version, about = "Variational total-correlation estimation on simulated Gaussians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the step-function experiment and write traces and metrics.
    Run {
        /// TOML config; omitted keys take their defaults.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for independent runs.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        jobs: u64,
    },
    /// Render one or more trace CSVs into an SVG figure.
    Plot {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a metrics CSV as a table.
    Report {
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Run the numerical self-checks.
    Selftest {
        /// Smaller sample counts.
        #[arg(long)]
        quick: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match cli.command {
        Command::Run { config, out, seed, jobs } => run(&config, &out, seed, jobs as usize),
        Command::Plot { traces, out } => plot(&traces, &out),
        Command::Report { metrics } => report(&metrics),
        Command::Selftest { quick } => selftest(quick),
    };
    ExitCode::from(code)
}

fn fail(message: impl std::fmt::Display) -> u8 {
    eprintln!("error: {message}");
    EXIT_USAGE
}

fn run(config_path: &Path, out: &Path, seed: Option<u64>, jobs: usize) -> u8 {
    let mut config = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let records = match harness::run_experiment_with_jobs(&config, jobs) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let mut failures = 0;
    for r in &records {
        match &r.outcome {
            Ok(o) => println!("ok     {}/{}: {} steps", r.estimator, r.path, o.trace.len()),
            Err(e) => {
                failures += 1;
                println!("failed {e}");
            }
        }
    }
    if let Err(e) = harness::write_outputs(out, &records) {
        return fail(format!("writing to {}: {e}", out.display()));
    }
    if failures > 0 {
        eprintln!("{failures} of {} runs failed", records.len());
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

fn plot(paths: &[PathBuf], out: &Path) -> u8 {
    let mut traces: Vec<(String, TrainingTrace)> = Vec::with_capacity(paths.len());
    for p in paths {
        match load_trace(p) {
            Ok(t) => traces.push((label(p), t)),
            Err(e) => return fail(format!("{}: {e}", p.display())),
        }
    }
    let series: Vec<(&str, &TrainingTrace)> = traces.iter().map(|(l, t)| (l.as_str(), t)).collect();
    match std::fs::write(out, render_svg(&series)) {
        Ok(()) => EXIT_OK,
        Err(e) => fail(format!("{}: {e}", out.display())),
    }
}

/// `trace_mine_tree.csv` is labelled `mine/tree`; other names keep their stem.
fn label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match stem.strip_prefix("trace_").and_then(|rest| rest.split_once('_')) {
        Some((est, path)) => format!("{est}/{path}"),
        None => stem,
    }
}

fn report(path: &Path) -> u8 {
    match load_metrics(path) {
        Ok(rows) => {
            print!("{}", format_table(&rows));
            EXIT_OK
        }
        Err(e) => fail(format!("{}: {e}", path.display())),
    }
}

fn format_table(rows: &[MetricsRow]) -> String {
    let mut out = format!(
        "{:<9} {:<5} {:>9} {:>11} {:>11} {:>11} {:>6} {:>6}\n",
        "estimator", "path", "target", "bias", "variance", "mse", "evals", "seed"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<9} {:<5} {:>9.3} {:>11.4} {:>11.4} {:>11.4} {:>6} {:>6}\n",
            r.estimator.as_str(),
            r.path.as_str(),
            r.target_tc,
            r.metrics.bias,
            r.metrics.variance,
            r.metrics.mse,
            r.eval_batches,
            r.seed
        ));
    }
    out
}

fn selftest(quick: bool) -> u8 {
    let outcomes = run_selftest(quick);
    for c in &outcomes {
        println!("{c}");
    }
    let failed = outcomes.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", outcomes.len());
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_USAGE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_from_file_names() {
        assert_eq!(label(Path::new("out/trace_infonce_line.csv")), "infonce/line");
        assert_eq!(label(Path::new("custom.csv")), "custom");
    }

    #[test]
    fn table_has_one_line_per_row() {
        assert_eq!(format_table(&[]).lines().count(), 1);
    }
}
