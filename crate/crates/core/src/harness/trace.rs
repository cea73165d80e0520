//! Training traces and their CSV form.
//!
//! One CSV row per (step, term):
//! `global_step,target_tc,raw_estimate,smoothed_estimate,term_index,term_estimate`.
//! A step without terms (single-variable runs) is one row with the last two
//! fields empty. Floats are written with 17 significant digits, so a
//! persisted trace loads back bit-for-bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str =
    "global_step,target_tc,raw_estimate,smoothed_estimate,term_index,term_estimate";

/// One training step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 1-based, contiguous.
    pub global_step: u64,
    /// Ground-truth TC of the segment this step belongs to.
    pub target_tc: f64,
    /// Sum of `term_estimates`.
    pub raw_estimate: f64,
    pub smoothed_estimate: f64,
    pub term_estimates: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn raw(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.raw_estimate).collect()
    }

    pub fn smoothed(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.smoothed_estimate).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target_tc).collect()
    }

    /// Mean smoothed estimate over the last `window` steps of segment
    /// `segment` (0-based), for segments of `steps_per_target` steps.
    pub fn segment_tail_mean(&self, segment: usize, steps_per_target: usize, window: usize) -> Option<f64> {
        let end = (segment + 1) * steps_per_target;
        if window == 0 || window > steps_per_target || end > self.rows.len() {
            return None;
        }
        let rows = &self.rows[end - window..end];
        Some(rows.iter().map(|r| r.smoothed_estimate).sum::<f64>() / window as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 + self.rows.len() * 4 * 100);
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for row in &self.rows {
            let prefix = format!(
                "{},{},{},{}",
                row.global_step,
                fmt_float(row.target_tc),
                fmt_float(row.raw_estimate),
                fmt_float(row.smoothed_estimate)
            );
            if row.term_estimates.is_empty() {
                out.push_str(&prefix);
                out.push_str(",,\n");
            }
            for (k, term) in row.term_estimates.iter().enumerate() {
                out.push_str(&prefix);
                out.push_str(&format!(",{k},{}\n", fmt_float(*term)));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim_end() == TRACE_HEADER => {}
            Some((_, header)) => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unexpected header '{header}'"),
                })
            }
            None => return Err(Error::Parse { line: 1, message: "missing header".into() }),
        }
        let mut rows: Vec<TraceRow> = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: line_no, message };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", fields.len())));
            }
            let step: u64 = parse_field(fields[0], "global_step", line_no)?;
            let target: f64 = parse_field(fields[1], "target_tc", line_no)?;
            let raw: f64 = parse_field(fields[2], "raw_estimate", line_no)?;
            let smoothed: f64 = parse_field(fields[3], "smoothed_estimate", line_no)?;
            let term = match (fields[4], fields[5]) {
                ("", "") => None,
                (k, v) => Some((
                    parse_field::<usize>(k, "term_index", line_no)?,
                    parse_field::<f64>(v, "term_estimate", line_no)?,
                )),
            };

            let continues = rows.last().is_some_and(|r| r.global_step == step);
            if continues {
                let last = rows.last_mut().expect("checked above");
                let (k, v) = term.ok_or_else(|| err("missing term fields".into()))?;
                if last.target_tc.to_bits() != target.to_bits()
                    || last.raw_estimate.to_bits() != raw.to_bits()
                    || last.smoothed_estimate.to_bits() != smoothed.to_bits()
                {
                    return Err(err(format!("step {step} repeats with different values")));
                }
                if k != last.term_estimates.len() {
                    return Err(err(format!(
                        "term_index {k} out of sequence (expected {})",
                        last.term_estimates.len()
                    )));
                }
                last.term_estimates.push(v);
            } else {
                let expected = rows.last().map_or(1, |r| r.global_step + 1);
                if step != expected {
                    return Err(err(format!("global_step {step} out of sequence (expected {expected})")));
                }
                let term_estimates = match term {
                    None => Vec::new(),
                    Some((0, v)) => vec![v],
                    Some((k, _)) => return Err(err(format!("step {step} starts at term_index {k}"))),
                };
                rows.push(TraceRow {
                    global_step: step,
                    target_tc: target,
                    raw_estimate: raw,
                    smoothed_estimate: smoothed,
                    term_estimates,
                });
            }
        }
        Ok(TrainingTrace { rows })
    }
}

/// 17 significant digits, round-trips every finite `f64`.
pub(crate) fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse_field<T: std::str::FromStr>(field: &str, name: &str, line: usize) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("field {name} is not a number: '{field}'"),
    })
}

pub fn persist_trace(trace: &TrainingTrace, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, trace.to_csv())?;
    Ok(())
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<TrainingTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    TrainingTrace::from_csv(&text)
}
