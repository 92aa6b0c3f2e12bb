//! Raw sweep output: metric rows, loss summaries and the files around them.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activeloop::LoopRecord;
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const LOSSES_FILE: &str = "losses.csv";
pub const FAILURES_FILE: &str = "failures.log";
pub const CONFIG_FILE: &str = "config.toml";
pub const SEEDS_FILE: &str = "seeds.json";
pub const WORLD_DIR: &str = "world";

pub const METRICS_HEADER: [&str; 9] = [
    "strategy",
    "ablation",
    "replicate",
    "round",
    "observed_pairs",
    "fraction_observed",
    "coverage_at_k",
    "mae_unseen",
    "wallclock_s",
];

/// One line of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub strategy: String,
    pub ablation: String,
    pub replicate: usize,
    pub round: usize,
    pub observed_pairs: usize,
    pub fraction_observed: f64,
    pub coverage_at_k: f64,
    pub mae_unseen: Option<f64>,
    pub wallclock_s: Option<f64>,
}

/// One line of `losses.csv`: a member's fine-tuning loss at the first and
/// last epoch of a round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub strategy: String,
    pub ablation: String,
    pub replicate: usize,
    pub round: usize,
    pub member: usize,
    pub first_loss: f64,
    pub last_loss: f64,
}

/// Checks the loop bookkeeping of one run: `(t + 1) · N` pairs revealed
/// after round `t`, rounds contiguous from 0, coverage nondecreasing, no pair
/// selected twice.
pub fn check_record(record: &LoopRecord, batch_size: usize) -> Result<()> {
    let mut seen = BTreeSet::new();
    let mut last = f64::NEG_INFINITY;
    for (t, r) in record.rounds.iter().enumerate() {
        if r.round != t {
            return Err(Error::Bookkeeping(format!("round {} recorded at position {t}", r.round)));
        }
        if r.observed_pairs != (t + 1) * batch_size {
            return Err(Error::Bookkeeping(format!(
                "{} pairs observed after round {t}, expected {}",
                r.observed_pairs,
                (t + 1) * batch_size
            )));
        }
        if r.selected.len() != batch_size {
            return Err(Error::Bookkeeping(format!(
                "round {t} selected {} pairs, expected {batch_size}",
                r.selected.len()
            )));
        }
        for &k in &r.selected {
            if !seen.insert(k) {
                return Err(Error::Bookkeeping(format!("pair {k} selected twice (round {t})")));
            }
        }
        if r.coverage < last {
            return Err(Error::Bookkeeping(format!("coverage fell from {last} to {} in round {t}", r.coverage)));
        }
        last = r.coverage;
    }
    Ok(())
}

/// Metric rows of one arm's run.
pub fn metric_rows(
    strategy: &str,
    ablation: &str,
    replicate: usize,
    record: &LoopRecord,
    num_pairs: usize,
    wallclock: bool,
) -> Vec<MetricRow> {
    record
        .rounds
        .iter()
        .map(|r| MetricRow {
            strategy: strategy.to_string(),
            ablation: ablation.to_string(),
            replicate,
            round: r.round,
            observed_pairs: r.observed_pairs,
            fraction_observed: r.observed_pairs as f64 / num_pairs as f64,
            coverage_at_k: r.coverage,
            mae_unseen: r.mae_unseen,
            wallclock_s: wallclock.then_some(r.wallclock_s),
        })
        .collect()
}

pub fn loss_rows(strategy: &str, ablation: &str, replicate: usize, record: &LoopRecord) -> Vec<LossRow> {
    let mut rows = Vec::new();
    for r in &record.rounds {
        for (member, trace) in r.losses.iter().enumerate() {
            if let (Some(&first), Some(&last)) = (trace.first(), trace.last()) {
                rows.push(LossRow {
                    strategy: strategy.to_string(),
                    ablation: ablation.to_string(),
                    replicate,
                    round: r.round,
                    member,
                    first_loss: first,
                    last_loss: last,
                });
            }
        }
    }
    rows
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Append-only CSV file: the header is written on creation and every batch
/// of rows is flushed before returning, so an interrupted sweep leaves a
/// valid prefix.
pub struct RowWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl RowWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        inner.write_record(header).map_err(|e| csv_error(path, e))?;
        inner.flush().map_err(|e| Error::io(path, e))?;
        Ok(RowWriter {
            path: path.to_path_buf(),
            inner,
        })
    }

    pub fn append<T: Serialize>(&mut self, rows: &[T]) -> Result<()> {
        for row in rows {
            self.inner.serialize(row).map_err(|e| csv_error(&self.path, e))?;
        }
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub const LOSSES_HEADER: [&str; 7] = [
    "strategy",
    "ablation",
    "replicate",
    "round",
    "member",
    "first_loss",
    "last_loss",
];

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(k, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: k + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Appends one line to `failures.log`, creating it on first use.
pub fn log_failure(dir: &Path, replicate: usize, message: &str) -> Result<()> {
    let path = dir.join(FAILURES_FILE);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "replicate {replicate}: {message}").map_err(|e| Error::io(&path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
