use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{EvalRecord, GateRecord, MetaGradStats, MetricLog, StageTiming, WeightHistogram};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEMA_LINE_PREFIX: &str = "# famus-metrics";

pub const TIMING_FILE: &str = "timing.csv";
pub const GRAD_FILE: &str = "grad_stats.csv";
pub const GATES_FILE: &str = "gates.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";

#[derive(Debug, Serialize, Deserialize)]
struct HistogramRow {
    iteration: u64,
    bin_lo: f64,
    bin_hi: f64,
    clean_count: u64,
    noisy_count: u64,
}

fn write_series<T: Serialize>(dir: &Path, file: &str, kind: &str, header: &[&str], rows: &[T]) -> Result<()> {
    let path = dir.join(file);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(f);
    writeln!(out, "{SCHEMA_LINE_PREFIX} v{SCHEMA_VERSION} {kind}").map_err(|e| Error::io(&path, e))?;
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
        w.write_record(header).map_err(|e| Error::csv(&path, e))?;
        for r in rows {
            w.serialize(r).map_err(|e| Error::csv(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))
}

fn read_series<T: DeserializeOwned>(dir: &Path, file: &str, kind: &str) -> Result<Vec<T>> {
    let path = dir.join(file);
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut reader = BufReader::new(f);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(&path, e))?;
    let expected = format!("{SCHEMA_LINE_PREFIX} v{SCHEMA_VERSION} {kind}");
    if first.trim_end() != expected {
        return Err(Error::Validation(format!(
            "{}: schema line `{}` (expected `{expected}`)",
            path.display(),
            first.trim_end()
        )));
    }
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(&path, e)))
        .collect()
}

/// Writes every series of `log` into `dir` (created if missing).
pub fn write_dir(log: &MetricLog, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_series::<StageTiming>(dir, TIMING_FILE, "timing", &["iteration", "stage", "wall_nanos"], &log.timings)?;
    write_series::<MetaGradStats>(
        dir,
        GRAD_FILE,
        "grad_stats",
        &["iteration", "grad_norm", "grad_std", "active_layers"],
        &log.grad_stats,
    )?;
    write_series::<GateRecord>(dir, GATES_FILE, "gates", &["iteration", "layer", "soft", "hard"], &log.gates)?;
    write_series::<EvalRecord>(
        dir,
        EVAL_FILE,
        "eval",
        &["iteration", "train_loss", "val_loss", "test_loss", "test_accuracy"],
        &log.evals,
    )?;
    let rows: Vec<HistogramRow> = log
        .histograms
        .iter()
        .flat_map(|h| {
            let bins = h.bins();
            (0..bins).map(move |b| HistogramRow {
                iteration: h.iteration,
                bin_lo: b as f64 / bins as f64,
                bin_hi: (b + 1) as f64 / bins as f64,
                clean_count: h.clean[b],
                noisy_count: h.noisy[b],
            })
        })
        .collect();
    write_series(
        dir,
        WEIGHTS_FILE,
        "weights",
        &["iteration", "bin_lo", "bin_hi", "clean_count", "noisy_count"],
        &rows,
    )
}

/// Reads back a directory written by [`write_dir`].
pub fn read_dir(dir: impl AsRef<Path>) -> Result<MetricLog> {
    let dir = dir.as_ref();
    let rows: Vec<HistogramRow> = read_series(dir, WEIGHTS_FILE, "weights")?;
    let mut grouped: BTreeMap<u64, WeightHistogram> = BTreeMap::new();
    for r in rows {
        let h = grouped.entry(r.iteration).or_insert_with(|| WeightHistogram {
            iteration: r.iteration,
            clean: Vec::new(),
            noisy: Vec::new(),
        });
        h.clean.push(r.clean_count);
        h.noisy.push(r.noisy_count);
    }
    Ok(MetricLog {
        timings: read_series(dir, TIMING_FILE, "timing")?,
        grad_stats: read_series(dir, GRAD_FILE, "grad_stats")?,
        gates: read_series(dir, GATES_FILE, "gates")?,
        evals: read_series(dir, EVAL_FILE, "eval")?,
        histograms: grouped.into_values().collect(),
    })
}
