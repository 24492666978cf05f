//! Result files: the per-run CSV and the JSON quantile summary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::{ErrorRecord, QuantileSummary};

pub const CSV_COLUMNS: [&str; 12] = [
    "run_id", "model", "method", "n", "kappa", "epsilon", "seed", "error", "sq_error", "converged", "iters", "wall_ms",
];

/// Fails with [`Error::Exists`] unless `force` is set or `path` is free.
pub fn check_writable(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::Exists(path.to_path_buf()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Writes the header even when `records` is empty.
pub fn records_to_writer<W: Write>(records: &[ErrorRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records(path: &Path, records: &[ErrorRecord], force: bool) -> Result<()> {
    check_writable(path, force)?;
    records_to_writer(records, BufWriter::new(File::create(path)?))
}

pub fn records_from_reader<R: std::io::Read>(input: R) -> Result<Vec<ErrorRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    let missing: Vec<String> = CSV_COLUMNS
        .iter()
        .filter(|c| !header.iter().any(|h| h == **c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns(missing));
    }
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<ErrorRecord>> {
    records_from_reader(File::open(path)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryFile {
    pub config: ExperimentConfig,
    pub summaries: Vec<QuantileSummary>,
}

pub fn write_summary(path: &Path, config: &ExperimentConfig, summaries: &[QuantileSummary], force: bool) -> Result<()> {
    check_writable(path, force)?;
    let doc = SummaryFile { config: config.clone(), summaries: summaries.to_vec() };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
