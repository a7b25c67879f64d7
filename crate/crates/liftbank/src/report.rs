//! CSV output: training logs, per-utterance metrics and transform-domain
//! matrices for plotting.

use std::path::Path;

use liftbank_core::objective::MetricReport;
use liftbank_core::optim::EpochRecord;
use liftbank_core::Tensor;

use crate::CliError;

fn csv_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("cannot write {}: {e}", path.display()))
}

/// Shortest text that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_training_log(path: &Path, history: &[EpochRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["epoch", "steps", "train_loss", "val_loss", "val_si_sdr_imp"])
        .map_err(|e| csv_err(path, e))?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.steps.to_string(),
            num(r.train_loss),
            num(r.val_loss),
            num(r.val_si_sdr_imp),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e))
}

pub fn write_metrics(path: &Path, report: &MetricReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["id", "si_sdr_in", "si_sdr_out", "si_sdr_imp"])
        .map_err(|e| csv_err(path, e))?;
    for r in &report.rows {
        w.write_record([
            r.id.clone(),
            num(r.si_sdr_in),
            num(r.si_sdr_out),
            num(r.improvement),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e))
}

/// One CSV row per channel (or frequency bin) of a `[rows, frames]` matrix.
pub fn write_matrix(path: &Path, m: &Tensor) -> Result<(), CliError> {
    if m.ndim() != 2 {
        return Err(CliError::Usage(format!(
            "expected a matrix, got shape {:?}",
            m.shape()
        )));
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    for r in 0..m.dim(0) {
        w.write_record(m.row(r).iter().map(|&v| num(v)))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e))
}

/// Reads a CSV written by [`write_training_log`] back into records.
pub fn read_training_log(path: &Path) -> Result<Vec<EpochRecord>, CliError> {
    let mut rd = csv::Reader::from_path(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let f = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CliError::Usage(format!("{}: malformed row", path.display())))
        };
        out.push(EpochRecord {
            epoch: f(0)? as usize,
            steps: f(1)? as usize,
            train_loss: f(2)?,
            val_loss: f(3)?,
            val_si_sdr_imp: f(4)?,
        });
    }
    Ok(out)
}
