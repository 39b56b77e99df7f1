//! CSV output and parsing (RFC-4180 quoting via the `csv` crate).
//!
//! Floats print with Rust's shortest round-trip formatting and a `.` decimal
//! separator, so identical runs give byte-identical files. Wall-clock times
//! never enter a CSV for that reason.
//!
//! Schemas (one header row each):
//! - analyze: `layer,fan_in,width,measured_var,pred_no_norm,pred_bn_leading,
//!   pred_bn_exact,ratio_no_norm,ratio_bn_leading,ratio_bn_exact`
//! - train: `record,epoch,lr,train_loss,test_accuracy,layer,grad_variance,
//!   config,failed` with one `run` row (config echo), one `epoch` row per
//!   epoch, and one `telemetry` row per layer when recorded
//! - ablate: `normalizer,sigma_sq,seeds,best_test_acc,
//!   epoch0_grad_var_first_layer,failed_runs`

use std::io::Write;
use std::path::Path;

use binlab_core::harness::GradVarianceReport;
use binlab_core::theory::PredictionModel;
use binlab_core::train::RunRecord;

use crate::runner::AblationRow;
use crate::{CliError, Result};

/// Shortest round-trip decimal formatting; non-finite values print as
/// `NaN`/`inf`/`-inf`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Write a header plus string rows as CSV.
pub fn write_csv<W: Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer
        .write_record(header)
        .map_err(|e| CliError::Format(format!("csv write: {e}")))?;
    for row in rows {
        writer
            .write_record(row)
            .map_err(|e| CliError::Format(format!("csv write: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Format(format!("csv flush: {e}")))?;
    Ok(())
}

/// Write CSV to a file path, or to stdout when `path` is `None`.
pub fn emit_csv(path: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    match path {
        Some(path) => {
            let file = std::fs::File::create(path)?;
            write_csv(file, header, rows)
        }
        None => {
            let stdout = std::io::stdout();
            write_csv(stdout.lock(), header, rows)
        }
    }
}

/// Parse CSV text into (header, rows); the inverse of [`write_csv`].
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| CliError::Format(format!("csv header: {e}")))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Format(format!("csv row: {e}")))?;
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    Ok((header, rows))
}

pub const ANALYZE_HEADER: &[&str] = &[
    "layer",
    "fan_in",
    "width",
    "measured_var",
    "pred_no_norm",
    "pred_bn_leading",
    "pred_bn_exact",
    "ratio_no_norm",
    "ratio_bn_leading",
    "ratio_bn_exact",
];

pub fn analyze_rows(report: &GradVarianceReport) -> Vec<Vec<String>> {
    report
        .layers
        .iter()
        .map(|row| {
            vec![
                row.layer.to_string(),
                row.fan_in.to_string(),
                row.width.to_string(),
                fmt_f64(row.measured),
                fmt_f64(row.pred_no_norm),
                fmt_f64(row.pred_bn_leading),
                fmt_f64(row.pred_bn_exact),
                fmt_f64(report.ratio(PredictionModel::NoNorm, row.layer)),
                fmt_f64(report.ratio(PredictionModel::BnLeading, row.layer)),
                fmt_f64(report.ratio(PredictionModel::BnExact, row.layer)),
            ]
        })
        .collect()
}

pub const TRAIN_HEADER: &[&str] = &[
    "record",
    "epoch",
    "lr",
    "train_loss",
    "test_accuracy",
    "layer",
    "grad_variance",
    "config",
    "failed",
];

pub fn train_rows(record: &RunRecord) -> Vec<Vec<String>> {
    let blank = String::new();
    let mut rows = Vec::with_capacity(1 + record.epochs.len());
    rows.push(vec![
        "run".into(),
        blank.clone(),
        blank.clone(),
        blank.clone(),
        fmt_f64(record.best_test_accuracy),
        blank.clone(),
        blank.clone(),
        record.config_echo.clone(),
        record.failed.to_string(),
    ]);
    for epoch in &record.epochs {
        rows.push(vec![
            "epoch".into(),
            epoch.epoch.to_string(),
            fmt_f64(epoch.lr),
            fmt_f64(epoch.train_loss),
            fmt_f64(epoch.test_accuracy),
            blank.clone(),
            blank.clone(),
            blank.clone(),
            blank.clone(),
        ]);
    }
    if let Some(telemetry) = &record.grad_variance_epoch0 {
        for (i, &var) in telemetry.iter().enumerate() {
            rows.push(vec![
                "telemetry".into(),
                blank.clone(),
                blank.clone(),
                blank.clone(),
                blank.clone(),
                (i + 1).to_string(),
                fmt_f64(var),
                blank.clone(),
                blank.clone(),
            ]);
        }
    }
    rows
}

pub const ABLATE_HEADER: &[&str] = &[
    "normalizer",
    "sigma_sq",
    "seeds",
    "best_test_acc",
    "epoch0_grad_var_first_layer",
    "failed_runs",
];

pub fn ablate_rows(rows: &[AblationRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|row| {
            vec![
                row.normalizer.clone(),
                fmt_f64(row.sigma_sq),
                row.seeds.to_string(),
                fmt_f64(row.best_test_acc),
                fmt_f64(row.epoch0_grad_var_first_layer),
                row.failed_runs.to_string(),
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_records_make_three_lines() {
        let rows = vec![
            vec!["a".to_string(), "1".to_string()],
            vec!["b".to_string(), "2".to_string()],
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &["name", "value"], &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.trim_end().lines().count(), 3);
    }

    #[test]
    fn round_trip_preserves_records() {
        let rows = vec![
            vec!["plain".to_string(), "1.5".to_string()],
            vec!["with,comma".to_string(), "2".to_string()],
            vec!["with \"quotes\"".to_string(), "-3e-7".to_string()],
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &["name", "value"], &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let (header, parsed) = read_csv(&text).unwrap();
        assert_eq!(header, vec!["name", "value"]);
        assert_eq!(parsed, rows);
    }

    #[test]
    fn special_characters_are_quoted() {
        let rows = vec![vec!["a,b=\"c\"".to_string()]];
        let mut buf = Vec::new();
        write_csv(&mut buf, &["config"], &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"a,b=\"\"c\"\"\""), "{text}");
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.011002619671350378] {
            let parsed: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(parsed.to_bits(), v.to_bits());
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }
}
