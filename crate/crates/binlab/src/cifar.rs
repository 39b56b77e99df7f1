//! CIFAR-10 binary-format loader.
//!
//! Each record is exactly 3073 bytes: one label byte then 3072 channel-major
//! pixels (1024 red, 1024 green, 1024 blue). Pixels scale to [0, 1], then
//! normalize per channel; images flatten row-major in channel-major order.

use std::path::Path;

use binlab_core::data::Dataset;
use binlab_core::matrix::Matrix;

use crate::{CliError, Result};

pub const RECORD_BYTES: usize = 3073;
pub const PIXELS_PER_CHANNEL: usize = 1024;
pub const CHANNELS: usize = 3;
pub const FEATURE_DIM: usize = PIXELS_PER_CHANNEL * CHANNELS;

/// Decode one batch file's bytes into (features, labels) rows.
pub fn decode_cifar10_bytes(
    bytes: &[u8],
    mean: &[f64; 3],
    std: &[f64; 3],
) -> Result<(Vec<f64>, Vec<usize>)> {
    if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
        return Err(CliError::Format(format!(
            "cifar10: {} bytes is not a positive multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    let count = bytes.len() / RECORD_BYTES;
    let mut values = Vec::with_capacity(count * FEATURE_DIM);
    let mut labels = Vec::with_capacity(count);
    for rec in 0..count {
        let record = &bytes[rec * RECORD_BYTES..(rec + 1) * RECORD_BYTES];
        let label = record[0];
        if label > 9 {
            return Err(CliError::Format(format!(
                "cifar10: record {rec} has label {label} > 9"
            )));
        }
        labels.push(label as usize);
        for channel in 0..CHANNELS {
            let pixels =
                &record[1 + channel * PIXELS_PER_CHANNEL..1 + (channel + 1) * PIXELS_PER_CHANNEL];
            let (m, s) = (mean[channel], std[channel]);
            for &p in pixels {
                values.push((p as f64 / 255.0 - m) / s);
            }
        }
    }
    Ok((values, labels))
}

/// Load and concatenate CIFAR-10 binary batch files.
pub fn load_cifar10_bin(paths: &[impl AsRef<Path>], mean: &[f64; 3], std: &[f64; 3]) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(CliError::Format("cifar10: no batch files given".into()));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path.as_ref())?;
        let (v, l) = decode_cifar10_bytes(&bytes, mean, std)?;
        values.extend(v);
        labels.extend(l);
    }
    let count = labels.len();
    let dataset = Dataset {
        features: Matrix::from_vec(count, FEATURE_DIM, values).map_err(CliError::Core)?,
        labels,
        classes: 10,
    };
    dataset.validate().map_err(CliError::Core)?;
    Ok(dataset)
}
