//! IDX (big-endian) image/label file loader.
//!
//! Images carry the magic `0x00000803` and dimensions (count, rows, cols);
//! labels carry `0x00000801` and a count. Pixels are scaled to [0, 1] and
//! normalized `(v - mean) / std`; images flatten row-major.

use std::path::Path;

use binlab_core::data::Dataset;
use binlab_core::matrix::Matrix;

use crate::{CliError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(CliError::Format(format!("{what}: truncated header")));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parse raw IDX image bytes into (count, rows, cols, pixels).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32_be(bytes, 0, "images")?;
    if magic != IMAGE_MAGIC {
        return Err(CliError::Format(format!(
            "images: bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(bytes, 4, "images")? as usize;
    let rows = read_u32_be(bytes, 8, "images")? as usize;
    let cols = read_u32_be(bytes, 12, "images")? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(CliError::Format(format!(
            "images: {} bytes for {count} images of {rows}x{cols} (expected {expected})",
            bytes.len()
        )));
    }
    Ok((count, rows, cols, &bytes[16..]))
}

/// Parse raw IDX label bytes into the label slice.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32_be(bytes, 0, "labels")?;
    if magic != LABEL_MAGIC {
        return Err(CliError::Format(format!(
            "labels: bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(bytes, 4, "labels")? as usize;
    if bytes.len() != 8 + count {
        return Err(CliError::Format(format!(
            "labels: {} bytes for {count} labels",
            bytes.len()
        )));
    }
    Ok(&bytes[8..])
}

/// Build a dataset from in-memory IDX image and label bytes.
pub fn dataset_from_idx_bytes(
    image_bytes: &[u8],
    label_bytes: &[u8],
    mean: f64,
    std: f64,
    classes: usize,
) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if labels.len() != count {
        return Err(CliError::Format(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    if count == 0 {
        return Err(CliError::Format("empty idx dataset".into()));
    }
    let dim = rows * cols;
    let mut values = Vec::with_capacity(count * dim);
    for &p in pixels {
        values.push((p as f64 / 255.0 - mean) / std);
    }
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(CliError::Format(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let dataset = Dataset {
        features: Matrix::from_vec(count, dim, values).map_err(CliError::Core)?,
        labels,
        classes,
    };
    dataset.validate().map_err(CliError::Core)?;
    Ok(dataset)
}

/// Load an IDX image/label file pair from disk.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    mean: f64,
    std: f64,
    classes: usize,
) -> Result<Dataset> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;
    dataset_from_idx_bytes(&image_bytes, &label_bytes, mean, std, classes)
}

/// Serialize images into IDX bytes (fixtures and round-trip tests).
pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), count * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    out
}

/// Serialize labels into IDX bytes.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        // 4 images of 2x2 with known pixel bytes
        let pixels: Vec<u8> = vec![
            0, 255, 128, 64, // image 0
            1, 2, 3, 4, // image 1
            10, 20, 30, 40, // image 2
            250, 200, 150, 100, // image 3
        ];
        (
            encode_idx_images(4, 2, 2, &pixels),
            encode_idx_labels(&[0, 1, 2, 1]),
        )
    }

    #[test]
    fn fixture_decodes_to_expected_values() {
        let (images, labels) = fixture();
        let dataset = dataset_from_idx_bytes(&images, &labels, 0.0, 1.0, 3).unwrap();
        assert_eq!(dataset.len(), 4);
        assert_eq!(dataset.features.cols(), 4);
        assert_eq!(dataset.features.get(0, 0), 0.0);
        assert_eq!(dataset.features.get(0, 1), 1.0);
        assert_eq!(dataset.features.get(0, 2), 128.0 / 255.0);
        assert_eq!(dataset.features.get(1, 3), 4.0 / 255.0);
        assert_eq!(dataset.labels, vec![0, 1, 2, 1]);
    }

    #[test]
    fn normalization_applies_mean_and_std() {
        let (images, labels) = fixture();
        let dataset = dataset_from_idx_bytes(&images, &labels, 0.5, 0.25, 3).unwrap();
        // pixel 255 -> (1.0 - 0.5) / 0.25 = 2.0
        assert!((dataset.features.get(0, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_magic() {
        let (mut images, labels) = fixture();
        images[3] = 0x99;
        assert!(matches!(
            dataset_from_idx_bytes(&images, &labels, 0.0, 1.0, 3),
            Err(CliError::Format(_))
        ));
    }

    #[test]
    fn rejects_truncated_file() {
        let (images, labels) = fixture();
        assert!(matches!(
            dataset_from_idx_bytes(&images[..images.len() - 2], &labels, 0.0, 1.0, 3),
            Err(CliError::Format(_))
        ));
    }

    #[test]
    fn rejects_count_mismatch() {
        let (images, _) = fixture();
        let labels = encode_idx_labels(&[0, 1, 2]);
        assert!(matches!(
            dataset_from_idx_bytes(&images, &labels, 0.0, 1.0, 3),
            Err(CliError::Format(_))
        ));
    }
}
