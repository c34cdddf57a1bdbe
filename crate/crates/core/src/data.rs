//! MNIST IDX parsing and the in-memory [`Dataset`].
//!
//! The IDX container is a big-endian header followed by a raw `u8` payload:
//!
//! ```text
//! images: magic 0x00000803 (2051) | N | rows | cols | N*rows*cols bytes
//! labels: magic 0x00000801 (2049) | N | N bytes
//! ```
//!
//! Intensities are divided by 255 and stored as `f32`; every byte value maps to a
//! distinct `f32`, so re-encoding a parsed file reproduces it exactly.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const NUM_CLASSES: usize = 10;

/// Standard MNIST file names inside a data directory.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Images as unit-interval intensities, one row per sample, paired with class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Array2<f32>,
    labels: Vec<u8>,
    split_name: String,
}

impl Dataset {
    pub fn images(&self) -> &Array2<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split_name(&self) -> &str {
        &self.split_name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.images.ncols()
    }

    pub fn image(&self, i: usize) -> ArrayView1<'_, f32> {
        self.images.row(i)
    }

    /// First `n` samples (or all, if fewer), keeping pairing and order.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            split_name: self.split_name.clone(),
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize, field: &'static str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::TruncatedFile {
            field,
            needed: end,
            available: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

fn check_payload(bytes: &[u8], header: usize, payload: usize, field: &'static str) -> Result<()> {
    let needed = header + payload;
    if bytes.len() < needed {
        return Err(Error::TruncatedFile {
            field,
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::DimensionMismatch {
            field,
            expected: payload,
            found: bytes.len() - header,
        });
    }
    Ok(())
}

/// Parsed image tensor together with its spatial shape.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Array2<f32>,
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            field: "image magic",
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4, "image count")? as usize;
    let rows = read_u32(bytes, 8, "image rows")? as usize;
    let cols = read_u32(bytes, 12, "image cols")? as usize;
    let width = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format {
            format: "IDX",
            reason: format!("rows*cols overflows ({rows}x{cols})"),
        })?;
    let payload = n.checked_mul(width).ok_or_else(|| Error::Format {
        format: "IDX",
        reason: format!("image count * size overflows ({n}x{width})"),
    })?;
    check_payload(bytes, 16, payload, "image payload")?;

    let pixels: Vec<f32> = bytes[16..].iter().map(|&b| f32::from(b) / 255.0).collect();
    let pixels = Array2::from_shape_vec((n, width), pixels).expect("payload length checked");
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            field: "label magic",
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(bytes, 4, "label count")? as usize;
    check_payload(bytes, 8, n, "label payload")?;
    let labels = bytes[8..].to_vec();
    if let Some((index, &value)) = labels
        .iter()
        .enumerate()
        .find(|(_, &v)| v as usize >= NUM_CLASSES)
    {
        return Err(Error::LabelOutOfRange { index, value });
    }
    Ok(labels)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image file as an `N x (rows*cols)` matrix of intensities in `[0, 1]`.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    Ok(parse_idx_images(&read_file(path.as_ref())?)?.pixels)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&read_file(path.as_ref())?)
}

/// Serializes intensities back to an IDX image file. Values are rounded to the
/// nearest byte.
pub fn encode_idx_images(pixels: &Array2<f32>, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows * cols != pixels.ncols() {
        return Err(Error::DimensionMismatch {
            field: "image width",
            expected: rows * cols,
            found: pixels.ncols(),
        });
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(pixels.nrows() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend(
        pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn make_dataset(
    images: Array2<f32>,
    labels: Vec<u8>,
    split_name: impl Into<String>,
) -> Result<Dataset> {
    if images.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            field: "label count",
            expected: images.nrows(),
            found: labels.len(),
        });
    }
    if let Some((index, &value)) = labels
        .iter()
        .enumerate()
        .find(|(_, &v)| v as usize >= NUM_CLASSES)
    {
        return Err(Error::LabelOutOfRange { index, value });
    }
    if let Some(bad) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Format {
            format: "dataset",
            reason: format!("intensity {bad} outside [0, 1]"),
        });
    }
    Ok(Dataset {
        images,
        labels,
        split_name: split_name.into(),
    })
}

/// Loads the image/label pair for one split.
pub fn load_split(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split_name: &str,
) -> Result<Dataset> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    make_dataset(images, labels, split_name)
}

/// Loads `(train, test)` from a directory holding the four standard MNIST files.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = load_split(dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS), "train")?;
    let test = load_split(dir.join(TEST_IMAGES), dir.join(TEST_LABELS), "test")?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image_file(n: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
        out.extend_from_slice(&n.to_be_bytes());
        out.extend_from_slice(&rows.to_be_bytes());
        out.extend_from_slice(&cols.to_be_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn labels_magic_in_image_loader_is_bad_magic() {
        let bytes = encode_idx_labels(&[1, 2, 3]);
        match parse_idx_images(&bytes) {
            Err(Error::BadMagic { found, field, .. }) => {
                assert_eq!(found, 2049);
                assert_eq!(field, "image magic");
            }
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn empty_label_file_is_truncated() {
        assert!(matches!(
            parse_idx_labels(&[]),
            Err(Error::TruncatedFile { field: "label magic", .. })
        ));
    }

    #[test]
    fn label_twelve_is_out_of_range() {
        let bytes = encode_idx_labels(&[0, 9, 12, 3]);
        assert!(matches!(
            parse_idx_labels(&bytes),
            Err(Error::LabelOutOfRange { index: 2, value: 12 })
        ));
    }

    #[test]
    fn short_payload_is_truncated_and_long_payload_mismatched() {
        let short = image_file(2, 2, 2, &[0; 7]);
        assert!(matches!(
            parse_idx_images(&short),
            Err(Error::TruncatedFile { field: "image payload", needed: 24, available: 23 })
        ));
        let long = image_file(2, 2, 2, &[0; 9]);
        assert!(matches!(
            parse_idx_images(&long),
            Err(Error::DimensionMismatch { field: "image payload", expected: 8, found: 9 })
        ));
    }

    #[test]
    fn intensities_are_scaled_by_255() {
        let parsed = parse_idx_images(&image_file(1, 1, 3, &[0, 51, 255])).unwrap();
        assert_eq!(parsed.pixels.shape(), &[1, 3]);
        assert_eq!(parsed.pixels[[0, 0]], 0.0);
        assert_eq!(parsed.pixels[[0, 1]], 0.2);
        assert_eq!(parsed.pixels[[0, 2]], 1.0);
    }

    #[test]
    fn make_dataset_checks_lengths() {
        let err = make_dataset(Array2::zeros((10, 784)), vec![0; 9], "x").unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 10, found: 9, .. }));

        let empty = make_dataset(Array2::zeros((0, 784)), vec![], "empty").unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.feature_dim(), 784);
    }

    proptest! {
        #[test]
        fn image_round_trip_is_byte_exact(
            rows in 1u32..5, cols in 1u32..5, n in 0u32..6, seed in any::<u64>()
        ) {
            let len = (n * rows * cols) as usize;
            let payload: Vec<u8> = (0..len)
                .map(|i| (seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 56) as u8)
                .collect();
            let bytes = image_file(n, rows, cols, &payload);
            let parsed = parse_idx_images(&bytes).unwrap();
            let again = encode_idx_images(&parsed.pixels, parsed.rows, parsed.cols).unwrap();
            prop_assert_eq!(again, bytes);
        }

        #[test]
        fn label_round_trip_is_byte_exact(labels in proptest::collection::vec(0u8..10, 0..64)) {
            let bytes = encode_idx_labels(&labels);
            let parsed = parse_idx_labels(&bytes).unwrap();
            prop_assert_eq!(&parsed, &labels);
            prop_assert_eq!(encode_idx_labels(&parsed), bytes);
        }
    }
}
