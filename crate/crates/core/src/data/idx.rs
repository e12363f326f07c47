//! MNIST IDX files: big-endian magic, big-endian `u32` extents, raw bytes.

use std::path::Path;

use super::dataset::{Dataset, U8Image};
use crate::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { found, expected });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::DimensionMismatch(format!(
            "header describes {expected} bytes but the file has {}",
            bytes.len()
        )));
    }
    Ok(())
}

/// Parses an image file into `(1, rows, cols)` images.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<U8Image>> {
    check_magic(bytes, IDX_IMAGE_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::DimensionMismatch(format!("image extents {rows}x{cols}")));
    }
    let plane = rows * cols;
    check_len(bytes, 16 + n * plane)?;
    (0..n)
        .map(|i| U8Image::new(1, rows, cols, bytes[16 + i * plane..16 + (i + 1) * plane].to_vec()))
        .collect()
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABEL_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    check_len(bytes, 8 + n)?;
    Ok(bytes[8..].to_vec())
}

pub fn load_mnist_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let bytes = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let images = parse_idx_images(&bytes)?;
    let labels = match labels_path {
        Some(p) => Some(parse_idx_labels(&std::fs::read(p).map_err(|e| Error::io(p, e))?)?),
        None => None,
    };
    Dataset::new(images_path.display().to_string(), images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGE_MAGIC, n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn two_image_round_trip() {
        let px: Vec<u8> = (0..8).collect();
        let ims = parse_idx_images(&fixture(2, 2, 2, &px)).unwrap();
        assert_eq!(ims.len(), 2);
        assert_eq!(ims[1].data, vec![4, 5, 6, 7]);
        assert_eq!(ims[0].shape(), [1, 2, 2]);
    }

    #[test]
    fn malformed_inputs_are_distinguished() {
        let mut bad = fixture(1, 2, 2, &[0; 4]);
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::BadMagic { found: 0x801, .. })));
        assert!(matches!(parse_idx_images(&fixture(2, 2, 2, &[0; 5])), Err(Error::Truncated { .. })));
        assert!(matches!(parse_idx_images(&[0, 0, 8]), Err(Error::Truncated { .. })));
        assert!(matches!(
            parse_idx_images(&fixture(1, 2, 2, &[0; 6])),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(parse_idx_images(&fixture(1, 0, 2, &[])), Err(Error::DimensionMismatch(_))));
        let mut labels = IDX_LABEL_MAGIC.to_be_bytes().to_vec();
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[1, 2, 3]);
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![1, 2, 3]);
        assert!(parse_idx_labels(&fixture(1, 1, 1, &[0])).is_err());
    }
}
