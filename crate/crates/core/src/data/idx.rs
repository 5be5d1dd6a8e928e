//! IDX image/label files: big-endian `u32` magic and dimensions followed by
//! unsigned bytes.

use std::path::Path;

use super::{Case, LabeledDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format_at(format!("{what} byte offset {offset}"), "truncated header"))
}

pub fn load_idx(images_path: &Path, labels_path: &Path, normalize: bool) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels, normalize)
}

/// Parses in-memory IDX image and label buffers. With `normalize`, pixel
/// bytes are divided by 255.
pub fn parse_idx(images: &[u8], labels: &[u8], normalize: bool) -> Result<LabeledDataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format_at(
            "images byte offset 0",
            format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::format_at(
            "images byte offset 8",
            "zero image dimension",
        ));
    }

    let label_magic = be_u32(labels, 0, "labels")?;
    if label_magic != LABEL_MAGIC {
        return Err(Error::format_at(
            "labels byte offset 0",
            format!("bad magic {label_magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let label_count = be_u32(labels, 4, "labels")? as usize;
    if label_count != count {
        return Err(Error::format_at(
            "labels byte offset 4",
            format!("{count} images but {label_count} labels"),
        ));
    }

    let pixels = rows * cols;
    let needed = 16 + count * pixels;
    if images.len() != needed {
        return Err(Error::format_at(
            format!("images byte offset {}", images.len().min(needed)),
            format!("expected {needed} bytes, file has {}", images.len()),
        ));
    }
    if labels.len() != 8 + count {
        return Err(Error::format_at(
            format!("labels byte offset {}", labels.len().min(8 + count)),
            format!("expected {} bytes, file has {}", 8 + count, labels.len()),
        ));
    }

    let label_bytes = &labels[8..];
    let class_count = label_bytes
        .iter()
        .copied()
        .max()
        .map_or(1, |m| m as usize + 1);
    let divisor = if normalize { 255.0 } else { 1.0 };
    let cases = images[16..]
        .chunks_exact(pixels)
        .zip(label_bytes)
        .map(|(img, &label)| {
            let x = img.iter().map(|&p| p as f64 / divisor).collect();
            Ok(Case {
                input: Tensor::vector(x)?,
                label: label as usize,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(class_count, cases)
}

/// Serializes `count` images of `rows × cols` bytes to the IDX image layout.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [count, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

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

    #[test]
    fn three_two_by_two_images() {
        let pixels: Vec<u8> = (0..12).map(|v| v * 20).collect();
        let d = parse_idx(
            &encode_idx_images(2, 2, &pixels),
            &encode_idx_labels(&[0, 1, 2]),
            false,
        )
        .unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.input_width(), 4);
        assert_eq!(d.cases()[1].input.data(), &[80.0, 100.0, 120.0, 140.0]);
        assert_eq!(d.cases()[2].label, 2);
    }

    #[test]
    fn count_mismatch() {
        let err = parse_idx(
            &encode_idx_images(2, 2, &[0; 20]),
            &encode_idx_labels(&[0, 1, 2, 3]),
            true,
        )
        .unwrap_err();
        match err {
            Error::Format { location, detail } => {
                assert_eq!(location, "labels byte offset 4");
                assert!(detail.contains("5 images but 4 labels"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalization_scales_to_unit() {
        let d = parse_idx(
            &encode_idx_images(1, 2, &[255, 0]),
            &encode_idx_labels(&[0]),
            true,
        )
        .unwrap();
        assert_eq!(d.cases()[0].input.data(), &[1.0, 0.0]);
    }

    #[test]
    fn bad_magic_and_truncation_name_offsets() {
        let mut images = encode_idx_images(2, 2, &[1; 8]);
        let labels = encode_idx_labels(&[0, 1]);
        images.truncate(images.len() - 1);
        match parse_idx(&images, &labels, true).unwrap_err() {
            Error::Format { location, .. } => assert_eq!(location, "images byte offset 23"),
            other => panic!("{other:?}"),
        }
        images[3] = 0x01;
        assert!(matches!(
            parse_idx(&images, &labels, true),
            Err(Error::Format { .. })
        ));
        assert!(parse_idx(&images[..6], &labels, true).is_err());
    }
}
