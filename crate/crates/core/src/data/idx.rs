//! IDX files as distributed for MNIST.
//!
//! Big-endian throughout. Images: magic `0x00000803`, then `u32` count, rows,
//! cols, then `count*rows*cols` unsigned bytes. Labels: magic `0x00000801`,
//! `u32` count, then `count` unsigned bytes. Pixels are scaled to `[0, 1]`.

use std::path::Path;

use super::{Dataset, ImageShape, Sample};
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn idx_err(file: &str, offset: usize, detail: impl Into<String>) -> Error {
    Error::Idx {
        file: file.to_string(),
        offset,
        detail: detail.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, file: &str, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            idx_err(
                file,
                bytes.len(),
                format!("truncated header: {what} expected at byte {offset}"),
            )
        })
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, file: &str) -> Result<&'a [u8]> {
    let end = start + len;
    if bytes.len() < end {
        return Err(idx_err(
            file,
            bytes.len(),
            format!("truncated payload: expected {len} bytes from byte {start}, file ends at byte {}", bytes.len()),
        ));
    }
    if bytes.len() > end {
        return Err(idx_err(file, end, format!("{} trailing bytes after payload", bytes.len() - end)));
    }
    Ok(&bytes[start..end])
}

/// Parses in-memory IDX image and label files.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    const IMG: &str = "images";
    const LBL: &str = "labels";
    let magic = read_u32(images, 0, IMG, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(idx_err(IMG, 0, format!("bad magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")));
    }
    let count = read_u32(images, 4, IMG, "image count")? as usize;
    let rows = read_u32(images, 8, IMG, "row count")? as usize;
    let cols = read_u32(images, 12, IMG, "column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(idx_err(IMG, 8, format!("image extent {rows}x{cols}")));
    }

    let magic = read_u32(labels, 0, LBL, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(idx_err(LBL, 0, format!("bad magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")));
    }
    let label_count = read_u32(labels, 4, LBL, "label count")? as usize;
    if label_count != count {
        return Err(idx_err(
            LBL,
            4,
            format!("label count {label_count} does not match image count {count}"),
        ));
    }

    let pixels = payload(images, 16, count * rows * cols, IMG)?;
    let label_bytes = payload(labels, 8, count, LBL)?;

    let samples = pixels
        .chunks(rows * cols)
        .zip(label_bytes)
        .map(|(px, &l)| Sample {
            input: px.iter().map(|&p| f64::from(p) / 255.0).collect(),
            label: usize::from(l),
        })
        .collect();
    Dataset::new(samples, Some(ImageShape { rows, cols, channels: 1 }))
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels).map_err(|e| match e {
        Error::Idx { file, offset, detail } => {
            let path = if file == "images" { images_path } else { labels_path };
            Error::Idx {
                file: path.display().to_string(),
                offset,
                detail,
            }
        }
        other => other,
    })
}

/// Encodes `count` images of `rows x cols` bytes.
pub fn write_idx_images(pixels: &[u8], count: usize, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Vec<u8>, Vec<u8>) {
        let pixels: Vec<u8> = (0..3 * 2 * 2).map(|i| (i * 20) as u8).collect();
        (write_idx_images(&pixels, 3, 2, 2), write_idx_labels(&[0, 2, 1]))
    }

    #[test]
    fn parses_valid_files() {
        let (img, lbl) = tiny();
        let ds = parse_idx(&img, &lbl).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels(), vec![0, 2, 1]);
        assert_eq!(ds.samples()[1].input[0], 80.0 / 255.0);
        assert!(ds.samples().iter().flat_map(|s| &s.input).all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let (mut img, lbl) = tiny();
        img[3] = 0x01;
        match parse_idx(&img, &lbl) {
            Err(Error::Idx { file, offset: 0, detail }) => {
                assert_eq!(file, "images");
                assert!(detail.contains("magic"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_rejected() {
        let (img, _) = tiny();
        let lbl = write_idx_labels(&[0, 1]);
        assert!(matches!(parse_idx(&img, &lbl), Err(Error::Idx { offset: 4, .. })));
    }

    #[test]
    fn truncation_reports_end_offset() {
        let (img, lbl) = tiny();
        let cut = &img[..img.len() - 3];
        match parse_idx(cut, &lbl) {
            Err(Error::Idx { offset, detail, .. }) => {
                assert_eq!(offset, cut.len());
                assert!(detail.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_idx(&img[..10], &lbl), Err(Error::Idx { offset: 10, .. })));
    }
}
