//! IDX-format digit ingestion and bilinear resizing.
//!
//! The IDX container: big-endian u32 magic (0x803 images, 0x801 labels),
//! big-endian dimension sizes, then raw u8 payload. The training file is
//! split 50,000 / 10,000 into train and validation pools; the test pool is
//! the official test file.

use std::io::Read;
use std::path::Path;

use crate::data::Split;
use crate::error::{CaeError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const TRAIN_POOL: usize = 50_000;

#[derive(Debug, Clone)]
pub struct MnistStore {
    pub rows: usize,
    pub cols: usize,
    images: Vec<u8>,
    pub labels: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CaeError::Format(format!(
                "truncated IDX file at byte offset {} (wanted {} more)",
                self.pos, n
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32_be(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parse an IDX image file: returns (pixels, count, rows, cols).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize, usize)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.u32_be()?;
    if magic != IMAGES_MAGIC {
        return Err(CaeError::Format(format!(
            "bad IDX image magic {magic:#010x} at byte offset 0"
        )));
    }
    let count = cur.u32_be()? as usize;
    let rows = cur.u32_be()? as usize;
    let cols = cur.u32_be()? as usize;
    let data = cur.take(count * rows * cols)?.to_vec();
    Ok((data, count, rows, cols))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.u32_be()?;
    if magic != LABELS_MAGIC {
        return Err(CaeError::Format(format!(
            "bad IDX label magic {magic:#010x} at byte offset 0"
        )));
    }
    let count = cur.u32_be()? as usize;
    Ok(cur.take(count)?.to_vec())
}

/// Load paired image/label IDX files.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<MnistStore> {
    let mut bytes = Vec::new();
    std::fs::File::open(images_path)?.read_to_end(&mut bytes)?;
    let (images, count, rows, cols) = parse_idx_images(&bytes)?;
    let mut lbytes = Vec::new();
    std::fs::File::open(labels_path)?.read_to_end(&mut lbytes)?;
    let labels = parse_idx_labels(&lbytes)?;
    if labels.len() != count {
        return Err(CaeError::Format(format!(
            "IDX image/label count mismatch: {count} vs {}",
            labels.len()
        )));
    }
    Ok(MnistStore {
        rows,
        cols,
        images,
        labels,
    })
}

impl MnistStore {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Build a small synthetic store (tests and smoke runs).
    pub fn synthetic(images: Vec<u8>, labels: Vec<u8>, rows: usize, cols: usize) -> Self {
        MnistStore {
            rows,
            cols,
            images,
            labels,
        }
    }

    /// Digit pool index range for a dataset split. Train and validation
    /// share the training file; test uses the test file as-is.
    pub fn pool(&self, split: Split) -> Result<std::ops::Range<usize>> {
        match split {
            Split::Train | Split::Val => {
                if self.len() < TRAIN_POOL + 10_000 {
                    return Err(CaeError::Format(format!(
                        "training digit file has {} digits; need 60,000 to split",
                        self.len()
                    )));
                }
                Ok(if split == Split::Train {
                    0..TRAIN_POOL
                } else {
                    TRAIN_POOL..TRAIN_POOL + 10_000
                })
            }
            Split::Test => Ok(0..self.len()),
        }
    }

    /// Digit normalized to [0, 1] and bilinearly resized to `out_size`.
    /// Values are quantized through f32 so stored datasets round-trip
    /// bit-exactly.
    pub fn digit_resized(&self, index: usize, out_size: usize) -> Result<Vec<f64>> {
        if index >= self.len() {
            return Err(CaeError::InvalidArgument(format!(
                "digit index {index} out of range ({} digits)",
                self.len()
            )));
        }
        let src = &self.images[index * self.rows * self.cols..(index + 1) * self.rows * self.cols];
        let (h, w) = (self.rows, self.cols);
        let mut out = vec![0.0f64; out_size * out_size];
        let sy_scale = h as f64 / out_size as f64;
        let sx_scale = w as f64 / out_size as f64;
        for oy in 0..out_size {
            let sy = ((oy as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f64;
            for ox in 0..out_size {
                let sx = ((ox as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f64;
                let p = |y: usize, x: usize| src[y * w + x] as f64 / 255.0;
                let v = p(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + p(y0, x1) * (1.0 - fy) * fx
                    + p(y1, x0) * fy * (1.0 - fx)
                    + p(y1, x1) * fy * fx;
                out[oy * out_size + ox] = v as f32 as f64;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_image_bytes(count: usize, rows: usize, cols: usize, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        b.extend_from_slice(&(count as u32).to_be_bytes());
        b.extend_from_slice(&(rows as u32).to_be_bytes());
        b.extend_from_slice(&(cols as u32).to_be_bytes());
        for i in 0..count * rows * cols {
            b.push(fill(i));
        }
        b
    }

    #[test]
    fn standard_header_parses() {
        let bytes = idx_image_bytes(3, 28, 28, |_| 7);
        let (data, count, rows, cols) = parse_idx_images(&bytes).unwrap();
        assert_eq!((count, rows, cols), (3, 28, 28));
        assert_eq!(data.len(), 3 * 28 * 28);
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected_with_offsets() {
        let mut bytes = idx_image_bytes(1, 4, 4, |_| 0);
        bytes[3] = 0x99;
        let err = parse_idx_images(&bytes).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        let bytes = idx_image_bytes(2, 28, 28, |_| 0);
        let err = parse_idx_images(&bytes[..100]).unwrap_err().to_string();
        assert!(err.contains("byte offset"), "{err}");

        let mut lb = Vec::new();
        lb.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        lb.extend_from_slice(&5u32.to_be_bytes());
        lb.extend_from_slice(&[1, 2, 3]);
        assert!(parse_idx_labels(&lb).is_err());
    }

    #[test]
    fn pixel_255_maps_to_one() {
        let store = MnistStore::synthetic(vec![255; 28 * 28], vec![0], 28, 28);
        let d = store.digit_resized(0, 32).unwrap();
        assert!(d.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn resizing_a_constant_image_is_constant() {
        let store = MnistStore::synthetic(vec![100; 28 * 28], vec![0], 28, 28);
        let d = store.digit_resized(0, 32).unwrap();
        let want = (100.0f64 / 255.0) as f32 as f64;
        for &v in &d {
            assert!((v - want).abs() < 1e-9, "{v} vs {want}");
        }
    }

    #[test]
    fn resize_preserves_range() {
        let store = MnistStore::synthetic(
            (0..28 * 28).map(|i| (i % 256) as u8).collect(),
            vec![0],
            28,
            28,
        );
        let d = store.digit_resized(0, 32).unwrap();
        assert!(d.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn split_pools() {
        let store = MnistStore::synthetic(vec![0; 60_000], vec![0; 60_000], 1, 1);
        assert_eq!(store.pool(Split::Train).unwrap(), 0..50_000);
        assert_eq!(store.pool(Split::Val).unwrap(), 50_000..60_000);
        let small = MnistStore::synthetic(vec![0; 100], vec![0; 100], 1, 1);
        assert_eq!(small.pool(Split::Test).unwrap(), 0..100);
        assert!(small.pool(Split::Train).is_err());
    }
}
