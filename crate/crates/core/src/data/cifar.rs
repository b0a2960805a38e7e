//! CIFAR-10 binary batches: 3073-byte records, planar RGB.

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use std::path::Path;

pub const RECORD_LEN: usize = 3073;
const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;

/// Load one or more CIFAR-10 binary batch files into a single dataset.
/// Planar per-channel bytes are interleaved to NHWC and scaled to [0,1].
pub fn load_cifar10(batch_paths: &[impl AsRef<Path>], name: &str, split: Split) -> Result<Dataset> {
    let mut images: Vec<f32> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    for path in batch_paths {
        let path = path.as_ref();
        let raw = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        if raw.is_empty() || raw.len() % RECORD_LEN != 0 {
            return Err(Error::DatasetFormat(format!(
                "{} holds {} bytes, not a multiple of {RECORD_LEN}",
                path.display(),
                raw.len()
            )));
        }
        for record in raw.chunks(RECORD_LEN) {
            labels.push(record[0]);
            let planes = &record[1..];
            for p in 0..PLANE {
                for ch in 0..3 {
                    images.push(planes[ch * PLANE + p] as f32 / 255.0);
                }
            }
        }
    }
    Dataset::new(name, split, SIDE, SIDE, 3, images, Some(labels))
}

/// Write a 32x32x3 dataset as a single CIFAR-10 binary batch.
pub fn write_cifar10(dataset: &Dataset, path: &Path) -> Result<()> {
    if dataset.height() != SIDE || dataset.width() != SIDE || dataset.channels() != 3 {
        return Err(Error::InvalidArgument(
            "CIFAR-10 output requires 32x32x3 images".into(),
        ));
    }
    let mut out = Vec::with_capacity(dataset.len() * RECORD_LEN);
    for i in 0..dataset.len() {
        out.push(dataset.labels()[i]);
        let img = dataset.image(i);
        for ch in 0..3 {
            for p in 0..PLANE {
                out.push((img[p * 3 + ch] * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
