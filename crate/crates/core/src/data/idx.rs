//! IDX file format (MNIST/F-MNIST): big-endian magic and dims.

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::DatasetFormat(format!("truncated {what}: {e}")))?;
    Ok(u32::from_be_bytes(buf))
}

/// Load an IDX image/label pair into a dataset with pixels scaled to [0,1].
pub fn load_idx(images_path: &Path, labels_path: &Path, name: &str, split: Split) -> Result<Dataset> {
    let mut img_file = std::fs::File::open(images_path)
        .map_err(|e| Error::io(images_path.display().to_string(), e))?;
    let magic = read_u32_be(&mut img_file, "image header")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::DatasetFormat(format!(
            "bad magic {magic:#010x} in {} (expected {IMAGES_MAGIC:#010x})",
            images_path.display()
        )));
    }
    let n = read_u32_be(&mut img_file, "image count")? as usize;
    let rows = read_u32_be(&mut img_file, "row count")? as usize;
    let cols = read_u32_be(&mut img_file, "column count")? as usize;
    let mut raw = Vec::new();
    img_file
        .read_to_end(&mut raw)
        .map_err(|e| Error::io(images_path.display().to_string(), e))?;
    if raw.len() != n * rows * cols {
        return Err(Error::DatasetFormat(format!(
            "image payload holds {} bytes, header promises {}",
            raw.len(),
            n * rows * cols
        )));
    }

    let mut lbl_file = std::fs::File::open(labels_path)
        .map_err(|e| Error::io(labels_path.display().to_string(), e))?;
    let magic = read_u32_be(&mut lbl_file, "label header")?;
    if magic != LABELS_MAGIC {
        return Err(Error::DatasetFormat(format!(
            "bad magic {magic:#010x} in {} (expected {LABELS_MAGIC:#010x})",
            labels_path.display()
        )));
    }
    let n_labels = read_u32_be(&mut lbl_file, "label count")? as usize;
    if n_labels != n {
        return Err(Error::DatasetFormat(format!(
            "{n} images but {n_labels} labels"
        )));
    }
    let mut labels = Vec::new();
    lbl_file
        .read_to_end(&mut labels)
        .map_err(|e| Error::io(labels_path.display().to_string(), e))?;
    if labels.len() != n {
        return Err(Error::DatasetFormat(format!(
            "label payload holds {} bytes, header promises {n}",
            labels.len()
        )));
    }

    let images: Vec<f32> = raw.iter().map(|b| *b as f32 / 255.0).collect();
    Dataset::new(name, split, rows, cols, 1, images, Some(labels))
}

/// Write a dataset back out as an IDX pair (inverse of [`load_idx`]).
/// Pixels are quantized to bytes by round(v * 255).
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    if dataset.channels() != 1 {
        return Err(Error::InvalidArgument(
            "IDX output supports single-channel images only".into(),
        ));
    }
    let mut img = std::fs::File::create(images_path)
        .map_err(|e| Error::io(images_path.display().to_string(), e))?;
    let io_err = |p: &Path| {
        let p = p.display().to_string();
        move |e: std::io::Error| Error::io(p.clone(), e)
    };
    img.write_all(&IMAGES_MAGIC.to_be_bytes())
        .map_err(io_err(images_path))?;
    img.write_all(&(dataset.len() as u32).to_be_bytes())
        .map_err(io_err(images_path))?;
    img.write_all(&(dataset.height() as u32).to_be_bytes())
        .map_err(io_err(images_path))?;
    img.write_all(&(dataset.width() as u32).to_be_bytes())
        .map_err(io_err(images_path))?;
    let bytes: Vec<u8> = dataset
        .images()
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    img.write_all(&bytes).map_err(io_err(images_path))?;

    let mut lbl = std::fs::File::create(labels_path)
        .map_err(|e| Error::io(labels_path.display().to_string(), e))?;
    lbl.write_all(&LABELS_MAGIC.to_be_bytes())
        .map_err(io_err(labels_path))?;
    lbl.write_all(&(dataset.len() as u32).to_be_bytes())
        .map_err(io_err(labels_path))?;
    lbl.write_all(dataset.labels()).map_err(io_err(labels_path))?;
    Ok(())
}
