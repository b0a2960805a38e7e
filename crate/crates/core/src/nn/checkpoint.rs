//! Flat binary weight container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "MAUD"
//! version u32      currently 1
//! count   u32      number of parameter records
//! record:
//!   name_len u32, name UTF-8 bytes
//!   dtype    u8   (1 = f32, 2 = f64)
//!   rank     u64, dims rank x u64
//!   values   raw little-endian floats, row-major
//! ```

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::{Dtype, Scalar, Tensor};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"MAUD";
pub const VERSION: u32 = 1;

/// Write named tensors in the given order.
pub fn write_tensors<S: Scalar, W: Write>(
    mut w: W,
    tensors: &[(String, &Tensor<S>)],
) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Checkpoint(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(name_bytes).map_err(io_err)?;
        w.write_all(&[S::DTYPE as u8]).map_err(io_err)?;
        w.write_all(&(tensor.shape().len() as u64).to_le_bytes())
            .map_err(io_err)?;
        for dim in tensor.shape() {
            w.write_all(&(*dim as u64).to_le_bytes()).map_err(io_err)?;
        }
        match S::DTYPE {
            Dtype::F32 => {
                for v in tensor.data() {
                    w.write_all(&(v.as_f64() as f32).to_le_bytes()).map_err(io_err)?;
                }
            }
            Dtype::F64 => {
                for v in tensor.data() {
                    w.write_all(&v.as_f64().to_le_bytes()).map_err(io_err)?;
                }
            }
        }
    }
    Ok(())
}

/// Read every record into a name -> tensor map.
pub fn read_tensors<S: Scalar, R: Read>(mut r: R) -> Result<HashMap<String, Tensor<S>>> {
    let io_err = |e: std::io::Error| Error::Checkpoint(format!("read failed: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io_err)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported container version {version}"
        )));
    }
    r.read_exact(&mut u32buf).map_err(io_err)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut out = HashMap::with_capacity(count);
    let mut u64buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut u32buf).map_err(io_err)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io_err)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::Checkpoint(format!("parameter name not UTF-8: {e}")))?;
        let mut dtype_byte = [0u8; 1];
        r.read_exact(&mut dtype_byte).map_err(io_err)?;
        let dtype = Dtype::from_tag(dtype_byte[0])
            .ok_or_else(|| Error::Checkpoint(format!("unknown dtype tag {}", dtype_byte[0])))?;
        r.read_exact(&mut u64buf).map_err(io_err)?;
        let rank = u64::from_le_bytes(u64buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u64buf).map_err(io_err)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        match dtype {
            Dtype::F32 => {
                let mut buf = [0u8; 4];
                for _ in 0..n {
                    r.read_exact(&mut buf).map_err(io_err)?;
                    data.push(S::from_f64(f32::from_le_bytes(buf) as f64));
                }
            }
            Dtype::F64 => {
                let mut buf = [0u8; 8];
                for _ in 0..n {
                    r.read_exact(&mut buf).map_err(io_err)?;
                    data.push(S::from_f64(f64::from_le_bytes(buf)));
                }
            }
        }
        out.insert(name, Tensor::new(shape, data)?);
    }
    Ok(out)
}

/// Save every named tensor of a model (running statistics included).
pub fn save_model<S: Scalar>(model: &Model<S>, path: &Path) -> Result<()> {
    let tensors: Vec<(String, &Tensor<S>)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t, _)| (n, t))
        .collect();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_tensors(std::io::BufWriter::new(file), &tensors)
}

/// Load weights into an existing model of matching architecture.
pub fn load_model<S: Scalar>(model: &mut Model<S>, path: &Path) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let map = read_tensors(std::io::BufReader::new(file))?;
    model.load_tensors(&map)
}
