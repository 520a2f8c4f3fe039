//! Checkpoint container: magic "KGPC", u32 version, u32 tensor count, then
//! per tensor a u16 name length + UTF-8 name, u32 ndims, u32 dims, and a
//! little-endian f32 payload (widened to f64 in memory).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use super::Tensor;

const MAGIC: &[u8; 4] = b"KGPC";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at offset 0")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("invalid tensor name: {0}")]
    BadName(String),
    #[error("tensor {name}: unsupported rank {ndims}")]
    BadRank { name: String, ndims: u32 },
    #[error("truncated payload for tensor {0}")]
    Truncated(String),
}

/// Write named tensors in the given order; order is part of the byte layout,
/// so callers keep it stable for reproducible files.
pub fn save_checkpoint(
    path: &Path,
    tensors: &[(String, &Tensor)],
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(CheckpointError::BadName(name.clone()));
        }
        w.write_u16::<LittleEndian>(bytes.len() as u16)?;
        w.write_all(bytes)?;
        w.write_u32::<LittleEndian>(2)?;
        w.write_u32::<LittleEndian>(t.rows() as u32)?;
        w.write_u32::<LittleEndian>(t.cols() as u32)?;
        for v in t.data() {
            w.write_f32::<LittleEndian>(*v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read back `(name, tensor)` pairs in file order.
pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = r.read_u32::<LittleEndian>()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.read_u16::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| CheckpointError::BadName(e.to_string()))?;
        let ndims = r.read_u32::<LittleEndian>()?;
        let (rows, cols) = match ndims {
            1 => (1, r.read_u32::<LittleEndian>()? as usize),
            2 => {
                let rows = r.read_u32::<LittleEndian>()? as usize;
                let cols = r.read_u32::<LittleEndian>()? as usize;
                (rows, cols)
            }
            _ => return Err(CheckpointError::BadRank { name, ndims }),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            match r.read_f32::<LittleEndian>() {
                Ok(v) => data.push(v as f64),
                Err(_) => return Err(CheckpointError::Truncated(name)),
            }
        }
        let tensor = Tensor::new(rows, cols, data).expect("shape matches data by construction");
        out.push((name, tensor));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.kgpc");
        let a = Tensor::new(2, 3, vec![1.5, -0.25, 3.0, 0.125, 7.0, -2.5]).unwrap();
        let b = Tensor::scalar(0.75);
        save_checkpoint(&path, &[("layer.w".into(), &a), ("layer.b".into(), &b)]).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "layer.w");
        assert_eq!(loaded[0].1.data(), a.data());
        assert_eq!(loaded[1].1.item(), 0.75);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.kgpc");
        std::fs::write(&path, b"XXXXgarbage").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn truncation_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.kgpc");
        let a = Tensor::new(4, 4, vec![1.0; 16]).unwrap();
        save_checkpoint(&path, &[("w".into(), &a)]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Truncated(_))
        ));
    }
}
