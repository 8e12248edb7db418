//! On-disk formats for core chains and factorized layers.
//!
//! Ring files are self-describing: the magic string `TRF1`, the core count,
//! then per core three dimension integers followed by the row-major 64-bit
//! float payload. All integers are unsigned 64-bit; everything little-endian.
//! A JSON sidecar variant with the same fields is accepted interchangeably
//! (the loader sniffs the leading bytes). Layer files wrap a ring block with
//! a `TRL1` header recording the input/output mode counts and sizes.

use crate::format::{FormatError, TrFormat};
use crate::layer::{LayerError, TrLayer};
use crate::tensor::DenseTensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

const RING_MAGIC: &[u8; 4] = b"TRF1";
const LAYER_MAGIC: &[u8; 4] = b"TRL1";

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: String },
    #[error("truncated file while reading {what}")]
    Truncated { what: &'static str },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Layer(#[from] LayerError),
}

#[derive(Serialize, Deserialize)]
struct RingFile {
    magic: String,
    cores: Vec<CoreFile>,
}

#[derive(Serialize, Deserialize)]
struct CoreFile {
    dims: [u64; 3],
    data: Vec<f64>,
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64, FileError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| FileError::Truncated { what })?;
    Ok(u64::from_le_bytes(buf))
}

fn write_ring_block<W: Write>(w: &mut W, f: &TrFormat) -> io::Result<()> {
    w.write_all(RING_MAGIC)?;
    write_u64(w, f.cores().len() as u64)?;
    for core in f.cores() {
        for &d in core.shape() {
            write_u64(w, d as u64)?;
        }
        for &v in core.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_ring_block<R: Read>(r: &mut R) -> Result<TrFormat, FileError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| FileError::Truncated { what: "magic" })?;
    if &magic != RING_MAGIC {
        return Err(FileError::BadMagic {
            expected: String::from_utf8_lossy(RING_MAGIC).into_owned(),
        });
    }
    let count = read_u64(r, "core count")? as usize;
    let mut cores = Vec::with_capacity(count);
    for _ in 0..count {
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = read_u64(r, "core dims")? as usize;
        }
        let len = dims.iter().product::<usize>();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)
                .map_err(|_| FileError::Truncated { what: "core data" })?;
            data.push(f64::from_le_bytes(buf));
        }
        cores.push(DenseTensor::new(dims.to_vec(), data).map_err(FormatError::from)?);
    }
    Ok(TrFormat::new(cores)?)
}

pub fn save_ring(f: &TrFormat, path: &Path) -> Result<(), FileError> {
    let mut buf = Vec::new();
    write_ring_block(&mut buf, f)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn save_ring_json(f: &TrFormat, path: &Path) -> Result<(), FileError> {
    let file = RingFile {
        magic: String::from_utf8_lossy(RING_MAGIC).into_owned(),
        cores: f
            .cores()
            .iter()
            .map(|c| CoreFile {
                dims: [
                    c.shape()[0] as u64,
                    c.shape()[1] as u64,
                    c.shape()[2] as u64,
                ],
                data: c.data().to_vec(),
            })
            .collect(),
    };
    fs::write(path, serde_json::to_vec_pretty(&file)?)?;
    Ok(())
}

/// Load a ring from either the binary or the JSON representation.
pub fn load_ring(path: &Path) -> Result<TrFormat, FileError> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(RING_MAGIC) {
        return read_ring_block(&mut &bytes[..]);
    }
    let file: RingFile = serde_json::from_slice(&bytes)?;
    if file.magic.as_bytes() != RING_MAGIC {
        return Err(FileError::BadMagic {
            expected: String::from_utf8_lossy(RING_MAGIC).into_owned(),
        });
    }
    let cores = file
        .cores
        .into_iter()
        .map(|c| {
            DenseTensor::new(c.dims.iter().map(|&d| d as usize).collect(), c.data)
                .map_err(FormatError::from)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrFormat::new(cores)?)
}

pub fn save_layer(layer: &TrLayer, path: &Path) -> Result<(), FileError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(LAYER_MAGIC);
    write_u64(&mut buf, layer.input_dims().len() as u64)?;
    write_u64(&mut buf, layer.output_dims().len() as u64)?;
    for &d in layer.input_dims() {
        write_u64(&mut buf, d as u64)?;
    }
    for &d in layer.output_dims() {
        write_u64(&mut buf, d as u64)?;
    }
    write_ring_block(&mut buf, layer.cores())?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_layer(path: &Path) -> Result<TrLayer, FileError> {
    let bytes = fs::read(path)?;
    let mut r = &bytes[..];
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| FileError::Truncated { what: "magic" })?;
    if &magic != LAYER_MAGIC {
        return Err(FileError::BadMagic {
            expected: String::from_utf8_lossy(LAYER_MAGIC).into_owned(),
        });
    }
    let n = read_u64(&mut r, "input mode count")? as usize;
    let m = read_u64(&mut r, "output mode count")? as usize;
    let mut input_dims = Vec::with_capacity(n);
    for _ in 0..n {
        input_dims.push(read_u64(&mut r, "input dims")? as usize);
    }
    let mut output_dims = Vec::with_capacity(m);
    for _ in 0..m {
        output_dims.push(read_u64(&mut r, "output dims")? as usize);
    }
    let ring = read_ring_block(&mut r)?;
    Ok(TrLayer::new(input_dims, output_dims, ring)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::random_tr;

    #[test]
    fn ring_binary_round_trip() {
        let ring = random_tr(&[2, 3, 4], &[2, 3, 2], 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ring.trf");
        save_ring(&ring, &path).unwrap();
        let loaded = load_ring(&path).unwrap();
        assert_eq!(loaded.cores().len(), 3);
        for (a, b) in ring.cores().iter().zip(loaded.cores()) {
            assert_eq!(a.shape(), b.shape());
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn ring_json_round_trip() {
        let ring = random_tr(&[2, 2], &[3, 2], 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ring.json");
        save_ring_json(&ring, &path).unwrap();
        let loaded = load_ring(&path).unwrap();
        for (a, b) in ring.cores().iter().zip(loaded.cores()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.trf");
        fs::write(&path, b"NOPE----").unwrap();
        assert!(load_ring(&path).is_err());
    }

    #[test]
    fn layer_round_trip() {
        let layer = TrLayer::random(vec![2, 3], vec![4], &[2, 2, 2], 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("layer.trl");
        save_layer(&layer, &path).unwrap();
        let loaded = load_layer(&path).unwrap();
        assert_eq!(loaded.input_dims(), layer.input_dims());
        assert_eq!(loaded.output_dims(), layer.output_dims());
        for (a, b) in layer.cores().cores().iter().zip(loaded.cores().cores()) {
            assert_eq!(a.data(), b.data());
        }
    }
}
