//! Binary checkpoint container: magic, version, kind tag, then a list of
//! f32 arrays with explicit shapes, all little-endian. Weights are stored
//! as f32 and training quantizes its final weights through f32, so a
//! save/load cycle reproduces the in-memory model bit for bit.

use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"FDCP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("checkpoint io {path}: {message}")]
    Io { path: String, message: String },
    #[error("checkpoint {path}: bad magic")]
    BadMagic { path: String },
    #[error("checkpoint {path}: unsupported version {version}")]
    BadVersion { path: String, version: u32 },
    #[error("checkpoint {path}: expected kind {expected}, found {found}")]
    WrongKind { path: String, expected: u8, found: u8 },
    #[error("checkpoint {path}: truncated or malformed ({detail})")]
    Malformed { path: String, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: u8,
    pub arrays: Vec<Array>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<u32>,
    pub data: Vec<f32>,
}

impl Array {
    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * cols, data.len());
        Self { shape: vec![rows as u32, cols as u32], data }
    }

    pub fn vector(data: Vec<f32>) -> Self {
        let n = data.len() as u32;
        Self { shape: vec![n], data }
    }
}

pub const KIND_SEGMENTER: u8 = 1;
pub const KIND_SCORER: u8 = 2;

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CkptError> {
    let io = |e: std::io::Error| CkptError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(ckpt.kind);
    buf.extend_from_slice(&(ckpt.arrays.len() as u32).to_le_bytes());
    for a in &ckpt.arrays {
        buf.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
        for &d in &a.shape {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        let expect: usize = a.shape.iter().map(|&d| d as usize).product();
        assert_eq!(expect, a.data.len(), "array shape/data mismatch");
        for &v in &a.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&buf).map_err(io)
}

pub fn load(path: &Path, expected_kind: u8) -> Result<Checkpoint, CkptError> {
    let io = |e: std::io::Error| CkptError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mal = |detail: &str| CkptError::Malformed {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    let mut buf = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(io)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], CkptError> {
        if pos + n > buf.len() {
            return Err(mal("unexpected end of file"));
        }
        let s = &buf[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(CkptError::BadMagic { path: path.display().to_string() });
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CkptError::BadVersion { path: path.display().to_string(), version });
    }
    let kind = take(1)?[0];
    if kind != expected_kind {
        return Err(CkptError::WrongKind {
            path: path.display().to_string(),
            expected: expected_kind,
            found: kind,
        });
    }
    let n_arrays = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut arrays = Vec::with_capacity(n_arrays);
    for _ in 0..n_arrays {
        let ndim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if ndim > 4 {
            return Err(mal("implausible array rank"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()));
        }
        let count: usize = shape.iter().map(|&d| d as usize).product();
        let bytes = take(count * 4)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(Array { shape, data });
    }
    if pos != buf.len() {
        return Err(mal("trailing bytes"));
    }
    Ok(Checkpoint { kind, arrays })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = Checkpoint {
            kind: KIND_SEGMENTER,
            arrays: vec![
                Array::matrix(2, 3, vec![1.0, -0.5, 0.25, 1e-7, 3.5e8, -0.0]),
                Array::vector(vec![0.125, 7.0]),
            ],
        };
        save(&path, &ckpt).unwrap();
        let back = load(&path, KIND_SEGMENTER).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = Checkpoint { kind: KIND_SCORER, arrays: vec![Array::vector(vec![1.0])] };
        save(&path, &ckpt).unwrap();
        assert!(matches!(
            load(&path, KIND_SEGMENTER),
            Err(CkptError::WrongKind { expected: 1, found: 2, .. })
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = Checkpoint { kind: KIND_SEGMENTER, arrays: vec![Array::vector(vec![1.0; 10])] };
        save(&path, &ckpt).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load(&path, KIND_SEGMENTER), Err(CkptError::Malformed { .. })));
    }

    #[test]
    fn garbage_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(load(&path, KIND_SEGMENTER), Err(CkptError::BadMagic { .. })));
    }
}
