//! Binary tensor archive: 8-byte magic, version, length-prefixed JSON
//! manifest, then raw little-endian f32 arrays in manifest order. Used for
//! training checkpoints, frozen network artifacts, and cached evaluation
//! statistics (distinguished by the manifest `kind`).

use fagan_tensor::Tensor;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"FAGANCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes; not an archive file")]
    BadMagic,
    #[error("unsupported archive version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("archive is truncated: need {needed} bytes, have {have}")]
    Truncated { needed: u64, have: u64 },
    #[error("corrupt manifest: {0}")]
    Manifest(String),
    #[error("tensor {name}: shape {shape:?} does not match {len} stored elements")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        len: u64,
    },
    #[error("archive kind is {found:?}, expected {expected:?}")]
    WrongKind { expected: String, found: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the data section.
    pub offset: u64,
    /// Element count.
    pub len: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorMeta>,
}

/// Write `tensors` with a typed `meta` payload. The write goes through a
/// temporary file and a rename, so a crash never leaves a half-written
/// archive at `path`.
pub fn write_archive<M: Serialize>(
    path: &Path,
    kind: &str,
    meta: &M,
    tensors: &[(String, &Tensor<f32>)],
) -> Result<(), ArchiveError> {
    let mut metas = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        metas.push(TensorMeta {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset,
            len: t.len() as u64,
        });
        offset += 4 * t.len() as u64;
    }
    let manifest = Manifest {
        kind: kind.to_string(),
        meta: serde_json::to_value(meta).map_err(|e| ArchiveError::Manifest(e.to_string()))?,
        tensors: metas,
    };
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| ArchiveError::Manifest(e.to_string()))?;

    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&manifest_bytes)?;
        let mut buf = Vec::with_capacity(1 << 16);
        for (_, t) in tensors {
            buf.clear();
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            f.write_all(&buf)?;
        }
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub struct Archive {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Archive {
    pub fn meta_as<M: DeserializeOwned>(&self) -> Result<M, ArchiveError> {
        serde_json::from_value(self.meta.clone())
            .map_err(|e| ArchiveError::Manifest(format!("meta payload: {e}")))
    }

    pub fn expect_kind(&self, expected: &str) -> Result<(), ArchiveError> {
        if self.kind != expected {
            return Err(ArchiveError::WrongKind {
                expected: expected.to_string(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn take_tensors(self) -> Vec<Tensor<f32>> {
        self.tensors.into_iter().map(|(_, t)| t).collect()
    }
}

/// Read and fully validate an archive: magic, version, manifest shape
/// bookkeeping and exact data-section length are all checked before any
/// tensor is materialized.
pub fn read_archive(path: &Path) -> Result<Archive, ArchiveError> {
    let bytes = fs::read(path)?;
    let need = |n: u64| -> Result<(), ArchiveError> {
        if (bytes.len() as u64) < n {
            Err(ArchiveError::Truncated {
                needed: n,
                have: bytes.len() as u64,
            })
        } else {
            Ok(())
        }
    };
    need(20)?;
    if &bytes[0..8] != MAGIC {
        return Err(ArchiveError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(ArchiveError::Version { found: version });
    }
    let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    need(20 + manifest_len)?;
    let manifest: Manifest = serde_json::from_slice(&bytes[20..20 + manifest_len as usize])
        .map_err(|e| ArchiveError::Manifest(e.to_string()))?;

    // validate the layout before reading any array
    let data_start = 20 + manifest_len;
    let mut expected_offset = 0u64;
    for m in &manifest.tensors {
        let elements: u64 = m.shape.iter().map(|&d| d as u64).product();
        if elements != m.len {
            return Err(ArchiveError::ShapeMismatch {
                name: m.name.clone(),
                shape: m.shape.clone(),
                len: m.len,
            });
        }
        if m.dtype != "f32" {
            return Err(ArchiveError::Manifest(format!(
                "tensor {}: unsupported dtype {}",
                m.name, m.dtype
            )));
        }
        if m.offset != expected_offset {
            return Err(ArchiveError::Manifest(format!(
                "tensor {}: offset {} is not contiguous (expected {})",
                m.name, m.offset, expected_offset
            )));
        }
        expected_offset += 4 * m.len;
    }
    need(data_start + expected_offset)?;
    if bytes.len() as u64 != data_start + expected_offset {
        return Err(ArchiveError::Manifest(format!(
            "{} trailing bytes after the data section",
            bytes.len() as u64 - data_start - expected_offset
        )));
    }

    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for m in &manifest.tensors {
        let start = (data_start + m.offset) as usize;
        let mut data = Vec::with_capacity(m.len as usize);
        let mut cursor = &bytes[start..start + 4 * m.len as usize];
        let mut quad = [0u8; 4];
        for _ in 0..m.len {
            cursor.read_exact(&mut quad)?;
            data.push(f32::from_le_bytes(quad));
        }
        tensors.push((m.name.clone(), Tensor::new(&m.shape, data)));
    }
    Ok(Archive {
        kind: manifest.kind,
        meta: manifest.meta,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Meta {
        note: String,
        value: u64,
    }

    fn sample_tensors() -> Vec<(String, Tensor<f32>)> {
        vec![
            ("a".to_string(), Tensor::from_fn(&[2, 3], |i| i as f32 * 0.5)),
            ("b".to_string(), Tensor::from_fn(&[4], |i| -(i as f32))),
        ]
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fgn");
        let tensors = sample_tensors();
        let refs: Vec<(String, &Tensor<f32>)> =
            tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        let meta = Meta {
            note: "hello".into(),
            value: 42,
        };
        write_archive(&path, "checkpoint", &meta, &refs).unwrap();
        let back = read_archive(&path).unwrap();
        back.expect_kind("checkpoint").unwrap();
        assert_eq!(back.meta_as::<Meta>().unwrap(), meta);
        for ((n1, t1), (n2, t2)) in tensors.iter().zip(&back.tensors) {
            assert_eq!(n1, n2);
            assert!(t1 == t2);
        }
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fgn");
        let tensors = sample_tensors();
        let refs: Vec<(String, &Tensor<f32>)> =
            tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        write_archive(&path, "checkpoint", &serde_json::json!({}), &refs).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_archive(&path), Err(ArchiveError::BadMagic)));
    }

    #[test]
    fn version_truncation_and_shape_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fgn");
        let tensors = sample_tensors();
        let refs: Vec<(String, &Tensor<f32>)> =
            tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        write_archive(&path, "checkpoint", &serde_json::json!({}), &refs).unwrap();
        let bytes = fs::read(&path).unwrap();

        let mut wrong_version = bytes.clone();
        wrong_version[8..12].copy_from_slice(&9u32.to_le_bytes());
        fs::write(&path, &wrong_version).unwrap();
        assert!(matches!(
            read_archive(&path),
            Err(ArchiveError::Version { found: 9 })
        ));

        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            read_archive(&path),
            Err(ArchiveError::Truncated { .. })
        ));

        // corrupt a shape in the manifest
        let text = String::from_utf8_lossy(&bytes).to_string();
        let patched = text.replacen("[2,3]", "[2,9]", 1);
        assert_ne!(text, patched, "manifest patch failed");
        // manifest length unchanged: [2,9] is the same byte length
        fs::write(&path, patched.as_bytes()).unwrap();
        assert!(matches!(
            read_archive(&path),
            Err(ArchiveError::ShapeMismatch { .. })
        ));
    }
}
