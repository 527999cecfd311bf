//! Self-describing named-tensor container.
//!
//! Layout: 8-byte magic, u64 little-endian JSON index length, the JSON
//! index (name -> shape and offset), then the concatenated f64
//! little-endian payloads. Used for model checkpoints and converted
//! backbone weight archives.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAGIC: &[u8; 8] = b"GPTENS1\0";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a tensor archive (bad magic)")]
    BadMagic { path: String },
    #[error("corrupt tensor index in {path}: {detail}")]
    BadIndex { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

/// An in-memory collection of named f64 tensors.
#[derive(Debug, Default)]
pub struct TensorStore {
    tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    /// Free-form metadata carried alongside the tensors.
    pub meta: BTreeMap<String, String>,
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], values: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.tensors
            .insert(name.to_string(), (shape.to_vec(), values));
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.tensors.get(name).map(|(_, v)| v.as_slice())
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.tensors.get(name).map(|(s, _)| s.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let err = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut index: BTreeMap<String, IndexEntry> = BTreeMap::new();
        let mut offset = 0u64;
        for (name, (shape, values)) in &self.tensors {
            index.insert(
                name.clone(),
                IndexEntry {
                    shape: shape.clone(),
                    offset,
                    len: values.len() as u64,
                },
            );
            offset += values.len() as u64 * 8;
        }
        #[derive(Serialize)]
        struct Header<'a> {
            index: &'a BTreeMap<String, IndexEntry>,
            meta: &'a BTreeMap<String, String>,
        }
        let header = serde_json::to_vec(&Header {
            index: &index,
            meta: &self.meta,
        })
        .expect("header serializes");

        let file = std::fs::File::create(path).map_err(err)?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(MAGIC).map_err(err)?;
        w.write_u64::<LittleEndian>(header.len() as u64).map_err(err)?;
        w.write_all(&header).map_err(err)?;
        for (_, (_, values)) in &self.tensors {
            for v in values {
                w.write_f64::<LittleEndian>(*v).map_err(err)?;
            }
        }
        w.flush().map_err(err)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let err = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        let bytes = std::fs::read(path).map_err(err)?;
        let mut r = std::io::Cursor::new(&bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(err)?;
        if &magic != MAGIC {
            return Err(StoreError::BadMagic {
                path: path.display().to_string(),
            });
        }
        let header_len = r.read_u64::<LittleEndian>().map_err(err)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header).map_err(err)?;
        #[derive(Deserialize)]
        struct Header {
            index: BTreeMap<String, IndexEntry>,
            #[serde(default)]
            meta: BTreeMap<String, String>,
        }
        let parsed: Header = serde_json::from_slice(&header).map_err(|e| StoreError::BadIndex {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let payload_start = 16 + header_len;
        let mut tensors = BTreeMap::new();
        for (name, entry) in parsed.index {
            let start = payload_start + entry.offset as usize;
            let end = start + entry.len as usize * 8;
            if end > bytes.len() {
                return Err(StoreError::BadIndex {
                    path: path.display().to_string(),
                    detail: format!("tensor {name} overruns file"),
                });
            }
            let mut values = Vec::with_capacity(entry.len as usize);
            for chunk in bytes[start..end].chunks_exact(8) {
                values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            tensors.insert(name, (entry.shape, values));
        }
        Ok(TensorStore {
            tensors,
            meta: parsed.meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tensors");
        let mut store = TensorStore::new();
        store.insert("a.w", &[2, 3], vec![1.0, -2.5, 3.25, 0.0, f64::MIN_POSITIVE, 9.9]);
        store.insert("b", &[1], vec![42.0]);
        store.meta.insert("kind".into(), "test".into());
        store.write(&path).unwrap();
        let back = TensorStore::read(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.get("a.w").unwrap(), store.get("a.w").unwrap());
        assert_eq!(back.shape("a.w").unwrap(), &[2, 3]);
        assert_eq!(back.meta.get("kind").map(|s| s.as_str()), Some("test"));
    }

    #[test]
    fn rejects_junk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.tensors");
        std::fs::write(&path, b"not a tensor archive").unwrap();
        assert!(matches!(
            TensorStore::read(&path),
            Err(StoreError::BadMagic { .. })
        ));
    }
}
