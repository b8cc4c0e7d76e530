//! Append-only embedding cache file.
//!
//! ```text
//! "EMBC" | version u16 LE (=1) | fingerprint [u8; 32] | dim u32 LE | count u64 LE
//! count × ( id_len u16 LE | id bytes (UTF-8) | dim × f32 LE )
//! ```
//!
//! Appends write the rows first and bump `count` last, so a reader never
//! sees a partially written row: bytes past the last counted row are ignored
//! and overwritten by the next append.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{Fingerprint, FusedEmbedding};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMBC";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 4 + 2 + 32 + 4 + 8;
const COUNT_OFFSET: u64 = 4 + 2 + 32 + 4;

#[derive(Debug)]
pub struct EmbeddingCache {
    path: PathBuf,
    fingerprint: Fingerprint,
    dim: usize,
    index: HashMap<String, Vec<f32>>,
    /// Insertion order of ids, mirrors the file.
    order: Vec<String>,
    /// Byte offset just past the last counted row.
    end: u64,
}

impl EmbeddingCache {
    /// Opens the cache at `path`, creating it with the given stack identity
    /// when absent.
    pub fn open(path: impl Into<PathBuf>, fingerprint: Fingerprint, dim: usize) -> Result<Self> {
        let path = path.into();
        if !path.exists() {
            let mut header = Vec::with_capacity(HEADER_LEN as usize);
            header.extend_from_slice(MAGIC);
            header.extend_from_slice(&VERSION.to_le_bytes());
            header.extend_from_slice(&fingerprint.0);
            header.extend_from_slice(&(dim as u32).to_le_bytes());
            header.extend_from_slice(&0u64.to_le_bytes());
            std::fs::write(&path, header).map_err(|e| Error::io(&path, e))?;
            return Ok(EmbeddingCache {
                path,
                fingerprint,
                dim,
                index: HashMap::new(),
                order: Vec::new(),
                end: HEADER_LEN,
            });
        }
        let mut cache = Self::read(&path)?;
        if cache.fingerprint != fingerprint || cache.dim != dim {
            // A different stack owns this file; serve nothing from it.
            log::warn!(
                "{}: cache belongs to another encoder stack; lookups will miss",
                path.display()
            );
            cache.index.clear();
            cache.order.clear();
            cache.fingerprint = fingerprint;
        }
        Ok(cache)
    }

    /// Parses an existing cache file.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < HEADER_LEN as usize || &bytes[..4] != MAGIC {
            return Err(Error::Cache(format!("{}: corrupt header", path.display())));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Cache(format!(
                "{}: unsupported version {version}",
                path.display()
            )));
        }
        let mut fp = [0u8; 32];
        fp.copy_from_slice(&bytes[6..38]);
        let dim = u32::from_le_bytes(bytes[38..42].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[42..50].try_into().unwrap());
        let mut pos = HEADER_LEN as usize;
        let mut index = HashMap::new();
        let mut order = Vec::new();
        let truncated = || Error::Cache(format!("{}: truncated row", path.display()));
        for _ in 0..count {
            let id_len = bytes
                .get(pos..pos + 2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
                .ok_or_else(truncated)?;
            pos += 2;
            let id = bytes.get(pos..pos + id_len).ok_or_else(truncated)?;
            let id = String::from_utf8(id.to_vec())
                .map_err(|_| Error::Cache(format!("{}: non-UTF-8 id", path.display())))?;
            pos += id_len;
            let raw = bytes.get(pos..pos + 4 * dim).ok_or_else(truncated)?;
            pos += 4 * dim;
            let vector: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if index.insert(id.clone(), vector).is_none() {
                order.push(id);
            }
        }
        Ok(EmbeddingCache {
            path: path.to_path_buf(),
            fingerprint: Fingerprint(fp),
            dim,
            index,
            order,
            end: pos as u64,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.order
    }

    /// Stored vector for `record_id`, only under a matching fingerprint.
    pub fn lookup(&self, record_id: &str, fingerprint: &Fingerprint) -> Option<FusedEmbedding> {
        if *fingerprint != self.fingerprint {
            return None;
        }
        self.index.get(record_id).map(|v| FusedEmbedding {
            record_id: record_id.to_string(),
            vector: v.clone(),
            encoder_fingerprint: self.fingerprint,
        })
    }

    pub fn get(&self, record_id: &str) -> Option<&[f32]> {
        self.index.get(record_id).map(Vec::as_slice)
    }

    /// Appends rows not already present, then publishes the new count.
    pub fn append(&mut self, rows: &[FusedEmbedding]) -> Result<()> {
        let fresh: Vec<&FusedEmbedding> = {
            let mut seen = std::collections::HashSet::new();
            rows.iter()
                .filter(|r| !self.index.contains_key(&r.record_id) && seen.insert(r.record_id.as_str()))
                .collect()
        };
        if fresh.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for row in &fresh {
            if row.encoder_fingerprint != self.fingerprint {
                return Err(Error::Cache(format!(
                    "row {} carries a foreign fingerprint",
                    row.record_id
                )));
            }
            if row.vector.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    actual: row.vector.len(),
                });
            }
            let id = row.record_id.as_bytes();
            let id_len =
                u16::try_from(id.len()).map_err(|_| Error::Cache(format!("id too long: {}", row.record_id)))?;
            buf.extend_from_slice(&id_len.to_le_bytes());
            buf.extend_from_slice(id);
            for v in &row.vector {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let io = |e| Error::io(&self.path, e);
        let mut file = OpenOptions::new().read(true).write(true).open(&self.path).map_err(io)?;
        // If the on-disk header was reset (fingerprint change), rewrite it.
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut header).map_err(|e| Error::io(&self.path, e))?;
        if header[6..38] != self.fingerprint.0 {
            self.rewrite_empty(&mut file)?;
        }
        file.set_len(self.end).map_err(|e| Error::io(&self.path, e))?;
        file.seek(SeekFrom::Start(self.end))
            .map_err(|e| Error::io(&self.path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        file.sync_data().map_err(|e| Error::io(&self.path, e))?;
        let count = (self.order.len() + fresh.len()) as u64;
        file.seek(SeekFrom::Start(COUNT_OFFSET))
            .map_err(|e| Error::io(&self.path, e))?;
        file.write_all(&count.to_le_bytes())
            .map_err(|e| Error::io(&self.path, e))?;
        file.sync_data().map_err(|e| Error::io(&self.path, e))?;

        self.end += buf.len() as u64;
        for row in fresh {
            self.order.push(row.record_id.clone());
            self.index.insert(row.record_id.clone(), row.vector.clone());
        }
        Ok(())
    }

    fn rewrite_empty(&mut self, file: &mut File) -> Result<()> {
        let mut header = Vec::with_capacity(HEADER_LEN as usize);
        header.extend_from_slice(MAGIC);
        header.extend_from_slice(&VERSION.to_le_bytes());
        header.extend_from_slice(&self.fingerprint.0);
        header.extend_from_slice(&(self.dim as u32).to_le_bytes());
        header.extend_from_slice(&0u64.to_le_bytes());
        file.set_len(0).map_err(|e| Error::io(&self.path, e))?;
        file.seek(SeekFrom::Start(0)).map_err(|e| Error::io(&self.path, e))?;
        file.write_all(&header).map_err(|e| Error::io(&self.path, e))?;
        self.end = HEADER_LEN;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(id: &str, fp: Fingerprint, v: &[f32]) -> FusedEmbedding {
        FusedEmbedding {
            record_id: id.into(),
            vector: v.to_vec(),
            encoder_fingerprint: fp,
        }
    }

    #[test]
    fn empty_then_write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.embc");
        let fp = Fingerprint([7; 32]);
        let mut c = EmbeddingCache::open(&path, fp, 2).unwrap();
        assert!(c.lookup("a-1", &fp).is_none());
        c.append(&[emb("a-1", fp, &[1.0, 2.0])]).unwrap();
        let again = EmbeddingCache::open(&path, fp, 2).unwrap();
        assert_eq!(again.lookup("a-1", &fp).unwrap().vector, vec![1.0, 2.0]);
        assert!(again.lookup("a-1", &Fingerprint([8; 32])).is_none());
    }

    #[test]
    fn header_layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.embc");
        let fp = Fingerprint([1; 32]);
        let mut c = EmbeddingCache::open(&path, fp, 1).unwrap();
        c.append(&[emb("ab", fp, &[0.5])]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut expected = b"EMBC".to_vec();
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&[1; 32]);
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&0.5f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncated_row_and_bad_header_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.embc");
        let fp = Fingerprint([1; 32]);
        let mut c = EmbeddingCache::open(&path, fp, 3).unwrap();
        c.append(&[emb("x", fp, &[1.0, 2.0, 3.0])]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(EmbeddingCache::read(&path), Err(Error::Cache(_))));
        std::fs::write(&path, b"JUNK").unwrap();
        assert!(matches!(EmbeddingCache::read(&path), Err(Error::Cache(_))));
    }

    #[test]
    fn uncounted_tail_is_ignored_and_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.embc");
        let fp = Fingerprint([2; 32]);
        let mut c = EmbeddingCache::open(&path, fp, 1).unwrap();
        c.append(&[emb("a", fp, &[1.0])]).unwrap();
        // Simulate an interrupted append: bytes written, count not bumped.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[9, 9, 9]).unwrap();
        drop(f);
        let mut c = EmbeddingCache::open(&path, fp, 1).unwrap();
        assert_eq!(c.len(), 1);
        c.append(&[emb("b", fp, &[2.0])]).unwrap();
        let c = EmbeddingCache::read(&path).unwrap();
        assert_eq!(c.ids(), &["a".to_string(), "b".to_string()]);
    }
}
