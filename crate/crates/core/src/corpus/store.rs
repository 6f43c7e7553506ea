//! `features.bin`: per-video segment features and pooled embeddings.
//!
//! Layout, all integers little-endian, floats IEEE-754 binary32:
//!
//! ```text
//! "AVF1" | u32 version=1 | u32 d_seg | u32 d_pool | u64 count
//! index:   count x ( u32 id_len | id bytes (UTF-8) | u64 offset | u32 t )
//! payload: per video at `offset` (absolute, from file start):
//!          t*d_seg f32 row-major, then d_pool f32
//! ```

use std::collections::HashMap;
use std::path::Path;

use crate::bytes::Reader;
use crate::error::{Error, Result};
use crate::ndnum::Array;

pub const FEATURES_MAGIC: &[u8; 4] = b"AVF1";
pub const FEATURES_VERSION: u32 = 1;

/// One video's frozen upstream features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    /// `t x d_seg`.
    pub segments: Array<f32>,
    /// `d_pool`.
    pub pooled: Vec<f32>,
}

impl FeatureSequence {
    pub fn t(&self) -> usize {
        self.segments.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    d_seg: usize,
    d_pool: usize,
    ids: Vec<String>,
    items: Vec<FeatureSequence>,
    by_id: HashMap<String, usize>,
}

impl FeatureStore {
    pub fn new(d_seg: usize, d_pool: usize) -> Self {
        Self {
            d_seg,
            d_pool,
            ids: Vec::new(),
            items: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    pub fn d_seg(&self) -> usize {
        self.d_seg
    }

    pub fn d_pool(&self) -> usize {
        self.d_pool
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&FeatureSequence> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn insert(&mut self, id: impl Into<String>, seq: FeatureSequence) -> Result<()> {
        let id = id.into();
        if seq.segments.shape().len() != 2 || seq.segments.cols() != self.d_seg || seq.t() == 0 {
            return Err(Error::dim(
                "feature_store",
                format!("{id}: segments {:?}, d_seg {}", seq.segments.shape(), self.d_seg),
            ));
        }
        if seq.pooled.len() != self.d_pool {
            return Err(Error::dim(
                "feature_store",
                format!("{id}: pooled length {} vs d_pool {}", seq.pooled.len(), self.d_pool),
            ));
        }
        if !seq.segments.is_finite() || seq.pooled.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature_store"));
        }
        if self.by_id.contains_key(&id) {
            return Err(Error::Config(format!("duplicate feature id {id:?}")));
        }
        self.by_id.insert(id.clone(), self.items.len());
        self.ids.push(id);
        self.items.push(seq);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let index_len: usize = self.ids.iter().map(|id| 4 + id.len() + 8 + 4).sum();
        let mut offset = (4 + 4 + 4 + 4 + 8 + index_len) as u64;
        let mut out = Vec::new();
        out.extend_from_slice(FEATURES_MAGIC);
        out.extend_from_slice(&FEATURES_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d_seg as u32).to_le_bytes());
        out.extend_from_slice(&(self.d_pool as u32).to_le_bytes());
        out.extend_from_slice(&(self.items.len() as u64).to_le_bytes());
        for (id, seq) in self.ids.iter().zip(&self.items) {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(seq.t() as u32).to_le_bytes());
            offset += 4 * (seq.segments.len() + seq.pooled.len()) as u64;
        }
        for seq in &self.items {
            for x in seq.segments.data().iter().chain(&seq.pooled) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != FEATURES_MAGIC {
            return Err("bad magic, expected AVF1".into());
        }
        let version = r.u32()?;
        if version != FEATURES_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let d_seg = r.u32()? as usize;
        let d_pool = r.u32()? as usize;
        let count = r.u64()?;
        let mut index = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| "index id is not UTF-8".to_string())?
                .to_string();
            let offset = r.u64()? as usize;
            let t = r.u32()? as usize;
            index.push((id, offset, t));
        }
        let mut store = Self::new(d_seg, d_pool);
        for (id, offset, t) in index {
            let end = t
                .checked_mul(d_seg)
                .and_then(|n| n.checked_add(d_pool))
                .and_then(|n| n.checked_mul(4))
                .and_then(|n| offset.checked_add(n))
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| format!("{id}: payload out of bounds"))?;
            let floats: Vec<f32> = bytes[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let pooled = floats[t * d_seg..].to_vec();
            let segments = Array::matrix(t, d_seg, floats[..t * d_seg].to_vec()).map_err(|e| format!("{id}: {e}"))?;
            store
                .insert(id.clone(), FeatureSequence { segments, pooled })
                .map_err(|e| format!("{id}: {e}"))?;
        }
        Ok(store)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|d| Error::load(path, d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: usize, d_seg: usize, d_pool: usize, base: f32) -> FeatureSequence {
        FeatureSequence {
            segments: Array::matrix(t, d_seg, (0..t * d_seg).map(|i| base + i as f32 * 0.25).collect()).unwrap(),
            pooled: (0..d_pool).map(|i| -(i as f32) - base).collect(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut s = FeatureStore::new(4, 2);
        s.insert("vid", seq(3, 4, 2, 1.0e-7)).unwrap();
        let back = FeatureStore::from_bytes(&s.to_bytes()).unwrap();
        let a = s.get("vid").unwrap();
        let b = back.get("vid").unwrap();
        let bits = |xs: &[f32]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.segments.data()), bits(b.segments.data()));
        assert_eq!(bits(&a.pooled), bits(&b.pooled));
    }

    #[test]
    fn header_layout() {
        let mut s = FeatureStore::new(2, 1);
        s.insert("ab", seq(1, 2, 1, 0.0)).unwrap();
        let b = s.to_bytes();
        assert_eq!(&b[..4], b"AVF1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[24..28].try_into().unwrap()), 2);
        assert_eq!(&b[28..30], b"ab");
        let offset = u64::from_le_bytes(b[30..38].try_into().unwrap());
        assert_eq!(offset, 42);
        assert_eq!(b.len(), 42 + 3 * 4);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut s = FeatureStore::new(2, 1);
        s.insert("x", seq(2, 2, 1, 0.0)).unwrap();
        let mut b = s.to_bytes();
        assert!(FeatureStore::from_bytes(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(FeatureStore::from_bytes(&b).unwrap_err().contains("magic"));
    }

    #[test]
    fn empty_store_round_trips() {
        let s = FeatureStore::new(8, 3);
        assert_eq!(FeatureStore::from_bytes(&s.to_bytes()).unwrap(), s);
    }

    #[test]
    fn rejects_wrong_dims() {
        let mut s = FeatureStore::new(4, 2);
        assert!(s.insert("bad", seq(2, 3, 2, 0.0)).is_err());
        assert!(s.insert("bad", seq(2, 4, 1, 0.0)).is_err());
    }
}
