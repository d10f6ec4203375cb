//! Vector tables and the `PNEMB` binary file format.
//!
//! Layout: the 5 magic bytes `PNEMB`, `dim` as little-endian `u32`, `count`
//! as little-endian `u64`, then `count` records of a little-endian `u64` id
//! followed by `dim` little-endian `f32` values.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::{Matrix, Real};
use crate::seed::derive_seed;

pub const EMBEDDING_MAGIC: &[u8; 5] = b"PNEMB";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes, not a PNEMB file")]
    BadMagic,
    #[error("vector for id {id} has length {found}, table dimension is {dim}")]
    WrongLength { id: u64, found: usize, dim: usize },
    #[error("non-finite value in vector {0}")]
    NonFinite(u64),
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("missing vector for id {0}")]
    Missing(u64),
}

/// Dense id-keyed vectors of one dimension, kept in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    dim: usize,
    ids: Vec<u64>,
    data: Vec<T>,
    index: HashMap<u64, usize>,
}

impl<T: Real> EmbeddingTable<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, ids: Vec::new(), data: Vec::new(), index: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn insert(&mut self, id: u64, vector: &[T]) -> Result<(), EmbeddingError> {
        if vector.len() != self.dim {
            return Err(EmbeddingError::WrongLength { id, found: vector.len(), dim: self.dim });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(id));
        }
        if self.index.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId(id));
        }
        self.index.insert(id, self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<&[T]> {
        self.index.get(&id).map(|&i| self.row(i))
    }

    pub fn require(&self, id: u64) -> Result<&[T], EmbeddingError> {
        self.get(id).ok_or(EmbeddingError::Missing(id))
    }

    /// Vector at insertion position `i`.
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        (0..self.len()).map(move |i| self.row(i))
    }

    /// Build from vectors keyed `0..n`.
    pub fn from_rows(dim: usize, rows: &[Vec<T>]) -> Result<Self, EmbeddingError> {
        let mut t = Self::new(dim);
        for (i, r) in rows.iter().enumerate() {
            t.insert(i as u64, r)?;
        }
        Ok(t)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), EmbeddingError> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for (i, id) in self.ids.iter().enumerate() {
            w.write_all(&id.to_le_bytes())?;
            for v in self.row(i) {
                w.write_all(&v.to_f32_lossy().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, EmbeddingError> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != EMBEDDING_MAGIC {
            return Err(EmbeddingError::BadMagic);
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8);
        let mut table = Self::new(dim);
        let mut v = vec![T::zero(); dim];
        for _ in 0..count {
            r.read_exact(&mut b8)?;
            let id = u64::from_le_bytes(b8);
            for slot in v.iter_mut() {
                r.read_exact(&mut b4)?;
                *slot = T::lit(f32::from_le_bytes(b4) as f64);
            }
            table.insert(id, &v)?;
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), EmbeddingError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, EmbeddingError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Key for a token embedding: `(ordinal << 32) | position`, where `ordinal`
/// is the 0-based record index of the instance (or the trait id) and
/// `position` the token offset in its laid-out sequence.
pub fn token_key(ordinal: u32, position: u32) -> u64 {
    ((ordinal as u64) << 32) | position as u64
}

/// Deterministic stand-in encoder: every distinct token string maps to a
/// fixed pseudo-random vector with entries uniform in `[-1, 1] / sqrt(dim)`.
#[derive(Debug, Clone)]
pub struct PseudoEmbedder {
    dim: usize,
    seed: u64,
}

impl PseudoEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_token<T: Real>(&self, token: &str) -> Vec<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, token));
        let scale = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim).map(|_| T::lit(rng.gen_range(-1.0..1.0) * scale)).collect()
    }

    pub fn embed_sequence<T: Real, S: AsRef<str>>(&self, tokens: &[S]) -> Matrix<T> {
        let mut m = Matrix::zeros(tokens.len(), self.dim);
        for (i, t) in tokens.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&self.embed_token::<T>(t.as_ref()));
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_preserves_f32_values() {
        let mut t = EmbeddingTable::<f32>::new(3);
        t.insert(9, &[0.5, -1.25, 3.0]).unwrap();
        t.insert(token_key(2, 7), &[1e-3, 0.0, -0.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"PNEMB");
        assert_eq!(buf.len(), 5 + 4 + 8 + 2 * (8 + 12));
        let back = EmbeddingTable::<f32>::read_from(&buf[..]).unwrap();
        assert_eq!(back, t);
        let wide = EmbeddingTable::<f64>::read_from(&buf[..]).unwrap();
        assert_eq!(wide.get(9).unwrap(), &[0.5, -1.25, 3.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(EmbeddingTable::<f32>::read_from(&b"XXXXX\0\0\0\0"[..]), Err(EmbeddingError::BadMagic)));
        let mut t = EmbeddingTable::<f64>::new(2);
        assert!(t.insert(0, &[1.0]).is_err());
        assert!(t.insert(0, &[f64::NAN, 1.0]).is_err());
        t.insert(0, &[1.0, 1.0]).unwrap();
        assert!(matches!(t.insert(0, &[1.0, 1.0]), Err(EmbeddingError::DuplicateId(0))));
    }

    #[test]
    fn pseudo_embedder_is_deterministic() {
        let e = PseudoEmbedder::new(8, 3);
        assert_eq!(e.embed_token::<f64>("brave"), e.embed_token::<f64>("brave"));
        assert_ne!(e.embed_token::<f64>("brave"), e.embed_token::<f64>("kind"));
        assert_ne!(e.embed_token::<f64>("brave"), PseudoEmbedder::new(8, 4).embed_token::<f64>("brave"));
    }
}
