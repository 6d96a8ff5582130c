use std::collections::HashMap;

use super::rouge::tokenize;

/// Text embedding used by the newsletter-level diversity check.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Signed feature hashing of lowercased tokens into a fixed dimension.
/// Deterministic across platforms and runs.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: 256 }
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in tokenize(text) {
            let tok: String = tok.chars().filter(|c| c.is_alphanumeric()).collect();
            if tok.is_empty() {
                continue;
            }
            let h = fnv1a(tok.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        v
    }
}

/// Fixed vectors for known texts, falling back to another embedder.
pub struct LookupEmbedder<E> {
    table: HashMap<String, Vec<f64>>,
    fallback: E,
}

impl<E: Embedder> LookupEmbedder<E> {
    pub fn new(fallback: E) -> Self {
        LookupEmbedder {
            table: HashMap::new(),
            fallback,
        }
    }

    pub fn with(mut self, text: impl Into<String>, vector: Vec<f64>) -> Self {
        self.table.insert(text.into(), vector);
        self
    }
}

impl<E: Embedder> Embedder for LookupEmbedder<E> {
    fn embed(&self, text: &str) -> Vec<f64> {
        match self.table.get(text) {
            Some(v) => v.clone(),
            None => self.fallback.embed(text),
        }
    }
}
