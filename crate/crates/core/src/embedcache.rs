//! Caption embedding cache and alignment scoring.
//!
//! In the caption-per-class setting every image is scored against the same
//! K captions, so encoding each caption once turns the `N * K` text-encoder
//! invocations of a naive loop into `K`. [`CostModel`] counts encoder and
//! alignment calls so that difference can be asserted exactly.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use crate::datamodel::tokenize;
use crate::error::{Error, Result};

pub const DEFAULT_DIMENSION: usize = 256;

const MAGIC: &[u8; 4] = b"OVDE";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f32>,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    /// Scales to unit L2 norm; the zero vector is left as is.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for v in &mut self.values {
                *v = (f64::from(*v) / n) as f32;
            }
        }
        self
    }
}

/// Deterministic text encoder with a fixed output dimension.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Embedding;
}

/// Bag of hashed tokens: each token increments bucket `fnv1a(token) % D`,
/// then the counts are L2-normalised.
#[derive(Debug, Clone, Copy)]
pub struct HashBagEmbedder {
    dimension: usize,
}

impl HashBagEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl Default for HashBagEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Embedder for HashBagEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Embedding {
        let mut values = vec![0f32; self.dimension];
        for token in tokenize(text) {
            values[(fnv1a(token.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        Embedding::new(values).normalized()
    }
}

/// Call counters standing in for encoder (alpha) and alignment (beta) time.
#[derive(Debug, Default)]
pub struct CostModel {
    encoder_calls: AtomicU64,
    alignment_calls: AtomicU64,
    pub alpha: f64,
    pub beta: f64,
}

impl CostModel {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            ..Self::default()
        }
    }

    pub fn encoder_calls(&self) -> u64 {
        self.encoder_calls.load(Ordering::Relaxed)
    }

    pub fn alignment_calls(&self) -> u64 {
        self.alignment_calls.load(Ordering::Relaxed)
    }

    pub fn record_encode(&self) {
        self.encoder_calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_alignment(&self) {
        self.alignment_calls.fetch_add(1, Ordering::Relaxed);
    }

    /// `alpha * encoder_calls + beta * alignment_calls`.
    pub fn estimated_cost(&self) -> f64 {
        self.alpha * self.encoder_calls() as f64 + self.beta * self.alignment_calls() as f64
    }
}

/// Caption embedding cache with single-flight insertion: concurrent misses
/// on one caption run the embedder once and every caller sees that result.
#[derive(Debug)]
pub struct EmbeddingCache {
    enabled: bool,
    entries: Mutex<HashMap<String, Arc<OnceLock<Embedding>>>>,
    cost: CostModel,
}

impl Default for EmbeddingCache {
    fn default() -> Self {
        Self::new()
    }
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::with_cost(true, CostModel::new(1.0, 1.0))
    }

    /// A pass-through cache that encodes on every request.
    pub fn disabled() -> Self {
        Self::with_cost(false, CostModel::new(1.0, 1.0))
    }

    pub fn with_cost(enabled: bool, cost: CostModel) -> Self {
        Self {
            enabled,
            entries: Mutex::new(HashMap::new()),
            cost,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the cached embedding of `caption`, encoding it on a miss.
    pub fn get_or_compute(&self, caption: &str, embedder: &dyn Embedder) -> Embedding {
        if !self.enabled {
            self.cost.record_encode();
            return embedder.embed(caption);
        }
        let cell = {
            let mut entries = self.entries.lock().unwrap();
            Arc::clone(entries.entry(caption.to_string()).or_default())
        };
        cell.get_or_init(|| {
            self.cost.record_encode();
            embedder.embed(caption)
        })
        .clone()
    }

    /// Inserts a precomputed embedding without touching the counters.
    pub fn insert(&self, caption: &str, embedding: Embedding) {
        let cell = OnceLock::new();
        let _ = cell.set(embedding);
        self.entries
            .lock()
            .unwrap()
            .insert(caption.to_string(), Arc::new(cell));
    }

    /// Computed entries sorted by caption.
    pub fn snapshot(&self) -> Vec<(String, Embedding)> {
        let entries = self.entries.lock().unwrap();
        let mut out: Vec<(String, Embedding)> = entries
            .iter()
            .filter_map(|(k, cell)| cell.get().map(|e| (k.clone(), e.clone())))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Writes `embeddings.bin`: magic, version and dimension, then
    /// length-prefixed UTF-8 captions each followed by `D` little-endian f32s.
    pub fn write_to(&self, dimension: usize, w: &mut impl Write) -> Result<()> {
        let io_err = |e: io::Error| Error::CacheFormat(e.to_string());
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(dimension as u32).to_le_bytes()).map_err(io_err)?;
        for (caption, emb) in self.snapshot() {
            if emb.dimension() != dimension {
                return Err(Error::DimensionMismatch {
                    left: emb.dimension(),
                    right: dimension,
                });
            }
            w.write_all(&(caption.len() as u32).to_le_bytes()).map_err(io_err)?;
            w.write_all(caption.as_bytes()).map_err(io_err)?;
            for v in &emb.values {
                w.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, dimension: usize) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(dimension, &mut buf)?;
        fs::write(path.as_ref(), buf).map_err(|source| Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        })
    }

    /// Reads records into the cache; returns the file's dimension.
    pub fn read_from(&self, r: &mut impl Read) -> Result<usize> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::CacheFormat(e.to_string()))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::CacheFormat("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::CacheFormat(format!("unsupported version {version}")));
        }
        let dimension = cur.u32()? as usize;
        while cur.pos < bytes.len() {
            let len = cur.u32()? as usize;
            let caption = std::str::from_utf8(cur.take(len)?)
                .map_err(|e| Error::CacheFormat(e.to_string()))?
                .to_string();
            let values = (0..dimension)
                .map(|_| cur.take(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect::<Result<Vec<f32>>>()?;
            self.insert(&caption, Embedding::new(values));
        }
        Ok(dimension)
    }

    pub fn load(&self, path: impl AsRef<Path>) -> Result<usize> {
        let mut f = fs::File::open(path.as_ref()).map_err(|source| Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        })?;
        self.read_from(&mut f)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::CacheFormat("truncated record".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Cosine similarity between a visual feature and a caption embedding.
pub fn score_alignment(
    image_feature: &Embedding,
    caption_embedding: &Embedding,
    cost: &CostModel,
) -> Result<f64> {
    if image_feature.dimension() != caption_embedding.dimension() {
        return Err(Error::DimensionMismatch {
            left: image_feature.dimension(),
            right: caption_embedding.dimension(),
        });
    }
    cost.record_alignment();
    let dot: f64 = image_feature
        .values
        .iter()
        .zip(&caption_embedding.values)
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum();
    let denom = image_feature.norm() * caption_embedding.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}
