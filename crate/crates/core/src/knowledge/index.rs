//! Flat embedding index with exact cosine retrieval.
//!
//! On-disk layout (`.rfix`):
//!
//! ```text
//! "RFIX" | version u32 LE | dim u32 LE | count u32 LE
//! count * dim f32 LE
//! UTF-8 manifest: "# backend <label>\n" then "<id>\t<path>\t<start>\t<end>\n" per chunk
//! ```

use std::cmp::Ordering;
use std::path::Path;

use super::chunk::Chunk;
use super::embed::Embedder;
use super::KnowledgeError;

pub const DEFAULT_TOP_K: usize = 10;
const MAGIC: &[u8; 4] = b"RFIX";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    vectors: Vec<Vec<f32>>,
    norms: Vec<f64>,
    chunks: Vec<Chunk>,
    backend_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: usize,
    pub path: String,
    pub span: (usize, usize),
}

fn norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|x| (*x as f64) * (*x as f64))
        .sum::<f64>()
        .sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

pub fn build_index(
    chunks: Vec<Chunk>,
    embedder: &dyn Embedder,
) -> Result<EmbeddingIndex, KnowledgeError> {
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let vectors = if texts.is_empty() {
        Vec::new()
    } else {
        embedder.embed_batch(&texts)?
    };
    EmbeddingIndex::from_parts(embedder.dim(), vectors, chunks, embedder.label())
}

impl EmbeddingIndex {
    pub fn from_parts(
        dim: usize,
        vectors: Vec<Vec<f32>>,
        chunks: Vec<Chunk>,
        backend_label: String,
    ) -> Result<Self, KnowledgeError> {
        if dim == 0 {
            return Err(KnowledgeError::InvalidArgument(
                "dimension must be positive".into(),
            ));
        }
        if vectors.len() != chunks.len() {
            return Err(KnowledgeError::Embedding(format!(
                "{} vectors for {} chunks",
                vectors.len(),
                chunks.len()
            )));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(KnowledgeError::DimensionMismatch {
                    chunk: i,
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(KnowledgeError::Embedding(format!(
                    "chunk {i}: non-finite entry"
                )));
            }
        }
        let norms = vectors.iter().map(|v| norm(v)).collect();
        Ok(Self {
            dim,
            vectors,
            norms,
            chunks,
            backend_label,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn vectors(&self) -> &[Vec<f32>] {
        &self.vectors
    }

    pub fn backend_label(&self) -> &str {
        &self.backend_label
    }

    /// Cosine similarity to `query`; zero-norm vectors score -1.
    pub fn score(&self, i: usize, query: &[f32]) -> f64 {
        let qn = norm(query);
        if qn == 0.0 || self.norms[i] == 0.0 {
            return -1.0;
        }
        dot(&self.vectors[i], query) / (self.norms[i] * qn)
    }

    /// Top `k` chunks by cosine similarity, ties by ascending chunk id.
    pub fn top_k_by_vector(
        &self,
        query: &[f32],
        k: usize,
    ) -> Result<Vec<(Chunk, f64)>, KnowledgeError> {
        if k == 0 {
            return Err(KnowledgeError::InvalidArgument(
                "k must be at least 1".into(),
            ));
        }
        if query.len() != self.dim {
            return Err(KnowledgeError::DimensionMismatch {
                chunk: usize::MAX,
                expected: self.dim,
                got: query.len(),
            });
        }
        let mut scored: Vec<(usize, f64)> =
            (0..self.len()).map(|i| (i, self.score(i, query))).collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.chunks[a.0].id.cmp(&self.chunks[b.0].id))
        });
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(i, s)| (self.chunks[i].clone(), s))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), KnowledgeError> {
        let mut buf = Vec::with_capacity(16 + self.len() * self.dim * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for v in &self.vectors {
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf.extend_from_slice(format!("# backend {}\n", self.backend_label).as_bytes());
        for c in &self.chunks {
            if c.source_path.contains(['\t', '\n']) {
                return Err(KnowledgeError::InvalidArgument(format!(
                    "path {:?} cannot be stored in the manifest",
                    c.source_path
                )));
            }
            buf.extend_from_slice(
                format!(
                    "{}\t{}\t{}\t{}\n",
                    c.id, c.source_path, c.byte_span.0, c.byte_span.1
                )
                .as_bytes(),
            );
        }
        std::fs::write(path, buf)
            .map_err(|e| KnowledgeError::Io(format!("{}: {e}", path.display())))
    }

    /// Reads an index file. Chunk texts are re-read from the manifest paths.
    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let bytes = std::fs::read(path)
            .map_err(|e| KnowledgeError::Io(format!("{}: {e}", path.display())))?;
        let (dim, vectors, label, manifest) = decode(&bytes)?;
        let mut chunks = Vec::with_capacity(manifest.len());
        for m in manifest {
            let src = std::fs::read(&m.path)
                .map_err(|e| KnowledgeError::Io(format!("{}: {e}", m.path)))?;
            let slice = src.get(m.span.0..m.span.1).ok_or_else(|| {
                KnowledgeError::CorruptIndex(format!("span {:?} outside {}", m.span, m.path))
            })?;
            let text = String::from_utf8_lossy(slice);
            chunks.push(Chunk {
                id: m.id,
                source_path: m.path,
                byte_span: m.span,
                lossy: matches!(text, std::borrow::Cow::Owned(_)),
                text: text.into_owned(),
            });
        }
        Self::from_parts(dim, vectors, chunks, label)
    }
}

/// Dimension, vectors, backend label and manifest of an encoded index.
pub type DecodedIndex = (usize, Vec<Vec<f32>>, String, Vec<ManifestEntry>);

pub fn decode(bytes: &[u8]) -> Result<DecodedIndex, KnowledgeError> {
    let corrupt = |m: &str| KnowledgeError::CorruptIndex(m.to_string());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    if word(4) != VERSION as usize {
        return Err(corrupt("unsupported version"));
    }
    let dim = word(8);
    let count = word(12);
    let floats_end = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(16))
        .filter(|end| *end <= bytes.len())
        .ok_or_else(|| corrupt("truncated vector block"))?;
    let vectors = bytes[16..floats_end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect::<Vec<_>>()
        .chunks(dim.max(1))
        .map(<[f32]>::to_vec)
        .collect::<Vec<_>>();
    let manifest_text =
        std::str::from_utf8(&bytes[floats_end..]).map_err(|_| corrupt("manifest not UTF-8"))?;
    let mut label = String::new();
    let mut manifest = Vec::new();
    for line in manifest_text.lines() {
        if let Some(l) = line.strip_prefix("# backend ") {
            label = l.to_string();
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let [id, path, s, e] = parts[..] else {
            return Err(corrupt("bad manifest line"));
        };
        let num = |x: &str| {
            x.parse::<usize>()
                .map_err(|_| corrupt("bad manifest number"))
        };
        manifest.push(ManifestEntry {
            id: num(id)?,
            path: path.to_string(),
            span: (num(s)?, num(e)?),
        });
    }
    if manifest.len() != count {
        return Err(corrupt("manifest length differs from header count"));
    }
    Ok((
        dim,
        if count == 0 { Vec::new() } else { vectors },
        label,
        manifest,
    ))
}

pub fn retrieve_top_k(
    index: &EmbeddingIndex,
    embedder: &dyn Embedder,
    query_text: &str,
    k: usize,
) -> Result<Vec<(Chunk, f64)>, KnowledgeError> {
    let q = embedder.embed(query_text)?;
    index.top_k_by_vector(&q, k)
}
