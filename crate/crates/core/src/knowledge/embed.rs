use std::io::Write;
use std::process::{Command, Stdio};

use super::KnowledgeError;

pub const DEFAULT_DIM: usize = 384;

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn label(&self) -> String;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, KnowledgeError>;

    fn embed(&self, text: &str) -> Result<Vec<f32>, KnowledgeError> {
        let mut v = self.embed_batch(&[text])?;
        v.pop()
            .ok_or_else(|| KnowledgeError::Embedding("embedder returned no vector".into()))
    }
}

/// Deterministic bag-of-words embedder: each lowercase token is hashed into
/// one of `dim` buckets, the counts are L2-normalized. Texts without word
/// characters fall back to per-character features, so only the empty string
/// embeds to the zero vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl HashEmbedder {
    fn vector(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        let lower = text.to_lowercase();
        let mut any = false;
        for tok in lower
            .split(|c: char| !(c.is_alphanumeric() || c == '_'))
            .filter(|t| !t.is_empty())
        {
            v[(fnv1a(tok.as_bytes()) % self.dim as u64) as usize] += 1.0;
            any = true;
        }
        if !any {
            for c in lower.chars() {
                let mut buf = [0u8; 4];
                v[(fnv1a(c.encode_utf8(&mut buf).as_bytes()) % self.dim as u64) as usize] += 1.0;
            }
        }
        let norm = v
            .iter()
            .map(|x| (*x as f64) * (*x as f64))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x = (*x as f64 / norm) as f32;
            }
        }
        v
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn label(&self) -> String {
        format!("hash-bow-{}", self.dim)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, KnowledgeError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Delegates to an external program (for example a sentence-transformer
/// script). The program reads a JSON array of strings on stdin and writes a
/// JSON array of float arrays on stdout.
#[derive(Debug, Clone)]
pub struct CommandEmbedder {
    pub program: String,
    pub args: Vec<String>,
    pub dim: usize,
}

impl Embedder for CommandEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn label(&self) -> String {
        format!("command:{}", self.program)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, KnowledgeError> {
        let err = |m: String| KnowledgeError::Embedding(format!("{}: {m}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| err(e.to_string()))?;
        let payload = serde_json::to_vec(texts).expect("strings serialize");
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(&payload)
            .map_err(|e| err(e.to_string()))?;
        let out = child.wait_with_output().map_err(|e| err(e.to_string()))?;
        if !out.status.success() {
            return Err(err(String::from_utf8_lossy(&out.stderr).into_owned()));
        }
        let vectors: Vec<Vec<f32>> =
            serde_json::from_slice(&out.stdout).map_err(|e| err(e.to_string()))?;
        if vectors.len() != texts.len() {
            return Err(err(format!(
                "{} vectors for {} texts",
                vectors.len(),
                texts.len()
            )));
        }
        Ok(vectors)
    }
}
