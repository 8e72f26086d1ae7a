use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::KnowledgeError;

pub const DEFAULT_CHUNK_CHARS: usize = 1200;
pub const DEFAULT_OVERLAP_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: usize,
    pub source_path: String,
    /// Byte range in the source file.
    pub byte_span: (usize, usize),
    pub text: String,
    /// The source was not valid UTF-8 and was decoded lossily.
    pub lossy: bool,
}

/// Char boundaries of `bytes`: (byte offset, char), invalid sequences map to U+FFFD.
fn decode_positions(bytes: &[u8]) -> (Vec<(usize, char)>, bool) {
    let mut out = Vec::with_capacity(bytes.len());
    let mut lossy = false;
    let mut offset = 0;
    for piece in bytes.utf8_chunks() {
        for (i, c) in piece.valid().char_indices() {
            out.push((offset + i, c));
        }
        offset += piece.valid().len();
        if !piece.invalid().is_empty() {
            lossy = true;
            out.push((offset, char::REPLACEMENT_CHARACTER));
            offset += piece.invalid().len();
        }
    }
    (out, lossy)
}

/// Splits one file's bytes into overlapping windows of `size` chars.
pub fn chunk_bytes(
    path: &str,
    bytes: &[u8],
    size: usize,
    overlap: usize,
    first_id: usize,
) -> Result<Vec<Chunk>, KnowledgeError> {
    if size == 0 || overlap >= size {
        return Err(KnowledgeError::InvalidArgument(format!(
            "chunk size {size} must exceed overlap {overlap}"
        )));
    }
    let (chars, lossy) = decode_positions(bytes);
    let n = chars.len();
    let byte_at = |ci: usize| if ci == n { bytes.len() } else { chars[ci].0 };
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        out.push(Chunk {
            id: first_id + out.len(),
            source_path: path.to_string(),
            byte_span: (byte_at(start), byte_at(end)),
            text: chars[start..end].iter().map(|(_, c)| *c).collect(),
            lossy,
        });
        if end == n {
            break;
        }
        start = end - overlap;
    }
    Ok(out)
}

fn looks_binary(bytes: &[u8]) -> bool {
    bytes.iter().take(8192).any(|b| *b == 0)
}

/// All regular files under `roots`, in lexicographic path order.
pub fn corpus_files(roots: &[PathBuf]) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for root in roots {
        for entry in WalkDir::new(root).follow_links(false) {
            match entry {
                Ok(e) if e.file_type().is_file() => files.push(e.into_path()),
                Ok(_) => {}
                Err(e) => log::warn!("skipping unreadable corpus entry: {e}"),
            }
        }
    }
    files.sort();
    files.dedup();
    files
}

pub fn chunk_corpus(
    roots: &[PathBuf],
    size: usize,
    overlap: usize,
) -> Result<Vec<Chunk>, KnowledgeError> {
    if size == 0 || overlap >= size {
        return Err(KnowledgeError::InvalidArgument(format!(
            "chunk size {size} must exceed overlap {overlap}"
        )));
    }
    let mut chunks = Vec::new();
    for file in corpus_files(roots) {
        let bytes = match std::fs::read(&file) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("skipping unreadable file {}: {e}", file.display());
                continue;
            }
        };
        if looks_binary(&bytes) {
            log::info!("skipping binary file {}", file.display());
            continue;
        }
        let path = path_string(&file);
        let more = chunk_bytes(&path, &bytes, size, overlap, chunks.len())?;
        if more.first().is_some_and(|c| c.lossy) {
            log::warn!("{path}: not valid UTF-8, decoded lossily");
        }
        chunks.extend(more);
    }
    Ok(chunks)
}

pub(crate) fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thousand_chars_size_400_overlap_100() {
        let text = "x".repeat(1000);
        let c = chunk_bytes("f", text.as_bytes(), 400, 100, 0).unwrap();
        let spans: Vec<_> = c.iter().map(|c| c.byte_span).collect();
        assert_eq!(spans, [(0, 400), (300, 700), (600, 1000)]);
        assert_eq!(c.iter().map(|c| c.id).collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn bad_sizes_rejected() {
        assert!(chunk_bytes("f", b"abc", 100, 100, 0).is_err());
        assert!(chunk_bytes("f", b"abc", 0, 0, 0).is_err());
    }

    #[test]
    fn empty_corpus_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(chunk_corpus(&[dir.path().to_path_buf()], 10, 2)
            .unwrap()
            .is_empty());
        std::fs::write(dir.path().join("empty.txt"), "").unwrap();
        assert!(chunk_corpus(&[dir.path().to_path_buf()], 10, 2)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn traversal_is_lexicographic_and_skips_binary() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("b")).unwrap();
        std::fs::write(dir.path().join("b/z.txt"), "zz").unwrap();
        std::fs::write(dir.path().join("a.txt"), "aa").unwrap();
        std::fs::write(dir.path().join("c.bin"), [1u8, 0, 2]).unwrap();
        let c = chunk_corpus(&[dir.path().to_path_buf()], 10, 2).unwrap();
        let names: Vec<_> = c.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(names, ["aa", "zz"]);
    }

    #[test]
    fn invalid_utf8_is_lossy_and_flagged() {
        let bytes = b"ab\xffcd";
        let c = chunk_bytes("f", bytes, 3, 1, 0).unwrap();
        assert!(c.iter().all(|c| c.lossy));
        for ch in &c {
            let (s, e) = ch.byte_span;
            assert_eq!(ch.text, String::from_utf8_lossy(&bytes[s..e]));
        }
    }

    /// Independent reconstruction: drop the first `overlap` chars of every
    /// chunk but the first and concatenate.
    fn reconstruct(chunks: &[Chunk], overlap: usize) -> String {
        let mut out = String::new();
        for (i, c) in chunks.iter().enumerate() {
            if i == 0 {
                out.push_str(&c.text);
            } else {
                out.extend(c.text.chars().skip(overlap));
            }
        }
        out
    }

    proptest! {
        #[test]
        fn chunks_reconstruct_source(
            files in proptest::collection::vec("[a-zé€ \\n]{0,300}", 0..5),
            size in 2usize..60,
            overlap_frac in 0.0f64..0.95,
        ) {
            let overlap = ((size as f64) * overlap_frac) as usize;
            let overlap = overlap.min(size - 1);
            let dir = tempfile::tempdir().unwrap();
            for (i, f) in files.iter().enumerate() {
                std::fs::write(dir.path().join(format!("f{i:02}.txt")), f).unwrap();
            }
            let chunks = chunk_corpus(&[dir.path().to_path_buf()], size, overlap).unwrap();
            for (i, f) in files.iter().enumerate() {
                let path = path_string(&dir.path().join(format!("f{i:02}.txt")));
                let mine: Vec<Chunk> = chunks.iter().filter(|c| c.source_path == path).cloned().collect();
                prop_assert_eq!(&reconstruct(&mine, overlap), f);
                for c in &mine {
                    prop_assert_eq!(&f.as_bytes()[c.byte_span.0..c.byte_span.1], c.text.as_bytes());
                }
                for w in mine.windows(2) {
                    let tail: String = w[0].text.chars().skip(w[0].text.chars().count() - overlap).collect();
                    let head: String = w[1].text.chars().take(overlap).collect();
                    prop_assert_eq!(tail, head);
                }
            }
            let ids: Vec<usize> = chunks.iter().map(|c| c.id).collect();
            prop_assert_eq!(ids, (0..chunks.len()).collect::<Vec<_>>());
        }
    }
}
