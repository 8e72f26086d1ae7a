//! Bug facts, program usage, and function summaries.

pub mod chunk;
pub mod embed;
pub mod index;
pub mod source;

pub use chunk::{chunk_corpus, Chunk, DEFAULT_CHUNK_CHARS, DEFAULT_OVERLAP_CHARS};
pub use embed::{CommandEmbedder, Embedder, HashEmbedder, DEFAULT_DIM};
pub use index::{build_index, retrieve_top_k, EmbeddingIndex, DEFAULT_TOP_K};
pub use source::extract_definition;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::{Fillers, QueryEngine, TaskError, TaskOptions};

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error("chunk {chunk}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        chunk: usize,
        expected: usize,
        got: usize,
    },
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("the bug report does not name the vulnerable function; edit the report to name it")]
    NoVulnerableFunction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugInfo {
    pub program: String,
    pub affected_versions: Vec<String>,
    pub vulnerable_file: String,
    pub vulnerable_function: String,
    pub bug_type: String,
    pub cause_summary: String,
}

impl BugInfo {
    /// Plain-text rendering used as an attachment and as the retrieval query.
    pub fn describe(&self) -> String {
        format!(
            "program: {}\naffected versions: {}\nvulnerable file: {}\nvulnerable function: {}\nbug type: {}\ncause: {}",
            self.program,
            self.affected_versions.join(", "),
            self.vulnerable_file,
            self.vulnerable_function,
            self.bug_type,
            self.cause_summary
        )
    }
}

fn is_placeholder(v: &str) -> bool {
    let v = v
        .trim()
        .trim_matches(|c| c == '`' || c == '"')
        .to_ascii_lowercase();
    v.is_empty()
        || matches!(
            v.as_str(),
            "unknown" | "none" | "n/a" | "na" | "-" | "not specified"
        )
}

pub fn extract_bug_info(
    report_text: &str,
    engine: &QueryEngine,
) -> Result<BugInfo, KnowledgeError> {
    if report_text.trim().is_empty() {
        return Err(KnowledgeError::InvalidArgument("empty bug report".into()));
    }
    let a = engine.execute_task(
        "bug_info",
        &Fillers::new().with("report", report_text),
        &TaskOptions::stage("SA"),
    )?;
    let func = a.text("vulnerable_function").unwrap_or("");
    if is_placeholder(func) {
        return Err(KnowledgeError::NoVulnerableFunction);
    }
    let func = func
        .trim()
        .trim_matches('`')
        .trim_end_matches("()")
        .to_string();
    Ok(BugInfo {
        program: a.text("program").unwrap_or_default().to_string(),
        affected_versions: a.lines("affected_versions").to_vec(),
        vulnerable_file: a.text("vulnerable_file").unwrap_or_default().to_string(),
        vulnerable_function: func,
        bug_type: a.text("bug_type").unwrap_or_default().to_string(),
        cause_summary: a.text("cause_summary").unwrap_or_default().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageOption {
    pub flag: String,
    pub description: String,
    /// The flag appears verbatim in at least one attached chunk.
    pub grounded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramUsage {
    pub program: String,
    pub options: Vec<UsageOption>,
    pub invocation_notes: String,
}

impl ProgramUsage {
    pub fn describe(&self) -> String {
        let mut s = format!("program: {}\noptions:\n", self.program);
        for o in &self.options {
            s.push_str(&format!("  {} | {}\n", o.flag, o.description));
        }
        if !self.invocation_notes.is_empty() {
            s.push_str(&format!("notes: {}\n", self.invocation_notes));
        }
        s
    }

    /// The option token of every listed flag (`-I <bfdname>` → `-I`).
    pub fn flag_tokens(&self) -> BTreeSet<String> {
        self.options
            .iter()
            .filter_map(|o| flag_token(&o.flag))
            .collect()
    }
}

pub(crate) fn flag_token(flag: &str) -> Option<String> {
    let first = flag.split([' ', '=', ',']).next()?.trim();
    (!first.is_empty()).then(|| first.to_string())
}

pub const NO_RETRIEVAL_NOTE: &str = "no retrieval context";

fn split_option(line: &str) -> (String, String) {
    match line.split_once('|') {
        Some((f, d)) => (f.trim().to_string(), d.trim().to_string()),
        None => match line.split_once(char::is_whitespace) {
            Some((f, d)) => (f.trim().to_string(), d.trim().to_string()),
            None => (line.trim().to_string(), String::new()),
        },
    }
}

pub fn derive_program_usage(
    bug_info: &BugInfo,
    index: &EmbeddingIndex,
    embedder: &dyn Embedder,
    engine: &QueryEngine,
    k: usize,
) -> Result<ProgramUsage, KnowledgeError> {
    let retrieved = if index.is_empty() {
        Vec::new()
    } else {
        retrieve_top_k(index, embedder, &bug_info.describe(), k)?
    };
    let attached = if retrieved.is_empty() {
        "(none)".to_string()
    } else {
        retrieved
            .iter()
            .map(|(c, s)| {
                format!(
                    "[chunk {} {}:{}-{} score {:.3}]\n{}",
                    c.id, c.source_path, c.byte_span.0, c.byte_span.1, s, c.text
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let a = engine.execute_task(
        "usage_summary",
        &Fillers::new()
            .with("program", &bug_info.program)
            .with_prior("bug_info", bug_info.describe())
            .with("chunks", attached),
        &TaskOptions::stage("RAG"),
    )?;

    let mut seen = BTreeSet::new();
    let mut options = Vec::new();
    let mut ungrounded = Vec::new();
    for line in a.lines("options") {
        let (flag, description) = split_option(line);
        let Some(token) = flag_token(&flag) else {
            continue;
        };
        if !seen.insert(token.clone()) {
            continue;
        }
        let grounded = token == "@@" || retrieved.iter().any(|(c, _)| c.text.contains(&token));
        if !grounded {
            ungrounded.push(token);
        }
        options.push(UsageOption {
            flag,
            description,
            grounded,
        });
    }
    let mut notes = Vec::new();
    if let Some(n) = a.text("invocation_notes") {
        notes.push(n.to_string());
    }
    if retrieved.is_empty() {
        notes.push(NO_RETRIEVAL_NOTE.to_string());
    } else if !ungrounded.is_empty() {
        notes.push(format!("ungrounded options: {}", ungrounded.join(", ")));
    }
    Ok(ProgramUsage {
        program: bug_info.program.clone(),
        options,
        invocation_notes: notes.join("\n"),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSummary {
    pub function: String,
    pub functionality: String,
    pub parameters: Vec<(String, String)>,
    pub key_operations: Vec<String>,
}

impl FunctionSummary {
    pub fn describe(&self) -> String {
        let mut s = format!(
            "function: {}\nfunctionality: {}\n",
            self.function, self.functionality
        );
        if !self.parameters.is_empty() {
            s.push_str("parameters:\n");
            for (n, d) in &self.parameters {
                s.push_str(&format!("  {n} | {d}\n"));
            }
        }
        s.push_str("key operations:\n");
        for k in &self.key_operations {
            s.push_str(&format!("  - {k}\n"));
        }
        s
    }
}

pub fn summarize_function(
    function_name: &str,
    definition_text: &str,
    engine: &QueryEngine,
) -> Result<FunctionSummary, KnowledgeError> {
    if definition_text.trim().is_empty() {
        return Err(KnowledgeError::InvalidArgument(format!(
            "empty definition for {function_name}"
        )));
    }
    let a = engine.execute_task(
        "function_summary",
        &Fillers::new()
            .with("function_name", function_name)
            .with("definition", definition_text),
        &TaskOptions::stage("SA"),
    )?;
    Ok(FunctionSummary {
        function: function_name.to_string(),
        functionality: a.text("functionality").unwrap_or_default().to_string(),
        parameters: a
            .lines("parameters")
            .iter()
            .map(|l| split_option(l))
            .collect(),
        key_operations: a.lines("key_operations").to_vec(),
    })
}

/// Memoizes summaries by function name.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SummaryCache {
    pub summaries: BTreeMap<String, FunctionSummary>,
}

impl SummaryCache {
    pub fn get_or_summarize(
        &mut self,
        function_name: &str,
        definition_text: &str,
        engine: &QueryEngine,
    ) -> Result<&FunctionSummary, KnowledgeError> {
        if !self.summaries.contains_key(function_name) {
            let s = summarize_function(function_name, definition_text, engine)?;
            self.summaries.insert(function_name.to_string(), s);
        }
        Ok(&self.summaries[function_name])
    }

    pub fn get(&self, function_name: &str) -> Option<&FunctionSummary> {
        self.summaries.get(function_name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmClient, ScriptedFixture};

    fn engine(fixture: &str) -> QueryEngine {
        QueryEngine::with_builtin(LlmClient::scripted(
            ScriptedFixture::parse(fixture, true).unwrap(),
        ))
    }

    const CJPEG_BUG: &str = "\
match: Extract the vulnerability facts
response:
~~~
PROGRAM: cjpeg
AFFECTED_VERSIONS:
- libjpeg-turbo 2.0.4
VULNERABLE_FILE: rdppm.c
VULNERABLE_FUNCTION: get_rgb_row
BUG_TYPE: Heap Buffer Overflow
CAUSE_SUMMARY: get_rgb_row reads past the end of a row buffer when maxval is inconsistent with the sample size.
~~~
";

    #[test]
    fn cjpeg_bug_info() {
        let e = engine(CJPEG_BUG);
        let b = extract_bug_info("heap-buffer-overflow in rdppm.c:get_rgb_row", &e).unwrap();
        assert_eq!(b.program, "cjpeg");
        assert_eq!(b.vulnerable_function, "get_rgb_row");
        assert_eq!(b.bug_type, "Heap Buffer Overflow");
        assert_eq!(b.affected_versions, ["libjpeg-turbo 2.0.4"]);
        // Same report again: identical result.
        assert_eq!(
            extract_bug_info("heap-buffer-overflow in rdppm.c:get_rgb_row", &e).unwrap(),
            b
        );
    }

    #[test]
    fn blank_function_fails_loudly() {
        let e = engine(
            "match: Extract the vulnerability facts\nresponse:\n~~~\nPROGRAM: objdump\nVULNERABLE_FUNCTION:\nBUG_TYPE: NULL dereference\n~~~\n",
        );
        assert!(matches!(
            extract_bug_info("crash somewhere in objdump", &e),
            Err(KnowledgeError::NoVulnerableFunction)
        ));
        let e = engine(
            "match: Extract the vulnerability facts\nresponse:\n~~~\nPROGRAM: objdump\nVULNERABLE_FUNCTION: unknown\nBUG_TYPE: NULL dereference\n~~~\n",
        );
        assert!(matches!(
            extract_bug_info("crash somewhere in objdump", &e),
            Err(KnowledgeError::NoVulnerableFunction)
        ));
    }

    #[test]
    fn empty_report_rejected() {
        assert!(extract_bug_info("  ", &engine(CJPEG_BUG)).is_err());
    }

    fn objcopy_bug() -> BugInfo {
        BugInfo {
            program: "objcopy".into(),
            affected_versions: vec![],
            vulnerable_file: "bfd/elf.c".into(),
            vulnerable_function: "bfd_section_from_shdr".into(),
            bug_type: "Stack exhaustion".into(),
            cause_summary: "recursive section processing".into(),
        }
    }

    const OBJCOPY_USAGE: &str = "\
match: Summarize the usage of all command options for this program: objcopy
response:
~~~
OPTIONS:
- -I <bfdname> | specifies the input format
- -O <bfdname> | specifies the output format
- --frobnicate | made up
INVOCATION_NOTES: objcopy [options] infile [outfile]
~~~
";

    #[test]
    fn objcopy_usage_grounding() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("objcopy.1.txt"),
            "-I bfdname --input-target=bfdname  Consider the source file's object format to be bfdname.\n\
             -O bfdname --output-target=bfdname  Write the output file using the object format bfdname.\n",
        )
        .unwrap();
        let chunks = chunk_corpus(&[dir.path().to_path_buf()], 1200, 200).unwrap();
        let emb = HashEmbedder::default();
        let idx = build_index(chunks, &emb).unwrap();
        let u =
            derive_program_usage(&objcopy_bug(), &idx, &emb, &engine(OBJCOPY_USAGE), 10).unwrap();
        let flags: Vec<_> = u.options.iter().map(|o| o.flag.as_str()).collect();
        assert_eq!(flags, ["-I <bfdname>", "-O <bfdname>", "--frobnicate"]);
        assert_eq!(u.options[0].description, "specifies the input format");
        assert!(u.options[0].grounded && u.options[1].grounded && !u.options[2].grounded);
        assert!(u
            .invocation_notes
            .contains("ungrounded options: --frobnicate"));
    }

    #[test]
    fn empty_index_is_flagged() {
        let emb = HashEmbedder::default();
        let idx = build_index(vec![], &emb).unwrap();
        let u =
            derive_program_usage(&objcopy_bug(), &idx, &emb, &engine(OBJCOPY_USAGE), 10).unwrap();
        assert!(u.invocation_notes.contains(NO_RETRIEVAL_NOTE));
        assert!(u.options.iter().all(|o| !o.grounded));
    }

    const SUMMARY: &str = "\
match: Summarize the function's purpose: get_rgb_row
response:
~~~
FUNCTIONALITY: Reads one row of RGB pixel samples from 8-bit raw PPM data into the row buffer, rescaling each sample through the maxval lookup table.
PARAMETERS:
- cinfo | compression context
- sinfo | PPM source state with the row buffer
KEY_OPERATIONS:
- read one row of raw bytes
- look up each sample in the rescale table
- write R, G, B into the output row
~~~
";

    #[test]
    fn summary_sections() {
        let e = engine(SUMMARY);
        let s = summarize_function(
            "get_rgb_row",
            "METHODDEF(JDIMENSION) get_rgb_row(...) { }",
            &e,
        )
        .unwrap();
        assert!(s.functionality.contains("RGB"));
        assert!(s.functionality.contains("PPM"));
        assert_eq!(s.parameters.len(), 2);
        assert_eq!(s.key_operations.len(), 3);
        let mut cache = SummaryCache::default();
        let first = cache
            .get_or_summarize("get_rgb_row", "x", &e)
            .unwrap()
            .clone();
        let second = cache
            .get_or_summarize("get_rgb_row", "x", &e)
            .unwrap()
            .clone();
        assert_eq!(first, second);
        assert_eq!(e.client.request_count(), 2);
    }

    #[test]
    fn empty_definition_rejected() {
        assert!(matches!(
            summarize_function("f", "  ", &engine(SUMMARY)),
            Err(KnowledgeError::InvalidArgument(_))
        ));
    }
}
