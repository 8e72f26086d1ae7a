//! Scripted backend: answers prompts from an ordered rule list.
//!
//! File format (UTF-8):
//!
//! ```text
//! # comment
//! match: PING
//! response: PONG
//!
//! match: re:^== Task ==\s+Summarize
//! response:
//! ~~~~
//! FUNCTIONALITY: ...
//! ~~~~
//! ```
//!
//! A `response:` with an empty value must be followed by a fenced block; the
//! fence is a run of three or more backticks or tildes and is closed by a line
//! holding a run of the same character at least as long. The block body is
//! the response verbatim.

use std::path::Path;

use regex::Regex;

use super::{BackendReply, LlmBackend, LlmError, LlmRequest};

#[derive(Debug, Clone)]
pub enum Matcher {
    Substring(String),
    Regex(Regex),
}

impl Matcher {
    pub fn parse(spec: &str) -> Result<Self, LlmError> {
        match spec.strip_prefix("re:") {
            Some(pat) => Regex::new(pat)
                .map(Matcher::Regex)
                .map_err(|e| LlmError::Fixture(format!("bad regex {pat:?}: {e}"))),
            None => Ok(Matcher::Substring(spec.to_string())),
        }
    }

    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Substring(s) => prompt.contains(s.as_str()),
            Matcher::Regex(r) => r.is_match(prompt),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixtureRule {
    pub matcher: Matcher,
    pub response: String,
}

#[derive(Debug, Clone)]
pub struct ScriptedFixture {
    rules: Vec<FixtureRule>,
    strict: bool,
}

impl ScriptedFixture {
    pub fn new(rules: Vec<FixtureRule>, strict: bool) -> Self {
        Self { rules, strict }
    }

    pub fn load(path: &Path, strict: bool) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        Self::parse(&text, strict)
    }

    pub fn parse(text: &str, strict: bool) -> Result<Self, LlmError> {
        let lines: Vec<&str> = text.lines().collect();
        let mut rules = Vec::new();
        let mut pending: Option<Matcher> = None;
        let mut i = 0;
        while i < lines.len() {
            let line = lines[i];
            let lineno = i + 1;
            let trimmed = line.trim();
            i += 1;
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("match:") {
                if pending.is_some() {
                    return Err(LlmError::Fixture(format!(
                        "line {lineno}: match without response for previous rule"
                    )));
                }
                let spec = rest.trim();
                if spec.is_empty() {
                    return Err(LlmError::Fixture(format!("line {lineno}: empty matcher")));
                }
                pending = Some(Matcher::parse(spec)?);
            } else if let Some(rest) = line.strip_prefix("response:") {
                let matcher = pending.take().ok_or_else(|| {
                    LlmError::Fixture(format!("line {lineno}: response without match"))
                })?;
                let inline = rest.trim();
                let response = if !inline.is_empty() {
                    inline.to_string()
                } else {
                    let (body, next) = read_fenced(&lines, i)
                        .map_err(|msg| LlmError::Fixture(format!("line {lineno}: {msg}")))?;
                    i = next;
                    body
                };
                rules.push(FixtureRule { matcher, response });
            } else {
                return Err(LlmError::Fixture(format!(
                    "line {lineno}: expected `match:` or `response:`"
                )));
            }
        }
        if pending.is_some() {
            return Err(LlmError::Fixture("trailing match without response".into()));
        }
        Ok(Self { rules, strict })
    }

    pub fn rules(&self) -> &[FixtureRule] {
        &self.rules
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn lookup(&self, prompt: &str) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| r.matcher.matches(prompt))
            .map(|r| r.response.as_str())
    }
}

fn read_fenced(lines: &[&str], start: usize) -> Result<(String, usize), String> {
    let mut i = start;
    while i < lines.len() && lines[i].trim().is_empty() {
        i += 1;
    }
    let open = lines
        .get(i)
        .ok_or("response: missing fenced block")?
        .trim_end();
    let fence_char = open.chars().next().filter(|c| *c == '`' || *c == '~');
    let fence_char = fence_char.ok_or("response: expected fenced block")?;
    let fence_len = open.chars().take_while(|c| *c == fence_char).count();
    if fence_len < 3 || open.len() != fence_len {
        return Err("response: malformed opening fence".into());
    }
    let mut body = Vec::new();
    i += 1;
    while i < lines.len() {
        let l = lines[i].trim_end();
        let run = l.chars().take_while(|c| *c == fence_char).count();
        if run >= fence_len && run == l.chars().count() {
            return Ok((body.join("\n"), i + 1));
        }
        body.push(lines[i]);
        i += 1;
    }
    Err("response: unterminated fenced block".into())
}

impl LlmBackend for ScriptedFixture {
    fn label(&self) -> String {
        "scripted".to_string()
    }

    fn generate(&self, request: &LlmRequest) -> Result<BackendReply, LlmError> {
        match self.lookup(&request.prompt_text) {
            Some(text) => Ok(BackendReply {
                text: text.to_string(),
                tokens: None,
            }),
            None if self.strict => Err(LlmError::FixtureMiss(
                request.prompt_text.chars().take(80).collect(),
            )),
            None => Ok(BackendReply {
                text: String::new(),
                tokens: None,
            }),
        }
    }
}
