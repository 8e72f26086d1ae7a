//! Answer schemas and the labeled-field answer grammar.
//!
//! An answer is a sequence of labeled fields. A label is the field name in
//! upper case followed by a colon at the start of a line (outside fenced
//! blocks). Field kinds:
//!
//! * `text-line`: `NAME: value`
//! * `text-block`: `NAME:` followed by free text up to the next label
//! * `fenced-code`: `NAME:` followed by a fenced block, the info string is kept as the language
//! * `list-of-lines`: `NAME:` followed by one item per line (`- ` bullets are stripped)

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldKind {
    TextLine,
    TextBlock,
    FencedCode,
    ListOfLines,
}

impl FieldKind {
    fn placeholder(self) -> &'static str {
        match self {
            FieldKind::TextLine => "<single line>",
            FieldKind::TextBlock => "<free text, may span several lines>",
            FieldKind::FencedCode => "<fenced block: ```lang ... ```>",
            FieldKind::ListOfLines => "<one item per line>",
        }
    }
}

impl FromStr for FieldKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text-line" => Ok(FieldKind::TextLine),
            "text-block" => Ok(FieldKind::TextBlock),
            "fenced-code" => Ok(FieldKind::FencedCode),
            "list-of-lines" => Ok(FieldKind::ListOfLines),
            other => Err(format!("unknown field kind {other:?}")),
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldKind::TextLine => "text-line",
            FieldKind::TextBlock => "text-block",
            FieldKind::FencedCode => "fenced-code",
            FieldKind::ListOfLines => "list-of-lines",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub required: bool,
}

impl FieldSpec {
    pub fn label(&self) -> String {
        self.name.to_ascii_uppercase()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("duplicate field name {0:?}")]
    DuplicateField(String),
    #[error("schema has no required field")]
    NoRequiredField,
    #[error("invalid field name {0:?}")]
    InvalidName(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerSchema {
    fields: Vec<FieldSpec>,
}

impl AnswerSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self, SchemaError> {
        let mut seen = BTreeSet::new();
        for f in &fields {
            let valid = f
                .name
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_alphabetic())
                && f.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid {
                return Err(SchemaError::InvalidName(f.name.clone()));
            }
            if !seen.insert(f.label()) {
                return Err(SchemaError::DuplicateField(f.name.clone()));
            }
        }
        if !fields.iter().any(|f| f.required) {
            return Err(SchemaError::NoRequiredField);
        }
        Ok(Self { fields })
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// The answer-template section shown to the model.
    pub fn describe(&self) -> String {
        let mut out = String::from(
            "Reply using exactly the labeled fields below, each label at the start of a line.\n\
             A list field has one item per line. A code field is the label followed by a fenced block.\n",
        );
        for f in &self.fields {
            out.push_str(&format!(
                "{}: {} ({})\n",
                f.label(),
                f.kind.placeholder(),
                if f.required { "required" } else { "optional" }
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldValue {
    Text(String),
    Lines(Vec<String>),
    Code { lang: String, body: String },
}

impl FieldValue {
    fn is_empty(&self) -> bool {
        match self {
            FieldValue::Text(s) => s.is_empty(),
            FieldValue::Lines(v) => v.is_empty(),
            FieldValue::Code { body, .. } => body.trim().is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredAnswer {
    pub values: BTreeMap<String, FieldValue>,
    pub raw: String,
    pub warnings: Vec<String>,
}

impl StructuredAnswer {
    pub fn text(&self, name: &str) -> Option<&str> {
        match self.values.get(name)? {
            FieldValue::Text(s) => Some(s),
            FieldValue::Code { body, .. } => Some(body),
            FieldValue::Lines(_) => None,
        }
    }

    pub fn lines(&self, name: &str) -> &[String] {
        match self.values.get(name) {
            Some(FieldValue::Lines(v)) => v,
            _ => &[],
        }
    }

    pub fn code(&self, name: &str) -> Option<(&str, &str)> {
        match self.values.get(name)? {
            FieldValue::Code { lang, body } => Some((lang, body)),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("missing required field {0:?}")]
    MissingField(String),
    #[error("field {field:?}: {reason}")]
    MalformedBlock { field: String, reason: String },
}

fn fence_open(line: &str) -> Option<(char, usize, String)> {
    let t = line.trim_start();
    let c = t.chars().next().filter(|c| *c == '`' || *c == '~')?;
    let n = t.chars().take_while(|x| *x == c).count();
    if n < 3 {
        return None;
    }
    let info = t[n..].trim().to_string();
    if c == '`' && info.contains('`') {
        return None;
    }
    Some((c, n, info))
}

fn fence_closes(line: &str, c: char, n: usize) -> bool {
    let t = line.trim();
    let run = t.chars().take_while(|x| *x == c).count();
    run >= n && run == t.chars().count()
}

fn strip_bullet(s: &str) -> &str {
    for p in ["- ", "* ", "• "] {
        if let Some(r) = s.strip_prefix(p) {
            return r.trim();
        }
    }
    s
}

/// Splits `text` into (label, inline rest, following lines) segments for the
/// schema's labels, ignoring labels inside fenced blocks.
fn segments<'a>(schema: &AnswerSchema, text: &'a str) -> Vec<(String, &'a str, Vec<&'a str>)> {
    let labels: BTreeSet<String> = schema.fields.iter().map(|f| f.label()).collect();
    let mut out: Vec<(String, &str, Vec<&str>)> = Vec::new();
    let mut fence: Option<(char, usize)> = None;
    for line in text.lines() {
        if let Some((c, n)) = fence {
            if fence_closes(line, c, n) {
                fence = None;
            }
            if let Some(seg) = out.last_mut() {
                seg.2.push(line);
            }
            continue;
        }
        if let Some((c, n, _)) = fence_open(line) {
            fence = Some((c, n));
            if let Some(seg) = out.last_mut() {
                seg.2.push(line);
            }
            continue;
        }
        let trimmed = line.trim_start();
        let label_hit = trimmed.split_once(':').and_then(|(head, rest)| {
            let head = head.trim().trim_matches('*').trim();
            labels.contains(head).then(|| (head.to_string(), rest))
        });
        match label_hit {
            Some((label, rest)) => out.push((label, rest, Vec::new())),
            None => {
                if let Some(seg) = out.last_mut() {
                    seg.2.push(line);
                }
            }
        }
    }
    out
}

pub fn parse(schema: &AnswerSchema, text: &str) -> Result<StructuredAnswer, ParseError> {
    let mut warnings = Vec::new();
    let mut by_label: BTreeMap<String, (&str, Vec<&str>)> = BTreeMap::new();
    for (label, inline, body) in segments(schema, text) {
        if by_label.contains_key(&label) {
            warnings.push(format!("duplicate field label {label}; keeping the first"));
            continue;
        }
        by_label.insert(label, (inline, body));
    }
    let mut values = BTreeMap::new();
    for f in &schema.fields {
        let Some((inline, body)) = by_label.get(&f.label()) else {
            if f.required {
                return Err(ParseError::MissingField(f.name.clone()));
            }
            continue;
        };
        let value = extract(f, inline, body)?;
        if value.is_empty() {
            if f.required {
                return Err(ParseError::MissingField(f.name.clone()));
            }
            continue;
        }
        values.insert(f.name.clone(), value);
    }
    Ok(StructuredAnswer {
        values,
        raw: text.to_string(),
        warnings,
    })
}

fn extract(f: &FieldSpec, inline: &str, body: &[&str]) -> Result<FieldValue, ParseError> {
    let inline = inline.trim();
    Ok(match f.kind {
        FieldKind::TextLine => {
            let v = if !inline.is_empty() {
                inline.to_string()
            } else {
                body.iter()
                    .map(|l| l.trim())
                    .find(|l| !l.is_empty())
                    .unwrap_or("")
                    .to_string()
            };
            FieldValue::Text(v)
        }
        FieldKind::TextBlock => {
            let mut parts = Vec::new();
            if !inline.is_empty() {
                parts.push(inline);
            }
            parts.extend(body.iter().copied());
            FieldValue::Text(parts.join("\n").trim().to_string())
        }
        FieldKind::ListOfLines => {
            let items = std::iter::once(inline)
                .chain(body.iter().copied())
                .map(|l| strip_bullet(l.trim()).to_string())
                .filter(|l| !l.is_empty())
                .collect();
            FieldValue::Lines(items)
        }
        FieldKind::FencedCode => {
            let mut iter = body.iter().enumerate();
            let open = iter.find_map(|(i, l)| fence_open(l).map(|o| (i, o)));
            let Some((start, (c, n, lang))) = open else {
                if inline.is_empty() && body.iter().all(|l| l.trim().is_empty()) {
                    return Ok(FieldValue::Code {
                        lang: String::new(),
                        body: String::new(),
                    });
                }
                return Err(ParseError::MalformedBlock {
                    field: f.name.clone(),
                    reason: "expected a fenced block".into(),
                });
            };
            let rest = &body[start + 1..];
            let end = rest.iter().position(|l| fence_closes(l, c, n));
            let Some(end) = end else {
                return Err(ParseError::MalformedBlock {
                    field: f.name.clone(),
                    reason: "unterminated fenced block".into(),
                });
            };
            FieldValue::Code {
                lang,
                body: rest[..end].join("\n"),
            }
        }
    })
}

/// Writes `values` in the schema's own answer format. `parse(schema, embed(..))`
/// returns the same values for well-formed inputs.
pub fn embed(schema: &AnswerSchema, values: &BTreeMap<String, FieldValue>) -> String {
    let mut out = String::new();
    for f in &schema.fields {
        let Some(v) = values.get(&f.name) else {
            continue;
        };
        let label = f.label();
        match v {
            FieldValue::Text(s) if f.kind == FieldKind::TextLine => {
                out.push_str(&format!("{label}: {s}\n"));
            }
            FieldValue::Text(s) => out.push_str(&format!("{label}:\n{s}\n")),
            FieldValue::Lines(items) => {
                out.push_str(&format!("{label}:\n"));
                for i in items {
                    out.push_str(&format!("- {i}\n"));
                }
            }
            FieldValue::Code { lang, body } => {
                let longest = body
                    .lines()
                    .map(|l| l.trim().chars().take_while(|c| *c == '`').count())
                    .max()
                    .unwrap_or(0);
                let fence = "`".repeat(longest.max(2) + 1);
                out.push_str(&format!("{label}:\n{fence}{lang}\n{body}\n{fence}\n"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(name: &str, kind: FieldKind, required: bool) -> FieldSpec {
        FieldSpec {
            name: name.into(),
            kind,
            required,
        }
    }

    #[test]
    fn command_line_field() {
        let s = AnswerSchema::new(vec![field("command", FieldKind::TextLine, true)]).unwrap();
        let a = parse(&s, "COMMAND: readelf --debug-dump=frames file.elf").unwrap();
        assert_eq!(
            a.text("command"),
            Some("readelf --debug-dump=frames file.elf")
        );
    }

    #[test]
    fn missing_required_names_field() {
        let s = AnswerSchema::new(vec![field("command", FieldKind::TextLine, true)]).unwrap();
        assert_eq!(
            parse(&s, "something else").unwrap_err(),
            ParseError::MissingField("command".into())
        );
    }

    #[test]
    fn duplicate_label_first_wins() {
        let s = AnswerSchema::new(vec![field("command", FieldKind::TextLine, true)]).unwrap();
        let a = parse(&s, "COMMAND: a @@\nCOMMAND: b @@").unwrap();
        assert_eq!(a.text("command"), Some("a @@"));
        assert_eq!(a.warnings.len(), 1);
    }

    #[test]
    fn fenced_block_verbatim() {
        let s = AnswerSchema::new(vec![field("code", FieldKind::FencedCode, true)]).unwrap();
        let body = "import sys\n  x = 1\nsys.stdout.write('P6')";
        let a = parse(&s, &format!("CODE:\n```python3\n{body}\n```\n")).unwrap();
        assert_eq!(a.code("code"), Some(("python3", body)));
    }

    #[test]
    fn unterminated_fence_is_malformed() {
        let s = AnswerSchema::new(vec![field("code", FieldKind::FencedCode, true)]).unwrap();
        assert!(matches!(
            parse(&s, "CODE:\n```\nabc\n"),
            Err(ParseError::MalformedBlock { .. })
        ));
    }

    #[test]
    fn labels_inside_fences_are_content() {
        let s = AnswerSchema::new(vec![
            field("code", FieldKind::FencedCode, true),
            field("note", FieldKind::TextLine, false),
        ])
        .unwrap();
        let a = parse(&s, "CODE:\n```\nNOTE: inside\n```\nNOTE: outside").unwrap();
        assert_eq!(a.code("code").unwrap().1, "NOTE: inside");
        assert_eq!(a.text("note"), Some("outside"));
    }

    #[test]
    fn list_trims_and_strips_bullets() {
        let s = AnswerSchema::new(vec![field("opts", FieldKind::ListOfLines, true)]).unwrap();
        let a = parse(&s, "OPTS:\n  - -I fmt  \n\n * -O fmt\nplain\n").unwrap();
        assert_eq!(a.lines("opts"), ["-I fmt", "-O fmt", "plain"]);
    }

    #[test]
    fn bold_markdown_labels_accepted() {
        let s = AnswerSchema::new(vec![field("command", FieldKind::TextLine, true)]).unwrap();
        let a = parse(&s, "**COMMAND**: prog @@").unwrap();
        assert_eq!(a.text("command"), Some("prog @@"));
    }

    #[test]
    fn schema_invariants() {
        assert_eq!(
            AnswerSchema::new(vec![field("a", FieldKind::TextLine, false)]).unwrap_err(),
            SchemaError::NoRequiredField
        );
        assert!(matches!(
            AnswerSchema::new(vec![
                field("a", FieldKind::TextLine, true),
                field("A", FieldKind::TextBlock, false)
            ]),
            Err(SchemaError::DuplicateField(_))
        ));
    }

    fn kind_strategy() -> impl Strategy<Value = FieldKind> {
        prop_oneof![
            Just(FieldKind::TextLine),
            Just(FieldKind::TextBlock),
            Just(FieldKind::FencedCode),
            Just(FieldKind::ListOfLines),
        ]
    }

    // Content lines that cannot be mistaken for a label or a fence.
    fn content_line() -> impl Strategy<Value = String> {
        "[a-z0-9][a-z0-9 .,=@()-]{0,30}[a-z0-9]".prop_map(|s| s)
    }

    fn value_for(kind: FieldKind) -> BoxedStrategy<FieldValue> {
        match kind {
            FieldKind::TextLine => content_line().prop_map(FieldValue::Text).boxed(),
            FieldKind::TextBlock => proptest::collection::vec(content_line(), 1..4)
                .prop_map(|v| FieldValue::Text(v.join("\n")))
                .boxed(),
            FieldKind::ListOfLines => proptest::collection::vec(content_line(), 1..5)
                .prop_map(FieldValue::Lines)
                .boxed(),
            FieldKind::FencedCode => (
                "[a-z0-9]{0,8}",
                proptest::collection::vec("[ -~]{0,40}", 1..6),
            )
                .prop_map(|(lang, lines)| FieldValue::Code {
                    lang,
                    body: lines.join("\n"),
                })
                .prop_filter("non-blank body", |v| !v.is_empty())
                .boxed(),
        }
    }

    fn schema_and_values() -> impl Strategy<Value = (AnswerSchema, BTreeMap<String, FieldValue>)> {
        proptest::collection::vec(kind_strategy(), 1..5).prop_flat_map(|kinds| {
            let specs: Vec<FieldSpec> = kinds
                .iter()
                .enumerate()
                .map(|(i, k)| field(&format!("field_{i}"), *k, true))
                .collect();
            let vals: Vec<BoxedStrategy<FieldValue>> =
                kinds.iter().map(|k| value_for(*k)).collect();
            (Just(specs), vals).prop_map(|(specs, vals)| {
                let schema = AnswerSchema::new(specs.clone()).unwrap();
                let map = specs.into_iter().map(|s| s.name).zip(vals).collect();
                (schema, map)
            })
        })
    }

    proptest! {
        #[test]
        fn embed_parse_is_identity((schema, values) in schema_and_values()) {
            let text = embed(&schema, &values);
            let parsed = parse(&schema, &text).unwrap();
            prop_assert_eq!(parsed.values, values);
        }
    }
}
