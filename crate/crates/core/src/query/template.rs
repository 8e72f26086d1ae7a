//! Four-part query templates: Task, Attachment, Suggestion, Answer Template.
//!
//! Template files are UTF-8 with four sections:
//!
//! ```text
//! == TASK ==
//! Summarize the function's purpose.
//! == ATTACHMENTS ==
//! function_name
//! definition
//! == SUGGESTION ==
//! Focus on how {function_name} reads its input.
//! == ANSWER ==
//! functionality text-block required
//! parameters list-of-lines optional
//! ```
//!
//! `{slot}` in the task or suggestion text is replaced by the slot's filler.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use regex::Regex;
use thiserror::Error;

use super::schema::{AnswerSchema, FieldKind, FieldSpec};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {task}: {reason}")]
    Invalid { task: String, reason: String },
    #[error("template {task}: missing filler for slot {slot:?}")]
    MissingSlot { task: String, slot: String },
    #[error("template {task}: filler for undeclared slot {slot:?}")]
    UnknownSlot { task: String, slot: String },
    #[error("template {task}: empty task text")]
    EmptyTask { task: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTemplate {
    pub task_id: String,
    pub task_text: String,
    pub attachment_slots: Vec<String>,
    pub suggestion_text: String,
    pub answer_schema: AnswerSchema,
}

/// One attachment value. `prior` marks results from an earlier pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub text: String,
    pub prior: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Fillers {
    slots: BTreeMap<String, Attachment>,
}

impl Fillers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, slot: &str, text: impl Into<String>) -> Self {
        self.set(slot, text, false);
        self
    }

    pub fn with_prior(mut self, slot: &str, text: impl Into<String>) -> Self {
        self.set(slot, text, true);
        self
    }

    pub fn set(&mut self, slot: &str, text: impl Into<String>, prior: bool) {
        self.slots.insert(
            slot.to_string(),
            Attachment {
                text: text.into(),
                prior,
            },
        );
    }

    pub fn get(&self, slot: &str) -> Option<&Attachment> {
        self.slots.get(slot)
    }
}

fn slot_ref_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z][a-z0-9_]*)\}").unwrap())
}

impl QueryTemplate {
    pub fn new(
        task_id: &str,
        task_text: &str,
        attachment_slots: Vec<String>,
        suggestion_text: &str,
        answer_schema: AnswerSchema,
    ) -> Result<Self, TemplateError> {
        let t = Self {
            task_id: task_id.to_string(),
            task_text: task_text.trim().to_string(),
            attachment_slots,
            suggestion_text: suggestion_text.trim().to_string(),
            answer_schema,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), TemplateError> {
        let invalid = |reason: String| TemplateError::Invalid {
            task: self.task_id.clone(),
            reason,
        };
        if self.task_text.is_empty() {
            return Err(TemplateError::EmptyTask {
                task: self.task_id.clone(),
            });
        }
        let declared: BTreeSet<&str> = self.attachment_slots.iter().map(String::as_str).collect();
        if declared.len() != self.attachment_slots.len() {
            return Err(invalid("duplicate attachment slot".into()));
        }
        for text in [&self.task_text, &self.suggestion_text] {
            for cap in slot_ref_re().captures_iter(text) {
                if !declared.contains(&cap[1]) {
                    return Err(invalid(format!(
                        "reference to undeclared slot {{{}}}",
                        &cap[1]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn parse(task_id: &str, text: &str) -> Result<Self, TemplateError> {
        let invalid = |reason: String| TemplateError::Invalid {
            task: task_id.to_string(),
            reason,
        };
        let mut sections: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut current: Option<&str> = None;
        for line in text.lines() {
            let header = match line.trim() {
                "== TASK ==" => Some("task"),
                "== ATTACHMENTS ==" => Some("attachments"),
                "== SUGGESTION ==" => Some("suggestion"),
                "== ANSWER ==" => Some("answer"),
                _ => None,
            };
            if let Some(h) = header {
                if sections.contains_key(h) {
                    return Err(invalid(format!("section {h} repeated")));
                }
                sections.insert(h, Vec::new());
                current = Some(h);
                continue;
            }
            match current {
                Some(h) => sections.get_mut(h).unwrap().push(line),
                None if line.trim().is_empty() || line.starts_with('#') => {}
                None => return Err(invalid("text before the first section".into())),
            }
        }
        for required in ["task", "attachments", "suggestion", "answer"] {
            if !sections.contains_key(required) {
                return Err(invalid(format!("missing section {required}")));
            }
        }
        let slots = sections["attachments"]
            .iter()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let mut fields = Vec::new();
        for line in sections["answer"]
            .iter()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty())
        {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [name, kind, req] = parts[..] else {
                return Err(invalid(format!(
                    "answer line {line:?}: expected `name kind required|optional`"
                )));
            };
            let kind: FieldKind = kind.parse().map_err(invalid)?;
            let required = match req {
                "required" => true,
                "optional" => false,
                other => return Err(invalid(format!("bad required flag {other:?}"))),
            };
            fields.push(FieldSpec {
                name: name.to_string(),
                kind,
                required,
            });
        }
        let schema = AnswerSchema::new(fields).map_err(|e| invalid(e.to_string()))?;
        Self::new(
            task_id,
            &sections["task"].join("\n"),
            slots,
            &sections["suggestion"].join("\n"),
            schema,
        )
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let task_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("template")
            .to_string();
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Invalid {
            task: task_id.clone(),
            reason: e.to_string(),
        })?;
        Self::parse(&task_id, &text)
    }

    /// Renders the prompt. `extra_suggestions` are appended to the Suggestion
    /// section (used for repair rounds).
    pub fn render_with(
        &self,
        fillers: &Fillers,
        extra_suggestions: &[String],
    ) -> Result<String, TemplateError> {
        for slot in &self.attachment_slots {
            if fillers.get(slot).is_none() {
                return Err(TemplateError::MissingSlot {
                    task: self.task_id.clone(),
                    slot: slot.clone(),
                });
            }
        }
        if let Some(extra) = fillers
            .slots
            .keys()
            .find(|k| !self.attachment_slots.contains(k))
        {
            return Err(TemplateError::UnknownSlot {
                task: self.task_id.clone(),
                slot: extra.clone(),
            });
        }
        let subst = |text: &str| {
            slot_ref_re()
                .replace_all(text, |c: &regex::Captures| {
                    fillers
                        .get(&c[1])
                        .map(|a| a.text.trim().to_string())
                        .unwrap_or_default()
                })
                .into_owned()
        };

        let mut out = String::new();
        out.push_str("== Task ==\n");
        out.push_str(&subst(&self.task_text));
        out.push_str("\n\n== Attachment ==\n");
        for slot in &self.attachment_slots {
            let a = fillers.get(slot).expect("checked above");
            out.push_str(&format!(
                "--- {slot} ---\n{}\n--- end {slot} ---\n",
                a.text.trim_end()
            ));
        }
        out.push_str("\n== Suggestion ==\n");
        let suggestion = subst(&self.suggestion_text);
        if !suggestion.is_empty() {
            out.push_str(&suggestion);
            out.push('\n');
        }
        let prior: Vec<&str> = self
            .attachment_slots
            .iter()
            .filter(|s| fillers.get(s).is_some_and(|a| a.prior))
            .map(String::as_str)
            .collect();
        if !prior.is_empty() {
            out.push_str(&format!(
                "The attachments {} hold results from earlier analysis steps; use them.\n",
                prior
                    .iter()
                    .map(|s| format!("`{s}`"))
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        for extra in extra_suggestions {
            out.push_str(extra.trim_end());
            out.push('\n');
        }
        out.push_str("\n== Answer Template ==\n");
        out.push_str(&self.answer_schema.describe());
        Ok(out)
    }

    pub fn render(&self, fillers: &Fillers) -> Result<String, TemplateError> {
        self.render_with(fillers, &[])
    }
}

/// Task templates keyed by task id.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    templates: BTreeMap<String, QueryTemplate>,
}

macro_rules! builtin {
    ($($id:literal),* $(,)?) => {
        &[$(($id, include_str!(concat!("../../templates/", $id, ".tmpl")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin!(
    "bug_info",
    "usage_summary",
    "function_summary",
    "command_selection",
    "preliminary_seed",
    "fcc_step",
    "neighbor_input",
    "bug_analysis",
    "strategy_proposal",
    "mutator_synthesis",
    "mutator_repair",
);

impl Catalog {
    /// The shipped catalog.
    pub fn builtin() -> Self {
        let mut c = Catalog::default();
        for (id, text) in BUILTIN {
            let t = QueryTemplate::parse(id, text).expect("shipped template parses");
            c.insert(t);
        }
        c
    }

    /// Loads every `*.tmpl` file in `dir`, overriding built-ins with the same id.
    pub fn with_overrides(mut self, dir: &Path) -> Result<Self, TemplateError> {
        let entries = std::fs::read_dir(dir).map_err(|e| TemplateError::Invalid {
            task: dir.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "tmpl"))
            .collect();
        paths.sort();
        for p in paths {
            self.insert(QueryTemplate::load(&p)?);
        }
        Ok(self)
    }

    pub fn insert(&mut self, t: QueryTemplate) {
        self.templates.insert(t.task_id.clone(), t);
    }

    pub fn get(&self, task_id: &str) -> Option<&QueryTemplate> {
        self.templates.get(task_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}
