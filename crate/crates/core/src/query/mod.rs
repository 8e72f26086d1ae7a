//! Task queries: render a template, ask the model, parse the structured
//! answer, and repair invalid answers a bounded number of times.

pub mod schema;
pub mod template;

pub use schema::{
    embed, parse, AnswerSchema, FieldKind, FieldSpec, FieldValue, ParseError, SchemaError,
    StructuredAnswer,
};
pub use template::{Attachment, Catalog, Fillers, QueryTemplate, TemplateError};

use thiserror::Error;

use crate::llm::{LlmClient, LlmError, LlmRequest, EXTRACTION_TEMPERATURE};

pub const DEFAULT_MAX_REPAIRS: usize = 3;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("unknown task template {0:?}")]
    UnknownTask(String),
    #[error("LLM request failed: {0}")]
    Llm(#[from] LlmError),
    #[error("task {task_id}: no valid answer after {} requests; last error: {last_error}", responses.len())]
    RepairsExhausted {
        task_id: String,
        responses: Vec<String>,
        last_error: String,
    },
}

/// Per-call settings for a task query.
#[derive(Debug, Clone)]
pub struct TaskOptions {
    pub stage: String,
    pub temperature: f32,
    pub max_repairs: usize,
    pub max_response_chars: usize,
}

impl Default for TaskOptions {
    fn default() -> Self {
        Self {
            stage: "default".into(),
            temperature: EXTRACTION_TEMPERATURE,
            max_repairs: DEFAULT_MAX_REPAIRS,
            max_response_chars: 32 * 1024,
        }
    }
}

impl TaskOptions {
    pub fn stage(stage: &str) -> Self {
        Self {
            stage: stage.into(),
            ..Self::default()
        }
    }

    pub fn temperature(mut self, t: f32) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_repairs(mut self, n: usize) -> Self {
        self.max_repairs = n;
        self
    }
}

/// Text appended to the Suggestion section on a repair round.
pub fn repair_note(round: usize, max: usize, error: &str, previous: &str) -> String {
    format!(
        "Repair attempt {round} of {max}: your previous answer could not be used ({error}).\n\
         Previous answer:\n<<<\n{}\n>>>\nAnswer again, following the answer template exactly.",
        previous.trim_end()
    )
}

/// Runs `first` and, while `accept` rejects the reply, the prompts produced by
/// `repair(round, raw, error)`. At most `1 + opts.max_repairs` requests.
pub fn run_with_repairs<T>(
    client: &LlmClient,
    task_id: &str,
    first: String,
    opts: &TaskOptions,
    mut repair: impl FnMut(usize, &str, &str) -> Result<String, TaskError>,
    mut accept: impl FnMut(&str) -> Result<T, String>,
) -> Result<T, TaskError> {
    let mut responses = Vec::new();
    let mut prompt = first;
    let mut last_error;
    let mut round = 0;
    loop {
        let req = LlmRequest::new(prompt)
            .with_stage(opts.stage.clone())
            .with_temperature(opts.temperature)
            .with_max_chars(opts.max_response_chars);
        let resp = client.complete(&req)?;
        let verdict = if resp.truncated {
            Err("answer was truncated".to_string())
        } else {
            accept(&resp.text)
        };
        match verdict {
            Ok(v) => return Ok(v),
            Err(e) => {
                log::debug!("task {task_id}: answer rejected: {e}");
                last_error = e;
                responses.push(resp.text);
            }
        }
        if round == opts.max_repairs {
            break;
        }
        round += 1;
        prompt = repair(round, responses.last().unwrap(), &last_error)?;
    }
    Err(TaskError::RepairsExhausted {
        task_id: task_id.to_string(),
        responses,
        last_error,
    })
}

/// Client plus template catalog.
#[derive(Debug, Clone)]
pub struct QueryEngine {
    pub client: LlmClient,
    pub catalog: Catalog,
}

impl QueryEngine {
    pub fn new(client: LlmClient, catalog: Catalog) -> Self {
        Self { client, catalog }
    }

    pub fn with_builtin(client: LlmClient) -> Self {
        Self::new(client, Catalog::builtin())
    }

    pub fn template(&self, task_id: &str) -> Result<&QueryTemplate, TaskError> {
        self.catalog
            .get(task_id)
            .ok_or_else(|| TaskError::UnknownTask(task_id.to_string()))
    }

    pub fn execute_task(
        &self,
        task_id: &str,
        fillers: &Fillers,
        opts: &TaskOptions,
    ) -> Result<StructuredAnswer, TaskError> {
        self.execute_validated(task_id, fillers, opts, |a| Ok(a.clone()))
    }

    /// Like [`execute_task`](Self::execute_task) but an answer must also pass
    /// `validate`; its error text is fed back on the repair round.
    pub fn execute_validated<T>(
        &self,
        task_id: &str,
        fillers: &Fillers,
        opts: &TaskOptions,
        validate: impl FnMut(&StructuredAnswer) -> Result<T, String>,
    ) -> Result<T, TaskError> {
        self.execute_noted(task_id, fillers, &[], opts, validate)
    }

    /// Like [`execute_validated`](Self::execute_validated) with extra
    /// `notes` appended to the Suggestion section of every prompt.
    pub fn execute_noted<T>(
        &self,
        task_id: &str,
        fillers: &Fillers,
        notes: &[String],
        opts: &TaskOptions,
        mut validate: impl FnMut(&StructuredAnswer) -> Result<T, String>,
    ) -> Result<T, TaskError> {
        let template = self.template(task_id)?;
        let first = template.render_with(fillers, notes)?;
        let max = opts.max_repairs;
        run_with_repairs(
            &self.client,
            task_id,
            first,
            opts,
            |round, raw, err| {
                let mut all = notes.to_vec();
                all.push(repair_note(round, max, err, raw));
                Ok(template.render_with(fillers, &all)?)
            },
            |raw| {
                let answer = parse(&template.answer_schema, raw).map_err(|e| e.to_string())?;
                for w in &answer.warnings {
                    log::warn!("task {task_id}: {w}");
                }
                validate(&answer)
            },
        )
    }
}
