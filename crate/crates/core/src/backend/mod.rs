//! Segmenter backends.
//!
//! The engine talks to any backend through [`Segmenter`]. Three
//! implementations ship: an HTTP client for chat-completion endpoints with
//! JSON-schema structured output, a deterministic table-driven mock, and a
//! replay backend over recorded request/response logs. [`Recording`] wraps
//! any backend and appends every exchange to such a log; [`FaultInjector`]
//! corrupts responses for validation tests.

pub mod fault;
pub mod llm;
pub mod mock;
pub mod replay;
pub mod schema;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::GrammarRuleId;
use crate::validate::ValidationFailure;

pub use fault::{Fault, FaultInjector};
pub use llm::{LlmClient, LlmConfig};
pub use mock::MockSegmenter;
pub use replay::{Recording, ReplaySegmenter};
pub use schema::{FieldKind, FieldSpec, OutputSchema, ResponseForm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    ClauseSegment,
    AlternativeClassify,
    ExpressionSegment,
    Repair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmenterRequest {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<GrammarRuleId>,
    pub fragment: String,
    pub full_query: String,
    #[serde(default)]
    pub dialect: String,
    pub schema: OutputSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_failure: Option<ValidationFailure>,
}

impl SegmenterRequest {
    pub fn clause(rule: GrammarRuleId, fragment: &str, full_query: &str, dialect: &str) -> Self {
        SegmenterRequest {
            task: Task::ClauseSegment,
            rule: Some(rule),
            fragment: fragment.to_string(),
            full_query: full_query.to_string(),
            dialect: dialect.to_string(),
            schema: OutputSchema::clause(rule),
            prior_failure: None,
        }
    }

    pub fn classify(rule: GrammarRuleId, fragment: &str, full_query: &str, dialect: &str) -> Self {
        SegmenterRequest {
            task: Task::AlternativeClassify,
            rule: Some(rule),
            fragment: fragment.to_string(),
            full_query: full_query.to_string(),
            dialect: dialect.to_string(),
            schema: OutputSchema::classify(rule),
            prior_failure: None,
        }
    }

    pub fn expression(fragment: &str, full_query: &str, dialect: &str) -> Self {
        SegmenterRequest {
            task: Task::ExpressionSegment,
            rule: Some(GrammarRuleId::Expr),
            fragment: fragment.to_string(),
            full_query: full_query.to_string(),
            dialect: dialect.to_string(),
            schema: OutputSchema::expression(),
            prior_failure: None,
        }
    }

    /// A follow-up request asking the backend to fix `failure`.
    pub fn repair(&self, failure: ValidationFailure) -> Self {
        SegmenterRequest {
            task: Task::Repair,
            prior_failure: Some(failure),
            ..self.clone()
        }
    }

    /// Form of the expected response; repairs keep the original form.
    pub fn form(&self) -> ResponseForm {
        self.schema.form
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClauseSegments {
    /// `(field name, segment text)` in schema order; absent fields omitted.
    pub fields: Vec<(String, String)>,
    #[serde(default)]
    pub other: Vec<String>,
}

impl ClauseSegments {
    pub fn get(&self, field: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(name, _)| name == field)
            .map(|(_, text)| text.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExprSegments {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub literal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub operands: Vec<String>,
}

impl ExprSegments {
    pub fn literal(text: &str) -> Self {
        ExprSegments {
            literal: Some(text.to_string()),
            ..Default::default()
        }
    }

    pub fn operation(op: &str, operands: &[&str]) -> Self {
        ExprSegments {
            literal: None,
            operator: Some(op.to_string()),
            operands: operands.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum SegmenterResponse {
    Clause(ClauseSegments),
    Classify { choices: Vec<(String, bool)> },
    Expression(ExprSegments),
}

impl SegmenterResponse {
    pub fn form(&self) -> ResponseForm {
        match self {
            SegmenterResponse::Clause(_) => ResponseForm::Clause,
            SegmenterResponse::Classify { .. } => ResponseForm::Classify,
            SegmenterResponse::Expression(_) => ResponseForm::Expression,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("undecodable response: {0}")]
    Schema(String),
    #[error("mock has no rule for: {0}")]
    MockUnknownFeature(String),
}

impl BackendError {
    /// Content failures are repaired; transport failures abort the run.
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, request: &SegmenterRequest) -> Result<SegmenterResponse, BackendError>;
}

impl<S: Segmenter + ?Sized> Segmenter for Arc<S> {
    fn segment(&self, request: &SegmenterRequest) -> Result<SegmenterResponse, BackendError> {
        (**self).segment(request)
    }
}

impl<S: Segmenter + ?Sized> Segmenter for &S {
    fn segment(&self, request: &SegmenterRequest) -> Result<SegmenterResponse, BackendError> {
        (**self).segment(request)
    }
}

/// Verbatim system prompt; `{dialect}` is substituted per request.
pub const SYSTEM_PROMPT: &str = include_str!("../../data/system_prompt.txt");
/// Repair instructions with `{failure_kind}`, `{detail}`, `{fragment}` and
/// `{full_query}` placeholders.
pub const REPAIR_PROMPT: &str = include_str!("../../data/repair_prompt.txt");

pub fn system_prompt(dialect: &str) -> String {
    let dialect = if dialect.trim().is_empty() {
        "unknown"
    } else {
        dialect.trim()
    };
    SYSTEM_PROMPT.trim_end().replace("{dialect}", dialect)
}

pub fn render_repair(
    template: &str,
    failure: &ValidationFailure,
    request: &SegmenterRequest,
) -> String {
    template
        .replace("{failure_kind}", failure.kind.as_str())
        .replace("{detail}", &failure.detail)
        .replace("{fragment}", &request.fragment)
        .replace("{full_query}", &request.full_query)
}
