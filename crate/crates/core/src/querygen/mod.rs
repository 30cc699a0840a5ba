//! Text queries for the separator.
//!
//! The live pipeline asks a vision model for a whole-scene description and a
//! masked-region description, then asks a language model for the sounds that
//! remain once the region is removed. [`fallback_subtract`] is an offline,
//! deterministic stand-in for the last step, and [`text_to_embedding`] turns
//! any query into a fixed-size vector by feature hashing.

mod audit;
mod embedding;
mod fallback;
mod provider;
mod templates;
mod transport;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{AuditLog, AuditRecord};
pub use embedding::text_to_embedding;
pub use fallback::{fallback_subtract, tokenize, FALLBACK_QUERY, STOPWORDS};
pub use provider::{ProviderClient, ProviderConfig};
pub use templates::{PromptTemplate, TemplateStore, REGION_TEMPLATE, SCENE_TEMPLATE, SUBTRACT_TEMPLATE};
pub use transport::{HttpRequest, HttpResponse, Transport, TransportError, UreqTransport};

/// Longest query kept after condensation, in characters.
pub const MAX_QUERY_CHARS: usize = 256;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("provider did not respond after {attempts} attempt(s): {detail}")]
    Timeout { attempts: u32, detail: String },
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("empty description")]
    EmptyDescription,
    #[error("environment variable {0} with the provider API key is not set")]
    MissingApiKey(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("audit log {path}: {source}")]
    Audit {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl QueryError {
    /// Local problems (missing files, bad templates, audit log) rather than
    /// provider failures.
    pub fn is_input(&self) -> bool {
        matches!(self, QueryError::Input(_) | QueryError::Audit { .. })
    }
}

/// `d_v`: the whole-scene description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub text: String,
    pub provider_id: String,
    pub frame_ref: String,
}

/// `d_a`: the description of the masked region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionalDescription {
    pub text: String,
    pub provider_id: String,
    pub frame_ref: String,
    pub mask_ref: String,
}

impl SceneDescription {
    /// A description typed in by hand rather than fetched.
    pub fn manual(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            provider_id: "manual".into(),
            frame_ref: String::new(),
        }
    }
}

impl RegionalDescription {
    pub fn manual(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            provider_id: "manual".into(),
            frame_ref: String::new(),
            mask_ref: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryOrigin {
    Llm,
    Fallback,
    Manual,
}

/// Nonempty and at most [`MAX_QUERY_CHARS`] characters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextQuery {
    pub text: String,
    pub origin: QueryOrigin,
}

impl TextQuery {
    pub fn new(text: &str, origin: QueryOrigin) -> Result<Self, QueryError> {
        let text = condense(text);
        if text.is_empty() {
            return Err(QueryError::EmptyDescription);
        }
        Ok(Self { text, origin })
    }

    pub fn manual(text: &str) -> Result<Self, QueryError> {
        Self::new(text, QueryOrigin::Manual)
    }
}

/// Collapses whitespace and, past [`MAX_QUERY_CHARS`], cuts at the last
/// sentence end that fits (or the last word break, or hard at the limit).
pub fn condense(text: &str) -> String {
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let text = text.trim_matches(|c| c == '"' || c == '\'').trim().to_string();
    if text.chars().count() <= MAX_QUERY_CHARS {
        return text;
    }
    let head: String = text.chars().take(MAX_QUERY_CHARS).collect();
    let cut = head
        .rfind(['.', '!', '?'])
        .map(|i| i + 1)
        .or_else(|| head.rfind(' '))
        .unwrap_or(head.len());
    let out = head[..cut].trim_end().to_string();
    log::warn!(
        "query of {} characters truncated to {}",
        text.chars().count(),
        out.chars().count()
    );
    out
}
