//! Chat-completion client for the describe and subtract steps.
//!
//! Request body:
//!
//! ```json
//! { "model": "<model_name>", "temperature": 0,
//!   "messages": [ { "role": "user", "content": [
//!       { "type": "text", "text": "<rendered prompt>" },
//!       { "type": "image_url", "image_url": { "url": "data:image/png;base64,..." } } ] } ] }
//! ```
//!
//! The reply text is read from `choices[0].message.content`. Timeouts,
//! connection failures, HTTP 429 and 5xx are retried up to `max_retries`
//! times with doubling backoff; other statuses fail immediately.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::audit::{AuditLog, AuditRecord};
use super::templates::{TemplateStore, REGION_TEMPLATE, SCENE_TEMPLATE, SUBTRACT_TEMPLATE};
use super::transport::{HttpRequest, Transport, UreqTransport};
use super::{QueryError, QueryOrigin, RegionalDescription, SceneDescription, TextQuery};

/// Longest response body kept in an HTTP error.
const ERROR_BODY_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token; empty means no
    /// authentication header.
    pub api_key_env_var: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub prompt_template_id: String,
    pub retry_backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4o".into(),
            api_key_env_var: "OPENAI_API_KEY".into(),
            timeout_s: 30.0,
            max_retries: 2,
            prompt_template_id: String::new(),
            retry_backoff_ms: 500,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), QueryError> {
        if !(self.timeout_s > 0.0) || !self.timeout_s.is_finite() {
            return Err(QueryError::Input(format!(
                "timeout_s must be positive, got {}",
                self.timeout_s
            )));
        }
        if self.endpoint_url.is_empty() {
            return Err(QueryError::Input("endpoint_url is empty".into()));
        }
        Ok(())
    }

    fn template_or<'a>(&'a self, default: &'a str) -> &'a str {
        if self.prompt_template_id.is_empty() {
            default
        } else {
            &self.prompt_template_id
        }
    }

    /// The key, or `None` when no variable is configured.
    fn api_key(&self) -> Result<Option<String>, QueryError> {
        if self.api_key_env_var.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.api_key_env_var) {
            Ok(v) if !v.trim().is_empty() => Ok(Some(v)),
            _ => Err(QueryError::MissingApiKey(self.api_key_env_var.clone())),
        }
    }
}

struct Attachment {
    label: String,
    data_url: String,
}

fn attach(path: &Path) -> Result<Attachment, QueryError> {
    let bytes = std::fs::read(path).map_err(|e| QueryError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mime = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    };
    let encoded = base64::engine::general_purpose::STANDARD.encode(&bytes);
    Ok(Attachment {
        label: format!("{} ({mime}, {} bytes)", path.display(), bytes.len()),
        data_url: format!("data:{mime};base64,{encoded}"),
    })
}

fn truncate_body(body: &str) -> String {
    if body.chars().count() <= ERROR_BODY_LIMIT {
        body.to_string()
    } else {
        body.chars().take(ERROR_BODY_LIMIT).collect::<String>() + "..."
    }
}

fn extract_content(body: &str) -> Result<String, QueryError> {
    let value: Value = serde_json::from_str(body).map_err(|e| QueryError::Malformed(format!("not JSON: {e}")))?;
    let content = value
        .pointer("/choices/0/message/content")
        .ok_or_else(|| QueryError::Malformed("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some providers return content parts.
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        Value::Null => Ok(String::new()),
        other => Err(QueryError::Malformed(format!("unexpected content type {other}"))),
    }
}

/// A configured provider plus its transport and optional audit log.
pub struct ProviderClient {
    pub config: ProviderConfig,
    transport: Arc<dyn Transport>,
    audit: Option<Arc<AuditLog>>,
    templates: TemplateStore,
}

impl ProviderClient {
    pub fn new(config: ProviderConfig) -> Self {
        Self::with_transport(config, Arc::new(UreqTransport))
    }

    pub fn with_transport(config: ProviderConfig, transport: Arc<dyn Transport>) -> Self {
        Self {
            config,
            transport,
            audit: None,
            templates: TemplateStore::builtin(),
        }
    }

    pub fn audit_log(mut self, log: Arc<AuditLog>) -> Self {
        self.audit = Some(log);
        self
    }

    pub fn templates(mut self, store: TemplateStore) -> Self {
        self.templates = store;
        self
    }

    pub fn provider_id(&self) -> &str {
        &self.config.model_name
    }

    /// Sends one prompt with attachments and returns the reply text,
    /// retrying transient failures.
    fn complete(&self, template_id: &str, prompt: &str, attachments: &[Attachment]) -> Result<String, QueryError> {
        self.config.validate()?;
        let key = self.config.api_key()?;
        let content = if attachments.is_empty() {
            json!(prompt)
        } else {
            let mut parts = vec![json!({ "type": "text", "text": prompt })];
            parts.extend(
                attachments
                    .iter()
                    .map(|a| json!({ "type": "image_url", "image_url": { "url": a.data_url } })),
            );
            Value::Array(parts)
        };
        let body = json!({
            "model": self.config.model_name,
            "temperature": 0,
            "messages": [ { "role": "user", "content": content } ],
        });
        let mut headers = Vec::new();
        if let Some(key) = key {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        let request = HttpRequest {
            url: self.config.endpoint_url.clone(),
            headers,
            body: body.to_string(),
            timeout: Duration::from_secs_f64(self.config.timeout_s),
        };

        let attempts = self.config.max_retries + 1;
        let mut backoff = Duration::from_millis(self.config.retry_backoff_ms);
        for attempt in 1..=attempts {
            let started = Instant::now();
            let result = self.transport.post(&request);
            let latency_ms = started.elapsed().as_millis();
            let last = attempt == attempts;
            let (status, response, outcome, verdict) = match result {
                Ok(r) if (200..300).contains(&r.status) => {
                    let v = extract_content(&r.body);
                    let outcome = if v.is_ok() { "ok" } else { "malformed" };
                    (Some(r.status), Some(r.body), outcome, Some(v))
                }
                Ok(r) if r.status == 429 || r.status >= 500 => {
                    let err = QueryError::Http {
                        status: r.status,
                        body: truncate_body(&r.body),
                    };
                    let verdict = last.then_some(Err(err));
                    (
                        Some(r.status),
                        Some(r.body),
                        if last { "error" } else { "retry" },
                        verdict,
                    )
                }
                Ok(r) => {
                    let err = QueryError::Http {
                        status: r.status,
                        body: truncate_body(&r.body),
                    };
                    (Some(r.status), Some(r.body), "error", Some(Err(err)))
                }
                Err(e) if e.is_retryable() => {
                    let verdict = last.then(|| {
                        Err(QueryError::Timeout {
                            attempts,
                            detail: e.to_string(),
                        })
                    });
                    (None, Some(e.to_string()), if last { "error" } else { "retry" }, verdict)
                }
                Err(e) => (
                    None,
                    Some(e.to_string()),
                    "error",
                    Some(Err(QueryError::Transport(e.to_string()))),
                ),
            };
            if let Some(log) = &self.audit {
                log.append(&AuditRecord {
                    timestamp_ms: AuditRecord::now_ms(),
                    provider_id: self.provider_id().to_string(),
                    endpoint: self.config.endpoint_url.clone(),
                    template_id: template_id.to_string(),
                    attempt,
                    prompt: prompt.to_string(),
                    attachments: attachments.iter().map(|a| a.label.clone()).collect(),
                    status,
                    outcome: outcome.to_string(),
                    latency_ms,
                    response,
                })?;
            }
            if let Some(v) = verdict {
                return v;
            }
            log::warn!("provider attempt {attempt}/{attempts} failed ({outcome}); retrying in {backoff:?}");
            std::thread::sleep(backoff);
            backoff *= 2;
        }
        unreachable!("the final attempt always yields a verdict")
    }

    fn describe(&self, default_template: &str, files: &[&Path]) -> Result<String, QueryError> {
        let template = self.templates.get(self.config.template_or(default_template))?;
        let prompt = template.render(&[])?;
        let attachments = files.iter().map(|p| attach(p)).collect::<Result<Vec<_>, _>>()?;
        let text = super::condense(&self.complete(&template.id, &prompt, &attachments)?);
        if text.is_empty() {
            return Err(QueryError::EmptyDescription);
        }
        Ok(text)
    }

    /// Whole-frame description `d_v`.
    pub fn global_describe(&self, frame: &Path) -> Result<SceneDescription, QueryError> {
        Ok(SceneDescription {
            text: self.describe(SCENE_TEMPLATE, &[frame])?,
            provider_id: self.provider_id().to_string(),
            frame_ref: frame.display().to_string(),
        })
    }

    /// Masked-region description `d_a`; the mask travels as a second image.
    pub fn regional_describe(&self, frame: &Path, mask: &Path) -> Result<RegionalDescription, QueryError> {
        Ok(RegionalDescription {
            text: self.describe(REGION_TEMPLATE, &[frame, mask])?,
            provider_id: self.provider_id().to_string(),
            frame_ref: frame.display().to_string(),
            mask_ref: mask.display().to_string(),
        })
    }

    /// The subtraction prompt for a description pair.
    pub fn subtract_prompt(&self, d_v: &SceneDescription, d_a: &RegionalDescription) -> Result<String, QueryError> {
        let template = self.templates.get(self.config.template_or(SUBTRACT_TEMPLATE))?;
        template.render(&[("scene", &d_v.text), ("region", &d_a.text)])
    }

    /// Asks the language model for the sounds left after removing `d_a`.
    pub fn textual_subtract(&self, d_v: &SceneDescription, d_a: &RegionalDescription) -> Result<TextQuery, QueryError> {
        if d_v.text.trim().is_empty() || d_a.text.trim().is_empty() {
            return Err(QueryError::EmptyDescription);
        }
        let prompt = self.subtract_prompt(d_v, d_a)?;
        let template_id = self.config.template_or(SUBTRACT_TEMPLATE).to_string();
        let reply = self.complete(&template_id, &prompt, &[])?;
        TextQuery::new(&reply, QueryOrigin::Llm)
    }
}
