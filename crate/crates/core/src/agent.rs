//! Shared context for the agent roles: which model plays which role, how
//! wide to fan out, and the parse-with-repair call pattern.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatRequest, Gateway, GatewayError};
use crate::par::{self, ExecMode};
use crate::prompts::{ParseError, RenderError, TemplateName, REPAIR_SUFFIX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Discovery,
    Categorize,
    Synthesize,
    Answer,
    Judge,
}

/// Model id per role. Query generation runs on the judge model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleModels {
    pub discovery: String,
    pub categorize: String,
    pub synthesize: String,
    pub answer: String,
    pub judge: String,
}

impl Default for RoleModels {
    fn default() -> Self {
        Self {
            discovery: "discovery-model".into(),
            categorize: "categorize-model".into(),
            synthesize: "synthesize-model".into(),
            answer: "answer-model".into(),
            judge: "judge-model".into(),
        }
    }
}

impl RoleModels {
    pub fn for_role(&self, role: Role) -> &str {
        match role {
            Role::Discovery => &self.discovery,
            Role::Categorize => &self.categorize,
            Role::Synthesize => &self.synthesize,
            Role::Answer => &self.answer,
            Role::Judge => &self.judge,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("unparseable {template} response after repair retry: {error}")]
    Parse { template: TemplateName, error: ParseError },
    #[error("empty response from {0}")]
    EmptyResponse(TemplateName),
}

/// Everything an agent needs to make model calls.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub gateway: Arc<Gateway>,
    pub models: RoleModels,
    pub max_parallel: usize,
    pub exec: ExecMode,
    /// Upper bound on serialized merge input before pairwise merging kicks in.
    pub prompt_budget_chars: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub cacheable: bool,
}

impl AgentContext {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self {
            gateway,
            models: RoleModels::default(),
            max_parallel: 8,
            exec: ExecMode::Parallel,
            prompt_budget_chars: 60_000,
            temperature: 0.0,
            max_output_tokens: 4096,
            cacheable: true,
        }
    }

    pub fn with_max_parallel(mut self, n: usize) -> Self {
        self.max_parallel = n.max(1);
        self
    }

    pub fn with_exec(mut self, exec: ExecMode) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_prompt_budget(mut self, chars: usize) -> Self {
        self.prompt_budget_chars = chars;
        self
    }

    pub fn request(&self, role: Role, template: TemplateName, user_text: String) -> ChatRequest {
        let mut req = ChatRequest::new(self.models.for_role(role), user_text)
            .with_temperature(self.temperature)
            .with_max_output_tokens(self.max_output_tokens)
            .with_tag(template.as_str());
        req.cacheable = self.cacheable;
        req
    }

    /// One call, raw text back.
    pub fn call_text(&self, role: Role, template: TemplateName, prompt: String) -> Result<String, AgentError> {
        let req = self.request(role, template, prompt);
        Ok(self.gateway.complete(&req)?.text)
    }

    /// One call parsed by `parse`; on parse failure, a single retry with the
    /// repair instruction appended.
    pub fn call_parsed<T>(
        &self,
        role: Role,
        template: TemplateName,
        prompt: String,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<T, AgentError> {
        let first = self.call_text(role, template, prompt.clone())?;
        match parse(&first) {
            Ok(v) => Ok(v),
            Err(e) => {
                tracing::warn!("{template} response did not parse ({e}); retrying with repair instruction");
                let repaired = format!("{prompt}\n\n{REPAIR_SUFFIX}");
                let second = self.call_text(role, template, repaired)?;
                parse(&second).map_err(|error| AgentError::Parse { template, error })
            }
        }
    }

    /// Bounded fan-out using this context's parallelism.
    pub fn fan_out<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        par::map_bounded_with(self.exec, items, self.max_parallel, f)
    }
}
