//! Client for an external multimodal model used as intent parser and critic.
//!
//! Requests are JSON `POST`s of `{model, task, prompt, instruction, image, context}`
//! and replies must be a single strict JSON object. Malformed replies are retried
//! with a repair instruction; replies that violate domain invariants are surfaced
//! as [`GatewayError::Validation`].

mod config;
mod transport;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use anchorview::critic::{Critic, CriticError, CritiqueScore, EvaluationContext};
use anchorview::geometry::rad;
use anchorview::intent::{IntentError, IntentParser, ParsedIntent};
use anchorview::render::{encode_ppm, Image};
use anchorview::scene::StructuredInputs;
use anchorview::solver::{ConstraintVector, SolverError};
use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

pub use config::{GatewayConfig, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL, ENV_PROMPT_DIR};
pub use transport::{HttpTransport, Transport, TransportError};

const INTENT_TEMPLATE: &str = include_str!("../prompts/intent.txt");
const SCORE_TEMPLATE: &str = include_str!("../prompts/score.txt");
const REPAIR: &str = "Your previous reply could not be used: {{problem}}. \
Reply again with exactly one JSON object matching the requested fields and nothing else.";

/// File name of the request/response log inside a run directory.
pub const LOG_FILE: &str = "llm_log.jsonl";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("GatewayTimeout: no reply after {attempts} attempts ({last})")]
    Timeout { attempts: u32, last: String },
    #[error("MalformedReply after {attempts} attempts: {problem}")]
    MalformedReply { attempts: u32, problem: String, reply: String },
    #[error("ValidationError: `{field}` {message}")]
    Validation { field: String, message: String },
    #[error("invalid gateway config: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Log {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GatewayError {
    pub fn reason(&self) -> &'static str {
        match self {
            GatewayError::Timeout { .. } => "GatewayTimeout",
            GatewayError::MalformedReply { .. } => "MalformedReply",
            GatewayError::Validation { .. } => "ValidationError",
            GatewayError::Config(_) => "GatewayConfig",
            GatewayError::Log { .. } => "GatewayLog",
        }
    }
}

/// Prompt templates with `{{name}}` placeholders.
#[derive(Debug, Clone)]
pub struct Prompts {
    pub intent: String,
    pub score: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self { intent: INTENT_TEMPLATE.to_string(), score: SCORE_TEMPLATE.to_string() }
    }
}

impl Prompts {
    /// Reads `intent.txt` and `score.txt` from `dir`, keeping the built-in text
    /// for any file that is missing.
    pub fn load(dir: &Path) -> Self {
        let read = |name: &str, fallback: &str| std::fs::read_to_string(dir.join(name)).unwrap_or_else(|_| fallback.to_string());
        Self { intent: read("intent.txt", INTENT_TEMPLATE), score: read("score.txt", SCORE_TEMPLATE) }
    }
}

fn fill(template: &str, vars: &[(&str, String)]) -> String {
    vars.iter().fold(template.to_string(), |t, (k, v)| t.replace(&format!("{{{{{k}}}}}"), v))
}

/// Blocking gateway; `&self` methods may be called from several threads.
pub struct Gateway<T: Transport> {
    cfg: GatewayConfig,
    transport: T,
    prompts: Prompts,
    log: Option<(PathBuf, Mutex<File>)>,
}

impl Gateway<HttpTransport> {
    pub fn http(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        let transport = HttpTransport::new(cfg.timeout());
        Self::new(cfg, transport)
    }
}

impl<T: Transport> Gateway<T> {
    pub fn new(cfg: GatewayConfig, transport: T) -> Result<Self, GatewayError> {
        cfg.validate().map_err(GatewayError::Config)?;
        let prompts = cfg.prompt_dir.as_deref().map(Prompts::load).unwrap_or_default();
        Ok(Self { cfg, transport, prompts, log: None })
    }

    pub fn with_prompts(mut self, prompts: Prompts) -> Self {
        self.prompts = prompts;
        self
    }

    /// Appends every exchange to `<dir>/llm_log.jsonl`.
    pub fn with_log_dir(mut self, dir: &Path) -> Result<Self, GatewayError> {
        let path = dir.join(LOG_FILE);
        let file = std::fs::create_dir_all(dir)
            .and_then(|_| OpenOptions::new().create(true).append(true).open(&path))
            .map_err(|source| GatewayError::Log { path: path.display().to_string(), source })?;
        self.log = Some((path, Mutex::new(file)));
        Ok(self)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    fn log(&self, task: &str, attempt: u32, request: &Value, outcome: Result<&str, &str>) {
        let Some((_, file)) = &self.log else { return };
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let (response, error) = match outcome {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e)),
        };
        let entry = json!({ "timestamp": ts, "task": task, "attempt": attempt, "request": request, "response": response, "error": error });
        if let Ok(mut f) = file.lock() {
            let _ = writeln!(f, "{entry}");
        }
    }

    /// Sends a prompt and returns the first reply that `accept` turns into a
    /// value. Transport failures and malformed replies are retried.
    fn exchange<R>(
        &self,
        task: &str,
        prompt: String,
        instruction: &str,
        image: &Image,
        context: Value,
        accept: impl Fn(&Value) -> Result<R, Reject>,
    ) -> Result<R, GatewayError> {
        let image_b64 = base64::engine::general_purpose::STANDARD.encode(encode_ppm(image));
        let mut request = json!({
            "model": self.cfg.model,
            "task": task,
            "prompt": prompt,
            "instruction": instruction,
            "image": { "format": "ppm", "data": image_b64 },
            "context": context,
        });
        let attempts = self.cfg.max_retries + 1;
        let mut last_transport = None;
        let mut last_malformed: Option<(String, String)> = None;
        for attempt in 1..=attempts {
            if let Some((problem, _)) = &last_malformed {
                request["prompt"] = Value::String(format!("{prompt}\n\n{}", fill(REPAIR, &[("problem", problem.clone())])));
            }
            let reply = match self.transport.post(&self.cfg.endpoint, &request, self.cfg.api_key.as_deref()) {
                Ok(r) => r,
                Err(e) => {
                    self.log(task, attempt, &request, Err(&e.to_string()));
                    last_transport = Some(e.to_string());
                    continue;
                }
            };
            self.log(task, attempt, &request, Ok(&reply));
            let parsed = serde_json::from_str::<Value>(reply.trim())
                .map_err(|e| Reject::Malformed(format!("not valid JSON ({e})")))
                .and_then(|v| accept(&v));
            match parsed {
                Ok(r) => return Ok(r),
                Err(Reject::Malformed(problem)) => last_malformed = Some((problem, reply)),
                Err(Reject::Invalid { field, message }) => return Err(GatewayError::Validation { field, message }),
            }
        }
        match (last_malformed, last_transport) {
            (Some((problem, reply)), _) => Err(GatewayError::MalformedReply { attempts, problem, reply }),
            (None, last) => Err(GatewayError::Timeout { attempts, last: last.unwrap_or_default() }),
        }
    }

    /// Asks the model for the anchor and constraint vector.
    pub fn llm_parse_intent(&self, instruction: &str, image: &Image, z: &StructuredInputs) -> Result<ParsedIntent, GatewayError> {
        let k = z.intrinsics;
        let structured = serde_json::to_string_pretty(&z.objects).unwrap_or_default();
        let prompt = fill(
            &self.prompts.intent,
            &[
                ("instruction", instruction.to_string()),
                ("structured", structured),
                ("width", k.width.to_string()),
                ("height", k.height.to_string()),
                ("cx", k.cx.to_string()),
                ("cy", k.cy.to_string()),
            ],
        );
        let context = json!({ "structured_inputs": z });
        self.exchange("intent", prompt, instruction, image, context, |v| {
            let reply: IntentReply = strict(v)?;
            if z.object(&reply.anchor_id).is_none() {
                return Err(Reject::Invalid {
                    field: "anchor_id".into(),
                    message: format!("`{}` is not a detected object", reply.anchor_id),
                });
            }
            let g = ConstraintVector::new(reply.u_star, reply.v_star, reply.s, rad(reply.theta_deg), rad(reply.phi_deg), &k)
                .map_err(|e| match e {
                    SolverError::InvalidConstraint { field, message } => Reject::Invalid { field: field.into(), message },
                    other => Reject::Invalid { field: "g".into(), message: other.to_string() },
                })?;
            Ok(ParsedIntent { g, anchor_id: reply.anchor_id, rationale: reply.rationale })
        })
    }

    /// Asks the model to score a view; `prior_rationale` is forwarded verbatim.
    pub fn llm_score(&self, image: &Image, instruction: &str, prior_rationale: &str) -> Result<CritiqueScore, GatewayError> {
        let prompt = fill(
            &self.prompts.score,
            &[("instruction", instruction.to_string()), ("prior_rationale", prior_rationale.to_string())],
        );
        let context = json!({ "prior_rationale": prior_rationale });
        self.exchange("score", prompt, instruction, image, context, |v| {
            let reply: ScoreReply = strict(v)?;
            CritiqueScore::new(reply.score, reply.rationale)
                .map_err(|_| Reject::Malformed(format!("score {} outside [1, 5]", reply.score)))
        })
    }
}

enum Reject {
    Malformed(String),
    Invalid { field: String, message: String },
}

fn strict<R: for<'de> Deserialize<'de>>(v: &Value) -> Result<R, Reject> {
    R::deserialize(v).map_err(|e| Reject::Malformed(e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IntentReply {
    anchor_id: String,
    u_star: f64,
    v_star: f64,
    s: f64,
    theta_deg: f64,
    phi_deg: f64,
    #[serde(default)]
    rationale: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreReply {
    score: f64,
    #[serde(default)]
    rationale: String,
}

/// Critic backed by the gateway.
pub struct LlmCritic<T: Transport> {
    gateway: Gateway<T>,
}

impl<T: Transport> LlmCritic<T> {
    pub fn new(gateway: Gateway<T>) -> Self {
        Self { gateway }
    }
}

impl<T: Transport> Critic for LlmCritic<T> {
    fn score(&mut self, image: &Image, ctx: &EvaluationContext<'_>, prior_rationale: &str) -> Result<CritiqueScore, CriticError> {
        self.gateway
            .llm_score(image, ctx.instruction, prior_rationale)
            .map_err(|e| CriticError::External(e.to_string()))
    }
}

/// Intent parser backed by the gateway.
pub struct LlmIntentParser<T: Transport> {
    gateway: Gateway<T>,
}

impl<T: Transport> LlmIntentParser<T> {
    pub fn new(gateway: Gateway<T>) -> Self {
        Self { gateway }
    }
}

impl<T: Transport> IntentParser for LlmIntentParser<T> {
    fn parse(&mut self, instruction: &str, image: &Image, z: &StructuredInputs) -> Result<ParsedIntent, IntentError> {
        self.gateway.llm_parse_intent(instruction, image, z).map_err(|e| IntentError::External(e.to_string()))
    }
}
