use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{rule_based_parse, ConcretizationResult, LlmError, PromptKind, APPENDIX_FIXTURES};

/// One chat call. `user` already carries any retry feedback.
#[derive(Clone, Copy, Debug)]
pub struct ChatRequest<'a> {
    pub kind: PromptKind,
    /// Concept (or raw request text for input parsing), trimmed.
    pub subject: &'a str,
    pub system: &'a str,
    pub user: &'a str,
    /// 0 for the first try.
    pub attempt: u32,
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    #[default]
    Mock,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Chat-completion URL for `http`.
    pub endpoint: Option<String>,
    /// JSON fixture file for `replay`; the bundled published exchanges
    /// are used when unset.
    pub fixture: Option<PathBuf>,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub temperature: f64,
    pub max_in_flight: usize,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            fixture: None,
            model: "gpt-3.5-turbo".into(),
            timeout_secs: 60.0,
            max_retries: 2,
            temperature: 0.7,
            max_in_flight: 4,
            api_key_env: "WORDART_LLM_API_KEY".into(),
        }
    }
}

pub fn build_backend(cfg: &BackendConfig) -> Result<Box<dyn ChatBackend>, LlmError> {
    Ok(match cfg.kind {
        BackendKind::Mock => Box::new(MockBackend),
        BackendKind::Replay => match &cfg.fixture {
            Some(path) => Box::new(ReplayBackend::from_file(path)?),
            None => Box::new(ReplayBackend::appendix()),
        },
        BackendKind::Http => Box::new(HttpBackend::new(cfg)?),
    })
}

/// Deterministic offline backend: a pure function of (kind, subject).
#[derive(Clone, Copy, Debug, Default)]
pub struct MockBackend;

const MOCK_TABLE: &[(&str, &str, &str, &str)] = &[
    ("cat", "Hellokitty", "cute, happiness", "famous for the cartoon"),
    ("spring", "Rainbow", "colorful, natural", "appears after spring showers"),
    ("food", "Pizza", "delicious, versatile", "loved around the world"),
    ("jewelry", "Gold", "shiny, precious, warm", "the classic jewelry metal"),
    ("ocean", "Wave", "blue, flowing", "the defining motion of the sea"),
    (
        "winter",
        "Snowflake",
        "white, crystalline",
        "the emblem of cold weather",
    ),
];

const MOCK_DESCRIPTORS: &[&str] = &[
    "bold, vivid",
    "soft, elegant",
    "playful, bright",
    "organic, textured",
    "sleek, modern",
    "warm, rustic",
];

impl MockBackend {
    pub fn concretize(kind: PromptKind, concept: &str) -> ConcretizationResult {
        let key = concept.to_lowercase();
        if let Some(&(_, name, desc, reason)) = MOCK_TABLE.iter().find(|e| e.0 == key) {
            return ConcretizationResult {
                object_name: name.into(),
                description: desc.into(),
                reason: reason.into(),
            };
        }
        let digest = Sha256::digest(format!("{kind:?}/{key}").as_bytes());
        let desc = MOCK_DESCRIPTORS[digest[0] as usize % MOCK_DESCRIPTORS.len()];
        let mut name: Vec<char> = concept.chars().collect();
        if let Some(c) = name.first_mut() {
            *c = c.to_uppercase().next().unwrap_or(*c);
        }
        ConcretizationResult {
            object_name: name.into_iter().collect(),
            description: desc.into(),
            reason: format!("a direct rendering of {concept}"),
        }
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> String {
        "mock".into()
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        Ok(match req.kind {
            PromptKind::InputParsing => {
                let (characters, concept, domain) = rule_based_parse(req.subject);
                serde_json::json!({"characters": characters, "concept": concept, "domain": domain}).to_string()
            }
            kind => Self::concretize(kind, req.subject).to_json(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayFixture {
    pub prompt: String,
    pub response: String,
}

/// Answers from recorded `{prompt, response}` pairs, matched on the user
/// message (retry feedback appended to a recorded prompt still matches).
#[derive(Clone, Debug)]
pub struct ReplayBackend {
    pub fixtures: Vec<ReplayFixture>,
}

impl ReplayBackend {
    pub fn appendix() -> Self {
        Self {
            fixtures: serde_json::from_str(APPENDIX_FIXTURES).expect("bundled fixtures are valid"),
        }
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("reading fixture {}: {e}", path.display())))?;
        let fixtures = serde_json::from_str(&text).map_err(|e| {
            LlmError::Config(format!(
                "fixture {} is not a {{prompt, response}} list: {e}",
                path.display()
            ))
        })?;
        Ok(Self { fixtures })
    }
}

impl ChatBackend for ReplayBackend {
    fn id(&self) -> String {
        "replay".into()
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        self.fixtures
            .iter()
            .find(|f| req.user == f.prompt || req.user.starts_with(&format!("{}\n\n", f.prompt)))
            .map(|f| f.response.clone())
            .ok_or_else(|| LlmError::FixtureMissing(req.user.to_string()))
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Chat-completion client: system + user messages, bearer token from the
/// configured environment variable.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    agent: ureq::Agent,
    slots: Slots,
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, LlmError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| LlmError::Config("http backend needs an endpoint".into()))?;
        if !(cfg.timeout_secs > 0.0) {
            return Err(LlmError::Config("timeout must be positive".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            endpoint,
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            api_key: std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()),
            agent,
            slots: Slots {
                free: Mutex::new(cfg.max_in_flight.max(1)),
                cv: Condvar::new(),
            },
        })
    }
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let _slot = self.slots.acquire();
        let body = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
        });
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(&body)
            .map_err(|e| LlmError::BackendUnavailable(format!("{}: {e}", self.endpoint)))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::BackendUnavailable(format!("reading response: {e}")))?;
        if !status.is_success() {
            return Err(LlmError::BackendUnavailable(format!("status {status}: {text}")));
        }
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| LlmError::BackendUnavailable(format!("response is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| LlmError::BackendUnavailable("response has no choices[0].message.content".into()))
    }
}
