//! Prompt construction, strict JSON concretization parsing and chat
//! backends with validation-driven retries.

mod backend;
mod json;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    build_backend, BackendConfig, BackendKind, ChatBackend, ChatRequest, HttpBackend, MockBackend, ReplayBackend,
    ReplayFixture,
};
pub use json::extract_json_object;

/// Version tag of the bundled templates, recorded in run manifests.
pub const TEMPLATE_VERSION: &str = "v1";
pub const SYSTEM_PROMPT: &str = include_str!("../../templates/system_v1.txt");
pub const CONCRETIZE_TEMPLATE: &str = include_str!("../../templates/concretize_v1.txt");
pub const PARSE_INPUT_TEMPLATE: &str = include_str!("../../templates/parse_input_v1.txt");
/// Replay fixtures holding the two published concretization exchanges.
pub const APPENDIX_FIXTURES: &str = include_str!("../../templates/fixtures_appendix.json");

const CONCEPT_SLOT: &str = "{CONCEPT}";
const INPUT_SLOT: &str = "{INPUT}";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("concept is empty")]
    EmptyConcept,
    #[error("concept contains template placeholder characters: {0:?}")]
    PlaceholderInConcept(String),
    #[error("no JSON object in response")]
    NoJsonFound,
    #[error("JSON syntax error: {0}")]
    JsonSyntaxError(String),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("could not parse design request: {0}")]
    ParseFailure(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("replay fixture has no entry for prompt {0:?}")]
    FixtureMissing(String),
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("no valid response after {} attempts", .attempts.len())]
    ExhaustedRetries { attempts: Vec<String> },
}

impl LlmError {
    /// Errors that come from the response content and are worth a retry.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            LlmError::NoJsonFound | LlmError::JsonSyntaxError(_) | LlmError::SchemaError(_)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    InputParsing,
    Stylization,
    Texture,
}

/// The two chat messages behind a prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptMessages {
    pub system: String,
    pub user: String,
}

impl PromptMessages {
    /// System prompt, a blank line, then the user message.
    pub fn joined(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

fn check_subject(s: &str) -> Result<&str, LlmError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(LlmError::EmptyConcept);
    }
    if s.contains(['{', '}', '<', '>']) {
        return Err(LlmError::PlaceholderInConcept(s.to_string()));
    }
    Ok(s)
}

/// Messages for `kind`. For input parsing `subject` is the raw request.
pub fn prompt_messages(kind: PromptKind, subject: &str) -> Result<PromptMessages, LlmError> {
    let s = check_subject(subject)?;
    let user = match kind {
        PromptKind::InputParsing => PARSE_INPUT_TEMPLATE.trim_end().replace(INPUT_SLOT, s),
        PromptKind::Stylization | PromptKind::Texture => CONCRETIZE_TEMPLATE.trim_end().replace(CONCEPT_SLOT, s),
    };
    Ok(PromptMessages {
        system: SYSTEM_PROMPT.trim_end().to_string(),
        user,
    })
}

pub fn build_prompt(kind: PromptKind, concept: &str) -> Result<String, LlmError> {
    prompt_messages(kind, concept).map(|m| m.joined())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcretizationResult {
    #[serde(rename = "Object/Category Name")]
    pub object_name: String,
    pub description: String,
    pub reason: String,
}

impl ConcretizationResult {
    /// `"{object_name}, {description}"`, the text handed to render providers.
    pub fn provider_prompt(&self) -> String {
        format!("{}, {}", self.object_name, self.description)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain strings serialize")
    }
}

fn required_str(obj: &serde_json::Map<String, serde_json::Value>, key: &str) -> Result<String, LlmError> {
    match obj.get(key) {
        None => Err(LlmError::SchemaError(format!("missing key {key:?}"))),
        Some(serde_json::Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(serde_json::Value::String(_)) => Err(LlmError::SchemaError(format!("empty value for {key:?}"))),
        Some(other) => Err(LlmError::SchemaError(format!("{key:?} must be a string, got {other}"))),
    }
}

fn first_object(raw: &str) -> Result<serde_json::Map<String, serde_json::Value>, LlmError> {
    let text = extract_json_object(raw).ok_or(LlmError::NoJsonFound)?;
    match serde_json::from_str(text) {
        Ok(serde_json::Value::Object(m)) => Ok(m),
        Ok(_) => Err(LlmError::NoJsonFound),
        Err(e) => Err(LlmError::JsonSyntaxError(e.to_string())),
    }
}

/// Reads the first balanced JSON object in `raw`, ignoring any prose or
/// code fences around it.
pub fn parse_concretization(raw: &str) -> Result<ConcretizationResult, LlmError> {
    let obj = first_object(raw)?;
    Ok(ConcretizationResult {
        object_name: required_str(&obj, "Object/Category Name")?,
        description: required_str(&obj, "description")?,
        reason: required_str(&obj, "reason")?,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignRequest {
    pub raw_text: String,
    pub characters: Vec<String>,
    pub concept: String,
    pub domain: String,
}

/// Parses an input-parsing response. `characters` may be a list or a
/// single string (split into characters); an empty domain is allowed.
pub fn parse_request_response(raw: &str) -> Result<(Vec<String>, String, String), LlmError> {
    let obj = first_object(raw)?;
    let characters = match obj.get("characters") {
        None => return Err(LlmError::SchemaError("missing key \"characters\"".into())),
        Some(serde_json::Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(|s| s.trim().to_string())
                    .ok_or_else(|| LlmError::SchemaError("characters must be strings".into()))
            })
            .filter(|r| !matches!(r, Ok(s) if s.is_empty()))
            .collect::<Result<Vec<_>, _>>()?,
        Some(serde_json::Value::String(s)) => s.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        Some(other) => return Err(LlmError::SchemaError(format!("characters must be a list, got {other}"))),
    };
    let concept = required_str(&obj, "concept")?;
    let domain = match obj.get("domain") {
        None | Some(serde_json::Value::Null) => String::new(),
        Some(serde_json::Value::String(s)) => s.trim().to_string(),
        Some(other) => return Err(LlmError::SchemaError(format!("domain must be a string, got {other}"))),
    };
    Ok((characters, concept, domain))
}

/// Prompt text for a retry: the original user message plus the reason the
/// previous answer was rejected.
pub fn retry_prompt(user: &str, error: &LlmError) -> String {
    format!("{user}\n\nYour previous answer was rejected ({error}). Answer again with only the JSON object.")
}

fn with_retries<T>(
    backend: &dyn ChatBackend,
    kind: PromptKind,
    subject: &str,
    max_retries: u32,
    parse: impl Fn(&str) -> Result<T, LlmError>,
) -> Result<T, LlmError> {
    let messages = prompt_messages(kind, subject)?;
    let mut errors = Vec::new();
    let mut user = messages.user.clone();
    for attempt in 0..=max_retries {
        let raw = backend.complete(&ChatRequest {
            kind,
            subject: subject.trim(),
            system: &messages.system,
            user: &user,
            attempt,
        })?;
        match parse(&raw) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_validation() => {
                tracing::debug!(attempt, error = %e, "rejected backend response");
                user = retry_prompt(&messages.user, &e);
                errors.push(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    Err(LlmError::ExhaustedRetries { attempts: errors })
}

/// Asks the backend to concretize `concept`, re-asking up to `max_retries`
/// times when the answer fails validation.
pub fn query_concretization(
    backend: &dyn ChatBackend,
    kind: PromptKind,
    concept: &str,
    max_retries: u32,
) -> Result<ConcretizationResult, LlmError> {
    with_retries(backend, kind, concept, max_retries, parse_concretization)
}

/// Turns free text into a [`DesignRequest`]. `fallback_characters` (from the
/// job config) are used when the text does not name any.
pub fn parse_user_input(
    backend: &dyn ChatBackend,
    raw_text: &str,
    fallback_characters: &[String],
    max_retries: u32,
) -> Result<DesignRequest, LlmError> {
    if raw_text.trim().is_empty() {
        return Err(LlmError::ParseFailure("empty request".into()));
    }
    let (mut characters, concept, domain) = match with_retries(
        backend,
        PromptKind::InputParsing,
        raw_text,
        max_retries,
        parse_request_response,
    ) {
        Ok(v) => v,
        Err(LlmError::ExhaustedRetries { attempts }) => return Err(LlmError::ParseFailure(attempts.join("; "))),
        Err(e) => return Err(e),
    };
    if characters.is_empty() {
        characters = fallback_characters.to_vec();
    }
    if characters.is_empty() {
        return Err(LlmError::ParseFailure(
            "no characters named in the request or the job".into(),
        ));
    }
    Ok(DesignRequest {
        raw_text: raw_text.to_string(),
        characters,
        concept,
        domain,
    })
}

/// The offline input-parsing rule: the first CJK run (or the first quoted
/// token) gives the characters, a trailing "in X design" gives the domain,
/// and the rest, minus lead-in words such as "design with the concept of",
/// is the concept.
pub fn rule_based_parse(raw: &str) -> (Vec<String>, String, String) {
    let mut text = raw.trim().trim_end_matches(['.', '!', '?', '。']).trim().to_string();
    let mut characters = Vec::new();
    if let Some((start, run)) = first_cjk_run(&text) {
        characters = run.chars().map(String::from).collect();
        text.replace_range(start..start + run.len(), " ");
    } else if let Some((start, end)) = first_quoted(&text) {
        characters = text[start + 1..end - 1]
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect();
        text.replace_range(start..end, " ");
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut domain = String::new();
    let mut body = &words[..];
    if words.len() >= 3 && words[words.len() - 1].eq_ignore_ascii_case("design") {
        if let Some(pos) = words[..words.len() - 1]
            .iter()
            .rposition(|w| w.eq_ignore_ascii_case("in"))
        {
            if pos + 1 < words.len() - 1 {
                domain = words[pos + 1..words.len() - 1].join(" ");
                body = &words[..pos];
            }
        }
    }
    const LEAD_IN: [&str; 17] = [
        "a", "an", "the", "please", "design", "create", "make", "draw", "generate", "render", "with", "using", "for",
        "concept", "theme", "style", "of",
    ];
    let skip = body
        .iter()
        .take_while(|w| LEAD_IN.iter().any(|l| w.eq_ignore_ascii_case(l)))
        .count()
        .min(body.len().saturating_sub(1));
    (characters, body[skip..].join(" "), domain)
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2FA1F | 0x3040..=0x30FF | 0xAC00..=0xD7AF)
}

fn first_cjk_run(s: &str) -> Option<(usize, &str)> {
    let start = s.char_indices().find(|&(_, c)| is_cjk(c))?.0;
    let len = s[start..].find(|c: char| !is_cjk(c)).unwrap_or(s.len() - start);
    Some((start, &s[start..start + len]))
}

fn first_quoted(s: &str) -> Option<(usize, usize)> {
    let open = s.find('"')?;
    let close = s[open + 1..].find('"')? + open + 1;
    (close > open + 1).then_some((open, close + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_embeds_concept_in_template() {
        let p = build_prompt(PromptKind::Stylization, "spring").unwrap();
        assert!(p.starts_with(SYSTEM_PROMPT.trim_end()));
        assert!(p.ends_with("in/of spring, including in real-life, artist, and film works."));
        assert!(build_prompt(PromptKind::Texture, "food")
            .unwrap()
            .contains("in/of food"));
        assert_eq!(build_prompt(PromptKind::Stylization, " "), Err(LlmError::EmptyConcept));
        assert!(matches!(
            build_prompt(PromptKind::Texture, "{CONCEPT}"),
            Err(LlmError::PlaceholderInConcept(_))
        ));
        let inp = prompt_messages(PromptKind::InputParsing, "A cat in jewelry design").unwrap();
        assert!(inp.user.contains("\"A cat in jewelry design\""));
    }

    #[test]
    fn parses_wrapped_and_rejects_incomplete() {
        let r = parse_concretization(
            "Sure!\n```json\n{\"Object/Category Name\": \" Rainbow \", \"description\": \"colorful, natural\", \"reason\": \"r\"}\n```",
        )
        .unwrap();
        assert_eq!(r.object_name, "Rainbow");
        assert!(matches!(
            parse_concretization(r#"{"Object/Category Name": "X", "description": "y"}"#),
            Err(LlmError::SchemaError(_))
        ));
        assert!(matches!(
            parse_concretization(r#"{"Object/Category Name": "X", "description": "", "reason": "z"}"#),
            Err(LlmError::SchemaError(_))
        ));
        assert_eq!(parse_concretization("no json here"), Err(LlmError::NoJsonFound));
        assert!(matches!(
            parse_concretization(r#"{"Object/Category Name": "X" "description": "y"}"#),
            Err(LlmError::JsonSyntaxError(_))
        ));
    }

    #[test]
    fn rule_parse_of_examples() {
        let (c, concept, domain) = rule_based_parse("A cat in jewelry design");
        assert!(c.is_empty());
        assert_eq!((concept.as_str(), domain.as_str()), ("cat", "jewelry"));
        let (c, concept, domain) = rule_based_parse("字 spring in poster design.");
        assert_eq!(c, vec!["字"]);
        assert_eq!((concept.as_str(), domain.as_str()), ("spring", "poster"));
        let (c, concept, domain) = rule_based_parse("\"Hi\" the ocean");
        assert_eq!(c, vec!["H", "i"]);
        assert_eq!((concept.as_str(), domain.as_str()), ("ocean", ""));
    }
}
