//! Run settings assembled from flags, environment and an optional config
//! file. File values win over flags.
//!
//! The file is TOML, or JSON when its name ends in `.json`:
//!
//! ```toml
//! font = "fonts/NotoSansSC.ttf"
//! out = "runs"
//!
//! [input]
//! text = "字"
//! concept = "cat"
//! domain = "jewelry"
//!
//! [job]                 # any JobConfig field
//! k = 2
//! seed = 7
//! threshold = { kind = "fixed", value = "-inf" }
//!
//! [job.optimization]
//! iterations = 200
//!
//! [services.llm]        # BackendConfig
//! kind = "http"
//! endpoint = "https://llm.example/v1/chat/completions"
//!
//! [services]
//! provider = "http"
//! http_provider = { base_url = "http://127.0.0.1:8090" }
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use wordart_core::pipeline::{JobConfig, ServicesConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSettings {
    pub text: Option<String>,
    pub prompt: Option<String>,
    pub concept: Option<String>,
    pub domain: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub font: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(default)]
    pub input: InputSettings,
    #[serde(default)]
    pub job: JobConfig,
    #[serde(default)]
    pub services: ServicesConfig,
}

/// Recursively overlays `top` on `base`; objects merge key by key, every
/// other value replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn read_file(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let v: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    if !v.is_object() {
        bail!("{}: top level must be a table", path.display());
    }
    Ok(v)
}

/// `flags` overlaid with the config file, if any.
pub fn resolve(flags: &RunSettings, file: Option<&Path>) -> anyhow::Result<RunSettings> {
    let mut v = serde_json::to_value(flags)?;
    if let Some(path) = file {
        merge(&mut v, read_file(path)?);
    }
    let s: RunSettings = serde_json::from_value(v).context("invalid settings")?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_nested_fields_only() {
        let mut base = serde_json::json!({"job": {"k": 1, "seed": 3, "optimization": {"iterations": 10, "lr": 1}}});
        merge(
            &mut base,
            serde_json::json!({"job": {"k": 2, "optimization": {"iterations": 5}}}),
        );
        assert_eq!(
            base,
            serde_json::json!({"job": {"k": 2, "seed": 3, "optimization": {"iterations": 5, "lr": 1}}})
        );
    }
}
