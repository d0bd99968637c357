use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Provenance, ProviderError, RenderProvider, RenderedImage, StylizeRequest, TextureRequest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpProviderConfig {
    /// Base URL; `/v1/stylize` and `/v1/texture` are appended.
    pub base_url: String,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8090".into(),
            timeout_secs: 120.0,
            max_in_flight: 2,
        }
    }
}

/// Client for the provider wire format: JSON requests and responses with
/// base64 PNG images.
pub struct HttpProvider {
    base_url: String,
    agent: ureq::Agent,
    free: Mutex<usize>,
    cv: Condvar,
}

#[derive(Deserialize)]
struct WireImage {
    image_png_b64: String,
    model_id: String,
}

#[derive(Deserialize)]
struct WireError {
    code: String,
    message: String,
}

impl HttpProvider {
    pub fn new(cfg: &HttpProviderConfig) -> Result<Self, ProviderError> {
        if !(cfg.timeout_secs > 0.0) {
            return Err(ProviderError::InvalidRequest("timeout must be positive".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            base_url: cfg.base_url.trim_end_matches('/').to_string(),
            agent,
            free: Mutex::new(cfg.max_in_flight.max(1)),
            cv: Condvar::new(),
        })
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<WireImage, ProviderError> {
        {
            let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
            while *free == 0 {
                free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
            }
            *free -= 1;
        }
        let result = self.post_inner(path, body);
        *self.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.cv.notify_one();
        result
    }

    fn post_inner(&self, path: &str, body: serde_json::Value) -> Result<WireImage, ProviderError> {
        let url = format!("{}{path}", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(&body)
            .map_err(|e| ProviderError::Unavailable(format!("{url}: {e}")))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Unavailable(format!("reading response from {url}: {e}")))?;
        if !status.is_success() {
            let (code, message) = match serde_json::from_str::<WireError>(&text) {
                Ok(e) => (e.code, e.message),
                Err(_) => ("unknown".to_string(), text),
            };
            return Err(ProviderError::Rejected {
                status: status.as_u16(),
                code,
                message,
            });
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::Image(format!("malformed response: {e}")))
    }

    fn decode(
        &self,
        wire: WireImage,
        w: u32,
        h: u32,
        seed: u64,
        digest: String,
        condition: Option<super::Condition>,
    ) -> Result<RenderedImage, ProviderError> {
        let bytes = B64
            .decode(wire.image_png_b64.as_bytes())
            .map_err(|e| ProviderError::Image(format!("bad base64: {e}")))?;
        let img = RenderedImage::from_png(
            &bytes,
            Provenance {
                provider_id: self.id(),
                model_id: wire.model_id,
                seed,
                request_digest: digest,
                condition,
            },
        )?;
        if (img.width, img.height) != (w, h) {
            return Err(ProviderError::Image(format!(
                "provider returned {}x{} for a {w}x{h} request",
                img.width, img.height
            )));
        }
        Ok(img)
    }
}

fn gray_png_b64(img: &crate::raster::RasterImage) -> Result<String, ProviderError> {
    Ok(B64.encode(img.to_png()?))
}

impl RenderProvider for HttpProvider {
    fn id(&self) -> String {
        format!("http:{}", self.base_url)
    }

    fn stylize(&self, req: &StylizeRequest) -> Result<RenderedImage, ProviderError> {
        req.validate()?;
        let body = serde_json::json!({
            "image_png_b64": gray_png_b64(&req.image)?,
            "prompt": req.prompt,
            "strength": req.strength,
            "seed": req.seed,
        });
        let wire = self.post("/v1/stylize", body)?;
        self.decode(wire, req.image.width, req.image.height, req.seed, req.digest(), None)
    }

    fn texture(&self, req: &TextureRequest) -> Result<RenderedImage, ProviderError> {
        req.validate()?;
        let mut body = serde_json::json!({
            "image_png_b64": gray_png_b64(&req.image)?,
            "prompt": req.prompt,
            "condition": req.condition.as_str(),
            "seed": req.seed,
        });
        if let Some(o) = &req.original_font_image {
            body["original_font_png_b64"] = serde_json::Value::String(gray_png_b64(o)?);
        }
        let wire = self.post("/v1/texture", body)?;
        self.decode(
            wire,
            req.image.width,
            req.image.height,
            req.seed,
            req.digest(),
            Some(req.condition),
        )
    }
}
