//! Blocking HTTP client for remote model servers.

use std::thread;
use std::time::Duration;

use super::wire::{self, codes, BoxesResponse, ErrorResponse, ImageResponse, MaskResponse, Request, TextResponse};
use super::{BackendEndpointConfig, BackendError, BackendKind, ConfigError, ImageModel, LlmBackend, Segmenter};
use crate::image::{ImageBuffer, RasterMask};
use crate::layout::Layout;

const MAX_BACKOFF: Duration = Duration::from_secs(10);
const MAX_RETRY_AFTER: Duration = Duration::from_secs(60);

/// Client bound to one backend kind and endpoint.
pub struct HttpBackend {
    kind: BackendKind,
    config: BackendEndpointConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("kind", &self.kind)
            .field("base_url", &self.config.base_url)
            .finish()
    }
}

enum Attempt {
    Done(String),
    Retry(BackendError, Option<Duration>),
    Fail(BackendError),
}

impl HttpBackend {
    pub fn new(kind: BackendKind, config: BackendEndpointConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend { kind, config, agent })
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    fn url(&self) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), self.kind.endpoint())
    }

    fn protocol(&self, message: impl Into<String>) -> BackendError {
        BackendError::Protocol {
            kind: self.kind,
            message: message.into(),
        }
    }

    fn attempt(&self, body: &str) -> Attempt {
        let mut req = self.agent.post(&self.url()).header("content-type", "application/json");
        if let Some(token) = &self.config.auth_token {
            req = req.header("authorization", format!("Bearer {token}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(BackendError::Timeout { kind: self.kind }, None),
            Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => {
                return Attempt::Retry(BackendError::Timeout { kind: self.kind }, None)
            }
            Err(e) => {
                return Attempt::Retry(
                    BackendError::Transport {
                        kind: self.kind,
                        message: e.to_string(),
                    },
                    None,
                )
            }
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(|s| Duration::from_secs_f64(s).min(MAX_RETRY_AFTER));
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Attempt::Retry(BackendError::Timeout { kind: self.kind }, None),
            Err(e) => return Attempt::Fail(self.protocol(format!("unreadable body: {e}"))),
        };
        if (200..300).contains(&status) {
            return Attempt::Done(text);
        }
        if let Ok(err) = wire::decode::<ErrorResponse>(&text) {
            match err.code.as_str() {
                codes::ROI_NOT_FOUND => return Attempt::Fail(BackendError::RoiNotFound(err.error)),
                codes::MOCK_MISS => return Attempt::Fail(BackendError::MockMiss { hash: err.error }),
                _ => {}
            }
        }
        let error = BackendError::Status {
            kind: self.kind,
            status,
            body: text,
        };
        if status == 429 || status >= 500 {
            Attempt::Retry(error, retry_after)
        } else {
            Attempt::Fail(error)
        }
    }

    /// POST with retries on transport failures, timeouts, 429 and 5xx.
    fn post(&self, request: &Request) -> Result<String, BackendError> {
        let body = wire::encode(request);
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e, retry_after) => {
                    if attempt >= self.config.retries {
                        return Err(e);
                    }
                    let wait = retry_after.unwrap_or(delay);
                    log::debug!("{} request failed ({e}); retrying in {wait:?}", self.kind);
                    thread::sleep(wait);
                    delay = (delay * 2).min(MAX_BACKOFF);
                    attempt += 1;
                }
            }
        }
    }

    fn image_request(
        &self,
        image: &ImageBuffer,
        mask: Option<&RasterMask>,
        prompt: &str,
    ) -> Result<Request, BackendError> {
        let enc = |e: crate::image::ImageError| self.protocol(e.to_string());
        Ok(Request {
            image: Some(wire::image_to_b64(image).map_err(enc)?),
            mask: mask.map(wire::mask_to_b64).transpose().map_err(enc)?,
            prompt: prompt.to_string(),
        })
    }
}

impl ImageModel for HttpBackend {
    fn run(&self, image: &ImageBuffer, mask: Option<&RasterMask>, prompt: &str) -> Result<ImageBuffer, BackendError> {
        let text = self.post(&self.image_request(image, mask, prompt)?)?;
        let resp: ImageResponse = wire::decode(&text).map_err(|e| self.protocol(e))?;
        wire::image_from_b64(&resp.image).map_err(|e| self.protocol(e.to_string()))
    }
}

impl Segmenter for HttpBackend {
    fn segment(&self, image: &ImageBuffer, text_roi: &str) -> Result<RasterMask, BackendError> {
        let text = self.post(&self.image_request(image, None, text_roi)?)?;
        let resp: MaskResponse = wire::decode(&text).map_err(|e| self.protocol(e))?;
        wire::mask_from_b64(&resp.mask).map_err(|e| self.protocol(e.to_string()))
    }

    fn enumerate(&self, image: &ImageBuffer) -> Result<Layout, BackendError> {
        let text = self.post(&self.image_request(image, None, "")?)?;
        let resp: BoxesResponse = wire::decode(&text).map_err(|e| self.protocol(e))?;
        Ok(resp.boxes)
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, prompt: &str, image: Option<&ImageBuffer>) -> Result<String, BackendError> {
        let image = image
            .map(wire::image_to_b64)
            .transpose()
            .map_err(|e| self.protocol(e.to_string()))?;
        let text = self.post(&Request {
            image,
            mask: None,
            prompt: prompt.to_string(),
        })?;
        let resp: TextResponse = wire::decode(&text).map_err(|e| self.protocol(e))?;
        Ok(resp.text)
    }

    fn supports_vision(&self) -> bool {
        true
    }
}
