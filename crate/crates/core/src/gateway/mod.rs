//! Model-backend contracts and the [`Gateway`] that binds one implementation
//! per kind.
//!
//! Every call goes through the gateway, which re-checks the shape contract
//! (image-returning backends preserve dimensions, masks match the input
//! image) so a misbehaving remote server fails loudly at the boundary.

pub mod fixtures;
pub mod http;
pub mod mock;
pub mod server;
pub mod wire;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Dims, ImageBuffer, RasterMask};
use crate::layout::Layout;

pub use fixtures::{FixtureStore, MockFixtures, SegmentFixtures};

/// Prompt sent with every boundary-refinement (fusion) request.
pub const FUSION_PROMPT: &str =
    "inpaint the black-bordered region so that the object's edges blend smoothly with the background";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Inpaint,
    AttrEdit,
    Fusion,
    GlobalTransform,
    Segment,
    Llm,
}

impl BackendKind {
    pub const ALL: [BackendKind; 6] = [
        BackendKind::Inpaint,
        BackendKind::AttrEdit,
        BackendKind::Fusion,
        BackendKind::GlobalTransform,
        BackendKind::Segment,
        BackendKind::Llm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Inpaint => "inpaint",
            BackendKind::AttrEdit => "attr_edit",
            BackendKind::Fusion => "fusion",
            BackendKind::GlobalTransform => "global_transform",
            BackendKind::Segment => "segment",
            BackendKind::Llm => "llm",
        }
    }

    /// HTTP route serving this kind.
    pub fn endpoint(self) -> &'static str {
        match self {
            BackendKind::Inpaint => "/v1/inpaint",
            BackendKind::AttrEdit => "/v1/edit",
            BackendKind::Fusion => "/v1/fusion",
            BackendKind::GlobalTransform => "/v1/global",
            BackendKind::Segment => "/v1/segment",
            BackendKind::Llm => "/v1/chat",
        }
    }

    /// Prefix of the `IEAP_<KIND>_URL` / `IEAP_<KIND>_TOKEN` variables.
    pub fn env_prefix(self) -> String {
        format!("IEAP_{}", self.name().to_uppercase())
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackendKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let k = match s.trim().to_lowercase().replace('-', "_").as_str() {
            "inpaint" => BackendKind::Inpaint,
            "attr_edit" | "attr" | "edit" => BackendKind::AttrEdit,
            "fusion" | "fuse" => BackendKind::Fusion,
            "global_transform" | "global" => BackendKind::GlobalTransform,
            "segment" | "seg" => BackendKind::Segment,
            "llm" | "chat" => BackendKind::Llm,
            _ => return Err(ConfigError::UnknownKind(s.to_string())),
        };
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("{kind} backend returned HTTP {status}: {body}")]
    Status {
        kind: BackendKind,
        status: u16,
        body: String,
    },
    #[error("{kind} backend timed out")]
    Timeout { kind: BackendKind },
    #[error("{kind} transport error: {message}")]
    Transport { kind: BackendKind, message: String },
    #[error("{kind} protocol error: {message}")]
    Protocol { kind: BackendKind, message: String },
    #[error("no fixture response for prompt {hash}")]
    MockMiss { hash: String },
    #[error("no region found for {0:?}")]
    RoiNotFound(String),
    #[error("{kind} backend broke the shape contract: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        kind: BackendKind,
        expected: Dims,
        got: Dims,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unknown backend kind {0:?}")]
    UnknownKind(String),
    #[error("unsupported backend url {0:?}: expected http://, https:// or `mock`")]
    BadUrl(String),
    #[error("invalid endpoint config: {0}")]
    Invalid(String),
    #[error("cannot load fixtures: {0}")]
    Fixtures(String),
}

/// Language model used for decomposition, extraction and layout edits.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, prompt: &str, image: Option<&ImageBuffer>) -> Result<String, BackendError>;

    /// Whether the image payload is consumed; planners skip encoding it otherwise.
    fn supports_vision(&self) -> bool {
        false
    }
}

/// Image-to-image model conditioned on text (inpaint, attribute edit,
/// fusion, global transform). `mask` marks the region the caller blacked
/// out, when there is one.
pub trait ImageModel: Send + Sync {
    fn run(&self, image: &ImageBuffer, mask: Option<&RasterMask>, prompt: &str) -> Result<ImageBuffer, BackendError>;
}

/// Referring segmentation plus whole-scene layout enumeration.
pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &ImageBuffer, text_roi: &str) -> Result<RasterMask, BackendError>;

    fn enumerate(&self, image: &ImageBuffer) -> Result<Layout, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpointConfig {
    pub base_url: String,
    /// Seconds.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// First backoff delay; doubles per retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    200
}

impl BackendEndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        BackendEndpointConfig {
            base_url: base_url.into(),
            timeout: default_timeout(),
            auth_token: None,
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let rest = self
            .base_url
            .strip_prefix("http://")
            .or_else(|| self.base_url.strip_prefix("https://"))
            .ok_or_else(|| ConfigError::BadUrl(self.base_url.clone()))?;
        if rest.is_empty() || rest.starts_with('/') {
            return Err(ConfigError::BadUrl(self.base_url.clone()));
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "timeout must be > 0, got {}",
                self.timeout
            )));
        }
        Ok(())
    }
}

/// How one backend kind is served.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum BackendSpec {
    #[default]
    Mock,
    Remote(BackendEndpointConfig),
}

impl BackendSpec {
    /// `mock` or an http(s) URL.
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("mock") {
            return Ok(BackendSpec::Mock);
        }
        let cfg = BackendEndpointConfig::new(s.trim_end_matches('/'));
        cfg.validate()?;
        Ok(BackendSpec::Remote(cfg))
    }
}

impl Serialize for BackendSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BackendSpec::Mock => s.serialize_str("mock"),
            BackendSpec::Remote(cfg) => cfg.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for BackendSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Short(String),
            Full(BackendEndpointConfig),
        }
        match Raw::deserialize(d)? {
            Raw::Short(s) => BackendSpec::parse(&s).map_err(serde::de::Error::custom),
            Raw::Full(cfg) => {
                cfg.validate().map_err(serde::de::Error::custom)?;
                Ok(BackendSpec::Remote(cfg))
            }
        }
    }
}

/// One implementation per backend kind, with shape checks and call counters.
pub struct Gateway {
    llm: Arc<dyn LlmBackend>,
    inpaint: Arc<dyn ImageModel>,
    attr: Arc<dyn ImageModel>,
    fusion: Arc<dyn ImageModel>,
    global: Arc<dyn ImageModel>,
    segmenter: Arc<dyn Segmenter>,
    calls: [AtomicUsize; 6],
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("calls", &self.total_calls()).finish()
    }
}

impl Gateway {
    pub fn new(
        llm: Arc<dyn LlmBackend>,
        inpaint: Arc<dyn ImageModel>,
        attr: Arc<dyn ImageModel>,
        fusion: Arc<dyn ImageModel>,
        global: Arc<dyn ImageModel>,
        segmenter: Arc<dyn Segmenter>,
    ) -> Self {
        Gateway {
            llm,
            inpaint,
            attr,
            fusion,
            global,
            segmenter,
            calls: Default::default(),
        }
    }

    /// All six kinds served by the in-process mocks.
    pub fn mock(fixtures: MockFixtures) -> Self {
        let MockFixtures { llm, segment } = fixtures;
        Gateway::new(
            Arc::new(llm),
            Arc::new(mock::MockInpaint),
            Arc::new(mock::MockAttrEdit),
            Arc::new(mock::MockFusion),
            Arc::new(mock::MockGlobal),
            Arc::new(segment),
        )
    }

    /// Resolve every kind to a mock or an HTTP client. Missing kinds are mocked.
    pub fn from_specs(
        specs: &BTreeMap<BackendKind, BackendSpec>,
        fixtures_dir: Option<&Path>,
    ) -> Result<Self, ConfigError> {
        let fixtures = match fixtures_dir {
            Some(dir) => MockFixtures::load(dir).map_err(|e| ConfigError::Fixtures(e.to_string()))?,
            None => MockFixtures::default(),
        };
        let MockFixtures { llm, segment } = fixtures;
        let spec = |k: BackendKind| specs.get(&k).cloned().unwrap_or_default();
        let image = |k: BackendKind, m: Arc<dyn ImageModel>| -> Result<Arc<dyn ImageModel>, ConfigError> {
            Ok(match spec(k) {
                BackendSpec::Mock => m,
                BackendSpec::Remote(cfg) => Arc::new(http::HttpBackend::new(k, cfg)?),
            })
        };
        let llm: Arc<dyn LlmBackend> = match spec(BackendKind::Llm) {
            BackendSpec::Mock => Arc::new(llm),
            BackendSpec::Remote(cfg) => Arc::new(http::HttpBackend::new(BackendKind::Llm, cfg)?),
        };
        let segmenter: Arc<dyn Segmenter> = match spec(BackendKind::Segment) {
            BackendSpec::Mock => Arc::new(segment),
            BackendSpec::Remote(cfg) => Arc::new(http::HttpBackend::new(BackendKind::Segment, cfg)?),
        };
        Ok(Gateway::new(
            llm,
            image(BackendKind::Inpaint, Arc::new(mock::MockInpaint))?,
            image(BackendKind::AttrEdit, Arc::new(mock::MockAttrEdit))?,
            image(BackendKind::Fusion, Arc::new(mock::MockFusion))?,
            image(BackendKind::GlobalTransform, Arc::new(mock::MockGlobal))?,
            segmenter,
        ))
    }

    fn count(&self, kind: BackendKind) {
        self.calls[kind.index()].fetch_add(1, Ordering::Relaxed);
    }

    pub fn calls(&self, kind: BackendKind) -> usize {
        self.calls[kind.index()].load(Ordering::Relaxed)
    }

    pub fn total_calls(&self) -> usize {
        BackendKind::ALL.iter().map(|&k| self.calls(k)).sum()
    }

    pub fn llm_supports_vision(&self) -> bool {
        self.llm.supports_vision()
    }

    fn same_dims(kind: BackendKind, expected: Dims, out: ImageBuffer) -> Result<ImageBuffer, BackendError> {
        if out.dims() == expected {
            Ok(out)
        } else {
            Err(BackendError::DimensionMismatch {
                kind,
                expected,
                got: out.dims(),
            })
        }
    }

    pub fn llm_complete(&self, prompt: &str, image: Option<&ImageBuffer>) -> Result<String, BackendError> {
        self.count(BackendKind::Llm);
        self.llm.complete(prompt, image)
    }

    /// Fill the region blacked out in `img_blacked`.
    pub fn inpaint(
        &self,
        img_blacked: &ImageBuffer,
        mask: Option<&RasterMask>,
        prompt: &str,
    ) -> Result<ImageBuffer, BackendError> {
        self.count(BackendKind::Inpaint);
        let out = self.inpaint.run(img_blacked, mask, prompt)?;
        Self::same_dims(BackendKind::Inpaint, img_blacked.dims(), out)
    }

    pub fn attr_edit(&self, img: &ImageBuffer, instruction: &str) -> Result<ImageBuffer, BackendError> {
        self.count(BackendKind::AttrEdit);
        let out = self.attr.run(img, None, instruction)?;
        Self::same_dims(BackendKind::AttrEdit, img.dims(), out)
    }

    /// Repaint the blacked annular band. Non-canonical prompts are sent anyway.
    pub fn fuse(
        &self,
        img_prep_blacked: &ImageBuffer,
        band: Option<&RasterMask>,
        prompt: &str,
    ) -> Result<ImageBuffer, BackendError> {
        if prompt != FUSION_PROMPT {
            log::warn!("fusion prompt differs from the canonical refinement prompt: {prompt:?}");
        }
        self.count(BackendKind::Fusion);
        let out = self.fusion.run(img_prep_blacked, band, prompt)?;
        Self::same_dims(BackendKind::Fusion, img_prep_blacked.dims(), out)
    }

    pub fn global_transform(&self, img: &ImageBuffer, instruction: &str) -> Result<ImageBuffer, BackendError> {
        self.count(BackendKind::GlobalTransform);
        let out = self.global.run(img, None, instruction)?;
        Self::same_dims(BackendKind::GlobalTransform, img.dims(), out)
    }

    pub fn segment(&self, img: &ImageBuffer, text_roi: &str) -> Result<RasterMask, BackendError> {
        if text_roi.trim().is_empty() {
            return Err(BackendError::RoiNotFound(text_roi.to_string()));
        }
        self.count(BackendKind::Segment);
        let m = self.segmenter.segment(img, text_roi)?;
        if m.dims() != img.dims() {
            return Err(BackendError::DimensionMismatch {
                kind: BackendKind::Segment,
                expected: img.dims(),
                got: m.dims(),
            });
        }
        Ok(m)
    }

    /// Layout of every detectable object in the scene.
    pub fn enumerate_layout(&self, img: &ImageBuffer) -> Result<Layout, BackendError> {
        self.count(BackendKind::Segment);
        self.segmenter.enumerate(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Shrinker;

    impl ImageModel for Shrinker {
        fn run(&self, _: &ImageBuffer, _: Option<&RasterMask>, _: &str) -> Result<ImageBuffer, BackendError> {
            Ok(ImageBuffer::filled(Dims::new(2, 2), [1, 1, 1]))
        }
    }

    #[test]
    fn kind_names_and_env() {
        for k in BackendKind::ALL {
            assert_eq!(k.name().parse::<BackendKind>().unwrap(), k);
        }
        assert_eq!(BackendKind::AttrEdit.env_prefix(), "IEAP_ATTR_EDIT");
        assert_eq!("edit".parse::<BackendKind>().unwrap(), BackendKind::AttrEdit);
        assert!("vae".parse::<BackendKind>().is_err());
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(BackendSpec::parse("mock").unwrap(), BackendSpec::Mock);
        match BackendSpec::parse("http://127.0.0.1:9000/").unwrap() {
            BackendSpec::Remote(c) => assert_eq!(c.base_url, "http://127.0.0.1:9000"),
            _ => panic!(),
        }
        assert!(matches!(BackendSpec::parse("ftp://x"), Err(ConfigError::BadUrl(_))));
        assert!(matches!(BackendSpec::parse("http://"), Err(ConfigError::BadUrl(_))));
        let mut c = BackendEndpointConfig::new("http://h");
        c.timeout = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn gateway_rejects_shape_violations() {
        let mut g = Gateway::mock(MockFixtures::default());
        g.attr = Arc::new(Shrinker);
        let img = ImageBuffer::filled(Dims::new(4, 4), [9, 9, 9]);
        assert!(matches!(
            g.attr_edit(&img, "x"),
            Err(BackendError::DimensionMismatch {
                kind: BackendKind::AttrEdit,
                ..
            })
        ));
        assert_eq!(g.calls(BackendKind::AttrEdit), 1);
    }

    #[test]
    fn off_contract_fusion_prompt_still_sent() {
        let g = Gateway::mock(MockFixtures::default());
        let img = ImageBuffer::filled(Dims::new(4, 4), [9, 9, 9]);
        assert_eq!(g.fuse(&img, None, "something else").unwrap(), img);
        assert_eq!(g.calls(BackendKind::Fusion), 1);
    }
}
