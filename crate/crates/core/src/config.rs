//! Session configuration, assembled from layers: built-in defaults, a
//! TOML/JSON file, environment variables and explicit overrides, each
//! later layer winning field by field.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{BackendKind, BackendSpec, ConfigError, Gateway};
use crate::image::Dims;
use crate::layout::{DEFAULT_MOVE_STEP, DEFAULT_RESIZE_FACTOR};
use crate::mask::MorphologyConfig;

/// Prefix shared by every environment variable the config reads.
pub const ENV_PREFIX: &str = "IEAP";

#[derive(Debug, Error)]
pub enum SessionConfigError {
    #[error(transparent)]
    Backend(#[from] ConfigError),
    #[error("cannot read config file {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("invalid value {value:?} for {key}: {message}")]
    Value {
        key: String,
        value: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub canvas: Dims,
    pub morphology: MorphologyConfig,
    /// Every kind is present after resolution.
    pub backends: BTreeMap<BackendKind, BackendSpec>,
    pub deterministic_layout: bool,
    pub move_step: i32,
    pub resize_factor: f64,
    pub outdir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            canvas: Dims::default(),
            morphology: MorphologyConfig::default(),
            backends: BackendKind::ALL.into_iter().map(|k| (k, BackendSpec::Mock)).collect(),
            deterministic_layout: false,
            move_step: DEFAULT_MOVE_STEP,
            resize_factor: DEFAULT_RESIZE_FACTOR,
            outdir: PathBuf::from("runs"),
            fixtures: None,
        }
    }
}

/// One partial source of configuration. Unset fields defer to earlier layers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    #[serde(default)]
    pub canvas: Option<Dims>,
    #[serde(default)]
    pub k1: Option<u32>,
    #[serde(default)]
    pub k2: Option<u32>,
    #[serde(default)]
    pub morphology: Option<MorphologyConfig>,
    #[serde(default)]
    pub backends: BTreeMap<BackendKind, BackendSpec>,
    /// Bearer tokens applied to remote backends after merging.
    #[serde(default)]
    pub tokens: BTreeMap<BackendKind, String>,
    #[serde(default)]
    pub deterministic_layout: Option<bool>,
    #[serde(default)]
    pub move_step: Option<i32>,
    #[serde(default)]
    pub resize_factor: Option<f64>,
    #[serde(default)]
    pub outdir: Option<PathBuf>,
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
}

fn value_error(key: &str, value: &str, message: impl ToString) -> SessionConfigError {
    SessionConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        message: message.to_string(),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, SessionConfigError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" | "" => Ok(false),
        _ => Err(value_error(key, v, "expected a boolean")),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, SessionConfigError>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse().map_err(|e| value_error(key, v, e))
}

impl ConfigLayer {
    /// Parse a config file; `.json` is JSON, anything else TOML.
    pub fn from_file(path: &Path) -> Result<Self, SessionConfigError> {
        let file_err = |message: String| SessionConfigError::File {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| file_err(e.to_string()))
        }
    }

    /// Read `IEAP_*` variables through `get`, so tests need not touch the
    /// process environment.
    pub fn from_env(get: impl Fn(&str) -> Option<String>) -> Result<Self, SessionConfigError> {
        let var = |suffix: &str| {
            let key = format!("{ENV_PREFIX}_{suffix}");
            get(&key).map(|v| (key, v))
        };
        let mut layer = ConfigLayer::default();
        for kind in BackendKind::ALL {
            let prefix = kind.env_prefix();
            if let Some(url) = get(&format!("{prefix}_URL")) {
                layer.backends.insert(kind, BackendSpec::parse(&url)?);
            }
            if let Some(token) = get(&format!("{prefix}_TOKEN")) {
                layer.tokens.insert(kind, token);
            }
        }
        if let Some((k, v)) = var("CANVAS") {
            layer.canvas = Some(parse_canvas(&k, &v)?);
        }
        if let Some((k, v)) = var("K1") {
            layer.k1 = Some(parse_num(&k, &v)?);
        }
        if let Some((k, v)) = var("K2") {
            layer.k2 = Some(parse_num(&k, &v)?);
        }
        if let Some((k, v)) = var("DETERMINISTIC_LAYOUT") {
            layer.deterministic_layout = Some(parse_bool(&k, &v)?);
        }
        if let Some((k, v)) = var("MOVE_STEP") {
            layer.move_step = Some(parse_num(&k, &v)?);
        }
        if let Some((k, v)) = var("RESIZE_FACTOR") {
            layer.resize_factor = Some(parse_num(&k, &v)?);
        }
        if let Some((_, v)) = var("OUTDIR") {
            layer.outdir = Some(PathBuf::from(v));
        }
        if let Some((_, v)) = var("FIXTURES") {
            layer.fixtures = Some(PathBuf::from(v));
        }
        Ok(layer)
    }

    pub fn from_process_env() -> Result<Self, SessionConfigError> {
        Self::from_env(|k| std::env::var(k).ok())
    }

    /// `kind=url` or `kind=mock`.
    pub fn set_backend(&mut self, assignment: &str) -> Result<(), SessionConfigError> {
        let (kind, spec) = assignment
            .split_once('=')
            .ok_or_else(|| value_error("--backend", assignment, "expected <kind>=<url|mock>"))?;
        self.backends.insert(kind.parse()?, BackendSpec::parse(spec)?);
        Ok(())
    }

    fn apply(&self, cfg: &mut SessionConfig) {
        if let Some(c) = self.canvas {
            cfg.canvas = c;
        }
        if let Some(m) = self.morphology {
            cfg.morphology = m;
        }
        if let Some(k) = self.k1 {
            cfg.morphology.k1 = k;
        }
        if let Some(k) = self.k2 {
            cfg.morphology.k2 = k;
        }
        for (kind, spec) in &self.backends {
            cfg.backends.insert(*kind, spec.clone());
        }
        if let Some(v) = self.deterministic_layout {
            cfg.deterministic_layout = v;
        }
        if let Some(v) = self.move_step {
            cfg.move_step = v;
        }
        if let Some(v) = self.resize_factor {
            cfg.resize_factor = v;
        }
        if let Some(v) = &self.outdir {
            cfg.outdir = v.clone();
        }
        if let Some(v) = &self.fixtures {
            cfg.fixtures = Some(v.clone());
        }
    }
}

fn parse_canvas(key: &str, v: &str) -> Result<Dims, SessionConfigError> {
    let (w, h) = v
        .trim()
        .split_once(['x', 'X'])
        .ok_or_else(|| value_error(key, v, "expected WIDTHxHEIGHT"))?;
    Ok(Dims::new(parse_num(key, w)?, parse_num(key, h)?))
}

impl SessionConfig {
    /// Fold `layers` (lowest precedence first) over the defaults.
    pub fn resolve<'a>(layers: impl IntoIterator<Item = &'a ConfigLayer>) -> Result<Self, SessionConfigError> {
        let mut cfg = SessionConfig::default();
        let mut tokens = BTreeMap::new();
        for layer in layers {
            layer.apply(&mut cfg);
            tokens.extend(layer.tokens.iter().map(|(k, v)| (*k, v.clone())));
        }
        for (kind, token) in tokens {
            if let Some(BackendSpec::Remote(ep)) = cfg.backends.get_mut(&kind) {
                ep.auth_token = Some(token);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SessionConfigError> {
        self.morphology
            .validate()
            .map_err(|e| SessionConfigError::Invalid(e.to_string()))?;
        if self.canvas.width == 0 || self.canvas.height == 0 {
            return Err(SessionConfigError::Invalid("canvas must be non-empty".into()));
        }
        if self.move_step < 0 {
            return Err(SessionConfigError::Invalid(format!(
                "move_step must be >= 0, got {}",
                self.move_step
            )));
        }
        if !(self.resize_factor > 0.0 && self.resize_factor.is_finite()) {
            return Err(SessionConfigError::Invalid(format!(
                "resize_factor must be > 0, got {}",
                self.resize_factor
            )));
        }
        for kind in BackendKind::ALL {
            match self.backends.get(&kind) {
                None => return Err(SessionConfigError::Invalid(format!("backend {kind} unresolved"))),
                Some(BackendSpec::Remote(ep)) => ep.validate()?,
                Some(BackendSpec::Mock) => {}
            }
        }
        Ok(())
    }

    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        Gateway::from_specs(&self.backends, self.fixtures.as_deref())
    }

    /// Stable TOML dump; identical inputs print identical text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("session config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn defaults() {
        let cfg = SessionConfig::resolve([]).unwrap();
        assert_eq!(cfg.morphology, MorphologyConfig { k1: 3, k2: 3 });
        assert_eq!(cfg.canvas, Dims::square(512));
        assert_eq!(cfg.move_step, 100);
        assert_eq!(cfg.resize_factor, 1.5);
        assert!(cfg.backends.values().all(|s| *s == BackendSpec::Mock));
    }

    #[test]
    fn precedence_flags_env_file() {
        let file: ConfigLayer = toml::from_str(
            "k1 = 5\nmove_step = 40\n[backends]\ninpaint = \"http://file:1\"\nllm = { base_url = \"http://file:2\", retries = 7 }\n",
        )
        .unwrap();
        let envl = ConfigLayer::from_env(env(&[
            ("IEAP_K1", "7"),
            ("IEAP_INPAINT_URL", "http://env:1"),
            ("IEAP_LLM_TOKEN", "secret"),
        ]))
        .unwrap();
        let mut flags = ConfigLayer {
            k1: Some(9),
            ..Default::default()
        };
        flags.set_backend("segment=http://flag:3").unwrap();
        let cfg = SessionConfig::resolve([&file, &envl, &flags]).unwrap();
        assert_eq!(cfg.morphology.k1, 9);
        assert_eq!(cfg.move_step, 40);
        let remote = |k| match &cfg.backends[&k] {
            BackendSpec::Remote(ep) => ep.clone(),
            BackendSpec::Mock => panic!("{k} is mock"),
        };
        assert_eq!(remote(BackendKind::Inpaint).base_url, "http://env:1");
        assert_eq!(remote(BackendKind::Segment).base_url, "http://flag:3");
        let llm = remote(BackendKind::Llm);
        assert_eq!((llm.retries, llm.auth_token.as_deref()), (7, Some("secret")));
        assert_eq!(cfg.backends[&BackendKind::Fusion], BackendSpec::Mock);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(ConfigLayer::from_env(env(&[("IEAP_FUSION_URL", "ftp://x")])).is_err());
        assert!(ConfigLayer::from_env(env(&[("IEAP_K2", "three")])).is_err());
        let even = ConfigLayer {
            k2: Some(4),
            ..Default::default()
        };
        assert!(SessionConfig::resolve([&even]).is_err());
        let mut l = ConfigLayer::default();
        assert!(l.set_backend("painter=mock").is_err());
        assert!(l.set_backend("inpaint").is_err());
        assert!(toml::from_str::<ConfigLayer>("bogus = 1").is_err());
    }

    #[test]
    fn dump_is_stable_and_reloadable() {
        let mut flags = ConfigLayer::default();
        flags.set_backend("llm=https://api.example:8443/").unwrap();
        let a = SessionConfig::resolve([&flags]).unwrap();
        let b = SessionConfig::resolve([&flags]).unwrap();
        assert_eq!(a.to_toml(), b.to_toml());
        let back: SessionConfig = toml::from_str(&a.to_toml()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn json_file_layer() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(
            &p,
            r#"{"canvas": {"width": 256, "height": 128}, "deterministic_layout": true}"#,
        )
        .unwrap();
        let cfg = SessionConfig::resolve([&ConfigLayer::from_file(&p).unwrap()]).unwrap();
        assert_eq!(cfg.canvas, Dims::new(256, 128));
        assert!(cfg.deterministic_layout);
    }
}
