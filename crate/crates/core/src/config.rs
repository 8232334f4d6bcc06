//! Application configuration: a TOML file with `STANCERAG_*` environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::EvalConfig;
use crate::providers::http::EndpointConfig;
use crate::stance::{EvidenceMode, PromptStrategy};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub embedding: Option<EndpointConfig>,
    pub chat: Option<EndpointConfig>,
    pub rerank: Option<EndpointConfig>,
    pub alignment: Option<EndpointConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub data_dir: PathBuf,
    /// When set, mutating and query endpoints require `Authorization: Bearer <token>`.
    pub api_token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into(), data_dir: PathBuf::from("stancerag-data"), api_token: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub eval: EvalConfig,
    pub providers: ProvidersConfig,
    pub service: ServiceConfig,
}

pub const ENV_PREFIX: &str = "STANCERAG_";

fn parse_env<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse().map_err(|e| Error::InvalidConfig(format!("{ENV_PREFIX}{key}={v:?}: {e}")))
}

fn set_url(slot: &mut Option<EndpointConfig>, url: String) {
    match slot {
        Some(c) => c.url = url,
        None => *slot = Some(EndpointConfig::new(url, "")),
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::format(path.display(), e))
    }

    /// Reads an optional file, then applies process environment overrides and validates.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(format!("{ENV_PREFIX}{k}")).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies overrides; `var` receives keys without the prefix.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        let p = &mut self.providers;
        if let Some(u) = var("EMBEDDING_URL") {
            set_url(&mut p.embedding, u);
        }
        if let Some(u) = var("CHAT_URL") {
            set_url(&mut p.chat, u);
        }
        if let Some(u) = var("RERANK_URL") {
            set_url(&mut p.rerank, u);
        }
        if let Some(u) = var("ALIGNMENT_URL") {
            set_url(&mut p.alignment, u);
        }
        if let Some(v) = var("TIMEOUT_SECS") {
            let secs: u64 = parse_env("TIMEOUT_SECS", &v)?;
            for c in [&mut p.embedding, &mut p.chat, &mut p.rerank, &mut p.alignment].into_iter().flatten() {
                c.timeout_secs = secs;
            }
        }
        if let Some(v) = var("K") {
            self.eval.k = parse_env("K", &v)?;
        }
        if let Some(v) = var("SIGMA") {
            self.eval.sigma_threshold = parse_env("SIGMA", &v)?;
        }
        if let Some(v) = var("TAU") {
            self.eval.tolerance = parse_env("TAU", &v)?;
        }
        if let Some(v) = var("STRATEGY") {
            self.eval.strategies =
                v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_env::<EvidenceMode>("STRATEGY", s)).collect::<Result<_>>()?;
        }
        if let Some(v) = var("PROMPT_STRATEGY") {
            self.eval.prompt_strategy = parse_env::<PromptStrategy>("PROMPT_STRATEGY", &v)?;
        }
        if let Some(v) = var("API_TOKEN") {
            self.service.api_token = Some(v).filter(|t| !t.is_empty());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.eval.validate()?;
        for (name, c) in [
            ("embedding", &self.providers.embedding),
            ("chat", &self.providers.chat),
            ("rerank", &self.providers.rerank),
            ("alignment", &self.providers.alignment),
        ] {
            if let Some(c) = c {
                if c.url.trim().is_empty() {
                    return Err(Error::InvalidConfig(format!("providers.{name}.url is empty")));
                }
                if c.timeout_secs == 0 {
                    return Err(Error::InvalidConfig(format!("providers.{name}.timeout_secs must be positive")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let m: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| m.get(k).cloned()
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
[eval]
k = 3
sigma_threshold = 0.6
strategies = ["FR", "GT"]

[providers.chat]
url = "http://localhost:9000/v1/chat/completions"
model = "m"
logprobs = true

[service]
api_token = "secret"
"#;
        let cfg = AppConfig::from_toml(text).unwrap();
        assert_eq!(cfg.eval.k, 3);
        assert_eq!(cfg.eval.strategies, vec![EvidenceMode::FR, EvidenceMode::GT]);
        assert!(cfg.providers.chat.as_ref().unwrap().logprobs);
        assert_eq!(cfg.service.api_token.as_deref(), Some("secret"));
        let back = AppConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(AppConfig::from_toml("[eval]\nkk = 1\n").is_err());
    }

    #[test]
    fn env_overrides() {
        let mut cfg = AppConfig::default();
        cfg.apply_env(env(&[
            ("EMBEDDING_URL", "http://e"),
            ("TIMEOUT_SECS", "9"),
            ("K", "7"),
            ("SIGMA", "0.3"),
            ("TAU", "0"),
            ("STRATEGY", "fr,ar"),
            ("PROMPT_STRATEGY", "zs_basic"),
        ]))
        .unwrap();
        let e = cfg.providers.embedding.as_ref().unwrap();
        assert_eq!((e.url.as_str(), e.timeout_secs), ("http://e", 9));
        assert_eq!((cfg.eval.k, cfg.eval.sigma_threshold, cfg.eval.tolerance), (7, 0.3, 0));
        assert_eq!(cfg.eval.strategies, vec![EvidenceMode::FR, EvidenceMode::AR]);
        assert_eq!(cfg.eval.prompt_strategy, PromptStrategy::ZsBasic);
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_env_values_are_config_errors() {
        let mut cfg = AppConfig::default();
        assert!(matches!(cfg.apply_env(env(&[("K", "many")])), Err(Error::InvalidConfig(_))));
        let mut cfg = AppConfig::default();
        cfg.apply_env(env(&[("SIGMA", "1.5")])).unwrap();
        assert!(cfg.validate().is_err());
    }
}
