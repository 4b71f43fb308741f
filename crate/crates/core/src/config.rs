//! Platform configuration file (TOML) and construction of the configured
//! clients and policies.
//!
//! Every section and key is optional; omitted values take their defaults.
//!
//! ```toml
//! [env]
//! max_decision_points = 150
//! max_steps = 2000
//! self_position_period = 3
//!
//! [llm]
//! profile = "gpt-4.1"        # or "mock", or a name under [llm.profiles]
//!
//! [imagery]
//! provider = "stub"           # or "streetview"
//! cache_dir = "cache"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    AgentConfig, LlmPolicy, OraclePolicy, Policy, PolicyKind, PromptMode, PromptTemplates, RandomPolicy,
};
use crate::clients::imagery::STREET_VIEW_ENDPOINT;
use crate::clients::{
    CachedImageProvider, ChatClient, HttpChatClient, ImageCache, ImageProvider, MockNavigatorClient, ProviderProfile,
    StreetViewProvider, StubImageProvider, Transport, UreqTransport, ViewParams,
};
use crate::env::EnvConfig;
use crate::graph::RepairConfig;
use crate::sampler::SamplerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImagerySource {
    #[default]
    Stub,
    Streetview,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageryConfig {
    pub provider: ImagerySource,
    /// `None` disables the disk cache.
    pub cache_dir: Option<PathBuf>,
    pub endpoint: String,
    pub api_key_env: String,
    pub view: ViewParams,
}

impl Default for ImageryConfig {
    fn default() -> Self {
        Self {
            provider: ImagerySource::Stub,
            cache_dir: None,
            endpoint: STREET_VIEW_ENDPOINT.into(),
            api_key_env: "GOOGLE_MAPS_API_KEY".into(),
            view: ViewParams::default(),
        }
    }
}

pub const MOCK_PROFILE: &str = "mock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// `mock`, a built-in profile name, or a key of `profiles`.
    pub profile: String,
    pub profiles: BTreeMap<String, ProviderProfile>,
    pub mock_seed: u64,
    pub mock_malformed_rate: f64,
    /// Directory of prompt templates overriding the built-in ones.
    pub prompt_dir: Option<PathBuf>,
    pub request_timeout_s: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            profile: MOCK_PROFILE.into(),
            profiles: BTreeMap::new(),
            mock_seed: 0,
            mock_malformed_rate: 0.0,
            prompt_dir: None,
            request_timeout_s: 120,
        }
    }
}

impl LlmConfig {
    pub fn resolve_profile(&self) -> Result<Option<ProviderProfile>, ConfigError> {
        if self.profile == MOCK_PROFILE {
            return Ok(None);
        }
        self.profiles
            .get(&self.profile)
            .cloned()
            .or_else(|| ProviderProfile::builtin(&self.profile))
            .map(Some)
            .ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "unknown llm profile {:?}; built-in profiles are {:?}",
                    self.profile,
                    ProviderProfile::builtin_names()
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    pub env: EnvConfig,
    pub repair: RepairConfig,
    pub sampler: SamplerConfig,
    pub agent: AgentConfig,
    pub imagery: ImageryConfig,
    pub llm: LlmConfig,
}

impl PlatformConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.env.validate().map_err(|e| invalid(&e))?;
        self.sampler.validate().map_err(|e| invalid(&e))?;
        self.agent.validate().map_err(|e| invalid(&e))?;
        self.imagery.view.validate().map_err(|e| invalid(&e))?;
        if !(self.repair.max_edge_m > 0.0) {
            return Err(ConfigError::Invalid("repair.max_edge_m must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.llm.mock_malformed_rate) {
            return Err(ConfigError::Invalid("llm.mock_malformed_rate must lie in [0, 1]".into()));
        }
        self.llm.resolve_profile()?;
        Ok(())
    }

    pub fn templates(&self) -> Result<PromptTemplates, ConfigError> {
        match &self.llm.prompt_dir {
            Some(dir) => PromptTemplates::from_dir(dir).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(PromptTemplates::builtin()),
        }
    }

    /// Chat client for the configured profile. Live profiles need their API
    /// key in the environment.
    pub fn chat_client(&self) -> Result<Arc<dyn ChatClient>, ConfigError> {
        match self.llm.resolve_profile()? {
            None => Ok(Arc::new(
                MockNavigatorClient::new(self.llm.mock_seed).with_malformed_rate(self.llm.mock_malformed_rate),
            )),
            Some(profile) => {
                let transport: Arc<dyn Transport> =
                    Arc::new(UreqTransport::new(Duration::from_secs(self.llm.request_timeout_s)));
                let client =
                    HttpChatClient::from_env(profile, transport).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Arc::new(client))
            }
        }
    }

    pub fn image_provider(&self) -> Result<Arc<dyn ImageProvider>, ConfigError> {
        let img = &self.imagery;
        let inner: Arc<dyn ImageProvider> = match img.provider {
            ImagerySource::Stub => Arc::new(StubImageProvider),
            ImagerySource::Streetview => {
                let transport: Arc<dyn Transport> = Arc::new(UreqTransport::default());
                Arc::new(
                    StreetViewProvider::from_env(transport, img.endpoint.clone(), &img.api_key_env)
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?,
                )
            }
        };
        Ok(match &img.cache_dir {
            Some(dir) => Arc::new(CachedImageProvider::new(inner, ImageCache::new(dir))),
            None => inner,
        })
    }
}

/// Shared, thread-safe pieces from which per-episode policies are made.
#[derive(Clone)]
pub struct PolicyFactory {
    pub kind: PolicyKind,
    pub agent: AgentConfig,
    pub chat: Option<Arc<dyn ChatClient>>,
    pub images: Option<Arc<dyn ImageProvider>>,
    pub templates: Arc<PromptTemplates>,
}

impl PolicyFactory {
    /// Builds only what `kind` needs; baselines never touch clients.
    pub fn from_config(kind: PolicyKind, cfg: &PlatformConfig) -> Result<Self, ConfigError> {
        let (chat, images) =
            if kind.needs_chat() { (Some(cfg.chat_client()?), Some(cfg.image_provider()?)) } else { (None, None) };
        Ok(Self { kind, agent: cfg.agent.clone(), chat, images, templates: Arc::new(cfg.templates()?) })
    }

    pub fn with_clients(
        kind: PolicyKind,
        agent: AgentConfig,
        chat: Arc<dyn ChatClient>,
        images: Arc<dyn ImageProvider>,
    ) -> Self {
        Self { kind, agent, chat: Some(chat), images: Some(images), templates: Arc::new(PromptTemplates::builtin()) }
    }

    pub fn make(&self) -> Result<Box<dyn Policy>, ConfigError> {
        let llm = |mode| -> Result<Box<dyn Policy>, ConfigError> {
            let (Some(chat), Some(images)) = (&self.chat, &self.images) else {
                return Err(ConfigError::Invalid(format!("policy {} needs a chat client and imagery", self.kind)));
            };
            let p = LlmPolicy::new(mode, chat.clone(), images.clone(), self.templates.clone(), self.agent.clone())
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            Ok(Box::new(p))
        };
        match self.kind {
            PolicyKind::AgentNav => llm(PromptMode::AgentNav),
            PolicyKind::Base => llm(PromptMode::Base),
            PolicyKind::Oracle => Ok(Box::new(OraclePolicy::new())),
            PolicyKind::Random => Ok(Box::new(RandomPolicy::new(self.agent.rng_seed))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let cfg = PlatformConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, PlatformConfig::default());
        assert_eq!(cfg.env.max_decision_points, 150);
        assert_eq!(cfg.imagery.view.fov_deg, 90.0);
    }

    #[test]
    fn round_trip_and_overrides() {
        let text = r#"
            [env]
            max_decision_points = 40

            [llm]
            profile = "local"
            [llm.profiles.local]
            kind = "ollama"
            model = "llava"
            endpoint = "http://127.0.0.1:11434/api/chat"
            [llm.profiles.local.params]
            temperature = 0.2
        "#;
        let cfg = PlatformConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.env.max_decision_points, 40);
        assert_eq!(cfg.env.max_steps, 2000);
        let p = cfg.llm.resolve_profile().unwrap().unwrap();
        assert_eq!(p.model, "llava");
        assert_eq!(p.params.temperature, Some(0.2));
        let again = PlatformConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PlatformConfig::from_toml_str("[env]\nmax_steps = 0").is_err());
        assert!(PlatformConfig::from_toml_str("[llm]\nprofile = \"gpt-9\"").is_err());
        assert!(PlatformConfig::from_toml_str("[imagery.view]\nfov_deg = 400.0").is_err());
    }

    #[test]
    fn readme_example_is_the_default() {
        let readme = include_str!("../../../README.md");
        let section = &readme[readme.find("### Configuration").unwrap()..];
        let start = section.find("```toml\n").unwrap() + "```toml\n".len();
        let block = &section[start..start + section[start..].find("```").unwrap()];
        assert_eq!(PlatformConfig::from_toml_str(block).unwrap(), PlatformConfig::default());
    }

    #[test]
    fn baseline_factory_needs_no_clients() {
        let cfg = PlatformConfig {
            llm: LlmConfig { profile: "gpt-4o".into(), ..LlmConfig::default() },
            ..Default::default()
        };
        let f = PolicyFactory::from_config(PolicyKind::Oracle, &cfg).unwrap();
        assert!(f.chat.is_none());
        assert_eq!(f.make().unwrap().name(), "oracle");
    }
}
