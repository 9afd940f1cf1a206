use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;

use super::{ChatProvider, GatewayError, HttpProvider, ProviderConfig, DEFAULT_REQUEST_TIMEOUT};

/// Path to a YAML provider table that extends or overrides the defaults.
pub const PROVIDERS_ENV: &str = "NPCSH_PROVIDERS";

/// One row of the provider table, as written in the config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderEntry {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub key_env: Option<String>,
    #[serde(default)]
    pub native_tools: bool,
    /// Seconds.
    #[serde(default)]
    pub request_timeout: Option<u64>,
}

/// Provider id → connection settings, plus optional in-process providers
/// that take precedence (used by tests and dry runs).
#[derive(Clone, Default)]
pub struct ProviderRegistry {
    entries: BTreeMap<String, ProviderEntry>,
    overrides: BTreeMap<String, Arc<dyn ChatProvider>>,
    fallback: Option<Arc<dyn ChatProvider>>,
}

impl std::fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderRegistry")
            .field("entries", &self.entries)
            .field("overrides", &self.overrides.keys().collect::<Vec<_>>())
            .field("fallback", &self.fallback.as_ref().map(|p| p.id().to_string()))
            .finish()
    }
}

impl ProviderRegistry {
    pub fn defaults() -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(
            "ollama".into(),
            ProviderEntry {
                base_url: "http://localhost:11434/v1".into(),
                key_env: None,
                native_tools: false,
                request_timeout: None,
            },
        );
        entries.insert(
            "openai".into(),
            ProviderEntry {
                base_url: "https://api.openai.com/v1".into(),
                key_env: Some("OPENAI_API_KEY".into()),
                native_tools: true,
                request_timeout: None,
            },
        );
        ProviderRegistry {
            entries,
            ..Default::default()
        }
    }

    /// Defaults, overlaid with the file named by `NPCSH_PROVIDERS` if set.
    pub fn from_env() -> Result<Self, GatewayError> {
        let mut reg = Self::defaults();
        if let Ok(path) = std::env::var(PROVIDERS_ENV) {
            reg.load_file(Path::new(&path))?;
        }
        Ok(reg)
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::InvalidConfig {
            message: format!("{}: {e}", path.display()),
        })?;
        self.load_str(&text)
            .map_err(|e| GatewayError::InvalidConfig {
                message: format!("{}: {e}", path.display()),
            })
    }

    pub fn load_str(&mut self, yaml: &str) -> Result<(), GatewayError> {
        let table: BTreeMap<String, ProviderEntry> = serde_yaml::from_str(yaml).map_err(|e| GatewayError::InvalidConfig {
            message: e.to_string(),
        })?;
        for (id, entry) in table {
            self.insert(id, entry)?;
        }
        Ok(())
    }

    pub fn insert(&mut self, id: impl Into<String>, entry: ProviderEntry) -> Result<(), GatewayError> {
        let id = id.into();
        ProviderConfig::new(id.clone(), entry.base_url.clone())?;
        self.entries.insert(id, entry);
        Ok(())
    }

    /// Serve `id` from an in-process provider.
    pub fn register(&mut self, id: impl Into<String>, provider: Arc<dyn ChatProvider>) {
        self.overrides.insert(id.into(), provider);
    }

    /// A registry that answers every id with the same provider.
    pub fn single(provider: Arc<dyn ChatProvider>) -> Self {
        ProviderRegistry {
            fallback: Some(provider),
            ..Default::default()
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.keys().chain(self.overrides.keys()).cloned().collect()
    }

    pub fn config(&self, id: &str) -> Result<ProviderConfig, GatewayError> {
        let entry = self.entries.get(id).ok_or_else(|| GatewayError::UnknownProvider { id: id.into() })?;
        let api_key = entry
            .key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        let cfg = ProviderConfig {
            id: id.to_string(),
            base_url: entry.base_url.clone(),
            api_key,
            supports_native_tools: entry.native_tools,
            request_timeout: entry.request_timeout.map(Duration::from_secs).unwrap_or(DEFAULT_REQUEST_TIMEOUT),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn provider(&self, id: &str) -> Result<Arc<dyn ChatProvider>, GatewayError> {
        if let Some(p) = self.overrides.get(id) {
            return Ok(p.clone());
        }
        if let Some(p) = &self.fallback {
            return Ok(p.clone());
        }
        Ok(Arc::new(HttpProvider::new(self.config(id)?)))
    }
}
