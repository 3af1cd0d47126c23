use super::{AnthropicProvider, MatchMode, MockProvider, ModelParams, OpenAiProvider, Provider, ProviderError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Openai,
    Azure,
    Anthropic,
    Mock,
}

/// One entry of a provider configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    /// Name used in round-robin lists and trajectories.
    pub name: String,
    pub provider: ProviderKind,
    pub model: String,
    /// Environment variable holding the API key; the key itself never
    /// appears in configuration files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_version: Option<String>,
    /// Mock transcript path, relative to the configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_mode: Option<MatchMode>,
}

fn default_temperature() -> f64 {
    super::GENERATION_TEMPERATURE
}

fn default_max_tokens() -> u32 {
    4096
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProvidersFile {
    pub providers: Vec<ProviderConfig>,
}

impl ProvidersFile {
    /// Reads TOML or JSON, chosen by file extension.
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::InvalidRequest(format!("cannot read {}: {e}", path.display())))?;
        let mut file: ProvidersFile = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ProviderError::InvalidRequest(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| ProviderError::InvalidRequest(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut file.providers {
            if let Some(t) = &p.transcript {
                if t.is_relative() {
                    p.transcript = Some(base.join(t));
                }
            }
        }
        Ok(file)
    }

    pub fn get(&self, name: &str) -> Result<&ProviderConfig, ProviderError> {
        self.providers
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| ProviderError::UnknownProvider(name.to_string()))
    }
}

impl ProviderConfig {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            max_tokens: self.max_tokens,
            ..ModelParams::new(&self.name, &self.model, self.temperature)
        }
    }

    fn api_key(&self) -> Result<String, ProviderError> {
        let var = self.api_key_env.clone().unwrap_or_else(|| match self.provider {
            ProviderKind::Openai => "OPENAI_API_KEY".into(),
            ProviderKind::Azure => "AZURE_OPENAI_API_KEY".into(),
            ProviderKind::Anthropic => "ANTHROPIC_API_KEY".into(),
            ProviderKind::Mock => String::new(),
        });
        std::env::var(&var).map_err(|_| ProviderError::MissingCredentials(var))
    }

    pub fn build(&self) -> Result<Arc<dyn Provider>, ProviderError> {
        Ok(match self.provider {
            ProviderKind::Openai => Arc::new(OpenAiProvider::openai(&self.name, self.base_url.clone(), self.api_key()?)),
            ProviderKind::Azure => {
                let base = self
                    .base_url
                    .clone()
                    .ok_or_else(|| ProviderError::InvalidRequest("azure provider needs base_url".into()))?;
                let version = self.api_version.clone().unwrap_or_else(|| "2024-06-01".into());
                Arc::new(OpenAiProvider::azure(&self.name, base, self.api_key()?, version))
            }
            ProviderKind::Anthropic => {
                Arc::new(AnthropicProvider::new(&self.name, self.base_url.clone(), self.api_key()?))
            }
            ProviderKind::Mock => {
                let path = self
                    .transcript
                    .as_ref()
                    .ok_or_else(|| ProviderError::InvalidRequest("mock provider needs a transcript".into()))?;
                Arc::new(MockProvider::from_file(&self.name, path, self.match_mode.unwrap_or(MatchMode::Sequence))?)
            }
        })
    }
}
