use super::{MatchMode, MockProvider, ModelParams, Provider, ProviderError, ProvidersFile, JUDGE_TEMPERATURE};
use crate::trajectory::AgentKind;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

/// Hands out a provider for each agent run.
///
/// `index` is the run index for coders and the voter index for selectors.
/// Stateful providers such as scripted mocks must be fresh per call.
pub trait ProviderSource: Send + Sync {
    fn provider(&self, role: AgentKind, name: &str, index: usize) -> Result<Arc<dyn Provider>, ProviderError>;

    /// Model parameters for `name`; temperature is overridden by callers.
    fn params(&self, name: &str) -> Result<ModelParams, ProviderError> {
        Ok(ModelParams::new(name, name, JUDGE_TEMPERATURE))
    }
}

impl<F> ProviderSource for F
where
    F: Fn(AgentKind, &str, usize) -> Result<Arc<dyn Provider>, ProviderError> + Send + Sync,
{
    fn provider(&self, role: AgentKind, name: &str, index: usize) -> Result<Arc<dyn Provider>, ProviderError> {
        self(role, name, index)
    }
}

/// Providers built from a configuration file. Live providers are shared;
/// mock entries are rebuilt for every run so each gets the whole script.
pub struct ConfiguredProviders {
    file: ProvidersFile,
    live: Mutex<HashMap<String, Arc<dyn Provider>>>,
}

impl ConfiguredProviders {
    pub fn new(file: ProvidersFile) -> Self {
        ConfiguredProviders {
            file,
            live: Mutex::new(HashMap::new()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self::new(ProvidersFile::load(path)?))
    }
}

impl ProviderSource for ConfiguredProviders {
    fn provider(&self, _role: AgentKind, name: &str, _index: usize) -> Result<Arc<dyn Provider>, ProviderError> {
        let cfg = self.file.get(name)?;
        if cfg.provider == super::ProviderKind::Mock {
            return cfg.build();
        }
        let mut live = self.live.lock().expect("provider cache");
        if let Some(p) = live.get(name) {
            return Ok(p.clone());
        }
        let p = cfg.build()?;
        live.insert(name.to_string(), p.clone());
        Ok(p)
    }

    fn params(&self, name: &str) -> Result<ModelParams, ProviderError> {
        Ok(self.file.get(name)?.params())
    }
}

/// Scripted providers read from a transcript directory:
/// `coder/run_{k}.json`, `tester.json`, `selector/voter_{k}.json` and
/// `lakeview.json`, all in the mock transcript format.
///
/// A file `coder/{name}/run_{k}.json` takes precedence when present, so a
/// mixture of named providers can be scripted separately.
#[derive(Debug, Clone)]
pub struct TranscriptProviders {
    root: PathBuf,
}

impl TranscriptProviders {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        TranscriptProviders { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, role: AgentKind, name: &str, index: usize) -> PathBuf {
        let (dir, file) = match role {
            AgentKind::Coder => ("coder", format!("run_{index}.json")),
            AgentKind::Selector => ("selector", format!("voter_{index}.json")),
            AgentKind::Tester => return self.root.join("tester.json"),
            AgentKind::Lakeview => return self.root.join("lakeview.json"),
        };
        let named = self.root.join(dir).join(name).join(&file);
        if named.is_file() {
            named
        } else {
            self.root.join(dir).join(file)
        }
    }
}

impl ProviderSource for TranscriptProviders {
    fn provider(&self, role: AgentKind, name: &str, index: usize) -> Result<Arc<dyn Provider>, ProviderError> {
        let path = self.path_for(role, name, index);
        Ok(Arc::new(MockProvider::from_file(name, &path, MatchMode::Sequence)?))
    }
}
