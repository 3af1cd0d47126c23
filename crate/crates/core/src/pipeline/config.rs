use crate::coder::{EnsembleConfig, IssueTask};
use crate::patch::DEFAULT_PROFILE;
use crate::regression::{RefineOptions, RunnerConfig};
use crate::selector::SelectorConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::PipelineError;

/// Preset configurations that switch off one part of the pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    #[default]
    #[serde(rename = "full")]
    Full,
    /// No deduplication.
    #[serde(rename = "woD")]
    WoD,
    /// No regression pruning.
    #[serde(rename = "woR")]
    WoR,
    /// No pruning at all.
    #[serde(rename = "woP")]
    WoP,
    /// A single selector vote.
    #[serde(rename = "woM")]
    WoM,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [Ablation::Full, Ablation::WoD, Ablation::WoR, Ablation::WoP, Ablation::WoM];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::WoD => "woD",
            Ablation::WoR => "woR",
            Ablation::WoP => "woP",
            Ablation::WoM => "woM",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, PipelineError> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| PipelineError::Config(format!("unknown ablation `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pruning {
    pub dedup: bool,
    pub regression: bool,
}

impl Default for Pruning {
    fn default() -> Self {
        Pruning { dedup: true, regression: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionStageConfig {
    pub runner: RunnerConfig,
    /// Ask the tester model to narrow the initial tests.
    #[serde(default = "yes")]
    pub refine: bool,
    #[serde(default = "mock_name")]
    pub tester: String,
    #[serde(default)]
    pub refine_options: RefineOptions,
    /// Fixed initial test set; discovered from the codebase when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_tests: Option<Vec<String>>,
}

fn yes() -> bool {
    true
}

fn mock_name() -> String {
    "mock".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub issue_id: String,
    pub issue_text: Option<String>,
    pub issue_file: Option<PathBuf>,
    pub codebase: PathBuf,
    pub language_profile: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: Option<PathBuf>,
    /// Directory of mock transcripts (`coder/run_K.json`, ...).
    pub transcripts: Option<PathBuf>,
    /// Providers file for live models.
    pub providers: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub ablation: Ablation,
    pub task: Option<TaskConfig>,
    pub ensemble: EnsembleConfig,
    pub pruning: Pruning,
    pub regression: Option<RegressionStageConfig>,
    pub selector: SelectorConfig,
    pub paths: Paths,
}

impl PipelineConfig {
    /// Reads TOML, or JSON when the extension is `.json`. Relative paths
    /// are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = cfg.task.as_mut() {
            fix(&mut t.codebase);
            if let Some(f) = t.issue_file.as_mut() {
                fix(f);
            }
        }
        for p in [&mut cfg.paths.out_dir, &mut cfg.paths.transcripts, &mut cfg.paths.providers]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        Ok(cfg)
    }

    /// The configuration actually run: ablation preset applied and the
    /// global seed copied into every stage.
    pub fn effective(&self) -> PipelineConfig {
        let mut c = self.clone();
        match c.ablation {
            Ablation::Full => {}
            Ablation::WoD => c.pruning.dedup = false,
            Ablation::WoR => c.pruning.regression = false,
            Ablation::WoP => c.pruning = Pruning { dedup: false, regression: false },
            Ablation::WoM => c.selector.voters = Some(1),
        }
        c.ensemble.seed = c.seed;
        c.selector.seed = c.seed;
        c
    }

    pub fn with_ablation(&self, ablation: Ablation) -> PipelineConfig {
        PipelineConfig { ablation, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.ensemble.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.effective().pruning.regression && self.regression.is_none() {
            return Err(PipelineError::Config(
                "regression pruning is on but no [regression] runner is configured".into(),
            ));
        }
        if self.selector.providers.is_empty() {
            return Err(PipelineError::Config("selector providers list is empty".into()));
        }
        if self.selector.voters == Some(0) {
            return Err(PipelineError::Config("selector voters must be at least 1".into()));
        }
        Ok(())
    }

    /// Builds the issue task from `[task]`.
    pub fn task(&self) -> Result<IssueTask, PipelineError> {
        let t = self.task.as_ref().ok_or_else(|| PipelineError::Config("no [task] section".into()))?;
        let issue_text = match (&t.issue_text, &t.issue_file) {
            (Some(text), _) => text.clone(),
            (None, Some(f)) => std::fs::read_to_string(f)
                .map_err(|e| PipelineError::Config(format!("cannot read issue file {}: {e}", f.display())))?,
            (None, None) => return Err(PipelineError::Config("task needs issue_text or issue_file".into())),
        };
        let task = IssueTask {
            issue_id: t.issue_id.clone(),
            issue_text,
            codebase: t.codebase.clone(),
            language_profile: t.language_profile.clone().unwrap_or_else(|| DEFAULT_PROFILE.into()),
        };
        task.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(task)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let base = PipelineConfig { seed: 9, ..Default::default() };
        let d = base.with_ablation(Ablation::WoD).effective();
        assert_eq!(d.pruning, Pruning { dedup: false, regression: true });
        let p = base.with_ablation(Ablation::WoP).effective();
        assert_eq!(p.pruning, Pruning { dedup: false, regression: false });
        assert!(!base.with_ablation(Ablation::WoR).effective().pruning.regression);
        let m = base.with_ablation(Ablation::WoM).effective();
        assert_eq!(m.selector.voters, Some(1));
        assert_eq!((m.ensemble.seed, m.selector.seed), (9, 9));
        assert_eq!("wod".parse::<Ablation>().unwrap(), Ablation::WoD);
    }

    #[test]
    fn toml_round_trip_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("repo")).unwrap();
        std::fs::write(dir.path().join("issue.md"), "it breaks\n").unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            r#"
seed = 3
ablation = "woR"

[task]
issue_id = "x"
issue_file = "issue.md"
codebase = "repo"

[ensemble]
ensemble_size = 2

[selector]
max_rounds = 10

[paths]
out_dir = "out"
transcripts = "t"
"#,
        )
        .unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.ablation, Ablation::WoR);
        assert_eq!(cfg.paths.out_dir.as_deref(), Some(dir.path().join("out").as_path()));
        cfg.validate().unwrap();
        let task = cfg.task().unwrap();
        assert_eq!(task.issue_text, "it breaks\n");
        assert!(cfg.with_ablation(Ablation::Full).validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<PipelineConfig>("sed = 1").is_err());
    }
}
