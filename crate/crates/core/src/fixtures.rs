//! Bundled toy issues with golden tests and scripted transcripts.
//!
//! Layout of `fixtures/<name>/`:
//!
//! ```text
//! fixture.json       issue text, golden test ids, test runner
//! repo/              the codebase, unpatched
//! golden/            golden test files, overlaid on the repo when grading
//! reference.patch    a known-correct fix
//! transcripts/       mock responses: coder/run_K.json, tester.json, selector/voter_K.json
//! checksums.json     SHA-256 of every other file
//! ```

use crate::coder::IssueTask;
use crate::eval::CorrectnessMatrix;
use crate::llm::TranscriptProviders;
use crate::patch::{CandidatePatch, FileTree, DEFAULT_PROFILE};
use crate::regression::{evaluate_patch, RunnerConfig, RunnerError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const FIXTURE_NAMES: [&str; 5] = ["offbyone", "multifile", "duplicates", "regtrap", "allfail"];
const CHECKSUMS: &str = "checksums.json";

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("fixture file `{path}` fails its checksum")]
    IntegrityError { path: String },
    #[error("fixture metadata: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMeta {
    pub name: String,
    pub issue_id: String,
    pub description: String,
    pub issue_text: String,
    pub ensemble_size: usize,
    pub golden_tests: Vec<String>,
    pub runner: RunnerConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checksums {
    algorithm: String,
    files: BTreeMap<String, String>,
}

/// A fixture materialized into a scratch directory.
#[derive(Debug)]
pub struct ToyIssue {
    pub meta: FixtureMeta,
    pub repo: FileTree,
    pub golden: FileTree,
    pub reference_patch: String,
    scratch: tempfile::TempDir,
}

/// Directory holding the bundled fixtures, overridable with
/// `PATCHVOTE_FIXTURES`.
pub fn fixtures_dir() -> PathBuf {
    std::env::var_os("PATCHVOTE_FIXTURES")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"))
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn files_under(dir: &Path) -> std::io::Result<BTreeMap<String, Vec<u8>>> {
    let tree = FileTree::from_dir(dir)?;
    Ok(tree
        .iter()
        .filter(|(p, _)| *p != CHECKSUMS)
        .map(|(p, b)| (p.to_string(), b.to_vec()))
        .collect())
}

/// Writes `checksums.json` for the fixture in `dir`.
pub fn seal(dir: &Path) -> Result<(), FixtureError> {
    let files = files_under(dir)?.into_iter().map(|(p, b)| (p, digest(&b))).collect();
    let sums = Checksums { algorithm: "sha256".into(), files };
    let text = serde_json::to_string_pretty(&sums).map_err(|e| FixtureError::Parse(e.to_string()))?;
    std::fs::write(dir.join(CHECKSUMS), text + "\n")?;
    Ok(())
}

/// Checks every file in `dir` against `checksums.json`. Missing, extra and
/// altered files all fail.
pub fn verify(dir: &Path) -> Result<(), FixtureError> {
    let text = std::fs::read_to_string(dir.join(CHECKSUMS)).map_err(|_| FixtureError::IntegrityError {
        path: CHECKSUMS.into(),
    })?;
    let sums: Checksums = serde_json::from_str(&text).map_err(|_| FixtureError::IntegrityError {
        path: CHECKSUMS.into(),
    })?;
    let actual = files_under(dir)?;
    for (path, bytes) in &actual {
        if sums.files.get(path) != Some(&digest(bytes)) {
            return Err(FixtureError::IntegrityError { path: path.clone() });
        }
    }
    if let Some(missing) = sums.files.keys().find(|p| !actual.contains_key(*p)) {
        return Err(FixtureError::IntegrityError { path: missing.clone() });
    }
    Ok(())
}

pub fn load_fixture(name: &str) -> Result<ToyIssue, FixtureError> {
    load_fixture_from(&fixtures_dir(), name)
}

/// Verifies fixture `name` under `root` and copies it into a fresh scratch
/// directory.
pub fn load_fixture_from(root: &Path, name: &str) -> Result<ToyIssue, FixtureError> {
    let dir = root.join(name);
    if name.contains(['/', '\\']) || name.starts_with('.') || !dir.join("fixture.json").is_file() {
        return Err(FixtureError::UnknownFixture(name.to_string()));
    }
    verify(&dir)?;
    let meta: FixtureMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("fixture.json"))?)
        .map_err(|e| FixtureError::Parse(e.to_string()))?;
    let scratch = tempfile::Builder::new().prefix(&format!("patchvote-fx-{name}-")).tempdir()?;
    let all = FileTree::from_dir(&dir)?;
    all.write_to(scratch.path())?;
    Ok(ToyIssue {
        repo: FileTree::from_dir(&dir.join("repo"))?,
        golden: FileTree::from_dir(&dir.join("golden"))?,
        reference_patch: std::fs::read_to_string(dir.join("reference.patch"))?,
        meta,
        scratch,
    })
}

impl ToyIssue {
    pub fn dir(&self) -> &Path {
        self.scratch.path()
    }

    pub fn codebase(&self) -> PathBuf {
        self.dir().join("repo")
    }

    pub fn transcripts(&self) -> PathBuf {
        self.dir().join("transcripts")
    }

    pub fn providers(&self) -> TranscriptProviders {
        TranscriptProviders::new(self.transcripts())
    }

    pub fn task(&self) -> IssueTask {
        IssueTask {
            issue_id: self.meta.issue_id.clone(),
            issue_text: self.meta.issue_text.clone(),
            codebase: self.codebase(),
            language_profile: DEFAULT_PROFILE.into(),
        }
    }

    /// The repo with the golden test files added.
    pub fn with_golden(&self, tree: &FileTree) -> FileTree {
        let mut t = tree.clone();
        for (p, b) in self.golden.iter() {
            t.insert(p, b.to_vec());
        }
        t
    }

    /// Whether `patch` makes every golden test pass.
    pub fn grade(&self, patch: &CandidatePatch) -> Result<bool, RunnerError> {
        let tree = self.with_golden(&self.repo);
        evaluate_patch(patch, &tree, &self.meta.golden_tests, &self.meta.runner).map(|o| o.clean())
    }

    pub fn reference(&self) -> CandidatePatch {
        CandidatePatch::new(format!("{}-reference", self.meta.issue_id), self.reference_patch.clone(), 0)
    }
}

/// Random matrix with `issues` rows of `width` outcomes, each true with
/// probability `p`.
pub fn synthetic_matrix(issues: usize, width: usize, p: f64, seed: u64) -> CorrectnessMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..issues).map(|_| (0..width).map(|_| rng.gen_bool(p)).collect()).collect();
    CorrectnessMatrix::from_rows(rows).expect("rows have equal width")
}
