//! Unified-diff patch model.
//!
//! Candidate patches arrive as raw unified-diff text. They are parsed into a
//! [`StructuredPatch`], normalized into a [`NormalizedPatch`] whose digest
//! identifies textually-equivalent edits, grouped into equivalence classes,
//! and applied to in-memory [`FileTree`]s.

mod apply;
mod dedup;
mod diff;
mod normalize;
mod parse;

pub use apply::{apply_patch, FileTree};
pub use dedup::{deduplicate, DedupReport, EquivalenceClass, InvalidEntry};
pub use diff::{diff_trees, DiffOptions};
pub use normalize::{
    normalize, normalize_line, ChangeBlock, LanguageProfile, NormalizedFile, NormalizedPatch,
    DEFAULT_PROFILE,
};
pub use parse::{parse_patch, parse_patch_bytes};

use serde::{Deserialize, Serialize};
use std::fmt;

/// One candidate patch produced by a single coder-agent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePatch {
    pub id: String,
    pub raw_text: String,
    pub generator: String,
    pub temperature: f64,
    pub run_index: usize,
    /// Set when the run finished without touching the tree.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty: bool,
}

impl CandidatePatch {
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>, run_index: usize) -> Self {
        CandidatePatch {
            id: id.into(),
            raw_text: raw_text.into(),
            generator: String::new(),
            temperature: 0.0,
            run_index,
            empty: false,
        }
    }

    /// Ordering key used for deterministic representatives.
    pub fn order_key(&self) -> (usize, &str) {
        (self.run_index, self.id.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Context,
    Added,
    Removed,
}

impl LineKind {
    fn prefix(self) -> char {
        match self {
            LineKind::Context => ' ',
            LineKind::Added => '+',
            LineKind::Removed => '-',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkLine {
    pub kind: LineKind,
    pub text: String,
    /// The line is the last line of its file and has no trailing newline.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_newline: bool,
}

impl HunkLine {
    pub fn new(kind: LineKind, text: impl Into<String>) -> Self {
        HunkLine {
            kind,
            text: text.into(),
            no_newline: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    /// Trailing text after the closing `@@`, usually a function name.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub section: String,
    pub lines: Vec<HunkLine>,
}

impl Hunk {
    /// Builds a hunk and derives its lengths from the lines.
    pub fn from_lines(old_start: usize, new_start: usize, lines: Vec<HunkLine>) -> Self {
        let old_len = lines.iter().filter(|l| l.kind != LineKind::Added).count();
        let new_len = lines.iter().filter(|l| l.kind != LineKind::Removed).count();
        Hunk {
            old_start,
            old_len,
            new_start,
            new_len,
            section: String::new(),
            lines,
        }
    }

    pub fn counts_consistent(&self) -> bool {
        let old = self.lines.iter().filter(|l| l.kind != LineKind::Added).count();
        let new = self.lines.iter().filter(|l| l.kind != LineKind::Removed).count();
        old == self.old_len && new == self.new_len
    }
}

/// Changes to one file. `None` on either side stands for `/dev/null`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChange {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub hunks: Vec<Hunk>,
}

impl FileChange {
    pub fn is_creation(&self) -> bool {
        self.old_path.is_none()
    }

    pub fn is_deletion(&self) -> bool {
        self.new_path.is_none()
    }

    pub fn is_rename(&self) -> bool {
        matches!((&self.old_path, &self.new_path), (Some(a), Some(b)) if a != b)
    }

    /// Path shown to users: the new path when present.
    pub fn display_path(&self) -> &str {
        self.new_path
            .as_deref()
            .or(self.old_path.as_deref())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredPatch {
    pub files: Vec<FileChange>,
}

impl StructuredPatch {
    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Serializes the patch as git-style unified diff text.
    pub fn to_unified(&self) -> String {
        let mut out = String::new();
        for file in &self.files {
            let a = file.old_path.as_deref().or(file.new_path.as_deref()).unwrap_or_default();
            let b = file.new_path.as_deref().or(file.old_path.as_deref()).unwrap_or_default();
            out.push_str(&format!("diff --git a/{a} b/{b}\n"));
            if file.is_creation() {
                out.push_str("new file mode 100644\n");
            } else if file.is_deletion() {
                out.push_str("deleted file mode 100644\n");
            } else if file.is_rename() {
                out.push_str(&format!("rename from {a}\nrename to {b}\n"));
            }
            if file.hunks.is_empty() {
                continue;
            }
            match &file.old_path {
                Some(p) => out.push_str(&format!("--- a/{p}\n")),
                None => out.push_str("--- /dev/null\n"),
            }
            match &file.new_path {
                Some(p) => out.push_str(&format!("+++ b/{p}\n")),
                None => out.push_str("+++ /dev/null\n"),
            }
            for hunk in &file.hunks {
                out.push_str(&format!(
                    "@@ -{},{} +{},{} @@{}\n",
                    hunk.old_start, hunk.old_len, hunk.new_start, hunk.new_len, hunk.section
                ));
                for line in &hunk.lines {
                    out.push(line.kind.prefix());
                    out.push_str(&line.text);
                    out.push('\n');
                    if line.no_newline {
                        out.push_str("\\ No newline at end of file\n");
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for StructuredPatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_unified())
    }
}

/// Why a diff was rejected by the parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    Empty,
    InvalidUtf8,
    NoFiles,
    BadHeader,
    BadHunkHeader,
    HunkTooShort,
    HunkTooLong,
    HunkWithoutFile,
    OverlappingHunks,
    UnsafePath,
    Binary,
}

impl InvalidReason {
    pub fn as_str(self) -> &'static str {
        match self {
            InvalidReason::Empty => "empty",
            InvalidReason::InvalidUtf8 => "invalid_utf8",
            InvalidReason::NoFiles => "no_files",
            InvalidReason::BadHeader => "bad_header",
            InvalidReason::BadHunkHeader => "bad_hunk_header",
            InvalidReason::HunkTooShort => "hunk_too_short",
            InvalidReason::HunkTooLong => "hunk_too_long",
            InvalidReason::HunkWithoutFile => "hunk_without_file",
            InvalidReason::OverlappingHunks => "overlapping_hunks",
            InvalidReason::UnsafePath => "unsafe_path",
            InvalidReason::Binary => "binary",
        }
    }
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatchError {
    #[error("invalid patch ({reason}) at line {line}: {detail}")]
    InvalidPatch {
        reason: InvalidReason,
        line: usize,
        detail: String,
    },
    #[error("unknown normalization profile `{0}`")]
    UnknownProfile(String),
    #[error("hunk #{hunk} does not match `{path}` at line {line}")]
    HunkMismatch {
        path: String,
        hunk: usize,
        line: usize,
    },
    #[error("file `{0}` does not exist")]
    MissingFile(String),
    #[error("file `{0}` already exists")]
    FileExists(String),
    #[error("file `{0}` is not UTF-8 text")]
    NotText(String),
    #[error("no patches given")]
    EmptyInput,
}

impl PatchError {
    pub(crate) fn invalid(reason: InvalidReason, line: usize, detail: impl Into<String>) -> Self {
        PatchError::InvalidPatch {
            reason,
            line,
            detail: detail.into(),
        }
    }

    /// Short machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            PatchError::InvalidPatch { reason, .. } => reason.as_str(),
            PatchError::UnknownProfile(_) => "unknown_profile",
            PatchError::HunkMismatch { .. } => "hunk_mismatch",
            PatchError::MissingFile(_) => "missing_file",
            PatchError::FileExists(_) => "file_exists",
            PatchError::NotText(_) => "not_text",
            PatchError::EmptyInput => "empty_input",
        }
    }
}

/// Rejects absolute paths, empty paths and `..` segments.
pub(crate) fn is_safe_relative_path(path: &str) -> bool {
    if path.is_empty() || path.starts_with('/') || path.starts_with('\\') || path.contains('\0') {
        return false;
    }
    if path.len() >= 2 && path.as_bytes()[1] == b':' {
        return false;
    }
    path.split(['/', '\\'])
        .all(|seg| !seg.is_empty() && seg != ".." && seg != ".")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn safe_paths() {
        assert!(is_safe_relative_path("src/lib.py"));
        assert!(!is_safe_relative_path(""));
        assert!(!is_safe_relative_path("/etc/passwd"));
        assert!(!is_safe_relative_path("a/../../b"));
        assert!(!is_safe_relative_path("a//b"));
        assert!(!is_safe_relative_path("C:\\x"));
    }

    #[test]
    fn hunk_lengths_from_lines() {
        let h = Hunk::from_lines(
            1,
            1,
            vec![
                HunkLine::new(LineKind::Context, "a"),
                HunkLine::new(LineKind::Removed, "b"),
                HunkLine::new(LineKind::Added, "c"),
                HunkLine::new(LineKind::Added, "d"),
            ],
        );
        assert_eq!((h.old_len, h.new_len), (2, 3));
        assert!(h.counts_consistent());
    }
}
