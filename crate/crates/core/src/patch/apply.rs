use super::parse::hunk_begin;
use super::{FileChange, LineKind, PatchError, StructuredPatch};
use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

/// An in-memory snapshot of a directory tree, keyed by `/`-separated
/// relative path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileTree {
    files: BTreeMap<String, Vec<u8>>,
}

/// Directory names never captured into a snapshot.
const SKIPPED_DIRS: &[&str] = &[".git"];

impl FileTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads every regular file under `root`. Symlinks are not followed.
    pub fn from_dir(root: &Path) -> io::Result<Self> {
        let mut files = BTreeMap::new();
        collect(root, root, &mut files)?;
        Ok(FileTree { files })
    }

    /// Writes the snapshot under `root`, creating parent directories.
    pub fn write_to(&self, root: &Path) -> io::Result<()> {
        for (path, content) in &self.files {
            let target = root.join(path);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(target, content)?;
        }
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.files.get(path).map(Vec::as_slice)
    }

    pub fn get_text(&self, path: &str) -> Option<&str> {
        self.get(path).and_then(|b| std::str::from_utf8(b).ok())
    }

    pub fn insert(&mut self, path: impl Into<String>, content: impl Into<Vec<u8>>) {
        self.files.insert(path.into(), content.into());
    }

    pub fn remove(&mut self, path: &str) -> Option<Vec<u8>> {
        self.files.remove(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.files.contains_key(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.files.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let file_type = entry.file_type()?;
        let path = entry.path();
        if file_type.is_dir() {
            if SKIPPED_DIRS.iter().any(|d| entry.file_name() == *d) {
                continue;
            }
            collect(root, &path, out)?;
        } else if file_type.is_file() {
            let rel = path
                .strip_prefix(root)
                .expect("walked path is under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.insert(rel, fs::read(&path)?);
        }
    }
    Ok(())
}

/// Applies `patch` to a copy of `tree`. Hunks must match exactly at their
/// declared positions; there is no offset search or fuzz.
pub fn apply_patch(tree: &FileTree, patch: &StructuredPatch) -> Result<FileTree, PatchError> {
    let mut out = tree.clone();
    for change in &patch.files {
        apply_file(&mut out, change)?;
    }
    Ok(out)
}

fn apply_file(tree: &mut FileTree, change: &FileChange) -> Result<(), PatchError> {
    let original: Vec<u8> = match &change.old_path {
        None => {
            let path = change.new_path.as_deref().unwrap_or_default();
            if tree.contains(path) {
                return Err(PatchError::FileExists(path.to_string()));
            }
            Vec::new()
        }
        Some(path) => tree
            .get(path)
            .ok_or_else(|| PatchError::MissingFile(path.clone()))?
            .to_vec(),
    };
    let label = change.display_path().to_string();
    let text = String::from_utf8(original).map_err(|_| PatchError::NotText(label.clone()))?;
    let patched = apply_hunks(&text, change, &label)?;

    if let Some(old) = &change.old_path {
        tree.remove(old);
    }
    match &change.new_path {
        Some(new) => tree.insert(new.clone(), patched.into_bytes()),
        None if !patched.is_empty() => {
            return Err(PatchError::HunkMismatch {
                path: label,
                hunk: change.hunks.len(),
                line: 0,
            })
        }
        None => {}
    }
    Ok(())
}

struct SourceLine<'a> {
    text: &'a str,
    newline: bool,
}

fn split_source(text: &str) -> Vec<SourceLine<'_>> {
    let mut lines = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        match rest.find('\n') {
            Some(i) => {
                lines.push(SourceLine {
                    text: &rest[..i],
                    newline: true,
                });
                rest = &rest[i + 1..];
            }
            None => {
                lines.push(SourceLine {
                    text: rest,
                    newline: false,
                });
                rest = "";
            }
        }
    }
    lines
}

fn push_line(out: &mut String, text: &str, newline: bool) {
    out.push_str(text);
    if newline {
        out.push('\n');
    }
}

fn apply_hunks(text: &str, change: &FileChange, label: &str) -> Result<String, PatchError> {
    let source = split_source(text);
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0usize;

    for (hunk_no, hunk) in change.hunks.iter().enumerate() {
        let mismatch = |line: usize| PatchError::HunkMismatch {
            path: label.to_string(),
            hunk: hunk_no + 1,
            line,
        };
        let begin = hunk_begin(hunk);
        if begin < cursor || begin > source.len() {
            return Err(mismatch(begin + 1));
        }
        for line in &source[cursor..begin] {
            push_line(&mut out, line.text, line.newline);
        }
        let mut pos = begin;
        for line in &hunk.lines {
            if line.kind != LineKind::Added {
                let Some(src) = source.get(pos) else {
                    return Err(mismatch(pos + 1));
                };
                if src.text != line.text || src.newline == line.no_newline {
                    return Err(mismatch(pos + 1));
                }
                pos += 1;
            }
            if line.kind != LineKind::Removed {
                push_line(&mut out, &line.text, !line.no_newline);
            }
        }
        cursor = pos;
    }
    for line in &source[cursor..] {
        push_line(&mut out, line.text, line.newline);
    }
    Ok(out)
}
