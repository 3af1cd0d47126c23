use super::{FileChange, FileTree, Hunk, HunkLine, LineKind, StructuredPatch};
use similar::{Algorithm, DiffTag, TextDiff};

#[derive(Debug, Clone)]
pub struct DiffOptions {
    pub context: usize,
    /// Path segments (`__pycache__`) or `*.ext` suffix patterns to skip.
    pub ignore: Vec<String>,
}

impl Default for DiffOptions {
    fn default() -> Self {
        DiffOptions {
            context: 3,
            ignore: ["__pycache__", ".pytest_cache", ".git", "*.pyc", "*.pyo"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl DiffOptions {
    fn ignored(&self, path: &str) -> bool {
        self.ignore.iter().any(|pat| match pat.strip_prefix('*') {
            Some(suffix) => path.ends_with(suffix),
            None => path.split('/').any(|seg| seg == pat),
        })
    }
}

/// Computes the patch that turns `old` into `new`.
///
/// Files that are not UTF-8 on either side are skipped and their paths
/// returned alongside the patch.
pub fn diff_trees(old: &FileTree, new: &FileTree, opts: &DiffOptions) -> (StructuredPatch, Vec<String>) {
    let mut paths: Vec<&str> = old.paths().chain(new.paths()).collect();
    paths.sort_unstable();
    paths.dedup();

    let mut files = Vec::new();
    let mut skipped = Vec::new();
    for path in paths {
        if opts.ignored(path) {
            continue;
        }
        let (before, after) = (old.get(path), new.get(path));
        if before == after {
            continue;
        }
        let before_text = before.map(std::str::from_utf8).transpose();
        let after_text = after.map(std::str::from_utf8).transpose();
        let (Ok(before_text), Ok(after_text)) = (before_text, after_text) else {
            skipped.push(path.to_string());
            continue;
        };
        let hunks = diff_text(before_text.unwrap_or(""), after_text.unwrap_or(""), opts.context);
        files.push(FileChange {
            old_path: before.map(|_| path.to_string()),
            new_path: after.map(|_| path.to_string()),
            hunks,
        });
    }
    (StructuredPatch { files }, skipped)
}

fn to_line(kind: LineKind, raw: &str) -> HunkLine {
    match raw.strip_suffix('\n') {
        Some(text) => HunkLine::new(kind, text),
        None => HunkLine {
            kind,
            text: raw.to_string(),
            no_newline: true,
        },
    }
}

pub(crate) fn diff_text(old: &str, new: &str, context: usize) -> Vec<Hunk> {
    let diff = TextDiff::configure()
        .algorithm(Algorithm::Myers)
        .diff_lines(old, new);
    let old_lines = diff.old_slices();
    let new_lines = diff.new_slices();

    let mut hunks = Vec::new();
    for group in diff.grouped_ops(context) {
        let (Some(first), Some(last)) = (group.first(), group.last()) else {
            continue;
        };
        let old_range = first.old_range().start..last.old_range().end;
        let new_range = first.new_range().start..last.new_range().end;
        let mut lines = Vec::new();
        for op in &group {
            let (tag, o, n) = op.as_tag_tuple();
            match tag {
                DiffTag::Equal => {
                    lines.extend(old_lines[o].iter().map(|l| to_line(LineKind::Context, l)))
                }
                DiffTag::Delete => {
                    lines.extend(old_lines[o].iter().map(|l| to_line(LineKind::Removed, l)))
                }
                DiffTag::Insert => {
                    lines.extend(new_lines[n].iter().map(|l| to_line(LineKind::Added, l)))
                }
                DiffTag::Replace => {
                    lines.extend(old_lines[o].iter().map(|l| to_line(LineKind::Removed, l)));
                    lines.extend(new_lines[n].iter().map(|l| to_line(LineKind::Added, l)));
                }
            }
        }
        let start = |r: &std::ops::Range<usize>| if r.is_empty() { r.start } else { r.start + 1 };
        let mut hunk = Hunk::from_lines(start(&old_range), start(&new_range), lines);
        debug_assert_eq!(hunk.old_len, old_range.len());
        hunk.new_len = new_range.len();
        hunks.push(hunk);
    }
    hunks
}
