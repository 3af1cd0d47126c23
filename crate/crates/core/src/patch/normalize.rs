use super::{FileChange, Hunk, HunkLine, LineKind, PatchError, StructuredPatch};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_PROFILE: &str = "python-like";

/// Comment and string-literal syntax used when stripping comments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LanguageProfile {
    pub name: &'static str,
    pub line_comments: &'static [&'static str],
    /// Block comments are only recognised when they open and close on one line.
    pub block_comment: Option<(&'static str, &'static str)>,
    pub quotes: &'static [char],
    /// Whether `"""`/`'''` open a string that may contain the single quote.
    pub triple_quotes: bool,
}

const PROFILES: &[LanguageProfile] = &[
    LanguageProfile {
        name: "python-like",
        line_comments: &["#"],
        block_comment: None,
        quotes: &['"', '\''],
        triple_quotes: true,
    },
    LanguageProfile {
        name: "c-like",
        line_comments: &["//"],
        block_comment: Some(("/*", "*/")),
        quotes: &['"', '\'', '`'],
        triple_quotes: false,
    },
    LanguageProfile {
        name: "shell-like",
        line_comments: &["#"],
        block_comment: None,
        quotes: &['"', '\''],
        triple_quotes: false,
    },
    LanguageProfile {
        name: "plain",
        line_comments: &[],
        block_comment: None,
        quotes: &[],
        triple_quotes: false,
    },
];

impl LanguageProfile {
    pub fn lookup(name: &str) -> Result<&'static LanguageProfile, PatchError> {
        PROFILES
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| PatchError::UnknownProfile(name.to_string()))
    }

    pub fn names() -> impl Iterator<Item = &'static str> {
        PROFILES.iter().map(|p| p.name)
    }
}

/// A maximal run of non-context lines inside a hunk, after normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeBlock {
    pub removed: Vec<String>,
    pub added: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedFile {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub blocks: Vec<ChangeBlock>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedPatch {
    /// Hex SHA-256 of [`NormalizedPatch::canonical_form`].
    pub digest: String,
    pub files: Vec<NormalizedFile>,
    pub language_profile: String,
}

impl NormalizedPatch {
    /// The byte string the digest is computed over. Files are sorted by
    /// path so that file order in the diff does not matter.
    pub fn canonical_form(&self) -> String {
        canonical(&self.files, &self.language_profile)
    }

    /// A context-free patch carrying only the normalized edits. Its hunk
    /// positions are synthetic; it exists so normalization can be checked
    /// for idempotence, not for application.
    pub fn reconstruct(&self) -> StructuredPatch {
        let files = self
            .files
            .iter()
            .map(|f| {
                let mut next = 1usize;
                let hunks = f
                    .blocks
                    .iter()
                    .map(|b| {
                        let mut lines: Vec<HunkLine> = b
                            .removed
                            .iter()
                            .map(|t| HunkLine::new(LineKind::Removed, t.clone()))
                            .collect();
                        lines.extend(b.added.iter().map(|t| HunkLine::new(LineKind::Added, t.clone())));
                        let start = if b.removed.is_empty() { next - 1 } else { next };
                        let mut h = Hunk::from_lines(start, next, lines);
                        if b.added.is_empty() {
                            h.new_start = next - 1;
                        }
                        next += b.removed.len().max(1) + 1;
                        h
                    })
                    .collect();
                FileChange {
                    old_path: f.old_path.clone(),
                    new_path: f.new_path.clone(),
                    hunks,
                }
            })
            .collect();
        StructuredPatch { files }
    }
}

fn canonical(files: &[NormalizedFile], profile: &str) -> String {
    let mut sorted: Vec<&NormalizedFile> = files.iter().collect();
    sorted.sort_by(|a, b| (&a.old_path, &a.new_path).cmp(&(&b.old_path, &b.new_path)));
    let mut out = format!("patchvote-normalized/1\nprofile\t{profile}\n");
    for f in sorted {
        out.push_str("file\t");
        out.push_str(f.old_path.as_deref().unwrap_or("/dev/null"));
        out.push('\t');
        out.push_str(f.new_path.as_deref().unwrap_or("/dev/null"));
        out.push('\n');
        for block in &f.blocks {
            out.push_str("@\n");
            for l in &block.removed {
                out.push('-');
                out.push_str(l);
                out.push('\n');
            }
            for l in &block.added {
                out.push('+');
                out.push_str(l);
                out.push('\n');
            }
        }
    }
    out
}

/// Normalizes the added and removed lines of `patch`. Context lines and
/// hunk positions do not contribute.
pub fn normalize(patch: &StructuredPatch, profile: &str) -> Result<NormalizedPatch, PatchError> {
    let lang = LanguageProfile::lookup(profile)?;
    let mut files = Vec::new();
    for change in &patch.files {
        let mut blocks = Vec::new();
        for hunk in &change.hunks {
            let mut block = ChangeBlock {
                removed: Vec::new(),
                added: Vec::new(),
            };
            for line in &hunk.lines {
                match line.kind {
                    LineKind::Context => flush_block(&mut block, &mut blocks),
                    kind => {
                        let norm = normalize_line(&line.text, lang);
                        if norm.is_empty() {
                            continue;
                        }
                        if kind == LineKind::Added {
                            block.added.push(norm);
                        } else {
                            block.removed.push(norm);
                        }
                    }
                }
            }
            flush_block(&mut block, &mut blocks);
        }
        let structural = change.is_creation() || change.is_deletion() || change.is_rename();
        if !blocks.is_empty() || structural {
            files.push(NormalizedFile {
                old_path: change.old_path.clone(),
                new_path: change.new_path.clone(),
                blocks,
            });
        }
    }
    let digest = hex::encode(Sha256::digest(canonical(&files, lang.name).as_bytes()));
    Ok(NormalizedPatch {
        digest,
        files,
        language_profile: lang.name.to_string(),
    })
}

fn flush_block(block: &mut ChangeBlock, blocks: &mut Vec<ChangeBlock>) {
    if !block.removed.is_empty() || !block.added.is_empty() {
        blocks.push(std::mem::replace(
            block,
            ChangeBlock {
                removed: Vec::new(),
                added: Vec::new(),
            },
        ));
    }
}

/// Normalizes one source line: leading indentation is kept verbatim,
/// comments are dropped, whitespace runs outside string literals collapse to
/// one space and trailing whitespace is removed. Blank results become `""`.
pub fn normalize_line(text: &str, profile: &LanguageProfile) -> String {
    let text = text.strip_suffix('\r').unwrap_or(text);
    let body_start = text
        .char_indices()
        .find(|(_, c)| !c.is_whitespace())
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    let (indent, body) = text.split_at(body_start);

    let mut out = String::with_capacity(text.len());
    out.push_str(indent);
    let mut quote: Option<(char, bool)> = None;
    let mut escaped = false;
    let mut i = 0;
    let bytes_len = body.len();
    while i < bytes_len {
        let rest = &body[i..];
        let c = rest.chars().next().expect("in bounds");
        let width = c.len_utf8();

        if let Some((q, triple)) = quote {
            out.push(c);
            i += width;
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                if !triple {
                    quote = None;
                } else if rest.starts_with(&triple_of(q)) {
                    out.push(q);
                    out.push(q);
                    i += 2 * width;
                    quote = None;
                }
            }
            continue;
        }

        if profile.line_comments.iter().any(|tok| rest.starts_with(tok)) {
            break;
        }
        if let Some((open, close)) = profile.block_comment {
            if rest.starts_with(open) {
                if let Some(end) = rest[open.len()..].find(close) {
                    i += open.len() + end + close.len();
                    push_space(&mut out, indent.len());
                    continue;
                }
                // unterminated: the remainder is commentary
                break;
            }
        }
        if c.is_whitespace() {
            push_space(&mut out, indent.len());
            i += width;
            continue;
        }
        if profile.quotes.contains(&c) {
            let triple = profile.triple_quotes && rest.starts_with(&triple_of(c));
            if triple {
                out.push(c);
                out.push(c);
                i += 2 * width;
            }
            quote = Some((c, triple));
        }
        out.push(c);
        i += width;
    }

    let trimmed_len = out.trim_end().len();
    out.truncate(trimmed_len);
    if out.len() <= indent.len() {
        return String::new();
    }
    out
}

fn triple_of(q: char) -> String {
    std::iter::repeat_n(q, 3).collect()
}

fn push_space(out: &mut String, indent_len: usize) {
    if out.len() > indent_len && !out.ends_with(' ') {
        out.push(' ');
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::parse_patch;

    fn py() -> &'static LanguageProfile {
        LanguageProfile::lookup("python-like").unwrap()
    }

    fn digest(raw: &str) -> String {
        normalize(&parse_patch(raw).unwrap(), "python-like").unwrap().digest
    }

    #[test]
    fn line_rules() {
        assert_eq!(normalize_line("    x  =   1   ", py()), "    x = 1");
        assert_eq!(normalize_line("x = 1  # fix", py()), "x = 1");
        assert_eq!(normalize_line("s = 'a  # b'", py()), "s = 'a  # b'");
        assert_eq!(normalize_line("s = \"it's\"  # c", py()), "s = \"it's\"");
        assert_eq!(normalize_line("s = \"\"\"a \" # b\"\"\" # c", py()), "s = \"\"\"a \" # b\"\"\"");
        assert_eq!(normalize_line("s = 'a\\'  #'", py()), "s = 'a\\'  #'");
        assert_eq!(normalize_line("   # only comment", py()), "");
        assert_eq!(normalize_line("\t\t", py()), "");
        assert_eq!(normalize_line("x = 1\r", py()), "x = 1");
    }

    #[test]
    fn c_like_comments() {
        let c = LanguageProfile::lookup("c-like").unwrap();
        assert_eq!(normalize_line("int x = 1; // set", c), "int x = 1;");
        assert_eq!(normalize_line("int /* a */ x = 1;", c), "int x = 1;");
        assert_eq!(normalize_line("s = \"//\";", c), "s = \"//\";");
    }

    #[test]
    fn line_normalization_is_idempotent() {
        for l in ["  a  b  # c", "x='  '  ", "\"\"\"  \"\"\"  #", "  \t y", "q = 'unterminated  "] {
            let once = normalize_line(l, py());
            assert_eq!(normalize_line(&once, py()), once, "{l:?}");
        }
    }

    const BASE: &str = "--- a/m.py\n+++ b/m.py\n@@ -1,3 +1,3 @@\n def f(n):\n-    return range(n)\n+    return range(n + 1)\n x = 2\n";

    #[test]
    fn trailing_space_is_ignored() {
        let noisy = BASE.replace("+    return range(n + 1)\n", "+    return range(n + 1)   \n");
        assert_eq!(digest(BASE), digest(&noisy));
    }

    #[test]
    fn appended_comment_is_ignored() {
        let noisy = BASE.replace("range(n + 1)\n", "range(n + 1)  # include n\n");
        assert_eq!(digest(BASE), digest(&noisy));
    }

    #[test]
    fn identifier_change_is_kept() {
        let other = BASE.replace("range(n + 1)", "range(m + 1)");
        assert_ne!(digest(BASE), digest(&other));
    }

    #[test]
    fn offsets_and_context_are_ignored() {
        let shifted = BASE
            .replace("@@ -1,3 +1,3 @@", "@@ -10,3 +10,3 @@")
            .replace(" x = 2", " y = 3");
        assert_eq!(digest(BASE), digest(&shifted));
    }

    #[test]
    fn blank_added_lines_are_ignored() {
        let noisy = BASE
            .replace("@@ -1,3 +1,3 @@", "@@ -1,3 +1,4 @@")
            .replace("+    return range(n + 1)\n", "+    return range(n + 1)\n+\n");
        assert_eq!(digest(BASE), digest(&noisy));
    }

    #[test]
    fn different_files_differ() {
        let other = BASE.replace("m.py", "n.py");
        assert_ne!(digest(BASE), digest(&other));
    }

    #[test]
    fn unknown_profile() {
        let p = parse_patch(BASE).unwrap();
        assert_eq!(normalize(&p, "cobol").unwrap_err(), PatchError::UnknownProfile("cobol".into()));
    }

    #[test]
    fn reconstruction_is_a_fixpoint() {
        let noisy = BASE.replace("range(n + 1)\n", "range(n  +  1)  # c\n");
        let n = normalize(&parse_patch(&noisy).unwrap(), "python-like").unwrap();
        let rebuilt = n.reconstruct();
        let reparsed = parse_patch(&rebuilt.to_unified()).unwrap();
        assert_eq!(normalize(&reparsed, "python-like").unwrap().digest, n.digest);
    }
}
