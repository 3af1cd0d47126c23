use super::{
    is_safe_relative_path, FileChange, Hunk, HunkLine, InvalidReason, LineKind, PatchError,
    StructuredPatch,
};

/// Parses raw bytes, rejecting anything that is not UTF-8.
pub fn parse_patch_bytes(raw: &[u8]) -> Result<StructuredPatch, PatchError> {
    match std::str::from_utf8(raw) {
        Ok(text) => parse_patch(text),
        Err(e) => Err(PatchError::invalid(
            InvalidReason::InvalidUtf8,
            0,
            format!("invalid byte at offset {}", e.valid_up_to()),
        )),
    }
}

/// Parses a plain or git-flavoured unified diff.
///
/// Text outside file blocks (mail headers, commit messages) is ignored.
/// Hunk bodies must match their declared line counts exactly.
pub fn parse_patch(raw: &str) -> Result<StructuredPatch, PatchError> {
    if raw.trim().is_empty() {
        return Err(PatchError::invalid(InvalidReason::Empty, 0, "no content"));
    }
    let lines = split_lines(raw);
    let mut files = Vec::new();
    let mut current: Option<FileBuilder> = None;
    let mut i = 0;

    while i < lines.len() {
        let line = lines[i];
        let lineno = i + 1;

        if let Some(rest) = line.strip_prefix("diff --git ") {
            flush(current.take(), &mut files)?;
            let (a, b) = split_git_paths(rest)
                .ok_or_else(|| PatchError::invalid(InvalidReason::BadHeader, lineno, line))?;
            current = Some(FileBuilder {
                old_path: Some(a),
                new_path: Some(b),
                git: true,
                saw_headers: false,
                hunks: Vec::new(),
                line: lineno,
            });
            i += 1;
            continue;
        }

        if line.starts_with("--- ") {
            let Some(next) = lines.get(i + 1).filter(|l| l.starts_with("+++ ")) else {
                return Err(PatchError::invalid(
                    InvalidReason::BadHeader,
                    lineno,
                    "`---` header without `+++`",
                ));
            };
            let old = header_path(&line[4..]);
            let new = header_path(&next[4..]);
            match current.as_mut() {
                Some(f) if f.git && !f.saw_headers && f.hunks.is_empty() => {
                    f.old_path = old;
                    f.new_path = new;
                    f.saw_headers = true;
                }
                _ => {
                    flush(current.take(), &mut files)?;
                    current = Some(FileBuilder {
                        old_path: old,
                        new_path: new,
                        git: false,
                        saw_headers: true,
                        hunks: Vec::new(),
                        line: lineno,
                    });
                }
            }
            i += 2;
            continue;
        }

        if line.starts_with("+++ ") {
            return Err(PatchError::invalid(
                InvalidReason::BadHeader,
                lineno,
                "`+++` header without `---`",
            ));
        }

        if line.starts_with("@@") {
            let Some(file) = current.as_mut().filter(|f| f.saw_headers) else {
                return Err(PatchError::invalid(
                    InvalidReason::HunkWithoutFile,
                    lineno,
                    "hunk before any `---`/`+++` headers",
                ));
            };
            let (hunk, next) = parse_hunk(&lines, i)?;
            file.hunks.push(hunk);
            i = next;
            continue;
        }

        if line.starts_with("Binary files ") || line.starts_with("GIT binary patch") {
            return Err(PatchError::invalid(InvalidReason::Binary, lineno, line));
        }

        if let Some(file) = current.as_mut() {
            if file.git && !file.saw_headers && file.hunks.is_empty() {
                apply_extended_header(file, line);
            } else if !file.hunks.is_empty()
                && (line.starts_with('+') || line.starts_with('-') || line.starts_with(' ') || line.starts_with('\\'))
            {
                return Err(PatchError::invalid(
                    InvalidReason::HunkTooLong,
                    lineno,
                    "diff line after the hunk's declared length",
                ));
            }
        }
        i += 1;
    }
    flush(current, &mut files)?;

    if files.is_empty() {
        return Err(PatchError::invalid(InvalidReason::NoFiles, 0, "no file headers found"));
    }
    Ok(StructuredPatch { files })
}

struct FileBuilder {
    old_path: Option<String>,
    new_path: Option<String>,
    git: bool,
    saw_headers: bool,
    hunks: Vec<Hunk>,
    line: usize,
}

fn split_lines(raw: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = raw.split('\n').collect();
    if raw.ends_with('\n') {
        lines.pop();
    }
    lines
}

fn apply_extended_header(file: &mut FileBuilder, line: &str) {
    if line.starts_with("new file mode") {
        file.old_path = None;
    } else if line.starts_with("deleted file mode") {
        file.new_path = None;
    } else if let Some(p) = line.strip_prefix("rename from ") {
        file.old_path = Some(unquote(p).to_string());
    } else if let Some(p) = line.strip_prefix("rename to ") {
        file.new_path = Some(unquote(p).to_string());
    }
    // index, mode, similarity and copy lines carry nothing we need
}

fn flush(file: Option<FileBuilder>, files: &mut Vec<FileChange>) -> Result<(), PatchError> {
    let Some(file) = file else { return Ok(()) };
    if file.old_path.is_none() && file.new_path.is_none() {
        return Err(PatchError::invalid(
            InvalidReason::BadHeader,
            file.line,
            "both sides are /dev/null",
        ));
    }
    for path in file.old_path.iter().chain(file.new_path.iter()) {
        if !is_safe_relative_path(path) {
            return Err(PatchError::invalid(
                InvalidReason::UnsafePath,
                file.line,
                format!("unsafe path `{path}`"),
            ));
        }
    }
    let mut prev_end = 0usize;
    for hunk in &file.hunks {
        if file.old_path.is_none() && hunk.old_len != 0 {
            return Err(PatchError::invalid(
                InvalidReason::BadHunkHeader,
                file.line,
                "new file hunk with old lines",
            ));
        }
        if file.new_path.is_none() && hunk.new_len != 0 {
            return Err(PatchError::invalid(
                InvalidReason::BadHunkHeader,
                file.line,
                "deleted file hunk with new lines",
            ));
        }
        let begin = hunk_begin(hunk);
        if begin < prev_end {
            return Err(PatchError::invalid(
                InvalidReason::OverlappingHunks,
                file.line,
                format!("hunk at -{} overlaps the previous hunk", hunk.old_start),
            ));
        }
        prev_end = begin + hunk.old_len;
    }
    files.push(FileChange {
        old_path: file.old_path,
        new_path: file.new_path,
        hunks: file.hunks,
    });
    Ok(())
}

/// Zero-based index of the first old line the hunk touches.
pub(crate) fn hunk_begin(hunk: &Hunk) -> usize {
    if hunk.old_len == 0 {
        hunk.old_start
    } else {
        hunk.old_start - 1
    }
}

fn parse_hunk(lines: &[&str], start: usize) -> Result<(Hunk, usize), PatchError> {
    let header = lines[start];
    let bad = || PatchError::invalid(InvalidReason::BadHunkHeader, start + 1, header);
    let rest = header.strip_prefix("@@ -").ok_or_else(bad)?;
    let (ranges, section) = rest.split_once(" @@").ok_or_else(bad)?;
    let (old, new) = ranges.split_once(" +").ok_or_else(bad)?;
    let (old_start, old_len) = parse_range(old).ok_or_else(bad)?;
    let (new_start, new_len) = parse_range(new).ok_or_else(bad)?;
    if (old_start == 0 && old_len != 0) || (new_start == 0 && new_len != 0) {
        return Err(bad());
    }

    let mut body: Vec<HunkLine> = Vec::new();
    let (mut old_seen, mut new_seen) = (0usize, 0usize);
    let mut j = start + 1;
    while old_seen < old_len || new_seen < new_len {
        let Some(&line) = lines.get(j) else {
            return Err(PatchError::invalid(
                InvalidReason::HunkTooShort,
                j + 1,
                "diff ended inside a hunk",
            ));
        };
        let (kind, text) = match line.chars().next() {
            Some(' ') => (LineKind::Context, &line[1..]),
            None => (LineKind::Context, ""),
            Some('-') => (LineKind::Removed, &line[1..]),
            Some('+') => (LineKind::Added, &line[1..]),
            Some('\\') => {
                match body.last_mut() {
                    Some(last) => last.no_newline = true,
                    None => {
                        return Err(PatchError::invalid(
                            InvalidReason::HunkTooShort,
                            j + 1,
                            "no-newline marker before any line",
                        ))
                    }
                }
                j += 1;
                continue;
            }
            Some(_) => {
                return Err(PatchError::invalid(
                    InvalidReason::HunkTooShort,
                    j + 1,
                    "hunk ended before its declared length",
                ))
            }
        };
        let takes_old = kind != LineKind::Added;
        let takes_new = kind != LineKind::Removed;
        if (takes_old && old_seen == old_len) || (takes_new && new_seen == new_len) {
            return Err(PatchError::invalid(
                InvalidReason::HunkTooLong,
                j + 1,
                "hunk body exceeds declared counts",
            ));
        }
        old_seen += takes_old as usize;
        new_seen += takes_new as usize;
        body.push(HunkLine {
            kind,
            text: text.to_string(),
            no_newline: false,
        });
        j += 1;
    }
    if lines.get(j).is_some_and(|l| l.starts_with('\\')) {
        if let Some(last) = body.last_mut() {
            last.no_newline = true;
        }
        j += 1;
    }

    Ok((
        Hunk {
            old_start,
            old_len,
            new_start,
            new_len,
            section: section.to_string(),
            lines: body,
        },
        j,
    ))
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    match s.split_once(',') {
        Some((start, len)) => Some((start.parse().ok()?, len.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn unquote(s: &str) -> &str {
    s.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(s)
}

fn strip_side_prefix(path: &str) -> &str {
    path.strip_prefix("a/")
        .or_else(|| path.strip_prefix("b/"))
        .unwrap_or(path)
}

fn header_path(field: &str) -> Option<String> {
    let field = field.split('\t').next().unwrap_or_default();
    let field = field.strip_suffix('\r').unwrap_or(field).trim_end();
    let field = unquote(field);
    if field == "/dev/null" {
        return None;
    }
    Some(strip_side_prefix(field).to_string())
}

fn split_git_paths(rest: &str) -> Option<(String, String)> {
    let rest = rest.trim_end_matches('\r');
    if let Some(stripped) = rest.strip_prefix("\"a/") {
        let (a, b) = stripped.split_once("\" \"b/")?;
        return Some((a.to_string(), b.strip_suffix('"')?.to_string()));
    }
    let body = rest.strip_prefix("a/")?;
    // Prefer the split where both sides agree, which disambiguates spaces.
    let candidates: Vec<usize> = body.match_indices(" b/").map(|(i, _)| i).collect();
    let pick = candidates
        .iter()
        .copied()
        .find(|&i| body[..i] == body[i + 3..])
        .or_else(|| candidates.first().copied())?;
    Some((body[..pick].to_string(), body[pick + 3..].to_string()))
}
