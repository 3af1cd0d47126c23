use super::{Sandbox, SandboxError, ToolResult};
use serde::Deserialize;
use serde_json::{json, Value};
use std::fs;
use std::path::Path;

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Action {
    View,
    Create,
    StrReplace,
}

#[derive(Debug, Deserialize)]
pub(super) struct FileEditArgs {
    action: Action,
    path: String,
    #[serde(default)]
    view_range: Option<[i64; 2]>,
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    old_str: Option<String>,
    #[serde(default)]
    new_str: Option<String>,
}

/// Directory listings descend this many levels.
const LIST_DEPTH: usize = 2;

pub(super) fn run(sandbox: &Sandbox, call_id: &str, args: FileEditArgs) -> ToolResult {
    let path = match sandbox.resolve(&args.path) {
        Ok(p) => p,
        Err(SandboxError::PathEscape(p)) => {
            return ToolResult::error(call_id, "path_escape", format!("`{p}` is outside the repository"), json!({}))
        }
        Err(e) => return ToolResult::error(call_id, "io_error", e.to_string(), json!({})),
    };
    let shown = sandbox.relative(&path).display().to_string();
    let outcome = match args.action {
        Action::View => view(sandbox, &path, &shown, args.view_range),
        Action::Create => create(&path, &shown, args.content.unwrap_or_default()),
        Action::StrReplace => match args.old_str {
            Some(old) if !old.is_empty() => str_replace(&path, &shown, &old, &args.new_str.unwrap_or_default()),
            _ => Err(("bad_arguments", "str_replace needs a non-empty old_str".to_string(), json!({}))),
        },
    };
    match outcome {
        Ok(payload) => ToolResult::ok(call_id, payload),
        Err((reason, message, extra)) => ToolResult::error(call_id, reason, message, extra),
    }
}

type EditOutcome = Result<Value, (&'static str, String, Value)>;

fn not_found(shown: &str) -> (&'static str, String, Value) {
    ("not_found", format!("`{shown}` does not exist"), json!({ "path": shown }))
}

fn io_err(e: std::io::Error) -> (&'static str, String, Value) {
    ("io_error", e.to_string(), json!({}))
}

fn view(sandbox: &Sandbox, path: &Path, shown: &str, range: Option<[i64; 2]>) -> EditOutcome {
    if path.is_dir() {
        let mut entries = Vec::new();
        list(sandbox, path, 0, &mut entries).map_err(io_err)?;
        return Ok(json!({ "path": shown, "kind": "directory", "entries": entries }));
    }
    if !path.is_file() {
        return Err(not_found(shown));
    }
    let bytes = fs::read(path).map_err(io_err)?;
    let text = String::from_utf8_lossy(&bytes);
    let all: Vec<&str> = text.lines().collect();
    let total = all.len();
    let (start, end) = match range {
        None => (1, total),
        Some([s, e]) => {
            let end = if e < 0 { total as i64 } else { e.min(total as i64) };
            if s < 1 || (total > 0 && s as usize > total) || end < s {
                return Err((
                    "bad_arguments",
                    format!("view_range {s}..{e} is outside 1..{total}"),
                    json!({ "total_lines": total }),
                ));
            }
            (s as usize, end as usize)
        }
    };
    let lines: Vec<String> = all
        .iter()
        .enumerate()
        .skip(start.saturating_sub(1))
        .take(end + 1 - start.min(end + 1))
        .map(|(i, l)| format!("{}: {}", i + 1, l))
        .collect();
    Ok(json!({ "path": shown, "kind": "file", "lines": lines, "total_lines": total }))
}

fn list(sandbox: &Sandbox, dir: &Path, depth: usize, out: &mut Vec<String>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        let path = entry.path();
        let rel = sandbox.relative(&path).display().to_string();
        if entry.file_type()?.is_dir() {
            out.push(format!("{rel}/"));
            if depth + 1 < LIST_DEPTH {
                list(sandbox, &path, depth + 1, out)?;
            }
        } else {
            out.push(rel);
        }
    }
    Ok(())
}

fn create(path: &Path, shown: &str, content: String) -> EditOutcome {
    if path.is_dir() {
        return Err(("bad_arguments", format!("`{shown}` is a directory"), json!({})));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    fs::write(path, content.as_bytes()).map_err(io_err)?;
    Ok(json!({ "path": shown, "bytes_written": content.len() }))
}

fn str_replace(path: &Path, shown: &str, old: &str, new: &str) -> EditOutcome {
    if !path.is_file() {
        return Err(not_found(shown));
    }
    let text = fs::read_to_string(path).map_err(io_err)?;
    let occurrences = text.matches(old).count();
    if occurrences != 1 {
        return Err((
            "ambiguous_replace",
            format!("old_str occurs {occurrences} times in `{shown}`; it must occur exactly once"),
            json!({ "occurrences": occurrences }),
        ));
    }
    let at = text.find(old).expect("counted once");
    let updated = text.replacen(old, new, 1);
    fs::write(path, updated.as_bytes()).map_err(io_err)?;
    let line = text[..at].matches('\n').count() + 1;
    Ok(json!({ "path": shown, "replaced": 1, "line": line }))
}

#[cfg(test)]
mod tests {
    use super::super::{Limits, ToolCall, Toolbox, FILE_EDIT};
    use super::*;
    use crate::patch::FileTree;

    fn toolbox() -> Toolbox {
        let mut t = FileTree::new();
        t.insert("two.txt", "a\nb\n");
        t.insert("dup.txt", "x = 1\nx = 1\n");
        t.insert("pkg/mod.py", "pass\n");
        Toolbox::new(Sandbox::from_tree(&t, Limits::default()).unwrap())
    }

    fn edit(tb: &mut Toolbox, args: Value) -> ToolResult {
        tb.dispatch(&ToolCall::new("e", FILE_EDIT, args))
    }

    #[test]
    fn view_numbers_lines() {
        let mut tb = toolbox();
        let r = edit(&mut tb, json!({"action": "view", "path": "two.txt"}));
        assert_eq!(r.payload["lines"], json!(["1: a", "2: b"]));
        let r = edit(&mut tb, json!({"action": "view", "path": "two.txt", "view_range": [2, -1]}));
        assert_eq!(r.payload["lines"], json!(["2: b"]));
        let r = edit(&mut tb, json!({"action": "view", "path": "two.txt", "view_range": [5, 6]}));
        assert_eq!(r.reason(), Some("bad_arguments"));
    }

    #[test]
    fn view_directory() {
        let mut tb = toolbox();
        let r = edit(&mut tb, json!({"action": "view", "path": "."}));
        assert_eq!(r.payload["kind"], "directory");
        assert_eq!(r.payload["entries"], json!(["dup.txt", "pkg/", "pkg/mod.py", "two.txt"]));
    }

    #[test]
    fn create_then_view_round_trips() {
        let mut tb = toolbox();
        let content = "line one\n\ttabbed  \nno newline";
        let r = edit(&mut tb, json!({"action": "create", "path": "new/file.py", "content": content}));
        assert!(r.is_ok(), "{:?}", r);
        let on_disk = fs::read_to_string(tb.sandbox().root().join("new/file.py")).unwrap();
        assert_eq!(on_disk, content);
        let r = edit(&mut tb, json!({"action": "view", "path": "new/file.py"}));
        let shown: Vec<String> = r.payload["lines"]
            .as_array()
            .unwrap()
            .iter()
            .map(|l| l.as_str().unwrap().split_once(": ").unwrap().1.to_string())
            .collect();
        assert_eq!(shown.join("\n"), content);
    }

    #[test]
    fn str_replace_requires_unique_match() {
        let mut tb = toolbox();
        let r = edit(&mut tb, json!({"action": "str_replace", "path": "dup.txt", "old_str": "x = 1", "new_str": "y"}));
        assert_eq!(r.reason(), Some("ambiguous_replace"));
        assert_eq!(r.payload["occurrences"], 2);
        let r = edit(&mut tb, json!({"action": "str_replace", "path": "two.txt", "old_str": "zzz", "new_str": "y"}));
        assert_eq!(r.reason(), Some("ambiguous_replace"));
        let r = edit(&mut tb, json!({"action": "str_replace", "path": "two.txt", "old_str": "b\n", "new_str": "B\n"}));
        assert!(r.is_ok());
        assert_eq!(fs::read_to_string(tb.sandbox().root().join("two.txt")).unwrap(), "a\nB\n");
    }

    #[test]
    fn missing_file_and_escapes() {
        let mut tb = toolbox();
        let r = edit(&mut tb, json!({"action": "view", "path": "nope.txt"}));
        assert_eq!(r.reason(), Some("not_found"));
        for p in ["../x", "/etc/passwd", "pkg/../../x"] {
            let r = edit(&mut tb, json!({"action": "create", "path": p, "content": "pwned"}));
            assert_eq!(r.reason(), Some("path_escape"), "{p}");
        }
    }
}
