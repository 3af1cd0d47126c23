use super::shell::{ShellOutcome, ShellSession};
use super::ToolResult;
use crate::patch::FileTree;
use serde_json::json;
use std::io;
use std::path::{Component, Path, PathBuf};
use std::time::Duration;

pub const ENV_SANDBOX_ROOT: &str = "PATCHVOTE_SANDBOX_ROOT";
pub const ENV_COMMAND_TIMEOUT: &str = "PATCHVOTE_CMD_TIMEOUT_SECS";
pub const ENV_MAX_OUTPUT: &str = "PATCHVOTE_MAX_OUTPUT_BYTES";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub command_timeout: Duration,
    /// Cap on stdout + stderr bytes returned by one command.
    pub max_output_bytes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            command_timeout: Duration::from_secs(120),
            max_output_bytes: 32 * 1024,
        }
    }
}

impl Limits {
    /// Defaults overridden by `PATCHVOTE_CMD_TIMEOUT_SECS` and
    /// `PATCHVOTE_MAX_OUTPUT_BYTES` when set.
    pub fn from_env() -> Self {
        let mut limits = Limits::default();
        if let Some(secs) = std::env::var(ENV_COMMAND_TIMEOUT).ok().and_then(|v| v.parse::<f64>().ok()) {
            limits.command_timeout = Duration::from_secs_f64(secs.max(0.001));
        }
        if let Some(bytes) = std::env::var(ENV_MAX_OUTPUT).ok().and_then(|v| v.parse().ok()) {
            limits.max_output_bytes = bytes;
        }
        limits
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("path `{0}` escapes the sandbox")]
    PathEscape(String),
    #[error("sandbox i/o: {0}")]
    Io(#[from] io::Error),
}

/// A scratch copy of a codebase plus the persistent shell bound to it.
/// Dropping the sandbox kills the shell and deletes the scratch tree.
pub struct Sandbox {
    _scratch: tempfile::TempDir,
    root: PathBuf,
    control: tempfile::TempDir,
    shell: Option<ShellSession>,
    restarted: bool,
    limits: Limits,
}

impl Sandbox {
    /// Materializes `tree` into a fresh scratch directory.
    pub fn from_tree(tree: &FileTree, limits: Limits) -> Result<Self, SandboxError> {
        let scratch = scratch_dir("sandbox-")?;
        let root = scratch.path().join("repo");
        std::fs::create_dir_all(&root)?;
        tree.write_to(&root)?;
        let root = root.canonicalize()?;
        Ok(Sandbox {
            _scratch: scratch,
            root,
            control: scratch_dir("sandbox-ctl-")?,
            shell: None,
            restarted: false,
            limits,
        })
    }

    /// Copies the directory at `codebase` into a fresh scratch directory.
    pub fn from_dir(codebase: &Path, limits: Limits) -> Result<Self, SandboxError> {
        Self::from_tree(&FileTree::from_dir(codebase)?, limits)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn limits(&self) -> Limits {
        self.limits
    }

    pub fn snapshot(&self) -> io::Result<FileTree> {
        FileTree::from_dir(&self.root)
    }

    /// Resolves a tool-supplied path to a location inside the root.
    /// Absolute paths are accepted only when they already point inside it;
    /// `..` segments and symlinks may not lead out.
    pub fn resolve(&self, path: &str) -> Result<PathBuf, SandboxError> {
        let escape = || SandboxError::PathEscape(path.to_string());
        let requested = Path::new(path);
        let joined = if requested.is_absolute() {
            requested.to_path_buf()
        } else {
            self.root.join(requested)
        };
        let mut lexical = PathBuf::new();
        for comp in joined.components() {
            match comp {
                Component::ParentDir => {
                    if !lexical.pop() {
                        return Err(escape());
                    }
                }
                Component::CurDir => {}
                other => lexical.push(other),
            }
        }
        if !lexical.starts_with(&self.root) {
            return Err(escape());
        }
        // Follow symlinks on the longest existing prefix.
        let mut existing = lexical.as_path();
        while !existing.exists() {
            match existing.parent() {
                Some(p) => existing = p,
                None => return Err(escape()),
            }
        }
        let real = existing.canonicalize()?;
        if !real.starts_with(&self.root) {
            return Err(escape());
        }
        if std::fs::symlink_metadata(&lexical).is_ok_and(|m| m.file_type().is_symlink()) && !lexical.exists() {
            // dangling symlink: its target is unknown, refuse it
            return Err(escape());
        }
        Ok(lexical)
    }

    pub fn relative<'a>(&self, path: &'a Path) -> &'a Path {
        path.strip_prefix(&self.root).unwrap_or(path)
    }

    /// Runs `command` in the persistent session.
    pub fn bash(&mut self, call_id: &str, command: &str) -> ToolResult {
        if self.shell.as_ref().is_none_or(|s| !s.alive()) {
            match ShellSession::spawn(&self.root) {
                Ok(s) => {
                    self.restarted = self.shell.is_some();
                    self.shell = Some(s);
                }
                Err(e) => {
                    return ToolResult::error(call_id, "session_dead", format!("cannot start shell: {e}"), json!({}))
                }
            }
        }
        let restarted = std::mem::take(&mut self.restarted);
        let shell = self.shell.as_mut().expect("spawned above");
        let outcome = match shell.run(command, self.control.path(), self.limits.command_timeout) {
            Ok(o) => o,
            Err(e) => return ToolResult::error(call_id, "session_dead", e.to_string(), json!({})),
        };
        shell_result(call_id, outcome, self.limits.max_output_bytes, restarted)
    }
}

fn scratch_dir(prefix: &str) -> io::Result<tempfile::TempDir> {
    let mut builder = tempfile::Builder::new();
    builder.prefix(prefix);
    match std::env::var_os(ENV_SANDBOX_ROOT) {
        Some(base) => {
            std::fs::create_dir_all(&base)?;
            builder.tempdir_in(base)
        }
        None => builder.tempdir(),
    }
}

/// Cuts `text` to at most `max` bytes on a char boundary.
fn clip(text: String, max: usize) -> (String, bool) {
    if text.len() <= max {
        return (text, false);
    }
    let mut end = max;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    (text[..end].to_string(), true)
}

fn shell_result(call_id: &str, outcome: ShellOutcome, max: usize, restarted: bool) -> ToolResult {
    let (stdout, out_cut) = clip(String::from_utf8_lossy(&outcome.stdout).into_owned(), max);
    let (stderr, err_cut) = clip(
        String::from_utf8_lossy(&outcome.stderr).into_owned(),
        max - stdout.len(),
    );
    let mut payload = json!({
        "stdout": stdout,
        "stderr": stderr,
        "exit_code": outcome.exit_code,
        "stdout_truncated": out_cut || outcome.stdout_overflow,
        "stderr_truncated": err_cut || outcome.stderr_overflow,
    });
    if restarted {
        payload["session_restarted"] = json!(true);
    }
    if outcome.timed_out {
        ToolResult::error(call_id, "timeout", "command exceeded the time limit; session restarted", payload)
    } else if outcome.died {
        ToolResult::error(call_id, "session_dead", "the shell exited during the command", payload)
    } else {
        ToolResult::ok(call_id, payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sandbox() -> Sandbox {
        let mut t = FileTree::new();
        t.insert("sub/inner.txt", "x\n");
        t.insert("top.txt", "y\n");
        Sandbox::from_tree(&t, Limits::default()).unwrap()
    }

    #[test]
    fn resolve_rejects_escapes() {
        let sb = sandbox();
        assert!(sb.resolve("sub/inner.txt").is_ok());
        assert!(sb.resolve("sub/../top.txt").is_ok());
        assert!(sb.resolve("new/dir/file.py").is_ok());
        assert!(matches!(sb.resolve("../outside"), Err(SandboxError::PathEscape(_))));
        assert!(matches!(sb.resolve("sub/../../x"), Err(SandboxError::PathEscape(_))));
        assert!(matches!(sb.resolve("/etc/passwd"), Err(SandboxError::PathEscape(_))));
        let inside = sb.root().join("top.txt");
        assert!(sb.resolve(inside.to_str().unwrap()).is_ok());
    }

    #[test]
    fn resolve_rejects_symlink_escape() {
        let sb = sandbox();
        let outside = tempfile::tempdir().unwrap();
        std::os::unix::fs::symlink(outside.path(), sb.root().join("link")).unwrap();
        assert!(matches!(sb.resolve("link/secret"), Err(SandboxError::PathEscape(_))));
        assert!(matches!(sb.resolve("link"), Err(SandboxError::PathEscape(_))));
    }

    #[test]
    fn echo_and_exit_code() {
        let mut sb = sandbox();
        let r = sb.bash("1", "echo hi");
        assert!(r.is_ok());
        assert_eq!(r.payload["stdout"], "hi\n");
        assert_eq!(r.payload["exit_code"], 0);
        let r = sb.bash("2", "echo oops >&2; false");
        assert_eq!(r.payload["stderr"], "oops\n");
        assert_eq!(r.payload["exit_code"], 1);
    }

    #[test]
    fn session_is_persistent() {
        let mut sb = sandbox();
        sb.bash("1", "cd sub");
        let r = sb.bash("2", "pwd");
        assert!(r.payload["stdout"].as_str().unwrap().trim_end().ends_with("/sub"));
        sb.bash("3", "export X=1");
        assert_eq!(sb.bash("4", "echo $X").payload["stdout"], "1\n");
    }

    #[test]
    fn output_without_trailing_newline() {
        let mut sb = sandbox();
        assert_eq!(sb.bash("1", "printf abc").payload["stdout"], "abc");
    }

    #[test]
    fn timeout_keeps_partial_output_and_restarts() {
        let limits = Limits {
            command_timeout: Duration::from_millis(300),
            ..Limits::default()
        };
        let mut sb = Sandbox::from_tree(&FileTree::new(), limits).unwrap();
        let r = sb.bash("1", "echo started; sleep 5");
        assert_eq!(r.reason(), Some("timeout"));
        assert_eq!(r.payload["stdout"], "started\n");
        let next = sb.bash("2", "echo again");
        assert!(next.is_ok());
        assert_eq!(next.payload["session_restarted"], true);
    }

    #[test]
    fn exit_kills_session() {
        let mut sb = sandbox();
        let r = sb.bash("1", "exit 3");
        assert_eq!(r.reason(), Some("session_dead"));
        assert!(sb.bash("2", "echo back").is_ok());
    }

    #[test]
    fn truncation_respects_limit() {
        let limits = Limits {
            max_output_bytes: 100,
            ..Limits::default()
        };
        let mut sb = Sandbox::from_tree(&FileTree::new(), limits).unwrap();
        let r = sb.bash("1", "yes abcdefgh | head -c 5000; yes err | head -c 5000 >&2");
        let out = r.payload["stdout"].as_str().unwrap().len();
        let err = r.payload["stderr"].as_str().unwrap().len();
        assert!(out + err <= 100);
        assert_eq!(r.payload["stdout_truncated"], true);
        assert_eq!(r.payload["stderr_truncated"], true);
        let small = sb.bash("2", "echo tiny");
        assert_eq!(small.payload["stdout_truncated"], false);
    }

    #[test]
    fn stdin_is_not_shared_with_the_protocol() {
        let mut sb = sandbox();
        let r = sb.bash("1", "cat");
        assert!(r.is_ok());
        assert_eq!(r.payload["stdout"], "");
        assert_eq!(sb.bash("2", "echo ok").payload["stdout"], "ok\n");
    }
}
