use std::io::{self, Read, Write};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

/// Buffers beyond this size keep only their head and tail.
const HARD_CAP: usize = 4 * 1024 * 1024;
const KEEP_TAIL: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    Out,
    Err,
}

pub(crate) struct ShellOutcome {
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub died: bool,
    pub stdout_overflow: bool,
    pub stderr_overflow: bool,
}

/// A long-lived `bash` process fed one command at a time.
///
/// Each command is written to a script file and `source`d so that `cd` and
/// `export` persist. Completion is detected by a per-command marker printed
/// on both streams after the script returns.
pub(crate) struct ShellSession {
    child: Child,
    stdin: ChildStdin,
    rx: Receiver<(Stream, Option<Vec<u8>>)>,
    counter: u64,
    nonce: String,
    alive: bool,
    open_streams: usize,
}

impl ShellSession {
    pub fn spawn(cwd: &Path) -> io::Result<Self> {
        let mut cmd = Command::new("bash");
        cmd.args(["--noprofile", "--norc"])
            .current_dir(cwd)
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_else(|| "/usr/local/bin:/usr/bin:/bin".into()))
            .env("HOME", cwd)
            .env("LANG", "C.UTF-8")
            .env("TERM", "dumb")
            .env("PAGER", "cat")
            .env("GIT_PAGER", "cat")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONUNBUFFERED", "1")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        let mut child = cmd.spawn()?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        let stderr = child.stderr.take().expect("piped");
        let (tx, rx) = mpsc::channel();
        for (stream, mut reader) in [
            (Stream::Out, Box::new(stdout) as Box<dyn Read + Send>),
            (Stream::Err, Box::new(stderr) as Box<dyn Read + Send>),
        ] {
            let tx = tx.clone();
            thread::spawn(move || {
                let mut buf = [0u8; 8192];
                loop {
                    match reader.read(&mut buf) {
                        Ok(0) | Err(_) => {
                            let _ = tx.send((stream, None));
                            break;
                        }
                        Ok(n) => {
                            if tx.send((stream, Some(buf[..n].to_vec()))).is_err() {
                                break;
                            }
                        }
                    }
                }
            });
        }
        let nonce = format!("{:x}{:x}", std::process::id(), child.id());
        Ok(ShellSession {
            child,
            stdin,
            rx,
            counter: 0,
            nonce,
            alive: true,
            open_streams: 2,
        })
    }

    pub fn alive(&self) -> bool {
        self.alive
    }

    pub fn run(&mut self, command: &str, control: &Path, timeout: Duration) -> io::Result<ShellOutcome> {
        self.counter += 1;
        let marker = format!("__PV_DONE_{}_{}__", self.nonce, self.counter);
        let script = control.join(format!("cmd_{}.sh", self.counter));
        std::fs::write(&script, command)?;
        let line = format!(
            "source '{}' < /dev/null; __pv_ec=$?; printf '%s%d\\n' '{marker}' \"$__pv_ec\"; printf '%s\\n' '{marker}' >&2\n",
            script.display()
        );
        if self.stdin.write_all(line.as_bytes()).and_then(|_| self.stdin.flush()).is_err() {
            self.alive = false;
            return Ok(self.dead_outcome(Vec::new(), Vec::new(), false, false));
        }

        let deadline = Instant::now() + timeout;
        let mut out = Capture::default();
        let mut err = Capture::default();
        let mark = marker.as_bytes();
        loop {
            let out_done = out.find_marker(mark);
            let err_done = err.find_marker(mark).is_some();
            if let (Some(pos), true) = (out_done, err_done) {
                let tail = &out.buf[pos + mark.len()..];
                let code = std::str::from_utf8(tail)
                    .ok()
                    .and_then(|s| s.trim().parse::<i32>().ok());
                out.buf.truncate(pos);
                let err_pos = err.find_marker(mark).expect("checked");
                err.buf.truncate(err_pos);
                let _ = std::fs::remove_file(&script);
                return Ok(ShellOutcome {
                    stdout: out.buf,
                    stderr: err.buf,
                    exit_code: code,
                    timed_out: false,
                    died: false,
                    stdout_overflow: out.overflow,
                    stderr_overflow: err.overflow,
                });
            }
            if self.open_streams == 0 {
                self.alive = false;
                return Ok(self.dead_outcome(out.buf, err.buf, out.overflow, err.overflow));
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(remaining) {
                Ok((stream, Some(chunk))) => match stream {
                    Stream::Out => out.push(&chunk),
                    Stream::Err => err.push(&chunk),
                },
                Ok((_, None)) => self.open_streams -= 1,
                Err(RecvTimeoutError::Timeout) => {
                    self.kill();
                    // drain whatever was already buffered
                    while let Ok((stream, Some(chunk))) = self.rx.try_recv() {
                        match stream {
                            Stream::Out => out.push(&chunk),
                            Stream::Err => err.push(&chunk),
                        }
                    }
                    return Ok(ShellOutcome {
                        stdout: out.buf,
                        stderr: err.buf,
                        exit_code: None,
                        timed_out: true,
                        died: false,
                        stdout_overflow: out.overflow,
                        stderr_overflow: err.overflow,
                    });
                }
                Err(RecvTimeoutError::Disconnected) => self.open_streams = 0,
            }
        }
    }

    fn dead_outcome(&mut self, stdout: Vec<u8>, stderr: Vec<u8>, o1: bool, o2: bool) -> ShellOutcome {
        self.kill_group();
        let code = self.child.wait().ok().and_then(|s| s.code());
        ShellOutcome {
            stdout,
            stderr,
            exit_code: code,
            timed_out: false,
            died: true,
            stdout_overflow: o1,
            stderr_overflow: o2,
        }
    }

    fn kill_group(&self) {
        // SAFETY: kill(2) on the process group we created; no memory is touched.
        unsafe {
            libc::kill(-(self.child.id() as i32), libc::SIGKILL);
        }
    }

    fn kill(&mut self) {
        if self.alive {
            self.kill_group();
            let _ = self.child.wait();
        }
        self.alive = false;
    }
}

impl Drop for ShellSession {
    fn drop(&mut self) {
        self.kill();
    }
}

#[derive(Default)]
struct Capture {
    buf: Vec<u8>,
    overflow: bool,
}

impl Capture {
    fn push(&mut self, chunk: &[u8]) {
        self.buf.extend_from_slice(chunk);
        if self.buf.len() > HARD_CAP {
            let cut_from = HARD_CAP / 2;
            let cut_to = self.buf.len() - KEEP_TAIL;
            self.buf.drain(cut_from..cut_to);
            self.overflow = true;
        }
    }

    fn find_marker(&self, mark: &[u8]) -> Option<usize> {
        // the marker is the last thing the session prints
        let from = self.buf.len().saturating_sub(mark.len() + 16);
        let pos = from
            + self.buf[from..]
                .windows(mark.len())
                .rposition(|w| w == mark)?;
        // the marker line is complete once its newline has arrived
        self.buf[pos + mark.len()..].contains(&b'\n').then_some(pos)
    }
}
