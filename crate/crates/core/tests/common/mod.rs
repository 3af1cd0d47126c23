//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use patchvote::coder::{EnsembleConfig, Runtime};
use patchvote::fixtures::ToyIssue;
use patchvote::patch::{normalize, parse_patch, CandidatePatch, FileTree, Hunk, HunkLine, LineKind, StructuredPatch, FileChange};
use patchvote::pipeline::{PipelineConfig, RegressionStageConfig};
use patchvote::tools::Limits;
use patchvote::trajectory::Clock;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::process::Command;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const WORDS: [&str; 12] = ["alpha", "beta", "count", "delta", "items", "limit", "total", "value", "width", "x", "y", "z"];

pub fn code_line(r: &mut impl Rng) -> String {
    let indent = "    ".repeat(r.gen_range(0..3));
    let a = WORDS.choose(r).unwrap();
    let b = WORDS.choose(r).unwrap();
    match r.gen_range(0..6) {
        0 => format!("{indent}{a} = {b} + {}", r.gen_range(0..100)),
        1 => format!("{indent}def {a}_{}({b}):", r.gen_range(0..50)),
        2 => format!("{indent}return {a}({b})"),
        3 => format!("{indent}if {a} > {b}:"),
        4 => String::new(),
        _ => format!("{indent}{a}.append(\"{b} {}\")", r.gen_range(0..9)),
    }
}

fn file_text(r: &mut impl Rng, lines: usize) -> String {
    let mut s: String = (0..lines).map(|_| code_line(r) + "\n").collect();
    if r.gen_bool(0.15) {
        // last line without newline, made non-blank so the file stays text-like
        s.pop();
        s.push_str("end = 1");
    }
    s
}

/// A random tree of small, non-empty text files.
pub fn random_tree(r: &mut impl Rng, files: usize, max_lines: usize) -> FileTree {
    let mut t = FileTree::new();
    for k in 0..files {
        let dir = ["pkg", "pkg/sub", "lib"][k % 3];
        let n = r.gen_range(1..=max_lines);
        t.insert(format!("{dir}/mod_{k}.py"), file_text(r, n));
    }
    t
}

/// Random line-level edits; creates or deletes a file when `structural`.
pub fn mutate_tree(r: &mut impl Rng, tree: &FileTree, structural: bool) -> FileTree {
    let mut out = tree.clone();
    let paths: Vec<String> = tree.paths().map(str::to_string).collect();
    let edits = r.gen_range(1..=paths.len().clamp(1, 3));
    for path in paths.choose_multiple(r, edits) {
        let text = tree.get_text(path).unwrap();
        let had_newline = text.ends_with('\n');
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        for _ in 0..r.gen_range(1..4) {
            let i = r.gen_range(0..=lines.len());
            match r.gen_range(0..3) {
                0 if i < lines.len() => lines[i] = code_line(r) + " # changed",
                1 if i < lines.len() && lines.len() > 1 => {
                    lines.remove(i);
                }
                _ => lines.insert(i, code_line(r) + " # new"),
            }
        }
        let mut s = lines.join("\n");
        if had_newline || r.gen_bool(0.2) {
            s.push('\n');
        }
        if s.trim().is_empty() {
            s = "placeholder = 0\n".into();
        }
        out.insert(path.as_str(), s);
    }
    if structural {
        if r.gen_bool(0.3) {
            let n = r.gen_range(1..6);
            out.insert(format!("pkg/new_{}.py", r.gen_range(0..1000)), file_text(r, n));
        }
        if r.gen_bool(0.2) && paths.len() > 1 {
            out.remove(paths.choose(r).unwrap());
        }
    }
    out
}

/// Drops git metadata lines so the diff is plain unified format.
pub fn strip_git_headers(diff: &str) -> String {
    diff.lines()
        .filter(|l| {
            !(l.starts_with("diff --git ")
                || l.starts_with("new file mode")
                || l.starts_with("deleted file mode")
                || l.starts_with("index "))
        })
        .map(|l| format!("{l}\n"))
        .collect()
}

#[derive(Debug)]
struct RefHunk {
    old_start: usize,
    old_len: usize,
    // (kind, text, newline)
    lines: Vec<(char, String, bool)>,
}

fn header_path(s: &str) -> Option<String> {
    let p = s.split('\t').next().unwrap().trim_end();
    if p == "/dev/null" {
        return None;
    }
    Some(p.strip_prefix("a/").or_else(|| p.strip_prefix("b/")).unwrap_or(p).to_string())
}

fn hunk_range(s: &str) -> Result<(usize, usize), String> {
    let mut it = s.splitn(2, ',');
    let start = it.next().unwrap().parse().map_err(|_| format!("bad range {s}"))?;
    let len = it.next().map_or(Ok(1), |l| l.parse().map_err(|_| format!("bad range {s}")))?;
    Ok((start, len))
}

/// Straightforward unified-diff applier written independently of the
/// library: hunks must match at their stated positions, with no fuzz.
pub fn reference_apply(tree: &FileTree, diff: &str) -> Result<FileTree, String> {
    let lines: Vec<&str> = diff.split_inclusive('\n').collect();
    let mut out = tree.clone();
    let mut i = 0;
    while i < lines.len() {
        let l = lines[i].trim_end_matches('\n');
        if !l.starts_with("--- ") {
            i += 1;
            continue;
        }
        let old = header_path(&l[4..]);
        let new = header_path(lines.get(i + 1).ok_or("missing +++")?.trim_end_matches('\n').strip_prefix("+++ ").ok_or("missing +++")?);
        i += 2;
        let mut hunks = Vec::new();
        while i < lines.len() && lines[i].starts_with("@@ ") {
            let h = lines[i].trim_end_matches('\n');
            let parts: Vec<&str> = h.split(' ').collect();
            let (old_start, old_len) = hunk_range(parts[1].trim_start_matches('-'))?;
            let (_, new_len) = hunk_range(parts[2].trim_start_matches('+'))?;
            i += 1;
            let (mut seen_old, mut seen_new) = (0, 0);
            let mut body: Vec<(char, String, bool)> = Vec::new();
            while seen_old < old_len || seen_new < new_len {
                let raw = lines.get(i).ok_or("hunk ends early")?;
                let text = raw.strip_suffix('\n').unwrap_or(raw);
                let kind = text.chars().next().unwrap_or(' ');
                let content = text.get(1..).unwrap_or("").to_string();
                match kind {
                    ' ' => {
                        seen_old += 1;
                        seen_new += 1
                    }
                    '-' => seen_old += 1,
                    '+' => seen_new += 1,
                    _ => return Err(format!("unexpected hunk line {text:?}")),
                }
                body.push((kind, content, true));
                i += 1;
                if lines.get(i).is_some_and(|l| l.starts_with('\\')) {
                    body.last_mut().unwrap().2 = false;
                    i += 1;
                }
            }
            hunks.push(RefHunk { old_start, old_len, lines: body });
        }

        let source = match &old {
            Some(p) => out.get_text(p).ok_or(format!("missing {p}"))?.to_string(),
            None => String::new(),
        };
        let src: Vec<(&str, bool)> = source
            .split_inclusive('\n')
            .map(|l| match l.strip_suffix('\n') {
                Some(t) => (t, true),
                None => (l, false),
            })
            .collect();
        let mut result = String::new();
        let mut pos = 0usize;
        for h in &hunks {
            let start = if h.old_len == 0 { h.old_start } else { h.old_start - 1 };
            if start < pos || start > src.len() {
                return Err("hunk out of order".into());
            }
            for (t, nl) in &src[pos..start] {
                result.push_str(t);
                if *nl {
                    result.push('\n');
                }
            }
            pos = start;
            for (kind, text, nl) in &h.lines {
                match kind {
                    ' ' | '-' => {
                        let (t, _) = src.get(pos).ok_or("hunk beyond end of file")?;
                        if t != text {
                            return Err(format!("mismatch at line {}", pos + 1));
                        }
                        if *kind == ' ' {
                            result.push_str(t);
                            if *nl {
                                result.push('\n');
                            }
                        }
                        pos += 1;
                    }
                    _ => {
                        result.push_str(text);
                        if *nl {
                            result.push('\n');
                        }
                    }
                }
            }
        }
        for (t, nl) in &src[pos..] {
            result.push_str(t);
            if *nl {
                result.push('\n');
            }
        }
        if let Some(p) = &old {
            out.remove(p);
        }
        match &new {
            Some(p) => out.insert(p.as_str(), result),
            None if result.is_empty() => {}
            None => return Err("deleted file not empty".into()),
        }
    }
    Ok(out)
}

/// Applies `diff` with GNU patch in a scratch directory. `None` when the
/// tool is not installed.
pub fn gnu_patch(tree: &FileTree, diff: &str) -> Option<Result<FileTree, String>> {
    if !std::path::Path::new("/usr/bin/patch").exists() {
        return None;
    }
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo");
    std::fs::create_dir(&repo).unwrap();
    tree.write_to(&repo).unwrap();
    let file = dir.path().join("d.patch");
    std::fs::write(&file, diff).unwrap();
    let out = Command::new("/usr/bin/patch")
        .args(["-p1", "-s", "-F0", "-N", "--no-backup-if-mismatch", "-i"])
        .arg(&file)
        .arg("-d")
        .arg(&repo)
        .output()
        .unwrap();
    if !out.status.success() {
        return Some(Err(String::from_utf8_lossy(&out.stdout).into_owned()));
    }
    Some(FileTree::from_dir(&repo).map_err(|e| e.to_string()))
}

/// A corpus of diffs that are broken by construction, labelled with the
/// corruption applied.
pub fn invalid_corpus(seed: u64, bases: usize) -> Vec<(&'static str, String)> {
    let mut r = rng(seed);
    let mut out: Vec<(&'static str, String)> = Vec::new();
    while out.len() < bases * 5 {
        let tree = random_tree(&mut r, 2, 12);
        let next = mutate_tree(&mut r, &tree, false);
        let (patch, _) = patchvote::patch::diff_trees(&tree, &next, &Default::default());
        if patch.is_empty() {
            continue;
        }
        let text = patch.to_unified();
        let lines: Vec<&str> = text.split_inclusive('\n').collect();

        // drop the final body line: the last hunk is short
        let mut cut = lines.clone();
        while cut.last().is_some_and(|l| l.starts_with('\\')) {
            cut.pop();
        }
        cut.pop();
        out.push(("truncated_hunk", cut.concat()));

        out.push(("bad_hunk_numbers", text.replacen("@@ -", "@@ -x", 1)));

        let no_plus: String = lines.iter().filter(|l| !l.starts_with("+++ ")).copied().collect();
        out.push(("missing_new_header", no_plus));

        let first = patch.files[0].new_path.clone().unwrap();
        out.push(("path_traversal", text.replace(&format!("a/{first}"), "a/../../etc/passwd").replace(&format!("b/{first}"), "b/../../etc/passwd")));

        let mut dup = patch.clone();
        let h = dup.files[0].hunks[0].clone();
        dup.files[0].hunks.insert(0, h);
        out.push(("overlapping_hunks", dup.to_unified()));
    }
    out
}

/// Patches built from `bases` distinct edits, each rewritten with noise that
/// normalization must ignore. `base_of[i]` is the edit behind patch `i`.
pub struct DedupCorpus {
    pub patches: Vec<CandidatePatch>,
    pub base_of: BTreeMap<String, usize>,
}

pub fn dedup_corpus(seed: u64, bases: usize, total: usize) -> DedupCorpus {
    let mut r = rng(seed);
    let mut patches = Vec::new();
    let mut base_of = BTreeMap::new();
    for i in 0..total {
        let b = if i < bases { i } else { r.gen_range(0..bases) };
        let line = 5 + 3 * b;
        let mut added = vec![format!("    result_{b} = transform(x, {b})"), format!("    return result_{b}")];
        if r.gen_bool(0.3) {
            for a in &mut added {
                a.push_str(["  ", "\t", " "][r.gen_range(0..3)]);
            }
        }
        if r.gen_bool(0.3) {
            added[0] = added[0].replace(" = ", "  =   ");
        }
        if r.gen_bool(0.3) {
            added[1].push_str("  # propagate");
        }
        if r.gen_bool(0.3) {
            added.insert(1, String::new());
        }
        if r.gen_bool(0.2) {
            added.insert(0, "    # clamp first".into());
        }
        let ctx = r.gen_range(0..=3);
        let mut hl = Vec::new();
        for c in (1..=ctx).rev() {
            hl.push(HunkLine::new(LineKind::Context, format!("line_{} = {}", line - c, line - c)));
        }
        hl.push(HunkLine::new(LineKind::Removed, format!("    result_{b} = x")));
        hl.extend(added.into_iter().map(|a| HunkLine::new(LineKind::Added, a)));
        for c in 1..=ctx {
            hl.push(HunkLine::new(LineKind::Context, format!("line_{} = {}", line + c, line + c)));
        }
        let shift = if r.gen_bool(0.3) { r.gen_range(1..40) } else { 0 };
        let start = line - ctx + shift;
        let sp = StructuredPatch {
            files: vec![FileChange {
                old_path: Some("pkg/core.py".into()),
                new_path: Some("pkg/core.py".into()),
                hunks: vec![Hunk::from_lines(start, start, hl)],
            }],
        };
        let id = format!("p{i:03}");
        base_of.insert(id.clone(), b);
        patches.push(CandidatePatch::new(id, sp.to_unified(), i));
    }
    patches.shuffle(&mut r);
    DedupCorpus { patches, base_of }
}

/// Pairwise normalize-and-compare with union-find: O(n^2) comparisons.
/// Classes are returned as sorted member lists, sorted.
pub fn oracle_classes(patches: &[CandidatePatch], profile: &str) -> Vec<Vec<String>> {
    let forms: Vec<Option<String>> = patches
        .iter()
        .map(|p| {
            let sp = parse_patch(&p.raw_text).ok()?;
            Some(normalize(&sp, profile).ok()?.canonical_form())
        })
        .collect();
    let n = patches.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        if p[i] != i {
            let root = find(p, p[i]);
            p[i] = root;
        }
        p[i]
    }
    for i in 0..n {
        for j in i + 1..n {
            if forms[i].is_some() && forms[i] == forms[j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for i in 0..n {
        if forms[i].is_some() {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().push(patches[i].id.clone());
        }
    }
    let mut out: Vec<Vec<String>> = groups.into_values().map(|mut g| {
        g.sort();
        g
    }).collect();
    out.sort();
    out
}

pub fn sorted_classes(report: &patchvote::patch::DedupReport) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = report
        .classes
        .iter()
        .map(|c| {
            let mut m = c.members.clone();
            m.sort();
            m
        })
        .collect();
    out.sort();
    out
}

pub fn fixture_config(fx: &ToyIssue, seed: u64) -> PipelineConfig {
    PipelineConfig {
        seed,
        ensemble: EnsembleConfig { ensemble_size: fx.meta.ensemble_size, ..Default::default() },
        regression: Some(RegressionStageConfig {
            runner: fx.meta.runner.clone(),
            refine: true,
            tester: "mock".into(),
            refine_options: Default::default(),
            initial_tests: None,
        }),
        ..Default::default()
    }
}

pub fn frozen_runtime(workers: usize) -> Runtime {
    Runtime { workers, limits: Limits::default(), clock: Clock::epoch() }
}

/// Index of the maximum of `counts`, all maxima listed.
pub fn brute_argmax(counts: &[usize]) -> Vec<usize> {
    let best = *counts.iter().max().unwrap();
    (0..counts.len()).filter(|&i| counts[i] == best).collect()
}

/// Exhaustive two-sided signed-rank p-value: enumerates all 2^n sign
/// assignments of the absolute differences' average ranks.
pub fn brute_wilcoxon_p(x: &[f64], y: &[f64]) -> Option<f64> {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return None;
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let mut ranks = vec![0.0; n];
    for i in 0..n {
        let less = abs.iter().filter(|&&a| a < abs[i]).count();
        let equal = abs.iter().filter(|&&a| a == abs[i]).count();
        ranks[i] = less as f64 + (equal as f64 + 1.0) / 2.0;
    }
    let w_plus: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let total: f64 = ranks.iter().sum();
    let observed = w_plus.min(total - w_plus);
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w.min(total - w) <= observed + 1e-9 {
            extreme += 1;
        }
    }
    Some((extreme as f64 / (1u64 << n) as f64).min(1.0))
}

pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|a| {
            let less = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    brute_pearson(&brute_ranks(x), &brute_ranks(y))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Tau-b from concordant/discordant pair counts and per-variable ties.
pub fn brute_kendall(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in i + 1..n {
            let a = sign(x[i] - x[j]);
            let b = sign(y[i] - y[j]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            if a == 0.0 {
                tx += 1.0;
            } else if b == 0.0 {
                ty += 1.0;
            } else if a == b {
                c += 1.0;
            } else {
                d += 1.0;
            }
        }
    }
    (c - d) / ((c + d + tx) * (c + d + ty)).sqrt()
}
