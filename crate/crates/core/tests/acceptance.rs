//! Acceptance checks 1-11. Runs without the libtest harness so each
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

mod common;

use common::*;
use patchvote::coder::replay_coder_run;
use patchvote::eval::{
    confusion_metrics, correlations, ensemble_bounds, wilcoxon_signed_rank, CorrectnessMatrix,
};
use patchvote::fixtures::{load_fixture, FIXTURE_NAMES};
use patchvote::patch::{apply_patch, deduplicate, diff_trees, parse_patch, DiffOptions, PatchError, DEFAULT_PROFILE};
use patchvote::pipeline::{
    ablation_consistency, patches_by_id, run_pipeline, stage_generate, Ablation, RunManifest, Stage, MANIFEST_FILE,
};
use patchvote::selector::{majority_vote, tally_winner, ScriptedVoter, Vote};
use patchvote::tools::Limits;
use patchvote::trajectory::Trajectory;
use rand::Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_metrics() -> Result<String, String> {
    let c = confusion_metrics(10424, 2231, 6608, 737).map_err(|e| e.to_string())?;
    let got = [c.accuracy, c.precision.unwrap(), c.recall.unwrap(), c.f1.unwrap()].map(|v| v * 100.0);
    let want = [63.28, 61.20, 93.40, 73.95];
    for (g, w) in got.iter().zip(want) {
        ensure((g - w).abs() <= 0.005, || format!("{g:.4} vs {w}"))?;
    }
    Ok(format!("{:.4} / {:.4} / {:.4} / {:.4}", got[0], got[1], got[2], got[3]))
}

fn c2_bounds() -> Result<String, String> {
    let mut r = rng(2);
    for trial in 0..100 {
        let issues = r.gen_range(1..=500);
        let width = r.gen_range(1..=10);
        let p = r.gen_range(0.0..1.0);
        let rows: Vec<Vec<bool>> = (0..issues).map(|_| (0..width).map(|_| r.gen_bool(p)).collect()).collect();
        let b = ensemble_bounds(&CorrectnessMatrix::from_rows(rows.clone()).unwrap()).unwrap();
        let n = issues as f64;
        let or = rows.iter().filter(|row| row.iter().any(|&x| x)).count() as f64 / n;
        let and = rows.iter().filter(|row| row.iter().all(|&x| x)).count() as f64 / n;
        let mean = rows.iter().map(|row| row.iter().filter(|&&x| x).count() as f64 / width as f64).sum::<f64>() / n;
        ensure(b.oracle == or && b.adversary == and, || format!("trial {trial}: OR/AND mismatch"))?;
        ensure((b.average - mean).abs() < 1e-12, || format!("trial {trial}: mean {} vs {mean}", b.average))?;
        ensure(b.adversary <= b.average && b.average <= b.oracle, || format!("trial {trial}: order"))?;
    }
    Ok("100 matrices".into())
}

fn c3_monotonicity() -> Result<String, String> {
    let mut r = rng(3);
    for trial in 0..1000 {
        let issues = r.gen_range(1..50);
        let width = r.gen_range(1..8);
        let m = patchvote::fixtures::synthetic_matrix(issues, width, r.gen_range(0.0..1.0), r.gen());
        let col: Vec<bool> = (0..issues).map(|_| r.gen_bool(0.5)).collect();
        let (a, b) = (ensemble_bounds(&m).unwrap(), ensemble_bounds(&m.with_column(&col)).unwrap());
        ensure(b.oracle >= a.oracle && b.adversary <= a.adversary, || format!("trial {trial}"))?;
    }
    Ok("1000 appends".into())
}

fn c4_dedup() -> Result<String, String> {
    for trial in 0..100 {
        let corpus = dedup_corpus(400 + trial, 20, 200);
        let report = deduplicate(&corpus.patches, DEFAULT_PROFILE).map_err(|e| e.to_string())?;
        let oracle = oracle_classes(&corpus.patches, DEFAULT_PROFILE);
        ensure(sorted_classes(&report) == oracle, || format!("trial {trial}: membership differs"))?;
        ensure(oracle.len() == 20, || format!("trial {trial}: oracle found {} classes", oracle.len()))?;
    }
    Ok("100/100 corpora".into())
}

fn c5_round_trip() -> Result<String, String> {
    let mut r = rng(5);
    let mut n = 0;
    while n < 500 {
        let old = random_tree(&mut r, 4, 30);
        let new = mutate_tree(&mut r, &old, true);
        let opts = DiffOptions { context: r.gen_range(0..4), ..Default::default() };
        let (patch, _) = diff_trees(&old, &new, &opts);
        if patch.is_empty() {
            continue;
        }
        let text = patch.to_unified();
        let ours = apply_patch(&old, &parse_patch(&text).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let reference = reference_apply(&old, &text)?;
        ensure(ours == reference && ours == new, || format!("diff {n} differs from the reference application"))?;
        n += 1;
    }
    let invalid = invalid_corpus(5, 10);
    for (label, text) in &invalid {
        ensure(matches!(parse_patch(text), Err(PatchError::InvalidPatch { .. })), || format!("{label} accepted"))?;
    }
    Ok(format!("500 diffs, {} invalid rejected", invalid.len()))
}

fn c6_regression() -> Result<String, String> {
    let run = |name: &str| -> Result<(RunManifest, tempfile::TempDir), String> {
        let fx = load_fixture(name).map_err(|e| e.to_string())?;
        let out = tempfile::tempdir().unwrap();
        let m = run_pipeline(&fx.task(), &fixture_config(&fx, 11), &frozen_runtime(2), &fx.providers(), out.path(), &Default::default())
            .map_err(|e| e.to_string())?;
        Ok((m, out))
    };
    let (trap, _t) = run("regtrap")?;
    let fx = load_fixture("regtrap").unwrap();
    let report = &trap.regression.as_ref().ok_or("no regression output")?.report;
    let patches = patches_by_id(&trap);
    ensure(report.survivors.len() == 1 && !report.fallback_triggered, || format!("survivors {:?}", report.survivors))?;
    let good = &report.survivors[0];
    ensure(fx.grade(&patches[good]).unwrap(), || format!("{good} survives but fails golden tests"))?;
    let dropped: Vec<&String> = report.outcomes.iter().filter(|(_, o)| !o.clean()).map(|(id, _)| id).collect();
    ensure(!dropped.is_empty(), || "trap patch was not discarded".into())?;

    let (all, _a) = run("allfail")?;
    let report = &all.regression.as_ref().ok_or("no regression output")?.report;
    let input = &all.record(Stage::Dedup).forwarded;
    ensure(report.fallback_triggered && &report.survivors == input, || "all-fail fallback did not retain the set".into())?;
    Ok(format!("trap dropped {dropped:?}, kept {good}; all-fail kept {}", input.len()))
}

fn scripted_vote(i: usize, chosen: &str) -> Vote {
    Vote {
        voter_index: i,
        chosen: chosen.into(),
        rationale: String::new(),
        rounds_used: 1,
        generated_tests: Vec::new(),
        forced: false,
    }
}

fn c7_voting() -> Result<String, String> {
    let cands: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let voter = ScriptedVoter::new([Some("a"), Some("a"), Some("b")]);
    let res = majority_vote(&cands, 3, 0, &voter, 1).map_err(|e| e.to_string())?;
    ensure(voter.calls() == 2 && res.early_stopped && res.selected == "a", || format!("{} invocations", voter.calls()))?;

    let mut r = rng(7);
    for trial in 0..1000 {
        let n = r.gen_range(1..=9);
        let k = r.gen_range(1..=4);
        let ids: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
        let picks: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let voter = ScriptedVoter::new(picks.iter().map(|&p| Some(ids[p].clone())));
        let res = majority_vote(&ids, n, r.gen(), &voter, 3).map_err(|e| e.to_string())?;
        // brute force over the votes the protocol casts
        let half = n.div_ceil(2);
        let cast = if picks[..half].windows(2).all(|w| w[0] == w[1]) { half } else { n };
        let mut counts = vec![0; k];
        for &p in &picks[..cast] {
            counts[p] += 1;
        }
        let best = brute_argmax(&counts);
        let pick = ids.iter().position(|c| *c == res.selected).unwrap();
        ensure(best.contains(&pick) && res.tie_broken == (best.len() > 1) && voter.calls() == cast, || {
            format!("trial {trial}: picks {picks:?} selected {}", res.selected)
        })?;
    }

    let ids: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
    let votes: Vec<Vote> = [0, 1, 2, 0, 1, 2, 3].iter().enumerate().map(|(i, &p)| scripted_vote(i, &ids[p])).collect();
    let mut wins = [0usize; 4];
    for seed in 0..10_000 {
        let (w, _, _) = tally_winner(&ids, &votes, seed);
        wins[ids.iter().position(|c| *c == w).unwrap()] += 1;
    }
    let shares: Vec<f64> = wins.iter().map(|&w| w as f64 / 10_000.0).collect();
    ensure(wins[3] == 0, || "non-argmax candidate won a tie".into())?;
    for s in &shares[..3] {
        ensure((s - 1.0 / 3.0).abs() <= 0.02, || format!("tie shares {shares:?}"))?;
    }
    Ok(format!("early stop after 2 calls; tie shares {:.4}/{:.4}/{:.4}", shares[0], shares[1], shares[2]))
}

fn c8_determinism() -> Result<String, String> {
    let fx = load_fixture("duplicates").map_err(|e| e.to_string())?;
    let cfg = fixture_config(&fx, 11);
    let mut manifests = Vec::new();
    let mut last = None;
    for (i, workers) in [1, 4, 1, 4, 4].into_iter().enumerate() {
        let out = tempfile::tempdir().unwrap();
        let m = run_pipeline(&fx.task(), &cfg, &frozen_runtime(workers), &fx.providers(), out.path(), &Default::default())
            .map_err(|e| format!("run {i}: {e}"))?;
        manifests.push(std::fs::read(out.path().join(MANIFEST_FILE)).unwrap());
        last = Some(m);
    }
    ensure(manifests.windows(2).all(|w| w[0] == w[1]), || "manifests differ between runs".into())?;
    let m = last.unwrap();
    let selected = m.selected.clone().ok_or("nothing selected")?;
    ensure(fx.grade(&patches_by_id(&m)[&selected]).unwrap(), || format!("{selected} fails golden tests"))?;
    Ok(format!("5 identical manifests, selected {selected}"))
}

fn c9_replay() -> Result<String, String> {
    let mut replayed = 0;
    for name in FIXTURE_NAMES {
        let fx = load_fixture(name).map_err(|e| e.to_string())?;
        let task = fx.task();
        let out = tempfile::tempdir().unwrap();
        let cfg = fixture_config(&fx, 11).effective();
        let generated = stage_generate(&task, &cfg, &frozen_runtime(2), &fx.providers(), out.path())?;
        for run in &generated.runs {
            let recorded = Trajectory::load(&out.path().join(&run.trajectory)).map_err(|e| e.to_string())?;
            let again = replay_coder_run(&task, &fx.repo, &recorded, Limits::default());
            let original = generated.patches.iter().find(|p| Some(&p.id) == run.patch_id.as_ref());
            let same = match (original, &again.result) {
                (Some(p), Ok(q)) => p.raw_text == q.raw_text && p.id == q.id,
                (None, Err(_)) => true,
                _ => false,
            };
            ensure(same, || format!("{name} run {} replays to a different result", run.run_index))?;
            replayed += 1;
        }
    }
    Ok(format!("{replayed} runs on {} fixtures", FIXTURE_NAMES.len()))
}

fn c10_stats() -> Result<String, String> {
    let mut r = rng(10);
    for case in 0..200 {
        let n = r.gen_range(1..=12);
        let discrete = r.gen_bool(0.5);
        let draw = |r: &mut rand_chacha::ChaCha8Rng| if discrete { r.gen_range(0..5) as f64 } else { r.gen_range(-3.0..3.0) };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        match (brute_wilcoxon_p(&x, &y), wilcoxon_signed_rank(&x, &y)) {
            (None, Err(_)) => {}
            (Some(p), Ok(w)) => ensure((w.p_value - p).abs() <= 1e-12, || format!("case {case}: {} vs {p}", w.p_value))?,
            _ => return Err(format!("case {case}: degenerate input handled differently")),
        }
    }
    let mut checked = 0;
    while checked < 200 {
        let n = r.gen_range(2..40);
        let discrete = r.gen_bool(0.5);
        let draw = |r: &mut rand_chacha::ChaCha8Rng| if discrete { r.gen_range(0..6) as f64 } else { r.gen_range(-1.0..1.0) };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let Ok(c) = correlations(&x, &y) else { continue };
        let want = [brute_pearson(&x, &y), brute_spearman(&x, &y), brute_kendall(&x, &y)];
        let got = [c.pearson_r, c.spearman_rho, c.kendall_tau];
        for (g, w) in got.iter().zip(want) {
            ensure((g - w).abs() <= 1e-10, || format!("vector {checked}: {got:?} vs {want:?}"))?;
        }
        checked += 1;
    }
    Ok("200 Wilcoxon cases, 200 correlation vectors".into())
}

fn c11_ablations() -> Result<String, String> {
    let fixtures = ["duplicates", "regtrap", "offbyone"];
    for name in fixtures {
        let fx = load_fixture(name).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().unwrap();
        let base = fixture_config(&fx, 11);
        let run = |ab: Ablation| {
            run_pipeline(&fx.task(), &base.with_ablation(ab), &frozen_runtime(2), &fx.providers(), &dir.path().join(ab.as_str()), &Default::default())
                .map_err(|e| format!("{name}/{}: {e}", ab.as_str()))
        };
        let full = run(Ablation::Full)?;
        for ab in [Ablation::WoD, Ablation::WoR, Ablation::WoP, Ablation::WoM] {
            let variant = run(ab)?;
            ablation_consistency(&full, &variant).map_err(|e| format!("{name}/{}: {e}", ab.as_str()))?;
        }
    }
    Ok(format!("4 variants on {}", fixtures.join(", ")))
}

fn main() {
    let checks: [(&str, Check, Duration); 11] = [
        ("metric reproduction", c1_metrics, Duration::from_secs(1)),
        ("bounds oracle equivalence", c2_bounds, Duration::from_secs(5)),
        ("bounds monotonicity", c3_monotonicity, Duration::from_secs(5)),
        ("dedup oracle equivalence", c4_dedup, Duration::from_secs(30)),
        ("diff round-trip", c5_round_trip, Duration::from_secs(30)),
        ("regression semantics", c6_regression, Duration::from_secs(120)),
        ("voting contract", c7_voting, Duration::from_secs(60)),
        ("end-to-end determinism", c8_determinism, Duration::from_secs(120)),
        ("replay fidelity", c9_replay, Duration::from_secs(60)),
        ("wilcoxon and correlation exactness", c10_stats, Duration::from_secs(30)),
        ("ablation wiring", c11_ablations, Duration::from_secs(180)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check, limit)) in checks.into_iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            o => o,
        };
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({elapsed:.2?}): {detail}", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} ({elapsed:.2?}): {e}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
