//! Patch selection by majority vote over independent selector runs.

mod agent;

pub use agent::{
    parse_choice, parse_ranking, presentation_order, run_selector_once, AgentVoter, SelectorRunOptions, VoterRecord,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Interaction rounds allowed to one selector run.
pub const MAX_ROUNDS: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub voter_index: usize,
    pub chosen: String,
    pub rationale: String,
    pub rounds_used: usize,
    #[serde(default)]
    pub generated_tests: Vec<String>,
    /// The round cap was hit before the voter chose.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: String,
    pub votes: Vec<Vote>,
    pub tally: BTreeMap<String, usize>,
    pub early_stopped: bool,
    pub tie_broken: bool,
    pub seed: u64,
    pub voters_planned: usize,
    pub voters_invoked: usize,
    /// Voters that failed, with their error messages.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub voter_errors: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectorError {
    #[error("no candidates to select from")]
    NoCandidates,
    #[error("every voter failed")]
    NoVotes(Vec<(usize, String)>),
    #[error("selector run failed: {0}")]
    Voter(String),
}

/// Something that casts one vote over a fixed candidate set.
pub trait Voter: Send + Sync {
    fn vote(&self, voter_index: usize) -> Result<Vote, SelectorError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    /// Defaults to the number of candidates.
    pub voters: Option<usize>,
    pub seed: u64,
    pub max_rounds: usize,
    pub temperature: f64,
    /// Provider names assigned to voters round-robin.
    pub providers: Vec<String>,
    /// Shuffle candidate order per voter.
    pub randomize_order: bool,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            voters: None,
            seed: 0,
            max_rounds: MAX_ROUNDS,
            temperature: crate::llm::JUDGE_TEMPERATURE,
            providers: vec!["mock".into()],
            randomize_order: true,
        }
    }
}

/// Majority winner of `votes`, ties drawn uniformly with a generator seeded
/// by `seed`. Argmax members are ordered as in `candidates` before the draw.
pub fn tally_winner(candidates: &[String], votes: &[Vote], seed: u64) -> (String, BTreeMap<String, usize>, bool) {
    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    for v in votes {
        *tally.entry(v.chosen.clone()).or_default() += 1;
    }
    let best = tally.values().copied().max().unwrap_or(0);
    let top: Vec<&String> = candidates.iter().filter(|c| tally.get(*c) == Some(&best)).collect();
    let tie = top.len() > 1;
    let pick = if tie {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        top[rng.gen_range(0..top.len())].clone()
    } else {
        top[0].clone()
    };
    (pick, tally, tie)
}

fn run_wave(
    voter: &dyn Voter,
    indices: std::ops::Range<usize>,
    workers: usize,
    invoked: &AtomicUsize,
) -> Vec<(usize, Result<Vote, SelectorError>)> {
    let start = indices.start;
    let len = indices.len();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<Vote, SelectorError>>>> = Mutex::new((0..len).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, len.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= len {
                    break;
                }
                invoked.fetch_add(1, Ordering::SeqCst);
                let v = voter.vote(start + i);
                slots.lock().expect("slots")[i] = Some(v);
            });
        }
    });
    slots
        .into_inner()
        .expect("slots")
        .into_iter()
        .enumerate()
        .map(|(i, v)| (start + i, v.expect("filled")))
        .collect()
}

/// Casts up to `n_voters` votes over `candidates` and returns the winner.
///
/// Voters `0..⌈n/2⌉` run first. If they all succeed and agree, their
/// choice is returned without running the rest; otherwise the remaining
/// voters run and the full tally decides.
pub fn majority_vote(
    candidates: &[String],
    n_voters: usize,
    seed: u64,
    voter: &dyn Voter,
    workers: usize,
) -> Result<SelectionResult, SelectorError> {
    if candidates.is_empty() {
        return Err(SelectorError::NoCandidates);
    }
    let n = n_voters.max(1);
    let half = n.div_ceil(2);
    let invoked = AtomicUsize::new(0);

    let mut results = run_wave(voter, 0..half, workers, &invoked);
    let valid = |r: &Result<Vote, SelectorError>| matches!(r, Ok(v) if candidates.contains(&v.chosen));
    let first_wave_unanimous = results.iter().all(|(_, r)| valid(r)) && {
        let chosen: Vec<&str> = results
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok())
            .map(|v| v.chosen.as_str())
            .collect();
        chosen.windows(2).all(|w| w[0] == w[1])
    };
    if !first_wave_unanimous {
        results.extend(run_wave(voter, half..n, workers, &invoked));
    }

    let mut votes = Vec::new();
    let mut errors = Vec::new();
    for (i, r) in results {
        match r {
            Ok(v) if candidates.contains(&v.chosen) => votes.push(v),
            Ok(v) => errors.push((i, format!("vote for unknown candidate `{}`", v.chosen))),
            Err(e) => errors.push((i, e.to_string())),
        }
    }
    if votes.is_empty() {
        return Err(SelectorError::NoVotes(errors));
    }
    votes.sort_by_key(|v| v.voter_index);
    let (selected, tally, tie_broken) = tally_winner(candidates, &votes, seed);
    Ok(SelectionResult {
        selected,
        votes,
        tally,
        early_stopped: first_wave_unanimous && half < n,
        tie_broken,
        seed,
        voters_planned: n,
        voters_invoked: invoked.load(Ordering::SeqCst),
        voter_errors: errors,
    })
}

/// Voter returning pre-set choices; `None` entries fail. Counts its calls.
pub struct ScriptedVoter {
    pub choices: Vec<Option<String>>,
    pub calls: AtomicUsize,
}

impl ScriptedVoter {
    pub fn new<S: Into<String>>(choices: impl IntoIterator<Item = Option<S>>) -> Self {
        ScriptedVoter {
            choices: choices.into_iter().map(|c| c.map(Into::into)).collect(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Voter for ScriptedVoter {
    fn vote(&self, voter_index: usize) -> Result<Vote, SelectorError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.choices.get(voter_index).cloned().flatten() {
            Some(chosen) => Ok(Vote {
                voter_index,
                chosen,
                rationale: String::new(),
                rounds_used: 1,
                generated_tests: Vec::new(),
                forced: false,
            }),
            None => Err(SelectorError::Voter(format!("voter {voter_index} scripted to fail"))),
        }
    }
}
