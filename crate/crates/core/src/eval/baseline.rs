//! Single-prompt selectors used as comparison points for voting.

use super::EvalError;
use crate::llm::{Conversation, LlmClient, Message, TokenBudget};
use crate::patch::CandidatePatch;
use crate::selector::parse_choice;
use crate::trajectory::Trajectory;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// One prompt showing every candidate; the model names the best.
    Judge,
    /// One prompt per candidate asking for a justified score; highest wins.
    Score,
    /// Uniform seeded draw.
    Random,
}

impl std::str::FromStr for BaselineKind {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "judge" => Ok(BaselineKind::Judge),
            "score" => Ok(BaselineKind::Score),
            "random" => Ok(BaselineKind::Random),
            other => Err(EvalError::Parse(format!("unknown baseline `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePick {
    pub kind: BaselineKind,
    pub patch_id: String,
    /// Per-candidate scores for [`BaselineKind::Score`]; `None` where no
    /// score could be read.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<Option<f64>>,
    pub tie_broken: bool,
    /// The answer was unreadable and the first candidate was taken.
    pub fallback: bool,
}

const JUDGE_PROMPT: &str = "\
You compare candidate patches for an issue. Check each one against the issue \
description and decide which resolves it best. Answer with \
<selected_patch>patch-N</selected_patch> and one sentence of justification.";

const SCORE_PROMPT: &str = "\
You assess one candidate patch for an issue. Explain briefly whether it resolves \
the issue, then give your confidence that it is correct as a number between 0 and 1 \
in the form <score>0.75</score>.";

fn seeded_index(n: usize, seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).gen_range(0..n)
}

fn ask(client: &LlmClient, system: &str, user: String, trajectory: &mut Trajectory) -> Result<String, EvalError> {
    let mut conv = Conversation::new();
    conv.push(Message::system(system));
    conv.push(Message::user(user));
    client
        .complete(&conv, &[], trajectory, &mut TokenBudget::unlimited())
        .map(|r| r.content)
        .map_err(|e| EvalError::Provider(e.to_string()))
}

/// Score inside the last `<score>` tag, clamped to `[0, 1]`.
pub fn parse_score(text: &str) -> Option<f64> {
    let start = text.rfind("<score>")? + "<score>".len();
    let end = text[start..].find("</score>")? + start;
    let v: f64 = text[start..end].trim().parse().ok()?;
    v.is_finite().then(|| v.clamp(0.0, 1.0))
}

/// Picks one of `candidates` with a baseline policy. `client` is needed by
/// every kind except [`BaselineKind::Random`]; ties are drawn with `seed`.
pub fn baseline_select(
    kind: BaselineKind,
    candidates: &[CandidatePatch],
    issue_text: &str,
    client: Option<&LlmClient>,
    seed: u64,
    trajectory: &mut Trajectory,
) -> Result<BaselinePick, EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::NoCandidates);
    }
    let pick = |patch_id: &str, scores, tie_broken, fallback| BaselinePick {
        kind,
        patch_id: patch_id.to_string(),
        scores,
        tie_broken,
        fallback,
    };
    if kind == BaselineKind::Random {
        return Ok(pick(&candidates[seeded_index(candidates.len(), seed)].id, Vec::new(), false, false));
    }
    let client = client.ok_or_else(|| EvalError::Provider("no provider configured".into()))?;
    let issue = format!("<issue>\n{}\n</issue>\n", issue_text.trim_end());

    match kind {
        BaselineKind::Judge => {
            let labels: Vec<(String, String)> = candidates
                .iter()
                .enumerate()
                .map(|(i, c)| (format!("patch-{}", i + 1), c.id.clone()))
                .collect();
            let mut user = issue;
            for ((label, _), c) in labels.iter().zip(candidates) {
                user.push_str(&format!("\n## {label}\n```diff\n{}```\n", c.raw_text));
            }
            let answer = ask(client, JUDGE_PROMPT, user, trajectory)?;
            Ok(match parse_choice(&answer, &labels) {
                Some(id) => pick(&id, Vec::new(), false, false),
                None => pick(&candidates[0].id, Vec::new(), false, true),
            })
        }
        BaselineKind::Score => {
            let mut scores = Vec::with_capacity(candidates.len());
            for c in candidates {
                let user = format!("{issue}\n```diff\n{}```\n", c.raw_text);
                scores.push(parse_score(&ask(client, SCORE_PROMPT, user, trajectory)?));
            }
            let best = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            if best == f64::NEG_INFINITY {
                return Ok(pick(&candidates[0].id, scores, false, true));
            }
            let top: Vec<usize> = (0..candidates.len()).filter(|&i| scores[i] == Some(best)).collect();
            let i = top[if top.len() > 1 { seeded_index(top.len(), seed) } else { 0 }];
            Ok(pick(&candidates[i].id, scores, top.len() > 1, false))
        }
        BaselineKind::Random => unreachable!("handled above"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockProvider, ModelParams, ModelResponse, RetryPolicy};
    use crate::trajectory::AgentKind;
    use std::sync::Arc;

    fn cands(n: usize) -> Vec<CandidatePatch> {
        (0..n).map(|i| CandidatePatch::new(format!("p{i}"), format!("--- a/f\n+++ b/f\n@@ -1 +1 @@\n-a\n+{i}\n"), i)).collect()
    }

    fn client(answers: &[&str]) -> LlmClient {
        let rs = answers.iter().map(|a| ModelResponse::text(*a)).collect();
        LlmClient::new(Arc::new(MockProvider::sequence("b", rs)), ModelParams::new("b", "m", 0.2))
            .with_retry(RetryPolicy::immediate(1))
    }

    fn traj() -> Trajectory {
        Trajectory::new("baseline", AgentKind::Selector)
    }

    #[test]
    fn random_is_seeded_and_covers_all() {
        let c = cands(3);
        let a = baseline_select(BaselineKind::Random, &c, "i", None, 5, &mut traj()).unwrap();
        let b = baseline_select(BaselineKind::Random, &c, "i", None, 5, &mut traj()).unwrap();
        assert_eq!(a, b);
        let mut hits = [0usize; 3];
        for s in 0..3000 {
            let p = baseline_select(BaselineKind::Random, &c, "i", None, s, &mut traj()).unwrap();
            hits[p.patch_id[1..].parse::<usize>().unwrap()] += 1;
        }
        assert!(hits.iter().all(|&h| (900..1100).contains(&h)), "{hits:?}");
    }

    #[test]
    fn score_ties_are_seeded() {
        let c = cands(3);
        let answers = ["weak <score>0.2</score>", "good <score>0.9</score>", "good <score>0.9</score>"];
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..32 {
            let p = baseline_select(BaselineKind::Score, &c, "i", Some(&client(&answers)), seed, &mut traj()).unwrap();
            assert!(p.tie_broken);
            assert_eq!(p.scores, [Some(0.2), Some(0.9), Some(0.9)]);
            seen.insert(p.patch_id);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), ["p1", "p2"]);
    }

    #[test]
    fn judge_follows_answer() {
        let c = cands(3);
        let p = baseline_select(
            BaselineKind::Judge,
            &c,
            "i",
            Some(&client(&["<selected_patch>patch-2</selected_patch>"])),
            0,
            &mut traj(),
        )
        .unwrap();
        assert_eq!(p.patch_id, "p1");
        assert!(!p.fallback);
        let p = baseline_select(BaselineKind::Judge, &c, "i", Some(&client(&["unsure"])), 0, &mut traj()).unwrap();
        assert!(p.fallback);
    }

    #[test]
    fn errors() {
        assert_eq!(
            baseline_select(BaselineKind::Random, &[], "i", None, 0, &mut traj()),
            Err(EvalError::NoCandidates)
        );
        assert!(matches!(
            baseline_select(BaselineKind::Judge, &cands(2), "i", Some(&client(&[])), 0, &mut traj()),
            Err(EvalError::Provider(_))
        ));
    }
}
