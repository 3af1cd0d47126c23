use super::{normalize, parse_patch, CandidatePatch, LanguageProfile, PatchError};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceClass {
    pub digest: String,
    pub representative: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvalidEntry {
    pub id: String,
    pub reason: String,
}

/// Output of [`deduplicate`], serialized as the dedup report document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub classes: Vec<EquivalenceClass>,
    pub invalid: Vec<InvalidEntry>,
}

impl DedupReport {
    pub fn representatives(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.representative.as_str())
    }

    /// Fraction of valid patches removed as duplicates.
    pub fn redundancy(&self) -> f64 {
        let valid: usize = self.classes.iter().map(|c| c.members.len()).sum();
        if valid == 0 {
            return 0.0;
        }
        (valid - self.classes.len()) as f64 / valid as f64
    }

    pub fn class_of(&self, id: &str) -> Option<&EquivalenceClass> {
        self.classes.iter().find(|c| c.members.iter().any(|m| m == id))
    }
}

/// Groups patches by normalized digest. Unparseable and empty patches are
/// listed under `invalid` with their reason code.
pub fn deduplicate(patches: &[CandidatePatch], profile: &str) -> Result<DedupReport, PatchError> {
    LanguageProfile::lookup(profile)?;
    if patches.is_empty() {
        return Err(PatchError::EmptyInput);
    }

    let mut ordered: Vec<&CandidatePatch> = patches.iter().collect();
    ordered.sort_by(|a, b| a.order_key().cmp(&b.order_key()));

    let mut report = DedupReport::default();
    let mut by_digest: HashMap<String, usize> = HashMap::new();
    for patch in ordered {
        let normalized = parse_patch(&patch.raw_text).and_then(|p| normalize(&p, profile));
        match normalized {
            Ok(n) => match by_digest.get(&n.digest) {
                Some(&idx) => report.classes[idx].members.push(patch.id.clone()),
                None => {
                    by_digest.insert(n.digest.clone(), report.classes.len());
                    report.classes.push(EquivalenceClass {
                        digest: n.digest,
                        representative: patch.id.clone(),
                        members: vec![patch.id.clone()],
                    });
                }
            },
            Err(e) => report.invalid.push(InvalidEntry {
                id: patch.id.clone(),
                reason: e.code().to_string(),
            }),
        }
    }
    Ok(report)
}
