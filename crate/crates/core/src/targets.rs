//! Partial ranking targets built from teacher scores over mined hard negatives.

use crate::error::{Error, Result};
use crate::mining::HardNegativeSet;
use crate::synthworld::{Direction, LatentCorpus, SimilarityBank, TeacherSim};

/// Teacher-ordered valid hard negatives plus the unordered invalid remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialRankingTarget {
    pub query: usize,
    /// Descending teacher score, ties by ascending id.
    pub valid: Vec<usize>,
    pub valid_scores: Vec<f64>,
    pub invalid: Vec<usize>,
    /// 1-based index of the first invalid entry, `|valid| + 1`.
    pub first_invalid: usize,
}

impl PartialRankingTarget {
    pub fn is_vacuous(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn k(&self) -> usize {
        self.valid.len() + self.invalid.len()
    }
}

/// How the valid set is chosen from the scored hard negatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValidityRule {
    /// Valid iff score ≥ m.
    Threshold(f64),
    /// Exactly the single highest-scored negative is valid.
    TopOne,
}

/// Where teacher scores come from.
#[derive(Debug, Clone, Copy)]
pub enum ScoreSource<'a> {
    Online {
        teacher: &'a TeacherSim,
        corpus: &'a LatentCorpus,
        direction: Direction,
    },
    Offline {
        bank: Option<&'a SimilarityBank>,
    },
}

impl ScoreSource<'_> {
    /// Score `candidate` (a corpus item id, or `None` when the teacher cannot
    /// see its raw input) for `query`. `None` marks the negative invalid.
    pub fn score(&self, query: usize, candidate: Option<usize>) -> Result<Option<f64>> {
        match *self {
            ScoreSource::Online {
                teacher,
                corpus,
                direction,
            } => Ok(candidate.map(|c| {
                let (img, txt) = direction.image_text(query, c);
                teacher.score(corpus, img, txt)
            })),
            ScoreSource::Offline { bank } => {
                let bank = bank.ok_or(Error::MissingBank)?;
                Ok(candidate.and_then(|c| bank.lookup(query, c)))
            }
        }
    }
}

/// Split scored hard negatives into the valid teacher order and the invalid
/// set. `scores[k]` belongs to `hard.ids[k]`; `None` means unscored (invalid).
pub fn build_target_from_scores(
    hard: &HardNegativeSet,
    scores: &[Option<f64>],
    rule: ValidityRule,
) -> Result<PartialRankingTarget> {
    if scores.len() != hard.len() {
        return Err(Error::LengthMismatch {
            left: hard.len(),
            right: scores.len(),
        });
    }
    if let ValidityRule::Threshold(m) = rule {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::InvalidInput(format!("threshold m = {m} outside [0,1]")));
        }
    }
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(hard.len());
    let mut invalid = Vec::new();
    for (&id, s) in hard.ids.iter().zip(scores) {
        match s {
            Some(p) => scored.push((id, *p)),
            None => invalid.push(id),
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let n_valid = match rule {
        ValidityRule::Threshold(m) => scored.iter().take_while(|(_, p)| *p >= m).count(),
        ValidityRule::TopOne => scored.len().min(1),
    };
    let (valid, rest) = scored.split_at(n_valid);
    invalid.extend(rest.iter().map(|e| e.0));
    Ok(PartialRankingTarget {
        query: hard.query,
        valid: valid.iter().map(|e| e.0).collect(),
        valid_scores: valid.iter().map(|e| e.1).collect(),
        invalid,
        first_invalid: n_valid + 1,
    })
}

/// Build the target for `hard`, resolving each hard-negative key to a corpus
/// item via `resolve` (returning `None` when the teacher cannot see it).
pub fn build_target<F>(
    query_item: usize,
    hard: &HardNegativeSet,
    resolve: F,
    source: &ScoreSource<'_>,
    rule: ValidityRule,
) -> Result<PartialRankingTarget>
where
    F: Fn(usize) -> Option<usize>,
{
    let scores = hard
        .ids
        .iter()
        .map(|&key| source.score(query_item, resolve(key)))
        .collect::<Result<Vec<_>>>()?;
    build_target_from_scores(hard, &scores, rule)
}

/// Comparison of two targets for the same query and hard set.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetAgreement {
    pub agree: bool,
    pub same_valid_order: bool,
    /// Ids valid in exactly one of the two targets.
    pub status_diff: Vec<usize>,
}

pub fn targets_agree(online: &PartialRankingTarget, offline: &PartialRankingTarget) -> TargetAgreement {
    let same_valid_order = online.valid == offline.valid;
    let mut status_diff: Vec<usize> = online
        .valid
        .iter()
        .filter(|v| !offline.valid.contains(v))
        .chain(offline.valid.iter().filter(|v| !online.valid.contains(v)))
        .copied()
        .collect();
    status_diff.sort_unstable();
    let mut a = online.invalid.clone();
    let mut b = offline.invalid.clone();
    a.sort_unstable();
    b.sort_unstable();
    TargetAgreement {
        agree: same_valid_order && a == b,
        same_valid_order,
        status_diff,
    }
}
