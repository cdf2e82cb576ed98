//! Student-side negative ranking, top-K hard negative selection, and the
//! partial-ranking consistency diagnostic.

use crate::error::{Error, Result};
use crate::numerics::dot_unchecked;
use crate::targets::PartialRankingTarget;

/// Negatives of one query in descending student similarity; ties broken by
/// ascending candidate id.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeRanking {
    pub query: usize,
    pub ids: Vec<usize>,
    pub sims: Vec<f64>,
}

impl NegativeRanking {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Rank precomputed `(candidate id, similarity)` pairs.
pub fn rank_by_similarity(query: usize, mut scored: Vec<(usize, f64)>) -> Result<NegativeRanking> {
    if scored.is_empty() {
        return Err(Error::InvalidInput(format!("query {query}: no candidates to rank")));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let (ids, sims) = scored.into_iter().unzip();
    Ok(NegativeRanking { query, ids, sims })
}

/// Rank candidates by dot product with the query feature.
pub fn rank_negatives<'a, I>(query: usize, feature: &[f64], candidates: I) -> Result<NegativeRanking>
where
    I: IntoIterator<Item = (usize, &'a [f64])>,
{
    let scored = candidates
        .into_iter()
        .map(|(id, f)| (id, dot_unchecked(feature, f)))
        .collect();
    rank_by_similarity(query, scored)
}

/// The top-K prefix `h_i` of a ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct HardNegativeSet {
    pub query: usize,
    pub ids: Vec<usize>,
    pub k: usize,
    /// Set when K exceeded the number of ranked candidates.
    pub clamped: bool,
}

impl HardNegativeSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn top_k(ranking: &NegativeRanking, k: usize) -> HardNegativeSet {
    let clamped = k > ranking.len();
    HardNegativeSet {
        query: ranking.query,
        ids: ranking.ids[..k.min(ranking.len())].to_vec(),
        k,
        clamped,
    }
}

/// `top_k(rank_negatives(..), k)` without sorting the whole candidate list.
pub fn mine_top_k<'a, I>(query: usize, feature: &[f64], candidates: I, k: usize) -> Result<HardNegativeSet>
where
    I: IntoIterator<Item = (usize, &'a [f64])>,
{
    let mut scored: Vec<(usize, f64)> = candidates
        .into_iter()
        .map(|(id, f)| (id, dot_unchecked(feature, f)))
        .collect();
    if scored.is_empty() {
        return Err(Error::InvalidInput(format!("query {query}: no candidates to rank")));
    }
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    let clamped = k > scored.len();
    let keep = k.min(scored.len());
    if keep > 0 && keep < scored.len() {
        scored.select_nth_unstable_by(keep - 1, order);
    }
    scored.truncate(keep);
    scored.sort_by(order);
    Ok(HardNegativeSet {
        query,
        ids: scored.into_iter().map(|e| e.0).collect(),
        k,
        clamped,
    })
}

/// Fraction of order constraints imposed by the target that the student's
/// hard-negative order satisfies. Constraints are valid-before-later-valid and
/// valid-before-invalid; pairs of invalid negatives impose nothing. Vacuously
/// 1.0 when there are no constraints.
pub fn ranking_consistency(student: &HardNegativeSet, target: &PartialRankingTarget) -> Result<f64> {
    if student.query != target.query {
        return Err(Error::InvalidInput(format!(
            "consistency across queries {} and {}",
            student.query, target.query
        )));
    }
    let pos = |id: usize| -> Result<usize> {
        student
            .ids
            .iter()
            .position(|&x| x == id)
            .ok_or_else(|| Error::InvalidInput(format!("target id {id} not in student hard set")))
    };
    let valid_pos = target.valid.iter().map(|&v| pos(v)).collect::<Result<Vec<_>>>()?;
    let invalid_pos = target.invalid.iter().map(|&v| pos(v)).collect::<Result<Vec<_>>>()?;

    let nv = valid_pos.len();
    let total = nv * (nv.saturating_sub(1)) / 2 + nv * invalid_pos.len();
    if total == 0 {
        return Ok(1.0);
    }
    let mut violations = 0usize;
    for (a, &pa) in valid_pos.iter().enumerate() {
        violations += valid_pos[a + 1..].iter().filter(|&&pb| pb < pa).count();
        violations += invalid_pos.iter().filter(|&&pi| pi < pa).count();
    }
    Ok((total - violations) as f64 / total as f64)
}
