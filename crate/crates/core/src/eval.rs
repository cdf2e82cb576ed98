//! Retrieval metrics, the teacher re-ranking study, Spearman statistics and
//! score-distribution histograms. Nothing here mutates a model.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot_unchecked, Rng};
use crate::synthworld::teacher::concentration;
use crate::synthworld::{Direction, LatentCorpus, StudentModel, TeacherSim, Tower};

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

/// Recall at 1/5/10 (fractions) in both directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub i2t: [f64; 3],
    pub t2i: [f64; 3],
}

impl RetrievalReport {
    /// Sum of the six recalls in percentage points, in `[0, 600]`.
    pub fn rsum(&self) -> f64 {
        100.0 * (self.i2t.iter().sum::<f64>() + self.t2i.iter().sum::<f64>())
    }

    /// From 0-based positive positions per direction.
    pub fn from_positions(i2t: &[usize], t2i: &[usize]) -> Result<Self> {
        if i2t.is_empty() || t2i.is_empty() {
            return Err(Error::InvalidInput("empty test set".into()));
        }
        let rec = |pos: &[usize]| {
            RECALL_KS.map(|k| pos.iter().filter(|&&p| p < k).count() as f64 / pos.len() as f64)
        };
        Ok(Self {
            i2t: rec(i2t),
            t2i: rec(t2i),
        })
    }

    pub const CSV_HEADER: &'static str = "i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,rsum";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.i2t[0],
            self.i2t[1],
            self.i2t[2],
            self.t2i[0],
            self.t2i[1],
            self.t2i[2],
            self.rsum()
        )
    }
}

/// `sims[q][c]` between query `q` and candidate `c` in `direction`.
pub fn similarity_matrix(model: &StudentModel, corpus: &LatentCorpus, direction: Direction) -> Result<Vec<Vec<f64>>> {
    let queries = model.encode_corpus(direction.query_tower(), corpus)?;
    let cands = model.encode_corpus(direction.candidate_tower(), corpus)?;
    Ok(queries
        .iter()
        .map(|q| cands.iter().map(|c| dot_unchecked(q, c)).collect())
        .collect())
}

/// Candidates by descending similarity, ties by ascending id.
fn student_order(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order
}

/// Position of the positive in the student ranking, without sorting.
fn positive_position(row: &[f64], q: usize) -> usize {
    let s = row[q];
    row.iter()
        .enumerate()
        .filter(|&(c, &v)| v > s || (v == s && c < q))
        .count()
}

/// Exhaustive-scan recall; the positive of query `i` is candidate `i`.
pub fn recall_at_k(model: &StudentModel, corpus: &LatentCorpus) -> Result<RetrievalReport> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    let mut pos: [Vec<usize>; 2] = Default::default();
    for (d, dir) in Direction::BOTH.into_iter().enumerate() {
        let sims = similarity_matrix(model, corpus, dir)?;
        pos[d] = sims.iter().enumerate().map(|(q, row)| positive_position(row, q)).collect();
    }
    RetrievalReport::from_positions(&pos[0], &pos[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankStudy {
    pub rows: Vec<(usize, RetrievalReport)>,
}

impl RerankStudy {
    pub fn to_csv(&self) -> String {
        let mut out = format!("k_rerank,{}\n", RetrievalReport::CSV_HEADER);
        for (k, r) in &self.rows {
            let _ = writeln!(out, "{k},{}", r.csv_row());
        }
        out
    }
}

/// Re-rank the student's top-K by teacher score (stable, so teacher ties keep
/// student order); items below K keep their student order.
pub fn rerank_study(
    model: &StudentModel,
    teacher: &TeacherSim,
    corpus: &LatentCorpus,
    ks: &[usize],
) -> Result<RerankStudy> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    let n = corpus.len();
    let mut positions: Vec<[Vec<usize>; 2]> = vec![Default::default(); ks.len()];
    for (d, dir) in Direction::BOTH.into_iter().enumerate() {
        let sims = similarity_matrix(model, corpus, dir)?;
        for (q, row) in sims.iter().enumerate() {
            let order = student_order(row);
            let plain = order.iter().position(|&c| c == q).unwrap_or(n);
            for (slot, &k) in ks.iter().enumerate() {
                let k = k.min(n);
                let p = if plain >= k {
                    plain
                } else {
                    let mut head: Vec<(usize, f64)> = order[..k]
                        .iter()
                        .map(|&c| {
                            let (img, txt) = dir.image_text(q, c);
                            (c, teacher.score(corpus, img, txt))
                        })
                        .collect();
                    head.sort_by(|a, b| b.1.total_cmp(&a.1));
                    head.iter().position(|&(c, _)| c == q).unwrap_or(plain)
                };
                positions[slot][d].push(p);
            }
        }
    }
    let rows = ks
        .iter()
        .zip(&positions)
        .map(|(&k, [a, b])| Ok((k, RetrievalReport::from_positions(a, b)?)))
        .collect::<Result<_>>()?;
    Ok(RerankStudy { rows })
}

/// Ranks with ties given their average rank (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson over average ranks). Errors when either
/// side is constant or fewer than two pairs are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("spearman needs at least two pairs".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidInput("spearman over constant scores".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub mean: f64,
    pub std: f64,
    pub resamples: usize,
}

/// Rated `(model score, ground truth)` pairs grouped by query.
pub type RatedQueries = Vec<Vec<(f64, f64)>>;

const MAX_REDRAWS: usize = 100;

/// Mean ± std of Spearman over resamples; each resample takes half of the
/// queries without replacement and one rated pair from each.
pub fn spearman_bootstrap(rated: &RatedQueries, resamples: usize, rng: &mut Rng) -> Result<CorrelationReport> {
    let usable: Vec<&Vec<(f64, f64)>> = rated.iter().filter(|r| !r.is_empty()).collect();
    if usable.len() < 4 {
        return Err(Error::InvalidInput(format!("{} rated queries; need at least 4", usable.len())));
    }
    if resamples == 0 {
        return Err(Error::InvalidInput("zero resamples".into()));
    }
    let half = usable.len() / 2;
    let mut values = Vec::with_capacity(resamples);
    let mut redraws = 0;
    while values.len() < resamples {
        let picked = rng.sample_without_replacement(usable.len(), half);
        let (mut xs, mut ys) = (Vec::with_capacity(half), Vec::with_capacity(half));
        for q in picked {
            let pairs = usable[q];
            let (x, y) = pairs[rng.below(pairs.len())];
            xs.push(x);
            ys.push(y);
        }
        match spearman(&xs, &ys) {
            Ok(v) => values.push(v),
            Err(_) => {
                redraws += 1;
                if redraws > MAX_REDRAWS {
                    return Err(Error::InvalidInput("bootstrap keeps drawing degenerate resamples".into()));
                }
            }
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(CorrelationReport {
        mean,
        std: var.sqrt(),
        resamples,
    })
}

/// For each query (both directions), `per_query` random non-matching
/// candidates rated by student similarity against ground-truth relevance.
pub fn rated_pairs(model: &StudentModel, corpus: &LatentCorpus, per_query: usize, rng: &mut Rng) -> Result<RatedQueries> {
    let n = corpus.len();
    let mut out = Vec::with_capacity(2 * n);
    for dir in Direction::BOTH {
        let queries = model.encode_corpus(dir.query_tower(), corpus)?;
        let cands = model.encode_corpus(dir.candidate_tower(), corpus)?;
        for (q, qf) in queries.iter().enumerate() {
            let picks = rng.sample_without_replacement(n, per_query + 1);
            let rated = picks
                .into_iter()
                .filter(|&c| c != q)
                .take(per_query)
                .map(|c| {
                    let (img, txt) = dir.image_text(q, c);
                    (dot_unchecked(qf, &cands[c]), corpus.relevance(img, txt))
                })
                .collect();
            out.push(rated);
        }
    }
    Ok(out)
}

/// Desk-scale rank intervals (1-based, inclusive).
pub const DESK_INTERVALS: [(usize, usize); 4] = [(1, 8), (9, 16), (17, 24), (25, 32)];
/// The wide intervals used with large galleries.
pub const WIDE_INTERVALS: [(usize, usize); 4] = [(1, 16), (17, 32), (33, 48), (49, 64)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalCorrelation {
    pub interval: (usize, usize),
    pub mean: f64,
    /// Queries where the slice was non-constant on both sides.
    pub queries: usize,
}

/// Per interval of the student's ranking, the mean over queries (both
/// directions) of Spearman between student similarity and teacher score
/// within that slice. Intervals beyond the gallery are shrunk to fit.
pub fn rank_interval_correlation(
    model: &StudentModel,
    teacher: &TeacherSim,
    corpus: &LatentCorpus,
    intervals: &[(usize, usize)],
) -> Result<Vec<IntervalCorrelation>> {
    let n = corpus.len();
    let negatives = n.saturating_sub(1);
    let mut fitted = Vec::with_capacity(intervals.len());
    for &(lo, hi) in intervals {
        if lo == 0 || lo > hi {
            return Err(Error::InvalidInput(format!("bad interval {lo}-{hi}")));
        }
        if lo > negatives {
            continue;
        }
        if hi > negatives {
            eprintln!("warning: interval {lo}-{hi} shrunk to {lo}-{negatives} (gallery of {n})");
        }
        fitted.push((lo, hi.min(negatives)));
    }
    let mut sums = vec![(0.0, 0usize); fitted.len()];
    for dir in Direction::BOTH {
        let sims = similarity_matrix(model, corpus, dir)?;
        for (q, row) in sims.iter().enumerate() {
            let order: Vec<usize> = student_order(row).into_iter().filter(|&c| c != q).collect();
            for (slot, &(lo, hi)) in fitted.iter().enumerate() {
                let slice = &order[lo - 1..hi];
                let s: Vec<f64> = slice.iter().map(|&c| row[c]).collect();
                let t: Vec<f64> = slice
                    .iter()
                    .map(|&c| {
                        let (img, txt) = dir.image_text(q, c);
                        teacher.score(corpus, img, txt)
                    })
                    .collect();
                if let Ok(rho) = spearman(&s, &t) {
                    sums[slot].0 += rho;
                    sums[slot].1 += 1;
                }
            }
        }
    }
    Ok(fitted
        .into_iter()
        .zip(sums)
        .map(|(interval, (sum, count))| IntervalCorrelation {
            interval,
            mean: if count > 0 { sum / count as f64 } else { f64::NAN },
            queries: count,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_low: f64,
    pub bin_high: f64,
    pub mass_student_pos: f64,
    pub mass_student_rand: f64,
    pub mass_teacher: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistograms {
    pub rows: Vec<HistogramRow>,
    /// Teacher mass in `[0, 0.1] ∪ [0.9, 1]` over random pairs.
    pub teacher_concentration: f64,
    /// Student mass with `|s| > 0.9` over random pairs.
    pub student_extreme_mass: f64,
}

impl ScoreHistograms {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,mass_student_pos,mass_student_rand,mass_teacher\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.bin_low, r.bin_high, r.mass_student_pos, r.mass_student_rand, r.mass_teacher
            );
        }
        out
    }
}

fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / (hi - lo)) * bins as f64).floor();
        counts[(b.max(0.0) as usize).min(bins - 1)] += 1;
    }
    let n = values.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Student similarities (matched pairs and random pairs) and teacher scores
/// (random pairs) binned over `[−1, 1]`.
pub fn score_histograms(
    model: &StudentModel,
    teacher: &TeacherSim,
    corpus: &LatentCorpus,
    n_pairs: usize,
    bins: usize,
    rng: &mut Rng,
) -> Result<ScoreHistograms> {
    if bins < 2 {
        return Err(Error::InvalidInput("histograms need at least 2 bins".into()));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::InvalidInput("histograms need at least two items".into()));
    }
    let img = model.encode_corpus(Tower::Image, corpus)?;
    let txt = model.encode_corpus(Tower::Text, corpus)?;
    let pos: Vec<f64> = img.iter().zip(&txt).map(|(a, b)| dot_unchecked(a, b)).collect();
    let mut rand = Vec::with_capacity(n_pairs);
    let mut teach = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let i = rng.below(n);
        let mut j = rng.below(n - 1);
        if j >= i {
            j += 1;
        }
        rand.push(dot_unchecked(&img[i], &txt[j]));
        teach.push(teacher.score(corpus, i, j));
    }
    let (hp, hr, ht) = (
        histogram(&pos, bins, -1.0, 1.0),
        histogram(&rand, bins, -1.0, 1.0),
        histogram(&teach, bins, -1.0, 1.0),
    );
    let width = 2.0 / bins as f64;
    let rows = (0..bins)
        .map(|b| HistogramRow {
            bin_low: -1.0 + b as f64 * width,
            bin_high: -1.0 + (b + 1) as f64 * width,
            mass_student_pos: hp[b],
            mass_student_rand: hr[b],
            mass_teacher: ht[b],
        })
        .collect();
    Ok(ScoreHistograms {
        rows,
        teacher_concentration: concentration(&teach),
        student_extreme_mass: rand.iter().filter(|s| s.abs() > 0.9).count() as f64 / rand.len().max(1) as f64,
    })
}
