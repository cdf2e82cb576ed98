//! Shared fixtures: random small training instances and brute-force oracles.
#![allow(dead_code)]

use rdl_core::losses::{
    align_loss, distill_loss, total_loss, BatchInputs, CprdForm, CprdQuery, DistillPlan, LossValue, QuerySet,
    ScoredHardSet,
};
use rdl_core::memory::CandidateView;
use rdl_core::mining::HardNegativeSet;
use rdl_core::numerics::{check_gradient, Rng};
use rdl_core::synthworld::{Direction, StudentModel};
use rdl_core::targets::PartialRankingTarget;

pub const GRAD_TOL: f64 = 1e-4;

/// A small batch with a candidate view over constant momentum features.
pub struct Instance {
    pub model: StudentModel,
    pub batch: BatchInputs,
    pub view: CandidateView,
}

fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// B ≤ 4, queue ≤ 8, tiny dims. A queued slot sometimes repeats a batch id
/// so the own-id exclusion is exercised.
pub fn instance(rng: &mut Rng, min_queue: usize) -> Instance {
    let b = 1 + rng.below(4);
    let queue = min_queue + rng.below(9 - min_queue);
    let embed = 3 + rng.below(3);
    let va = 3 + rng.below(4);
    let vb = 3 + rng.below(4);
    let mut model = StudentModel::new(embed, va, vb, 0.1, rng);
    model.log_temperature = (0.05 + 0.45 * rng.uniform()).ln();
    let ids: Vec<usize> = (0..b).collect();
    let batch = BatchInputs {
        x_v: (0..b).map(|_| normal_vec(rng, va)).collect(),
        x_t: (0..b).map(|_| normal_vec(rng, vb)).collect(),
        ids: ids.clone(),
    };
    let mut all_ids = ids;
    for q in 0..queue {
        let id = if q > 0 && rng.below(4) == 0 { rng.below(b) } else { 100 + q };
        all_ids.push(id);
    }
    let n = all_ids.len();
    let view = CandidateView {
        batch_len: b,
        image: (0..n).map(|_| rng.unit_vector(embed)).collect(),
        text: (0..n).map(|_| rng.unit_vector(embed)).collect(),
        teacher_visible: (0..n).map(|k| k < b || rng.below(2) == 0).collect(),
        ids: all_ids,
    };
    Instance { model, batch, view }
}

/// Random hard sets of at most 4 negatives per query and direction.
fn random_hard(rng: &mut Rng, view: &CandidateView, i: usize, min_k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut negs = view.negatives(i);
    rng.shuffle(&mut negs);
    let k = (min_k + rng.below(5)).min(4).min(negs.len());
    let easy = negs.split_off(k);
    (negs, easy)
}

pub fn random_cprd_plan(rng: &mut Rng, inst: &Instance, form: CprdForm) -> DistillPlan {
    let mut queries: [Vec<CprdQuery>; 2] = Default::default();
    for q in queries.iter_mut() {
        for i in 0..inst.batch.len() {
            let (hard, easy) = random_hard(rng, &inst.view, i, 1);
            let nv = if hard.is_empty() { 0 } else { 1 + rng.below(hard.len()) };
            q.push(CprdQuery {
                valid: hard[..nv].to_vec(),
                invalid: hard[nv..].to_vec(),
                easy,
            });
        }
    }
    DistillPlan::Cprd { form, queries }
}

pub fn random_scored(rng: &mut Rng, inst: &Instance, min_k: usize) -> [Vec<ScoredHardSet>; 2] {
    let mut out: [Vec<ScoredHardSet>; 2] = Default::default();
    for q in out.iter_mut() {
        for i in 0..inst.batch.len() {
            let (hard, _) = random_hard(rng, &inst.view, i, min_k);
            q.push(ScoredHardSet {
                teacher_positive: 0.5 + 0.5 * rng.uniform(),
                teacher_hard: hard.iter().map(|_| rng.uniform()).collect(),
                hard,
            });
        }
    }
    out
}

/// Finite-difference check of a model-level loss over all of θ.
pub fn check_model_loss<F>(model: &StudentModel, loss: F) -> f64
where
    F: Fn(&StudentModel) -> LossValue,
{
    let analytic = loss(model).grad.to_flat();
    let params = model.to_flat();
    let report = check_gradient(
        |flat| {
            let mut m = model.clone();
            m.set_flat(flat).unwrap();
            loss(&m).value
        },
        &params,
        &analytic,
        GRAD_TOL,
    )
    .unwrap();
    report.max_rel_error
}

pub fn align_of(inst: &Instance, m: &StudentModel) -> LossValue {
    align_loss(m, &inst.batch, &inst.view).unwrap()
}

pub fn distill_of(inst: &Instance, m: &StudentModel, plan: &DistillPlan) -> LossValue {
    distill_loss(m, &inst.batch, &inst.view, plan).unwrap()
}

pub fn total_of(inst: &Instance, m: &StudentModel, plan: &DistillPlan) -> LossValue {
    total_loss(align_of(inst, m), Some(distill_of(inst, m, plan))).unwrap()
}

pub fn direction_index(d: Direction) -> usize {
    match d {
        Direction::ImageToText => 0,
        Direction::TextToImage => 1,
    }
}

/// Random unit queries and candidates where query `i`'s positive is slot `i`.
pub struct Flat {
    pub queries: Vec<Vec<f64>>,
    pub candidates: Vec<Vec<f64>>,
    pub positives: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
}

impl Flat {
    pub fn random(rng: &mut Rng) -> Self {
        let b = 1 + rng.below(4);
        let n = b + rng.below(50 - b);
        let dim = 2 + rng.below(6);
        Flat {
            queries: (0..b).map(|_| rng.unit_vector(dim)).collect(),
            candidates: (0..n).map(|_| rng.unit_vector(dim)).collect(),
            positives: (0..b).collect(),
            negatives: (0..b).map(|i| (0..n).filter(|&k| k != i).collect()).collect(),
        }
    }

    pub fn set(&self) -> QuerySet<'_> {
        QuerySet {
            queries: &self.queries,
            candidates: &self.candidates,
            positives: &self.positives,
            negatives: &self.negatives,
        }
    }
}

/// Shuffle the negatives into at most 16 hard ones (a valid prefix, then
/// invalid) and the easy rest.
pub fn random_partition(rng: &mut Rng, negs: &[usize]) -> CprdQuery {
    let mut negs = negs.to_vec();
    rng.shuffle(&mut negs);
    let k = rng.below(negs.len() + 1).min(16);
    let easy = negs.split_off(k);
    let nv = rng.below(k + 1);
    CprdQuery {
        valid: negs[..nv].to_vec(),
        invalid: negs[nv..].to_vec(),
        easy,
    }
}

// ---- brute-force oracles -------------------------------------------------

fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Partial-ranking loss with every exponential materialized.
pub fn brute_cprd(set: &QuerySet<'_>, plan: &[CprdQuery], tau: f64, form: CprdForm) -> f64 {
    let mut total = 0.0;
    for (i, qp) in plan.iter().enumerate() {
        if qp.valid.is_empty() {
            continue;
        }
        let e = |k: usize| (naive_dot(&set.queries[i], &set.candidates[k]) / tau).exp();
        let mut sum = 0.0;
        for j in 0..qp.valid.len() {
            let mut den = 0.0;
            for &k in &qp.valid[j..] {
                den += e(k);
            }
            for &k in &qp.invalid {
                den += e(k);
            }
            if form == CprdForm::Full {
                for &k in &qp.easy {
                    den += e(k);
                }
            }
            sum += -(e(qp.valid[j]) / den).ln();
        }
        total += sum / qp.valid.len() as f64;
    }
    total / plan.len() as f64
}

/// `Σ p log(p / q)` with both softmaxes computed directly.
pub fn brute_kl(set: &QuerySet<'_>, plan: &[ScoredHardSet], tau: f64, teacher_tau: f64) -> f64 {
    let mut total = 0.0;
    for (i, qp) in plan.iter().enumerate() {
        let slots: Vec<usize> = std::iter::once(set.positives[i]).chain(qp.hard.iter().copied()).collect();
        let s: Vec<f64> = slots
            .iter()
            .map(|&k| (naive_dot(&set.queries[i], &set.candidates[k]) / tau).exp())
            .collect();
        let t: Vec<f64> = std::iter::once(qp.teacher_positive)
            .chain(qp.teacher_hard.iter().copied())
            .map(|p| (p / teacher_tau).exp())
            .collect();
        let (zs, zt): (f64, f64) = (s.iter().sum(), t.iter().sum());
        for (a, b) in s.iter().zip(&t) {
            let (q, p) = (a / zs, b / zt);
            total += p * (p / q).ln();
        }
    }
    total / plan.len() as f64
}

/// Positions of each positive in a fully sorted ranking, then counts.
pub fn brute_recall_counts(sims: &[Vec<f64>], ks: &[usize]) -> Vec<usize> {
    let mut counts = vec![0; ks.len()];
    for (q, row) in sims.iter().enumerate() {
        let mut order: Vec<usize> = (0..row.len()).collect();
        // insertion sort: descending similarity, ascending id on ties
        for a in 1..order.len() {
            let mut b = a;
            while b > 0 && {
                let (x, y) = (order[b - 1], order[b]);
                row[y] > row[x] || (row[y] == row[x] && y < x)
            } {
                order.swap(b - 1, b);
                b -= 1;
            }
        }
        let pos = order.iter().position(|&c| c == q).unwrap();
        for (slot, &k) in ks.iter().enumerate() {
            if pos < k {
                counts[slot] += 1;
            }
        }
    }
    counts
}

/// Satisfied and total ordering constraints by explicit pair enumeration.
pub fn brute_consistency(student: &HardNegativeSet, target: &PartialRankingTarget) -> (usize, usize) {
    let rank_of = |id: usize| target.valid.iter().position(|&v| v == id);
    let is_invalid = |id: usize| target.invalid.contains(&id);
    let (mut ok, mut total) = (0, 0);
    for a in 0..student.ids.len() {
        for b in 0..student.ids.len() {
            if a == b {
                continue;
            }
            let (x, y) = (student.ids[a], student.ids[b]);
            // constraint "x before y"
            let required = match (rank_of(x), rank_of(y)) {
                (Some(rx), Some(ry)) => rx < ry,
                (Some(_), None) => is_invalid(y),
                _ => false,
            };
            if required {
                total += 1;
                if a < b {
                    ok += 1;
                }
            }
        }
    }
    (ok, total)
}
