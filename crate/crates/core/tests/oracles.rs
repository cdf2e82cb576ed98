mod common;

use common::*;
use proptest::prelude::*;
use rdl_core::eval::{recall_at_k, similarity_matrix, RetrievalReport, RECALL_KS};
use rdl_core::losses::{cprd_direction, kl_direction, CprdForm, CprdQuery, ScoredHardSet};
use rdl_core::mining::{ranking_consistency, HardNegativeSet};
use rdl_core::numerics::Rng;
use rdl_core::synthworld::{generate_corpus, CorpusConfig, Direction, StudentModel};
use rdl_core::targets::PartialRankingTarget;

const INSTANCES: usize = 1000;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

#[test]
fn cprd_matches_materialized_sum() {
    let mut rng = Rng::new(31);
    for _ in 0..INSTANCES {
        let f = Flat::random(&mut rng);
        let plan: Vec<CprdQuery> = f.negatives.iter().map(|n| random_partition(&mut rng, n)).collect();
        let tau = 0.05 + rng.uniform();
        for form in [CprdForm::Full, CprdForm::Truncated] {
            let got = cprd_direction(&f.set(), &plan, tau, form).unwrap().value;
            let want = brute_cprd(&f.set(), &plan, tau, form);
            assert!(close(got, want), "{got} vs {want}");
        }
    }
}

#[test]
fn kl_matches_direct_formula() {
    let mut rng = Rng::new(32);
    for _ in 0..INSTANCES {
        let f = Flat::random(&mut rng);
        let plan: Vec<ScoredHardSet> = f
            .negatives
            .iter()
            .map(|n| {
                let mut n = n.clone();
                rng.shuffle(&mut n);
                n.truncate(rng.below(17));
                ScoredHardSet {
                    teacher_positive: rng.uniform(),
                    teacher_hard: n.iter().map(|_| rng.uniform()).collect(),
                    hard: n,
                }
            })
            .collect();
        let (tau, tt) = (0.05 + rng.uniform(), 0.1 + rng.uniform());
        let got = kl_direction(&f.set(), &plan, tau, tt).unwrap().value;
        let want = brute_kl(&f.set(), &plan, tau, tt);
        assert!(close(got, want), "{got} vs {want}");
        assert!(got >= -1e-15);
    }
}

#[test]
fn recall_matches_full_sort() {
    let mut rng = Rng::new(33);
    for t in 0..INSTANCES {
        let n = 4 + rng.below(47);
        let cfg = CorpusConfig {
            n_items: n.max(8),
            latent_dim: 3,
            view_a_dim: 4,
            view_b_dim: 4,
            clusters: 2,
            cluster_spread: 0.5,
            noise: 0.3,
            identity_mixing: false,
        };
        let corpus = generate_corpus(&cfg, &mut rng).unwrap();
        // a one-dimensional embedding makes every similarity ±1, so ties are everywhere
        let embed = if t % 10 == 0 { 1 } else { 2 + rng.below(4) };
        let model = StudentModel::new(embed, 4, 4, 0.07, &mut rng);
        let report = recall_at_k(&model, &corpus).unwrap();
        let len = corpus.len() as f64;
        let mut want = Vec::new();
        for dir in Direction::BOTH {
            let sims = similarity_matrix(&model, &corpus, dir).unwrap();
            want.push(brute_recall_counts(&sims, &RECALL_KS));
        }
        let got = |r: [f64; 3]| r.map(|x| (x * len).round() as usize).to_vec();
        assert_eq!(got(report.i2t), want[0]);
        assert_eq!(got(report.t2i), want[1]);
        let rebuilt = RetrievalReport {
            i2t: [0, 1, 2].map(|i| want[0][i] as f64 / len),
            t2i: [0, 1, 2].map(|i| want[1][i] as f64 / len),
        };
        assert_eq!(rebuilt, report);
    }
}

#[test]
fn consistency_matches_pair_enumeration() {
    let mut rng = Rng::new(34);
    for _ in 0..INSTANCES {
        let n = 1 + rng.below(50);
        let mut ids: Vec<usize> = (0..n).map(|i| i * 7 + 3).collect();
        rng.shuffle(&mut ids);
        let student = HardNegativeSet {
            query: 0,
            ids: ids.clone(),
            k: n,
            clamped: false,
        };
        rng.shuffle(&mut ids);
        let nv = rng.below(n + 1);
        let target = PartialRankingTarget {
            query: 0,
            valid: ids[..nv].to_vec(),
            valid_scores: vec![0.9; nv],
            invalid: ids[nv..].to_vec(),
            first_invalid: nv + 1,
        };
        let got = ranking_consistency(&student, &target).unwrap();
        let (ok, total) = brute_consistency(&student, &target);
        let want = if total == 0 { 1.0 } else { ok as f64 / total as f64 };
        assert_eq!(got, want);
    }
}

fn flat_from(seed: u64) -> Flat {
    Flat::random(&mut Rng::new(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cprd_ignores_easy_order(seed in 0u64..10_000, tau in 0.05f64..1.0) {
        let f = flat_from(seed);
        let mut rng = Rng::new(seed ^ 0xE);
        let plan: Vec<CprdQuery> = f.negatives.iter().map(|n| random_partition(&mut rng, n)).collect();
        let mut shuffled = plan.clone();
        for q in &mut shuffled {
            rng.shuffle(&mut q.easy);
            rng.shuffle(&mut q.invalid);
        }
        let a = cprd_direction(&f.set(), &plan, tau, CprdForm::Full).unwrap().value;
        let b = cprd_direction(&f.set(), &shuffled, tau, CprdForm::Full).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn losses_are_finite_and_nonnegative(seed in 0u64..10_000, tau in 0.01f64..1.0) {
        let f = flat_from(seed);
        let mut rng = Rng::new(seed ^ 0xF);
        let plan: Vec<CprdQuery> = f.negatives.iter().map(|n| random_partition(&mut rng, n)).collect();
        for form in [CprdForm::Full, CprdForm::Truncated] {
            let v = cprd_direction(&f.set(), &plan, tau, form).unwrap().value;
            prop_assert!(v.is_finite() && v >= 0.0);
        }
    }

    // Invalid and easy negatives only ever appear in denominators, so pulling
    // one of them away from the query can never raise the loss.
    #[test]
    fn lowering_a_denominator_only_negative_never_hurts(seed in 0u64..10_000, shrink in 0.0f64..1.0) {
        let mut f = flat_from(seed);
        f.queries.truncate(1);
        f.positives.truncate(1);
        f.negatives.truncate(1);
        let mut rng = Rng::new(seed ^ 0xA);
        let plan: Vec<CprdQuery> = f.negatives.iter().map(|n| random_partition(&mut rng, n)).collect();
        let tau = 0.05 + rng.uniform();
        let before = cprd_direction(&f.set(), &plan, tau, CprdForm::Full).unwrap().value;
        // only candidates that are never valid or positive for any query
        let victims: Vec<usize> = (0..f.candidates.len())
            .filter(|k| !f.positives.contains(k) && plan.iter().all(|q| !q.valid.contains(k)))
            .collect();
        prop_assume!(!victims.is_empty());
        let k = victims[rng.below(victims.len())];
        let q = f.queries[0].clone();
        let s: f64 = f.candidates[k].iter().zip(&q).map(|(a, b)| a * b).sum();
        for (c, qq) in f.candidates[k].iter_mut().zip(&q) {
            *c -= shrink * (s.abs() + 0.1) * qq;
        }
        let after = cprd_direction(&f.set(), &plan, tau, CprdForm::Full).unwrap().value;
        prop_assert!(after <= before + 1e-12 * before.max(1.0), "{before} -> {after}");
    }
}
