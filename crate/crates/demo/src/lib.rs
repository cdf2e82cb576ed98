//! Browser bindings for three small experiments over `rdl-core`.
//!
//! Each export is a thin wrapper over a plain function so the logic also runs
//! (and is tested) natively.

use rdl_core::eval::{rerank_study, score_histograms};
use rdl_core::losses::{cprd_direction, CprdForm, CprdQuery, DistillMethod, QuerySet};
use rdl_core::numerics::Rng;
use rdl_core::synthworld::CorpusConfig;
use rdl_core::trainer::{build_world, TrainConfig, Trainer, WorldConfig};
use rdl_core::{Error, Result};
use wasm_bindgen::prelude::*;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Score histograms of a freshly initialized student and the calibrated teacher.
#[wasm_bindgen]
pub struct Mismatch {
    csv: String,
    concentration: f64,
    extreme_mass: f64,
    alpha: f64,
}

#[wasm_bindgen]
impl Mismatch {
    #[wasm_bindgen(getter)]
    pub fn csv(&self) -> String {
        self.csv.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    #[wasm_bindgen(getter)]
    pub fn extreme_mass(&self) -> f64 {
        self.extreme_mass
    }

    #[wasm_bindgen(getter)]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

pub fn mismatch_native(seed: u64, r0: f64, n_pairs: usize, bins: usize) -> Result<Mismatch> {
    let cfg = WorldConfig {
        teacher_r0: r0,
        ..WorldConfig::default()
    };
    let w = build_world(&cfg, seed)?;
    let train = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let init = Trainer::new(train, &w.train, w.teacher)?.model().clone();
    let h = score_histograms(&init, &w.teacher, &w.test, n_pairs, bins, &mut Rng::new(seed).substream("histogram"))?;
    Ok(Mismatch {
        csv: h.to_csv(),
        concentration: h.teacher_concentration,
        extreme_mass: h.student_extreme_mass,
        alpha: w.teacher.alpha,
    })
}

#[wasm_bindgen]
pub fn mismatch(seed: u64, r0: f64, n_pairs: u32, bins: u32) -> std::result::Result<Mismatch, JsError> {
    mismatch_native(seed, r0, n_pairs as usize, bins as usize).map_err(js)
}

/// Partial-ranking loss for one query whose negatives have the given
/// similarities: the first `n_valid` are the teacher-ordered valid ones, the
/// next `n_invalid` the invalid hard ones, the rest easy.
///
/// Returns `[loss, L_1, …, L_{n_valid}]`.
pub fn cprd_terms_native(sims: &[f64], n_valid: usize, n_invalid: usize, tau: f64, truncated: bool) -> Result<Vec<f64>> {
    if n_valid + n_invalid > sims.len() {
        return Err(Error::InvalidInput(format!(
            "{n_valid} valid + {n_invalid} invalid exceeds {} negatives",
            sims.len()
        )));
    }
    if let Some(s) = sims.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
        return Err(Error::InvalidInput(format!("similarity {s} outside [-1, 1]")));
    }
    // slot 0 is the positive; each negative is a unit vector at the requested angle
    let queries = vec![vec![1.0, 0.0]];
    let candidates: Vec<Vec<f64>> = std::iter::once(1.0)
        .chain(sims.iter().copied())
        .map(|s| vec![s, (1.0 - s * s).max(0.0).sqrt()])
        .collect();
    let slots: Vec<usize> = (1..=sims.len()).collect();
    let positives = [0];
    let negatives = vec![slots.clone()];
    let set = QuerySet {
        queries: &queries,
        candidates: &candidates,
        positives: &positives,
        negatives: &negatives,
    };
    let form = if truncated { CprdForm::Truncated } else { CprdForm::Full };
    let invalid = slots[n_valid..n_valid + n_invalid].to_vec();
    let easy = slots[n_valid + n_invalid..].to_vec();
    // suffix sums S_j = Σ_{t≥j} L_t, recovered from the mean over valid[j..]
    let mut suffix = vec![0.0; n_valid + 1];
    for j in (0..n_valid).rev() {
        let plan = [CprdQuery {
            valid: slots[j..n_valid].to_vec(),
            invalid: invalid.clone(),
            easy: easy.clone(),
        }];
        suffix[j] = cprd_direction(&set, &plan, tau, form)?.value * (n_valid - j) as f64;
    }
    let loss = if n_valid == 0 { 0.0 } else { suffix[0] / n_valid as f64 };
    let mut out = vec![loss];
    out.extend((0..n_valid).map(|j| suffix[j] - suffix[j + 1]));
    Ok(out)
}

#[wasm_bindgen]
pub fn cprd_terms(
    sims: Vec<f64>,
    n_valid: u32,
    n_invalid: u32,
    tau: f64,
    truncated: bool,
) -> std::result::Result<Vec<f64>, JsError> {
    cprd_terms_native(&sims, n_valid as usize, n_invalid as usize, tau, truncated).map_err(js)
}

/// Train a student on a small world, then re-rank its top-K by the teacher.
/// Returns the study as CSV.
pub fn rerank_native(seed: u64, method: &str, m: f64, epochs: usize, ks: &[usize]) -> Result<String> {
    let cfg = WorldConfig {
        corpus: CorpusConfig {
            n_items: 900,
            ..CorpusConfig::default()
        },
        train_items: 640,
        itm_pairs: 640,
        ..WorldConfig::default()
    };
    let w = build_world(&cfg, seed)?;
    let train = TrainConfig {
        seed,
        epochs,
        warmup_steps: 20,
        method: DistillMethod::from_name(method, m, 0.1)?,
        ..TrainConfig::default()
    };
    let model = Trainer::new(train, &w.train, w.teacher)?.run()?.model;
    Ok(rerank_study(&model, &w.teacher, &w.test, ks)?.to_csv())
}

#[wasm_bindgen]
pub fn rerank(seed: u64, method: &str, m: f64, epochs: u32, ks: Vec<u32>) -> std::result::Result<String, JsError> {
    let ks: Vec<usize> = ks.into_iter().map(|k| k as usize).collect();
    rerank_native(seed, method, m, epochs as usize, &ks).map_err(js)
}
