//! The loss zoo with hand-derived gradients w.r.t. the student parameters.
//!
//! Every loss is first computed per retrieval direction on unit query
//! embeddings against fixed candidate features ([`QuerySet`]), yielding
//! gradients w.r.t. the query embeddings and `log_temperature`. The model-level
//! entry points then average both directions and backpropagate through the
//! L2 normalization into the tower weights.

pub mod align;
pub mod cprd;
pub mod gap;
pub mod kl;
pub mod m3se;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use align::align_direction;
pub use cprd::{cprd_direction, CprdForm, CprdQuery};
pub use gap::softmax_gap_property;
pub use kl::kl_direction;
pub use m3se::{m3se_direction, min_max_normalize};

use crate::error::{Error, Result};
use crate::memory::CandidateView;
use crate::synthworld::{backprop_encode, Direction, Encoded, StudentGrad, StudentModel, Tower};
use crate::synthworld::model::{MAX_TEMPERATURE, MIN_TEMPERATURE};

/// Queries of one direction against a shared candidate list.
#[derive(Debug, Clone, Copy)]
pub struct QuerySet<'a> {
    /// Live unit embeddings, one per batch query.
    pub queries: &'a [Vec<f64>],
    /// Candidate features (treated as constants).
    pub candidates: &'a [Vec<f64>],
    /// Candidate slot of each query's positive.
    pub positives: &'a [usize],
    /// Candidate slots that are negatives for each query.
    pub negatives: &'a [Vec<usize>],
}

impl QuerySet<'_> {
    pub fn dim(&self) -> usize {
        self.queries.first().map_or(0, Vec::len)
    }
}

/// Value and gradients of a direction-level loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionGrad {
    pub value: f64,
    pub queries: Vec<Vec<f64>>,
    pub log_temperature: f64,
}

impl DirectionGrad {
    pub fn zeros(b: usize, dim: usize) -> Self {
        Self {
            value: 0.0,
            queries: vec![vec![0.0; dim]; b],
            log_temperature: 0.0,
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.value *= s;
        self.log_temperature *= s;
        for g in &mut self.queries {
            for v in g {
                *v *= s;
            }
        }
    }
}

/// Chain `dL/dz` for logits `z_k = q·c_k / τ` into the query embedding and
/// into `log τ` (`dz/dlogτ = −z`).
pub(crate) fn accumulate_logit_grads(
    out: &mut DirectionGrad,
    i: usize,
    set: &QuerySet<'_>,
    slots: &[usize],
    z: &[f64],
    dz: &[f64],
    tau: f64,
) {
    let gq = &mut out.queries[i];
    for ((&k, &zk), &dzk) in slots.iter().zip(z).zip(dz) {
        if dzk == 0.0 {
            continue;
        }
        let ds = dzk / tau;
        for (g, c) in gq.iter_mut().zip(&set.candidates[k]) {
            *g += ds * c;
        }
        out.log_temperature -= dzk * zk;
    }
}

/// Chain `dL/ds` for raw similarities `s_k = q·c_k` into the query embedding.
pub(crate) fn accumulate_sim_grads(out: &mut DirectionGrad, i: usize, set: &QuerySet<'_>, slots: &[usize], ds: &[f64]) {
    let gq = &mut out.queries[i];
    for (&k, &dsk) in slots.iter().zip(ds) {
        if dsk == 0.0 {
            continue;
        }
        for (g, c) in gq.iter_mut().zip(&set.candidates[k]) {
            *g += dsk * c;
        }
    }
}

/// A query's hard negatives with the teacher's scores for them and for the positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHardSet {
    pub hard: Vec<usize>,
    pub teacher_positive: f64,
    pub teacher_hard: Vec<f64>,
}

impl ScoredHardSet {
    fn check(&self) -> Result<()> {
        if self.hard.len() != self.teacher_hard.len() {
            return Err(Error::LengthMismatch {
                left: self.hard.len(),
                right: self.teacher_hard.len(),
            });
        }
        Ok(())
    }
}

/// Scalar loss with its gradient over θ.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: StudentGrad,
}

impl LossValue {
    pub fn zero(model: &StudentModel) -> Self {
        Self {
            value: 0.0,
            grad: StudentGrad::zeros_like(model),
        }
    }
}

/// Distillation objective applied on top of the alignment loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DistillMethod {
    None,
    Kl { teacher_temp: f64 },
    M3se,
    RM3se,
    Cprd { m: f64 },
    CprdMStar,
    CprdVariantHat { m: f64 },
}

impl DistillMethod {
    pub fn is_none(&self) -> bool {
        matches!(self, DistillMethod::None)
    }

    /// Short name used in configs and reports.
    pub fn name(&self) -> &'static str {
        match self {
            DistillMethod::None => "none",
            DistillMethod::Kl { .. } => "kl",
            DistillMethod::M3se => "m3se",
            DistillMethod::RM3se => "r_m3se",
            DistillMethod::Cprd { .. } => "cprd",
            DistillMethod::CprdMStar => "cprd_mstar",
            DistillMethod::CprdVariantHat { .. } => "cprd_variant_hat",
        }
    }

    /// Build from a name plus the run's `m` and KL teacher temperature.
    pub fn from_name(name: &str, m: f64, teacher_temp: f64) -> Result<Self> {
        Ok(match name {
            "none" => DistillMethod::None,
            "kl" => DistillMethod::Kl { teacher_temp },
            "m3se" => DistillMethod::M3se,
            "r_m3se" => DistillMethod::RM3se,
            "cprd" => DistillMethod::Cprd { m },
            "cprd_mstar" => DistillMethod::CprdMStar,
            "cprd_variant_hat" => DistillMethod::CprdVariantHat { m },
            other => return Err(Error::Config(format!("unknown distill method `{other}`"))),
        })
    }
}

impl fmt::Display for DistillMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistillMethod::Cprd { m } | DistillMethod::CprdVariantHat { m } => write!(f, "{}(m={m})", self.name()),
            DistillMethod::Kl { teacher_temp } => write!(f, "kl(tau_t={teacher_temp})"),
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for DistillMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s, 0.75, 1.0)
    }
}

/// Per-direction distillation inputs for one batch, indexed like
/// [`Direction::BOTH`].
#[derive(Debug, Clone, PartialEq)]
pub enum DistillPlan {
    Cprd { form: CprdForm, queries: [Vec<CprdQuery>; 2] },
    Kl { teacher_temp: f64, queries: [Vec<ScoredHardSet>; 2] },
    M3se { rescale: bool, queries: [Vec<ScoredHardSet>; 2] },
}

/// Raw views of the current batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInputs {
    pub ids: Vec<usize>,
    pub x_v: Vec<Vec<f64>>,
    pub x_t: Vec<Vec<f64>>,
}

impl BatchInputs {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn inputs(&self, tower: Tower) -> &[Vec<f64>] {
        match tower {
            Tower::Image => &self.x_v,
            Tower::Text => &self.x_t,
        }
    }
}

/// Live-encoder outputs for both towers of a batch.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub image: Vec<Encoded>,
    pub text: Vec<Encoded>,
}

impl EncodedBatch {
    pub fn encode(model: &StudentModel, batch: &BatchInputs) -> Result<Self> {
        let enc = |tower: Tower| -> Result<Vec<Encoded>> {
            batch.inputs(tower).iter().map(|x| model.encode(tower, x)).collect()
        };
        Ok(Self {
            image: enc(Tower::Image)?,
            text: enc(Tower::Text)?,
        })
    }

    pub fn tower(&self, tower: Tower) -> &[Encoded] {
        match tower {
            Tower::Image => &self.image,
            Tower::Text => &self.text,
        }
    }

    pub fn units(&self, tower: Tower) -> Vec<Vec<f64>> {
        self.tower(tower).iter().map(|e| e.unit.clone()).collect()
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("temperature {tau}")));
    }
    Ok(())
}

fn checked_temperature(model: &StudentModel) -> Result<f64> {
    let lt = model.log_temperature;
    let slack = 1e-12;
    if !(lt >= MIN_TEMPERATURE.ln() - slack && lt <= MAX_TEMPERATURE.ln() + slack) {
        return Err(Error::InvalidInput(format!(
            "temperature {} outside [{MIN_TEMPERATURE}, {MAX_TEMPERATURE}]",
            lt.exp()
        )));
    }
    Ok(lt.exp())
}

/// Evaluate a direction-level loss in both directions, average, and
/// backpropagate into θ.
fn both_directions<F>(model: &StudentModel, batch: &BatchInputs, view: &CandidateView, mut f: F) -> Result<LossValue>
where
    F: FnMut(usize, &QuerySet<'_>) -> Result<DirectionGrad>,
{
    if batch.len() != view.batch_len {
        return Err(Error::ShapeMismatch(format!(
            "batch of {} vs candidate view over {}",
            batch.len(),
            view.batch_len
        )));
    }
    let enc = EncodedBatch::encode(model, batch)?;
    let positives: Vec<usize> = (0..batch.len()).collect();
    let negatives: Vec<Vec<usize>> = (0..batch.len()).map(|i| view.negatives(i)).collect();
    let mut out = LossValue::zero(model);
    for (d, dir) in Direction::BOTH.into_iter().enumerate() {
        let tower = dir.query_tower();
        let queries = enc.units(tower);
        let set = QuerySet {
            queries: &queries,
            candidates: view.features(dir),
            positives: &positives,
            negatives: &negatives,
        };
        let g = f(d, &set)?;
        out.value += 0.5 * g.value;
        out.grad.log_temperature += 0.5 * g.log_temperature;
        let grad_w = out.grad.tower_mut(tower);
        for ((x, e), gq) in batch.inputs(tower).iter().zip(enc.tower(tower)).zip(&g.queries) {
            let half: Vec<f64> = gq.iter().map(|v| 0.5 * v).collect();
            backprop_encode(grad_w, x, e, &half);
        }
    }
    if !out.value.is_finite() {
        return Err(Error::NonFinite("loss value".into()));
    }
    Ok(out)
}

/// `L_align = (L_I2T + L_T2I) / 2` with momentum-feature candidates.
pub fn align_loss(model: &StudentModel, batch: &BatchInputs, view: &CandidateView) -> Result<LossValue> {
    let tau = checked_temperature(model)?;
    both_directions(model, batch, view, |_, set| align_direction(set, tau))
}

/// The distillation term selected by `plan`, averaged over both directions.
pub fn distill_loss(model: &StudentModel, batch: &BatchInputs, view: &CandidateView, plan: &DistillPlan) -> Result<LossValue> {
    let tau = checked_temperature(model)?;
    both_directions(model, batch, view, |d, set| match plan {
        DistillPlan::Cprd { form, queries } => cprd_direction(set, &queries[d], tau, *form),
        DistillPlan::Kl { teacher_temp, queries } => kl_direction(set, &queries[d], tau, *teacher_temp),
        DistillPlan::M3se { rescale, queries } => m3se_direction(set, &queries[d], *rescale),
    })
}

/// `L = L_align + L_distill`; with no distillation term the alignment loss is
/// returned unchanged.
pub fn total_loss(align: LossValue, distill: Option<LossValue>) -> Result<LossValue> {
    match distill {
        None => Ok(align),
        Some(d) => {
            let mut out = align;
            out.value += d.value;
            out.grad.add_assign(&d.grad)?;
            Ok(out)
        }
    }
}
