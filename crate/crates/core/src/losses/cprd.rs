use crate::error::{Error, Result};
use crate::losses::{accumulate_logit_grads, check_tau, DirectionGrad, QuerySet};
use crate::mining::HardNegativeSet;
use crate::numerics::{dot_unchecked, log_sum_exp};
use crate::targets::PartialRankingTarget;

/// Which denominator the partial-ranking InfoNCE uses for term `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CprdForm {
    /// Remaining teacher-ordered hard negatives plus all easy negatives.
    Full,
    /// Remaining hard negatives only (easy negatives dropped).
    Truncated,
}

/// Per-query slots for the partial-ranking loss.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CprdQuery {
    /// Valid hard negatives in teacher order.
    pub valid: Vec<usize>,
    /// Invalid hard negatives, order irrelevant.
    pub invalid: Vec<usize>,
    /// Negatives outside the hard set, order irrelevant.
    pub easy: Vec<usize>,
}

impl CprdQuery {
    /// Assemble from a target over `hard` and the query's full negative list.
    /// The target must partition the hard set exactly.
    pub fn new(target: &PartialRankingTarget, hard: &HardNegativeSet, negatives: &[usize]) -> Result<Self> {
        if target.k() != hard.len() {
            return Err(Error::InvalidInput(format!(
                "target covers {} negatives, hard set has {}",
                target.k(),
                hard.len()
            )));
        }
        let mut a: Vec<usize> = target.valid.iter().chain(&target.invalid).copied().collect();
        let mut b = hard.ids.clone();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::InvalidInput("target and hard set disagree on members".into()));
        }
        let easy = negatives.iter().copied().filter(|k| !hard.ids.contains(k)).collect();
        Ok(Self {
            valid: target.valid.clone(),
            invalid: target.invalid.clone(),
            easy,
        })
    }

    pub fn n_valid(&self) -> usize {
        self.valid.len()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Partial-ranking InfoNCE in one direction:
/// `L_ij = −log exp(z_{c_j}) / (Σ_{k≥j} exp(z_{c_k}) [+ Σ_easy exp(z_d)])`,
/// averaged over the query's valid negatives (zero when there are none),
/// then over the batch (dividing by B).
pub fn cprd_direction(set: &QuerySet<'_>, plan: &[CprdQuery], tau: f64, form: CprdForm) -> Result<DirectionGrad> {
    check_tau(tau)?;
    let b = set.queries.len();
    if plan.len() != b {
        return Err(Error::LengthMismatch {
            left: b,
            right: plan.len(),
        });
    }
    let mut out = DirectionGrad::zeros(b, set.dim());
    if b == 0 {
        return Ok(out);
    }
    for (i, qp) in plan.iter().enumerate() {
        let nv = qp.valid.len();
        if nv == 0 {
            continue;
        }
        let q = &set.queries[i];
        let tail: &[usize] = match form {
            CprdForm::Full => &qp.easy,
            CprdForm::Truncated => &[],
        };
        // slot layout: valid (teacher order), then invalid, then easy
        let slots: Vec<usize> = qp
            .valid
            .iter()
            .chain(&qp.invalid)
            .chain(tail)
            .copied()
            .collect();
        let z: Vec<f64> = slots
            .iter()
            .map(|&k| dot_unchecked(q, &set.candidates[k]) / tau)
            .collect();
        let (zv, zb) = z.split_at(nv);

        let lse_base = if zb.is_empty() { f64::NEG_INFINITY } else { log_sum_exp(zb)? };
        // lse_j over D_j = {valid_j..} ∪ base; non-increasing in j
        let mut lse = vec![0.0; nv];
        let mut suffix = f64::NEG_INFINITY;
        for j in (0..nv).rev() {
            suffix = log_add_exp(zv[j], suffix);
            lse[j] = log_add_exp(lse_base, suffix);
        }
        let weight = 1.0 / nv as f64;
        let mut value = 0.0;
        for j in 0..nv {
            value += lse[j] - zv[j];
        }
        out.value += weight * value;

        let mut dz = vec![0.0; z.len()];
        let mut prefix = 0.0;
        for k in 0..nv {
            // P_k = Σ_{j≤k} exp(lse_k − lse_j)
            prefix = if k == 0 { 1.0 } else { prefix * (lse[k] - lse[k - 1]).exp() + 1.0 };
            dz[k] = weight * ((zv[k] - lse[k]).exp() * prefix - 1.0);
        }
        let last = lse[nv - 1];
        let c: f64 = lse.iter().map(|l| (last - l).exp()).sum();
        for (x, zx) in zb.iter().enumerate() {
            dz[nv + x] = weight * (zx - last).exp() * c;
        }
        accumulate_logit_grads(&mut out, i, set, &slots, &z, &dz, tau);
    }
    out.scale(1.0 / b as f64);
    Ok(out)
}
