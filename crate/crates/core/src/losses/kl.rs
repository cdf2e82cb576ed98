use crate::error::{Error, Result};
use crate::losses::{accumulate_logit_grads, check_tau, DirectionGrad, QuerySet, ScoredHardSet};
use crate::numerics::{dot_unchecked, log_softmax};

/// `KL(softmax(p / τ_t) ‖ softmax(s / τ))` over `{positive} ∪ hard`, batch mean.
pub fn kl_direction(set: &QuerySet<'_>, plan: &[ScoredHardSet], tau: f64, teacher_tau: f64) -> Result<DirectionGrad> {
    check_tau(tau)?;
    let b = set.queries.len();
    if plan.len() != b {
        return Err(Error::LengthMismatch {
            left: b,
            right: plan.len(),
        });
    }
    if !(teacher_tau > 0.0 && teacher_tau.is_finite()) {
        return Err(Error::InvalidInput(format!("teacher temperature {teacher_tau}")));
    }
    let mut out = DirectionGrad::zeros(b, set.dim());
    if b == 0 {
        return Ok(out);
    }
    for (i, qp) in plan.iter().enumerate() {
        qp.check()?;
        let q = &set.queries[i];
        let slots: Vec<usize> = std::iter::once(set.positives[i]).chain(qp.hard.iter().copied()).collect();
        let z: Vec<f64> = slots
            .iter()
            .map(|&k| dot_unchecked(q, &set.candidates[k]) / tau)
            .collect();
        let t: Vec<f64> = std::iter::once(qp.teacher_positive)
            .chain(qp.teacher_hard.iter().copied())
            .map(|p| p / teacher_tau)
            .collect();
        let log_q = log_softmax(&t)?;
        let log_s = log_softmax(&z)?;
        let mut kl = 0.0;
        let mut dz = Vec::with_capacity(z.len());
        for (lq, ls) in log_q.iter().zip(&log_s) {
            let qk = lq.exp();
            kl += qk * (lq - ls);
            dz.push(ls.exp() - qk);
        }
        out.value += kl;
        accumulate_logit_grads(&mut out, i, set, &slots, &z, &dz, tau);
    }
    out.scale(1.0 / b as f64);
    Ok(out)
}
