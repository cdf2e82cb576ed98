use crate::error::{Error, Result};
use crate::losses::{accumulate_logit_grads, check_tau, DirectionGrad, QuerySet};
use crate::numerics::{dot_unchecked, log_sum_exp};

/// InfoNCE in one direction: for each query, cross-entropy of the positive
/// slot against `{positive} ∪ negatives`, logits = similarity / τ, batch mean.
pub fn align_direction(set: &QuerySet<'_>, tau: f64) -> Result<DirectionGrad> {
    check_tau(tau)?;
    let b = set.queries.len();
    if b == 0 {
        return Err(Error::InvalidInput("align loss needs B >= 1".into()));
    }
    let mut out = DirectionGrad::zeros(b, set.dim());
    for i in 0..b {
        let q = &set.queries[i];
        let slots: Vec<usize> = std::iter::once(set.positives[i])
            .chain(set.negatives[i].iter().copied())
            .collect();
        let z: Vec<f64> = slots
            .iter()
            .map(|&k| dot_unchecked(q, &set.candidates[k]) / tau)
            .collect();
        let lse = log_sum_exp(&z)?;
        out.value += lse - z[0];
        let mut dz: Vec<f64> = z.iter().map(|zk| (zk - lse).exp()).collect();
        dz[0] -= 1.0;
        accumulate_logit_grads(&mut out, i, set, &slots, &z, &dz, tau);
    }
    out.scale(1.0 / b as f64);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_n() {
        let q = vec![vec![1.0, 0.0]];
        let c = vec![vec![0.0, 1.0]; 4];
        let neg = vec![vec![1, 2, 3]];
        let set = QuerySet {
            queries: &q,
            candidates: &c,
            positives: &[0],
            negatives: &neg,
        };
        for tau in [0.07, 0.5, 1.0] {
            let g = align_direction(&set, tau).unwrap();
            assert!((g.value - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_limit_is_near_zero() {
        let q = vec![vec![1.0, 0.0]];
        let c = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![-1.0, 0.0], vec![-1.0, 0.0]];
        let neg = vec![vec![1, 2, 3]];
        let set = QuerySet {
            queries: &q,
            candidates: &c,
            positives: &[0],
            negatives: &neg,
        };
        assert!(align_direction(&set, 0.07).unwrap().value < 1e-9);
    }
}
