use crate::error::{Error, Result};
use crate::losses::{accumulate_sim_grads, DirectionGrad, QuerySet, ScoredHardSet};
use crate::numerics::dot_unchecked;

/// Weight on the "others below the hardest negative" hinge.
pub const M3SE_HINGE_WEIGHT: f64 = 1.0;

/// Min-max rescale to `[0, 1]`; returns the rescaled values and `(argmin, argmax, range)`.
pub fn min_max_normalize(values: &[f64]) -> Result<(Vec<f64>, usize, usize, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("min-max over empty set".into()));
    }
    let (mut lo, mut hi) = (0, 0);
    for (k, v) in values.iter().enumerate() {
        if *v < values[lo] {
            lo = k;
        }
        if *v > values[hi] {
            hi = k;
        }
    }
    let range = values[hi] - values[lo];
    if !(range > 0.0) {
        return Err(Error::InvalidInput("min-max over constant similarities".into()));
    }
    let out = values.iter().map(|v| (v - values[lo]) / range).collect();
    Ok((out, lo, hi, range))
}

/// Margin-matching MSE: the student's positive-vs-hardest margin should equal
/// the teacher's, and every other negative should sit below the hardest one.
/// The hardest negative is the teacher's top-scored one. With `rescale`, the
/// student similarities over `{positive} ∪ hard` are min-max normalized first.
pub fn m3se_direction(set: &QuerySet<'_>, plan: &[ScoredHardSet], rescale: bool) -> Result<DirectionGrad> {
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
        qp.check()?;
        if qp.hard.is_empty() {
            return Err(Error::InvalidInput(format!("query {i}: M3SE needs at least one negative")));
        }
        let q = &set.queries[i];
        let slots: Vec<usize> = std::iter::once(set.positives[i]).chain(qp.hard.iter().copied()).collect();
        let raw: Vec<f64> = slots.iter().map(|&k| dot_unchecked(q, &set.candidates[k])).collect();
        let (s, norm) = if rescale {
            let (s, lo, hi, range) = min_max_normalize(&raw)?;
            (s, Some((lo, hi, range)))
        } else {
            (raw.clone(), None)
        };

        // hardest = teacher argmax over negatives; slot index offset by 1
        let mut h = 0;
        for (k, p) in qp.teacher_hard.iter().enumerate() {
            if *p > qp.teacher_hard[h] {
                h = k;
            }
        }
        let hs = h + 1;
        let margin_t = qp.teacher_positive - qp.teacher_hard[h];
        let diff = (s[0] - s[hs]) - margin_t;
        let mut value = diff * diff;
        let mut ds = vec![0.0; s.len()];
        ds[0] += 2.0 * diff;
        ds[hs] -= 2.0 * diff;
        for k in 1..s.len() {
            if k == hs {
                continue;
            }
            let gap = s[k] - s[hs];
            if gap > 0.0 {
                value += M3SE_HINGE_WEIGHT * gap;
                ds[k] += M3SE_HINGE_WEIGHT;
                ds[hs] -= M3SE_HINGE_WEIGHT;
            }
        }
        out.value += value;

        let d_raw = match norm {
            None => ds,
            Some((lo, hi, range)) => {
                let mut g: Vec<f64> = ds.iter().map(|d| d / range).collect();
                let mut to_lo = 0.0;
                let mut to_hi = 0.0;
                for (dk, sk) in ds.iter().zip(&s) {
                    to_lo += dk * (sk - 1.0) / range;
                    to_hi -= dk * sk / range;
                }
                g[lo] += to_lo;
                g[hi] += to_hi;
                g
            }
        };
        accumulate_sim_grads(&mut out, i, set, &slots, &d_raw);
    }
    out.scale(1.0 / b as f64);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_for(sims: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let q = vec![vec![1.0, 0.0]];
        let c = sims.iter().map(|s| vec![*s, (1.0 - s * s).sqrt()]).collect();
        (q, c)
    }

    #[test]
    fn hand_arithmetic_example() {
        let (q, c) = set_for(&[0.8, 0.5, 0.2]);
        let neg = vec![vec![1, 2]];
        let set = QuerySet {
            queries: &q,
            candidates: &c,
            positives: &[0],
            negatives: &neg,
        };
        let plan = vec![ScoredHardSet {
            hard: vec![1, 2],
            teacher_positive: 0.95,
            teacher_hard: vec![0.4, 0.1],
        }];
        let g = m3se_direction(&set, &plan, false).unwrap();
        assert!((g.value - 0.0625).abs() < 1e-12, "{}", g.value);
    }

    #[test]
    fn min_max_endpoints() {
        let (s, lo, hi, _) = min_max_normalize(&[0.2, 0.6, 1.0]).unwrap();
        assert_eq!((lo, hi), (0, 2));
        assert!((s[0] - 0.0).abs() < 1e-15 && (s[1] - 0.5).abs() < 1e-15 && (s[2] - 1.0).abs() < 1e-15);
        assert!(min_max_normalize(&[0.3, 0.3]).is_err());
    }

    #[test]
    fn matched_margins_inactive_hinge() {
        let (q, c) = set_for(&[0.9, 0.4, 0.1]);
        let neg = vec![vec![1, 2]];
        let set = QuerySet {
            queries: &q,
            candidates: &c,
            positives: &[0],
            negatives: &neg,
        };
        let plan = vec![ScoredHardSet {
            hard: vec![1, 2],
            teacher_positive: 0.9,
            teacher_hard: vec![0.4, 0.2],
        }];
        assert!(m3se_direction(&set, &plan, false).unwrap().value.abs() < 1e-24);
    }

    #[test]
    fn no_negatives_is_an_error() {
        let (q, c) = set_for(&[0.9]);
        let neg = vec![vec![]];
        let set = QuerySet {
            queries: &q,
            candidates: &c,
            positives: &[0],
            negatives: &neg,
        };
        let plan = vec![ScoredHardSet {
            hard: vec![],
            teacher_positive: 0.9,
            teacher_hard: vec![],
        }];
        assert!(m3se_direction(&set, &plan, false).is_err());
    }
}
