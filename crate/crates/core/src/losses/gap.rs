use crate::error::{Error, Result};

/// Check the softmax gap-ordering lemma on one instance: if `p` is descending
/// at 1-based indices `i < j ≤ m < n` and `p_i − p_j > p_m − p_n`, then
/// `q = softmax(p / τ)` satisfies `q_i − q_j > q_m − q_n`.
///
/// The shared normalizer cancels, and each gap is evaluated as
/// `e^{a_j} · expm1(a_i − a_j)` so near-equal gaps keep their precision.
pub fn softmax_gap_property(p: &[f64], tau: f64, idx: (usize, usize, usize, usize)) -> Result<bool> {
    let (i, j, m, n) = idx;
    if !(tau > 0.0) {
        return Err(Error::HypothesisNotMet(format!("tau = {tau}")));
    }
    if !(1 <= i && i < j && j <= m && m < n && n <= p.len()) {
        return Err(Error::HypothesisNotMet(format!("indices {idx:?} for length {}", p.len())));
    }
    let (pi, pj, pm, pn) = (p[i - 1], p[j - 1], p[m - 1], p[n - 1]);
    if !(pi > pj && pj >= pm && pm > pn) {
        return Err(Error::HypothesisNotMet("scores not descending at the indices".into()));
    }
    if !(pi - pj > pm - pn) {
        return Err(Error::HypothesisNotMet("p_i − p_j <= p_m − p_n".into()));
    }
    let shift = pi / tau;
    let gap = |hi: f64, lo: f64| ((lo / tau) - shift).exp() * ((hi - lo) / tau).exp_m1();
    Ok(gap(pi, pj) > gap(pm, pn))
}
