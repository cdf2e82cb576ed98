//! Dense arithmetic, stable softmax, seeded randomness, AdamW, and a
//! central-difference gradient checker.
//!
//! Vectors are plain `&[f64]` / `Vec<f64>`; matrices are row-major [`Mat64`].

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero by [`l2_normalize`].
pub const MIN_NORM: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Mat64 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix from {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entry".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Entries drawn i.i.d. from N(0, scale²).
    pub fn random_normal(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Self {
        let values = (0..rows * cols).map(|_| scale * rng.normal()).collect();
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::LengthMismatch {
                left: self.cols,
                right: x.len(),
            });
        }
        Ok((0..self.rows).map(|r| dot_unchecked(self.row(r), x)).collect())
    }

    /// `self += scale · a bᵀ`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64], scale: f64) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            let s = scale * ar;
            if s == 0.0 {
                continue;
            }
            let row = &mut self.values[r * self.cols..(r + 1) * self.cols];
            for (v, &bc) in row.iter_mut().zip(b) {
                *v += s * bc;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Mat64) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} += {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }
}

pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(dot_unchecked(a, b))
}

pub fn norm(a: &[f64]) -> f64 {
    dot_unchecked(a, a).sqrt()
}

pub fn l2_normalize(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if !(n > MIN_NORM) {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(a.iter().map(|v| v / n).collect())
}

/// Numerically stable log-sum-exp.
pub fn log_sum_exp(logits: &[f64]) -> Result<f64> {
    let max = logits
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if logits.is_empty() {
        return Err(Error::EmptyLogits);
    }
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    Ok(max + sum.ln())
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyLogits);
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("logit".into()));
    }
    let lse = log_sum_exp(logits)?;
    Ok(logits.iter().map(|z| z - lse).collect())
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    Ok(log_softmax(logits)?.into_iter().map(f64::exp).collect())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Derive the seed of a labeled substream from a root seed.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    splitmix64(root ^ fnv1a(label))
}

/// Stateless uniform draw in `[0, 1)` keyed by `(seed, a, b)`.
pub fn hash_uniform(seed: u64, a: u64, b: u64) -> f64 {
    let h = splitmix64(splitmix64(seed ^ a.wrapping_mul(0x9E37_79B9)) ^ b);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Seeded counter-based generator (ChaCha8). The state is `(seed, word_pos)`,
/// so it can be checkpointed and restored exactly.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent substream; drawing from it never perturbs `self`.
    pub fn substream(&self, label: &str) -> Self {
        Self::new(derive_seed(self.seed, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut rng = Self::new(state.seed);
        rng.inner.set_word_pos(state.word_pos);
        rng
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n` (partial Fisher-Yates).
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            if let Ok(u) = l2_normalize(&v) {
                return u;
            }
        }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn with_defaults(n_params: usize, weight_decay: f64) -> Self {
        Self::new(n_params, 0.9, 0.999, 1e-8, weight_decay)
    }
}

/// One AdamW update at learning rate `lr`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.m.len() != state.v.len()
    {
        return Err(Error::ShapeMismatch(format!(
            "adam: params {}, grads {}, moments {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        if state.weight_decay != 0.0 {
            params[i] -= lr * state.weight_decay * params[i];
        }
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Outcome of [`check_gradient`].
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Floor on the denominator of the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compare `analytic` against central differences of `f` at `params`, with
/// per-coordinate step `h = 1e-5 · max(1, |x|)`.
pub fn check_gradient<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    rel_tol: f64,
) -> Result<GradientReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::LengthMismatch {
            left: params.len(),
            right: analytic.len(),
        });
    }
    let mut x = params.to_vec();
    let mut numeric = Vec::with_capacity(x.len());
    let mut rel_errors = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let x0 = x[i];
        let h = 1e-5 * x0.abs().max(1.0);
        x[i] = x0 + h;
        let fp = f(&x);
        x[i] = x0 - h;
        let fm = f(&x);
        x[i] = x0;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        let g = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(g.abs()).max(GRAD_CHECK_FLOOR);
        numeric.push(g);
        rel_errors.push((a - g).abs() / denom);
    }
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradientReport {
        numeric,
        rel_errors,
        max_rel_error,
        passed: max_rel_error <= rel_tol,
    })
}
