use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{hash_uniform, sigmoid, Rng};
use crate::synthworld::corpus::LatentCorpus;

/// Simulated cross-encoder: `p(i, j) = sigmoid(alpha · (r(i, j) − r0) + eps · n_ij)`
/// where `n_ij` is a standard normal fixed per unordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherSim {
    pub alpha: f64,
    pub r0: f64,
    pub noise: f64,
    pub noise_seed: u64,
}

impl TeacherSim {
    pub fn new(alpha: f64, r0: f64) -> Self {
        Self {
            alpha,
            r0,
            noise: 0.0,
            noise_seed: 0,
        }
    }

    pub fn with_noise(mut self, noise: f64, seed: u64) -> Self {
        self.noise = noise;
        self.noise_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.r0 > 0.0 && self.r0 < 1.0) || !(self.noise >= 0.0) {
            return Err(Error::Config(format!(
                "teacher needs alpha > 0, r0 in (0,1), noise >= 0; got {:?}",
                self
            )));
        }
        Ok(())
    }

    /// Logit-space noise for the unordered pair `{i, j}`; Box-Muller over two
    /// hashed uniforms, so it is stable without a cache.
    fn pair_noise(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let u1 = hash_uniform(self.noise_seed, a as u64, b as u64).max(f64::MIN_POSITIVE);
        let u2 = hash_uniform(self.noise_seed ^ 0xA5A5_A5A5, a as u64, b as u64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn score_relevance(&self, r: f64) -> f64 {
        open_unit(sigmoid(self.alpha * (r - self.r0)))
    }

    /// Teacher score for image `i` against text `j`.
    pub fn score(&self, corpus: &LatentCorpus, i: usize, j: usize) -> f64 {
        let mut u = self.alpha * (corpus.relevance(i, j) - self.r0);
        if self.noise > 0.0 {
            u += self.noise * self.pair_noise(i, j);
        }
        open_unit(sigmoid(u))
    }
}

/// Largest double below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

// A saturated sigmoid rounds to exactly 0 or 1; keep scores strictly inside
// (0, 1) so a threshold of 1 never admits anything.
fn open_unit(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

pub fn teacher_score(teacher: &TeacherSim, corpus: &LatentCorpus, i: usize, j: usize) -> f64 {
    teacher.score(corpus, i, j)
}

const ITM_CLAMP: f64 = 1e-12;

/// Mean binary cross-entropy of matching scores against binary labels.
pub fn itm_loss(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("itm_loss over an empty pair set".into()));
    }
    let mut total = 0.0;
    for (&p, &y) in scores.iter().zip(labels) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("matching score {p} outside (0,1)")));
        }
        let p = p.clamp(ITM_CLAMP, 1.0 - ITM_CLAMP);
        total -= if y { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / scores.len() as f64)
}

/// A labeled pair for teacher calibration: ground-truth relevance and match label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItmPair {
    pub relevance: f64,
    pub matched: bool,
}

/// ITM loss as a function of the teacher's `(alpha, r0)`, with its gradient.
/// Written in softplus form: `softplus(u) − y·u`, `u = alpha (r − r0)`.
pub fn itm_objective(alpha: f64, r0: f64, pairs: &[ItmPair]) -> (f64, [f64; 2]) {
    let n = pairs.len().max(1) as f64;
    let (mut val, mut ga, mut gr) = (0.0, 0.0, 0.0);
    for p in pairs {
        let u = alpha * (p.relevance - r0);
        let y = if p.matched { 1.0 } else { 0.0 };
        let softplus = if u > 0.0 { u + (-u).exp().ln_1p() } else { u.exp().ln_1p() };
        val += softplus - y * u;
        let du = sigmoid(u) - y;
        ga += du * (p.relevance - r0);
        gr -= du * alpha;
    }
    (val / n, [ga / n, gr / n])
}

/// Positives `(i, i)` plus uniformly random non-matching pairs, 1:1.
pub fn sample_itm_pairs(corpus: &LatentCorpus, n_each: usize, rng: &mut Rng) -> Vec<ItmPair> {
    let n = corpus.len();
    let mut pairs = Vec::with_capacity(2 * n_each);
    for _ in 0..n_each {
        let i = rng.below(n);
        pairs.push(ItmPair {
            relevance: corpus.relevance(i, i),
            matched: true,
        });
        let i = rng.below(n);
        let mut j = rng.below(n - 1);
        if j >= i {
            j += 1;
        }
        pairs.push(ItmPair {
            relevance: corpus.relevance(i, j),
            matched: false,
        });
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub alpha: f64,
    pub loss: f64,
}

pub const CALIBRATION_ALPHA_RANGE: (f64, f64) = (0.5, 200.0);

/// Fit `alpha` by minimizing the ITM loss at fixed `r0`. The objective is
/// convex in `alpha` (BCE is convex in the logit, which is linear in alpha),
/// so golden-section search on a bounded bracket finds the minimizer.
pub fn calibrate_alpha(pairs: &[ItmPair], r0: f64) -> Calibration {
    let f = |a: f64| itm_objective(a, r0, pairs).0;
    let (mut lo, mut hi) = CALIBRATION_ALPHA_RANGE;
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo < 1e-9 {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let alpha = 0.5 * (lo + hi);
    Calibration {
        alpha,
        loss: f(alpha),
    }
}

/// Fraction of scores in `[0, 0.1] ∪ [0.9, 1]`.
pub fn concentration(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&p| p <= 0.1 || p >= 0.9).count() as f64 / scores.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_gradient;
    use crate::synthworld::corpus::{generate_corpus, CorpusConfig};

    fn corpus() -> LatentCorpus {
        let cfg = CorpusConfig {
            n_items: 300,
            clusters: 10,
            ..CorpusConfig::default()
        };
        generate_corpus(&cfg, &mut Rng::new(5)).unwrap()
    }

    #[test]
    fn score_examples() {
        let c = corpus();
        let t = TeacherSim::new(20.0, 0.6);
        let want = 1.0 / (1.0 + (-8.0f64).exp());
        assert!((t.score(&c, 3, 3) - want).abs() < 1e-15);
        assert!((want - 0.99966).abs() < 1e-5);
        assert_eq!(t.score_relevance(0.6), 0.5);
        let sharp = TeacherSim::new(1e4, 0.6);
        assert!(sharp.score_relevance(0.5) < 1e-300);
    }

    #[test]
    fn score_symmetric_and_noise_stable() {
        let c = corpus();
        let t = TeacherSim::new(20.0, 0.6);
        let tn = t.with_noise(0.5, 77);
        for i in 0..15 {
            for j in 0..15 {
                assert_eq!(t.score(&c, i, j), t.score(&c, j, i));
                assert_eq!(tn.score(&c, i, j), tn.score(&c, i, j));
                let s = tn.score(&c, i, j);
                assert!(s > 0.0 && s < 1.0);
            }
        }
        assert_ne!(tn.score(&c, 1, 2), t.score(&c, 1, 2));
    }

    #[test]
    fn itm_loss_examples() {
        assert!((itm_loss(&[0.5], &[true]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(itm_loss(&[1.0, 0.0], &[true, false]).unwrap() < 1e-11);
        assert!(itm_loss(&[1.2], &[true]).is_err());
        assert!(itm_loss(&[f64::NAN], &[true]).is_err());
    }

    #[test]
    fn itm_objective_agrees_with_itm_loss() {
        let c = corpus();
        let pairs = sample_itm_pairs(&c, 100, &mut Rng::new(1));
        let (alpha, r0) = (12.0, 0.7);
        let scores: Vec<f64> = pairs.iter().map(|p| sigmoid(alpha * (p.relevance - r0))).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.matched).collect();
        let a = itm_objective(alpha, r0, &pairs).0;
        let b = itm_loss(&scores, &labels).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn itm_gradient_check() {
        let c = corpus();
        let mut rng = Rng::new(8);
        for _ in 0..20 {
            let pairs = sample_itm_pairs(&c, 10, &mut rng);
            let p = [1.0 + 30.0 * rng.uniform(), 0.2 + 0.7 * rng.uniform()];
            let (_, g) = itm_objective(p[0], p[1], &pairs);
            let rep = check_gradient(|x| itm_objective(x[0], x[1], &pairs).0, &p, &g, 1e-4).unwrap();
            assert!(rep.passed, "{}", rep.max_rel_error);
        }
    }

    #[test]
    fn calibration_is_a_minimum() {
        let c = corpus();
        let pairs = sample_itm_pairs(&c, 2000, &mut Rng::new(2));
        let cal = calibrate_alpha(&pairs, 0.8);
        for a in [0.8 * cal.alpha, 1.2 * cal.alpha] {
            assert!(itm_objective(a, 0.8, &pairs).0 >= cal.loss);
        }
        let (_, g) = itm_objective(cal.alpha, 0.8, &pairs);
        if cal.alpha < CALIBRATION_ALPHA_RANGE.1 - 1e-3 {
            assert!(g[0].abs() < 1e-6, "{}", g[0]);
        }
    }
}
