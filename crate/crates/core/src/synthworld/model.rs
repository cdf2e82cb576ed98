use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot_unchecked, norm, Mat64, Rng, MIN_NORM};
use crate::synthworld::corpus::LatentCorpus;

pub const MIN_TEMPERATURE: f64 = 1e-3;
pub const MAX_TEMPERATURE: f64 = 1.0;

/// Dual-encoder student: one linear tower per modality followed by L2
/// normalization, and a learnable temperature stored in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentModel {
    pub w_v: Mat64,
    pub w_t: Mat64,
    pub log_temperature: f64,
}

/// An L2-normalized embedding together with the pre-normalization norm,
/// which is all the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub unit: Vec<f64>,
    pub raw_norm: f64,
}

/// Tower selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tower {
    Image,
    Text,
}

impl StudentModel {
    pub fn new(embed_dim: usize, view_a_dim: usize, view_b_dim: usize, temperature: f64, rng: &mut Rng) -> Self {
        let w_v = Mat64::random_normal(embed_dim, view_a_dim, 1.0 / (view_a_dim as f64).sqrt(), rng);
        let w_t = Mat64::random_normal(embed_dim, view_b_dim, 1.0 / (view_b_dim as f64).sqrt(), rng);
        Self {
            w_v,
            w_t,
            log_temperature: temperature.ln(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.w_v.rows()
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn clamp_temperature(&mut self) {
        self.log_temperature = self
            .log_temperature
            .clamp(MIN_TEMPERATURE.ln(), MAX_TEMPERATURE.ln());
    }

    pub fn tower(&self, tower: Tower) -> &Mat64 {
        match tower {
            Tower::Image => &self.w_v,
            Tower::Text => &self.w_t,
        }
    }

    pub fn encode(&self, tower: Tower, x: &[f64]) -> Result<Encoded> {
        encode_with(self.tower(tower), x)
    }

    pub fn encode_v(&self, x_v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode(Tower::Image, x_v)?.unit)
    }

    pub fn encode_t(&self, x_t: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode(Tower::Text, x_t)?.unit)
    }

    /// Unit embeddings of every item's view for one tower.
    pub fn encode_corpus(&self, tower: Tower, corpus: &LatentCorpus) -> Result<Vec<Vec<f64>>> {
        corpus
            .items
            .iter()
            .map(|it| {
                let x = match tower {
                    Tower::Image => &it.x_v,
                    Tower::Text => &it.x_t,
                };
                Ok(self.encode(tower, x)?.unit)
            })
            .collect()
    }

    /// Flattened θ: `W_v`, then `W_t`, then `log_temperature`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend_from_slice(self.w_v.values());
        out.extend_from_slice(self.w_t.values());
        out.push(self.log_temperature);
        out
    }

    pub fn n_params(&self) -> usize {
        self.w_v.values().len() + self.w_t.values().len() + 1
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "flat params {} vs model {}",
                flat.len(),
                self.n_params()
            )));
        }
        let nv = self.w_v.values().len();
        let nt = self.w_t.values().len();
        self.w_v.values_mut().copy_from_slice(&flat[..nv]);
        self.w_t.values_mut().copy_from_slice(&flat[nv..nv + nt]);
        self.log_temperature = flat[nv + nt];
        Ok(())
    }
}

pub fn encode_with(w: &Mat64, x: &[f64]) -> Result<Encoded> {
    let raw = w.mul_vec(x)?;
    let raw_norm = norm(&raw);
    if !(raw_norm > MIN_NORM) {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(Encoded {
        unit: raw.iter().map(|v| v / raw_norm).collect(),
        raw_norm,
    })
}

/// Accumulate into `grad_w` the gradient of a scalar through
/// `y = normalize(W x)` given `dL/dy`:
/// `dL/dW += ((I − y yᵀ) g / ‖Wx‖) xᵀ`.
pub fn backprop_encode(grad_w: &mut Mat64, x: &[f64], enc: &Encoded, grad_unit: &[f64]) {
    let gy = dot_unchecked(grad_unit, &enc.unit);
    let g_raw: Vec<f64> = grad_unit
        .iter()
        .zip(&enc.unit)
        .map(|(g, y)| (g - gy * y) / enc.raw_norm)
        .collect();
    grad_w.add_outer(&g_raw, x, 1.0);
}

/// Gradient container matching θ.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentGrad {
    pub w_v: Mat64,
    pub w_t: Mat64,
    pub log_temperature: f64,
}

impl StudentGrad {
    pub fn zeros_like(model: &StudentModel) -> Self {
        Self {
            w_v: Mat64::zeros(model.w_v.rows(), model.w_v.cols()),
            w_t: Mat64::zeros(model.w_t.rows(), model.w_t.cols()),
            log_temperature: 0.0,
        }
    }

    pub fn tower_mut(&mut self, tower: Tower) -> &mut Mat64 {
        match tower {
            Tower::Image => &mut self.w_v,
            Tower::Text => &mut self.w_t,
        }
    }

    pub fn add_assign(&mut self, other: &StudentGrad) -> Result<()> {
        self.w_v.add_assign(&other.w_v)?;
        self.w_t.add_assign(&other.w_t)?;
        self.log_temperature += other.log_temperature;
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.w_v.scale(s);
        self.w_t.scale(s);
        self.log_temperature *= s;
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w_v.values());
        out.extend_from_slice(self.w_t.values());
        out.push(self.log_temperature);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.log_temperature == 0.0
            && self.w_v.values().iter().all(|v| *v == 0.0)
            && self.w_t.values().iter().all(|v| *v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_gradient;

    #[test]
    fn row_selector_encodes_prefix() {
        let mut w = Mat64::zeros(2, 4);
        w.set(0, 0, 1.0);
        w.set(1, 1, 1.0);
        let e = encode_with(&w, &[3.0, 4.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.unit, vec![0.6, 0.8]);
        let e2 = encode_with(&w, &[6.0, 8.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.unit, e2.unit);
        assert!(matches!(
            encode_with(&w, &[0.0, 0.0, 1.0, 1.0]),
            Err(Error::DegenerateEmbedding)
        ));
    }

    #[test]
    fn encode_gradient_matches_finite_differences() {
        let mut rng = Rng::new(21);
        for _ in 0..20 {
            let w = Mat64::random_normal(5, 7, 0.5, &mut rng);
            let x: Vec<f64> = (0..7).map(|_| rng.normal()).collect();
            let t = rng.unit_vector(5);
            let enc = encode_with(&w, &x).unwrap();
            let mut g = Mat64::zeros(5, 7);
            backprop_encode(&mut g, &x, &enc, &t);
            let f = |p: &[f64]| {
                let wm = Mat64::from_vec(5, 7, p.to_vec()).unwrap();
                dot_unchecked(&encode_with(&wm, &x).unwrap().unit, &t)
            };
            let rep = check_gradient(f, w.values(), g.values(), 1e-6).unwrap();
            assert!(rep.passed, "max rel err {}", rep.max_rel_error);
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = Rng::new(1);
        let m = StudentModel::new(3, 4, 5, 0.07, &mut rng);
        let mut m2 = StudentModel::new(3, 4, 5, 0.5, &mut rng);
        m2.set_flat(&m.to_flat()).unwrap();
        assert_eq!(m, m2);
        assert!(m2.set_flat(&[0.0; 3]).is_err());
    }

    #[test]
    fn temperature_clamp() {
        let mut m = StudentModel::new(2, 2, 2, 0.07, &mut Rng::new(0));
        m.log_temperature = 5.0;
        m.clamp_temperature();
        assert_eq!(m.temperature(), 1.0);
        m.log_temperature = -50.0;
        m.clamp_temperature();
        assert!((m.temperature() - 1e-3).abs() < 1e-15);
    }
}
