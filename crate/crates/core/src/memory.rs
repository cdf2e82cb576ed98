//! Momentum twins of the student towers and the FIFO feature/reference queues.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Mat64;
use crate::synthworld::{Direction, StudentModel};

/// EMA shadow of `W_v` and `W_t`. Never receives gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumModel {
    pub w_v: Mat64,
    pub w_t: Mat64,
    pub mu: f64,
}

impl MomentumModel {
    pub fn from_student(model: &StudentModel, mu: f64) -> Self {
        Self {
            w_v: model.w_v.clone(),
            w_t: model.w_t.clone(),
            mu,
        }
    }

    /// View as a student (temperature unused) for encoding.
    pub fn as_student(&self) -> StudentModel {
        StudentModel {
            w_v: self.w_v.clone(),
            w_t: self.w_t.clone(),
            log_temperature: 0.0,
        }
    }
}

fn ema(shadow: &mut Mat64, live: &Mat64, mu: f64) -> Result<()> {
    if shadow.shape() != live.shape() {
        return Err(Error::ShapeMismatch(format!(
            "momentum {:?} vs live {:?}",
            shadow.shape(),
            live.shape()
        )));
    }
    for (s, w) in shadow.values_mut().iter_mut().zip(live.values()) {
        *s = mu * *s + (1.0 - mu) * w;
    }
    Ok(())
}

/// `ŵ ← mu·ŵ + (1 − mu)·w` for both towers; temperature is not tracked.
pub fn momentum_update(model: &StudentModel, momentum: &mut MomentumModel) -> Result<()> {
    let mu = momentum.mu;
    ema(&mut momentum.w_v, &model.w_v, mu)?;
    ema(&mut momentum.w_t, &model.w_t, mu)
}

/// FIFO of `(item id, momentum feature)` with capacity `N_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureQueue {
    capacity: usize,
    entries: VecDeque<(usize, Vec<f64>)>,
}

impl FeatureQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, id: usize, feature: Vec<f64>) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((id, feature));
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &(usize, Vec<f64>)> {
        self.entries.iter()
    }
}

/// FIFO of item ids whose raw inputs are available to the teacher, capacity `N_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceQueue {
    capacity: usize,
    ids: VecDeque<usize>,
    // multiplicity of each id currently held
    counts: BTreeMap<usize, usize>,
}

impl ReferenceQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            ids: VecDeque::with_capacity(capacity),
            counts: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: usize) {
        if self.capacity == 0 {
            return;
        }
        if self.ids.len() == self.capacity {
            if let Some(old) = self.ids.pop_front() {
                if let Some(c) = self.counts.get_mut(&old) {
                    *c -= 1;
                    if *c == 0 {
                        self.counts.remove(&old);
                    }
                }
            }
        }
        self.ids.push_back(id);
        *self.counts.entry(id).or_insert(0) += 1;
    }

    pub fn contains(&self, id: usize) -> bool {
        self.counts.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &usize> {
        self.ids.iter()
    }
}

/// Feature queues `Q^v`, `Q^t` and reference queues `Q_c^v`, `Q_c^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Queues {
    pub image: FeatureQueue,
    pub text: FeatureQueue,
    pub ref_image: ReferenceQueue,
    pub ref_text: ReferenceQueue,
}

impl Queues {
    pub fn new(n_q: usize, n_c: usize) -> Self {
        Self {
            image: FeatureQueue::new(n_q),
            text: FeatureQueue::new(n_q),
            ref_image: ReferenceQueue::new(n_c),
            ref_text: ReferenceQueue::new(n_c),
        }
    }

    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }
}

/// Append a batch of momentum features (and ids) to the queues, evicting the
/// oldest entries beyond capacity.
pub fn enqueue_batch(
    queues: &mut Queues,
    ids: &[usize],
    image_features: &[Vec<f64>],
    text_features: &[Vec<f64>],
) -> Result<()> {
    if ids.len() != image_features.len() || ids.len() != text_features.len() {
        return Err(Error::ShapeMismatch(format!(
            "enqueue: {} ids, {} image, {} text features",
            ids.len(),
            image_features.len(),
            text_features.len()
        )));
    }
    for ((&id, v), t) in ids.iter().zip(image_features).zip(text_features) {
        queues.image.push(id, v.clone());
        queues.text.push(id, t.clone());
        queues.ref_image.push(id);
        queues.ref_text.push(id);
    }
    Ok(())
}

/// Ordered candidate list exposed to the losses: the current batch's momentum
/// features in batch order, then queue contents oldest to newest.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateView {
    pub batch_len: usize,
    pub ids: Vec<usize>,
    pub image: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
    /// Whether the teacher can score this slot online (raw input held in the
    /// batch or the reference queue).
    pub teacher_visible: Vec<bool>,
}

impl CandidateView {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Candidate features for queries in `direction`.
    pub fn features(&self, direction: Direction) -> &[Vec<f64>] {
        match direction {
            Direction::ImageToText => &self.text,
            Direction::TextToImage => &self.image,
        }
    }

    /// Negative slots for batch query `i`: every slot except its own, and
    /// excluding any queued copy of its own item.
    pub fn negatives(&self, i: usize) -> Vec<usize> {
        let own = self.ids[i];
        (0..self.len())
            .filter(|&k| k != i && self.ids[k] != own)
            .collect()
    }
}

pub fn candidate_view(
    queues: &Queues,
    batch_ids: &[usize],
    batch_image: &[Vec<f64>],
    batch_text: &[Vec<f64>],
) -> CandidateView {
    let b = batch_ids.len();
    let mut ids = batch_ids.to_vec();
    let mut image = batch_image.to_vec();
    let mut text = batch_text.to_vec();
    let mut teacher_visible = vec![true; b];
    for ((id, v), (_, t)) in queues.image.iter().zip(queues.text.iter()) {
        ids.push(*id);
        image.push(v.clone());
        text.push(t.clone());
        teacher_visible.push(queues.ref_text.contains(*id) && queues.ref_image.contains(*id));
    }
    CandidateView {
        batch_len: b,
        ids,
        image,
        text,
        teacher_visible,
    }
}
