//! The training loop: batch sampling, momentum encoding, queue maintenance,
//! mining, target construction, the loss step, AdamW, and checkpoints.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::losses::{
    align_loss, distill_loss, total_loss, BatchInputs, CprdForm, CprdQuery, DistillMethod, DistillPlan, EncodedBatch,
    ScoredHardSet,
};
use crate::memory::{candidate_view, enqueue_batch, momentum_update, CandidateView, MomentumModel, Queues};
use crate::mining::{mine_top_k, HardNegativeSet};
use crate::numerics::{adam_step, derive_seed, AdamState, Rng, RngState};
use crate::synthworld::model::{MAX_TEMPERATURE, MIN_TEMPERATURE};
use crate::synthworld::teacher::{calibrate_alpha, sample_itm_pairs, Calibration};
use crate::synthworld::{
    build_similarity_bank, encode_with, generate_corpus, CorpusConfig, Direction, LatentCorpus, SimilarityBank,
    StudentModel, TeacherSim,
};
use crate::targets::{build_target, ScoreSource, ValidityRule};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Where distillation targets get their teacher scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetMode {
    /// Score mined negatives with the teacher during training.
    Online,
    /// Look scores up in a similarity bank built once from the warm-start model.
    Offline,
}

impl TargetMode {
    pub fn name(self) -> &'static str {
        match self {
            TargetMode::Online => "online",
            TargetMode::Offline => "offline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_peak: f64,
    pub lr_floor: f64,
    pub warmup_steps: usize,
    pub cosine: bool,
    pub weight_decay: f64,
    /// Momentum-encoder EMA coefficient.
    pub mu: f64,
    pub temperature_init: f64,
    pub embed_dim: usize,
    /// Hard negatives per query.
    pub k: usize,
    /// Feature queue size.
    pub n_q: usize,
    /// Reference queue size (raw inputs visible to the online teacher).
    pub n_c: usize,
    pub bank_n: usize,
    pub target_mode: TargetMode,
    pub method: DistillMethod,
    /// Epochs of plain alignment before distillation switches on.
    pub warm_start_epochs: usize,
    /// Record real step durations in the metrics log (breaks byte-identical logs).
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 64,
            epochs: 30,
            lr_peak: 3e-3,
            lr_floor: 1e-4,
            warmup_steps: 100,
            cosine: true,
            weight_decay: 0.02,
            mu: 0.995,
            temperature_init: 0.07,
            embed_dim: 32,
            k: 16,
            n_q: 512,
            n_c: 512,
            bank_n: 1000,
            target_mode: TargetMode::Online,
            method: DistillMethod::Cprd { m: 0.75 },
            warm_start_epochs: 0,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 || self.epochs == 0 || self.embed_dim < 2 {
            return bad("batch_size, epochs must be >= 1 and embed_dim >= 2".into());
        }
        if !(self.lr_peak > 0.0) || !(self.lr_floor >= 0.0) || self.lr_floor > self.lr_peak {
            return bad(format!("learning rates peak={} floor={}", self.lr_peak, self.lr_floor));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.mu) {
            return bad(format!("mu = {} outside [0, 1)", self.mu));
        }
        if !(MIN_TEMPERATURE..=MAX_TEMPERATURE).contains(&self.temperature_init) {
            return bad(format!("temperature_init = {} outside clamp range", self.temperature_init));
        }
        match self.method {
            DistillMethod::Cprd { m } | DistillMethod::CprdVariantHat { m } if !(0.0..=1.0).contains(&m) => {
                return bad(format!("m = {m} outside [0, 1]"));
            }
            DistillMethod::Kl { teacher_temp } if !(teacher_temp > 0.0) => {
                return bad(format!("kl teacher temperature {teacher_temp}"));
            }
            DistillMethod::M3se | DistillMethod::RM3se if self.k == 0 => {
                return bad("m3se needs k >= 1".into());
            }
            DistillMethod::Kl { .. } | DistillMethod::M3se | DistillMethod::RM3se
                if self.target_mode == TargetMode::Offline =>
            {
                return bad(format!("{} needs online targets (the bank holds no positive scores)", self.method.name()));
            }
            _ => {}
        }
        if self.target_mode == TargetMode::Offline && self.bank_n < self.k {
            return bad(format!("bank N = {} < K = {}", self.bank_n, self.k));
        }
        Ok(())
    }

    /// Hash of every setting, used to refuse resuming under a different config.
    pub fn fingerprint(&self, corpus: &LatentCorpus, teacher: &TeacherSim) -> String {
        let text = format!(
            "{}|n={} dims={},{},{}|{}",
            serde_json::to_string(self).unwrap_or_default(),
            corpus.len(),
            corpus.latent_dim,
            corpus.view_a_dim,
            corpus.view_b_dim,
            serde_json::to_string(teacher).unwrap_or_default()
        );
        format!("{:016x}", derive_seed(0, &text))
    }
}

/// One metrics-log row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub align: f64,
    pub distill: f64,
    pub temperature: f64,
    /// Mean count of valid hard negatives per query (hard-set size for the
    /// KL/M3SE baselines, which use every hard negative).
    pub mean_valid: f64,
    pub wall_ms: f64,
}

pub const METRICS_HEADER: &str = "step,L_align,L_distill,tau,mean_valid,wall_ms";

pub fn metrics_csv(rows: &[StepMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.align, r.distill, r.temperature, r.mean_valid, r.wall_ms
        );
    }
    out
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: usize,
    pub model: StudentModel,
    pub momentum: MomentumModel,
    pub adam_towers: AdamState,
    pub adam_temperature: AdamState,
    pub queues: Queues,
    pub rng: RngState,
    pub permutation: Vec<usize>,
    /// Model the similarity banks were built from (offline mode, once built).
    pub bank_model: Option<StudentModel>,
    pub metrics: Vec<StepMetrics>,
}

/// Serialized trainer state. Stored as JSON with round-trip float formatting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub fingerprint: String,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("checkpoint version {}", ckpt.version)));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub struct TrainOutcome {
    pub model: StudentModel,
    pub metrics: Vec<StepMetrics>,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    corpus: &'a LatentCorpus,
    teacher: TeacherSim,
    state: TrainState,
    rng: Rng,
    banks: Option<[SimilarityBank; 2]>,
    steps_per_epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, corpus: &'a LatentCorpus, teacher: TeacherSim) -> Result<Self> {
        config.validate()?;
        teacher.validate()?;
        if corpus.len() < config.batch_size {
            return Err(Error::Config(format!(
                "batch size {} exceeds {} training items",
                config.batch_size,
                corpus.len()
            )));
        }
        let root = Rng::new(config.seed);
        let mut init = root.substream("init");
        let model = StudentModel::new(
            config.embed_dim,
            corpus.view_a_dim,
            corpus.view_b_dim,
            config.temperature_init,
            &mut init,
        );
        let n_towers = model.n_params() - 1;
        let state = TrainState {
            step: 0,
            momentum: MomentumModel::from_student(&model, config.mu),
            model,
            adam_towers: AdamState::with_defaults(n_towers, config.weight_decay),
            adam_temperature: AdamState::with_defaults(1, 0.0),
            queues: Queues::new(config.n_q, config.n_c),
            rng: root.substream("train").state(),
            permutation: Vec::new(),
            bank_model: None,
            metrics: Vec::new(),
        };
        Ok(Self {
            steps_per_epoch: corpus.len() / config.batch_size,
            rng: Rng::from_state(state.rng),
            config,
            corpus,
            teacher,
            state,
            banks: None,
        })
    }

    /// Continue from a checkpoint taken under the same config, corpus and teacher.
    pub fn resume(config: TrainConfig, corpus: &'a LatentCorpus, teacher: TeacherSim, ckpt: Checkpoint) -> Result<Self> {
        let expected = config.fingerprint(corpus, &teacher);
        if ckpt.fingerprint != expected {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint {} vs current {}",
                ckpt.fingerprint, expected
            )));
        }
        let mut trainer = Self::new(config, corpus, teacher)?;
        if ckpt.state.model.w_v.shape() != trainer.state.model.w_v.shape()
            || ckpt.state.model.w_t.shape() != trainer.state.model.w_t.shape()
        {
            return Err(Error::ShapeMismatch("checkpoint model shape".into()));
        }
        trainer.rng = Rng::from_state(ckpt.state.rng);
        trainer.state = ckpt.state;
        if let Some(m) = trainer.state.bank_model.clone() {
            trainer.banks = Some(trainer.build_banks(&m)?);
        }
        Ok(trainer)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            fingerprint: self.config.fingerprint(self.corpus, &self.teacher),
            state: self.state.clone(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn model(&self) -> &StudentModel {
        &self.state.model
    }

    pub fn total_steps(&self) -> usize {
        self.config.epochs * self.steps_per_epoch
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.total_steps()
    }

    /// Learning rate at 0-based step `t`: linear warmup, then cosine decay to
    /// the floor (or flat at the peak when cosine is off).
    pub fn learning_rate(&self, t: usize) -> f64 {
        let c = &self.config;
        if t < c.warmup_steps {
            return c.lr_peak * (t + 1) as f64 / c.warmup_steps as f64;
        }
        if !c.cosine {
            return c.lr_peak;
        }
        let span = self.total_steps().saturating_sub(c.warmup_steps).max(1);
        let progress = ((t - c.warmup_steps) as f64 / span as f64).min(1.0);
        c.lr_floor + 0.5 * (c.lr_peak - c.lr_floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    fn build_banks(&self, model: &StudentModel) -> Result<[SimilarityBank; 2]> {
        let [a, b] = Direction::BOTH;
        Ok([
            build_similarity_bank(model, &self.teacher, self.corpus, self.config.bank_n, a)?.bank,
            build_similarity_bank(model, &self.teacher, self.corpus, self.config.bank_n, b)?.bank,
        ])
    }

    /// Run until `until` steps have been taken (or training ends).
    pub fn run_until(&mut self, until: usize) -> Result<()> {
        let end = until.min(self.total_steps());
        while self.state.step < end {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        self.run_until(self.total_steps())?;
        Ok(TrainOutcome {
            model: self.state.model,
            metrics: self.state.metrics,
        })
    }

    fn next_batch(&mut self) -> BatchInputs {
        let b = self.config.batch_size;
        let within = self.state.step % self.steps_per_epoch;
        if within == 0 || self.state.permutation.len() != self.corpus.len() {
            let mut perm: Vec<usize> = (0..self.corpus.len()).collect();
            self.rng.shuffle(&mut perm);
            self.state.permutation = perm;
        }
        let ids = self.state.permutation[within * b..(within + 1) * b].to_vec();
        let items = &self.corpus.items;
        BatchInputs {
            x_v: ids.iter().map(|&i| items[i].x_v.clone()).collect(),
            x_t: ids.iter().map(|&i| items[i].x_t.clone()).collect(),
            ids,
        }
    }

    pub fn step(&mut self) -> Result<StepMetrics> {
        // Instant is unavailable on some targets, so only read it on request
        let started = self.config.wall_clock.then(Instant::now);
        let s = self.state.step;
        let batch = self.next_batch();
        let momentum = &self.state.momentum;
        let mom_v = batch
            .x_v
            .iter()
            .map(|x| encode_with(&momentum.w_v, x).map(|e| e.unit))
            .collect::<Result<Vec<_>>>()?;
        let mom_t = batch
            .x_t
            .iter()
            .map(|x| encode_with(&momentum.w_t, x).map(|e| e.unit))
            .collect::<Result<Vec<_>>>()?;
        let view = candidate_view(&self.state.queues, &batch.ids, &mom_v, &mom_t);

        let align = align_loss(&self.state.model, &batch, &view)?;
        let align_value = align.value;
        let epoch = s / self.steps_per_epoch;
        let (distill, mean_valid) = if !self.config.method.is_none() && epoch >= self.config.warm_start_epochs {
            if self.config.target_mode == TargetMode::Offline && self.banks.is_none() {
                let m = self.state.model.clone();
                self.banks = Some(self.build_banks(&m)?);
                self.state.bank_model = Some(m);
            }
            let (plan, mean_valid) = self.distill_plan(&batch, &view)?;
            let value = match plan {
                Some(p) => Some(distill_loss(&self.state.model, &batch, &view, &p)?),
                None => None,
            };
            (value, mean_valid)
        } else {
            (None, 0.0)
        };
        let distill_value = distill.as_ref().map_or(0.0, |d| d.value);
        let total = total_loss(align, distill)?;
        if !total.value.is_finite() {
            return Err(Error::NonFinite(format!(
                "step {s}: L_align={align_value} L_distill={distill_value} tau={} batch={:?}",
                self.state.model.temperature(),
                batch.ids
            )));
        }

        let lr = self.learning_rate(s);
        let model = &mut self.state.model;
        let nv = model.w_v.values().len();
        let mut towers: Vec<f64> = model.w_v.values().iter().chain(model.w_t.values()).copied().collect();
        let grads: Vec<f64> = total
            .grad
            .w_v
            .values()
            .iter()
            .chain(total.grad.w_t.values())
            .copied()
            .collect();
        adam_step(&mut towers, &grads, &mut self.state.adam_towers, lr)?;
        model.w_v.values_mut().copy_from_slice(&towers[..nv]);
        model.w_t.values_mut().copy_from_slice(&towers[nv..]);
        let mut lt = [model.log_temperature];
        adam_step(&mut lt, &[total.grad.log_temperature], &mut self.state.adam_temperature, lr)?;
        model.log_temperature = lt[0];
        model.clamp_temperature();

        momentum_update(&self.state.model, &mut self.state.momentum)?;
        enqueue_batch(&mut self.state.queues, &batch.ids, &mom_v, &mom_t)?;
        self.state.step += 1;
        self.state.rng = self.rng.state();

        let row = StepMetrics {
            step: s,
            align: align_value,
            distill: distill_value,
            temperature: self.state.model.temperature(),
            mean_valid,
            wall_ms: started.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3),
        };
        self.state.metrics.push(row.clone());
        Ok(row)
    }

    /// Mine hard negatives, score them, and assemble the per-direction
    /// distillation inputs. Returns `None` when every CPRD target is vacuous.
    fn distill_plan(&self, batch: &BatchInputs, view: &CandidateView) -> Result<(Option<DistillPlan>, f64)> {
        let cfg = &self.config;
        let offline = cfg.target_mode == TargetMode::Offline;
        let enc = EncodedBatch::encode(&self.state.model, batch)?;
        let b = batch.len();
        let mut cprd: [Vec<CprdQuery>; 2] = Default::default();
        let mut scored: [Vec<ScoredHardSet>; 2] = Default::default();
        let mut counted = 0usize;
        let resolve = |k: usize| (offline || view.teacher_visible[k]).then(|| view.ids[k]);

        for (d, dir) in Direction::BOTH.into_iter().enumerate() {
            let queries = enc.units(dir.query_tower());
            let feats = view.features(dir);
            let source = if offline {
                ScoreSource::Offline {
                    bank: self.banks.as_ref().map(|banks| &banks[d]),
                }
            } else {
                ScoreSource::Online {
                    teacher: &self.teacher,
                    corpus: self.corpus,
                    direction: dir,
                }
            };
            for (i, query) in queries.iter().enumerate() {
                let negatives = view.negatives(i);
                let hard = mine(i, query, feats, &negatives, |k| resolve(k).is_some(), cfg.k)?;
                let query_item = batch.ids[i];
                match cfg.method {
                    DistillMethod::Cprd { m } | DistillMethod::CprdVariantHat { m } => {
                        let target = build_target(query_item, &hard, resolve, &source, ValidityRule::Threshold(m))?;
                        counted += target.valid.len();
                        cprd[d].push(CprdQuery::new(&target, &hard, &negatives)?);
                    }
                    DistillMethod::CprdMStar => {
                        let target = build_target(query_item, &hard, resolve, &source, ValidityRule::TopOne)?;
                        counted += target.valid.len();
                        cprd[d].push(CprdQuery::new(&target, &hard, &negatives)?);
                    }
                    DistillMethod::Kl { .. } | DistillMethod::M3se | DistillMethod::RM3se => {
                        let teacher_hard = hard
                            .ids
                            .iter()
                            .map(|&k| {
                                let (img, txt) = dir.image_text(query_item, view.ids[k]);
                                self.teacher.score(self.corpus, img, txt)
                            })
                            .collect();
                        counted += hard.len();
                        scored[d].push(ScoredHardSet {
                            hard: hard.ids,
                            teacher_positive: self.teacher.score(self.corpus, query_item, query_item),
                            teacher_hard,
                        });
                    }
                    DistillMethod::None => unreachable!("distill_plan is only called when distilling"),
                }
            }
        }
        let mean_valid = counted as f64 / (2 * b) as f64;
        let plan = match cfg.method {
            DistillMethod::Cprd { .. } | DistillMethod::CprdMStar | DistillMethod::CprdVariantHat { .. } => {
                if cprd.iter().flatten().all(|q| q.valid.is_empty()) {
                    None
                } else {
                    let form = if matches!(cfg.method, DistillMethod::CprdVariantHat { .. }) {
                        CprdForm::Truncated
                    } else {
                        CprdForm::Full
                    };
                    Some(DistillPlan::Cprd { form, queries: cprd })
                }
            }
            DistillMethod::Kl { teacher_temp } => Some(DistillPlan::Kl {
                teacher_temp,
                queries: scored,
            }),
            DistillMethod::M3se => Some(DistillPlan::M3se {
                rescale: false,
                queries: scored,
            }),
            DistillMethod::RM3se => Some(DistillPlan::M3se {
                rescale: true,
                queries: scored,
            }),
            DistillMethod::None => None,
        };
        Ok((plan, mean_valid))
    }
}

/// Top-K of the teacher-scorable negatives by student similarity.
fn mine<F>(
    query: usize,
    feature: &[f64],
    feats: &[Vec<f64>],
    negatives: &[usize],
    minable: F,
    k: usize,
) -> Result<HardNegativeSet>
where
    F: Fn(usize) -> bool,
{
    let pool: Vec<usize> = negatives.iter().copied().filter(|&n| minable(n)).collect();
    if k == 0 || pool.is_empty() {
        return Ok(HardNegativeSet {
            query,
            ids: Vec::new(),
            k,
            clamped: k > 0,
        });
    }
    mine_top_k(query, feature, pool.iter().map(|&n| (n, feats[n].as_slice())), k)
}

pub fn train(config: TrainConfig, corpus: &LatentCorpus, teacher: TeacherSim) -> Result<TrainOutcome> {
    Trainer::new(config, corpus, teacher)?.run()
}

/// Settings for the synthetic world shared by training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub corpus: CorpusConfig,
    /// Leading items used for training; the rest form the test split.
    pub train_items: usize,
    pub teacher_r0: f64,
    /// Fixed sharpness; `None` calibrates it with the ITM loss.
    pub teacher_alpha: Option<f64>,
    pub teacher_noise: f64,
    /// Matched (and as many random unmatched) pairs used for calibration.
    pub itm_pairs: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            train_items: 2000,
            teacher_r0: 0.8,
            teacher_alpha: None,
            teacher_noise: 0.0,
            itm_pairs: 2000,
        }
    }
}

pub struct World {
    pub train: LatentCorpus,
    pub test: LatentCorpus,
    pub teacher: TeacherSim,
    pub calibration: Option<Calibration>,
}

/// Generate the corpus, split it, and calibrate the teacher on the training split.
pub fn build_world(config: &WorldConfig, seed: u64) -> Result<World> {
    if config.train_items == 0 || config.train_items >= config.corpus.n_items {
        return Err(Error::Config(format!(
            "train_items = {} must be in [1, n_items)",
            config.train_items
        )));
    }
    let root = Rng::new(seed);
    let corpus = generate_corpus(&config.corpus, &mut root.substream("corpus"))?;
    let (train, test) = corpus.split(config.train_items);
    let (alpha, calibration) = match config.teacher_alpha {
        Some(a) => (a, None),
        None => {
            let pairs = sample_itm_pairs(&train, config.itm_pairs, &mut root.substream("itm"));
            let cal = calibrate_alpha(&pairs, config.teacher_r0);
            (cal.alpha, Some(cal))
        }
    };
    let teacher = TeacherSim::new(alpha, config.teacher_r0).with_noise(config.teacher_noise, derive_seed(seed, "teacher-noise"));
    teacher.validate()?;
    Ok(World {
        train,
        test,
        teacher,
        calibration,
    })
}
