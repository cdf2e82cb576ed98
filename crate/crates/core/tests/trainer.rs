use rdl_core::losses::DistillMethod;
use rdl_core::synthworld::CorpusConfig;
use rdl_core::trainer::{
    build_world, metrics_csv, Checkpoint, TargetMode, TrainConfig, Trainer, World, WorldConfig, METRICS_HEADER,
};
use rdl_core::Error;

fn small_world(seed: u64) -> World {
    let cfg = WorldConfig {
        corpus: CorpusConfig {
            n_items: 500,
            clusters: 8,
            view_a_dim: 16,
            view_b_dim: 16,
            ..CorpusConfig::default()
        },
        train_items: 400,
        itm_pairs: 400,
        ..WorldConfig::default()
    };
    build_world(&cfg, seed).unwrap()
}

fn small_config(seed: u64, method: DistillMethod) -> TrainConfig {
    TrainConfig {
        seed,
        batch_size: 32,
        epochs: 3,
        warmup_steps: 5,
        embed_dim: 8,
        k: 8,
        n_q: 64,
        n_c: 64,
        bank_n: 100,
        method,
        ..TrainConfig::default()
    }
}

fn run_all(w: &World, cfg: TrainConfig) -> Trainer<'_> {
    let mut t = Trainer::new(cfg, &w.train, w.teacher).unwrap();
    let n = t.total_steps();
    t.run_until(n).unwrap();
    t
}

#[test]
fn same_seed_same_metrics() {
    let w = small_world(1);
    let cfg = small_config(7, DistillMethod::Cprd { m: 0.75 });
    let a = metrics_csv(&run_all(&w, cfg.clone()).state().metrics);
    let b = metrics_csv(&run_all(&w, cfg).state().metrics);
    assert!(a.starts_with(METRICS_HEADER));
    assert_eq!(a.lines().count(), 1 + 3 * (400 / 32));
    assert_eq!(a, b);
}

#[test]
fn wall_clock_column_is_zero_by_default() {
    let w = small_world(1);
    let t = run_all(&w, small_config(2, DistillMethod::None));
    assert!(t.state().metrics.iter().all(|m| m.wall_ms == 0.0));
}

fn resume_matches(mode: TargetMode, method: DistillMethod) {
    let w = small_world(2);
    let cfg = TrainConfig {
        target_mode: mode,
        warm_start_epochs: if mode == TargetMode::Offline { 1 } else { 0 },
        ..small_config(3, method)
    };
    let full = run_all(&w, cfg.clone());

    let mut first = Trainer::new(cfg.clone(), &w.train, w.teacher).unwrap();
    first.run_until(17).unwrap();
    let json = first.checkpoint().to_json().unwrap();
    drop(first);
    let ckpt = Checkpoint::from_json(&json).unwrap();
    let mut second = Trainer::resume(cfg, &w.train, w.teacher, ckpt).unwrap();
    let n = second.total_steps();
    second.run_until(n).unwrap();

    assert_eq!(second.state(), full.state());
    assert_eq!(second.checkpoint().to_json().unwrap(), full.checkpoint().to_json().unwrap());
}

#[test]
fn resume_is_bitwise_online() {
    resume_matches(TargetMode::Online, DistillMethod::Cprd { m: 0.75 });
}

#[test]
fn resume_is_bitwise_offline() {
    resume_matches(TargetMode::Offline, DistillMethod::Cprd { m: 0.75 });
}

#[test]
fn resume_is_bitwise_for_baselines() {
    resume_matches(TargetMode::Online, DistillMethod::Kl { teacher_temp: 0.1 });
    resume_matches(TargetMode::Online, DistillMethod::RM3se);
}

#[test]
fn checkpoint_file_round_trip() {
    let w = small_world(3);
    let mut t = Trainer::new(small_config(4, DistillMethod::CprdMStar), &w.train, w.teacher).unwrap();
    t.run_until(5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let ckpt = t.checkpoint();
    ckpt.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
}

#[test]
fn resume_rejects_changed_seed() {
    let w = small_world(4);
    let cfg = small_config(5, DistillMethod::None);
    let mut t = Trainer::new(cfg.clone(), &w.train, w.teacher).unwrap();
    t.run_until(3).unwrap();
    let ckpt = t.checkpoint();
    let other = TrainConfig { seed: 6, ..cfg };
    let err = Trainer::resume(other, &w.train, w.teacher, ckpt).err().unwrap();
    assert!(matches!(err, Error::ConfigMismatch(_)));
    assert!(err.to_string().starts_with("config mismatch"), "{err}");
}

fn lockstep(w: &World, a: TrainConfig, b: TrainConfig) {
    let mut ta = Trainer::new(a, &w.train, w.teacher).unwrap();
    let mut tb = Trainer::new(b, &w.train, w.teacher).unwrap();
    while !ta.is_done() {
        let ma = ta.step().unwrap();
        let mb = tb.step().unwrap();
        assert_eq!(ma.align.to_bits(), mb.align.to_bits(), "step {}", ma.step);
        assert_eq!(ma.distill, 0.0);
        assert_eq!(mb.distill, 0.0);
        assert_eq!(ta.model(), tb.model(), "step {}", ma.step);
    }
    assert!(tb.is_done());
}

#[test]
fn m_one_matches_none() {
    let w = small_world(5);
    let none = small_config(8, DistillMethod::None);
    lockstep(&w, none.clone(), TrainConfig {
        method: DistillMethod::Cprd { m: 1.0 },
        ..none
    });
}

#[test]
fn k_zero_matches_none() {
    let w = small_world(5);
    let none = small_config(9, DistillMethod::None);
    lockstep(&w, none.clone(), TrainConfig {
        k: 0,
        method: DistillMethod::Cprd { m: 0.5 },
        ..none
    });
}

#[test]
fn offline_mode_trains() {
    let w = small_world(6);
    let cfg = TrainConfig {
        target_mode: TargetMode::Offline,
        warm_start_epochs: 1,
        ..small_config(10, DistillMethod::Cprd { m: 0.75 })
    };
    let t = run_all(&w, cfg);
    assert!(t.state().bank_model.is_some());
    let m = &t.state().metrics;
    assert!(m.iter().all(|r| r.align.is_finite() && r.distill.is_finite()));
    // the warm-start epoch has no distillation
    assert!(m[..400 / 32].iter().all(|r| r.distill == 0.0));
    assert!(m[400 / 32..].iter().any(|r| r.distill > 0.0));
}

#[test]
fn baselines_reject_offline_mode() {
    let w = small_world(6);
    let cfg = TrainConfig {
        target_mode: TargetMode::Offline,
        ..small_config(11, DistillMethod::M3se)
    };
    assert!(Trainer::new(cfg, &w.train, w.teacher).is_err());
}

#[test]
fn temperature_stays_in_clamp() {
    let w = small_world(7);
    let cfg = TrainConfig {
        lr_peak: 0.5,
        ..small_config(12, DistillMethod::Cprd { m: 0.5 })
    };
    let t = run_all(&w, cfg);
    assert!(t.state().metrics.iter().all(|m| (1e-3..=1.0).contains(&m.temperature)));
}

#[test]
fn default_run_lowers_align_loss() {
    let w = build_world(&WorldConfig::default(), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let t = run_all(&w, cfg);
    let m = &t.state().metrics;
    let head: f64 = m[..10].iter().map(|r| r.align).sum::<f64>() / 10.0;
    let tail: f64 = m[m.len() - 10..].iter().map(|r| r.align).sum::<f64>() / 10.0;
    assert!(tail < head, "{head} -> {tail}");
}
