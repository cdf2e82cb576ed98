//! Command-line front end: flat `key=value` configs, subcommands, sweeps and
//! report aggregation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    rank_interval_correlation, rated_pairs, recall_at_k, rerank_study, score_histograms, spearman_bootstrap,
    RetrievalReport, DESK_INTERVALS, WIDE_INTERVALS,
};
use crate::io::write_atomic;
use crate::losses::DistillMethod;
use crate::numerics::{derive_seed, Rng};
use crate::synthworld::{build_similarity_bank, Direction, LatentCorpus, StudentModel};
use crate::trainer::{build_world, metrics_csv, Checkpoint, TargetMode, TrainConfig, Trainer, World, WorldConfig};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_ASSERT: i32 = 3;

/// Every knob of a run, flattened to dotted keys in the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub m: f64,
    pub kl_teacher_temp: f64,
    pub checkpoint_every: usize,
    pub rerank_ks: Vec<usize>,
    pub wide_intervals: bool,
    pub bootstrap_resamples: usize,
    pub rated_per_query: usize,
    pub hist_pairs: usize,
    pub hist_bins: usize,
    pub ablate_param: String,
    pub ablate_values: Vec<String>,
    pub ablate_seeds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldConfig::default(),
            train: TrainConfig::default(),
            m: 0.75,
            kl_teacher_temp: 1.0,
            checkpoint_every: 0,
            rerank_ks: vec![0, 4, 16, 32],
            wide_intervals: false,
            bootstrap_resamples: 1000,
            rated_per_query: 8,
            hist_pairs: 10_000,
            hist_bins: 20,
            ablate_param: "train.m".into(),
            ablate_values: ["0", "0.5", "0.75", "0.9", "1"].map(String::from).to_vec(),
            ablate_seeds: 5,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for key `{key}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Apply one `key=value` setting. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, v) = (key.trim(), value.trim());
        let c = &mut self.world.corpus;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "corpus.n_items" => c.n_items = parse_num(key, v)?,
            "corpus.train_items" => self.world.train_items = parse_num(key, v)?,
            "corpus.latent_dim" => c.latent_dim = parse_num(key, v)?,
            "corpus.view_a_dim" => c.view_a_dim = parse_num(key, v)?,
            "corpus.view_b_dim" => c.view_b_dim = parse_num(key, v)?,
            "corpus.clusters" => c.clusters = parse_num(key, v)?,
            "corpus.cluster_spread" => c.cluster_spread = parse_num(key, v)?,
            "corpus.noise" => c.noise = parse_num(key, v)?,
            "corpus.identity_mixing" => c.identity_mixing = parse_bool(key, v)?,
            "teacher.r0" => self.world.teacher_r0 = parse_num(key, v)?,
            "teacher.alpha" => {
                self.world.teacher_alpha = if v == "auto" { None } else { Some(parse_num(key, v)?) }
            }
            "teacher.noise" => self.world.teacher_noise = parse_num(key, v)?,
            "teacher.itm_pairs" => self.world.itm_pairs = parse_num(key, v)?,
            "train.batch_size" => t.batch_size = parse_num(key, v)?,
            "train.epochs" => t.epochs = parse_num(key, v)?,
            "train.lr_peak" => t.lr_peak = parse_num(key, v)?,
            "train.lr_floor" => t.lr_floor = parse_num(key, v)?,
            "train.warmup_steps" => t.warmup_steps = parse_num(key, v)?,
            "train.cosine" => t.cosine = parse_bool(key, v)?,
            "train.weight_decay" => t.weight_decay = parse_num(key, v)?,
            "train.mu" => t.mu = parse_num(key, v)?,
            "train.temperature_init" => t.temperature_init = parse_num(key, v)?,
            "train.embed_dim" => t.embed_dim = parse_num(key, v)?,
            "train.k" => t.k = parse_num(key, v)?,
            "train.m" => self.m = parse_num(key, v)?,
            "train.n_q" => t.n_q = parse_num(key, v)?,
            "train.n_c" => t.n_c = parse_num(key, v)?,
            "train.bank_n" => t.bank_n = parse_num(key, v)?,
            "train.target_mode" => {
                t.target_mode = match v {
                    "online" => TargetMode::Online,
                    "offline" => TargetMode::Offline,
                    _ => return Err(Error::Config(format!("bad value `{v}` for key `{key}`"))),
                }
            }
            "train.method" => t.method = DistillMethod::from_name(v, self.m, self.kl_teacher_temp)?,
            "train.kl_teacher_temp" => self.kl_teacher_temp = parse_num(key, v)?,
            "train.warm_start_epochs" => t.warm_start_epochs = parse_num(key, v)?,
            "train.wall_clock" => t.wall_clock = parse_bool(key, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse_num(key, v)?,
            "eval.rerank_ks" => self.rerank_ks = parse_list(key, v)?,
            "eval.wide_intervals" => self.wide_intervals = parse_bool(key, v)?,
            "eval.bootstrap_resamples" => self.bootstrap_resamples = parse_num(key, v)?,
            "eval.rated_per_query" => self.rated_per_query = parse_num(key, v)?,
            "eval.hist_pairs" => self.hist_pairs = parse_num(key, v)?,
            "eval.hist_bins" => self.hist_bins = parse_num(key, v)?,
            "ablate.param" => self.ablate_param = v.to_string(),
            "ablate.values" => self.ablate_values = v.split(',').map(|s| s.trim().to_string()).collect(),
            "ablate.seeds" => self.ablate_seeds = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        if matches!(key, "train.m" | "train.kl_teacher_temp") {
            let t = &mut self.train;
            t.method = DistillMethod::from_name(t.method.name(), self.m, self.kl_teacher_temp)?;
        }
        Ok(())
    }

    /// Parse a config file: `key = value` lines, `#` comments, blank lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// The run's training config with `m` and the KL temperature folded into the method.
    pub fn resolved_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        t.method = DistillMethod::from_name(t.method.name(), self.m, self.kl_teacher_temp)
            .unwrap_or(DistillMethod::None);
        t
    }

    pub fn validate(&self) -> Result<()> {
        self.world.corpus.validate()?;
        self.resolved_train().validate()?;
        if self.hist_bins < 2 {
            return Err(Error::Config("eval.hist_bins must be >= 2".into()));
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields the same config.
    pub fn to_text(&self) -> String {
        let c = &self.world.corpus;
        let t = &self.train;
        let w = &self.world;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        put("corpus.n_items", c.n_items.to_string());
        put("corpus.train_items", w.train_items.to_string());
        put("corpus.latent_dim", c.latent_dim.to_string());
        put("corpus.view_a_dim", c.view_a_dim.to_string());
        put("corpus.view_b_dim", c.view_b_dim.to_string());
        put("corpus.clusters", c.clusters.to_string());
        put("corpus.cluster_spread", c.cluster_spread.to_string());
        put("corpus.noise", c.noise.to_string());
        put("corpus.identity_mixing", c.identity_mixing.to_string());
        put("teacher.r0", w.teacher_r0.to_string());
        put("teacher.alpha", w.teacher_alpha.map_or("auto".into(), |a| a.to_string()));
        put("teacher.noise", w.teacher_noise.to_string());
        put("teacher.itm_pairs", w.itm_pairs.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.epochs", t.epochs.to_string());
        put("train.lr_peak", t.lr_peak.to_string());
        put("train.lr_floor", t.lr_floor.to_string());
        put("train.warmup_steps", t.warmup_steps.to_string());
        put("train.cosine", t.cosine.to_string());
        put("train.weight_decay", t.weight_decay.to_string());
        put("train.mu", t.mu.to_string());
        put("train.temperature_init", t.temperature_init.to_string());
        put("train.embed_dim", t.embed_dim.to_string());
        put("train.k", t.k.to_string());
        put("train.m", self.m.to_string());
        put("train.n_q", t.n_q.to_string());
        put("train.n_c", t.n_c.to_string());
        put("train.bank_n", t.bank_n.to_string());
        put("train.target_mode", t.target_mode.name().into());
        put("train.method", t.method.name().into());
        put("train.kl_teacher_temp", self.kl_teacher_temp.to_string());
        put("train.warm_start_epochs", t.warm_start_epochs.to_string());
        put("train.wall_clock", t.wall_clock.to_string());
        put("train.checkpoint_every", self.checkpoint_every.to_string());
        put("eval.rerank_ks", join(&self.rerank_ks));
        put("eval.wide_intervals", self.wide_intervals.to_string());
        put("eval.bootstrap_resamples", self.bootstrap_resamples.to_string());
        put("eval.rated_per_query", self.rated_per_query.to_string());
        put("eval.hist_pairs", self.hist_pairs.to_string());
        put("eval.hist_bins", self.hist_bins.to_string());
        put("ablate.param", self.ablate_param.clone());
        put("ablate.values", self.ablate_values.join(","));
        put("ablate.seeds", self.ablate_seeds.to_string());
        out
    }

    pub fn hash(&self) -> String {
        format!("{:016x}", derive_seed(0, &self.to_text()))
    }
}

/// Record of one subcommand invocation and everything it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config_file: String,
    pub seed: u64,
    pub artifact_version: String,
    pub files: Vec<String>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Parser, Debug)]
#[command(name = "rdl", version, about = "Contrastive partial ranking distillation lab")]
pub struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "rdl-out")]
    pub out: PathBuf,
    /// Override a config key, e.g. `--set train.k=8`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the train/test corpus files.
    Generate,
    /// Build the offline similarity banks (one per direction).
    Bank(BankArgs),
    /// Train a student.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Sweep one config key over values and seeds.
    Ablate,
    /// Render comparison tables from ablation CSVs.
    Report,
}

#[derive(Args, Debug)]
pub struct BankArgs {
    /// Mine with this checkpoint's student instead of the initial model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many total steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to evaluate (default: <out>/checkpoint.json).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Check report invariants; exit 3 on failure.
    #[arg(long = "assert")]
    pub assert_checks: bool,
}

enum Failure {
    Err(Error),
    Assert(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Err(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Err(Error::Io(e))
    }
}

pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => EXIT_OK,
        Err(Failure::Assert(msg)) => {
            eprintln!("assertion failed: {msg}");
            EXIT_ASSERT
        }
        Err(Failure::Err(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::ConfigMismatch(_) => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(path)
    }
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> std::result::Result<(), Failure> {
    let started = unix_now();
    let mut out = Outputs::new(&cli.out)?;
    let (name, config_file) = match cli.command {
        Command::Generate => ("generate", "generate.config"),
        Command::Bank(_) => ("bank", "bank.config"),
        Command::Train(_) => ("train", "train.config"),
        Command::Eval(_) => ("eval", "eval.config"),
        Command::Ablate => ("ablate", "ablate.config"),
        Command::Report => ("report", "report.config"),
    };
    out.write(config_file, cfg.to_text().as_bytes())?;
    match &cli.command {
        Command::Generate => cmd_generate(cfg, &mut out)?,
        Command::Bank(a) => cmd_bank(cfg, a, &mut out)?,
        Command::Train(a) => cmd_train(cfg, a, &mut out)?,
        Command::Eval(a) => cmd_eval(cfg, a, &mut out)?,
        Command::Ablate => cmd_ablate(cfg, &mut out)?,
        Command::Report => cmd_report(&mut out)?,
    }
    let manifest_name = format!("{name}.manifest.json");
    let mut files = out.files.clone();
    files.push(manifest_name.clone());
    let manifest = RunManifest {
        command: name.to_string(),
        config_hash: cfg.hash(),
        config_file: config_file.to_string(),
        seed: cfg.seed,
        artifact_version: ARTIFACT_VERSION.to_string(),
        files,
        started_unix_s: started,
        finished_unix_s: unix_now(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    out.write(&manifest_name, text.as_bytes())?;
    Ok(())
}

fn world(cfg: &ExperimentConfig) -> Result<World> {
    build_world(&cfg.world, cfg.seed)
}

fn cmd_generate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let w = world(cfg)?;
    out.write("train.corpus", w.train.to_text().as_bytes())?;
    out.write("test.corpus", w.test.to_text().as_bytes())?;
    println!(
        "generated {} train / {} test items; teacher alpha={} r0={}",
        w.train.len(),
        w.test.len(),
        w.teacher.alpha,
        w.teacher.r0
    );
    Ok(())
}

fn initial_model(cfg: &ExperimentConfig, corpus: &LatentCorpus) -> Result<StudentModel> {
    let t = Trainer::new(cfg.resolved_train(), corpus, build_world(&cfg.world, cfg.seed)?.teacher)?;
    Ok(t.model().clone())
}

fn cmd_bank(cfg: &ExperimentConfig, args: &BankArgs, out: &mut Outputs) -> Result<()> {
    let w = world(cfg)?;
    let tc = cfg.resolved_train();
    if tc.bank_n < tc.k {
        return Err(Error::Config(format!("bank N = {} < K = {}", tc.bank_n, tc.k)));
    }
    let model = match &args.checkpoint {
        Some(p) => Checkpoint::load(p)
            .map_err(|e| Error::InvalidInput(format!("{e} (run `rdl train` first or pass a valid --checkpoint)")))?
            .state
            .model,
        None => initial_model(cfg, &w.train)?,
    };
    for dir in Direction::BOTH {
        let build = build_similarity_bank(&model, &w.teacher, &w.train, tc.bank_n, dir)?;
        if build.clamped {
            eprintln!("warning: bank N clamped to {}", build.bank.n());
        }
        out.write(&format!("bank_{}.txt", dir.short()), build.bank.to_text().as_bytes())?;
    }
    println!("wrote banks with N = {}", tc.bank_n.min(w.train.len() - 1));
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, args: &TrainArgs, out: &mut Outputs) -> Result<()> {
    let w = world(cfg)?;
    let tc = cfg.resolved_train();
    let mut trainer = match &args.resume {
        Some(p) => Trainer::resume(tc, &w.train, w.teacher, Checkpoint::load(p)?)?,
        None => Trainer::new(tc, &w.train, w.teacher)?,
    };
    let end = args.steps.unwrap_or(usize::MAX).min(trainer.total_steps());
    while trainer.state().step < end {
        trainer.step()?;
        let s = trainer.state().step;
        if cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0 && s < end {
            out.write("checkpoint.json", trainer.checkpoint().to_json()?.as_bytes())?;
        }
    }
    out.write("checkpoint.json", trainer.checkpoint().to_json()?.as_bytes())?;
    let metrics = &trainer.state().metrics;
    out.write("metrics.csv", metrics_csv(metrics).as_bytes())?;
    if let (Some(first), Some(last)) = (metrics.first(), metrics.last()) {
        println!(
            "trained {} steps with {}: L_align {:.4} -> {:.4}, tau {:.4}",
            trainer.state().step,
            trainer.config().method,
            first.align,
            last.align,
            last.temperature
        );
    }
    Ok(())
}

fn report_table(title: &str, rows: &[(String, RetrievalReport)]) -> String {
    let mut s = format!("{title}\n{:<24} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>8}\n", "", "i2t@1", "i2t@5", "i2t@10", "t2i@1", "t2i@5", "t2i@10", "R@S(pp)");
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<24} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>8.2}",
            name,
            r.i2t[0],
            r.i2t[1],
            r.i2t[2],
            r.t2i[0],
            r.t2i[1],
            r.t2i[2],
            r.rsum()
        );
    }
    s
}

fn cmd_eval(cfg: &ExperimentConfig, args: &EvalArgs, out: &mut Outputs) -> std::result::Result<(), Failure> {
    let w = world(cfg)?;
    let path = args.checkpoint.clone().unwrap_or_else(|| out.dir.join("checkpoint.json"));
    let model = Checkpoint::load(&path)
        .map_err(|e| Error::InvalidInput(format!("cannot load {}: {e} (run `rdl train` first)", path.display())))?
        .state
        .model;
    let root = Rng::new(cfg.seed);
    let plain = recall_at_k(&model, &w.test)?;
    let study = rerank_study(&model, &w.teacher, &w.test, &cfg.rerank_ks)?;
    let intervals: &[(usize, usize)] = if cfg.wide_intervals { &WIDE_INTERVALS } else { &DESK_INTERVALS };
    let corr = rank_interval_correlation(&model, &w.teacher, &w.test, intervals)?;
    let mut boot_rng = root.substream("bootstrap");
    let rated = rated_pairs(&model, &w.test, cfg.rated_per_query, &mut boot_rng)?;
    let boot = spearman_bootstrap(&rated, cfg.bootstrap_resamples, &mut boot_rng)?;
    let init = initial_model(cfg, &w.train)?;
    let hist_init = score_histograms(&init, &w.teacher, &w.test, cfg.hist_pairs, cfg.hist_bins, &mut root.substream("histogram"))?;
    let hist = score_histograms(&model, &w.teacher, &w.test, cfg.hist_pairs, cfg.hist_bins, &mut root.substream("histogram"))?;

    out.write("retrieval.csv", format!("{}\n{}\n", RetrievalReport::CSV_HEADER, plain.csv_row()).as_bytes())?;
    out.write("rerank.csv", study.to_csv().as_bytes())?;
    let mut ic = String::from("interval_lo,interval_hi,mean_spearman,queries\n");
    for r in &corr {
        let _ = writeln!(ic, "{},{},{},{}", r.interval.0, r.interval.1, r.mean, r.queries);
    }
    out.write("intervals.csv", ic.as_bytes())?;
    out.write(
        "correlation.csv",
        format!("mean,std,resamples\n{},{},{}\n", boot.mean, boot.std, boot.resamples).as_bytes(),
    )?;
    out.write("histogram.csv", hist.to_csv().as_bytes())?;
    out.write("histogram_init.csv", hist_init.to_csv().as_bytes())?;

    let mut text = report_table("retrieval (recall as fractions; R@S in percentage points)", &[("student".into(), plain)]);
    let rows: Vec<(String, RetrievalReport)> = study.rows.iter().map(|(k, r)| (format!("rerank K={k}"), *r)).collect();
    text.push('\n');
    text.push_str(&report_table("teacher re-ranking of the student top-K", &rows));
    let _ = writeln!(text, "\nrank-interval Spearman vs teacher");
    for r in &corr {
        let _ = writeln!(text, "  {:>3}-{:<3} {:.4} ({} queries)", r.interval.0, r.interval.1, r.mean, r.queries);
    }
    let _ = writeln!(
        text,
        "\nbootstrap Spearman vs ground truth: {:.4} +- {:.4} ({} resamples)",
        boot.mean, boot.std, boot.resamples
    );
    let _ = writeln!(
        text,
        "teacher concentration {:.4}; student |s|>0.9 mass: init {:.4}, trained {:.4}",
        hist.teacher_concentration, hist_init.student_extreme_mass, hist.student_extreme_mass
    );
    out.write("report.txt", text.as_bytes())?;
    print!("{text}");

    if args.assert_checks {
        let mut failures = Vec::new();
        for (name, r) in std::iter::once(("student".to_string(), plain)).chain(rows) {
            for side in [r.i2t, r.t2i] {
                if !(side[0] <= side[1] && side[1] <= side[2]) {
                    failures.push(format!("{name}: recall not monotone in k"));
                }
            }
            if !(0.0..=600.0).contains(&r.rsum()) {
                failures.push(format!("{name}: R@S out of range"));
            }
        }
        if let Some((_, r0)) = study.rows.iter().find(|(k, _)| *k == 0) {
            if *r0 != plain {
                failures.push("K_rerank=0 row differs from the plain report".into());
            }
        }
        if !(boot.mean >= -1.0 && boot.mean <= 1.0 && boot.std >= 0.0) {
            failures.push("bootstrap statistics out of range".into());
        }
        if hist.teacher_concentration <= 0.8 {
            failures.push(format!("teacher concentration {} <= 0.8", hist.teacher_concentration));
        }
        if hist_init.student_extreme_mass >= 0.01 {
            failures.push(format!("initial student |s|>0.9 mass {} >= 0.01", hist_init.student_extreme_mass));
        }
        if !failures.is_empty() {
            return Err(Failure::Assert(failures.join("; ")));
        }
        println!("all eval checks passed");
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Element-wise median over seeds of each recall entry.
pub fn median_report(reports: &[RetrievalReport]) -> RetrievalReport {
    let pick = |f: &dyn Fn(&RetrievalReport) -> f64| median(reports.iter().map(f).collect());
    RetrievalReport {
        i2t: [pick(&|r| r.i2t[0]), pick(&|r| r.i2t[1]), pick(&|r| r.i2t[2])],
        t2i: [pick(&|r| r.t2i[0]), pick(&|r| r.t2i[1]), pick(&|r| r.t2i[2])],
    }
}

fn cmd_ablate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    if cfg.ablate_values.is_empty() || cfg.ablate_seeds == 0 {
        return Err(Error::Config("ablate needs values and seeds >= 1".into()));
    }
    let mut csv = format!("value,{},median_rsum_of_seeds,seeds\n", RetrievalReport::CSV_HEADER);
    let mut rows = Vec::new();
    for value in &cfg.ablate_values {
        let mut cell = cfg.clone();
        cell.set(&cfg.ablate_param, value)?;
        cell.validate()?;
        let mut reports = Vec::new();
        let mut rsums = Vec::new();
        for s in 0..cfg.ablate_seeds as u64 {
            let mut run = cell.clone();
            run.seed = cfg.seed + s;
            let w = world(&run)?;
            let trained = Trainer::new(run.resolved_train(), &w.train, w.teacher)?.run()?;
            let r = recall_at_k(&trained.model, &w.test)?;
            eprintln!("  {}={} seed {}: R@S {:.2}", cfg.ablate_param, value, run.seed, r.rsum());
            rsums.push(r.rsum());
            reports.push(r);
        }
        let med = median_report(&reports);
        let _ = writeln!(csv, "{value},{},{},{}", med.csv_row(), median(rsums), cfg.ablate_seeds);
        rows.push((format!("{}={value}", cfg.ablate_param), med));
    }
    let name = format!("ablate_{}.csv", cfg.ablate_param.replace('.', "_"));
    out.write(&name, csv.as_bytes())?;
    print!("{}", report_table(&format!("median over {} seeds", cfg.ablate_seeds), &rows));
    Ok(())
}

fn cmd_report(out: &mut Outputs) -> Result<()> {
    let mut names: Vec<String> = std::fs::read_dir(&out.dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("ablate_") && n.ends_with(".csv"))
        .collect();
    if names.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no ablate_*.csv in {} (run `rdl ablate` first)",
            out.dir.display()
        )));
    }
    names.sort();
    let mut text = String::new();
    for name in names {
        let body = std::fs::read_to_string(out.dir.join(&name))?;
        let mut rows = Vec::new();
        for line in body.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 7 {
                return Err(Error::Parse(format!("{name}: short row `{line}`")));
            }
            let num = |i: usize| parse_num::<f64>(&name, f[i]);
            let r = RetrievalReport {
                i2t: [num(1)?, num(2)?, num(3)?],
                t2i: [num(4)?, num(5)?, num(6)?],
            };
            rows.push((f[0].to_string(), r));
        }
        rows.sort_by(|a, b| b.1.rsum().total_cmp(&a.1.rsum()));
        text.push_str(&report_table(&format!("{name} (ranked by R@S)"), &rows));
        text.push('\n');
    }
    out.write("report_tables.txt", text.as_bytes())?;
    print!("{text}");
    Ok(())
}
