use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot_unchecked, l2_normalize, Mat64, Rng};

pub const CORPUS_MAGIC: &str = "rdl-corpus v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_items: usize,
    pub latent_dim: usize,
    pub view_a_dim: usize,
    pub view_b_dim: usize,
    pub clusters: usize,
    /// Std-dev of the within-cluster perturbation before re-normalizing.
    pub cluster_spread: f64,
    /// Observation noise sigma.
    pub noise: f64,
    /// Use identity mixing matrices (requires view dims == latent dim).
    pub identity_mixing: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_items: 2500,
            latent_dim: 8,
            view_a_dim: 48,
            view_b_dim: 48,
            clusters: 20,
            cluster_spread: 0.35,
            noise: 0.35,
            identity_mixing: false,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 2 || self.view_a_dim < 2 || self.view_b_dim < 2 {
            return Err(Error::Config("corpus dims must be >= 2".into()));
        }
        if self.clusters < 2 {
            return Err(Error::Config("corpus.clusters must be >= 2".into()));
        }
        if self.n_items < 4 * self.clusters {
            return Err(Error::Config(format!(
                "corpus needs n_items >= 4 * clusters ({} < {})",
                self.n_items,
                4 * self.clusters
            )));
        }
        if self.identity_mixing
            && (self.view_a_dim != self.latent_dim || self.view_b_dim != self.latent_dim)
        {
            return Err(Error::Config(
                "identity mixing requires view dims equal to latent_dim".into(),
            ));
        }
        if !(self.noise >= 0.0) || !(self.cluster_spread >= 0.0) {
            return Err(Error::Config("noise and cluster_spread must be >= 0".into()));
        }
        Ok(())
    }
}

/// One synthetic bimodal item: both views derive from the same unit latent.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub cluster: usize,
    pub latent: Vec<f64>,
    pub x_v: Vec<f64>,
    pub x_t: Vec<f64>,
}

/// Synthetic corpus with known ground-truth relevance. Item `i`'s image and
/// text views form the unique positive pair `(i, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCorpus {
    pub latent_dim: usize,
    pub view_a_dim: usize,
    pub view_b_dim: usize,
    pub clusters: usize,
    pub items: Vec<Item>,
}

pub fn generate_corpus(config: &CorpusConfig, rng: &mut Rng) -> Result<LatentCorpus> {
    config.validate()?;
    let d = config.latent_dim;
    let centers: Vec<Vec<f64>> = (0..config.clusters).map(|_| rng.unit_vector(d)).collect();
    let (a_v, a_t) = if config.identity_mixing {
        (Mat64::identity(d), Mat64::identity(d))
    } else {
        let s = 1.0 / (d as f64).sqrt();
        (
            Mat64::random_normal(config.view_a_dim, d, s, rng),
            Mat64::random_normal(config.view_b_dim, d, s, rng),
        )
    };
    let mut items = Vec::with_capacity(config.n_items);
    for _ in 0..config.n_items {
        let cluster = rng.below(config.clusters);
        let latent = loop {
            let raw: Vec<f64> = centers[cluster]
                .iter()
                .map(|c| c + config.cluster_spread * rng.normal())
                .collect();
            if let Ok(z) = l2_normalize(&raw) {
                break z;
            }
        };
        let mut x_v = a_v.mul_vec(&latent)?;
        for v in &mut x_v {
            *v += config.noise * rng.normal();
        }
        let mut x_t = a_t.mul_vec(&latent)?;
        for v in &mut x_t {
            *v += config.noise * rng.normal();
        }
        items.push(Item {
            cluster,
            latent,
            x_v,
            x_t,
        });
    }
    Ok(LatentCorpus {
        latent_dim: d,
        view_a_dim: config.view_a_dim,
        view_b_dim: config.view_b_dim,
        clusters: config.clusters,
        items,
    })
}

impl LatentCorpus {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Ground-truth graded relevance `r(i, j) = (1 + cos(z_i, z_j)) / 2`.
    pub fn relevance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        let c = dot_unchecked(&self.items[i].latent, &self.items[j].latent);
        (0.5 * (1.0 + c)).clamp(0.0, 1.0)
    }

    /// First `n` items and the remainder, as two corpora over the same world.
    pub fn split(mut self, n: usize) -> (LatentCorpus, LatentCorpus) {
        let tail = self.items.split_off(n.min(self.items.len()));
        let rest = LatentCorpus {
            items: tail,
            ..self.clone_shape()
        };
        (self, rest)
    }

    fn clone_shape(&self) -> LatentCorpus {
        LatentCorpus {
            latent_dim: self.latent_dim,
            view_a_dim: self.view_a_dim,
            view_b_dim: self.view_b_dim,
            clusters: self.clusters,
            items: Vec::new(),
        }
    }

    /// Mean relevance over within-cluster and cross-cluster non-matching pairs.
    pub fn cluster_relevance_means(&self) -> (f64, f64) {
        let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let r = self.relevance(i, j);
                if self.items[i].cluster == self.items[j].cluster {
                    within += r;
                    nw += 1;
                } else {
                    cross += r;
                    nc += 1;
                }
            }
        }
        (within / nw.max(1) as f64, cross / nc.max(1) as f64)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{CORPUS_MAGIC} latent_dim={} view_a_dim={} view_b_dim={} clusters={}\n",
            self.latent_dim, self.view_a_dim, self.view_b_dim, self.clusters
        );
        for (id, item) in self.items.iter().enumerate() {
            write!(out, "{id},{}", item.cluster).unwrap();
            for v in item.latent.iter().chain(&item.x_v).chain(&item.x_t) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty corpus file".into()))?;
        let rest = header
            .strip_prefix(CORPUS_MAGIC)
            .ok_or_else(|| Error::Parse(format!("bad corpus header: {header}")))?;
        let mut dims = [None; 4];
        for kv in rest.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field: {kv}")))?;
            let v: usize = v
                .parse()
                .map_err(|_| Error::Parse(format!("bad header value: {kv}")))?;
            let slot = match k {
                "latent_dim" => 0,
                "view_a_dim" => 1,
                "view_b_dim" => 2,
                "clusters" => 3,
                _ => return Err(Error::Parse(format!("unknown header field: {k}"))),
            };
            dims[slot] = Some(v);
        }
        let [Some(ld), Some(ad), Some(bd), Some(clusters)] = dims else {
            return Err(Error::Parse("corpus header missing dims".into()));
        };
        let mut items = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 + ld + ad + bd {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 2,
                    2 + ld + ad + bd,
                    fields.len()
                )));
            }
            let id: usize = fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad id", lineno + 2)))?;
            if id != items.len() {
                return Err(Error::Parse(format!("line {}: ids must be sequential", lineno + 2)));
            }
            let cluster: usize = fields[1]
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad cluster", lineno + 2)))?;
            let nums = fields[2..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("line {}: bad number {f}", lineno + 2)))
                })
                .collect::<Result<Vec<f64>>>()?;
            items.push(Item {
                cluster,
                latent: nums[..ld].to_vec(),
                x_v: nums[ld..ld + ad].to_vec(),
                x_t: nums[ld + ad..].to_vec(),
            });
        }
        Ok(Self {
            latent_dim: ld,
            view_a_dim: ad,
            view_b_dim: bd,
            clusters,
            items,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
