use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::dot_unchecked;
use crate::synthworld::corpus::LatentCorpus;
use crate::synthworld::model::{StudentModel, Tower};
use crate::synthworld::teacher::TeacherSim;
use crate::synthworld::Direction;

pub const BANK_MAGIC: &str = "rdl-bank v1";

/// Offline teacher scores for each query's top-N student-mined negatives.
/// Per-query entries are kept sorted by candidate id.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBank {
    n: usize,
    entries: Vec<Vec<(usize, f64)>>,
}

impl SimilarityBank {
    pub fn from_entries(n: usize, mut entries: Vec<Vec<(usize, f64)>>) -> Self {
        for list in &mut entries {
            list.sort_by_key(|e| e.0);
        }
        Self { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_queries(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self, query: usize) -> &[(usize, f64)] {
        self.entries.get(query).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn lookup(&self, query: usize, candidate: usize) -> Option<f64> {
        let list = self.entries.get(query)?;
        list.binary_search_by_key(&candidate, |e| e.0)
            .ok()
            .map(|k| list[k].1)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{BANK_MAGIC} N={}\n", self.n);
        for (q, list) in self.entries.iter().enumerate() {
            for (c, s) in list {
                writeln!(out, "{q},{c},{s:.16e}").unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty bank file".into()))?;
        let n = header
            .strip_prefix(BANK_MAGIC)
            .and_then(|rest| rest.trim().strip_prefix("N="))
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| Error::Parse(format!("bad bank header: {header}")))?;
        let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Parse(format!("bank line {}: {line}", lineno + 2));
            let mut f = line.split(',');
            let q: usize = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let c: usize = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let s: f64 = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            if f.next().is_some() {
                return Err(bad());
            }
            if entries.len() <= q {
                entries.resize_with(q + 1, Vec::new);
            }
            entries[q].push((c, s));
        }
        Ok(Self::from_entries(n, entries))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Result of [`build_similarity_bank`]; `clamped` is set when the requested N
/// exceeded `n_items − 1`.
#[derive(Debug, Clone)]
pub struct BankBuild {
    pub bank: SimilarityBank,
    pub clamped: bool,
}

/// Retrieve each query's top-N negatives with the student (exhaustive scan,
/// ties by ascending id) and score them with the teacher.
pub fn build_similarity_bank(
    model: &StudentModel,
    teacher: &TeacherSim,
    corpus: &LatentCorpus,
    n: usize,
    direction: Direction,
) -> Result<BankBuild> {
    let items = corpus.len();
    if items < 2 {
        return Err(Error::InvalidInput("bank needs at least two items".into()));
    }
    let clamped = n > items - 1;
    let n = n.min(items - 1);
    let (query_tower, cand_tower) = match direction {
        Direction::ImageToText => (Tower::Image, Tower::Text),
        Direction::TextToImage => (Tower::Text, Tower::Image),
    };
    let queries = model.encode_corpus(query_tower, corpus)?;
    let cands = model.encode_corpus(cand_tower, corpus)?;
    let mut entries = Vec::with_capacity(items);
    for (q, qf) in queries.iter().enumerate() {
        let mut scored: Vec<(usize, f64)> = cands
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != q)
            .map(|(c, cf)| (c, dot_unchecked(qf, cf)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(n);
        let list = scored
            .into_iter()
            .map(|(c, _)| {
                let (img, txt) = direction.image_text(q, c);
                (c, teacher.score(corpus, img, txt))
            })
            .collect();
        entries.push(list);
    }
    Ok(BankBuild {
        bank: SimilarityBank::from_entries(n, entries),
        clamped,
    })
}
