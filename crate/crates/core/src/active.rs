//! Margin-based query selection, labeling oracles and Gaussian-kernel label propagation.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Propagated,
    GroundTruth,
    Human,
}

impl Provenance {
    /// Write precedence: human > ground truth > propagated.
    fn rank(self) -> u8 {
        match self {
            Provenance::Propagated => 0,
            Provenance::GroundTruth => 1,
            Provenance::Human => 2,
        }
    }
}

/// One persisted label, also the JSON-lines row format of the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub series: String,
    pub t: usize,
    pub label: u8,
    pub provenance: Provenance,
    pub confidence: f64,
    pub timestamp: String,
}

impl LabelRecord {
    pub fn new(series: impl Into<String>, t: usize, label: u8, provenance: Provenance, confidence: f64) -> Self {
        Self {
            series: series.into(),
            t,
            label,
            provenance,
            confidence,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        }
    }
}

/// Labels keyed by `(series, t)`, safe to share between the trainer and the annotation service.
#[derive(Debug, Default)]
pub struct LabelStore {
    entries: RwLock<BTreeMap<(String, usize), LabelRecord>>,
}

impl LabelStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts unless an entry of higher provenance exists. Returns whether the write landed.
    pub fn insert(&self, mut rec: LabelRecord) -> Result<bool> {
        if rec.label > 1 {
            return Err(Error::InvalidArgs(format!("label {} is not 0 or 1", rec.label)));
        }
        rec.confidence = match rec.provenance {
            Provenance::Propagated => rec.confidence.clamp(0.0, 1.0 - f64::EPSILON),
            _ => 1.0,
        };
        let mut map = self.entries.write();
        let key = (rec.series.clone(), rec.t);
        if let Some(existing) = map.get(&key) {
            if existing.provenance.rank() > rec.provenance.rank() {
                return Ok(false);
            }
        }
        map.insert(key, rec);
        Ok(true)
    }

    pub fn get(&self, series: &str, t: usize) -> Option<LabelRecord> {
        self.entries.read().get(&(series.to_string(), t)).cloned()
    }

    /// True for human or ground-truth labels.
    pub fn is_confirmed(&self, series: &str, t: usize) -> bool {
        self.get(series, t).is_some_and(|r| r.provenance != Provenance::Propagated)
    }

    pub fn contains(&self, series: &str, t: usize) -> bool {
        self.entries.read().contains_key(&(series.to_string(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-row labels for rows `origin..origin + len` of a series, indexed from 0.
    pub fn view(&self, series: &str, origin: usize, len: usize) -> Vec<Option<u8>> {
        let mut out = vec![None; len];
        let map = self.entries.read();
        for ((_, t), rec) in map.range((series.to_string(), origin)..(series.to_string(), origin + len)) {
            out[t - origin] = Some(rec.label);
        }
        out
    }

    pub fn records_for(&self, series: &str) -> Vec<LabelRecord> {
        let map = self.entries.read();
        map.range((series.to_string(), 0)..=(series.to_string(), usize::MAX)).map(|(_, r)| r.clone()).collect()
    }

    pub fn records(&self) -> Vec<LabelRecord> {
        self.entries.read().values().cloned().collect()
    }

    pub fn counts(&self) -> HashMap<Provenance, usize> {
        let mut out = HashMap::new();
        for r in self.entries.read().values() {
            *out.entry(r.provenance).or_insert(0) += 1;
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for rec in self.entries.read().values() {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let store = Self::new();
        for line in BufReader::new(fs::File::open(path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                store.insert(serde_json::from_str(&line)?)?;
            }
        }
        Ok(store)
    }
}

pub fn margin(q0: f64, q1: f64) -> f64 {
    (q0 - q1).abs()
}

/// A visited state eligible for annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub series: String,
    pub t: usize,
    pub q0: f64,
    pub q1: f64,
    pub window: Array2<f64>,
}

/// Wire shape of one pending query (`GET /api/queries`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub series: String,
    pub t: usize,
    pub margin: f64,
    pub window: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryBatch {
    pub queries: Vec<Query>,
    pub budget: usize,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// The `n_al` smallest-margin candidates without a confirmed label, ties by `(series, t)`.
pub fn select_queries(candidates: &[Candidate], n_al: usize, labeled: &LabelStore) -> QueryBatch {
    let mut pool: Vec<(f64, &Candidate)> = candidates
        .iter()
        .filter(|c| !labeled.is_confirmed(&c.series, c.t))
        .map(|c| (margin(c.q0, c.q1), c))
        .collect();
    pool.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.series.cmp(&b.1.series)).then(a.1.t.cmp(&b.1.t)));
    let queries = pool
        .into_iter()
        .take(n_al)
        .map(|(m, c)| Query {
            series: c.series.clone(),
            t: c.t,
            margin: m,
            window: c.window.rows().into_iter().map(|r| r.to_vec()).collect(),
        })
        .collect();
    QueryBatch { queries, budget: n_al }
}

pub fn kernel_weight(x_i: &[f64], x_j: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidSigma(sigma));
    }
    if x_i.len() != x_j.len() {
        return Err(Error::LengthMismatch { left: x_i.len(), right: x_j.len() });
    }
    let d2: f64 = x_i.iter().zip(x_j).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((-d2 / (2.0 * sigma * sigma)).exp())
}

/// Dense Gaussian kernel matrix (unit diagonal).
pub fn kernel_matrix<X: AsRef<[f64]>>(points: &[X], sigma: f64) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    let mut k = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let w = kernel_weight(points[i].as_ref(), points[j].as_ref(), sigma)?;
            k[i][j] = w;
            k[j][i] = w;
        }
    }
    Ok(k)
}

/// Median Euclidean distance over all distinct pairs; 1.0 if fewer than two points or all coincide.
pub fn median_pairwise_distance<X: AsRef<[f64]>>(points: &[X]) -> f64 {
    let mut d = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let s: f64 = points[i].as_ref().iter().zip(points[j].as_ref()).map(|(a, b)| (a - b).powi(2)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d[d.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    pub sigma: f64,
    pub iters: usize,
    pub k_lp: usize,
    pub theta: f64,
    /// Stop early once no probability moves by more than this.
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    /// Index into the unlabeled slice.
    pub index: usize,
    pub label: u8,
    pub confidence: f64,
}

/// Class probabilities for every unlabeled point after clamped iterative propagation.
///
/// Each sweep replaces every row by the kernel-weighted average of the other rows
/// (no self-loops), then resets labeled rows to their one-hot labels. Unlabeled rows
/// start uniform. Returns `None` without a seed of each class.
pub fn propagation_probabilities<X: AsRef<[f64]>, Y: AsRef<[f64]>>(
    labeled: &[(X, u8)],
    unlabeled: &[Y],
    sigma: f64,
    iters: usize,
    tol: f64,
) -> Result<Option<Vec<[f64; 2]>>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidSigma(sigma));
    }
    let has = |c: u8| labeled.iter().any(|(_, l)| *l == c);
    if !has(0) || !has(1) || unlabeled.is_empty() {
        return Ok(None);
    }
    let points: Vec<&[f64]> =
        labeled.iter().map(|(x, _)| x.as_ref()).chain(unlabeled.iter().map(|x| x.as_ref())).collect();
    let n_l = labeled.len();
    let n = points.len();
    let mut w = kernel_matrix(&points, sigma)?;
    for (i, row) in w.iter_mut().enumerate() {
        row[i] = 0.0;
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    let mut f: Vec<[f64; 2]> = (0..n)
        .map(|i| if i < n_l { one_hot(labeled[i].1) } else { [0.5, 0.5] })
        .collect();
    let mut next = f.clone();
    for _ in 0..iters {
        let mut delta: f64 = 0.0;
        for i in n_l..n {
            let row = &w[i];
            if row.iter().all(|&v| v == 0.0) {
                next[i] = f[i];
                continue;
            }
            let mut acc = [0.0; 2];
            for (j, &wij) in row.iter().enumerate() {
                acc[0] += wij * f[j][0];
                acc[1] += wij * f[j][1];
            }
            delta = delta.max((acc[0] - f[i][0]).abs()).max((acc[1] - f[i][1]).abs());
            next[i] = acc;
        }
        next[..n_l].copy_from_slice(&f[..n_l]);
        std::mem::swap(&mut f, &mut next);
        if delta <= tol {
            break;
        }
    }
    Ok(Some(f[n_l..].to_vec()))
}

fn one_hot(label: u8) -> [f64; 2] {
    if label == 1 {
        [0.0, 1.0]
    } else {
        [1.0, 0.0]
    }
}

/// The `k_lp` most confident unlabeled points with confidence at least `theta`,
/// ties by index.
pub fn propagate<X: AsRef<[f64]>, Y: AsRef<[f64]>>(
    labeled: &[(X, u8)],
    unlabeled: &[Y],
    params: &PropagationParams,
) -> Result<Vec<PseudoLabel>> {
    if params.k_lp == 0 {
        return Ok(Vec::new());
    }
    let Some(probs) = propagation_probabilities(labeled, unlabeled, params.sigma, params.iters, params.tol)? else {
        return Ok(Vec::new());
    };
    let mut picks: Vec<PseudoLabel> = probs
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let total = p[0] + p[1];
            let (p0, p1) = if total > 0.0 { (p[0] / total, p[1] / total) } else { (0.5, 0.5) };
            let (label, confidence) = if p1 > p0 { (1, p1) } else { (0, p0) };
            PseudoLabel { index, label, confidence }
        })
        .filter(|p| p.confidence >= params.theta)
        .collect();
    picks.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.index.cmp(&b.index)));
    picks.truncate(params.k_lp);
    Ok(picks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Label(u8),
    Skip(SkipMarker),
}

/// Serializes as the string `"skip"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMarker {
    Skip,
}

impl Answer {
    pub const SKIP: Answer = Answer::Skip(SkipMarker::Skip);
}

/// Answers gathered for a batch; `pending` counts queries still awaiting a decision.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReply {
    pub answers: Vec<(String, usize, Answer)>,
    pub pending: usize,
}

pub trait LabelOracle {
    fn provenance(&self) -> Provenance;
    fn answer(&self, batch: &QueryBatch) -> Result<OracleReply>;
}

/// Simulated annotator that reveals the true labels.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthOracle {
    labels: HashMap<String, Vec<u8>>,
}

impl GroundTruthOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_series(mut self, id: impl Into<String>, labels: Vec<u8>) -> Self {
        self.labels.insert(id.into(), labels);
        self
    }
}

impl LabelOracle for GroundTruthOracle {
    fn provenance(&self) -> Provenance {
        Provenance::GroundTruth
    }

    fn answer(&self, batch: &QueryBatch) -> Result<OracleReply> {
        let answers = batch
            .queries
            .iter()
            .map(|q| {
                let label = self
                    .labels
                    .get(&q.series)
                    .and_then(|l| l.get(q.t))
                    .ok_or_else(|| Error::InvalidArgs(format!("no ground truth for {}@{}", q.series, q.t)))?;
                Ok((q.series.clone(), q.t, Answer::Label(*label)))
            })
            .collect::<Result<_>>()?;
        Ok(OracleReply { answers, pending: 0 })
    }
}

/// Asks `oracle` about `batch` and writes the answered labels into `store`.
/// Returns the records that landed; skipped queries stay unlabeled.
/// What one oracle round produced.
#[derive(Debug, Clone, Default)]
pub struct OracleOutcome {
    pub labels: Vec<LabelRecord>,
    pub skipped: usize,
    pub pending: usize,
}

pub fn apply_oracle(batch: &QueryBatch, oracle: &dyn LabelOracle, store: &LabelStore) -> Result<OracleOutcome> {
    let reply = oracle.answer(batch)?;
    let provenance = oracle.provenance();
    let mut out = OracleOutcome { pending: reply.pending, ..OracleOutcome::default() };
    for (series, t, answer) in reply.answers {
        match answer {
            Answer::Label(label) => {
                let rec = LabelRecord::new(series, t, label, provenance, 1.0);
                if store.insert(rec.clone())? {
                    out.labels.push(rec);
                }
            }
            Answer::Skip(_) => out.skipped += 1,
        }
    }
    if reply.pending > 0 {
        log::warn!("{}", Error::OracleTimeout { pending: reply.pending });
    }
    Ok(out)
}
