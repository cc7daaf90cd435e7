//! Point-wise detection metrics and report emission.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::active::{LabelStore, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, prediction: u8, label: u8) {
        match (prediction != 0, label != 0) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionCounts> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: labels.len() });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        c.add(p, l);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Empty denominators give 0.
pub fn prf1(c: &ConfusionCounts) -> Prf1 {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Prf1 { precision, recall, f1: f1_score(precision, recall) }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Point-adjusted predictions: a hit anywhere inside a true anomaly segment marks the whole segment detected.
pub fn point_adjust(predictions: &[u8], labels: &[u8]) -> Result<Vec<u8>> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: labels.len() });
    }
    let mut out = predictions.to_vec();
    let mut start = 0;
    while start < labels.len() {
        if labels[start] == 0 {
            start += 1;
            continue;
        }
        let mut end = start;
        while end < labels.len() && labels[end] != 0 {
            end += 1;
        }
        if predictions[start..end].iter().any(|&p| p != 0) {
            out[start..end].fill(1);
        }
        start = end;
    }
    Ok(out)
}

/// Predictions for one series; `predictions[i]` is `None` before the first full window.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPrediction {
    pub id: String,
    /// Index of row 0 in the source series.
    pub origin: usize,
    pub values: Array2<f64>,
    pub truth: Vec<u8>,
    pub predictions: Vec<Option<u8>>,
}

impl SeriesPrediction {
    /// Decided `(prediction, truth)` pairs.
    pub fn decided(&self) -> (Vec<u8>, Vec<u8>) {
        self.predictions.iter().zip(&self.truth).filter_map(|(p, &l)| p.map(|p| (p, l))).unzip()
    }

    pub fn counts(&self) -> ConfusionCounts {
        let (p, l) = self.decided();
        confusion(&p, &l).expect("unzipped pairs have equal length")
    }

    /// CSV rows `t,value,truth,prediction`; `value` is the channel mean, `prediction` is empty when undecided.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        writeln!(w, "t,value,truth,prediction")?;
        for (i, row) in self.values.rows().into_iter().enumerate() {
            let value = row.mean().unwrap_or(0.0);
            let pred = self.predictions[i].map(|p| p.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", self.origin + i, value, self.truth[i], pred)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportOptions {
    pub point_adjust: bool,
    /// Extra flat entries merged into metrics.json.
    pub extra: BTreeMap<String, Value>,
}

fn provenance_key(p: Option<Provenance>) -> &'static str {
    match p {
        Some(Provenance::Human) => "human",
        Some(Provenance::GroundTruth) => "ground_truth",
        Some(Provenance::Propagated) => "propagated",
        None => "unlabeled",
    }
}

fn put_scores(m: &mut Map<String, Value>, prefix: &str, c: &ConfusionCounts) {
    let s = prf1(c);
    m.insert(format!("{prefix}tp"), json!(c.tp));
    m.insert(format!("{prefix}fp"), json!(c.fp));
    m.insert(format!("{prefix}tn"), json!(c.tn));
    m.insert(format!("{prefix}fn"), json!(c.fn_));
    m.insert(format!("{prefix}precision"), json!(s.precision));
    m.insert(format!("{prefix}recall"), json!(s.recall));
    m.insert(format!("{prefix}f1"), json!(s.f1));
}

/// Flat metrics for a set of series, with per-provenance breakdowns when a label store is given.
pub fn report_metrics(series: &[SeriesPrediction], store: Option<&LabelStore>, opts: &ReportOptions) -> Result<Map<String, Value>> {
    let mut total = ConfusionCounts::default();
    let mut adjusted = ConfusionCounts::default();
    let mut strata: BTreeMap<&'static str, ConfusionCounts> = BTreeMap::new();
    let mut rows = 0;
    let mut anomalies = 0;
    for s in series {
        if s.truth.len() != s.values.nrows() || s.predictions.len() != s.values.nrows() {
            return Err(Error::LengthMismatch { left: s.values.nrows(), right: s.predictions.len() });
        }
        rows += s.truth.len();
        anomalies += s.truth.iter().filter(|&&l| l != 0).count();
        total.merge(&s.counts());
        if opts.point_adjust {
            let (p, l) = s.decided();
            adjusted.merge(&confusion(&point_adjust(&p, &l)?, &l)?);
        }
        if let Some(store) = store {
            for (i, p) in s.predictions.iter().enumerate() {
                if let Some(p) = p {
                    let prov = store.get(&s.id, s.origin + i).map(|r| r.provenance);
                    strata.entry(provenance_key(prov)).or_default().add(*p, s.truth[i]);
                }
            }
        }
    }
    let mut m = Map::new();
    m.insert("n_series".into(), json!(series.len()));
    m.insert("n_rows".into(), json!(rows));
    m.insert("n_decided".into(), json!(total.total()));
    m.insert("anomaly_rate".into(), json!(if rows == 0 { 0.0 } else { anomalies as f64 / rows as f64 }));
    put_scores(&mut m, "", &total);
    if opts.point_adjust {
        put_scores(&mut m, "pa_", &adjusted);
    }
    for (key, c) in &strata {
        m.insert(format!("{key}_n"), json!(c.total()));
        let s = prf1(c);
        m.insert(format!("{key}_precision"), json!(s.precision));
        m.insert(format!("{key}_recall"), json!(s.recall));
        m.insert(format!("{key}_f1"), json!(s.f1));
    }
    for (k, v) in &opts.extra {
        m.insert(k.clone(), v.clone());
    }
    Ok(m)
}

/// Writes `metrics.json` and `predictions/<series>.csv` under `dir`; returns the metrics.
pub fn emit_report(dir: &Path, series: &[SeriesPrediction], store: Option<&LabelStore>, opts: &ReportOptions) -> Result<Map<String, Value>> {
    let mut m = report_metrics(series, store, opts)?;
    m.insert("timestamp".into(), json!(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)));
    let pred_dir = dir.join("predictions");
    fs::create_dir_all(&pred_dir)?;
    for s in series {
        s.write_csv(&pred_dir.join(format!("{}.csv", sanitize(&s.id))))?;
    }
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    fs::write(dir.join("metrics.json"), text)?;
    Ok(m)
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}
