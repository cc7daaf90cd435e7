//! Time-series ingestion, normalization, temporal splitting and sliding windows.
//!
//! Two on-disk layouts are supported: the three-column `timestamp,value,is_anomaly`
//! CSV used by univariate web-traffic benchmarks, and a plain numeric matrix (one row
//! per timestep, comma or whitespace delimited) paired with a one-label-per-line file.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sliding window length.
pub const DEFAULT_N_STEPS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One time series with per-step binary labels.
///
/// `origin` is the index of row 0 within the series this one was cut from; it is 0
/// for freshly loaded data and non-zero for the test half of a temporal split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub id: String,
    pub values: Array2<f64>,
    pub labels: Vec<u8>,
    pub split: Split,
    pub origin: usize,
}

impl Series {
    pub fn new(id: impl Into<String>, values: Array2<f64>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::ShapeMismatch("series needs at least one dimension".into()));
        }
        if labels.len() != values.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} value rows but {} labels",
                values.nrows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidArgs(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self { id: id.into(), values, labels, split, origin: 0 })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }

    /// Indices at which a full window exists and a decision is made.
    pub fn decided_indices(&self, n_steps: usize) -> std::ops::Range<usize> {
        n_steps.saturating_sub(1)..self.len()
    }

    pub fn window(&self, t: usize, n_steps: usize) -> Result<ArrayView2<'_, f64>> {
        window_at(self, t, n_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_series: usize,
    pub dims: usize,
    pub anomaly_rate: f64,
}

impl DatasetStats {
    pub fn of(series: &[Series]) -> Self {
        let total: usize = series.iter().map(Series::len).sum();
        let anomalies: usize = series.iter().map(|s| s.labels.iter().map(|&l| l as usize).sum::<usize>()).sum();
        Self {
            n_series: series.len(),
            dims: series.iter().map(Series::dims).max().unwrap_or(0),
            anomaly_rate: if total == 0 { 0.0 } else { anomalies as f64 / total as f64 },
        }
    }
}

fn read_existing(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

fn series_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "series".into())
}

fn parse_label(raw: &str) -> Option<u8> {
    let v: f64 = raw.trim().parse().ok()?;
    if v == 0.0 {
        Some(0)
    } else if v == 1.0 {
        Some(1)
    } else {
        None
    }
}

/// Loads a `timestamp,value,is_anomaly` CSV. A non-numeric first row is treated as a header.
pub fn load_csv_univariate(path: &Path, n_steps: usize) -> Result<Series> {
    let text = read_existing(path)?;
    let malformed = |line: usize, reason: &str| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason: reason.to_string(),
    };

    let mut rows: Vec<(f64, f64, u8)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(malformed(line_no, "expected 3 fields"));
        }
        let ts = fields[0].parse::<f64>();
        let value = fields[1].parse::<f64>();
        if rows.is_empty() && line_no == first_content_line(&text) && ts.is_err() && value.is_err() {
            continue; // header
        }
        let ts = ts.map_err(|_| malformed(line_no, "unparseable timestamp"))?;
        let value = value.map_err(|_| malformed(line_no, "unparseable value"))?;
        if !value.is_finite() {
            return Err(malformed(line_no, "non-finite value"));
        }
        let label = parse_label(fields[2]).ok_or_else(|| malformed(line_no, "label must be 0 or 1"))?;
        rows.push((ts, value, label));
    }
    if rows.len() < n_steps.max(1) {
        return Err(Error::EmptySeries { len: rows.len(), n_steps });
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));

    let values = Array2::from_shape_vec((rows.len(), 1), rows.iter().map(|r| r.1).collect())
        .expect("row count matches");
    let labels = rows.iter().map(|r| r.2).collect();
    Series::new(series_id(path), values, labels, Split::Train)
}

fn first_content_line(text: &str) -> usize {
    text.lines().position(|l| !l.trim().is_empty()).map_or(0, |p| p + 1)
}

fn split_fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty())
}

/// Loads a numeric matrix (rows = timesteps) and its label vector.
pub fn load_matrix_multivariate(data_path: &Path, label_path: &Path) -> Result<Series> {
    let data = read_existing(data_path)?;
    let label_text = read_existing(label_path)?;

    let mut flat = Vec::new();
    let mut n_cols = None;
    let mut n_rows = 0;
    for (i, raw) in data.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = split_fields(raw)
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::MalformedRow {
                path: data_path.to_path_buf(),
                line: i + 1,
                reason: "unparseable number".into(),
            })?;
        match n_cols {
            None => n_cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::MalformedRow {
                    path: data_path.to_path_buf(),
                    line: i + 1,
                    reason: format!("expected {c} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        flat.extend(row);
        n_rows += 1;
    }

    let mut labels = Vec::new();
    for (i, raw) in label_text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        labels.push(parse_label(raw).ok_or_else(|| Error::MalformedRow {
            path: label_path.to_path_buf(),
            line: i + 1,
            reason: "label must be 0 or 1".into(),
        })?);
    }
    if labels.len() != n_rows {
        return Err(Error::ShapeMismatch(format!("{n_rows} data rows but {} labels", labels.len())));
    }
    let n_cols = n_cols.ok_or(Error::EmptySeries { len: 0, n_steps: 1 })?;
    let values = Array2::from_shape_vec((n_rows, n_cols), flat).expect("rectangular by construction");
    Series::new(series_id(data_path), values, labels, Split::Train)
}

fn sorted_files(dir: &Path, ext: Option<&str>) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| ext.is_none_or(|x| p.extension().is_some_and(|e| e == x)))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every `*.csv` in a directory as a univariate series, in file-name order.
pub fn load_csv_dir(dir: &Path, n_steps: usize) -> Result<Vec<Series>> {
    sorted_files(dir, Some("csv"))?.iter().map(|p| load_csv_univariate(p, n_steps)).collect()
}

/// Pairs each file in `data_dir` with the same-named file in `label_dir`.
pub fn load_matrix_dir(data_dir: &Path, label_dir: &Path) -> Result<Vec<Series>> {
    sorted_files(data_dir, None)?
        .iter()
        .map(|p| {
            let name = p.file_name().expect("listed file has a name");
            load_matrix_multivariate(p, &label_dir.join(name))
        })
        .collect()
}

/// Per-dimension z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Population mean/std per column.
    pub fn fit(values: ArrayView2<'_, f64>) -> Self {
        let n = values.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(values.ncols());
        let mut std = Vec::with_capacity(values.ncols());
        for col in values.axis_iter(Axis(1)) {
            let m = col.sum() / n;
            let var = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        Self { mean, std }
    }

    fn is_constant(&self, j: usize) -> bool {
        self.std[j] <= 1e-12 * self.mean[j].abs().max(1.0)
    }

    pub fn apply(&self, series: &Series) -> Series {
        let mut out = series.clone();
        for (j, mut col) in out.values.axis_iter_mut(Axis(1)).enumerate() {
            if self.is_constant(j) {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|x| (x - self.mean[j]) / self.std[j]);
            }
        }
        out
    }
}

/// Z-scores a series against its own statistics. Constant dimensions become zeros.
pub fn normalize(series: &Series) -> Result<Series> {
    if series.len() < 2 {
        return Err(Error::InvalidArgs("normalize needs at least 2 rows".into()));
    }
    Ok(Normalizer::fit(series.values.view()).apply(series))
}

/// Splits a series in time. The test half keeps the last `n_steps - 1` training rows as
/// warm-up context so its first decided index is the first test timestep.
pub fn temporal_split(series: &Series, train_fraction: f64, n_steps: usize) -> Result<(Series, Series)> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(Error::InvalidArgs(format!("train fraction {train_fraction} not in (0,1)")));
    }
    let total = series.len();
    let cut = (total as f64 * train_fraction).round() as usize;
    if cut < n_steps || total - cut == 0 {
        return Err(Error::EmptySeries { len: cut.min(total - cut), n_steps });
    }
    let ctx = cut + 1 - n_steps;
    let train = Series {
        id: series.id.clone(),
        values: series.values.slice(s![..cut, ..]).to_owned(),
        labels: series.labels[..cut].to_vec(),
        split: Split::Train,
        origin: series.origin,
    };
    let test = Series {
        id: series.id.clone(),
        values: series.values.slice(s![ctx.., ..]).to_owned(),
        labels: series.labels[ctx..].to_vec(),
        split: Split::Test,
        origin: series.origin + ctx,
    };
    Ok((train, test))
}

/// Splits, then z-scores both halves with statistics fit on the training half only.
pub fn prepare(series: &Series, train_fraction: f64, n_steps: usize) -> Result<(Series, Series)> {
    let (train, test) = temporal_split(series, train_fraction, n_steps)?;
    let norm = Normalizer::fit(train.values.view());
    Ok((norm.apply(&train), norm.apply(&test)))
}

/// Parameters of the synthetic spike generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub t: usize,
    pub dims: usize,
    pub n_anomalies: usize,
    pub seed: u64,
    pub n_steps: usize,
    pub period: f64,
    pub noise_std: f64,
    /// Minimum spike size in base-signal standard deviations.
    pub min_sigma: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            t: 2000,
            dims: 1,
            n_anomalies: 20,
            seed: 7,
            n_steps: DEFAULT_N_STEPS,
            period: 40.0,
            noise_std: 0.1,
            min_sigma: 6.0,
        }
    }
}

/// Output of the generator, including the noise-free base signal for verification.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub series: Series,
    pub base: Array2<f64>,
    pub positions: Vec<usize>,
}

impl SynthSpec {
    pub fn generate(&self) -> Result<SynthOutput> {
        if self.dims == 0 || self.t < self.n_steps + self.n_anomalies || self.n_steps == 0 {
            return Err(Error::InvalidArgs(format!(
                "need T >= n_steps + n_anomalies and d >= 1 (T={}, n_steps={}, n={}, d={})",
                self.t, self.n_steps, self.n_anomalies, self.dims
            )));
        }
        if !(self.period > 0.0 && self.noise_std >= 0.0 && self.min_sigma >= 0.0) {
            return Err(Error::InvalidArgs("period must be positive and noise non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| Error::InvalidArgs(e.to_string()))?;

        let phases: Vec<f64> = (0..self.dims).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let mut base = Array2::<f64>::zeros((self.t, self.dims));
        for ((i, j), v) in base.indexed_iter_mut() {
            let angle = std::f64::consts::TAU * i as f64 / self.period + phases[j];
            *v = angle.sin() + noise.sample(&mut rng);
        }

        let first = self.n_steps - 1;
        let mut positions: Vec<usize> = sample(&mut rng, self.t - first, self.n_anomalies)
            .into_iter()
            .map(|p| p + first)
            .collect();
        positions.sort_unstable();

        let stats = Normalizer::fit(base.view());
        let mut values = base.clone();
        let mut labels = vec![0u8; self.t];
        for &p in &positions {
            labels[p] = 1;
            for j in 0..self.dims {
                let sigma = stats.std[j];
                let offset = (base[[p, j]] - stats.mean[j]).abs();
                let magnitude = self.min_sigma * sigma + offset + rng.random_range(0.0..2.0) * sigma;
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                values[[p, j]] += sign * magnitude;
            }
        }

        let series = Series::new(format!("synth-{}", self.seed), values, labels, Split::Train)?;
        Ok(SynthOutput { series, base, positions })
    }
}

/// Sine-plus-noise series with additive spikes of at least six base standard deviations.
pub fn synth_spike_series(t: usize, d: usize, n_anomalies: usize, seed: u64) -> Result<Series> {
    SynthSpec { t, dims: d, n_anomalies, seed, ..SynthSpec::default() }.generate().map(|o| o.series)
}

/// Rows `t - n_steps + 1 ..= t` of the series.
pub fn window_at(series: &Series, t: usize, n_steps: usize) -> Result<ArrayView2<'_, f64>> {
    if n_steps == 0 || t + 1 < n_steps || t >= series.len() {
        return Err(Error::OutOfRange { t, lo: n_steps.saturating_sub(1), hi: series.len() });
    }
    Ok(series.values.slice(s![t + 1 - n_steps..=t, ..]))
}
