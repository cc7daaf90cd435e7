//! End-to-end training and evaluation runs.
//!
//! A run directory holds `config.json`, `vae.ckpt`, `qnet.ckpt`, `run.log.jsonl`,
//! `labels.jsonl`, `metrics.json` and `predictions/`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::active::{
    apply_oracle, median_pairwise_distance, propagate, select_queries, Candidate, GroundTruthOracle, LabelOracle,
    LabelRecord, LabelStore, Provenance,
};
use crate::agent::{q_values, DqnAgent, EpisodeReport, QNet, QNetArch};
use crate::checkpoint;
use crate::config::{FeatureSpace, OracleSection, PotentialSection, RunConfig, SigmaMode};
use crate::data::{temporal_split, Normalizer, Series};
use crate::env::{max_episode_r1, Action};
use crate::error::{Error, Result};
use crate::eval::{emit_report, ReportOptions, SeriesPrediction};
use crate::potential::{HeuristicPotential, LlmPotential, PotentialProvider, SeverityScore, ZeroPotential};
use crate::service::{self, AnnotationHub, Progress, SeriesView, ServiceOracle};
use crate::vae::{flatten, train_vae, LambdaController, TrainingCurve, VaeArch, VaeModel};

/// Normalized series: full length, train part and test part (test keeps warm-up context).
#[derive(Debug, Clone)]
pub struct Prepared {
    pub full: Vec<Series>,
    pub train: Vec<Series>,
    pub test: Vec<Series>,
}

pub fn prepare_dataset(cfg: &RunConfig) -> Result<Prepared> {
    let raw = cfg.dataset.load(cfg.n_steps)?;
    if raw.is_empty() {
        return Err(Error::Config("dataset contains no series".into()));
    }
    let mut out = Prepared { full: Vec::new(), train: Vec::new(), test: Vec::new() };
    for s in &raw {
        if s.dims() != raw[0].dims() {
            return Err(Error::ShapeMismatch(format!("series {} has {} dims, expected {}", s.id, s.dims(), raw[0].dims())));
        }
        let (train, test) = temporal_split(s, cfg.train_fraction, cfg.n_steps)?;
        let norm = Normalizer::fit(train.values.view());
        out.full.push(norm.apply(s));
        out.train.push(norm.apply(&train));
        out.test.push(norm.apply(&test));
    }
    Ok(out)
}

/// The configured potential, kept concrete so the LLM cache can be persisted.
#[derive(Debug)]
pub enum Potential {
    Heuristic(HeuristicPotential),
    Llm(Box<LlmPotential>),
    Zero(ZeroPotential),
}

impl Potential {
    pub fn from_config(section: &PotentialSection) -> Result<Self> {
        Ok(match section {
            PotentialSection::Heuristic { z_cap, scale_floor } => {
                Potential::Heuristic(HeuristicPotential { z_cap: *z_cap, scale_floor: *scale_floor })
            }
            PotentialSection::Llm(c) => Potential::Llm(Box::new(LlmPotential::new(c.clone())?)),
            PotentialSection::Zero => Potential::Zero(ZeroPotential),
        })
    }

    pub fn persist(&self) -> Result<()> {
        match self {
            Potential::Llm(p) => p.persist(),
            _ => Ok(()),
        }
    }
}

impl PotentialProvider for Potential {
    fn potential(&self, window: ArrayView2<'_, f64>) -> SeverityScore {
        match self {
            Potential::Heuristic(p) => p.potential(window),
            Potential::Llm(p) => p.potential(window),
            Potential::Zero(p) => p.potential(window),
        }
    }

    fn concurrency(&self) -> usize {
        match self {
            Potential::Heuristic(p) => p.concurrency(),
            Potential::Llm(p) => p.concurrency(),
            Potential::Zero(p) => p.concurrency(),
        }
    }
}

/// Windows of `series` at decided indices whose rows are all labeled normal.
pub fn normal_windows(series: &Series, n_steps: usize) -> Result<Vec<Vec<f64>>> {
    series
        .decided_indices(n_steps)
        .filter(|&t| series.labels[t + 1 - n_steps..=t].iter().all(|&l| l == 0))
        .map(|t| series.window(t, n_steps).map(flatten))
        .collect()
}

/// One JSON line of `run.log.jsonl`.
#[derive(Debug, Clone, Serialize)]
pub struct EpisodeLog {
    #[serde(flatten)]
    pub report: EpisodeReport,
    pub queried: usize,
    pub oracle_labels: usize,
    pub skipped: usize,
    pub pending: usize,
    pub propagated: usize,
    pub labels_total: usize,
}

/// Training state between episodes.
pub struct Trainer {
    pub cfg: RunConfig,
    pub data: Prepared,
    pub vae: Option<VaeModel>,
    pub vae_curve: Option<TrainingCurve>,
    pub agent: DqnAgent,
    pub controller: LambdaController,
    pub store: Arc<LabelStore>,
    pub potential: Potential,
    /// Propagation features per train series, one per decided index.
    features: Vec<Vec<Vec<f64>>>,
    sigmas: Vec<f64>,
    episode: usize,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        Self::with_store(cfg, Arc::new(LabelStore::new()))
    }

    pub fn with_store(cfg: RunConfig, store: Arc<LabelStore>) -> Result<Self> {
        cfg.validate()?;
        let data = prepare_dataset(&cfg)?;
        let n = cfg.n_steps;
        let dims = data.train[0].dims();

        let (vae, vae_curve) = if cfg.vae.enabled {
            let arch = VaeArch { input: n * dims, hidden: cfg.vae.hidden.clone(), latent: cfg.vae.latent };
            let mut model = VaeModel::new(arch, cfg.seed ^ 0x7ae)?;
            let mut windows = Vec::new();
            for s in &data.train {
                windows.extend(normal_windows(s, n)?);
            }
            let train_cfg = crate::vae::VaeTrainConfig { seed: cfg.vae.train.seed ^ cfg.seed, ..cfg.vae.train.clone() };
            let curve = train_vae(&mut model, &windows, &train_cfg)?;
            log::info!(
                "vae trained on {} windows, loss {:.4} -> {:.4}",
                windows.len(),
                curve.epoch_losses.first().copied().unwrap_or(f64::NAN),
                curve.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
            (Some(model), Some(curve))
        } else {
            (None, None)
        };

        let mut features = Vec::with_capacity(data.train.len());
        let mut sigmas = Vec::with_capacity(data.train.len());
        for s in &data.train {
            let f: Vec<Vec<f64>> = s
                .decided_indices(n)
                .map(|t| {
                    let w = flatten(s.window(t, n)?);
                    match (cfg.active.feature, &vae) {
                        (FeatureSpace::Latent, Some(m)) => m.encode_mean(&w),
                        (FeatureSpace::Residual, Some(m)) => {
                            Ok(w.iter().zip(m.reconstruct(&w)?).map(|(x, r)| x - r).collect())
                        }
                        _ => Ok(w),
                    }
                })
                .collect::<Result<_>>()?;
            sigmas.push(match cfg.active.sigma {
                SigmaMode::Fixed(v) => v,
                SigmaMode::Named(_) => median_pairwise_distance(&f),
            });
            features.push(f);
        }

        if cfg.active.seed_labels > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
            for s in &data.train {
                let decided = s.decided_indices(n);
                let k = cfg.active.seed_labels.min(decided.len());
                for i in sample(&mut rng, decided.len(), k).into_vec() {
                    let t = decided.start + i;
                    store.insert(LabelRecord::new(&s.id, s.origin + t, s.labels[t], Provenance::GroundTruth, 1.0))?;
                }
            }
        }

        let c = &cfg.controller;
        let controller = LambdaController::new(c.lambda0, c.alpha, 0.0, c.lambda_min, c.lambda_max)?;
        let agent = DqnAgent::new(dims, cfg.agent.clone(), cfg.seed)?;
        let potential = Potential::from_config(&cfg.potential)?;
        Ok(Self { cfg, data, vae, vae_curve, agent, controller, store, potential, features, sigmas, episode: 0 })
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn ground_truth_oracle(&self) -> GroundTruthOracle {
        self.data.full.iter().fold(GroundTruthOracle::new(), |o, s| o.with_series(&s.id, s.labels.clone()))
    }

    pub fn series_views(&self) -> Vec<SeriesView> {
        self.data.full.iter().map(|s| SeriesView { id: s.id.clone(), values: s.values.clone() }).collect()
    }

    /// One episode on the next train series, then a round of querying and propagation.
    pub fn run_episode(&mut self, oracle: &dyn LabelOracle) -> Result<EpisodeLog> {
        let n = self.cfg.n_steps;
        let si = self.episode % self.data.train.len();
        let series = &self.data.train[si];
        let labels = self.store.view(&series.id, series.origin, series.len());
        self.controller.r_target = self.cfg.controller.target_fraction * max_episode_r1(&labels[n - 1..]);
        let mut report =
            self.agent.run_episode(series, labels, n, self.vae.as_ref(), &mut self.controller, &self.potential)?;
        report.episode = self.episode;

        let candidates: Vec<Candidate> = series
            .decided_indices(n)
            .map(|t| {
                let w = series.window(t, n)?;
                let (q0, q1) = q_values(&self.agent.net, w)?;
                Ok(Candidate { series: series.id.clone(), t: series.origin + t, q0, q1, window: w.to_owned() })
            })
            .collect::<Result<_>>()?;
        let batch = select_queries(&candidates, self.cfg.active.n_al, &self.store);
        let before = self.store.len();
        let outcome = apply_oracle(&batch, oracle, &self.store)?;
        let delta = &outcome.labels;
        let propagated = self.propagate_series(si)?;

        if !self.cfg.log_breakdown {
            report.breakdown.clear();
        }
        self.episode += 1;
        log::info!(
            "episode {} r1 {:.1} lambda {:.4} eps {:.3} labels +{} (+{} propagated), store {} -> {}",
            report.episode,
            report.r1_sum,
            report.lambda_after,
            report.epsilon,
            delta.len(),
            propagated,
            before,
            self.store.len()
        );
        Ok(EpisodeLog {
            report,
            queried: batch.len(),
            oracle_labels: delta.len(),
            skipped: outcome.skipped,
            pending: outcome.pending,
            propagated,
            labels_total: self.store.len(),
        })
    }

    fn propagate_series(&self, si: usize) -> Result<usize> {
        let series = &self.data.train[si];
        let first = self.cfg.n_steps - 1;
        let feats = &self.features[si];
        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        let mut unlabeled_t = Vec::new();
        for (i, f) in feats.iter().enumerate() {
            let t = series.origin + first + i;
            match self.store.get(&series.id, t) {
                Some(r) if r.provenance != Provenance::Propagated => labeled.push((f.as_slice(), r.label)),
                Some(_) if !self.cfg.active.revisit_propagated => {}
                _ => {
                    unlabeled.push(f.as_slice());
                    unlabeled_t.push(t);
                }
            }
        }
        let picks = propagate(&labeled, &unlabeled, &self.cfg.active.propagation(self.sigmas[si]))?;
        let mut landed = 0;
        for p in &picks {
            let rec = LabelRecord::new(&series.id, unlabeled_t[p.index], p.label, Provenance::Propagated, p.confidence);
            if self.store.insert(rec)? {
                landed += 1;
            }
        }
        Ok(landed)
    }

    pub fn predict_test(&self) -> Result<Vec<SeriesPrediction>> {
        predict_split(&self.agent.net, &self.data.test, self.cfg.n_steps)
    }

    pub fn qnet_arch(&self) -> QNetArch {
        self.agent.net.arch()
    }
}

/// Greedy predictions for every series in `split`.
pub fn predict_split(net: &QNet, split: &[Series], n_steps: usize) -> Result<Vec<SeriesPrediction>> {
    split
        .iter()
        .map(|s| {
            let mut predictions = vec![None; s.len()];
            for t in s.decided_indices(n_steps) {
                let (q0, q1) = q_values(net, s.window(t, n_steps)?)?;
                predictions[t] = Some(if q1 > q0 { Action::Anomalous.flag() as u8 } else { 0 });
            }
            Ok(SeriesPrediction {
                id: s.id.clone(),
                origin: s.origin,
                values: s.values.clone(),
                truth: s.labels.clone(),
                predictions,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub metrics: Map<String, Value>,
    pub episodes: Vec<EpisodeLog>,
}

fn final_extras(trainer: &Trainer) -> BTreeMap<String, Value> {
    let mut extra = BTreeMap::new();
    extra.insert("episodes".into(), json!(trainer.episode));
    extra.insert("final_lambda".into(), json!(trainer.controller.lambda));
    extra.insert("seed".into(), json!(trainer.cfg.seed));
    extra.insert("split".into(), json!("test"));
    extra
}

/// Trains per `cfg`, writing the run directory. A human oracle serves queries over HTTP
/// at the configured address for the duration of the run.
pub fn cmd_train(cfg: RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let run_dir = cfg.output_dir.clone();
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.json"), cfg.to_json() + "\n")?;

    let mut trainer = Trainer::new(cfg)?;
    let mut service = None;
    let oracle: Box<dyn LabelOracle> = match &trainer.cfg.oracle {
        OracleSection::GroundTruth => Box::new(trainer.ground_truth_oracle()),
        OracleSection::Human { wait_secs, addr, ui_dir } => {
            let hub = Arc::new(AnnotationHub::new(trainer.store.clone(), trainer.series_views()));
            service = Some((service::spawn(hub.clone(), addr, ui_dir.clone())?, hub.clone()));
            Box::new(ServiceOracle { hub, wait: Duration::from_secs_f64(wait_secs.max(0.0)) })
        }
    };

    let mut log = BufWriter::new(fs::File::create(run_dir.join("run.log.jsonl"))?);
    let mut episodes = Vec::with_capacity(trainer.cfg.episodes);
    for e in 0..trainer.cfg.episodes {
        if let Some((_, hub)) = &service {
            hub.set_progress(Progress {
                episode: e,
                episodes: trainer.cfg.episodes,
                n_al: trainer.cfg.active.n_al,
                k_lp: trainer.cfg.active.k_lp,
            });
        }
        let entry = trainer.run_episode(oracle.as_ref())?;
        serde_json::to_writer(&mut log, &entry)?;
        log.write_all(b"\n")?;
        episodes.push(entry);
    }
    log.flush()?;
    drop(service);

    save_models(&trainer, &run_dir)?;
    trainer.store.save(&run_dir.join("labels.jsonl"))?;
    trainer.potential.persist()?;
    let preds = trainer.predict_test()?;
    let opts = ReportOptions { point_adjust: trainer.cfg.point_adjust, extra: final_extras(&trainer) };
    let metrics = emit_report(&run_dir, &preds, Some(&trainer.store), &opts)?;
    Ok(TrainOutcome { run_dir, metrics, episodes })
}

fn save_models(trainer: &Trainer, dir: &Path) -> Result<()> {
    let meta = json!({ "n_steps": trainer.cfg.n_steps, "episodes": trainer.episode, "lambda": trainer.controller.lambda });
    checkpoint::save(&dir.join("qnet.ckpt"), &trainer.agent.net, meta.clone())?;
    if let Some(v) = &trainer.vae {
        checkpoint::save(&dir.join("vae.ckpt"), v, meta)?;
    }
    Ok(())
}

/// Greedy evaluation of a saved Q-network on the test split; writes the report into `out_dir`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint_path: &Path, out_dir: &Path) -> Result<Map<String, Value>> {
    cfg.validate()?;
    let data = prepare_dataset(cfg)?;
    let arch = QNetArch { dims: data.test[0].dims(), hidden: cfg.agent.hidden };
    let (net, meta): (QNet, Value) = checkpoint::load(checkpoint_path, Some(&arch))?;
    if meta.get("n_steps").and_then(Value::as_u64).is_some_and(|n| n as usize != cfg.n_steps) {
        return Err(Error::ShapeMismatch(format!("checkpoint trained with n_steps {}, config has {}", meta["n_steps"], cfg.n_steps)));
    }
    let labels_path = checkpoint_path.with_file_name("labels.jsonl");
    let store = if labels_path.exists() { Some(LabelStore::load(&labels_path)?) } else { None };
    let preds = predict_split(&net, &data.test, cfg.n_steps)?;
    fs::create_dir_all(out_dir)?;
    let mut extra = BTreeMap::new();
    extra.insert("episodes".into(), meta.get("episodes").cloned().unwrap_or(Value::Null));
    extra.insert("final_lambda".into(), meta.get("lambda").cloned().unwrap_or(Value::Null));
    extra.insert("seed".into(), json!(cfg.seed));
    extra.insert("split".into(), json!("test"));
    emit_report(out_dir, &preds, store.as_ref(), &ReportOptions { point_adjust: cfg.point_adjust, extra })
}

/// Writes a synthetic spike series as `timestamp,value,is_anomaly` CSV (one dimension) or as a
/// whitespace matrix plus label file (several dimensions). Returns the written paths.
pub fn cmd_synth(spec: &crate::data::SynthSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let out = spec.generate()?;
    let s = &out.series;
    fs::create_dir_all(out_dir)?;
    if s.dims() == 1 {
        let path = out_dir.join(format!("{}.csv", s.id));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "timestamp,value,is_anomaly")?;
        for t in 0..s.len() {
            writeln!(w, "{t},{},{}", s.values[[t, 0]], s.labels[t])?;
        }
        w.flush()?;
        Ok(vec![path])
    } else {
        let data = out_dir.join(format!("{}.txt", s.id));
        let labels = out_dir.join(format!("{}.labels.txt", s.id));
        write_matrix(&data, &s.values)?;
        fs::write(&labels, s.labels.iter().map(|l| format!("{l}\n")).collect::<String>())?;
        Ok(vec![data, labels])
    }
}

fn write_matrix(path: &Path, values: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in values.rows() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", fields.join(" "))?;
    }
    w.flush()?;
    Ok(())
}
