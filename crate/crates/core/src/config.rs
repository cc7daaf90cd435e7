//! Run configuration: one JSON document, unknown keys rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active::PropagationParams;
use crate::agent::AgentConfig;
use crate::data::{self, Series, SynthSpec, DEFAULT_N_STEPS};
use crate::error::{Error, Result};
use crate::potential::LlmConfig;
use crate::vae::VaeTrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        #[serde(default = "default_t")]
        t: usize,
        #[serde(default = "one")]
        dims: usize,
        #[serde(default = "default_anomalies")]
        n_anomalies: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    /// A `timestamp,value,is_anomaly` file, or a directory of them.
    Csv { path: PathBuf },
    /// Whitespace or comma separated matrices with a parallel label file (or directories of both).
    Matrix { data: PathBuf, labels: PathBuf },
}

fn default_t() -> usize {
    2000
}
fn one() -> usize {
    1
}
fn default_anomalies() -> usize {
    20
}
fn default_seed() -> u64 {
    7
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic { t: default_t(), dims: 1, n_anomalies: default_anomalies(), seed: default_seed() }
    }
}

impl DatasetSpec {
    pub fn load(&self, n_steps: usize) -> Result<Vec<Series>> {
        match self {
            DatasetSpec::Synthetic { t, dims, n_anomalies, seed } => {
                let spec = SynthSpec { t: *t, dims: *dims, n_anomalies: *n_anomalies, seed: *seed, n_steps, ..SynthSpec::default() };
                Ok(vec![spec.generate()?.series])
            }
            DatasetSpec::Csv { path } if path.is_dir() => data::load_csv_dir(path, n_steps),
            DatasetSpec::Csv { path } => Ok(vec![data::load_csv_univariate(path, n_steps)?]),
            DatasetSpec::Matrix { data, labels } if data.is_dir() => data::load_matrix_dir(data, labels),
            DatasetSpec::Matrix { data, labels } => Ok(vec![data::load_matrix_multivariate(data, labels)?]),
        }
    }

    fn check_paths(&self) -> Result<()> {
        let paths: Vec<&Path> = match self {
            DatasetSpec::Synthetic { .. } => vec![],
            DatasetSpec::Csv { path } => vec![path],
            DatasetSpec::Matrix { data, labels } => vec![data, labels],
        };
        match paths.into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::MissingFile(p.to_path_buf())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeSection {
    pub enabled: bool,
    pub hidden: Vec<usize>,
    pub latent: usize,
    #[serde(flatten)]
    pub train: VaeTrainConfig,
}

impl Default for VaeSection {
    fn default() -> Self {
        Self { enabled: true, hidden: vec![64, 32], latent: 8, train: VaeTrainConfig::default() }
    }
}

/// Settings for the reconstruction-weight controller. The target is recomputed every
/// episode as `target_fraction` times the best reachable classification reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub lambda0: f64,
    pub alpha: f64,
    pub target_fraction: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self { lambda0: 0.1, alpha: 0.001, target_fraction: 0.8, lambda_min: 0.0, lambda_max: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSection {
    Heuristic {
        #[serde(default = "default_z_cap")]
        z_cap: f64,
        #[serde(default = "one_f")]
        scale_floor: f64,
    },
    Llm(LlmConfig),
    Zero,
}

fn default_z_cap() -> f64 {
    20.0 / 3.0
}
fn one_f() -> f64 {
    1.0
}

impl Default for PotentialSection {
    fn default() -> Self {
        PotentialSection::Heuristic { z_cap: default_z_cap(), scale_floor: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaMode {
    Fixed(f64),
    Named(SigmaName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaName {
    /// Median pairwise distance of the propagation pool.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    Raw,
    Latent,
    /// Window minus its VAE reconstruction.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveSection {
    pub n_al: usize,
    pub k_lp: usize,
    pub sigma: SigmaMode,
    pub theta: f64,
    pub iters: usize,
    pub feature: FeatureSpace,
    /// Ground-truth labels revealed before the first episode, drawn uniformly from decided train indices.
    pub seed_labels: usize,
    /// Whether points already carrying a pseudo-label stay in the propagation pool. When off,
    /// each round adds up to `k_lp` new pseudo-labels instead of re-ranking the same ones.
    pub revisit_propagated: bool,
}

impl Default for ActiveSection {
    fn default() -> Self {
        Self {
            n_al: 10,
            k_lp: 20,
            sigma: SigmaMode::Named(SigmaName::Median),
            theta: 0.9,
            iters: 50,
            feature: FeatureSpace::Raw,
            seed_labels: 0,
            revisit_propagated: false,
        }
    }
}

impl ActiveSection {
    pub fn propagation(&self, sigma: f64) -> PropagationParams {
        PropagationParams { sigma, iters: self.iters, k_lp: self.k_lp, theta: self.theta, tol: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSection {
    GroundTruth,
    /// Queries go to the annotation service; each round waits up to `wait_secs` for answers.
    Human {
        #[serde(default)]
        wait_secs: f64,
        #[serde(default = "default_addr")]
        addr: String,
        /// Directory of built annotator assets served at `/`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ui_dir: Option<PathBuf>,
    },
}

fn default_addr() -> String {
    "127.0.0.1:8765".into()
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection::GroundTruth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub train_fraction: f64,
    pub n_steps: usize,
    pub episodes: usize,
    pub seed: u64,
    pub agent: AgentConfig,
    pub vae: VaeSection,
    pub controller: ControllerSection,
    pub potential: PotentialSection,
    pub active: ActiveSection,
    pub oracle: OracleSection,
    pub output_dir: PathBuf,
    /// Keep per-step reward breakdowns in run.log.jsonl.
    pub log_breakdown: bool,
    /// Also report point-adjusted metrics.
    pub point_adjust: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            train_fraction: 0.5,
            n_steps: DEFAULT_N_STEPS,
            episodes: 30,
            seed: 7,
            agent: AgentConfig::default(),
            vae: VaeSection::default(),
            controller: ControllerSection::default(),
            potential: PotentialSection::default(),
            active: ActiveSection::default(),
            oracle: OracleSection::default(),
            output_dir: PathBuf::from("runs/default"),
            log_breakdown: false,
            point_adjust: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked without training, including dataset paths.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_steps == 0 {
            return bad("n_steps must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        self.agent.validate()?;
        let c = &self.controller;
        if !(c.lambda_min <= c.lambda0 && c.lambda0 <= c.lambda_max) || c.alpha < 0.0 || c.target_fraction < 0.0 {
            return bad(format!("invalid controller settings {c:?}"));
        }
        if self.vae.enabled && (self.vae.latent == 0 || self.vae.train.batch_size == 0) {
            return bad("vae latent size and batch size must be positive".into());
        }
        let a = &self.active;
        if !(0.0..=1.0).contains(&a.theta) {
            return bad(format!("theta {} outside [0, 1]", a.theta));
        }
        if let SigmaMode::Fixed(s) = a.sigma {
            if !(s > 0.0) {
                return Err(Error::InvalidSigma(s));
            }
        }
        if a.feature == FeatureSpace::Latent && !self.vae.enabled {
            return bad("latent propagation features need the vae".into());
        }
        if let PotentialSection::Heuristic { z_cap, scale_floor } = self.potential {
            if !(z_cap > 0.0) || scale_floor < 0.0 {
                return bad("heuristic z_cap must be positive and scale_floor non-negative".into());
            }
        }
        self.dataset.check_paths()
    }
}
