//! Versioned JSON checkpoints. Floats round-trip bit-exactly.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{QNet, QNetArch};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::vae::{VaeArch, VaeModel};

const FORMAT: &str = "anomaly-rl-checkpoint";
const VERSION: u32 = 1;

/// A model whose parameters are a flat vector determined by an architecture header.
pub trait Checkpointable: Sized {
    const KIND: &'static str;
    type Arch: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug + Clone;

    fn arch_header(&self) -> Self::Arch;
    fn build(arch: &Self::Arch) -> Result<Self>;
    fn param_set(&self) -> &ParamSet;
    fn param_set_mut(&mut self) -> &mut ParamSet;
}

impl Checkpointable for VaeModel {
    const KIND: &'static str = "vae";
    type Arch = VaeArch;

    fn arch_header(&self) -> VaeArch {
        self.arch().clone()
    }

    fn build(arch: &VaeArch) -> Result<Self> {
        VaeModel::zeros(arch.clone())
    }

    fn param_set(&self) -> &ParamSet {
        &self.params
    }

    fn param_set_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

impl Checkpointable for QNet {
    const KIND: &'static str = "qnet";
    type Arch = QNetArch;

    fn arch_header(&self) -> QNetArch {
        self.arch()
    }

    fn build(arch: &QNetArch) -> Result<Self> {
        QNet::zeros(*arch)
    }

    fn param_set(&self) -> &ParamSet {
        &self.params
    }

    fn param_set_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<A> {
    format: String,
    version: u32,
    kind: String,
    arch: A,
    n_params: usize,
    params: Vec<f64>,
    #[serde(default)]
    meta: Value,
}

pub fn save<M: Checkpointable>(path: &Path, model: &M, meta: Value) -> Result<()> {
    let params = &model.param_set().values;
    let env = Envelope {
        format: FORMAT.into(),
        version: VERSION,
        kind: M::KIND.into(),
        arch: model.arch_header(),
        n_params: params.len(),
        params: params.clone(),
        meta,
    };
    fs::write(path, serde_json::to_vec(&env)?)?;
    Ok(())
}

/// Loads a checkpoint, optionally requiring a specific architecture. Returns the model and its metadata.
pub fn load<M: Checkpointable>(path: &Path, expected: Option<&M::Arch>) -> Result<(M, Value)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let env: Envelope<M::Arch> =
        serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if env.format != FORMAT || env.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", env.format, env.version)));
    }
    if env.kind != M::KIND {
        return Err(Error::Checkpoint(format!("expected a {} checkpoint, found {}", M::KIND, env.kind)));
    }
    if let Some(arch) = expected {
        if *arch != env.arch {
            return Err(Error::ShapeMismatch(format!("checkpoint has {:?}, config wants {arch:?}", env.arch)));
        }
    }
    let mut model = M::build(&env.arch)?;
    let want = model.param_set().len();
    if env.n_params != want || env.params.len() != want {
        return Err(Error::ShapeMismatch(format!(
            "{:?} needs {want} parameters, header says {} and file holds {}",
            env.arch,
            env.n_params,
            env.params.len()
        )));
    }
    model.param_set_mut().values = env.params;
    Ok((model, env.meta))
}
