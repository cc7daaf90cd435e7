//! Dense variational autoencoder scored by reconstruction error, plus the
//! proportional controller that scales that error inside the total reward.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{tanh_backward, tanh_inplace, Adam, Dense, ParamSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArch {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub latent: usize,
}

impl VaeArch {
    /// `input -> 64 -> 32 -> 8` latent, mirrored decoder.
    pub fn standard(input: usize) -> Self {
        Self { input, hidden: vec![64, 32], latent: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    arch: VaeArch,
    encoder: Vec<Dense>,
    mu_head: Dense,
    logvar_head: Dense,
    decoder: Vec<Dense>,
    output: Dense,
    pub params: ParamSet,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
struct Trace {
    enc: Vec<Vec<f64>>,
    mu: Vec<f64>,
    logvar: Vec<f64>,
    z: Vec<f64>,
    dec: Vec<Vec<f64>>,
    recon: Vec<f64>,
}

impl VaeModel {
    /// Zero-valued parameters with the given architecture.
    pub fn zeros(arch: VaeArch) -> Result<Self> {
        if arch.input == 0 || arch.latent == 0 || arch.hidden.contains(&0) {
            return Err(Error::InvalidArgs(format!("invalid VAE architecture {arch:?}")));
        }
        let mut cursor = 0;
        let mut encoder = Vec::new();
        let mut prev = arch.input;
        for &h in &arch.hidden {
            encoder.push(Dense::alloc(&mut cursor, prev, h));
            prev = h;
        }
        let mu_head = Dense::alloc(&mut cursor, prev, arch.latent);
        let logvar_head = Dense::alloc(&mut cursor, prev, arch.latent);
        let mut decoder = Vec::new();
        prev = arch.latent;
        for &h in arch.hidden.iter().rev() {
            decoder.push(Dense::alloc(&mut cursor, prev, h));
            prev = h;
        }
        let output = Dense::alloc(&mut cursor, prev, arch.input);
        Ok(Self { arch, encoder, mu_head, logvar_head, decoder, output, params: ParamSet::zeros(cursor) })
    }

    pub fn new(arch: VaeArch, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in model.layers() {
            layer.init(&mut model.params.values, &mut rng);
        }
        Ok(model)
    }

    pub fn arch(&self) -> &VaeArch {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent
    }

    /// Layers in parameter-layout order.
    pub fn layers(&self) -> Vec<Dense> {
        let mut all = self.encoder.clone();
        all.push(self.mu_head);
        all.push(self.logvar_head);
        all.extend(self.decoder.iter().copied());
        all.push(self.output);
        all
    }

    pub fn mu_head(&self) -> Dense {
        self.mu_head
    }

    pub fn logvar_head(&self) -> Dense {
        self.logvar_head
    }

    pub fn output_layer(&self) -> Dense {
        self.output
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input {
            return Err(Error::ShapeError(format!("VAE expects {} inputs, got {}", self.arch.input, x.len())));
        }
        Ok(())
    }

    /// With `noise = None` the latent is the posterior mean.
    fn forward(&self, x: &[f64], noise: Option<&[f64]>) -> Trace {
        let p = &self.params.values;
        let mut enc = Vec::with_capacity(self.encoder.len());
        let mut cur = x.to_vec();
        for layer in &self.encoder {
            let mut y = vec![0.0; layer.out];
            layer.forward(p, &cur, &mut y);
            tanh_inplace(&mut y);
            enc.push(y.clone());
            cur = y;
        }
        let mut mu = vec![0.0; self.arch.latent];
        let mut logvar = vec![0.0; self.arch.latent];
        self.mu_head.forward(p, &cur, &mut mu);
        self.logvar_head.forward(p, &cur, &mut logvar);
        let z: Vec<f64> = match noise {
            Some(eps) => mu.iter().zip(&logvar).zip(eps).map(|((m, lv), e)| m + (0.5 * lv).exp() * e).collect(),
            None => mu.clone(),
        };
        let mut dec = Vec::with_capacity(self.decoder.len());
        let mut cur = z.clone();
        for layer in &self.decoder {
            let mut y = vec![0.0; layer.out];
            layer.forward(p, &cur, &mut y);
            tanh_inplace(&mut y);
            dec.push(y.clone());
            cur = y;
        }
        let mut recon = vec![0.0; self.arch.input];
        self.output.forward(p, &cur, &mut recon);
        Trace { enc, mu, logvar, z, dec, recon }
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward(x, None).recon)
    }

    /// Posterior mean of the latent code.
    pub fn encode_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward(x, None).mu)
    }

    fn sample_terms(x: &[f64], tr: &Trace) -> (f64, f64) {
        let n = x.len() as f64;
        let mse = tr.recon.iter().zip(x).map(|(r, xi)| (r - xi).powi(2)).sum::<f64>() / n;
        let kl = 0.5 * tr.mu.iter().zip(&tr.logvar).map(|(m, lv)| m * m + lv.exp() - lv - 1.0).sum::<f64>();
        (mse, kl)
    }

    /// Accumulates `scale * d(loss)/d(params)` for one sample.
    fn backward(&mut self, x: &[f64], eps: &[f64], tr: &Trace, scale: f64) {
        let n = x.len() as f64;
        let p = &self.params.values;
        let g = &mut self.params.grads;

        let mut d: Vec<f64> = tr.recon.iter().zip(x).map(|(r, xi)| scale * 2.0 * (r - xi) / n).collect();
        for (i, layer) in std::iter::once(&self.output).chain(self.decoder.iter().rev()).enumerate() {
            let k = self.decoder.len() - i;
            let input = if k == 0 { &tr.z } else { &tr.dec[k - 1] };
            let mut dx = vec![0.0; layer.inp];
            layer.backward(p, g, input, &d, Some(&mut dx));
            if k > 0 {
                tanh_backward(&tr.dec[k - 1], &mut dx);
            }
            d = dx;
        }
        let dz = d;

        let mut dmu = vec![0.0; self.arch.latent];
        let mut dlv = vec![0.0; self.arch.latent];
        for l in 0..self.arch.latent {
            let sigma = (0.5 * tr.logvar[l]).exp();
            dmu[l] = dz[l] + scale * tr.mu[l];
            dlv[l] = dz[l] * eps[l] * 0.5 * sigma + scale * 0.5 * (tr.logvar[l].exp() - 1.0);
        }
        let top = tr.enc.last().map_or(x, |v| v.as_slice());
        let mut dh = vec![0.0; self.mu_head.inp];
        self.mu_head.backward(p, g, top, &dmu, Some(&mut dh));
        self.logvar_head.backward(p, g, top, &dlv, Some(&mut dh));

        for k in (0..self.encoder.len()).rev() {
            tanh_backward(&tr.enc[k], &mut dh);
            let input = if k == 0 { x } else { &tr.enc[k - 1] };
            let layer = self.encoder[k];
            let mut dx = vec![0.0; layer.inp];
            layer.backward(p, g, input, &dh, if k > 0 { Some(&mut dx) } else { None });
            dh = dx;
        }
    }

    fn check_batch<X: AsRef<[f64]>, E: AsRef<[f64]>>(&self, batch: &[X], noise: &[E]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidArgs("empty batch".into()));
        }
        if noise.len() != batch.len() {
            return Err(Error::LengthMismatch { left: noise.len(), right: batch.len() });
        }
        for (x, e) in batch.iter().zip(noise) {
            self.check_input(x.as_ref())?;
            if e.as_ref().len() != self.arch.latent {
                return Err(Error::ShapeError(format!("noise has {} entries, latent is {}", e.as_ref().len(), self.arch.latent)));
            }
            if !x.as_ref().iter().chain(e.as_ref()).all(|v| v.is_finite()) {
                return Err(Error::NonFiniteLoss("non-finite input or noise".into()));
            }
        }
        if !self.params.all_finite() {
            return Err(Error::NonFiniteLoss("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Negative ELBO averaged over the batch: per-element reconstruction MSE plus the
    /// closed-form KL to a standard normal prior. `noise` supplies the reparameterization draws.
    pub fn elbo_loss<X: AsRef<[f64]>, E: AsRef<[f64]>>(&self, batch: &[X], noise: &[E]) -> Result<f64> {
        self.check_batch(batch, noise)?;
        let mut total = 0.0;
        for (x, e) in batch.iter().zip(noise) {
            let tr = self.forward(x.as_ref(), Some(e.as_ref()));
            let (mse, kl) = Self::sample_terms(x.as_ref(), &tr);
            total += mse + kl;
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("ELBO loss {loss}")));
        }
        Ok(loss)
    }

    /// Like [`elbo_loss`](Self::elbo_loss) but also overwrites `params.grads` with the gradient.
    pub fn elbo_loss_and_grad<X: AsRef<[f64]>, E: AsRef<[f64]>>(&mut self, batch: &[X], noise: &[E]) -> Result<f64> {
        self.check_batch(batch, noise)?;
        self.params.zero_grad();
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for (x, e) in batch.iter().zip(noise) {
            let (x, e) = (x.as_ref(), e.as_ref());
            let tr = self.forward(x, Some(e));
            let (mse, kl) = Self::sample_terms(x, &tr);
            total += mse + kl;
            self.backward(x, e, &tr, scale);
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("ELBO loss {loss}")));
        }
        Ok(loss)
    }

    /// Mean squared error between `x` and its posterior-mean reconstruction.
    pub fn recon_error(&self, x: &[f64]) -> Result<f64> {
        let recon = self.reconstruct(x)?;
        Ok(recon.iter().zip(x).map(|(r, xi)| (r - xi).powi(2)).sum::<f64>() / x.len() as f64)
    }

    pub fn recon_error_window(&self, window: ArrayView2<'_, f64>) -> Result<f64> {
        self.recon_error(&flatten(window))
    }
}

/// Row-major copy of a window.
pub fn flatten(window: ArrayView2<'_, f64>) -> Vec<f64> {
    window.iter().copied().collect()
}

/// Mean squared error between a window and its reconstruction.
pub fn mse(x: &[f64], recon: &[f64]) -> Result<f64> {
    if x.len() != recon.len() || x.is_empty() {
        return Err(Error::ShapeError(format!("lengths {} and {}", x.len(), recon.len())));
    }
    Ok(x.iter().zip(recon).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self { epochs: 100, lr: 1e-3, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub epoch_losses: Vec<f64>,
}

impl TrainingCurve {
    /// Trailing moving average with the given window.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        self.epoch_losses
            .windows(w.min(self.epoch_losses.len().max(1)))
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
            .collect()
    }
}

/// Fits the model to normal windows with Adam on the negative ELBO.
pub fn train_vae<X: AsRef<[f64]>>(model: &mut VaeModel, windows: &[X], cfg: &VaeTrainConfig) -> Result<TrainingCurve> {
    let mut curve = TrainingCurve { epoch_losses: Vec::with_capacity(cfg.epochs) };
    if cfg.epochs == 0 {
        return Ok(curve);
    }
    if windows.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidArgs("VAE training needs windows and a positive batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr, model.params.len());
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let latent = model.latent_dim();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| windows[i].as_ref()).collect();
            let noise: Vec<Vec<f64>> =
                (0..chunk.len()).map(|_| (0..latent).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
            let loss = model.elbo_loss_and_grad(&batch, &noise).map_err(|e| match e {
                Error::NonFiniteLoss(msg) => Error::NonFiniteLoss(format!("epoch {epoch}, batch {batches}: {msg}")),
                other => other,
            })?;
            opt.step(&mut model.params);
            sum += loss;
            batches += 1;
        }
        curve.epoch_losses.push(sum / batches as f64);
    }
    Ok(curve)
}

/// Classification reward plus the scaled reconstruction term.
pub fn total_reward(r1: f64, r2: f64, lambda: f64) -> f64 {
    r1 + lambda * r2
}

/// Proportional controller for the reconstruction-error weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaController {
    pub lambda: f64,
    pub alpha: f64,
    pub r_target: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl LambdaController {
    pub fn new(lambda: f64, alpha: f64, r_target: f64, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min <= lambda_max) || !(lambda_min..=lambda_max).contains(&lambda) {
            return Err(Error::InvalidArgs(format!(
                "lambda {lambda} outside [{lambda_min}, {lambda_max}]"
            )));
        }
        Ok(Self { lambda, alpha, r_target, lambda_min, lambda_max })
    }

    /// Next controller state: below-target episodes raise lambda, above-target lower it.
    pub fn updated(&self, r_episode: f64) -> Self {
        let raw = self.lambda + self.alpha * (self.r_target - r_episode);
        Self { lambda: raw.clamp(self.lambda_min, self.lambda_max), ..self.clone() }
    }
}

pub fn update_lambda(ctrl: &LambdaController, r_episode: f64) -> LambdaController {
    ctrl.updated(r_episode)
}
