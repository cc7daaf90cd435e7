//! Deep Q-learning over flag-augmented windows.
//!
//! The network scores a window once per action flag; the agent learns from the fully
//! shaped reward `R1 + lambda * R2 + gamma * phi(s') - phi(s)`.

mod qnet;
mod replay;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use qnet::{q_values, QNet, QNetArch, QTrace};
pub use replay::{ReplayBuffer, Transition};

use crate::data::Series;
use crate::env::{Action, Episode};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::potential::{prefetch, shaped_reward, PotentialProvider};
use crate::vae::{total_reward, LambdaController, VaeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub hidden: usize,
    pub lr: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: u64,
    pub target_sync_every: u64,
    /// Environment steps before the first gradient update.
    pub warmup_steps: u64,
    /// Environment steps between gradient updates.
    pub train_every: u64,
    /// Whether steps without any label enter replay (their R1 is 0).
    pub replay_unlabeled: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            lr: 1e-3,
            gamma: 0.99,
            buffer_capacity: 100_000,
            batch_size: 64,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 50_000,
            target_sync_every: 500,
            warmup_steps: 1000,
            train_every: 1,
            replay_unlabeled: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hidden > 0
            && self.lr > 0.0
            && self.gamma > 0.0
            && self.gamma <= 1.0
            && self.buffer_capacity > 0
            && self.batch_size > 0
            && (0.0..=1.0).contains(&self.eps_end)
            && (self.eps_end..=1.0).contains(&self.eps_start)
            && self.target_sync_every > 0
            && self.train_every > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid agent config {self:?}")))
        }
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.eps_end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

/// Epsilon-greedy choice from a single uniform draw in `[0, 1)`.
///
/// A draw below `eps` explores, reusing `draw / eps` as the coin; otherwise the larger
/// value wins and an exact tie picks [`Action::Normal`].
pub fn select_action(q0: f64, q1: f64, eps: f64, draw: f64) -> Action {
    if draw < eps {
        if draw / eps < 0.5 {
            Action::Normal
        } else {
            Action::Anomalous
        }
    } else if q1 > q0 {
        Action::Anomalous
    } else {
        Action::Normal
    }
}

/// Mean squared TD error on `batch`, gradients written into `net.params.grads`.
pub fn td_loss_and_grad(net: &mut QNet, target: &QNet, batch: &[&Transition], gamma: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgs("empty TD batch".into()));
    }
    net.params.zero_grad();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for tr in batch {
        let bootstrap = if tr.done {
            0.0
        } else {
            let (a, b) = q_values(target, tr.next_window.view())?;
            a.max(b)
        };
        let y = tr.reward + gamma * bootstrap;
        let trace = net.forward(tr.window.view(), tr.action)?;
        let err = trace.q - y;
        loss += err * err * scale;
        net.backward(&trace, 2.0 * err * scale);
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("TD loss {loss}")));
    }
    Ok(loss)
}

/// One optimizer step on the TD loss; returns the loss before the step.
pub fn td_update(net: &mut QNet, target: &QNet, batch: &[&Transition], gamma: f64, opt: &mut Adam) -> Result<f64> {
    let loss = td_loss_and_grad(net, target, batch, gamma)?;
    opt.step(&mut net.params);
    Ok(loss)
}

/// Hard target-network copy every `every_k` updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSync {
    pub every_k: u64,
    pub updates: u64,
    pub syncs: u64,
}

impl TargetSync {
    pub fn new(every_k: u64) -> Self {
        Self { every_k: every_k.max(1), updates: 0, syncs: 0 }
    }

    /// Call after each TD update; returns whether a copy happened.
    pub fn after_update(&mut self, net: &QNet, target: &mut QNet) -> bool {
        self.updates += 1;
        if self.updates % self.every_k == 0 {
            sync_target(net, target);
            self.syncs += 1;
            true
        } else {
            false
        }
    }
}

pub fn sync_target(net: &QNet, target: &mut QNet) {
    target.params.values.clone_from(&net.params.values);
}

/// Everything that went into one step's shaped reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub t: usize,
    pub action: Action,
    pub label: Option<u8>,
    pub q0: f64,
    pub q1: f64,
    pub r1: f64,
    pub r2: f64,
    pub lambda: f64,
    pub phi_s: f64,
    pub phi_next: f64,
    pub gamma: f64,
    pub shaped: f64,
}

impl RewardBreakdown {
    /// Recovers R1 from the shaped total: `shaped - gamma * phi' + phi - lambda * R2`.
    pub fn recovered_r1(&self) -> f64 {
        self.shaped - self.gamma * self.phi_next + self.phi_s - self.lambda * self.r2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode: usize,
    pub series: String,
    pub steps: usize,
    pub r1_sum: f64,
    pub total_sum: f64,
    pub shaped_sum: f64,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub r_target: f64,
    pub epsilon: f64,
    pub updates: u64,
    pub syncs: u64,
    pub mean_loss: Option<f64>,
    pub breakdown: Vec<RewardBreakdown>,
}

/// Online network, target network, optimizer, replay memory and exploration state.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub cfg: AgentConfig,
    pub net: QNet,
    pub target: QNet,
    pub opt: Adam,
    pub replay: ReplayBuffer,
    pub schedule: EpsilonSchedule,
    pub sync: TargetSync,
    pub env_steps: u64,
    episodes: usize,
    rng: ChaCha8Rng,
}

impl DqnAgent {
    pub fn new(dims: usize, cfg: AgentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let net = QNet::new(QNetArch { dims, hidden: cfg.hidden }, seed)?;
        Ok(Self::from_net(net, cfg, seed))
    }

    pub fn from_net(net: QNet, cfg: AgentConfig, seed: u64) -> Self {
        Self {
            target: net.clone(),
            opt: Adam::new(cfg.lr, net.params.len()),
            replay: ReplayBuffer::new(cfg.buffer_capacity),
            schedule: EpsilonSchedule { eps_start: cfg.eps_start, eps_end: cfg.eps_end, decay_steps: cfg.eps_decay_steps },
            sync: TargetSync::new(cfg.target_sync_every),
            env_steps: 0,
            episodes: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a9e7),
            net,
            cfg,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.schedule.at(self.env_steps)
    }

    fn learn(&mut self) -> Result<f64> {
        let idx = self.replay.sample_indices(self.cfg.batch_size, &mut self.rng);
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.replay.get(i).expect("sampled in range")).collect();
        let loss = td_update(&mut self.net, &self.target, &batch, self.cfg.gamma, &mut self.opt)?;
        self.sync.after_update(&self.net, &mut self.target);
        Ok(loss)
    }

    /// Greedy actions for every decided index of `series`.
    pub fn predict(&self, series: &Series, n_steps: usize) -> Result<Vec<Action>> {
        series
            .decided_indices(n_steps)
            .map(|t| {
                let (q0, q1) = q_values(&self.net, series.window(t, n_steps)?)?;
                Ok(select_action(q0, q1, 0.0, 1.0))
            })
            .collect()
    }

    /// One full pass over `series`, rewarded against `labels`, followed by the lambda update
    /// driven by the episode's summed classification reward.
    pub fn run_episode(
        &mut self,
        series: &Series,
        labels: Vec<Option<u8>>,
        n_steps: usize,
        vae: Option<&VaeModel>,
        lambda: &mut LambdaController,
        potential: &dyn PotentialProvider,
    ) -> Result<EpisodeReport> {
        let mut episode = Episode::with_labels(series, n_steps, labels)?;
        let windows: Vec<Array2<f64>> =
            series.decided_indices(n_steps).map(|t| series.window(t, n_steps).map(|w| w.to_owned())).collect::<Result<_>>()?;
        let phi: Vec<f64> = prefetch(potential, &windows).iter().map(|s| s.value).collect();
        let r2: Vec<f64> = match vae {
            Some(m) => windows.iter().map(|w| m.recon_error_window(w.view())).collect::<Result<_>>()?,
            None => vec![0.0; windows.len()],
        };

        let gamma = self.cfg.gamma;
        let lam = lambda.lambda;
        let updates_before = self.sync.updates;
        let mut losses = Vec::new();
        let mut breakdown = Vec::with_capacity(windows.len());
        let (mut r1_sum, mut total_sum, mut shaped_sum) = (0.0, 0.0, 0.0);

        for i in 0..windows.len() {
            let t = episode.t();
            let (q0, q1) = q_values(&self.net, windows[i].view())
                .map_err(|e| Error::InvalidArgs(format!("step t={t}: {e}")))?;
            let draw: f64 = self.rng.random();
            let action = select_action(q0, q1, self.epsilon(), draw);
            let outcome = episode.step(action)?;

            let next = if outcome.done { i } else { i + 1 };
            let total = total_reward(outcome.r1, r2[i], lam);
            let shaped = shaped_reward(total, phi[i], phi[next], gamma);
            r1_sum += outcome.r1;
            total_sum += total;
            shaped_sum += shaped;
            breakdown.push(RewardBreakdown {
                t,
                action,
                label: outcome.label,
                q0,
                q1,
                r1: outcome.r1,
                r2: r2[i],
                lambda: lam,
                phi_s: phi[i],
                phi_next: phi[next],
                gamma,
                shaped,
            });

            if outcome.label.is_some() || self.cfg.replay_unlabeled {
                self.replay.push(Transition {
                    window: windows[i].clone(),
                    action,
                    reward: shaped,
                    next_window: windows[next].clone(),
                    done: outcome.done,
                });
            }
            self.env_steps += 1;
            if self.env_steps > self.cfg.warmup_steps && self.env_steps % self.cfg.train_every == 0 && !self.replay.is_empty() {
                let loss = self.learn().map_err(|e| match e {
                    Error::NonFiniteLoss(m) => Error::NonFiniteLoss(format!("episode {} step t={t}: {m}", self.episodes)),
                    other => other,
                })?;
                losses.push(loss);
            }
        }

        let before = lambda.clone();
        *lambda = lambda.updated(r1_sum);
        let report = EpisodeReport {
            episode: self.episodes,
            series: series.id.clone(),
            steps: breakdown.len(),
            r1_sum,
            total_sum,
            shaped_sum,
            lambda_before: before.lambda,
            lambda_after: lambda.lambda,
            r_target: before.r_target,
            epsilon: self.epsilon(),
            updates: self.sync.updates - updates_before,
            syncs: self.sync.syncs,
            mean_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            breakdown,
        };
        self.episodes += 1;
        Ok(report)
    }
}
