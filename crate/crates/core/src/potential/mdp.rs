//! Small finite MDPs solved exactly by value iteration. Used to check that shaping
//! with a state potential leaves the greedy policy unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Finite MDP with dense transition probabilities `p[s][a][s']` and rewards `r[s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
}

impl TabularMdp {
    pub fn new(transitions: Vec<Vec<Vec<f64>>>, rewards: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = transitions.len();
        if n == 0 || rewards.len() != n {
            return Err(Error::ShapeMismatch("transition and reward tables must cover the same states".into()));
        }
        for (s, (ps, rs)) in transitions.iter().zip(&rewards).enumerate() {
            if ps.is_empty() || ps.len() != rs.len() {
                return Err(Error::ShapeMismatch(format!("state {s}: action count mismatch")));
            }
            for (p, r) in ps.iter().zip(rs) {
                if p.len() != n || r.len() != n {
                    return Err(Error::ShapeMismatch(format!("state {s}: row length mismatch")));
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > 1e-9 || p.iter().any(|&x| x < 0.0) {
                    return Err(Error::InvalidArgs(format!("state {s}: probabilities sum to {total}")));
                }
            }
        }
        Ok(Self { transitions, rewards })
    }

    /// Dense random MDP: Dirichlet-like transitions, rewards uniform in `[-1, 1]`.
    pub fn random(n_states: usize, n_actions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut transitions = Vec::with_capacity(n_states);
        let mut rewards = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let mut ps = Vec::with_capacity(n_actions);
            let mut rs = Vec::with_capacity(n_actions);
            for _ in 0..n_actions {
                let raw: Vec<f64> = (0..n_states).map(|_| -rng.random_range(1e-9f64..1.0).ln()).collect();
                let total: f64 = raw.iter().sum();
                ps.push(raw.iter().map(|x| x / total).collect());
                rs.push((0..n_states).map(|_| rng.random_range(-1.0..1.0)).collect());
            }
            transitions.push(ps);
            rewards.push(rs);
        }
        Self { transitions, rewards }
    }

    pub fn n_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn n_actions(&self, s: usize) -> usize {
        self.transitions[s].len()
    }

    /// Same dynamics with `r + gamma * phi[s'] - phi[s]`.
    pub fn shaped(&self, phi: &[f64], gamma: f64) -> Self {
        let rewards = self
            .rewards
            .iter()
            .enumerate()
            .map(|(s, rs)| {
                rs.iter()
                    .map(|row| row.iter().enumerate().map(|(s2, r)| super::shaped_reward(*r, phi[s], phi[s2], gamma)).collect())
                    .collect()
            })
            .collect();
        Self { transitions: self.transitions.clone(), rewards }
    }

    fn backup(&self, v: &[f64], gamma: f64) -> Vec<Vec<f64>> {
        self.transitions
            .iter()
            .zip(&self.rewards)
            .map(|(ps, rs)| {
                ps.iter()
                    .zip(rs)
                    .map(|(p, r)| p.iter().zip(r).zip(v).map(|((p, r), v)| p * (r + gamma * v)).sum())
                    .collect()
            })
            .collect()
    }

    /// Optimal action values by value iteration until the sup-norm change drops below `tol`.
    pub fn value_iteration(&self, gamma: f64, tol: f64) -> Result<Vec<Vec<f64>>> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgs(format!("value iteration needs gamma in [0, 1), got {gamma}")));
        }
        let mut v = vec![0.0; self.n_states()];
        for _ in 0..1_000_000 {
            let q = self.backup(&v, gamma);
            let next: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
            let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if delta < tol {
                return Ok(self.backup(&v, gamma));
            }
        }
        Err(Error::InvalidArgs("value iteration did not converge".into()))
    }
}

/// Greedy action per state; ties resolve to the lowest index.
pub fn greedy_policy(q: &[Vec<f64>]) -> Vec<usize> {
    q.iter()
        .map(|row| {
            row.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (a, &v)| if v > best.1 { (a, v) } else { best }).0
        })
        .collect()
}

/// Smallest gap between the best and second-best action value over all states.
pub fn min_action_gap(q: &[Vec<f64>]) -> f64 {
    q.iter()
        .map(|row| {
            let mut sorted = row.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            if sorted.len() < 2 {
                f64::INFINITY
            } else {
                sorted[0] - sorted[1]
            }
        })
        .fold(f64::INFINITY, f64::min)
}
