//! State potentials for reward shaping.
//!
//! A potential maps a raw window (never the flag-augmented state) to a severity in
//! `[0, 1]`. Providers are either the deterministic [`HeuristicPotential`], an
//! OpenAI-compatible chat endpoint ([`LlmPotential`]), or [`ZeroPotential`] for ablations.

mod cache;
mod heuristic;
mod llm;
pub mod mdp;
mod prompt;

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use cache::{cache_key, CacheRecord, PotentialCache};
pub use heuristic::{heuristic_potential, HeuristicPotential};
pub use llm::{LlmConfig, LlmPotential};
pub use prompt::{parse_severity, render_prompt, FewShot, PromptSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Llm,
    Heuristic,
    Cache,
    Fallback,
}

/// Severity in `[0, 1]` and where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityScore {
    pub value: f64,
    pub source: ScoreSource,
}

impl SeverityScore {
    /// Score used whenever a reply or request fails.
    pub const FALLBACK: SeverityScore = SeverityScore { value: 0.5, source: ScoreSource::Fallback };

    pub fn new(value: f64, source: ScoreSource) -> Self {
        let value = if value.is_nan() { 0.5 } else { value.clamp(0.0, 1.0) };
        Self { value, source }
    }
}

pub trait PotentialProvider: Send + Sync {
    fn potential(&self, window: ArrayView2<'_, f64>) -> SeverityScore;

    /// Upper bound on concurrent [`potential`](Self::potential) calls worth issuing.
    fn concurrency(&self) -> usize {
        1
    }
}

/// Constant zero potential; shaping becomes a no-op.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPotential;

impl PotentialProvider for ZeroPotential {
    fn potential(&self, _window: ArrayView2<'_, f64>) -> SeverityScore {
        SeverityScore { value: 0.0, source: ScoreSource::Heuristic }
    }
}

/// `r + gamma * phi_next - phi`.
pub fn shaped_reward(r: f64, phi_s: f64, phi_s_next: f64, gamma: f64) -> f64 {
    r + gamma * phi_s_next - phi_s
}

/// Scores every window, running up to `provider.concurrency()` calls at once.
/// Output order matches input order.
pub fn prefetch<P: PotentialProvider + ?Sized>(provider: &P, windows: &[Array2<f64>]) -> Vec<SeverityScore> {
    let workers = provider.concurrency().clamp(1, windows.len().max(1));
    if workers == 1 {
        return windows.iter().map(|w| provider.potential(w.view())).collect();
    }
    let next = AtomicUsize::new(0);
    let mut out = vec![SeverityScore::FALLBACK; windows.len()];
    let chunks: Vec<Vec<(usize, SeverityScore)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= windows.len() {
                            break local;
                        }
                        local.push((i, provider.potential(windows[i].view())));
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("potential worker panicked")).collect()
    });
    for (i, score) in chunks.into_iter().flatten() {
        out[i] = score;
    }
    out
}
