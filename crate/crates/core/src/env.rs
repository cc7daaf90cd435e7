//! Sequential-decision environment over one series.
//!
//! At every decided index the agent sees the current window twice, once tagged
//! with action flag 0 and once with flag 1, and picks one of the two.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Series;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    Normal = 0,
    Anomalous = 1,
}

impl Action {
    pub const BOTH: [Action; 2] = [Action::Normal, Action::Anomalous];

    pub fn flag(self) -> f64 {
        self as u8 as f64
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a as u8
    }
}

impl TryFrom<u8> for Action {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Action::Normal),
            1 => Ok(Action::Anomalous),
            other => Err(Error::InvalidArgs(format!("action {other} is not 0 or 1"))),
        }
    }
}

/// A window augmented with a constant action-indicator column.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowState {
    pub window: Array2<f64>,
    pub action: Action,
}

impl WindowState {
    /// Row-major `n_steps x (d + 1)` layout, flag in the last column.
    pub fn flattened(&self) -> Vec<f64> {
        let flag = self.action.flag();
        let mut out = Vec::with_capacity(self.window.nrows() * (self.window.ncols() + 1));
        for row in self.window.rows() {
            out.extend(row.iter().copied());
            out.push(flag);
        }
        out
    }
}

pub fn make_states(window: ArrayView2<'_, f64>) -> Result<(WindowState, WindowState)> {
    if window.nrows() == 0 || window.ncols() == 0 {
        return Err(Error::ShapeError(format!("empty window {:?}", window.shape())));
    }
    let owned = window.to_owned();
    Ok((
        WindowState { window: owned.clone(), action: Action::Normal },
        WindowState { window: owned, action: Action::Anomalous },
    ))
}

/// Confusion-matrix reward: TP +5, TN +1, FP -1, FN -5.
pub fn reward_r1(action: Action, label: u8) -> f64 {
    match (action, label != 0) {
        (Action::Anomalous, true) => 5.0,
        (Action::Normal, false) => 1.0,
        (Action::Anomalous, false) => -1.0,
        (Action::Normal, true) => -5.0,
    }
}

/// Largest episode return obtainable from the known labels.
pub fn max_episode_r1(labels: &[Option<u8>]) -> f64 {
    labels.iter().flatten().map(|&l| reward_r1(if l == 1 { Action::Anomalous } else { Action::Normal }, l)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub t: usize,
    pub action: Action,
    /// `None` where no label is known yet; such steps earn no classification reward.
    pub label: Option<u8>,
    pub r1: f64,
    pub done: bool,
}

/// One pass over one series.
#[derive(Debug)]
pub struct Episode<'a> {
    series: &'a Series,
    labels: Vec<Option<u8>>,
    n_steps: usize,
    t: usize,
    done: bool,
}

impl<'a> Episode<'a> {
    /// Episode rewarded against the series' own ground truth.
    pub fn new(series: &'a Series, n_steps: usize) -> Result<Self> {
        let labels = series.labels.iter().map(|&l| Some(l)).collect();
        Self::with_labels(series, n_steps, labels)
    }

    /// Episode rewarded against a partial label view (one entry per row).
    pub fn with_labels(series: &'a Series, n_steps: usize, labels: Vec<Option<u8>>) -> Result<Self> {
        if n_steps == 0 || series.len() < n_steps {
            return Err(Error::EmptySeries { len: series.len(), n_steps });
        }
        if labels.len() != series.len() {
            return Err(Error::LengthMismatch { left: labels.len(), right: series.len() });
        }
        Ok(Self { series, labels, n_steps, t: n_steps - 1, done: false })
    }

    pub fn series(&self) -> &'a Series {
        self.series
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.labels
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn decision_count(&self) -> usize {
        self.series.len() + 1 - self.n_steps
    }

    pub fn window(&self) -> ArrayView2<'a, f64> {
        self.series.window(self.t, self.n_steps).expect("cursor stays in range")
    }

    /// Window after the current one, or `None` at the final decision.
    pub fn next_window(&self) -> Option<ArrayView2<'a, f64>> {
        (self.t + 1 < self.series.len()).then(|| self.series.window(self.t + 1, self.n_steps).expect("checked"))
    }

    pub fn states(&self) -> Result<(WindowState, WindowState)> {
        make_states(self.window())
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let label = self.labels[self.t];
        let r1 = label.map_or(0.0, |l| reward_r1(action, l));
        let done = self.t + 1 >= self.series.len();
        let outcome = StepOutcome { t: self.t, action, label, r1, done };
        if done {
            self.done = true;
        } else {
            self.t += 1;
        }
        Ok(outcome)
    }
}
