use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{PotentialProvider, ScoreSource, SeverityScore};

/// Consistency constant making the MAD a standard-deviation estimate under normality.
const MAD_SCALE: f64 = 1.4826;
const EPS: f64 = 1e-6;

/// Deterministic severity: the largest robust z-score in the window, divided by `z_cap`
/// and clipped to `[0, 1]`.
///
/// The robust scale is `max(1.4826 * MAD + 1e-6, scale_floor)`. The floor keeps a window
/// whose MAD collapses to zero (a step or an isolated spike) from scoring an unbounded z;
/// with the defaults a jump of 5 units on an otherwise flat window scores exactly 0.75.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicPotential {
    pub z_cap: f64,
    pub scale_floor: f64,
}

impl Default for HeuristicPotential {
    fn default() -> Self {
        Self { z_cap: 20.0 / 3.0, scale_floor: 1.0 }
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

impl HeuristicPotential {
    fn column_max_z(&self, col: ArrayView1<'_, f64>) -> f64 {
        let mut sorted: Vec<f64> = col.to_vec();
        sorted.sort_by(f64::total_cmp);
        let med = median(&sorted);
        let mut dev: Vec<f64> = sorted.iter().map(|x| (x - med).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let scale = (MAD_SCALE * median(&dev) + EPS).max(self.scale_floor);
        dev.last().copied().unwrap_or(0.0) / scale
    }

    pub fn score(&self, window: ArrayView2<'_, f64>) -> f64 {
        if window.is_empty() {
            return 0.0;
        }
        let z = window.axis_iter(Axis(1)).map(|c| self.column_max_z(c)).fold(0.0, f64::max);
        (z / self.z_cap).clamp(0.0, 1.0)
    }
}

impl PotentialProvider for HeuristicPotential {
    fn potential(&self, window: ArrayView2<'_, f64>) -> SeverityScore {
        SeverityScore { value: self.score(window), source: ScoreSource::Heuristic }
    }
}

/// Heuristic potential with default calibration.
pub fn heuristic_potential(window: ArrayView2<'_, f64>) -> SeverityScore {
    HeuristicPotential::default().potential(window)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;

    use super::*;

    fn column(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
    }

    #[test]
    fn anchor_windows() {
        let zeros = Array2::<f64>::zeros((25, 1));
        assert_eq!(heuristic_potential(zeros.view()).value, 0.0);

        let mut plateau = vec![5.0; 25];
        plateau[..3].fill(0.0);
        let v = heuristic_potential(column(&plateau).view()).value;
        assert!((v - 0.75).abs() <= 0.05, "plateau scored {v}");

        let constant = column(&[3.3; 25]);
        assert_eq!(heuristic_potential(constant.view()).value, 0.0);
    }

    #[test]
    fn short_plateau_scores_like_long_one() {
        let mut w = vec![0.0; 25];
        w[20..].fill(5.0);
        assert_abs_diff_eq!(heuristic_potential(column(&w).view()).value, 0.75, epsilon = 1e-6);
    }

    #[test]
    fn multivariate_takes_worst_channel() {
        let mut w = Array2::<f64>::zeros((10, 3));
        w[[9, 2]] = 100.0;
        assert_eq!(heuristic_potential(w.view()).value, 1.0);
        assert_eq!(heuristic_potential(w.column(0).insert_axis(Axis(1))).value, 0.0);
    }

    proptest! {
        #[test]
        fn translation_invariant(
            vals in proptest::collection::vec(-3.0f64..3.0, 5..30),
            c in -50.0f64..50.0,
        ) {
            let w = column(&vals);
            let shifted = w.mapv(|x| x + c);
            let a = heuristic_potential(w.view()).value;
            let b = heuristic_potential(shifted.view()).value;
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
