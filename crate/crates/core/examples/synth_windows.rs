//! Generate a spike series, split it, and look at the flag-augmented states.
//!
//! ```text
//! cargo run --example synth_windows
//! ```

use anomaly_rl::data::{temporal_split, Normalizer, SynthSpec};
use anomaly_rl::env::make_states;

fn main() -> anomaly_rl::Result<()> {
    let spec = SynthSpec { t: 400, n_anomalies: 6, seed: 3, ..SynthSpec::default() };
    let out = spec.generate()?;
    let series = out.series;
    println!("series {}: {} rows, {} dims, anomalies at {:?}", series.id, series.len(), series.dims(), out.positions);

    let n_steps = 25;
    let (train, test) = temporal_split(&series, 0.5, n_steps)?;
    let norm = Normalizer::fit(train.values.view());
    let (train, test) = (norm.apply(&train), norm.apply(&test));
    println!(
        "train rows {} (decided {:?}), test rows {} starting at t={} (decided {:?})",
        train.len(),
        train.decided_indices(n_steps),
        test.len(),
        test.origin,
        test.decided_indices(n_steps),
    );

    let t = out.positions[0];
    let window = series.window(t, n_steps)?;
    let (s0, s1) = make_states(window)?;
    let (f0, f1) = (s0.flattened(), s1.flattened());
    println!("window ending at t={t}: {} values, {} once flagged", window.len(), f0.len());
    println!("last row, flag 0: {:?}", &f0[f0.len() - 2..]);
    println!("last row, flag 1: {:?}", &f1[f1.len() - 2..]);
    Ok(())
}
