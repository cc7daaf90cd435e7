//! Confusion-matrix rewards and one episode under two fixed policies.
//!
//! ```text
//! cargo run --example reward_table
//! ```

use anomaly_rl::data::SynthSpec;
use anomaly_rl::env::{max_episode_r1, reward_r1, Action, Episode};

fn main() -> anomaly_rl::Result<()> {
    println!("{:>10} {:>6} {:>6}", "action", "label", "r1");
    for action in [Action::Normal, Action::Anomalous] {
        for label in [0, 1] {
            println!("{:>10} {:>6} {:>+6}", format!("{action:?}"), label, reward_r1(action, label));
        }
    }

    let series = SynthSpec { t: 300, n_anomalies: 5, seed: 1, ..SynthSpec::default() }.generate()?.series;
    let n_steps = 25;
    let best = max_episode_r1(&series.labels[n_steps - 1..].iter().map(|&l| Some(l)).collect::<Vec<_>>());

    for (name, policy) in [
        ("always normal", Box::new(|_: usize| Action::Normal) as Box<dyn Fn(usize) -> Action>),
        ("oracle", Box::new(|t: usize| if series.labels[t] == 1 { Action::Anomalous } else { Action::Normal })),
    ] {
        let mut ep = Episode::new(&series, n_steps)?;
        let mut total = 0.0;
        while !ep.is_done() {
            let t = ep.t();
            total += ep.step(policy(t))?.r1;
        }
        println!("{name:>14}: episode r1 {total:+} of {best:+}");
    }
    Ok(())
}
