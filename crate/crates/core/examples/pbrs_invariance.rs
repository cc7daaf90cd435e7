//! Shaping a random MDP with a state potential leaves its optimal policy alone,
//! while a reward bonus that ignores the potential structure can change it.
//!
//! ```text
//! cargo run --example pbrs_invariance
//! ```

use anomaly_rl::potential::mdp::{greedy_policy, min_action_gap, TabularMdp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anomaly_rl::Result<()> {
    let gamma = 0.9;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seed in 0..5 {
        let mdp = TabularMdp::random(6, 2, seed);
        let q = mdp.value_iteration(gamma, 1e-12)?;
        let phi: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let shaped = mdp.shaped(&phi, gamma).value_iteration(gamma, 1e-12)?;

        // same bonus phi[s'] with no discount or subtraction
        let mut bonus = mdp.clone();
        for rs in &mut bonus.rewards {
            for row in rs.iter_mut() {
                for (s2, r) in row.iter_mut().enumerate() {
                    *r += 5.0 * phi[s2];
                }
            }
        }
        let naive = bonus.value_iteration(gamma, 1e-12)?;

        println!(
            "mdp {seed}: policy {:?}, shaped {:?}, naive bonus {:?} (min gap {:.3})",
            greedy_policy(&q),
            greedy_policy(&shaped),
            greedy_policy(&naive),
            min_action_gap(&q)
        );
    }
    Ok(())
}
