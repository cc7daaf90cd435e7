mod common;

use anomaly_rl::active::{propagate, propagation_probabilities, PropagationParams};
use common::harmonic_solution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Instance = (Vec<(Vec<f64>, u8)>, Vec<Vec<f64>>, f64);

/// Random instance with at most 20 points and at least one seed of each class.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..4);
    let n = rng.random_range(4..=20);
    let n_labeled = rng.random_range(2..n);
    let point = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
    let labeled = (0..n_labeled).map(|i| (point(&mut rng), if i < 2 { i as u8 } else { rng.random_range(0..2) })).collect();
    let unlabeled = (n_labeled..n).map(|_| point(&mut rng)).collect();
    (labeled, unlabeled, rng.random_range(0.5..2.0))
}

#[test]
fn iteration_converges_to_the_dense_solution() {
    for seed in 0..20 {
        let (labeled, unlabeled, sigma) = random_instance(seed);
        let iterative = propagation_probabilities(&labeled, &unlabeled, sigma, 1_000_000, 1e-15).unwrap().unwrap();
        let exact = harmonic_solution(&labeled, &unlabeled, sigma);
        for (a, b) in iterative.iter().zip(&exact) {
            for k in 0..2 {
                assert!((a[k] - b[k]).abs() <= 1e-8, "seed {seed}: {a:?} vs {b:?}");
            }
        }
    }
}

#[test]
fn picks_are_capped_and_sorted() {
    let (labeled, unlabeled, sigma) = random_instance(99);
    let params = PropagationParams { sigma, iters: 500, k_lp: 3, theta: 0.0, tol: 0.0 };
    let picks = propagate(&labeled, &unlabeled, &params).unwrap();
    assert_eq!(picks.len(), 3.min(unlabeled.len()));
    assert!(picks.windows(2).all(|w| w[0].confidence >= w[1].confidence));
    assert!(picks.iter().all(|p| (0.5..=1.0).contains(&p.confidence)));
}
