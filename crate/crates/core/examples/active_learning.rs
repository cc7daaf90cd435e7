//! One active-learning round: score candidates with an untrained Q-network, query the
//! smallest margins from a ground-truth oracle, then propagate labels over the window graph.
//!
//! ```text
//! cargo run --example active_learning
//! ```

use anomaly_rl::active::{
    apply_oracle, median_pairwise_distance, propagate, select_queries, Candidate, GroundTruthOracle, LabelStore,
    PropagationParams, Provenance,
};
use anomaly_rl::agent::{q_values, QNet, QNetArch};
use anomaly_rl::data::{normalize, SynthSpec};
use anomaly_rl::vae::flatten;

fn main() -> anomaly_rl::Result<()> {
    let n = 25;
    let series = normalize(&SynthSpec { t: 600, n_anomalies: 8, seed: 4, ..SynthSpec::default() }.generate()?.series)?;
    let net = QNet::new(QNetArch { dims: 1, hidden: 8 }, 1)?;

    let candidates: Vec<Candidate> = series
        .decided_indices(n)
        .map(|t| {
            let w = series.window(t, n)?;
            let (q0, q1) = q_values(&net, w)?;
            Ok(Candidate { series: series.id.clone(), t, q0, q1, window: w.to_owned() })
        })
        .collect::<anomaly_rl::Result<_>>()?;

    let store = LabelStore::new();
    // a few known labels of each class so propagation has something to spread
    for t in series.decided_indices(n).step_by(40) {
        store.insert(anomaly_rl::active::LabelRecord::new(&series.id, t, series.labels[t], Provenance::GroundTruth, 1.0))?;
    }
    let first_anomaly = series.labels.iter().position(|&l| l == 1).expect("series has anomalies");
    store.insert(anomaly_rl::active::LabelRecord::new(&series.id, first_anomaly, 1, Provenance::GroundTruth, 1.0))?;

    let batch = select_queries(&candidates, 10, &store);
    println!("querying {} windows:", batch.len());
    for q in &batch.queries {
        println!("  t={:>3} margin {:.5}", q.t, q.margin);
    }
    let oracle = GroundTruthOracle::new().with_series(&series.id, series.labels.clone());
    let outcome = apply_oracle(&batch, &oracle, &store)?;
    println!("oracle answered {} labels ({} anomalous)", outcome.labels.len(), outcome.labels.iter().filter(|r| r.label == 1).count());

    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut unlabeled_t = Vec::new();
    for t in series.decided_indices(n) {
        let f = flatten(series.window(t, n)?);
        match store.get(&series.id, t) {
            Some(r) => labeled.push((f, r.label)),
            None => {
                unlabeled.push(f);
                unlabeled_t.push(t);
            }
        }
    }
    let all: Vec<Vec<f64>> = labeled.iter().map(|(f, _)| f.clone()).chain(unlabeled.iter().cloned()).collect();
    let sigma = median_pairwise_distance(&all);
    let params = PropagationParams { sigma, iters: 50, k_lp: 10, theta: 0.9, tol: 1e-9 };
    let picks = propagate(&labeled, &unlabeled, &params)?;
    println!("{} seeds, sigma {sigma:.3}; top pseudo-labels:", labeled.len());
    for p in &picks {
        let t = unlabeled_t[p.index];
        println!("  t={t:>3} label {} confidence {:.4} (truth {})", p.label, p.confidence, series.labels[t]);
    }
    Ok(())
}
