//! Severity potentials: the deterministic heuristic, the prompt an LLM would see,
//! and shaped rewards for a short trajectory.
//!
//! Set `LLM_BASE_URL` (and optionally `LLM_MODEL`, `OPENAI_API_KEY`) to also score the
//! windows with an OpenAI-compatible endpoint.
//!
//! ```text
//! cargo run --example potentials
//! ```

use anomaly_rl::potential::{
    heuristic_potential, render_prompt, shaped_reward, LlmConfig, LlmPotential, PotentialProvider, PromptSpec,
};
use ndarray::Array2;

fn main() -> anomaly_rl::Result<()> {
    let n = 25;
    let flat = Array2::<f64>::zeros((n, 1));
    let wave = Array2::from_shape_fn((n, 1), |(i, _)| (i as f64 / 4.0).sin());
    let spike = Array2::from_shape_fn((n, 1), |(i, _)| if i == n - 1 { 6.0 } else { (i as f64 / 4.0).sin() });
    let step = Array2::from_shape_fn((n, 1), |(i, _)| if i >= 3 { 5.0 } else { 0.0 });
    let windows = [("flat", flat), ("sine", wave), ("sine + spike", spike), ("step to 5.0", step)];

    println!("heuristic severity");
    for (name, w) in &windows {
        println!("  {name:>13}: {:.3}", heuristic_potential(w.view()).value);
    }

    let prompt = render_prompt(windows[2].1.view(), &PromptSpec::default());
    let tail: String = prompt.lines().rev().take(3).collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>().join("\n");
    println!("\nprompt tail ({} chars total):\n{tail}", prompt.len());

    let phi: Vec<f64> = windows.iter().map(|(_, w)| heuristic_potential(w.view()).value).collect();
    println!("\nshaped rewards, r = 1, gamma = 0.99");
    for i in 0..phi.len() - 1 {
        println!("  {} -> {}: {:+.4}", windows[i].0, windows[i + 1].0, shaped_reward(1.0, phi[i], phi[i + 1], 0.99));
    }

    if let Ok(base_url) = std::env::var("LLM_BASE_URL") {
        let mut cfg = LlmConfig { base_url, ..LlmConfig::default() };
        if let Ok(model) = std::env::var("LLM_MODEL") {
            cfg.model = model;
        }
        let llm = LlmPotential::new(cfg)?;
        println!("\nLLM severity");
        for (name, w) in &windows {
            let s = llm.potential(w.view());
            println!("  {name:>13}: {:.3} ({:?})", s.value, s.source);
        }
    }
    Ok(())
}
