//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Set `ACCEPTANCE_SKIP_E2E=1` to leave out the end-to-end training run.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use anomaly_rl::active::{propagate, propagation_probabilities, PropagationParams};
use anomaly_rl::agent::{td_loss_and_grad, AgentConfig, DqnAgent, QNet, QNetArch, Transition};
use anomaly_rl::config::RunConfig;
use anomaly_rl::data::{Normalizer, SynthSpec};
use anomaly_rl::env::{reward_r1, Action};
use anomaly_rl::eval::f1_score;
use anomaly_rl::pipeline::cmd_train;
use anomaly_rl::potential::mdp::{greedy_policy, min_action_gap, TabularMdp};
use anomaly_rl::potential::{
    heuristic_potential, shaped_reward, HeuristicPotential, LlmConfig, LlmPotential, PotentialProvider, ScoreSource,
};
use anomaly_rl::vae::{flatten, train_vae, LambdaController, VaeArch, VaeModel, VaeTrainConfig};
use common::{harmonic_solution, max_relative_error, numeric_gradient, solve_dense, StubServer};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// name, (prec, rec, f1) on the first dataset, then the second
const BENCHMARK_ROWS: [(&str, [f64; 3], [f64; 3]); 9] = [
    ("THOC", [0.1495, 0.8326, 0.2534], [0.0997, 0.5307, 0.1679]),
    ("TranAD", [0.4185, 0.8712, 0.5654], [0.2649, 0.5661, 0.3609]),
    ("TS2Vec", [0.3929, 0.6305, 0.4841], [0.1033, 0.5295, 0.1728]),
    ("DCdetector", [0.0598, 0.9434, 0.1124], [0.0432, 0.9967, 0.0828]),
    ("TimesNet", [0.3808, 0.7883, 0.5135], [0.2450, 0.5474, 0.3385]),
    ("CARLA", [0.5747, 0.9755, 0.7233], [0.4276, 0.6362, 0.5114]),
    ("GPT-3.5 shaping", [0.0742, 0.9130, 0.1372], [0.5370, 0.4061, 0.4625]),
    ("Llama-3.2-3B shaping", [0.6051, 0.9565, 0.7413], [0.3813, 0.8685, 0.5300]),
    ("Phi-2 shaping", [0.6666, 0.4761, 0.5555], [0.8461, 0.2541, 0.3908]),
];

fn metric_consistency() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for (name, a, b) in BENCHMARK_ROWS {
        for [p, r, f] in [a, b] {
            let err = (f1_score(p, r) - f).abs();
            ensure(err <= 5e-4, || format!("{name}: F1({p}, {r}) = {:.4}, reported {f}", f1_score(p, r)))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("18 rows, max |dF1| = {worst:.1e}"))
}

fn reward_table() -> Result<String, String> {
    let cases = [(Action::Anomalous, 1, 5.0), (Action::Normal, 0, 1.0), (Action::Anomalous, 0, -1.0), (Action::Normal, 1, -5.0)];
    for (a, l, want) in cases {
        ensure(reward_r1(a, l) == want, || format!("r1({a:?}, {l}) = {}", reward_r1(a, l)))?;
    }
    Ok("TP +5, TN +1, FP -1, FN -5".into())
}

/// Exact optimal action values by policy iteration with dense linear solves.
fn policy_iteration(mdp: &TabularMdp, gamma: f64) -> Vec<Vec<f64>> {
    let n = mdp.n_states();
    let expected = |s: usize, a: usize, v: &[f64]| -> f64 {
        (0..n).map(|s2| mdp.transitions[s][a][s2] * (mdp.rewards[s][a][s2] + gamma * v[s2])).sum()
    };
    let mut policy = vec![0usize; n];
    loop {
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![vec![0.0]; n];
        for s in 0..n {
            a[s][s] += 1.0;
            for s2 in 0..n {
                a[s][s2] -= gamma * mdp.transitions[s][policy[s]][s2];
                b[s][0] += mdp.transitions[s][policy[s]][s2] * mdp.rewards[s][policy[s]][s2];
            }
        }
        let v: Vec<f64> = solve_dense(a, b).into_iter().map(|row| row[0]).collect();
        let q: Vec<Vec<f64>> = (0..n).map(|s| (0..mdp.n_actions(s)).map(|a| expected(s, a, &v)).collect()).collect();
        let next = greedy_policy(&q);
        let stable = (0..n).all(|s| q[s][next[s]] <= q[s][policy[s]] + 1e-12);
        if stable {
            return q;
        }
        policy = next;
    }
}

fn pbrs_invariance() -> Result<String, String> {
    let start = Instant::now();
    let gamma = 0.9;
    let (mut solved, mut seed, mut min_gap) = (0, 0u64, f64::INFINITY);
    while solved < 10 {
        seed += 1;
        let mdp = TabularMdp::random(6, 2, seed);
        let exact = policy_iteration(&mdp, gamma);
        let gap = min_action_gap(&exact);
        if gap < 1e-6 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let phi: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let shaped = mdp.shaped(&phi, gamma).value_iteration(gamma, 1e-12).map_err(|e| e.to_string())?;
        ensure(greedy_policy(&shaped) == greedy_policy(&exact), || format!("seed {seed}: policies differ"))?;
        min_gap = min_gap.min(gap);
        solved += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1.0, || format!("took {secs:.2}s"))?;
    Ok(format!("10 MDPs, min action gap {min_gap:.2e}, {:.0} ms", secs * 1e3))
}

fn telescoping() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.random_range(1..200);
        let phi: Vec<f64> = (0..=len).map(|_| rng.random_range(0.0..1.0)).collect();
        let rewards: Vec<f64> = (0..len).map(|_| rng.random_range(-5.0..5.0)).collect();
        let shaped: f64 = (0..len).map(|i| shaped_reward(rewards[i], phi[i], phi[i + 1], 1.0)).sum();
        let plain: f64 = rewards.iter().sum();
        worst = worst.max((shaped - plain - (phi[len] - phi[0])).abs());
    }

    // one agent episode with gamma 1: the terminal step shapes against its own window
    let series = SynthSpec { t: 120, n_anomalies: 3, seed: 5, ..SynthSpec::default() }.generate().map_err(|e| e.to_string())?.series;
    let cfg = AgentConfig { hidden: 4, gamma: 1.0, warmup_steps: 50, batch_size: 8, ..AgentConfig::default() };
    let mut agent = DqnAgent::new(1, cfg, 3).map_err(|e| e.to_string())?;
    let mut lambda = LambdaController::new(0.3, 0.0, 0.0, 0.0, 1.0).map_err(|e| e.to_string())?;
    let labels = series.labels.iter().map(|&l| Some(l)).collect();
    let report = agent
        .run_episode(&series, labels, 25, None, &mut lambda, &HeuristicPotential::default())
        .map_err(|e| e.to_string())?;
    let b = &report.breakdown;
    let expected = b.last().unwrap().phi_next - b[0].phi_s;
    worst = worst.max((report.shaped_sum - report.total_sum - expected).abs());
    ensure(worst <= 1e-9, || format!("residual {worst:e}"))?;
    Ok(format!("21 trajectories, max residual {worst:.1e}"))
}

fn gradient_checks() -> Result<String, String> {
    let start = Instant::now();
    let (h, floor) = (1e-5, 1e-6);
    let mut worst: f64 = 0.0;

    let mut vae = VaeModel::new(VaeArch { input: 4, hidden: vec![3], latent: 2 }, 17).map_err(|e| e.to_string())?;
    let batch = vec![vec![0.3, -1.2, 0.8, 0.05], vec![-0.4, 0.9, 1.5, -2.0]];
    let noise = vec![vec![0.7, -0.2], vec![-1.1, 0.4]];
    vae.elbo_loss_and_grad(&batch, &noise).map_err(|e| e.to_string())?;
    let mut probe = vae.clone();
    let numeric = numeric_gradient(&vae.params.values, h, |p| {
        probe.params.values.copy_from_slice(p);
        probe.elbo_loss(&batch, &noise).unwrap()
    });
    worst = worst.max(max_relative_error(&vae.params.grads, &numeric, floor).0);

    let arch = QNetArch { dims: 1, hidden: 2 };
    let mut net = QNet::new(arch, 5).map_err(|e| e.to_string())?;
    let target = QNet::new(arch, 6).map_err(|e| e.to_string())?;
    let transitions = [
        Transition {
            window: array![[0.1], [0.5], [-0.7]],
            action: Action::Anomalous,
            reward: 1.7,
            next_window: array![[0.5], [-0.7], [3.0]],
            done: false,
        },
        Transition {
            window: array![[0.5], [-0.7], [3.0]],
            action: Action::Normal,
            reward: -4.2,
            next_window: array![[0.5], [-0.7], [3.0]],
            done: true,
        },
    ];
    let batch: Vec<&Transition> = transitions.iter().collect();
    td_loss_and_grad(&mut net, &target, &batch, 0.9).map_err(|e| e.to_string())?;
    let mut probe = net.clone();
    let numeric = numeric_gradient(&net.params.values, h, |p| {
        probe.params.values.copy_from_slice(p);
        td_loss_and_grad(&mut probe, &target, &batch, 0.9).unwrap()
    });
    worst = worst.max(max_relative_error(&net.params.grads, &numeric, floor).0);

    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-4, || format!("relative error {worst:e}"))?;
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{} VAE + {} Q-net parameters, max relative error {worst:.1e}", vae.params.len(), net.params.len()))
}

fn lambda_controller() -> Result<String, String> {
    let ctrl = |l, a, t| LambdaController::new(l, a, t, 0.0, 2.0).unwrap();
    let raised = ctrl(1.0, 0.01, 100.0).updated(50.0).lambda;
    ensure((raised - 1.5).abs() < 1e-12, || format!("1.0 -> {raised}"))?;
    let held = ctrl(1.0, 0.01, 100.0).updated(100.0).lambda;
    ensure(held == 1.0, || format!("at target -> {held}"))?;
    let clipped = ctrl(1.0, 1.0, 100.0).updated(0.0).lambda;
    ensure(clipped == 2.0, || format!("clip -> {clipped}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut c = LambdaController::new(0.5, 0.05, 10.0, 0.1, 1.7).unwrap();
    for i in 0..10_000 {
        c.alpha = rng.random_range(0.0..2.0);
        c = c.updated(rng.random_range(-100.0..100.0));
        ensure((0.1..=1.7).contains(&c.lambda), || format!("update {i}: lambda {}", c.lambda))?;
    }
    Ok("1.0 -> 1.5, fixed point, clip at 2.0, 10^4 bounded updates".into())
}

fn label_propagation() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.random_range(1..4);
        let n = rng.random_range(4..=20);
        let n_labeled = rng.random_range(2..n);
        let mut point = || (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let mut labeled = Vec::new();
        for i in 0..n_labeled {
            labeled.push((point(), (i % 2) as u8));
        }
        let unlabeled: Vec<Vec<f64>> = (n_labeled..n).map(|_| point()).collect();
        let sigma = 1.0;
        let got = propagation_probabilities(&labeled, &unlabeled, sigma, 1_000_000, 1e-15)
            .map_err(|e| e.to_string())?
            .ok_or("no probabilities")?;
        for (a, b) in got.iter().zip(harmonic_solution(&labeled, &unlabeled, sigma)) {
            worst = worst.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
        }
    }
    ensure(worst <= 1e-8, || format!("max difference {worst:e}"))?;

    let tie = vec![(vec![-1.0], 0u8), (vec![1.0], 1u8)];
    let mid = vec![vec![0.0]];
    let p = propagation_probabilities(&tie, &mid, 1.0, 100, 0.0).map_err(|e| e.to_string())?.ok_or("no probabilities")?;
    ensure((p[0][0] - 0.5).abs() < 1e-12, || format!("tie confidence {:?}", p[0]))?;
    let params = PropagationParams { sigma: 1.0, iters: 100, k_lp: 5, theta: 0.9, tol: 0.0 };
    let picks = propagate(&tie, &mid, &params).map_err(|e| e.to_string())?;
    ensure(picks.is_empty(), || format!("tie was picked: {picks:?}"))?;
    Ok(format!("20 instances, max difference {worst:.1e}; tie at 0.5 excluded"))
}

fn vae_separation() -> Result<String, String> {
    let n = 25;
    let out = SynthSpec { t: 2000, n_anomalies: 20, seed: 21, ..SynthSpec::default() }.generate().map_err(|e| e.to_string())?;
    let raw = out.series;
    let norm = Normalizer::fit(raw.values.view()).apply(&raw);
    let clean = |t: usize| raw.labels[t + 1 - n..=t].iter().all(|&l| l == 0);
    let window = |t: usize| flatten(norm.window(t, n).unwrap());
    let half = raw.len() / 2;
    let train: Vec<Vec<f64>> = (n - 1..half).filter(|&t| clean(t)).map(window).collect();
    let held: Vec<Vec<f64>> = (half..raw.len()).filter(|&t| clean(t)).map(window).collect();
    let spikes: Vec<Vec<f64>> = out.positions.iter().map(|&t| window(t)).collect();

    let mut vae = VaeModel::new(VaeArch::standard(n), 4).map_err(|e| e.to_string())?;
    train_vae(&mut vae, &train, &VaeTrainConfig { epochs: 30, ..VaeTrainConfig::default() }).map_err(|e| e.to_string())?;
    let median = |ws: &[Vec<f64>]| {
        let mut e: Vec<f64> = ws.iter().map(|w| vae.recon_error(w).unwrap()).collect();
        e.sort_by(f64::total_cmp);
        e[e.len() / 2]
    };
    let (normal, spike) = (median(&held), median(&spikes));
    let ratio = spike / normal;
    ensure(ratio >= 2.0, || format!("spike median {spike:.4} vs normal {normal:.4} (x{ratio:.2})"))?;
    Ok(format!("spike median {spike:.4}, held-out normal median {normal:.4}, ratio {ratio:.1}"))
}

fn end_to_end() -> Result<String, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.json");
    let mut cfg = RunConfig::load(&path).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    cfg.output_dir = dir.path().join("run");
    let start = Instant::now();
    let outcome = cmd_train(cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let get = |k: &str| outcome.metrics.get(k).and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
    let f1 = get("f1");
    let detail = format!("test F1 {f1:.3} (P {:.3}, R {:.3}) in {secs:.0}s", get("precision"), get("recall"));
    ensure(f1 >= 0.85 && secs <= 600.0, || detail.clone())?;
    Ok(detail)
}

fn heuristic_anchors() -> Result<String, String> {
    let zeros = Array2::<f64>::zeros((25, 1));
    let z = heuristic_potential(zeros.view()).value;
    ensure(z == 0.0, || format!("zeros scored {z}"))?;
    let plateau = Array2::from_shape_fn((25, 1), |(i, _)| if i >= 3 { 5.0 } else { 0.0 });
    let p = heuristic_potential(plateau.view()).value;
    ensure((p - 0.75).abs() <= 0.05, || format!("plateau scored {p}"))?;
    Ok(format!("zeros {z:.2}, zeros-then-5.0 {p:.2}"))
}

fn llm_client() -> Result<String, String> {
    let window = Array2::from_shape_fn((25, 1), |(i, _)| i as f64);
    let cfg = |server: &StubServer, retries| LlmConfig {
        base_url: server.base_url.clone(),
        api_key_env: None,
        retries,
        backoff_ms: 1,
        timeout_ms: 5_000,
        ..LlmConfig::default()
    };

    let ok = StubServer::completion("{\"severity\": 0.35}");
    let llm = LlmPotential::new(cfg(&ok, 0)).map_err(|e| e.to_string())?;
    let first = llm.potential(window.view());
    ensure(first.value == 0.35 && first.source == ScoreSource::Llm, || format!("parse gave {first:?}"))?;
    let second = llm.potential(window.view());
    ensure(second.source == ScoreSource::Cache && ok.hits() == 1, || format!("cache: {second:?}, {} requests", ok.hits()))?;

    let high = StubServer::completion("{\"severity\": 3.5}");
    let v = LlmPotential::new(cfg(&high, 0)).map_err(|e| e.to_string())?.potential(window.view()).value;
    ensure(v == 1.0, || format!("clamp gave {v}"))?;

    let failing = StubServer::start(503, "{}");
    let s = LlmPotential::new(cfg(&failing, 2)).map_err(|e| e.to_string())?.potential(window.view());
    ensure(s.value == 0.5 && s.source == ScoreSource::Fallback && failing.hits() == 3, || {
        format!("fallback gave {s:?} after {} requests", failing.hits())
    })?;
    Ok("parse, clamp, cache hit, 2 retries then fallback 0.5".into())
}

fn main() {
    let mut checks: Vec<(&str, Check)> = vec![
        ("metric consistency", metric_consistency),
        ("reward table", reward_table),
        ("shaping invariance", pbrs_invariance),
        ("telescoping", telescoping),
        ("gradient checks", gradient_checks),
        ("lambda controller", lambda_controller),
        ("label propagation", label_propagation),
        ("vae separation", vae_separation),
    ];
    if std::env::var_os("ACCEPTANCE_SKIP_E2E").is_none() {
        checks.push(("end-to-end synthetic", end_to_end));
    }
    checks.push(("heuristic anchors", heuristic_anchors));
    checks.push(("llm client", llm_client));

    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
