mod common;

use anomaly_rl::potential::{LlmConfig, LlmPotential, PotentialCache, PotentialProvider, ScoreSource};
use common::StubServer;
use ndarray::{Array2, ArrayView2};
use serde_json::Value;

fn config(server: &StubServer, retries: u32) -> LlmConfig {
    LlmConfig {
        base_url: server.base_url.clone(),
        model: "stub-model".into(),
        api_key_env: None,
        retries,
        backoff_ms: 1,
        timeout_ms: 5_000,
        ..LlmConfig::default()
    }
}

fn window() -> Array2<f64> {
    Array2::from_shape_fn((25, 1), |(i, _)| if i >= 3 { 5.0 } else { 0.0 })
}

#[test]
fn parses_severity_from_completion() {
    let server = StubServer::completion("{\"severity\":0.3}");
    let llm = LlmPotential::new(config(&server, 2)).unwrap();
    let s = llm.potential(window().view());
    assert_eq!(s.value, 0.3);
    assert_eq!(s.source, ScoreSource::Llm);
    assert_eq!(server.hits(), 1);

    let body: Value = serde_json::from_str(&server.request_bodies()[0]).unwrap();
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["temperature"], 0);
    assert_eq!(body["max_tokens"], 32);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
    assert!(body["messages"][1]["content"].as_str().unwrap().contains("Sensor readings: [0.00, 0.00, 0.00, 5.00"));
}

#[test]
fn out_of_range_severity_is_clamped() {
    let server = StubServer::completion("Here you go: {\"severity\": 1.7}");
    let llm = LlmPotential::new(config(&server, 0)).unwrap();
    assert_eq!(llm.potential(window().view()).value, 1.0);
    let server = StubServer::completion("{\"severity\": -0.2}");
    let llm = LlmPotential::new(config(&server, 0)).unwrap();
    assert_eq!(llm.potential(window().view()).value, 0.0);
}

#[test]
fn identical_window_is_served_from_cache() {
    let server = StubServer::completion("{\"severity\": 0.42}");
    let llm = LlmPotential::new(config(&server, 0)).unwrap();
    let first = llm.potential(window().view());
    let second = llm.potential(window().view());
    assert_eq!(first.source, ScoreSource::Llm);
    assert_eq!(second.source, ScoreSource::Cache);
    assert_eq!(second.value, 0.42);
    assert_eq!(server.hits(), 1);
    assert_eq!(llm.requests_sent(), 1);
}

#[test]
fn server_errors_retry_then_fall_back() {
    let server = StubServer::start(500, "{\"error\": \"boom\"}");
    let retries = 3;
    let llm = LlmPotential::new(config(&server, retries)).unwrap();
    let s = llm.potential(window().view());
    assert_eq!((s.value, s.source), (0.5, ScoreSource::Fallback));
    assert_eq!(server.hits(), retries as usize + 1);
    assert!(llm.cache().is_empty());
    llm.potential(window().view());
    assert_eq!(server.hits(), 2 * (retries as usize + 1));
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::start(400, "{}");
    let llm = LlmPotential::new(config(&server, 3)).unwrap();
    assert_eq!(llm.potential(window().view()).source, ScoreSource::Fallback);
    assert_eq!(server.hits(), 1);
}

#[test]
fn refusal_falls_back_without_caching() {
    let server = StubServer::completion("sorry, I cannot");
    let llm = LlmPotential::new(config(&server, 0)).unwrap();
    let s = llm.potential(window().view());
    assert_eq!((s.value, s.source), (0.5, ScoreSource::Fallback));
    assert!(llm.cache().is_empty());
}

#[test]
fn unreachable_endpoint_falls_back() {
    let cfg = LlmConfig { base_url: "http://127.0.0.1:9".into(), api_key_env: None, retries: 1, backoff_ms: 1, ..LlmConfig::default() };
    let llm = LlmPotential::new(cfg).unwrap();
    assert_eq!(llm.potential(window().view()).source, ScoreSource::Fallback);
    assert_eq!(llm.requests_sent(), 2);
}

#[test]
fn cache_persists_between_clients() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let server = StubServer::completion("{\"severity\": 0.9}");
    let cfg = LlmConfig { cache_path: Some(path.clone()), ..config(&server, 0) };
    let llm = LlmPotential::new(cfg.clone()).unwrap();
    let w: ArrayView2<f64> = ArrayView2::from_shape((2, 1), &[1.0, 2.0]).unwrap();
    llm.potential(w);
    llm.persist().unwrap();
    assert_eq!(PotentialCache::load(&path).unwrap().len(), 1);

    let again = LlmPotential::new(cfg).unwrap();
    assert_eq!(again.potential(w).source, ScoreSource::Cache);
    assert_eq!(server.hits(), 1);
}
