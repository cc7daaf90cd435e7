use anomaly_rl::potential::{parse_severity, render_prompt, PromptSpec, ScoreSource};
use ndarray::array;

#[test]
fn multivariate_prompt_matches_golden_file() {
    let window = array![[1.0, 3.0], [0.0, -2.0], [2.5, 0.5]];
    let expected = include_str!("golden/multivariate_prompt.txt");
    assert_eq!(render_prompt(window.view(), &PromptSpec::default()), expected);
}

#[test]
fn univariate_prompt_lists_readings_directly() {
    let window = array![[0.0], [-0.001], [5.0]];
    let p = render_prompt(window.view(), &PromptSpec::default());
    assert!(p.ends_with("Sensor readings: [0.00, 0.00, 5.00]\nRespond with a single JSON object {\"severity\": v} and nothing else.\n"));
}

#[test]
fn severity_replies() {
    assert_eq!(parse_severity("{\"severity\": 0.75}").value, 0.75);
    assert_eq!(parse_severity("{\"severity\": 1.7}").value, 1.0);
    let refusal = parse_severity("sorry, I cannot");
    assert_eq!((refusal.value, refusal.source), (0.5, ScoreSource::Fallback));
    assert_eq!(parse_severity("{\"note\": 1} then {\"severity\": 0.2}").value, 0.2);
    assert_eq!(parse_severity("{\"severity\": \"high\"}").source, ScoreSource::Fallback);
}
