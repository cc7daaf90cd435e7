use std::fmt::Write as _;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ScoreSource, SeverityScore};

/// One anchor example shown to the model before the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShot {
    pub readings: Vec<f64>,
    /// Render a trailing `...` after the readings.
    pub elided: bool,
    pub severity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptSpec {
    pub system: String,
    pub few_shot: Vec<FewShot>,
    /// Decimal places used for query readings.
    pub precision: usize,
}

impl Default for PromptSpec {
    fn default() -> Self {
        Self {
            system: "You score windows of time-series sensor readings for anomalies. \
                     Reply with exactly one JSON object of the form {\"severity\": v}, where v is a number \
                     in [0, 1]: 0 means certainly normal and 1 means certainly anomalous. \
                     Do not output anything other than that JSON object."
                .to_string(),
            few_shot: vec![
                FewShot { readings: vec![0.0; 4], elided: true, severity: 0.0 },
                FewShot { readings: vec![0.0, 0.0, 0.0, 5.0, 5.0], elided: true, severity: 0.75 },
            ],
            precision: 2,
        }
    }
}

impl PromptSpec {
    pub fn validate(&self) -> Result<(), String> {
        match self.few_shot.iter().find(|f| !(0.0..=1.0).contains(&f.severity)) {
            Some(bad) => Err(format!("few-shot severity {} outside [0, 1]", bad.severity)),
            None => Ok(()),
        }
    }
}

fn fmt_reading(x: f64, precision: usize) -> String {
    let s = format!("{x:.precision$}");
    // "-0.00" and "0.00" are the same reading
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn reading_list(values: impl IntoIterator<Item = f64>, precision: usize, elided: bool) -> String {
    let mut parts: Vec<String> = values.into_iter().map(|v| fmt_reading(v, precision)).collect();
    if elided {
        parts.push("...".into());
    }
    format!("[{}]", parts.join(", "))
}

/// User message for one window. Univariate windows are listed directly; wider windows are
/// reduced to a per-timestep mean channel and max channel.
pub fn render_prompt(window: ArrayView2<'_, f64>, spec: &PromptSpec) -> String {
    let mut out = String::new();
    out.push_str("Examples:\n");
    for shot in &spec.few_shot {
        let _ = writeln!(
            out,
            "Sensor readings: {} -> {{\"severity\": {:.2}}}",
            reading_list(shot.readings.iter().copied(), 1, shot.elided),
            shot.severity
        );
    }
    out.push('\n');
    let d = window.ncols();
    if d <= 1 {
        let _ = writeln!(out, "Sensor readings: {}", reading_list(window.iter().copied(), spec.precision, false));
    } else {
        let means = window.axis_iter(Axis(0)).map(|r| r.sum() / d as f64);
        let maxes = window.axis_iter(Axis(0)).map(|r| r.fold(f64::NEG_INFINITY, |a, &b| a.max(b)));
        let _ = writeln!(out, "Sensor readings (mean of {d} channels): {}", reading_list(means, spec.precision, false));
        let _ = writeln!(out, "Sensor readings (max of {d} channels): {}", reading_list(maxes, spec.precision, false));
    }
    out.push_str("Respond with a single JSON object {\"severity\": v} and nothing else.\n");
    out
}

/// Extracts the first JSON object carrying a `severity` key. Values are clamped to
/// `[0, 1]`; a missing or non-numeric severity yields [`SeverityScore::FALLBACK`].
pub fn parse_severity(reply: &str) -> SeverityScore {
    for (start, _) in reply.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&reply[start..]).into_iter::<Value>();
        let Some(Ok(Value::Object(map))) = stream.next() else {
            continue;
        };
        if let Some(sev) = map.get("severity") {
            return match sev.as_f64() {
                Some(v) => SeverityScore::new(v, ScoreSource::Llm),
                None => SeverityScore::FALLBACK,
            };
        }
    }
    SeverityScore::FALLBACK
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn zero_window_prompt_carries_anchor() {
        let w = Array2::<f64>::zeros((25, 1));
        let p = render_prompt(w.view(), &PromptSpec::default());
        assert!(p.contains("Sensor readings: [0.0, 0.0, 0.0, 0.0, ...] -> {\"severity\": 0.00}"));
        assert!(p.contains("Sensor readings: [0.0, 0.0, 0.0, 5.0, 5.0, ...] -> {\"severity\": 0.75}"));
        assert!(p.contains("single JSON object"));
        assert_eq!(p, render_prompt(w.view(), &PromptSpec::default()));
    }

    #[test]
    fn negative_zero_is_normalized() {
        assert_eq!(fmt_reading(-0.001, 2), "0.00");
        assert_eq!(fmt_reading(-0.01, 2), "-0.01");
    }

    #[test]
    fn parse_cases() {
        assert_eq!(parse_severity(r#"{"severity": 0.75}"#), SeverityScore { value: 0.75, source: ScoreSource::Llm });
        assert_eq!(parse_severity(r#"{"severity": 1.7}"#).value, 1.0);
        assert_eq!(parse_severity(r#"{"severity": -2}"#).value, 0.0);
        assert_eq!(parse_severity("sorry, I cannot"), SeverityScore::FALLBACK);
        assert_eq!(parse_severity(r#"{"severity": "high"}"#), SeverityScore::FALLBACK);
        assert_eq!(parse_severity(r#"{"note": 1} then {"severity": 0.2}"#).value, 0.2);
        assert_eq!(parse_severity("Sure! ```json\n{\"severity\": 0.4}\n```").value, 0.4);
        assert_eq!(parse_severity("{broken"), SeverityScore::FALLBACK);
    }

    #[test]
    fn invalid_anchor_rejected() {
        let mut spec = PromptSpec::default();
        spec.few_shot[0].severity = 1.5;
        assert!(spec.validate().is_err());
        assert!(PromptSpec::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn parse_is_total(reply in ".{0,80}") {
            let s = parse_severity(&reply);
            prop_assert!((0.0..=1.0).contains(&s.value));
        }

        #[test]
        fn parse_clamps_any_number(v in -1e6f64..1e6) {
            let s = parse_severity(&format!("{{\"severity\": {v}}}"));
            prop_assert!((0.0..=1.0).contains(&s.value));
            prop_assert_eq!(s.source, ScoreSource::Llm);
        }
    }
}
