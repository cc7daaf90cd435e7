//! Point-wise metrics, the optional point-adjusted variant, and the on-disk report.
//!
//! ```text
//! cargo run --example metrics_report
//! ```

use anomaly_rl::eval::{confusion, emit_report, f1_score, point_adjust, prf1, ReportOptions, SeriesPrediction};
use ndarray::Array2;

fn main() -> anomaly_rl::Result<()> {
    let truth = [0, 0, 1, 1, 1, 0, 0, 0, 1, 0];
    let pred = [0, 0, 0, 1, 0, 0, 1, 0, 0, 0];
    let point = prf1(&confusion(&pred, &truth)?);
    let adjusted = prf1(&confusion(&point_adjust(&pred, &truth)?, &truth)?);
    println!("point-wise     P {:.3} R {:.3} F1 {:.3}", point.precision, point.recall, point.f1);
    println!("point-adjusted P {:.3} R {:.3} F1 {:.3}", adjusted.precision, adjusted.recall, adjusted.f1);
    println!("F1 from P 0.6051, R 0.9565: {:.4}", f1_score(0.6051, 0.9565));

    let n = truth.len();
    let mut predictions: Vec<Option<u8>> = pred.iter().map(|&p| Some(p)).collect();
    predictions[0] = None;
    let series = SeriesPrediction {
        id: "toy".into(),
        origin: 100,
        values: Array2::from_shape_fn((n, 1), |(i, _)| if truth[i] == 1 { 4.0 } else { 0.1 * i as f64 }),
        truth: truth.to_vec(),
        predictions,
    };
    let dir = std::env::temp_dir().join("anomaly-rl-metrics");
    let opts = ReportOptions { point_adjust: true, ..ReportOptions::default() };
    let metrics = emit_report(&dir, &[series], None, &opts)?;
    println!("{}", serde_json::to_string_pretty(&metrics).unwrap_or_default());
    println!("written to {}", dir.display());
    Ok(())
}
