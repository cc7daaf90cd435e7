//! Drive the lambda controller against a plant whose episode reward grows with lambda.
//!
//! ```text
//! cargo run --example lambda_controller
//! ```

use anomaly_rl::vae::LambdaController;

fn main() -> anomaly_rl::Result<()> {
    let mut ctrl = LambdaController::new(0.1, 0.002, 400.0, 0.0, 2.0)?;
    // r(lambda) = 200 + 250 * lambda meets the target at lambda = 0.8
    let plant = |lambda: f64| 200.0 + 250.0 * lambda;
    for episode in 0..=40 {
        let r = plant(ctrl.lambda);
        if episode % 5 == 0 {
            println!("episode {episode:>2}: lambda {:.4}, reward {r:.1}", ctrl.lambda);
        }
        ctrl = ctrl.updated(r);
    }

    let mut clipped = LambdaController::new(1.0, 1.0, 100.0, 0.0, 2.0)?;
    clipped = clipped.updated(0.0);
    println!("far below target with alpha 1: lambda clipped to {}", clipped.lambda);
    Ok(())
}
