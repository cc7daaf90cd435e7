//! Train the VAE on normal windows and compare reconstruction errors.
//!
//! ```text
//! cargo run --example vae_scores
//! ```

use anomaly_rl::data::{Normalizer, SynthSpec};
use anomaly_rl::vae::{flatten, train_vae, VaeArch, VaeModel, VaeTrainConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> anomaly_rl::Result<()> {
    let n = 25;
    let out = SynthSpec { t: 1500, n_anomalies: 15, seed: 11, ..SynthSpec::default() }.generate()?;
    let raw = &out.series;
    let series = Normalizer::fit(raw.values.view()).apply(raw);
    let clean = |t: usize| raw.labels[t + 1 - n..=t].iter().all(|&l| l == 0);
    let half = series.len() / 2;

    let train: Vec<Vec<f64>> = (n - 1..half).filter(|&t| clean(t)).map(|t| flatten(series.window(t, n).unwrap())).collect();
    let mut model = VaeModel::new(VaeArch::standard(n), 0)?;
    let curve = train_vae(&mut model, &train, &VaeTrainConfig { epochs: 30, ..VaeTrainConfig::default() })?;
    let smooth = curve.moving_average(5);
    println!("{} normal windows, loss {:.4} -> {:.4}", train.len(), smooth[0], smooth[smooth.len() - 1]);

    let held: Vec<f64> =
        (half..series.len()).filter(|&t| clean(t)).map(|t| model.recon_error_window(series.window(t, n).unwrap()).unwrap()).collect();
    let spikes: Vec<f64> = out.positions.iter().map(|&t| model.recon_error_window(series.window(t, n).unwrap()).unwrap()).collect();
    let (a, b) = (median(held), median(spikes));
    println!("median recon error: normal {a:.4}, spike {b:.4} ({:.1}x)", b / a);
    Ok(())
}
