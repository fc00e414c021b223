//! Channel features before and after interaction, and the learned channel-to-channel
//! attention, for one test window.
//!
//! `cargo run --release --example export_embeddings [epochs]`

use cpiri::codec::pretrain_codec;
use cpiri::data::{generate, split_and_window, SplitRatios};
use cpiri::pipeline::CpiriModel;
use cpiri::presets;
use cpiri::spatial::{attention_weights, ChannelFeatureSet};
use cpiri::train::{train, TrainConfig};

fn main() -> cpiri::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(10);
    let spec = presets::coupled_var();
    let ds = generate(&spec)?;
    let splits = split_and_window(&ds, &SplitRatios::default(), &presets::windows())?;
    let (codec, _) = pretrain_codec(
        &presets::corpus(),
        &presets::patch_config(),
        &presets::pretrain_schedule(),
    )?;
    let mut model = CpiriModel::new(codec, &presets::spatial(), splits.stats.clone(), 1)?;
    train(
        &mut model,
        &splits.train,
        &splits.val,
        &splits.stats,
        &TrainConfig {
            epochs,
            ..presets::cpiri_training(1)
        },
    )?;

    let window = &splits.test[0];
    let (_, before, after) = model.forward_with_embeddings(&window.x)?;
    println!("channel  |H row|   |H' row|  shift");
    for c in 0..ds.n_channels() {
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let shift: Vec<f64> = before
            .row(c)
            .iter()
            .zip(after.row(c))
            .map(|(a, b)| b - a)
            .collect();
        println!(
            "{:>7}  {:>7.3}  {:>8.3}  {:>5.3}",
            ds.channel_ids[c],
            norm(before.row(c)),
            norm(after.row(c)),
            norm(&shift)
        );
    }

    let heads = attention_weights(&ChannelFeatureSet::from_tensor(before)?, &model.spatial)?;
    let c = ds.n_channels();
    let mut mean = vec![0.0; c * c];
    for h in &heads {
        for (m, v) in mean.iter_mut().zip(h.data()) {
            *m += v / heads.len() as f64;
        }
    }
    println!(
        "\nattention averaged over {} heads (row attends to column):",
        heads.len()
    );
    for i in 0..c {
        let row: Vec<String> = (0..c).map(|j| format!("{:.2}", mean[i * c + j])).collect();
        println!("{:>4} {}", ds.channel_ids[i], row.join(" "));
    }

    // The generating graph, for comparison.
    let a = spec.transition_matrix()?;
    println!("\ntrue transition matrix magnitudes:");
    for i in 0..c {
        let row: Vec<String> = (0..c).map(|j| format!("{:.2}", a[(i, j)].abs())).collect();
        println!("{:>4} {}", ds.channel_ids[i], row.join(" "));
    }
    Ok(())
}
