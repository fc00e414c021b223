//! Pretrains the patch codec on a synthetic univariate corpus and saves it.
//!
//! `cargo run --release --example pretrain_codec [codec.ckpt]`

use std::path::PathBuf;

use cpiri::codec::pretrain_codec;
use cpiri::presets;
use cpiri::train::TrainedModel;

fn main() -> cpiri::Result<()> {
    let out = std::env::args().nth(1).map_or_else(
        || std::env::temp_dir().join("cpiri_codec.ckpt"),
        PathBuf::from,
    );
    let config = presets::patch_config();
    println!(
        "codec: {} patches of {} steps, width {}, {} layers; forecasting {} steps",
        config.n_patches(),
        config.patch_len,
        config.hidden_dim,
        config.n_layers,
        config.horizon
    );

    let (codec, report) =
        pretrain_codec(&presets::corpus(), &config, &presets::pretrain_schedule())?;
    for (epoch, loss) in report.train_loss.iter().enumerate() {
        println!("epoch {epoch:>2}  train MAE {loss:.4}");
    }
    println!(
        "held-out MAE {:.4}, last-value baseline {:.4}",
        report.val_mae.unwrap_or(f64::NAN),
        report.persistence_mae.unwrap_or(f64::NAN)
    );
    assert!(codec.is_frozen());

    TrainedModel::Codec(codec)
        .to_checkpoint("example")
        .save(&out)?;
    println!("saved {}", out.display());
    Ok(())
}
