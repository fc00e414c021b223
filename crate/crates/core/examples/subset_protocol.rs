//! Trains on a fraction of the channels and forecasts all of them without retraining.
//!
//! `cargo run --release --example subset_protocol [seed]`

use cpiri::codec::pretrain_codec;
use cpiri::data::{generate, split_and_window, SplitRatios};
use cpiri::pipeline::CpiriModel;
use cpiri::presets;
use cpiri::train::train_subset_protocol;

fn main() -> cpiri::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(1);
    let ds = generate(&presets::coupled_var())?;
    let splits = split_and_window(&ds, &SplitRatios::default(), &presets::windows())?;
    let (codec, _) = pretrain_codec(
        &presets::corpus(),
        &presets::patch_config(),
        &presets::pretrain_schedule(),
    )?;

    let (grid, reports) = train_subset_protocol(
        &|| {
            CpiriModel::new(
                codec.clone(),
                &presets::spatial(),
                splits.stats.clone(),
                seed,
            )
        },
        &splits.train,
        &splits.val,
        &splits.test,
        &splits.stats,
        &[0.25, 0.5, 1.0],
        &presets::cpiri_training(seed),
    )?;
    println!(
        "fraction  shuffle  trained on      WAPE on all {} channels   train time",
        ds.n_channels()
    );
    for (cell, report) in grid.cells.iter().zip(&reports) {
        println!(
            "{:>8.2}  {:>7}  {:>2} {:<12} {:>10.3}%               {:>6.1}s",
            cell.fraction,
            cell.shuffle,
            cell.trained_channels,
            format!("{:?}", report.channels),
            cell.wape_pct,
            cell.train_seconds
        );
    }
    Ok(())
}
