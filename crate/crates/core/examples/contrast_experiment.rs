//! Fixed-order baseline, its shuffle-trained twin and CPiRi on identical splits.
//!
//! `cargo run --release --example contrast_experiment`

use cpiri::codec::pretrain_codec;
use cpiri::data::{generate, split_and_window, SplitRatios};
use cpiri::eval::AuditConfig;
use cpiri::pipeline::CpiriModel;
use cpiri::presets;
use cpiri::train::{contrast_experiment, ContrastExperimentConfig};

fn main() -> cpiri::Result<()> {
    let ds = generate(&presets::coupled_var())?;
    let splits = split_and_window(&ds, &SplitRatios::default(), &presets::windows())?;
    let (codec, _) = pretrain_codec(
        &presets::corpus(),
        &presets::patch_config(),
        &presets::pretrain_schedule(),
    )?;

    let config = ContrastExperimentConfig {
        contrast: presets::contrast(),
        contrast_train: presets::contrast_training(1),
        cpiri_train: presets::cpiri_training(1),
        audit: AuditConfig::default(),
        shuffled_twin: true,
        seed: 1,
    };
    let report = contrast_experiment(
        &|| CpiriModel::new(codec.clone(), &presets::spatial(), splits.stats.clone(), 1),
        &splits,
        &config,
    )?;

    println!("{}", report.to_markdown());
    println!(
        "fixed-order baseline by shuffle fraction:\n{}",
        report.baseline_audit.to_markdown()
    );
    if let Some(twin) = &report.twin_audit {
        println!("shuffle-trained baseline:\n{}", twin.to_markdown());
    }
    println!("CPiRi:\n{}", report.cpiri_audit.to_markdown());
    Ok(())
}
