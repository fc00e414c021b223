//! The partial-shuffle audit on an order-dependent model and on CPiRi.
//!
//! The contrast model gives every channel position its own learned embedding, so after
//! fixed-order training it relies on where a channel sits. CPiRi (untrained here, since
//! invariance holds for any weights) cannot tell positions apart.

use cpiri::codec::CodecParams;
use cpiri::data::{generate, split_and_window, SplitRatios};
use cpiri::eval::{cpi_audit, AuditConfig, ContrastBaselineParams};
use cpiri::pipeline::CpiriModel;
use cpiri::presets;
use cpiri::train::train;

fn main() -> cpiri::Result<()> {
    let ds = generate(&presets::coupled_var())?;
    let splits = split_and_window(&ds, &SplitRatios::default(), &presets::windows())?;
    let audit = AuditConfig::default();

    let mut baseline = ContrastBaselineParams::init(
        &presets::contrast(),
        ds.n_channels(),
        presets::INPUT_LEN,
        presets::HORIZON,
        1,
    )?;
    train(
        &mut baseline,
        &splits.train,
        &splits.val,
        &splits.stats,
        &presets::contrast_training(1),
    )?;
    println!("order-dependent baseline, trained in fixed channel order:");
    println!(
        "{}",
        cpi_audit(&baseline, &splits.test, &splits.stats, &audit)?.to_markdown()
    );

    let cpiri = CpiriModel::new(
        CodecParams::init(&presets::patch_config(), 1)?,
        &presets::spatial(),
        splits.stats.clone(),
        1,
    )?;
    println!("CPiRi:");
    println!(
        "{}",
        cpi_audit(&cpiri, &splits.test, &splits.stats, &audit)?.to_markdown()
    );
    Ok(())
}
