//! Trains CPiRi on the coupled VAR data: frozen pretrained codec, spatial block learned
//! with channel shuffling.
//!
//! `cargo run --release --example train_cpiri [epochs]`

use cpiri::codec::pretrain_codec;
use cpiri::data::{generate, split_and_window, SplitRatios};
use cpiri::eval::{evaluate, ShuffleMode};
use cpiri::numerics::Tensor;
use cpiri::pipeline::CpiriModel;
use cpiri::presets;
use cpiri::train::{train, TrainConfig};

fn main() -> cpiri::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(presets::cpiri_training(1).epochs);

    let ds = generate(&presets::coupled_var())?;
    let splits = split_and_window(&ds, &SplitRatios::default(), &presets::windows())?;
    let (codec, _) = pretrain_codec(
        &presets::corpus(),
        &presets::patch_config(),
        &presets::pretrain_schedule(),
    )?;
    let mut model = CpiriModel::new(codec, &presets::spatial(), splits.stats.clone(), 1)?;

    let ci = evaluate(
        &|x: &Tensor| model.ci_forward(x),
        &splits.test,
        &splits.stats,
        None,
        ShuffleMode::None,
    )?;
    let config = TrainConfig {
        epochs,
        ..presets::cpiri_training(1)
    };
    let report = train(
        &mut model,
        &splits.train,
        &splits.val,
        &splits.stats,
        &config,
    )?;
    print!("{}", report.loss_csv());
    println!(
        "kept epoch {:?}, stopped early: {}",
        report.best_epoch, report.stopped_early
    );

    let test = evaluate(&model, &splits.test, &splits.stats, None, ShuffleMode::None)?;
    println!("test WAPE {:.3}%  MAE {:.4}", test.wape, test.mae);
    println!(
        "codec alone, no channel interaction: WAPE {:.3}%  MAE {:.4}",
        ci.wape, ci.mae
    );
    Ok(())
}
