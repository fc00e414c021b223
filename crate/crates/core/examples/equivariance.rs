//! Reordering channels reorders forecasts and nothing else.

use cpiri::codec::CodecParams;
use cpiri::data::NormalizationStats;
use cpiri::eval::{apply_permutation, PermutationMap};
use cpiri::numerics::{Mode, Tensor};
use cpiri::pipeline::{CpiriModel, Interaction};
use cpiri::presets;
use cpiri::spatial::{spatial_forward, ChannelFeatureSet, SpatialBlockParams};

fn main() -> cpiri::Result<()> {
    let c = 6;
    let d = presets::spatial().dim;

    // Spatial block alone: f(πH) = πf(H).
    let params = SpatialBlockParams::init(&presets::spatial(), 1)?;
    let h = Tensor::from_fn(vec![c, d], |i| ((i * 37 % 101) as f64 / 50.0) - 1.0);
    let pi = PermutationMap::new(vec![3, 0, 5, 1, 4, 2])?;
    let out = spatial_forward(
        &ChannelFeatureSet::from_tensor(h.clone())?,
        &params,
        Mode::Eval,
    )?;
    let out_pi = spatial_forward(
        &ChannelFeatureSet::from_tensor(pi.apply_rows(&h)?)?,
        &params,
        Mode::Eval,
    )?;
    println!(
        "spatial block: max |f(πH) - πf(H)| = {:.2e}",
        out_pi.tensor().max_abs_diff(&pi.apply_rows(out.tensor())?)
    );

    // Whole pipeline, for each interaction mode.
    let x = Tensor::from_fn(vec![presets::INPUT_LEN, c], |i| {
        ((i / c) as f64 * 0.2 + (i % c) as f64).sin()
    });
    for interaction in [
        Interaction::Attention,
        Interaction::MeanPool,
        Interaction::None,
    ] {
        let model = CpiriModel::new(
            CodecParams::init(&presets::patch_config(), 2)?,
            &presets::spatial(),
            NormalizationStats::identity(c),
            3,
        )?
        .with_interaction(interaction);
        let y = model.forward(&x, Mode::Eval)?;
        let y_pi = model.forward(&apply_permutation(&x, &pi)?, Mode::Eval)?;
        println!(
            "pipeline ({interaction:?}): max |F(Xπ) - F(X)π| = {:.2e}",
            y_pi.max_abs_diff(&apply_permutation(&y, &pi)?)
        );
    }

    // Dropout masks are drawn by position, so a single training-mode pass is not equivariant.
    let model = CpiriModel::new(
        CodecParams::init(&presets::patch_config(), 2)?,
        &presets::spatial(),
        NormalizationStats::identity(c),
        3,
    )?;
    let y = model.forward(&x, Mode::Train { seed: 9 })?;
    let y_pi = model.forward(&apply_permutation(&x, &pi)?, Mode::Train { seed: 9 })?;
    println!(
        "training mode (dropout on), same seed: deviation {:.2e}",
        y_pi.max_abs_diff(&apply_permutation(&y, &pi)?)
    );
    Ok(())
}
