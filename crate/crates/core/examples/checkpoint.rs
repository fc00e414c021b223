//! Saving and restoring a model, and what a damaged file looks like.

use cpiri::codec::CodecParams;
use cpiri::data::NormalizationStats;
use cpiri::numerics::{Mode, Tensor};
use cpiri::pipeline::CpiriModel;
use cpiri::presets;
use cpiri::train::{Checkpoint, Entry, TrainedModel};

fn main() -> cpiri::Result<()> {
    let dir = std::env::temp_dir();
    let path = dir.join("cpiri_example_model.ckpt");
    let model = CpiriModel::new(
        CodecParams::init(&presets::patch_config(), 1)?,
        &presets::spatial(),
        NormalizationStats::identity(4),
        2,
    )?;

    TrainedModel::Cpiri(model.clone())
        .to_checkpoint("demo-digest")
        .save(&path)?;
    let ck = Checkpoint::load(&path)?;
    let tensors = ck
        .entries()
        .iter()
        .filter(|(_, e)| matches!(e, Entry::Tensor(_)))
        .count();
    println!(
        "{} entries ({tensors} tensors), config digest {}",
        ck.entries().len(),
        TrainedModel::config_digest(&ck)?
    );

    let TrainedModel::Cpiri(restored) = TrainedModel::from_checkpoint(&ck)? else {
        unreachable!("saved a CPiRi model");
    };
    let x = Tensor::from_fn(vec![presets::INPUT_LEN, 4], |i| (i as f64 * 0.05).cos());
    let same = restored.forward(&x, Mode::Eval)? == model.forward(&x, Mode::Eval)?;
    println!(
        "restored model reproduces forecasts exactly: {same}; codec frozen: {}",
        restored.codec.is_frozen()
    );

    let mut bytes = std::fs::read(&path).map_err(|e| cpiri::Error::Io {
        context: "reading".into(),
        source: e,
    })?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    match Checkpoint::from_bytes(&bytes) {
        Err(e) => println!("flipped one byte: {e} (exit code {})", e.exit_code()),
        Ok(_) => println!("flipped one byte and it still loaded"),
    }
    Ok(())
}
