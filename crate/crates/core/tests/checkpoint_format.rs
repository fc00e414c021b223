mod common;

use cpiri::eval::{ContrastBaselineParams, ContrastConfig};
use cpiri::numerics::{Dtype, Tensor};
use cpiri::train::{Checkpoint, TrainedModel, CHECKPOINT_VERSION};
use cpiri::Error;

/// Byte layout written out by hand, independently of the library encoder.
fn hand_encoded() -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&2u32.to_le_bytes());
    body.extend_from_slice(&1u32.to_le_bytes());
    body.extend_from_slice(b"w");
    body.push(1);
    body.extend_from_slice(&2u32.to_le_bytes());
    body.extend_from_slice(&1u64.to_le_bytes());
    body.extend_from_slice(&2u64.to_le_bytes());
    body.extend_from_slice(&1.5f64.to_le_bytes());
    body.extend_from_slice(&(-2.0f64).to_le_bytes());
    body.extend_from_slice(&4u32.to_le_bytes());
    body.extend_from_slice(b"half");
    body.push(0);
    body.extend_from_slice(&1u32.to_le_bytes());
    body.extend_from_slice(&1u64.to_le_bytes());
    body.extend_from_slice(&0.25f32.to_le_bytes());
    let mut out = b"CPIR".to_vec();
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out
}

fn example() -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.push_tensor("w", &Tensor::matrix(1, 2, vec![1.5, -2.0]).unwrap());
    ck.push_tensor("half", &Tensor::vector(vec![0.25]).with_dtype(Dtype::F32));
    ck
}

#[test]
fn encoder_matches_documented_layout() {
    assert_eq!(example().to_bytes(), hand_encoded());
    assert_eq!(Checkpoint::from_bytes(&hand_encoded()).unwrap(), example());
}

#[test]
fn every_damaged_form_is_reported_as_corruption() {
    let good = hand_encoded();
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    let mut future = good.clone();
    future[4] = 9;
    let mut flipped = good.clone();
    flipped[12] ^= 1;
    let truncated = good[..good.len() - 7].to_vec();
    for (what, bytes) in [
        ("magic", bad_magic),
        ("version", future),
        ("bit flip", flipped),
        ("truncation", truncated),
        ("empty", vec![]),
    ] {
        assert!(
            matches!(Checkpoint::from_bytes(&bytes), Err(Error::Corruption(_))),
            "{what}"
        );
    }
}

#[test]
fn save_load_and_f32_rounding() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.ckpt");
    let mut ck = Checkpoint::new();
    ck.push_tensor(
        "third",
        &Tensor::vector(vec![1.0 / 3.0]).with_dtype(Dtype::F32),
    );
    ck.save(&p).unwrap();
    let back = Checkpoint::load(&p).unwrap();
    assert_eq!(
        back.tensor("third").unwrap().data()[0],
        (1.0f32 / 3.0) as f64
    );
    assert!(matches!(back.tensor("missing"), Err(Error::Corruption(_))));
}

#[test]
fn models_keep_freeze_flags_and_statistics() {
    let model = common::tiny_model(3, 9);
    let ck = TrainedModel::Cpiri(model.clone()).to_checkpoint("abc");
    assert_eq!(TrainedModel::config_digest(&ck).unwrap(), "abc");
    match TrainedModel::from_checkpoint(&ck).unwrap() {
        TrainedModel::Cpiri(m) => {
            assert!(m.codec.is_frozen());
            assert_eq!(m, model);
        }
        other => panic!("{other:?}"),
    }
    let contrast = TrainedModel::Contrast {
        params: ContrastBaselineParams::init(&ContrastConfig::default(), 4, 16, 4, 1).unwrap(),
        norm_stats: cpiri::data::NormalizationStats {
            mean: vec![1.0, 2.0, 3.0, 4.0],
            std: vec![0.5; 4],
        },
    };
    let back = TrainedModel::from_checkpoint(&contrast.to_checkpoint("d")).unwrap();
    assert_eq!(back, contrast);
}
