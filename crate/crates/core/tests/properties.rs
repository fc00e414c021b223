mod common;

use common::*;
use cpiri::eval::{
    apply_permutation, mae, sample_partial_permutation, wape, PermutationMap, WAPE_EPS_SCALE,
};
use cpiri::numerics::{Mode, Tensor};
use cpiri::pipeline::Interaction;
use cpiri::spatial::{spatial_forward, ChannelFeatureSet, SpatialBlockParams, SpatialConfig};
use cpiri::train::{Checkpoint, TrainedModel};
use proptest::prelude::*;

fn perm(c: usize) -> impl Strategy<Value = PermutationMap> {
    Just((0..c).collect::<Vec<_>>())
        .prop_shuffle()
        .prop_map(|m| PermutationMap::new(m).unwrap())
}

fn sized_perm(max: usize) -> impl Strategy<Value = (usize, PermutationMap)> {
    (1..=max).prop_flat_map(|c| (Just(c), perm(c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inverse_undoes_permutation((c, p) in sized_perm(12), rows in 1usize..5, seed in any::<u64>()) {
        let m = random(&[rows, c], seed);
        let back = apply_permutation(&apply_permutation(&m, &p).unwrap(), &p.inverse()).unwrap();
        prop_assert_eq!(back, m);
        prop_assert!(p.then(&p.inverse()).unwrap().is_identity());
    }

    #[test]
    fn composition_is_sequential_application((c, a) in sized_perm(10), seed in any::<u64>()) {
        let b = PermutationMap::random(c, seed);
        let m = random(&[3, c], seed ^ 1);
        let seq = apply_permutation(&apply_permutation(&m, &a).unwrap(), &b).unwrap();
        prop_assert_eq!(seq, apply_permutation(&m, &a.then(&b).unwrap()).unwrap());
    }

    #[test]
    fn partial_shuffle_moves_at_most_floor_fraction(c in 1usize..40, f in 0.0f64..=1.0, seed in any::<u64>()) {
        let p = sample_partial_permutation(c, f, seed).unwrap();
        let k = (f * c as f64 + 1e-9).floor() as usize;
        prop_assert!(c - p.fixed_points().len() <= k);
    }

    #[test]
    fn metrics_invariant_under_joint_permutation((c, p) in sized_perm(16), rows in 1usize..8, seed in any::<u64>()) {
        let y = random(&[rows, c], seed);
        let yhat = random(&[rows, c], seed ^ 7);
        let (yp, yhp) = (apply_permutation(&y, &p).unwrap(), apply_permutation(&yhat, &p).unwrap());
        prop_assert!((wape(&y, &yhat, WAPE_EPS_SCALE).unwrap() - wape(&yp, &yhp, WAPE_EPS_SCALE).unwrap()).abs() <= 1e-12);
        prop_assert!((mae(&y, &yhat).unwrap() - mae(&yp, &yhp).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn spatial_block_is_equivariant((c, p) in sized_perm(9), seed in 0u64..1000) {
        let cfg = SpatialConfig { dim: 8, n_heads: 2, ..SpatialConfig::default() };
        let params = SpatialBlockParams::init(&cfg, seed).unwrap();
        let h = random(&[c, 8], seed + 1);
        let out = spatial_forward(&ChannelFeatureSet::from_tensor(h.clone()).unwrap(), &params, Mode::Eval).unwrap();
        let hp = p.apply_rows(&h).unwrap();
        let out_p = spatial_forward(&ChannelFeatureSet::from_tensor(hp).unwrap(), &params, Mode::Eval).unwrap();
        prop_assert!(out_p.tensor().max_abs_diff(&p.apply_rows(out.tensor()).unwrap()) <= 1e-10);
    }

    #[test]
    fn pipeline_is_equivariant((c, p) in sized_perm(6), seed in 0u64..1000, pool in any::<bool>()) {
        let mut model = tiny_model(c, seed);
        if pool {
            model = model.with_interaction(Interaction::MeanPool);
        }
        let x = random(&[16, c], seed + 2);
        let y = model.forward(&x, Mode::Eval).unwrap();
        let yp = model.forward(&apply_permutation(&x, &p).unwrap(), Mode::Eval).unwrap();
        prop_assert!(yp.max_abs_diff(&apply_permutation(&y, &p).unwrap()) <= 1e-10);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact(c in 1usize..5, seed in 0u64..1000) {
        let model = TrainedModel::Cpiri(tiny_model(c, seed));
        let bytes = model.to_checkpoint("d").to_bytes();
        let back = TrainedModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(back.to_checkpoint("d").to_bytes(), bytes);
    }

    #[test]
    fn corrupted_checkpoint_never_loads(seed in 0u64..1000, flip in any::<prop::sample::Index>()) {
        let mut bytes = TrainedModel::Cpiri(tiny_model(2, seed)).to_checkpoint("d").to_bytes();
        let i = flip.index(bytes.len());
        bytes[i] ^= 0x10;
        prop_assert!(Checkpoint::from_bytes(&bytes).and_then(|ck| TrainedModel::from_checkpoint(&ck)).is_err());
    }
}

#[test]
fn stats_travel_with_channels() {
    let model = tiny_model(3, 4);
    let stats = cpiri::data::NormalizationStats {
        mean: vec![1.0, -5.0, 20.0],
        std: vec![0.5, 2.0, 10.0],
    };
    let x = Tensor::from_fn(vec![16, 3], |i| {
        (i as f64).cos() * 3.0 + (i % 3) as f64 * 7.0
    });
    let p = PermutationMap::new(vec![2, 0, 1]).unwrap();
    let y = cpiri::pipeline::forecast_with_stats(&model, &x, &stats).unwrap();
    let stats_p = stats.select(p.as_slice()).unwrap();
    let yp =
        cpiri::pipeline::forecast_with_stats(&model, &apply_permutation(&x, &p).unwrap(), &stats_p)
            .unwrap();
    assert!(yp.max_abs_diff(&apply_permutation(&y, &p).unwrap()) <= 1e-9);
}
