//! Cross-module behaviour through the public API only.

use proptest::prelude::*;

use sdfseg_core::eval::{f1_iou, uncertainty_maps, MetricReport};
use sdfseg_core::nn::{AnalyticGaussianScore, Architecture, ScoreModel};
use sdfseg_core::sampler::{ensemble_sample, SamplerConfig};
use sdfseg_core::sde::SigmaSchedule;
use sdfseg_core::sdf::{boundary_pixels, brute_force_sdf, decode_mask, encode_sdf, SdfConfig};
use sdfseg_core::train::{generate_synthetic, train, NoObserver, ShapeParams, TrainConfig, TrainExample, TrainState};
use sdfseg_core::{BinaryMask, CondImage};

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (1usize..=16, 1usize..=16).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0u8..=1, w * h).prop_map(move |labels| BinaryMask::new(w, h, labels).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn encoding_matches_brute_force_and_round_trips(mask in mask_strategy(), delta in prop::sample::select(vec![2.0, 5.0, 8.0])) {
        let cfg = SdfConfig::new(delta, 0.003).unwrap();
        let fast = encode_sdf(&mask, &cfg);
        let slow = brute_force_sdf(&mask, &cfg);
        prop_assert_eq!(fast.values(), slow.values());
        prop_assert_eq!(decode_mask(&fast, 0.0), mask.clone());
        for (x, y) in boundary_pixels(&mask) {
            prop_assert_eq!(fast.field().get(x, y), 0.0);
        }
        prop_assert!(fast.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn sharp_oracle_posterior_recovers_the_mask() {
    let sample = generate_synthetic(1, 24, &ShapeParams::for_grid(24), &SdfConfig::for_grid(24, 24), 8)
        .unwrap()
        .remove(0);
    let oracle = AnalyticGaussianScore::new(sample.sdf.field().clone(), 1e-6).unwrap();
    let cfg = SamplerConfig {
        levels: 60,
        ensemble: 8,
        ..SamplerConfig::glas()
    };
    let ens = ensemble_sample(&oracle, &sample.image, &SigmaSchedule::default(), &cfg, 4).unwrap();
    let m = f1_iou(&ens.mmse_mask, &sample.mask).unwrap();
    assert_eq!(m.iou, 1.0, "{m:?}");
    let report = MetricReport::evaluate([(&ens.mmse_mask, &sample.mask)]).unwrap();
    assert_eq!(report.mean_f1, 1.0);
    let u = uncertainty_maps(&ens, &sample.mask, &sample.sdf, 3.0).unwrap();
    assert!(u.xor.foreground_count() == 0);
}

#[test]
fn short_training_run_reduces_the_loss() {
    let grid = 16;
    let data = generate_synthetic(16, grid, &ShapeParams::for_grid(grid), &SdfConfig::for_grid(grid, grid), 1).unwrap();
    let examples: Vec<TrainExample> = data.iter().map(TrainExample::from).collect();
    let arch = Architecture {
        width: 4,
        ..Architecture::tiny()
    };
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        total_steps: 300,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(ScoreModel::init(arch, 0).unwrap());
    let losses = train(&examples, &cfg, &mut state, &mut NoObserver).unwrap();
    assert_eq!(losses.len(), 300);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean(&losses[250..]) < 0.8 * mean(&losses[..50]), "{} vs {}", mean(&losses[250..]), mean(&losses[..50]));
    assert!(state.model.params().iter().all(|p| p.is_finite()));

    // the trained model samples finite fields of the right shape
    let model = state.model.to_inference();
    let x: &CondImage = &data[0].image;
    let cfg = SamplerConfig {
        levels: 10,
        ensemble: 2,
        ..SamplerConfig::glas()
    };
    let ens = ensemble_sample(&model, x, &SigmaSchedule::default(), &cfg, 0).unwrap();
    assert_eq!(ens.mean.dims(), (grid, grid));
    assert!(ens.mean.values().iter().all(|v| v.is_finite()));
}
