use proptest::prelude::*;

use pif_core::classical::{blend, BlendWeights};
use pif_core::data::{Normalization, RawSeries, SeriesDataset, SeriesSource, Split};
use pif_core::metrics::{gradient_error, linf_grad_error, linf_rmse, rmse};
use pif_core::neural::{read_checkpoint, write_checkpoint, Architecture, Family, NeuralModel};
use pif_core::recipe::Recipe;

fn recipe_strategy() -> impl Strategy<Value = Recipe> {
    (
        prop::array::uniform4(-60.0f64..40.0),
        0.0f64..500.0,
        prop::array::uniform6(30.0f64..15_000.0),
    )
        .prop_map(|(setpoints, start, gaps)| {
            let mut boundaries = [start; 7];
            for k in 0..6 {
                boundaries[k + 1] = boundaries[k] + gaps[k];
            }
            Recipe::new("prop", setpoints, boundaries).unwrap()
        })
}

fn paired(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|n| (prop::collection::vec(-50.0f64..50.0, n), prop::collection::vec(-50.0f64..50.0, n)))
}

fn series(values: Vec<f64>) -> RawSeries {
    let times = (0..values.len()).map(|k| k as f64 * 60.0).collect();
    RawSeries::new(times, values, SeriesSource::Synthetic).unwrap()
}

proptest! {
    #[test]
    fn prior_stays_between_the_setpoints(recipe in recipe_strategy(), u in 0.0f64..1.0) {
        let t = recipe.start() + u * (recipe.end() - recipe.start());
        let v = recipe.evaluate(t).unwrap();
        prop_assert!(recipe.min_setpoint() <= v && v <= recipe.max_setpoint());
    }

    #[test]
    fn prior_is_continuous(recipe in recipe_strategy(), k in 1usize..6) {
        let b = recipe.boundaries()[k];
        let left = recipe.evaluate(b - 1e-7).unwrap();
        let right = recipe.evaluate(b + 1e-7).unwrap();
        prop_assert!((left - right).abs() < 1e-6);
    }

    #[test]
    fn rmse_is_bounded_by_its_peak((pred, truth) in paired(3..80)) {
        let r = rmse(&pred, &truth).unwrap();
        let peak = linf_rmse(&pred, &truth).unwrap();
        prop_assert!(r <= peak * (1.0 + 1e-12));
        prop_assert!(gradient_error(&pred, &truth).unwrap() <= linf_grad_error(&pred, &truth).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn pointwise_metrics_ignore_order((pred, truth) in paired(2..60), rot in 0usize..60) {
        let k = rot % pred.len();
        let mut p = pred.clone();
        let mut t = truth.clone();
        p.rotate_left(k);
        t.rotate_left(k);
        prop_assert!((rmse(&p, &t).unwrap() - rmse(&pred, &truth).unwrap()).abs() < 1e-12);
        prop_assert_eq!(linf_rmse(&p, &t).unwrap(), linf_rmse(&pred, &truth).unwrap());
    }

    #[test]
    fn metrics_vanish_on_a_perfect_forecast(truth in prop::collection::vec(-50.0f64..50.0, 3..60)) {
        prop_assert_eq!(rmse(&truth, &truth).unwrap(), 0.0);
        prop_assert_eq!(linf_rmse(&truth, &truth).unwrap(), 0.0);
        prop_assert_eq!(gradient_error(&truth, &truth).unwrap(), 0.0);
        prop_assert_eq!(linf_grad_error(&truth, &truth).unwrap(), 0.0);
    }

    #[test]
    fn normalization_round_trips(values in prop::collection::vec(-80.0f64..80.0, 2..50)) {
        let norm = Normalization::fit(&values);
        for &v in &values {
            let z = norm.normalize(v);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&z));
            prop_assert!((norm.invert(z) - v).abs() < 1e-9);
        }
    }

    #[test]
    fn blend_lies_between_forecast_and_prior((pred, prior) in paired(1..40), alpha in 0.0f64..1.0) {
        let w = BlendWeights::new(alpha, 1.0 - alpha).unwrap();
        let out = blend(&pred, &prior, w).unwrap();
        for ((o, p), q) in out.iter().zip(&pred).zip(&prior) {
            prop_assert!(p.min(*q) - 1e-12 <= *o && *o <= p.max(*q) + 1e-12);
        }
        let own = blend(&pred, &prior, BlendWeights::new(1.0, 0.0).unwrap()).unwrap();
        prop_assert_eq!(own, pred);
    }

    #[test]
    fn splits_partition_the_windows(len in 40usize..200, lookback in 2usize..12) {
        let values: Vec<f64> = (0..len).map(|k| (k as f64 * 0.1).sin()).collect();
        let ds = SeriesDataset::prepare(series(values), lookback).unwrap();
        let (train, val, test) = (ds.range(Split::Train), ds.range(Split::Validation), ds.range(Split::Test));
        prop_assert_eq!(train.start, 0);
        prop_assert_eq!(train.end, val.start);
        prop_assert_eq!(val.end, test.start);
        prop_assert_eq!(test.end, ds.windows().len());
        prop_assert_eq!(ds.windows().len(), len - lookback);
        for w in ds.windows() {
            prop_assert_eq!(w.input.len(), lookback);
            prop_assert_eq!(&w.input[..], &ds.normalized_series()[w.index - lookback..w.index]);
        }
    }

    #[test]
    fn training_noise_leaves_the_test_split_clean(sigma in 0.05f64..1.0, seed in 0u64..1000) {
        let values: Vec<f64> = (0..120).map(|k| (k as f64 * 0.07).cos()).collect();
        let ds = SeriesDataset::prepare(series(values), 8).unwrap();
        let noisy = ds.inject_training_noise(sigma, seed).unwrap();
        prop_assert_eq!(noisy.split(Split::Test), ds.split(Split::Test));
        prop_assert!(noisy.split(Split::Train) != ds.split(Split::Train));
        for w in noisy.windows() {
            let clean = ds.windows()[w.index - ds.lookback()].target;
            prop_assert_eq!(w.clean_target, clean);
        }
    }
}

#[test]
fn transformer_is_causal() {
    let model = NeuralModel::new(Architecture::transformer(4, 8, 2), 10, 3).unwrap();
    let window: Vec<f64> = (0..10).map(|k| (k as f64 * 0.4).sin()).collect();
    let base = model.position_outputs(&window).unwrap();
    for j in 0..10 {
        let mut changed = window.clone();
        changed[j] += 0.5;
        let out = model.position_outputs(&changed).unwrap();
        assert_eq!(out[..j], base[..j], "position {j} leaked backwards");
        assert_ne!(out[j], base[j], "position {j} ignored its own input");
    }
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    for family in Family::ALL {
        let arch = match family {
            Family::Mlp => Architecture::Mlp { hidden: [6, 5] },
            Family::Rnn => Architecture::Rnn { hidden: vec![5] },
            Family::Lstm => Architecture::Lstm { hidden: vec![3] },
            Family::Lem => Architecture::Lem { hidden: vec![3] },
            Family::Kan => Architecture::kan(vec![3]),
            Family::Ckan => Architecture::ckan(vec![3]),
            Family::Transformer => Architecture::transformer(4, 8, 1),
        };
        let model = NeuralModel::new(arch, 6, 11).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&model, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.checksum(), model.checksum(), "{family}");
        let windows: Vec<Vec<f64>> = (0..4).map(|s| (0..6).map(|k| ((s * 6 + k) as f64 * 0.3).sin()).collect()).collect();
        let a = model.predict_windows(windows.iter().map(|w| w.as_slice())).unwrap();
        let b = back.predict_windows(windows.iter().map(|w| w.as_slice())).unwrap();
        assert_eq!(a, b, "{family}");
    }
}
