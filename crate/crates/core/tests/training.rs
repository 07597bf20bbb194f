use pif_core::data::{RawSeries, SeriesDataset, SeriesSource, Split};
use pif_core::losses::LossConfig;
use pif_core::neural::{Architecture, Family, NeuralModel};
use pif_core::rng;
use pif_core::training::{search_lambda, split_rmse, train, TrainConfig, TrainError};

fn series(values: Vec<f64>) -> RawSeries {
    let times = (0..values.len()).map(|k| k as f64 * 60.0).collect();
    RawSeries::new(times, values, SeriesSource::Synthetic).unwrap()
}

fn tiny(family: Family) -> Architecture {
    match family {
        Family::Mlp => Architecture::Mlp { hidden: [8, 8] },
        Family::Rnn => Architecture::Rnn { hidden: vec![6] },
        Family::Lstm => Architecture::Lstm { hidden: vec![4] },
        Family::Lem => Architecture::Lem { hidden: vec![4] },
        Family::Kan => Architecture::kan(vec![3]),
        Family::Ckan => Architecture::ckan(vec![4]),
        Family::Transformer => Architecture::transformer(4, 8, 1),
    }
}

#[test]
fn constant_series_gives_constant_predictor() {
    let ds = SeriesDataset::prepare(series(vec![-12.5; 1200]), 10).unwrap();
    let model = NeuralModel::new(Architecture::Mlp { hidden: [8, 8] }, 10, 3).unwrap();
    let (model, report) = train(model, &ds, &TrainConfig::default()).unwrap();
    assert!(report.best_val_rmse < 1e-3, "{report:?}");
    let pred = model.predict_series(&ds, Split::Test).unwrap();
    assert!(pred.iter().all(|p| (p + 12.5).abs() < 1e-2));
}

#[test]
fn early_stopping_restores_the_best_epoch() {
    let mut g = rng::seeded(5);
    let values: Vec<f64> = (0..800).map(|k| (k as f64 / 40.0).sin() + rng::gaussian(&mut g, 0.4)).collect();
    let ds = SeriesDataset::prepare(series(values), 12).unwrap();
    let model = NeuralModel::new(Architecture::Mlp { hidden: [32, 32] }, 12, 1).unwrap();
    let config = TrainConfig {
        learning_rate: Some(3e-2),
        patience: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let (model, report) = train(model, &ds, &config).unwrap();
    assert!(
        report.epochs_run < config.max_epochs,
        "expected early stop, ran {}",
        report.epochs_run
    );
    assert_eq!(report.epochs_run, report.best_epoch + config.patience);
    assert_eq!(model.checksum(), report.epoch_checksums[report.best_epoch - 1]);
    assert_eq!(report.checksum, model.checksum());
    let min = report.val_rmse.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(report.best_val_rmse, min);
    assert_eq!(split_rmse(&model, &ds, Split::Validation).unwrap(), min);
}

#[test]
fn identical_runs_give_identical_reports() {
    let mut g = rng::seeded(9);
    let values: Vec<f64> = (0..500).map(|k| k as f64 * 0.1 + rng::gaussian(&mut g, 0.5)).collect();
    let ds = SeriesDataset::prepare(series(values), 8).unwrap();
    let config = TrainConfig {
        max_epochs: 6,
        patience: 3,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = || train(NeuralModel::new(tiny(Family::Lstm), 8, 2).unwrap(), &ds, &config).unwrap();
    let (m1, mut r1) = run();
    let (m2, mut r2) = run();
    r1.seconds = 0.0;
    r2.seconds = 0.0;
    assert_eq!(r1, r2);
    assert_eq!(m1, m2);
}

#[test]
fn every_family_halves_the_loss_on_a_line() {
    let values: Vec<f64> = (0..3000).map(|k| k as f64).collect();
    let ds = SeriesDataset::prepare(series(values), 8).unwrap();
    let config = TrainConfig {
        max_epochs: 10,
        patience: 9,
        ..TrainConfig::default()
    };
    for family in Family::ALL {
        let model = NeuralModel::new(tiny(family), 8, 4).unwrap();
        assert!(model.parameter_count() <= 500);
        let before = split_rmse(&model, &ds, Split::Train).unwrap().powi(2);
        let (trained, report) = train(model, &ds, &config).unwrap();
        let after = split_rmse(&trained, &ds, Split::Train).unwrap().powi(2);
        assert!(after <= 0.5 * before, "{family}: {before} -> {after} ({:?})", report.train_loss);
    }
}

#[test]
fn nan_inputs_abort_with_diagnostic() {
    let ds = SeriesDataset::prepare(series((0..300).map(|k| k as f64).collect()), 8).unwrap();
    let model = NeuralModel::new(tiny(Family::Mlp), 8, 1).unwrap();
    let config = TrainConfig {
        learning_rate: Some(1e300),
        max_epochs: 5,
        patience: 2,
        ..TrainConfig::default()
    };
    match train(model, &ds, &config) {
        Err(TrainError::NonFinite { epoch, last_finite_epoch }) => assert!(last_finite_epoch < epoch),
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn prior_losses_need_a_prior() {
    let ds = SeriesDataset::prepare(series((0..300).map(|k| k as f64).collect()), 8).unwrap();
    let model = NeuralModel::new(tiny(Family::Mlp), 8, 1).unwrap();
    let config = TrainConfig {
        loss: LossConfig::Uncertainty,
        ..TrainConfig::default()
    };
    assert!(matches!(train(model, &ds, &config), Err(TrainError::MissingPrior(_))));
}

fn lambda_dataset(prior_offset_celsius: f64) -> SeriesDataset {
    // clean truth is a smooth curve, training data is noisy, the prior is the
    // clean curve shifted by `prior_offset_celsius`
    let clean: Vec<f64> = (0..700).map(|k| 4.0 * (k as f64 / 60.0).sin()).collect();
    let ds = SeriesDataset::prepare(series(clean), 10).unwrap();
    let shift = prior_offset_celsius / ds.norm().scale;
    let prior: Vec<f64> = ds.normalized_series().iter().map(|v| v + shift).collect();
    ds.with_prior_values(&prior).inject_training_noise(0.3, 17).unwrap()
}

fn lambda_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 30,
        patience: 8,
        seed: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn perfect_prior_selects_the_largest_lambda() {
    let ds = lambda_dataset(0.0);
    let factory = || NeuralModel::new(Architecture::Mlp { hidden: [16, 16] }, 10, 6);
    let search = search_lambda(factory, &ds, &lambda_config(), &[0.0, 0.9]).unwrap();
    assert_eq!(search.best_lambda, 0.9, "{:?}", search.table);
}

#[test]
fn offset_prior_selects_zero_lambda() {
    let ds = lambda_dataset(10.0);
    let factory = || NeuralModel::new(Architecture::Mlp { hidden: [16, 16] }, 10, 6);
    let search = search_lambda(factory, &ds, &lambda_config(), &[0.0, 0.5, 0.9]).unwrap();
    assert_eq!(search.best_lambda, 0.0, "{:?}", search.table);
}

#[test]
fn lambda_search_is_consistent_with_its_table() {
    let ds = lambda_dataset(0.4);
    let factory = || NeuralModel::new(Architecture::Mlp { hidden: [8, 8] }, 10, 6);
    let grid = [0.0, 0.3, 0.6, 0.9];
    let search = search_lambda(factory, &ds, &lambda_config(), &grid).unwrap();
    let mut best = (f64::NAN, f64::INFINITY);
    for &(l, v) in &search.table {
        if v < best.1 {
            best = (l, v);
        }
    }
    assert_eq!(search.best_lambda, best.0);
    for trial in &search.trials {
        let recomputed = split_rmse(&trial.model, &ds, Split::Validation).unwrap();
        assert_eq!(recomputed, trial.val_rmse);
    }
}
