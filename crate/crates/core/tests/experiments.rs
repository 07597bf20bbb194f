use pif_core::classical::ClassicalKind;
use pif_core::data::NoiseMode;
use pif_core::experiments::output::{benchmark_files, noise_files, transfer_files};
use pif_core::experiments::{
    run_benchmark, run_noise_sweep, run_transfer, BenchmarkPlan, DatasetSpec, ModelKind, NoiseSpec, PretrainSpec, RunOptions,
    TrainSettings, TransferPlan, TransferSource, TransferStrategy,
};
use pif_core::losses::LossConfig;
use pif_core::neural::Family;
use pif_core::recipe::{reference_recipe, secondary_recipe};

fn primary() -> DatasetSpec {
    DatasetSpec::synthetic(&reference_recipe(), 300.0, 1800.0, 0.2, 4)
}

fn quick() -> TrainSettings {
    TrainSettings {
        max_epochs: 8,
        batch_size: 32,
        learning_rate: None,
        patience: 3,
    }
}

fn plan(models: Vec<ModelKind>, losses: Vec<LossConfig>, seeds: Vec<u64>) -> BenchmarkPlan {
    BenchmarkPlan {
        dataset: primary(),
        secondary: None,
        lookback: 12,
        models,
        losses,
        tiers: vec![600],
        seeds,
        train: quick(),
        lambda_grid: vec![0.0, 0.5],
        noise: NoiseSpec::default(),
        training_noise: None,
        record_timing: false,
    }
}

fn options() -> RunOptions {
    RunOptions {
        jobs: Some(2),
        ..RunOptions::default()
    }
}

#[test]
fn one_cell_gives_one_row() {
    let p = plan(vec![ModelKind::Neural(Family::Mlp)], vec![LossConfig::DataOnly], vec![1]);
    let out = run_benchmark(&p, &options()).unwrap();
    assert!(out.is_complete(), "{:?}", out.failures);
    assert_eq!(out.rows.len(), 1);
    assert_eq!(out.rows[0].id.model, "MLP");
    assert_eq!(out.aggregates.len(), 1);
}

#[test]
fn classical_rows_include_blends() {
    let p = plan(
        vec![ModelKind::Classical(ClassicalKind::Ar), ModelKind::Classical(ClassicalKind::LinReg)],
        vec![],
        vec![0],
    );
    let out = run_benchmark(&p, &options()).unwrap();
    let names: Vec<&str> = out.rows.iter().map(|r| r.id.model.as_str()).collect();
    assert_eq!(names, ["ARIMA", "ARIMA_fixed", "LinReg", "LinReg_fixed"]);
    for row in &out.rows {
        assert!(row.normalized.is_finite());
    }
}

#[test]
fn aggregate_is_the_seed_average() {
    let p = plan(
        vec![ModelKind::Neural(Family::Ckan)],
        vec![LossConfig::Fixed { lambda: Some(0.3) }],
        vec![1, 2, 3],
    );
    let out = run_benchmark(&p, &options()).unwrap();
    assert_eq!(out.rows.len(), 3);
    let agg = &out.aggregates[0];
    assert_eq!(agg.id.model, "cKAN_fixed");
    assert_eq!(agg.seeds, 3);
    let mut sum = 0.0;
    let mut sum_c = 0.0;
    for row in &out.rows {
        sum += row.normalized.rmse;
        sum_c += row.celsius.linf_grad_error;
    }
    assert!((agg.normalized_mean.rmse - sum / 3.0).abs() < 1e-15);
    assert!((agg.celsius_mean.linf_grad_error - sum_c / 3.0).abs() < 1e-12);
    let mean = sum / 3.0;
    let var = out.rows.iter().map(|r| (r.normalized.rmse - mean).powi(2)).sum::<f64>() / 2.0;
    assert!((agg.normalized_std.rmse - var.sqrt()).abs() < 1e-15);
}

#[test]
fn searched_lambda_comes_from_the_grid() {
    let p = plan(
        vec![ModelKind::Neural(Family::Mlp)],
        vec![LossConfig::Fixed { lambda: None }],
        vec![5],
    );
    let out = run_benchmark(&p, &options()).unwrap();
    let lambda = out.rows[0].lambda.unwrap();
    assert!(p.lambda_grid.contains(&lambda));
    assert_eq!(out.lambda_tables.len(), 1);
}

#[test]
fn failing_cells_do_not_stop_the_plan() {
    // tier 10 is out of reach for an LSTM with this lookback
    let mut p = plan(
        vec![ModelKind::Neural(Family::Lstm), ModelKind::Classical(ClassicalKind::Ets)],
        vec![LossConfig::DataOnly],
        vec![1],
    );
    p.tiers = vec![10];
    let out = run_benchmark(&p, &options()).unwrap();
    assert_eq!(out.failures.len(), 1);
    assert!(out.failures[0].cell.starts_with("LSTM"));
    assert_eq!(out.rows.len(), 2);
}

#[test]
fn noise_curves_start_at_the_clean_row() {
    let p = plan(
        vec![ModelKind::Neural(Family::Rnn), ModelKind::Classical(ClassicalKind::Kalman)],
        vec![LossConfig::DataOnly],
        vec![3],
    );
    let options = options();
    let out = run_benchmark(&p, &options).unwrap();
    let sweep = run_noise_sweep(&p.noise, &out.models, &out.datasets, &options).unwrap();
    assert_eq!(sweep.points.len(), out.models.len() * 11 * 2);
    for point in sweep.points.iter().filter(|p| p.sigma == 0.0) {
        let clean = out.rows.iter().find(|r| r.id == point.id).unwrap();
        assert_eq!(point.normalized, clean.normalized);
        assert_eq!(point.celsius, clean.celsius);
    }
    for model in ["Kalman", "Kalman_fixed"] {
        let curve: Vec<_> = sweep
            .points
            .iter()
            .filter(|p| p.id.model == model && p.mode == NoiseMode::InputOnly)
            .collect();
        assert!(curve.iter().all(|p| p.normalized == curve[0].normalized), "{model}");
        let system: Vec<f64> = sweep
            .points
            .iter()
            .filter(|p| p.id.model == model && p.mode == NoiseMode::SystemWide)
            .map(|p| p.normalized.rmse)
            .collect();
        assert!(system.last() > system.first(), "{model}: {system:?}");
    }
    let rnn_input: Vec<f64> = sweep
        .points
        .iter()
        .filter(|p| p.id.model == "RNN" && p.mode == NoiseMode::InputOnly)
        .map(|p| p.normalized.rmse)
        .collect();
    assert!(rnn_input[10] > rnn_input[0]);
}

#[test]
fn outputs_are_reproducible_without_timing() {
    let p = plan(
        vec![ModelKind::Neural(Family::Lem), ModelKind::Classical(ClassicalKind::Ets)],
        vec![LossConfig::DataOnly, LossConfig::Rba { eta: 0.01 }],
        vec![1, 2],
    );
    let render = || {
        let out = run_benchmark(&p, &options()).unwrap();
        let sweep = run_noise_sweep(&p.noise, &out.models, &out.datasets, &options()).unwrap();
        let mut files = benchmark_files(&out).unwrap();
        files.extend(noise_files(&sweep).unwrap());
        files
    };
    let a = render();
    let b = render();
    assert_eq!(a, b);
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"tables/primary_classical_normalized.csv"));
    assert!(names.contains(&"tables/primary_tier600_celsius.csv"));
    assert!(names.contains(&"tables/primary_noise_system_wide_normalized.csv"));
    let table = String::from_utf8(
        a.iter()
            .find(|(n, _)| n == "tables/primary_tier600_normalized.csv")
            .unwrap()
            .1
            .clone(),
    )
    .unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("Model,RMSE,Linf_RMSE,GradientError,Linf_GradError,TrainingTime_s")
    );
    let first = lines.next().unwrap();
    assert!(first.starts_with("LEM,") && first.ends_with(",NA"), "{first}");
}

#[test]
fn transfer_strategies() {
    let plan = TransferPlan {
        source: TransferSource::Pretrain(PretrainSpec {
            dataset: primary(),
            model: Family::Ckan,
            tier: 600,
            lookback: 12,
            loss: LossConfig::DataOnly,
        }),
        target: DatasetSpec::synthetic(&secondary_recipe(), 300.0, 1800.0, 0.2, 9),
        lookback: None,
        strategies: TransferStrategy::ALL.to_vec(),
        seeds: vec![1, 2],
        train: quick(),
        probe_learning_rate: 1e-2,
        finetune_rate_factor: 0.1,
        record_timing: true,
    };
    let out = run_transfer(&plan, &options()).unwrap();
    assert_eq!(out.rows.len(), 6);
    for row in &out.rows {
        match row.strategy {
            TransferStrategy::BaselineEval => {
                assert_eq!(row.normalized.train_seconds, 0.0);
                assert_eq!(row.body_checksum_after, row.body_checksum_before);
            }
            TransferStrategy::LinearProbe => {
                assert_eq!(row.body_checksum_after, row.body_checksum_before);
                assert!(row.normalized.train_seconds > 0.0);
            }
            TransferStrategy::FullFinetune => assert_ne!(row.body_checksum_after, row.body_checksum_before),
        }
    }
    let files = transfer_files(&out).unwrap();
    assert!(files.iter().any(|(n, _)| n == "tables/transfer_normalized.csv"));
}

#[test]
fn transfer_rejects_a_lookback_mismatch() {
    let plan = TransferPlan {
        source: TransferSource::Pretrain(PretrainSpec {
            dataset: primary(),
            model: Family::Mlp,
            tier: 600,
            lookback: 12,
            loss: LossConfig::DataOnly,
        }),
        target: primary(),
        lookback: Some(20),
        strategies: vec![TransferStrategy::BaselineEval],
        seeds: vec![1],
        train: quick(),
        probe_learning_rate: 1e-2,
        finetune_rate_factor: 0.1,
        record_timing: false,
    };
    let err = run_transfer(&plan, &options()).unwrap_err();
    assert!(err.is_config(), "{err}");
}
