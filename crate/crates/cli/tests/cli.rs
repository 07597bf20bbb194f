use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pif-bench"));
    cmd.env_remove("PIF_BENCH_JOBS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn plan() -> Value {
    json!({
        "dataset": {"recipe": "builtin:primary", "step_s": 300, "lag_tau_s": 1800, "noise_sigma": 0.2, "seed": 3},
        "lookback": 12,
        "models": ["MLP", "ETS"],
        "losses": [{"strategy": "data_only"}, {"strategy": "fixed", "lambda": 0.3}],
        "tiers": [500],
        "seeds": [1, 2],
        "train": {"max_epochs": 3, "batch_size": 32, "patience": 2},
        "noise": {"sigmas": [0.0, 0.5]},
        "record_timing": false
    })
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn benchmark_writes_tables_config_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "plan.json", &plan());
    let out = tmp.path().join("r1");
    let res = run(&[
        "benchmark",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert!(out.join("tables/primary_tier500_normalized.csv").is_file());
    assert!(out.join("tables/primary_classical_celsius.csv").is_file());
    assert_eq!(fs::read(out.join("config.json")).unwrap(), fs::read(&config).unwrap());
    let m = manifest(&out);
    assert_eq!(m["complete"], true);
    assert_eq!(m["command"], "benchmark");
    assert_eq!(m["seeds"], json!([1, 2]));
    let outputs = m["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o["path"] == "benchmark.json"));
    assert!(outputs.iter().all(|o| o["sha256"].as_str().unwrap().len() == 64));
}

#[test]
fn reruns_give_identical_manifest_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "plan.json", &plan());
    let mut hashes = Vec::new();
    for dir in ["a", "b"] {
        let out = tmp.path().join(dir);
        let res = run(&[
            "robustness",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--jobs",
            "2",
            "--quiet",
        ]);
        assert!(res.status.success(), "{}", stderr(&res));
        hashes.push(manifest(&out)["outputs"].clone());
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn missing_key_exits_one_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let mut p = plan();
    p.as_object_mut().unwrap().remove("seeds");
    let config = write_config(tmp.path(), "plan.json", &p);
    let res = run(&[
        "benchmark",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("seeds"), "{}", stderr(&res));
}

#[test]
fn unknown_and_nested_keys_are_named() {
    let tmp = tempfile::tempdir().unwrap();
    let mut p = plan();
    p["train"]["max_epoch"] = json!(3);
    let config = write_config(tmp.path(), "plan.json", &p);
    let res = run(&[
        "benchmark",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("max_epoch"), "{}", stderr(&res));

    let mut p = plan();
    p["dataset"].as_object_mut().unwrap().remove("lag_tau_s");
    let config = write_config(tmp.path(), "plan2.json", &p);
    let res = run(&[
        "benchmark",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("dataset.lag_tau_s"), "{}", stderr(&res));
}

#[test]
fn bad_invocations_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(&[
        "benchmark",
        "--config",
        "/nonexistent/plan.json",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("--config"));

    let config = write_config(tmp.path(), "plan.json", &plan());
    let res = bin()
        .args([
            "benchmark",
            "--config",
            config.to_str().unwrap(),
            "--out",
            tmp.path().join("r").to_str().unwrap(),
        ])
        .env("PIF_BENCH_JOBS", "0")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("--jobs"));

    let res = run(&["benchmark"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn failed_cells_exit_two_and_report_the_subset() {
    let tmp = tempfile::tempdir().unwrap();
    let mut p = plan();
    p["models"] = json!(["LSTM", "ETS"]);
    p["losses"] = json!([{"strategy": "data_only"}]);
    p["tiers"] = json!([10]);
    p["seeds"] = json!([1]);
    let config = write_config(tmp.path(), "plan.json", &p);
    let out = tmp.path().join("partial");
    let res = run(&[
        "benchmark",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(res.status.code(), Some(2), "{}", stderr(&res));
    assert!(stderr(&res).contains("LSTM"));
    let m = manifest(&out);
    assert_eq!(m["complete"], false);
    assert_eq!(m["failures"].as_array().unwrap().len(), 1);

    let res = run(&["report", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", stderr(&res));
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.contains("ETS_fixed"), "{text}");
    assert!(!text.contains("\nLSTM "), "{text}");
    assert!(text.contains("2 warnings"), "{text}");
    assert!(text.contains("run is partial"), "{text}");
}

#[test]
fn report_marks_the_best_rmse_per_family() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "plan.json", &plan());
    let out = tmp.path().join("r");
    let res = run(&[
        "robustness",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let res = run(&["report", out.to_str().unwrap()]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.contains("0 warnings"), "{text}");
    assert!(text.contains("noise sweep: primary, input_only"), "{text}");
    let table: Vec<&str> = text
        .split("\n\n")
        .find(|t| t.starts_with("benchmark: primary, tier 500, normalized"))
        .unwrap()
        .lines()
        .collect();
    let marked = table.iter().filter(|l| l.contains(" *")).count();
    assert_eq!(marked, 1, "one family, one mark: {table:?}");
    let long = fs::read_to_string(out.join("report_long.csv")).unwrap();
    assert!(long.starts_with("model,sigma,mode,metric,value\n"));
    assert!(long.contains(",clean,RMSE,") && long.contains(",system_wide,RMSE_degC,"));
    assert_eq!(fs::read_to_string(out.join("report.txt")).unwrap(), text);
}

#[test]
fn report_without_a_manifest_warns_and_renders_what_exists() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "plan.json", &plan());
    let out = tmp.path().join("r");
    let res = run(&[
        "benchmark",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(res.status.success());
    fs::remove_file(out.join("manifest.json")).unwrap();
    let res = run(&["report", out.to_str().unwrap()]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.contains("benchmark: primary"), "{text}");
    assert!(text.contains("no usable manifest"), "{text}");

    let res = run(&["report", tmp.path().join("missing").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn train_then_transfer_from_its_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = json!({"recipe": "builtin:primary", "step_s": 300, "lag_tau_s": 1800, "noise_sigma": 0.1, "seed": 5});
    let train = json!({
        "dataset": dataset,
        "lookback": 10,
        "model": "MLP",
        "tier": 400,
        "loss": {"strategy": "fixed"},
        "lambda_grid": [0.0, 0.5],
        "train": {"max_epochs": 3, "batch_size": 32, "patience": 2}
    });
    let config = write_config(tmp.path(), "train.json", &train);
    let run_dir = tmp.path().join("train");
    let res = run(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--seed",
        "9",
        "--quiet",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert!(run_dir.join("model.ckpt").is_file());
    assert!(run_dir.join("lambda_table.csv").is_file());
    assert_eq!(manifest(&run_dir)["seeds"], json!([9]));

    let target = json!({"recipe": "builtin:secondary", "step_s": 300, "lag_tau_s": 1800, "noise_sigma": 0.1, "seed": 6});
    let transfer = json!({
        "source": {"checkpoint": "train/model.ckpt"},
        "target": target,
        "seeds": [1, 2],
        "train": {"max_epochs": 3, "batch_size": 32, "patience": 2}
    });
    let config = write_config(tmp.path(), "transfer.json", &transfer);
    let out = tmp.path().join("transfer");
    let res = run(&[
        "transfer",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let m = manifest(&out);
    assert!(m["inputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|i| i["path"].as_str().unwrap().ends_with("model.ckpt")));
    let rows = fs::read_to_string(out.join("transfer_rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 3 * 2 * 2);

    let mut mismatch = transfer.clone();
    mismatch["lookback"] = json!(12);
    let config = write_config(tmp.path(), "mismatch.json", &mismatch);
    let res = run(&[
        "transfer",
        "--config",
        config.to_str().unwrap(),
        "--out",
        tmp.path().join("bad").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1), "{}", stderr(&res));
    assert!(stderr(&res).contains("lookback"), "{}", stderr(&res));
}

#[test]
fn synth_resolves_recipe_paths_next_to_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let recipe = json!({
        "name": "custom", "time_unit": "hours",
        "setpoints": [18.0, -42.0, -15.0, 28.0],
        "boundaries": [0.0, 2.0, 6.5, 9.0, 19.0, 22.0, 32.0]
    });
    write_config(tmp.path(), "recipe.json", &recipe);
    let config = write_config(
        tmp.path(),
        "synth.json",
        &json!({"recipe": "recipe.json", "step_s": 600, "lag_tau_s": 1800, "noise_sigma": 0.0, "seed": 1}),
    );
    let out = tmp.path().join("s");
    let res = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let csv = fs::read_to_string(out.join("series.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 32 * 6 + 1);
    assert_eq!(manifest(&out)["inputs"].as_array().unwrap().len(), 2);

    let config = write_config(
        tmp.path(),
        "bad.json",
        &json!({"recipe": "nope.json", "step_s": 600, "lag_tau_s": 1800, "noise_sigma": 0.0, "seed": 1}),
    );
    let res = run(&["synth", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("recipe"), "{}", stderr(&res));
}
