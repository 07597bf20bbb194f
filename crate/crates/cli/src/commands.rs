use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};

use serde::de::DeserializeOwned;
use serde::Serialize;

use pif_core::data::{save_csv, synthesize, RecipeSpec, SyntheticConfigFile, BUILTIN_PRIMARY, BUILTIN_SECONDARY};
use pif_core::experiments::output::{
    benchmark_files, noise_files, transfer_files, write_files, write_manifest, FileEntry, Manifest, OutputFile, CONFIG_FILE,
};
use pif_core::experiments::{
    run_benchmark, run_noise_sweep, run_train, run_transfer, BenchmarkPlan, CellFailure, DatasetSpec, ExperimentError, RunOptions,
    TrainPlan, TransferPlan, TransferSource,
};
use pif_core::neural::write_checkpoint;
use pif_core::recipe::save_recipe;

use crate::{CliError, RunArgs};

static CANCEL: OnceLock<Arc<AtomicBool>> = OnceLock::new();

/// Flag raised by Ctrl-C; cells that have not started yet are skipped and
/// whatever finished is written out.
fn cancel_flag() -> Arc<AtomicBool> {
    CANCEL
        .get_or_init(|| {
            let flag = Arc::new(AtomicBool::new(false));
            let handler_flag = flag.clone();
            // a second handler cannot be installed; the first one is enough
            let _ = ctrlc::set_handler(move || handler_flag.store(true, Ordering::SeqCst));
            flag
        })
        .clone()
}

/// Everything a run subcommand shares: the raw config, the run directory
/// and the execution options.
struct Run<'a> {
    command: &'static str,
    args: &'a RunArgs,
    config: Vec<u8>,
    options: RunOptions,
}

#[derive(Default)]
struct Finish {
    files: Vec<OutputFile>,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    failures: Vec<CellFailure>,
    warnings: Vec<String>,
    complete: bool,
}

impl<'a> Run<'a> {
    fn start(command: &'static str, args: &'a RunArgs) -> Result<Self, CliError> {
        let config = fs::read(&args.config).map_err(|e| CliError::Config(format!("--config {}: {e}", args.config.display())))?;
        if args.jobs == Some(0) {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        fs::create_dir_all(&args.out).map_err(|e| CliError::Config(format!("--out {}: {e}", args.out.display())))?;
        let probe = args.out.join(".pif-bench-write-check");
        fs::write(&probe, b"").map_err(|e| CliError::Config(format!("--out {}: not writable: {e}", args.out.display())))?;
        let _ = fs::remove_file(&probe);
        let base_dir = args.config.parent().map(Path::to_path_buf).filter(|p| !p.as_os_str().is_empty());
        Ok(Self {
            command,
            args,
            config,
            options: RunOptions {
                jobs: args.jobs,
                base_dir,
                cancel: Some(cancel_flag()),
            },
        })
    }

    fn plan<T: DeserializeOwned>(&self) -> Result<T, CliError> {
        serde_json::from_slice(&self.config).map_err(|e| CliError::Config(format!("{}: {e}", self.args.config.display())))
    }

    fn log(&self, msg: impl AsRef<str>) {
        if !self.args.quiet {
            eprintln!("[{}] {}", self.command, msg.as_ref());
        }
    }

    fn resolve(&self, path: &str) -> PathBuf {
        match &self.options.base_dir {
            Some(b) if Path::new(path).is_relative() => b.join(path),
            _ => PathBuf::from(path),
        }
    }

    fn interrupted(&self) -> bool {
        self.options.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst))
    }

    /// Writes the outputs, the config copy and the manifest. An incomplete
    /// run still writes everything it has and then reports a runtime error.
    fn finish(&self, mut done: Finish) -> Result<(), CliError> {
        done.files.push((CONFIG_FILE.to_string(), self.config.clone()));
        let outputs = write_files(&self.args.out, &done.files).map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut inputs = vec![FileEntry::of(self.args.config.display().to_string(), &self.config)];
        for path in &done.inputs {
            match fs::read(path) {
                Ok(bytes) => inputs.push(FileEntry::of(path.display().to_string(), &bytes)),
                Err(e) => done.warnings.push(format!("input {} not hashed: {e}", path.display())),
            }
        }
        if self.interrupted() {
            done.complete = false;
            done.warnings.push("interrupted; unfinished cells were skipped".into());
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            complete: done.complete && done.failures.is_empty(),
            seeds: done.seeds,
            inputs,
            outputs,
            failures: done.failures,
            warnings: done.warnings,
        };
        write_manifest(&self.args.out, &manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.log(format!("wrote {} files to {}", manifest.outputs.len() + 1, self.args.out.display()));
        if manifest.complete {
            return Ok(());
        }
        let mut reasons: Vec<String> = manifest
            .failures
            .iter()
            .map(|f| format!("{}/{}: {}", f.dataset, f.cell, f.error))
            .collect();
        reasons.extend(manifest.warnings.iter().cloned());
        Err(CliError::Runtime(format!(
            "run incomplete, partial results in {}: {}",
            self.args.out.display(),
            reasons.join("; ")
        )))
    }

    /// Records a failed run: the config copy and a manifest naming the
    /// error, then the error itself.
    fn abort(&self, error: ExperimentError, seeds: Vec<u64>, inputs: Vec<PathBuf>) -> CliError {
        let err = CliError::from(error);
        if matches!(err, CliError::Config(_)) {
            return err;
        }
        let done = Finish {
            seeds,
            inputs,
            warnings: vec![err.to_string()],
            ..Finish::default()
        };
        match self.finish(done) {
            Err(e) => e,
            Ok(()) => err,
        }
    }
}

fn recipe_input(run: &Run, spec: &RecipeSpec, out: &mut Vec<PathBuf>) {
    if let RecipeSpec::Path(p) = spec {
        if p != BUILTIN_PRIMARY && p != BUILTIN_SECONDARY {
            out.push(run.resolve(p));
        }
    }
}

fn dataset_inputs(run: &Run, spec: &DatasetSpec, out: &mut Vec<PathBuf>) {
    if let Some(csv) = &spec.csv {
        out.push(run.resolve(csv));
    }
    if let Some(recipe) = &spec.recipe {
        recipe_input(run, recipe, out);
    }
}

fn json_file(name: &str, value: &impl Serialize) -> Result<OutputFile, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    bytes.push(b'\n');
    Ok((name.to_string(), bytes))
}

pub fn synth(args: &RunArgs) -> Result<(), CliError> {
    let run = Run::start("synth", args)?;
    let mut plan: SyntheticConfigFile = run.plan()?;
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    let mut inputs = Vec::new();
    recipe_input(&run, &plan.recipe, &mut inputs);
    let config = plan
        .resolve(run.options.base_dir.as_deref())
        .map_err(|e| CliError::Config(format!("recipe: {e}")))?;
    let series = synthesize(&config).map_err(|e| CliError::Config(e.to_string()))?;
    run.log(format!("{} samples of recipe `{}`", series.len(), config.recipe.name()));
    let series_path = args.out.join("series.csv");
    let recipe_path = args.out.join("recipe.json");
    save_csv(&series, &series_path).map_err(|e| CliError::Runtime(e.to_string()))?;
    save_recipe(&config.recipe, &recipe_path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let read = |p: &Path| fs::read(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())));
    let files = vec![
        ("series.csv".to_string(), read(&series_path)?),
        ("recipe.json".to_string(), read(&recipe_path)?),
    ];
    run.finish(Finish {
        files,
        seeds: vec![plan.seed],
        inputs,
        complete: true,
        ..Finish::default()
    })
}

pub fn train(args: &RunArgs) -> Result<(), CliError> {
    let run = Run::start("train", args)?;
    let mut plan: TrainPlan = run.plan()?;
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    let mut inputs = Vec::new();
    dataset_inputs(&run, &plan.dataset, &mut inputs);
    run.log(format!(
        "training {} at tier {} with {} loss",
        plan.model,
        plan.tier,
        plan.loss.label()
    ));
    let out = match run_train(&plan, &run.options) {
        Ok(out) => out,
        Err(e) => return Err(run.abort(e, vec![plan.seed], inputs)),
    };
    let mut checkpoint = Vec::new();
    write_checkpoint(&out.model, &mut checkpoint).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut files = vec![
        ("model.ckpt".to_string(), checkpoint),
        ("curves.csv".to_string(), out.report.curves_csv().into_bytes()),
        json_file(
            "result.json",
            &serde_json::json!({ "row": out.row, "report": out.report, "lambda_table": out.lambda_table }),
        )?,
    ];
    if let Some(table) = &out.lambda_table {
        let mut csv = String::from("lambda,val_rmse\n");
        for (lambda, rmse) in table {
            csv.push_str(&format!("{lambda},{rmse}\n"));
        }
        files.push(("lambda_table.csv".to_string(), csv.into_bytes()));
    }
    run.log(format!(
        "test RMSE {:.6} (normalized), {:.6} degC",
        out.row.normalized.rmse, out.row.celsius.rmse
    ));
    run.finish(Finish {
        files,
        seeds: vec![plan.seed],
        inputs,
        complete: true,
        ..Finish::default()
    })
}

fn benchmark_plan(run: &Run) -> Result<(BenchmarkPlan, Vec<PathBuf>), CliError> {
    let mut plan: BenchmarkPlan = run.plan()?;
    if let Some(seed) = run.args.seed {
        plan.seeds = vec![seed];
    }
    let mut inputs = Vec::new();
    dataset_inputs(run, &plan.dataset, &mut inputs);
    if let Some(secondary) = &plan.secondary {
        dataset_inputs(run, secondary, &mut inputs);
    }
    Ok((plan, inputs))
}

pub fn benchmark(args: &RunArgs) -> Result<(), CliError> {
    let run = Run::start("benchmark", args)?;
    let (plan, inputs) = benchmark_plan(&run)?;
    run.log(format!(
        "{} models x {} losses x {} tiers x {} seeds",
        plan.models.len(),
        plan.losses.len(),
        plan.tiers.len(),
        plan.seeds.len()
    ));
    let out = match run_benchmark(&plan, &run.options) {
        Ok(out) => out,
        Err(e) => return Err(run.abort(e, plan.seeds.clone(), inputs)),
    };
    run.log(format!("{} rows, {} failed cells", out.rows.len(), out.failures.len()));
    let files = benchmark_files(&out)?;
    run.finish(Finish {
        files,
        seeds: plan.seeds,
        inputs,
        failures: out.failures,
        complete: true,
        ..Finish::default()
    })
}

pub fn robustness(args: &RunArgs) -> Result<(), CliError> {
    let run = Run::start("robustness", args)?;
    let (plan, inputs) = benchmark_plan(&run)?;
    plan.noise.validate()?;
    let out = match run_benchmark(&plan, &run.options) {
        Ok(out) => out,
        Err(e) => return Err(run.abort(e, plan.seeds.clone(), inputs)),
    };
    run.log(format!(
        "benchmark done: {} rows; sweeping {} noise levels",
        out.rows.len(),
        plan.noise.sigmas.len()
    ));
    let mut files = benchmark_files(&out)?;
    let mut warnings = Vec::new();
    let mut complete = true;
    match run_noise_sweep(&plan.noise, &out.models, &out.datasets, &run.options) {
        Ok(sweep) => files.extend(noise_files(&sweep)?),
        Err(e) => {
            complete = false;
            warnings.push(format!("noise sweep: {e}"));
        }
    }
    run.finish(Finish {
        files,
        seeds: plan.seeds,
        inputs,
        failures: out.failures,
        warnings,
        complete,
    })
}

pub fn transfer(args: &RunArgs) -> Result<(), CliError> {
    let run = Run::start("transfer", args)?;
    let mut plan: TransferPlan = run.plan()?;
    if let Some(seed) = args.seed {
        plan.seeds = vec![seed];
    }
    let mut inputs = Vec::new();
    match &plan.source {
        TransferSource::Checkpoint(path) => inputs.push(run.resolve(path)),
        TransferSource::Pretrain(spec) => dataset_inputs(&run, &spec.dataset, &mut inputs),
    }
    dataset_inputs(&run, &plan.target, &mut inputs);
    run.log(format!("{} strategies x {} seeds", plan.strategies.len(), plan.seeds.len()));
    let out = match run_transfer(&plan, &run.options) {
        Ok(out) => out,
        Err(e) => return Err(run.abort(e, plan.seeds.clone(), inputs)),
    };
    let sources: BTreeSet<&str> = out.rows.iter().map(|r| r.source_checksum.as_str()).collect();
    run.log(format!("{} rows from {} source models", out.rows.len(), sources.len()));
    let files = transfer_files(&out)?;
    run.finish(Finish {
        files,
        seeds: plan.seeds,
        inputs,
        complete: true,
        ..Finish::default()
    })
}
