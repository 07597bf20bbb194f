//! Renders study results into CSV and JSON files. Rendering is pure: every
//! function returns `(relative path, bytes)` pairs, and [`write_files`]
//! puts them on disk.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::NoiseMode;
use crate::metrics::Units;
use crate::training::TrainReport;

use super::benchmark::{AggregateRow, BenchmarkOutcome, CellFailure, MetricSummary, ResultRow, RowId};
use super::noise::NoiseSweep;
use super::transfer::TransferOutcome;
use super::ExperimentError;

/// Column layout of every results table.
pub const TABLE_HEADER: [&str; 6] = ["Model", "RMSE", "Linf_RMSE", "GradientError", "Linf_GradError", "TrainingTime_s"];

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const BENCHMARK_JSON: &str = "benchmark.json";
pub const NOISE_JSON: &str = "noise.json";
pub const TRANSFER_JSON: &str = "transfer.json";

pub type OutputFile = (String, Vec<u8>);

fn metric(v: f64) -> String {
    format!("{v:.6}")
}

fn seconds(v: f64, timing: bool) -> String {
    if timing {
        format!("{v:.2}")
    } else {
        "NA".to_string()
    }
}

fn table_cells(m: &MetricSummary, timing: bool) -> [String; 5] {
    [
        metric(m.rmse),
        metric(m.linf_rmse),
        metric(m.gradient_error),
        metric(m.linf_grad_error),
        seconds(m.train_seconds, timing),
    ]
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn json_bytes(value: &impl Serialize) -> Result<Vec<u8>, ExperimentError> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

const UNITS: [Units; 2] = [Units::Normalized, Units::Celsius];

fn mean_of(a: &AggregateRow, units: Units) -> &MetricSummary {
    match units {
        Units::Normalized => &a.normalized_mean,
        Units::Celsius => &a.celsius_mean,
    }
}

#[derive(Serialize)]
struct BenchmarkBundle<'a> {
    record_timing: bool,
    table_units: &'static str,
    rows: &'a [ResultRow],
    aggregates: &'a [AggregateRow],
    failures: &'a [CellFailure],
    lambda_tables: &'a [(RowId, Vec<(f64, f64)>)],
    train_reports: &'a [(RowId, TrainReport)],
}

/// Owned form of the benchmark bundle, for readers.
#[derive(Debug, Clone, Deserialize)]
pub struct BenchmarkRecord {
    pub record_timing: bool,
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
    pub failures: Vec<CellFailure>,
}

/// Seed-mean tables (classical, then one per tier, per dataset and unit),
/// the long per-seed table, training curves and the JSON bundle.
pub fn benchmark_files(outcome: &BenchmarkOutcome) -> Result<Vec<OutputFile>, ExperimentError> {
    let timing = outcome.record_timing;
    let mut files = Vec::new();
    let mut datasets: Vec<&str> = Vec::new();
    let mut tiers: Vec<usize> = Vec::new();
    for a in &outcome.aggregates {
        if !datasets.contains(&a.id.dataset.as_str()) {
            datasets.push(&a.id.dataset);
        }
        if let Some(t) = a.id.tier {
            if !tiers.contains(&t) {
                tiers.push(t);
            }
        }
    }
    for ds in &datasets {
        let mut groups: Vec<(String, Vec<&AggregateRow>)> = Vec::new();
        let classical: Vec<&AggregateRow> = outcome
            .aggregates
            .iter()
            .filter(|a| a.id.dataset == *ds && a.id.tier.is_none())
            .collect();
        if !classical.is_empty() {
            groups.push(("classical".to_string(), classical));
        }
        for t in &tiers {
            let rows: Vec<&AggregateRow> = outcome
                .aggregates
                .iter()
                .filter(|a| a.id.dataset == *ds && a.id.tier == Some(*t))
                .collect();
            if !rows.is_empty() {
                groups.push((format!("tier{t}"), rows));
            }
        }
        for (group, rows) in &groups {
            for units in UNITS {
                let body = rows.iter().map(|a| {
                    let mut r = vec![a.id.model.clone()];
                    r.extend(table_cells(mean_of(a, units), timing));
                    r
                });
                files.push((
                    format!("tables/{}_{group}_{}.csv", file_stem(ds), units.label()),
                    csv_bytes(&TABLE_HEADER, body),
                ));
            }
        }
    }

    let header = [
        "dataset",
        "model",
        "family",
        "strategy",
        "tier",
        "parameters",
        "seed",
        "stat",
        "units",
        "RMSE",
        "Linf_RMSE",
        "GradientError",
        "Linf_GradError",
        "TrainingTime_s",
        "lambda",
        "blend_alpha",
        "blend_beta",
    ];
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut lines = Vec::new();
    for row in &outcome.rows {
        for (units, report) in [(Units::Normalized, &row.normalized), (Units::Celsius, &row.celsius)] {
            let mut r = id_cells(&row.id, row.parameters);
            r.push("seed".into());
            r.push(units.label().into());
            r.extend(table_cells(&MetricSummary::of(report), timing));
            r.push(opt(row.lambda.map(|l| l.to_string())));
            r.push(opt(row.blend.map(|b| b.alpha.to_string())));
            r.push(opt(row.blend.map(|b| b.beta.to_string())));
            lines.push(r);
        }
    }
    for a in &outcome.aggregates {
        for (stat, units, m) in [
            ("mean", Units::Normalized, &a.normalized_mean),
            ("std", Units::Normalized, &a.normalized_std),
            ("mean", Units::Celsius, &a.celsius_mean),
            ("std", Units::Celsius, &a.celsius_std),
        ] {
            let mut r = id_cells(&a.id, a.parameters);
            r.push(stat.into());
            r.push(units.label().into());
            r.extend(table_cells(m, timing));
            r.extend([String::new(), String::new(), String::new()]);
            lines.push(r);
        }
    }
    files.push(("benchmark_rows.csv".to_string(), csv_bytes(&header, lines)));

    for (id, report) in &outcome.reports {
        let name = format!(
            "curves/{}_{}_t{}_s{}.csv",
            file_stem(&id.dataset),
            file_stem(&id.model),
            id.tier.unwrap_or(0),
            id.seed.unwrap_or(0)
        );
        files.push((name, report.curves_csv().into_bytes()));
    }

    let bundle = BenchmarkBundle {
        record_timing: timing,
        table_units: Units::Normalized.label(),
        rows: &outcome.rows,
        aggregates: &outcome.aggregates,
        failures: &outcome.failures,
        lambda_tables: &outcome.lambda_tables,
        train_reports: &outcome.reports,
    };
    files.push((BENCHMARK_JSON.to_string(), json_bytes(&bundle)?));
    Ok(files)
}

fn id_cells(id: &RowId, parameters: Option<usize>) -> Vec<String> {
    vec![
        id.dataset.clone(),
        id.model.clone(),
        id.family.clone(),
        id.strategy.clone(),
        id.tier.map(|t| t.to_string()).unwrap_or_default(),
        parameters.map(|p| p.to_string()).unwrap_or_default(),
        id.seed.map(|s| s.to_string()).unwrap_or_default(),
    ]
}

/// Header of the plot-ready long table.
pub const LONG_HEADER: [&str; 5] = ["model", "sigma", "mode", "metric", "value"];

fn long_rows(label: &str, sigma: f64, mode: &str, norm: &MetricSummary, cels: &MetricSummary) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for (suffix, m) in [("", norm), ("_degC", cels)] {
        for (name, v) in [
            ("RMSE", m.rmse),
            ("Linf_RMSE", m.linf_rmse),
            ("GradientError", m.gradient_error),
            ("Linf_GradError", m.linf_grad_error),
        ] {
            out.push(vec![
                label.to_string(),
                format!("{sigma:.2}"),
                mode.to_string(),
                format!("{name}{suffix}"),
                metric(v),
            ]);
        }
    }
    out
}

/// Long-format rows for the clean benchmark (`mode = clean`, `sigma = 0`).
pub fn benchmark_long_rows(aggregates: &[AggregateRow]) -> Vec<Vec<String>> {
    aggregates
        .iter()
        .flat_map(|a| long_rows(&a.id.label(), 0.0, "clean", &a.normalized_mean, &a.celsius_mean))
        .collect()
}

/// Long-format rows for the noise curves.
pub fn noise_long_rows(sweep: &NoiseSweep) -> Vec<Vec<String>> {
    sweep
        .aggregates
        .iter()
        .flat_map(|a| long_rows(&a.id.label(), a.sigma, a.mode.label(), &a.normalized_mean, &a.celsius_mean))
        .collect()
}

/// Long-format rows for the transfer strategies (`mode = transfer`).
pub fn transfer_long_rows(outcome: &TransferOutcome) -> Vec<Vec<String>> {
    outcome
        .aggregates
        .iter()
        .flat_map(|a| long_rows(a.strategy.label(), 0.0, "transfer", &a.normalized_mean, &a.celsius_mean))
        .collect()
}

pub fn long_csv(rows: Vec<Vec<String>>) -> Vec<u8> {
    csv_bytes(&LONG_HEADER, rows)
}

/// Curve tables (seed means, one per dataset, mode and unit), the long
/// table and the JSON bundle.
pub fn noise_files(sweep: &NoiseSweep) -> Result<Vec<OutputFile>, ExperimentError> {
    let mut files = Vec::new();
    let mut keys: Vec<(String, NoiseMode)> = Vec::new();
    for a in &sweep.aggregates {
        let k = (a.id.dataset.clone(), a.mode);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let header = ["Model", "Sigma", "RMSE", "Linf_RMSE", "GradientError", "Linf_GradError"];
    for (ds, mode) in &keys {
        for units in UNITS {
            let body = sweep.aggregates.iter().filter(|a| &a.id.dataset == ds && a.mode == *mode).map(|a| {
                let m = match units {
                    Units::Normalized => &a.normalized_mean,
                    Units::Celsius => &a.celsius_mean,
                };
                let label = match a.id.tier {
                    Some(t) => format!("{}@{t}", a.id.model),
                    None => a.id.model.clone(),
                };
                vec![
                    label,
                    format!("{:.2}", a.sigma),
                    metric(m.rmse),
                    metric(m.linf_rmse),
                    metric(m.gradient_error),
                    metric(m.linf_grad_error),
                ]
            });
            files.push((
                format!("tables/{}_noise_{}_{}.csv", file_stem(ds), mode.label(), units.label()),
                csv_bytes(&header, body),
            ));
        }
    }
    files.push(("noise_long.csv".to_string(), long_csv(noise_long_rows(sweep))));
    files.push((NOISE_JSON.to_string(), json_bytes(sweep)?));
    Ok(files)
}

/// Strategy tables (seed means per unit), per-seed rows and the bundle.
pub fn transfer_files(outcome: &TransferOutcome) -> Result<Vec<OutputFile>, ExperimentError> {
    let timing = outcome.record_timing;
    let mut files = Vec::new();
    for units in UNITS {
        let body = outcome.aggregates.iter().map(|a| {
            let m = match units {
                Units::Normalized => &a.normalized_mean,
                Units::Celsius => &a.celsius_mean,
            };
            let mut r = vec![a.strategy.label().to_string()];
            r.extend(table_cells(m, timing));
            r
        });
        files.push((format!("tables/transfer_{}.csv", units.label()), csv_bytes(&TABLE_HEADER, body)));
    }
    let header = [
        "strategy",
        "seed",
        "units",
        "RMSE",
        "Linf_RMSE",
        "GradientError",
        "Linf_GradError",
        "TrainingTime_s",
        "epochs",
        "body_unchanged",
    ];
    let mut lines = Vec::new();
    for row in &outcome.rows {
        for report in [&row.normalized, &row.celsius] {
            let mut r = vec![
                row.strategy.label().to_string(),
                row.seed.to_string(),
                report.units.label().to_string(),
            ];
            r.extend(table_cells(&MetricSummary::of(report), timing));
            r.push(row.epochs_run.to_string());
            r.push((row.body_checksum_before == row.body_checksum_after).to_string());
            lines.push(r);
        }
    }
    files.push(("transfer_rows.csv".to_string(), csv_bytes(&header, lines)));
    files.push((TRANSFER_JSON.to_string(), json_bytes(outcome)?));
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileEntry {
    pub fn of(path: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            path: path.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Self-description of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub complete: bool,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub failures: Vec<CellFailure>,
    pub warnings: Vec<String>,
}

/// Writes files under `dir`, creating parent directories, and returns
/// their manifest entries.
pub fn write_files(dir: &Path, files: &[OutputFile]) -> Result<Vec<FileEntry>, ExperimentError> {
    let mut entries = Vec::with_capacity(files.len());
    for (rel, bytes) in files {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| ExperimentError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(&path, bytes).map_err(|source| ExperimentError::Io {
            path: path.clone(),
            source,
        })?;
        entries.push(FileEntry::of(rel.clone(), bytes));
    }
    Ok(entries)
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), ExperimentError> {
    write_files(dir, &[(MANIFEST_FILE.to_string(), json_bytes(manifest)?)]).map(|_| ())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, ExperimentError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|source| ExperimentError::Io { path, source })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_cells_honor_the_flag() {
        let m = MetricSummary {
            train_seconds: 1.234,
            ..MetricSummary::default()
        };
        assert_eq!(table_cells(&m, true)[4], "1.23");
        assert_eq!(table_cells(&m, false)[4], "NA");
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("a/b c"), "a_b_c");
    }
}
