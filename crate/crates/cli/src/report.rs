use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use pif_core::experiments::output::{
    benchmark_long_rows, long_csv, noise_long_rows, read_manifest, sha256_hex, transfer_long_rows, BenchmarkRecord, BENCHMARK_JSON,
    NOISE_JSON, TRANSFER_JSON,
};
use pif_core::experiments::{AggregateRow, MetricSummary, NoiseSweep, TransferOutcome};

use crate::CliError;

pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_LONG: &str = "report_long.csv";

/// Marker appended to the best RMSE within each family.
const BEST: &str = " *";

/// Renders every result bundle found in `dir` as plain-text tables, writes
/// them with a long-format CSV next to the bundles, and lists anything
/// missing or inconsistent as warnings.
pub fn run(dir: &Path, quiet: bool) -> Result<(), CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("run directory {}: not found", dir.display())));
    }
    let mut warnings = Vec::new();
    match read_manifest(dir) {
        Ok(manifest) => {
            if !manifest.complete {
                warnings.push(format!("run is partial: {} failed cells", manifest.failures.len()));
            }
            warnings.extend(manifest.warnings.iter().map(|w| format!("run: {w}")));
            for f in &manifest.failures {
                warnings.push(format!("cell {}/{} failed: {}", f.dataset, f.cell, f.error));
            }
            for entry in &manifest.outputs {
                match fs::read(dir.join(&entry.path)) {
                    Err(_) => warnings.push(format!("listed output {} is missing", entry.path)),
                    Ok(bytes) if sha256_hex(&bytes) != entry.sha256 => {
                        warnings.push(format!("output {} changed since the run", entry.path))
                    }
                    Ok(_) => {}
                }
            }
        }
        Err(e) => warnings.push(format!("no usable manifest ({e}); rendering the bundles present")),
    }

    let mut text = String::new();
    let mut long = Vec::new();
    let mut found = 0;
    if let Some(record) = load::<BenchmarkRecord>(dir, BENCHMARK_JSON, &mut warnings) {
        found += 1;
        text.push_str(&render_benchmark(&record));
        long.extend(benchmark_long_rows(&record.aggregates));
    }
    if let Some(sweep) = load::<NoiseSweep>(dir, NOISE_JSON, &mut warnings) {
        found += 1;
        text.push_str(&render_noise(&sweep));
        long.extend(noise_long_rows(&sweep));
    }
    if let Some(outcome) = load::<TransferOutcome>(dir, TRANSFER_JSON, &mut warnings) {
        found += 1;
        text.push_str(&render_transfer(&outcome));
        long.extend(transfer_long_rows(&outcome));
    }
    if found == 0 {
        warnings.push("no result bundles in this directory".into());
    }
    if found > 0 {
        text.push_str(&format!("{} best RMSE within its family\n", BEST.trim()));
    }
    text.push_str(&format!("\n{} warnings\n", warnings.len()));
    for w in &warnings {
        text.push_str(&format!("warning: {w}\n"));
    }

    write(dir, REPORT_TEXT, text.as_bytes())?;
    write(dir, REPORT_LONG, &long_csv(long))?;
    if !quiet {
        print!("{text}");
    }
    Ok(())
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load<T: DeserializeOwned>(dir: &Path, name: &str, warnings: &mut Vec<String>) -> Option<T> {
    let bytes = fs::read(dir.join(name)).ok()?;
    match serde_json::from_slice(&bytes) {
        Ok(v) => Some(v),
        Err(e) => {
            warnings.push(format!("{name} is unreadable: {e}"));
            None
        }
    }
}

/// Column-aligned table: first column left-aligned, the rest right-aligned.
fn table(title: &str, header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                s.push_str(&format!("{cell:<w$}"));
            } else {
                s.push_str(&format!("  {cell:>w$}"));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = format!("{title}\n");
    out.push_str(&line(header));
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
    }
    out.push('\n');
    out
}

fn metric_header() -> Vec<String> {
    ["Model", "RMSE", "Linf_RMSE", "GradientError", "Linf_GradError", "TrainingTime_s"]
        .map(String::from)
        .to_vec()
}

fn metric_row(name: &str, m: &MetricSummary, timing: bool, best: bool) -> Vec<String> {
    vec![
        name.to_string(),
        format!("{:.6}{}", m.rmse, if best { BEST } else { "" }),
        format!("{:.6}", m.linf_rmse),
        format!("{:.6}", m.gradient_error),
        format!("{:.6}", m.linf_grad_error),
        if timing { format!("{:.2}", m.train_seconds) } else { "NA".into() },
    ]
}

/// Index of the lowest RMSE for each family label.
fn best_per_family<'a>(items: impl IntoIterator<Item = (&'a str, f64)>) -> Vec<bool> {
    let items: Vec<(&str, f64)> = items.into_iter().collect();
    let mut best: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for (i, &(family, rmse)) in items.iter().enumerate() {
        let entry = best.entry(family).or_insert((i, rmse));
        if rmse < entry.1 {
            *entry = (i, rmse);
        }
    }
    let mut marks = vec![false; items.len()];
    for (i, _) in best.values() {
        marks[*i] = true;
    }
    marks
}

/// Dataset and tier of one benchmark table; classical rows have no tier.
type TableKey = (String, Option<usize>);

fn render_benchmark(record: &BenchmarkRecord) -> String {
    let mut groups: Vec<(TableKey, Vec<&AggregateRow>)> = Vec::new();
    for a in &record.aggregates {
        let key = (a.id.dataset.clone(), a.id.tier);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(a),
            None => groups.push((key, vec![a])),
        }
    }
    let mut out = String::new();
    for ((dataset, tier), members) in &groups {
        let scope = match tier {
            Some(t) => format!("tier {t}"),
            None => "classical".to_string(),
        };
        for (units, pick) in [("normalized", true), ("degC", false)] {
            let means: Vec<&MetricSummary> = members
                .iter()
                .map(|a| if pick { &a.normalized_mean } else { &a.celsius_mean })
                .collect();
            let marks = best_per_family(members.iter().zip(&means).map(|(a, m)| (a.id.family.as_str(), m.rmse)));
            let rows: Vec<Vec<String>> = members
                .iter()
                .zip(&means)
                .zip(&marks)
                .map(|((a, m), &b)| metric_row(&a.id.model, m, record.record_timing, b))
                .collect();
            let seeds = members.iter().map(|a| a.seeds).max().unwrap_or(0);
            out.push_str(&table(
                &format!("benchmark: {dataset}, {scope}, {units} (seed mean, n={seeds})"),
                &metric_header(),
                &rows,
            ));
        }
    }
    out
}

fn render_noise(sweep: &NoiseSweep) -> String {
    let mut out = String::new();
    let mut keys = Vec::new();
    for a in &sweep.aggregates {
        let k = (a.id.dataset.clone(), a.mode);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (dataset, mode) in keys {
        let members: Vec<_> = sweep
            .aggregates
            .iter()
            .filter(|a| a.id.dataset == dataset && a.mode == mode)
            .collect();
        let mut sigmas: Vec<f64> = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        for a in &members {
            if !sigmas.contains(&a.sigma) {
                sigmas.push(a.sigma);
            }
            let label = a.id.label();
            if !labels.contains(&label) {
                labels.push(label);
            }
        }
        let mut header = vec!["Model".to_string()];
        header.extend(sigmas.iter().map(|s| format!("s={s:.1}")));
        let rows: Vec<Vec<String>> = labels
            .iter()
            .map(|label| {
                let mut row = vec![label.clone()];
                for s in &sigmas {
                    let cell = members.iter().find(|a| &a.id.label() == label && a.sigma == *s);
                    row.push(cell.map_or("-".into(), |a| format!("{:.4}", a.normalized_mean.rmse)));
                }
                row
            })
            .collect();
        out.push_str(&table(
            &format!("noise sweep: {dataset}, {}, RMSE normalized", mode.label()),
            &header,
            &rows,
        ));
    }
    out
}

fn render_transfer(outcome: &TransferOutcome) -> String {
    let mut out = String::new();
    for (units, pick) in [("normalized", true), ("degC", false)] {
        let means: Vec<&MetricSummary> = outcome
            .aggregates
            .iter()
            .map(|a| if pick { &a.normalized_mean } else { &a.celsius_mean })
            .collect();
        let marks = best_per_family(means.iter().map(|m| ("transfer", m.rmse)));
        let rows: Vec<Vec<String>> = outcome
            .aggregates
            .iter()
            .zip(&means)
            .zip(&marks)
            .map(|((a, m), &b)| metric_row(a.strategy.label(), m, outcome.record_timing, b))
            .collect();
        let seeds = outcome.aggregates.iter().map(|a| a.seeds).max().unwrap_or(0);
        out.push_str(&table(
            &format!("transfer: {units} (seed mean, n={seeds})"),
            &metric_header(),
            &rows,
        ));
    }
    out
}
