//! Files written by `run` and `sweep`.
//!
//! A run directory holds `summary.json` plus three CSV files:
//! `series.csv` (time, in_sync, union, consistency), `latencies.csv`
//! (uri, change_type, change_time, resolved_time, latency) and `cycles.csv`
//! (kind, cycle_start, cycle_end, bytes_required, bytes_overhead,
//! bytes_total, efficiency). Times are simulated seconds.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use resync_core::metrics::data_transfer_efficiency;
use resync_core::simulator::{EventCounts, SimConfig, SimReport, SimSummary};
use resync_core::sweep::CellFailure;
use resync_core::time::{format_secs, Timestamp};
use serde::Serialize;

use crate::CliError;

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a SimConfig,
    summary: &'a SimSummary,
    counts: &'a EventCounts,
}

pub fn metric(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.6}"),
        None => "NaN".to_string(),
    }
}

fn secs(t: Timestamp) -> String {
    format_secs(t.as_millis())
}

pub fn cell_label(c: &SimConfig) -> String {
    format!(
        "n={} change={}s sync={}s {} seed={}",
        c.resource_count,
        format_secs(c.change_interval.as_millis() as u64),
        format_secs(c.sync_interval.as_millis() as u64),
        c.sync_mode,
        c.seed
    )
}

fn write_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Write { path: path.to_path_buf(), source }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(write_err(path))
}

fn summary_json(report: &SimReport) -> String {
    let summary = Summary { config: &report.config, summary: &report.summary, counts: &report.counts };
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    json
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut writer = csv::Writer::from_path(path).map_err(|e| write_err(path)(e.into()))?;
    writer.write_record(header).map_err(|e| write_err(path)(e.into()))?;
    for row in rows {
        writer.write_record(row).map_err(|e| write_err(path)(e.into()))?;
    }
    writer.flush().map_err(write_err(path))
}

pub fn write_run(dir: &Path, report: &SimReport) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(write_err(dir))?;
    write_file(&dir.join("summary.json"), &summary_json(report))?;

    write_csv(
        &dir.join("series.csv"),
        &["time", "in_sync", "union", "consistency"],
        report
            .series
            .points()
            .iter()
            .map(|p| [secs(p.at), p.ratio.in_sync.to_string(), p.ratio.union.to_string(), format!("{:.6}", p.value())]),
    )?;

    let resolved = report.latencies.records.iter().map(|r| {
        [
            r.uri.to_string(),
            r.change_type.to_string(),
            secs(r.change_timestamp),
            secs(r.resolved_timestamp),
            format_secs(r.latency().as_millis() as u64),
        ]
    });
    let unresolved = report
        .latencies
        .unresolved
        .iter()
        .map(|(uri, at)| [uri.to_string(), String::new(), secs(*at), String::new(), String::new()]);
    write_csv(
        &dir.join("latencies.csv"),
        &["uri", "change_type", "change_time", "resolved_time", "latency"],
        resolved.chain(unresolved),
    )?;

    write_csv(
        &dir.join("cycles.csv"),
        &["kind", "cycle_start", "cycle_end", "bytes_required", "bytes_overhead", "bytes_total", "efficiency"],
        report.ledger.cycles().iter().map(|c| {
            [
                c.kind.as_str().to_string(),
                secs(c.cycle_start),
                secs(c.cycle_end),
                c.bytes_required.to_string(),
                c.bytes_overhead.to_string(),
                c.bytes_total.to_string(),
                metric(data_transfer_efficiency(c).ok()),
            ]
        }),
    )
}

/// Writes the summary of one sweep cell as `cell-NNN.json`.
pub fn write_cell(dir: &Path, index: usize, report: &SimReport) -> Result<(), CliError> {
    let path: PathBuf = dir.join(format!("cell-{index:03}.json"));
    write_file(&path, &summary_json(report))
}

pub fn write_failures(path: &Path, failures: &[CellFailure]) -> Result<(), CliError> {
    write_csv(
        path,
        &["resource_count", "change_interval", "sync_interval", "mode", "seed", "error"],
        failures.iter().map(|f| {
            let c = &f.config;
            [
                c.resource_count.to_string(),
                format_secs(c.change_interval.as_millis() as u64),
                format_secs(c.sync_interval.as_millis() as u64),
                c.sync_mode.to_string(),
                c.seed.to_string(),
                f.error.to_string(),
            ]
        }),
    )
}
