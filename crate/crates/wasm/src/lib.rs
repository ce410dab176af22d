//! WebAssembly bindings for the page in `www/`. Every export takes plain
//! numbers and strings and returns JSON.

use std::str::FromStr;

use resync_core::config::{seconds, ConfigError, SweepSpec};
use resync_core::endpoint::standard_capabilities;
use resync_core::engine::SyncMode;
use resync_core::simulator::{bootstrap_source, run_simulation, EventCounts, SimConfig, SimError, SimSummary};
use resync_core::sweep::{aggregate_csv, run_sweep, SweepRow};
use resync_core::syncdocs::{
    build_change_list, build_resource_list, serialize_capability_document, serialize_change_list,
    serialize_resource_list, DocumentError,
};
use resync_core::time::Timestamp;
use serde::Serialize;
use thiserror::Error;
use wasm_bindgen::prelude::*;

/// Keeps a single call within a few seconds of browser time.
pub const MAX_RESOURCES: u64 = 10_000;
pub const MAX_DURATION_SECS: f64 = 3_600.0;
pub const SERIES_SAMPLES: usize = 400;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Document(#[from] DocumentError),
    #[error("{0}")]
    Sweep(String),
}

fn limit(key: &str, reason: String) -> DemoError {
    DemoError::Config(ConfigError { key: key.to_string(), reason })
}

fn build_config(
    resource_count: u64,
    change_interval: f64,
    sync_interval: f64,
    mode: &str,
    seed: u64,
    duration: f64,
) -> Result<SimConfig, DemoError> {
    if resource_count > MAX_RESOURCES {
        return Err(limit("resource_count", format!("at most {MAX_RESOURCES} in the demo")));
    }
    if duration > MAX_DURATION_SECS {
        return Err(limit("duration", format!("at most {MAX_DURATION_SECS} s in the demo")));
    }
    let mode = SyncMode::from_str(mode).map_err(|reason| limit("mode", reason))?;
    let mut config = SimConfig::new(
        resource_count,
        seconds("change_interval", change_interval)?,
        seconds("sync_interval", sync_interval)?,
        mode,
    );
    config.seed = seed;
    config.duration = seconds("duration", duration)?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Serialize)]
struct CycleView {
    start: f64,
    end: f64,
    bytes_required: u64,
    bytes_total: u64,
}

#[derive(Debug, Serialize)]
struct RunView<'a> {
    summary: &'a SimSummary,
    counts: &'a EventCounts,
    /// `[time, consistency]` sampled evenly over the run.
    series: Vec<[f64; 2]>,
    cycles: Vec<CycleView>,
}

pub fn simulate_json(
    resource_count: u64,
    change_interval: f64,
    sync_interval: f64,
    mode: &str,
    seed: u64,
    duration: f64,
) -> Result<String, DemoError> {
    let config = build_config(resource_count, change_interval, sync_interval, mode, seed, duration)?;
    let report = run_simulation(&config)?;
    let end = config.duration.as_millis() as u64;
    let series = (0..=SERIES_SAMPLES)
        .map(|i| {
            let t = Timestamp::from_millis(end * i as u64 / SERIES_SAMPLES as u64);
            [t.as_secs_f64(), report.series.value_at(t).unwrap_or(1.0)]
        })
        .collect();
    let cycles = report
        .ledger
        .cycles()
        .iter()
        .map(|c| CycleView {
            start: c.cycle_start.as_secs_f64(),
            end: c.cycle_end.as_secs_f64(),
            bytes_required: c.bytes_required,
            bytes_total: c.bytes_total,
        })
        .collect();
    let view = RunView { summary: &report.summary, counts: &report.counts, series, cycles };
    Ok(serde_json::to_string(&view).expect("run view serializes"))
}

#[derive(Debug, Serialize)]
struct SweepView {
    rows: Vec<SweepRow>,
    csv: String,
}

/// Both modes at each of the comma-separated resource counts.
pub fn sweep_json(
    resource_counts: &str,
    change_interval: f64,
    sync_interval: f64,
    seed: u64,
    duration: f64,
) -> Result<String, DemoError> {
    let counts = resource_counts
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| limit("resource_counts", format!("{s:?} is not a count"))))
        .collect::<Result<Vec<_>, _>>()?;
    let Some(&largest) = counts.iter().max() else {
        return Err(limit("resource_counts", "must not be empty".to_string()));
    };
    let base = build_config(largest, change_interval, sync_interval, "baseline", seed, duration)?;
    let spec = SweepSpec {
        resource_counts: counts,
        change_intervals: vec![base.change_interval],
        sync_intervals: vec![base.sync_interval],
        modes: vec![SyncMode::Baseline, SyncMode::Incremental],
        seeds: vec![seed],
        base,
    };
    spec.validate()?;
    let outcome = run_sweep(&spec, |_, _| {});
    if let Some(f) = outcome.failures.first() {
        return Err(DemoError::Sweep(f.error.to_string()));
    }
    let csv = aggregate_csv(&outcome.rows);
    Ok(serde_json::to_string(&SweepView { rows: outcome.rows, csv }).expect("sweep view serializes"))
}

#[derive(Debug, Serialize)]
struct DocumentsView {
    capability_list: String,
    resource_list: String,
    change_list: String,
}

/// The documents a simulated source publishes after `changes` updates, one
/// per second.
pub fn documents_json(resource_count: u64, changes: u64, seed: u64) -> Result<String, DemoError> {
    if resource_count > 100 || changes > 100 {
        return Err(limit("resource_count", "documents are limited to 100 resources and 100 changes".to_string()));
    }
    let mut config = build_config(resource_count, 1.0, 10.0, "baseline", seed, 10.0)?;
    config.max_representation_size = 64;
    let mut source = bootstrap_source(&config);
    for k in 1..=changes {
        source.generate_change(Timestamp::from_secs(k));
    }
    let now = Timestamp::from_secs(changes);
    let text = |bytes: Vec<u8>| String::from_utf8(bytes).expect("documents are UTF-8");
    let view = DocumentsView {
        capability_list: text(serialize_capability_document(&standard_capabilities("http://sim"))),
        resource_list: text(serialize_resource_list(&build_resource_list(source.store(), now))),
        change_list: text(serialize_change_list(&build_change_list(source.change_log(), Timestamp::ZERO, now)?)),
    };
    Ok(serde_json::to_string(&view).expect("documents serialize"))
}

#[wasm_bindgen]
pub fn simulate(
    resource_count: u32,
    change_interval: f64,
    sync_interval: f64,
    mode: &str,
    seed: u32,
    duration: f64,
) -> Result<String, JsError> {
    Ok(simulate_json(resource_count.into(), change_interval, sync_interval, mode, seed.into(), duration)?)
}

#[wasm_bindgen]
pub fn sweep(
    resource_counts: &str,
    change_interval: f64,
    sync_interval: f64,
    seed: u32,
    duration: f64,
) -> Result<String, JsError> {
    Ok(sweep_json(resource_counts, change_interval, sync_interval, seed.into(), duration)?)
}

#[wasm_bindgen]
pub fn documents(resource_count: u32, changes: u32, seed: u32) -> Result<String, JsError> {
    Ok(documents_json(resource_count.into(), changes.into(), seed.into())?)
}
