//! Grid runs, the aggregate CSV and per-metric plot data.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::config::SweepSpec;
use crate::engine::SyncMode;
use crate::simulator::{run_simulation, SimConfig, SimError, SimReport};
use crate::time::format_secs;

pub const AGGREGATE_COLUMNS: [&str; 8] = [
    "resource_count",
    "change_interval",
    "sync_interval",
    "mode",
    "seed",
    "avg_consistency",
    "avg_latency",
    "avg_efficiency",
];

/// One aggregate CSV row. Metrics are `None` when undefined for the run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub resource_count: u64,
    pub change_interval: String,
    pub sync_interval: String,
    pub mode: SyncMode,
    pub seed: u64,
    pub avg_consistency: Option<f64>,
    pub avg_latency: Option<f64>,
    pub avg_efficiency: Option<f64>,
}

impl SweepRow {
    pub fn from_report(report: &SimReport) -> Self {
        let c = &report.config;
        Self {
            resource_count: c.resource_count,
            change_interval: format_secs(c.change_interval.as_millis() as u64),
            sync_interval: format_secs(c.sync_interval.as_millis() as u64),
            mode: c.sync_mode,
            seed: c.seed,
            avg_consistency: report.summary.average_consistency,
            avg_latency: report.summary.average_latency,
            avg_efficiency: report.summary.average_efficiency,
        }
    }
}

#[derive(Debug, PartialEq)]
pub struct CellFailure {
    pub config: SimConfig,
    pub error: SimError,
}

#[derive(Debug, Default, PartialEq)]
pub struct SweepOutcome {
    /// Rows of successful cells, in grid order.
    pub rows: Vec<SweepRow>,
    pub failures: Vec<CellFailure>,
}

/// Runs every cell of `spec`. `on_report` sees each finished report with
/// its grid index; it may be called from several threads. A failing cell is
/// recorded and the sweep carries on.
pub fn run_sweep<F>(spec: &SweepSpec, on_report: F) -> SweepOutcome
where
    F: Fn(usize, &SimReport) + Sync,
{
    let cells = spec.cells();
    let run_cell = |(index, config): (usize, &SimConfig)| match run_simulation(config) {
        Ok(report) => {
            on_report(index, &report);
            Ok(SweepRow::from_report(&report))
        }
        Err(error) => Err(Box::new(CellFailure { config: config.clone(), error })),
    };

    #[cfg(feature = "parallel")]
    let results: Vec<Result<SweepRow, Box<CellFailure>>> = {
        use rayon::prelude::*;
        cells.par_iter().enumerate().map(run_cell).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<SweepRow, Box<CellFailure>>> = cells.iter().enumerate().map(run_cell).collect();

    let mut outcome = SweepOutcome::default();
    for result in results {
        match result {
            Ok(row) => outcome.rows.push(row),
            Err(failure) => outcome.failures.push(*failure),
        }
    }
    outcome
}

fn metric(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.6}"),
        None => "NaN".to_string(),
    }
}

/// Renders rows as the aggregate CSV.
pub fn aggregate_csv(rows: &[SweepRow]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(AGGREGATE_COLUMNS).expect("writing to memory");
    for row in rows {
        writer
            .write_record([
                row.resource_count.to_string(),
                row.change_interval.clone(),
                row.sync_interval.clone(),
                row.mode.to_string(),
                row.seed.to_string(),
                metric(row.avg_consistency),
                metric(row.avg_latency),
                metric(row.avg_efficiency),
            ])
            .expect("writing to memory");
    }
    String::from_utf8(writer.into_inner().expect("writing to memory")).expect("CSV output is UTF-8")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlotError {
    #[error("aggregate CSV lacks column(s): {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// The three per-metric data files plus any warnings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotData {
    pub consistency: String,
    pub latency: String,
    pub efficiency: String,
    pub warnings: Vec<String>,
}

impl PlotData {
    pub fn files(&self) -> [(&'static str, &str); 3] {
        [("consistency.csv", &self.consistency), ("latency.csv", &self.latency), ("efficiency.csv", &self.efficiency)]
    }
}

pub const PLOT_COLUMNS: [&str; 6] = ["change_interval", "sync_interval", "mode", "resource_count", "value", "seeds"];

type Groups = BTreeMap<(u64, u64, String, String), BTreeMap<String, BTreeMap<u64, Vec<f64>>>>;

/// Groups the aggregate CSV by `(change_interval, sync_interval)` panel,
/// with one series per mode and seeds averaged. Undefined values are left
/// out of the mean; a point with none left is written as `NaN`.
pub fn emit_plot_data(aggregate: &str) -> Result<PlotData, PlotError> {
    let mut data = PlotData::default();
    if aggregate.trim().is_empty() {
        data.warnings.push("aggregate CSV is empty; plot data files are empty".to_string());
        return Ok(data);
    }
    let mut reader = csv::Reader::from_reader(aggregate.as_bytes());
    let headers = reader.headers().map_err(|e| PlotError::BadRow { row: 0, reason: e.to_string() })?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let missing: Vec<String> =
        AGGREGATE_COLUMNS.iter().filter(|c| column(c).is_none()).map(|c| c.to_string()).collect();
    if !missing.is_empty() {
        return Err(PlotError::MissingColumns(missing));
    }
    let idx = |name: &str| column(name).expect("checked above");
    let metrics = ["avg_consistency", "avg_latency", "avg_efficiency"];
    let mut groups: [Groups; 3] = Default::default();

    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| PlotError::BadRow { row, reason: e.to_string() })?;
        let field = |name: &str| record.get(idx(name)).unwrap_or("");
        let number = |name: &str| -> Result<f64, PlotError> {
            field(name).parse::<f64>().map_err(|_| PlotError::BadRow { row, reason: format!("{name} is not a number") })
        };
        let change = number("change_interval")?;
        let sync = number("sync_interval")?;
        let resource_count: u64 = field("resource_count")
            .parse()
            .map_err(|_| PlotError::BadRow { row, reason: "resource_count is not an integer".to_string() })?;
        let mode = field("mode").to_string();
        // Millisecond keys keep the numeric order of the panels.
        let key = (
            (change * 1000.0).round() as u64,
            (sync * 1000.0).round() as u64,
            field("change_interval").to_string(),
            field("sync_interval").to_string(),
        );
        for (g, name) in groups.iter_mut().zip(metrics) {
            let value = number(name)?;
            g.entry(key.clone())
                .or_default()
                .entry(mode.clone())
                .or_default()
                .entry(resource_count)
                .or_default()
                .push(value);
        }
        rows += 1;
    }
    if rows == 0 {
        data.warnings.push("aggregate CSV has no rows; plot data files are empty".to_string());
        return Ok(data);
    }

    let render = |g: &Groups| -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(PLOT_COLUMNS).expect("writing to memory");
        for ((_, _, change, sync), series) in g {
            for (mode, points) in series {
                for (count, values) in points {
                    let defined: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
                    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
                    writer
                        .write_record([
                            change.clone(),
                            sync.clone(),
                            mode.clone(),
                            count.to_string(),
                            metric(mean),
                            defined.len().to_string(),
                        ])
                        .expect("writing to memory");
                }
            }
        }
        String::from_utf8(writer.into_inner().expect("writing to memory")).expect("CSV output is UTF-8")
    };
    data.consistency = render(&groups[0]);
    data.latency = render(&groups[1]);
    data.efficiency = render(&groups[2]);
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use std::time::Duration;

    fn row(count: u64, change: &str, sync: &str, mode: SyncMode, seed: u64, v: f64) -> SweepRow {
        SweepRow {
            resource_count: count,
            change_interval: change.into(),
            sync_interval: sync.into(),
            mode,
            seed,
            avg_consistency: Some(v),
            avg_latency: Some(v * 10.0),
            avg_efficiency: None,
        }
    }

    fn grid_rows() -> Vec<SweepRow> {
        let mut rows = Vec::new();
        for count in [100, 1000, 10000] {
            for change in ["0.1", "10"] {
                for sync in ["10", "100"] {
                    for mode in [SyncMode::Baseline, SyncMode::Incremental] {
                        rows.push(row(count, change, sync, mode, 1, 0.5));
                    }
                }
            }
        }
        rows
    }

    #[test]
    fn aggregate_header_and_formatting() {
        let csv = aggregate_csv(&[row(100, "0.1", "10", SyncMode::Baseline, 1, 0.25)]);
        assert_eq!(
            csv,
            "resource_count,change_interval,sync_interval,mode,seed,avg_consistency,avg_latency,avg_efficiency\n\
             100,0.1,10,baseline,1,0.250000,2.500000,NaN\n"
        );
    }

    #[test]
    fn plot_data_groups_panels_and_series() {
        let rows = grid_rows();
        assert_eq!(rows.len(), 24);
        let data = emit_plot_data(&aggregate_csv(&rows)).unwrap();
        for (_, text) in data.files() {
            let lines: Vec<&str> = text.lines().skip(1).collect();
            assert_eq!(lines.len(), 24);
            let panels: BTreeSet<_> = lines.iter().map(|l| l.split(',').take(2).collect::<Vec<_>>()).collect();
            assert_eq!(panels.len(), 4);
            let series: BTreeSet<_> = lines.iter().map(|l| l.split(',').take(3).collect::<Vec<_>>()).collect();
            assert_eq!(series.len(), 8);
        }
        assert!(data.efficiency.lines().nth(1).unwrap().ends_with(",NaN,0"));
    }

    #[test]
    fn seeds_are_averaged() {
        let rows =
            vec![row(100, "10", "10", SyncMode::Baseline, 1, 0.2), row(100, "10", "10", SyncMode::Baseline, 2, 0.4)];
        let data = emit_plot_data(&aggregate_csv(&rows)).unwrap();
        assert_eq!(data.consistency.lines().nth(1), Some("10,10,baseline,100,0.300000,2"));
    }

    #[test]
    fn panels_sorted_numerically() {
        let rows =
            vec![row(100, "10", "10", SyncMode::Baseline, 1, 0.2), row(100, "0.1", "10", SyncMode::Baseline, 1, 0.4)];
        let data = emit_plot_data(&aggregate_csv(&rows)).unwrap();
        assert!(data.consistency.lines().nth(1).unwrap().starts_with("0.1,"));
    }

    #[test]
    fn single_mode_gives_single_series() {
        let rows: Vec<_> = grid_rows().into_iter().filter(|r| r.mode == SyncMode::Baseline).collect();
        let data = emit_plot_data(&aggregate_csv(&rows)).unwrap();
        assert!(data.latency.lines().skip(1).all(|l| l.contains(",baseline,")));
    }

    #[test]
    fn empty_input_warns() {
        let data = emit_plot_data("").unwrap();
        assert!(data.consistency.is_empty() && data.latency.is_empty() && data.efficiency.is_empty());
        assert_eq!(data.warnings.len(), 1);
        let header_only = emit_plot_data(&aggregate_csv(&[])).unwrap();
        assert_eq!(header_only.warnings.len(), 1);
    }

    #[test]
    fn missing_columns_reported() {
        let err = emit_plot_data("resource_count,mode\n100,baseline\n").unwrap_err();
        let PlotError::MissingColumns(cols) = err else { panic!("expected missing columns") };
        assert!(cols.contains(&"avg_latency".to_string()));
        assert!(!cols.contains(&"mode".to_string()));
    }

    #[test]
    fn one_cell_sweep() {
        let mut spec = SweepSpec::desk_scale();
        spec.resource_counts = vec![10];
        spec.change_intervals = vec![Duration::from_secs(1)];
        spec.sync_intervals = vec![Duration::from_secs(5)];
        spec.modes = vec![SyncMode::Incremental];
        spec.seeds = vec![3];
        spec.base.duration = Duration::from_secs(60);
        let seen = std::sync::atomic::AtomicUsize::new(0);
        let out = run_sweep(&spec, |_, _| {
            seen.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        });
        assert_eq!(out.rows.len(), 1);
        assert!(out.failures.is_empty());
        assert_eq!(seen.into_inner(), 1);
        assert_eq!(aggregate_csv(&out.rows).lines().count(), 2);
    }
}
