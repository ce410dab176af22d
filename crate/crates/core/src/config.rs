//! TOML configuration for single runs and parameter sweeps.
//!
//! ```toml
//! [simulation]
//! resource_count = 100
//! change_interval = 0.1        # seconds
//! sync_interval = 10           # seconds
//! mode = "baseline"            # or "incremental"
//! max_representation_size = 1000
//! duration = 3000              # seconds
//! seed = 1
//! change_mix = { create = 0.0, update = 1.0, delete = 0.0 }
//!
//! [network]
//! bandwidth = 25000            # bytes per second
//! per_request_overhead = 0.005 # seconds
//!
//! [sweep]
//! resource_counts = [100, 1000, 10000]
//! change_intervals = [0.1, 10]
//! sync_intervals = [10, 100]
//! modes = ["baseline", "incremental"]
//! seeds = [1, 2]
//! ```
//!
//! A file with a `[sweep]` section describes a grid; `[simulation]` then
//! only supplies shared defaults.

use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::engine::SyncMode;
use crate::simnet::NetworkModel;
use crate::simulator::{ChangeMix, SimConfig, SimError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{key}: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { key: key.into(), reason: reason.into() }
    }

    fn from_sim(section: &str, e: SimError) -> Self {
        match e {
            SimError::InvalidConfig { field, reason } => Self::new(format!("{section}.{field}"), reason),
            other => Self::new(section, other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigFile {
    Single(SimConfig),
    Sweep(SweepSpec),
}

/// A Cartesian grid of simulation cells sharing one base configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: SimConfig,
    pub resource_counts: Vec<u64>,
    pub change_intervals: Vec<Duration>,
    pub sync_intervals: Vec<Duration>,
    pub modes: Vec<SyncMode>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// The 100/1k/10k grid over both intervals and modes, two seeds, 3000 s.
    pub fn desk_scale() -> Self {
        Self {
            base: SimConfig::new(100, Duration::from_millis(100), Duration::from_secs(10), SyncMode::Baseline),
            resource_counts: vec![100, 1_000, 10_000],
            change_intervals: vec![Duration::from_millis(100), Duration::from_secs(10)],
            sync_intervals: vec![Duration::from_secs(10), Duration::from_secs(100)],
            modes: vec![SyncMode::Baseline, SyncMode::Incremental],
            seeds: vec![1, 2],
        }
    }

    /// Cells in row-major order: resource count, change interval, sync
    /// interval, mode, seed.
    pub fn cells(&self) -> Vec<SimConfig> {
        let mut cells = Vec::new();
        for &resource_count in &self.resource_counts {
            for &change_interval in &self.change_intervals {
                for &sync_interval in &self.sync_intervals {
                    for &sync_mode in &self.modes {
                        for &seed in &self.seeds {
                            cells.push(SimConfig {
                                resource_count,
                                change_interval,
                                sync_interval,
                                sync_mode,
                                seed,
                                ..self.base.clone()
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, empty) in [
            ("sweep.resource_counts", self.resource_counts.is_empty()),
            ("sweep.change_intervals", self.change_intervals.is_empty()),
            ("sweep.sync_intervals", self.sync_intervals.is_empty()),
            ("sweep.modes", self.modes.is_empty()),
            ("sweep.seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(ConfigError::new(key, "must not be empty"));
            }
        }
        for cell in self.cells() {
            cell.validate().map_err(|e| ConfigError::from_sim("sweep", e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    simulation: RawSimulation,
    #[serde(default)]
    network: RawNetwork,
    sweep: Option<RawSweep>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    resource_count: Option<u64>,
    change_interval: Option<f64>,
    sync_interval: Option<f64>,
    mode: Option<SyncMode>,
    max_representation_size: Option<u64>,
    duration: Option<f64>,
    seed: Option<u64>,
    change_mix: Option<RawMix>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMix {
    create: f64,
    update: f64,
    delete: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    bandwidth: Option<u64>,
    per_request_overhead: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    resource_counts: Option<Vec<u64>>,
    change_intervals: Option<Vec<f64>>,
    sync_intervals: Option<Vec<f64>>,
    modes: Option<Vec<SyncMode>>,
    seeds: Option<Vec<u64>>,
}

/// Converts seconds to a millisecond-resolution duration.
pub fn seconds(key: &str, value: f64) -> Result<Duration, ConfigError> {
    if !value.is_finite() || value < 0.0 {
        return Err(ConfigError::new(key, format!("{value} is not a valid number of seconds")));
    }
    let ms = (value * 1000.0).round();
    if ms == 0.0 {
        return Err(ConfigError::new(key, "must be positive"));
    }
    if ms > u64::MAX as f64 {
        return Err(ConfigError::new(key, "too large"));
    }
    Ok(Duration::from_millis(ms as u64))
}

/// Parses a configuration file, applying defaults and validating every
/// resulting simulation.
pub fn parse_config(text: &str) -> Result<ConfigFile, ConfigError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let key = unknown_key_path(text, &e).unwrap_or_else(|| "config".to_string());
        ConfigError::new(key, message)
    })?;

    let sim = &raw.simulation;
    let mut base = SimConfig::new(
        sim.resource_count.unwrap_or(100),
        Duration::from_millis(100),
        Duration::from_secs(10),
        sim.mode.unwrap_or(SyncMode::Baseline),
    );
    if let Some(v) = sim.change_interval {
        base.change_interval = seconds("simulation.change_interval", v)?;
    }
    if let Some(v) = sim.sync_interval {
        base.sync_interval = seconds("simulation.sync_interval", v)?;
    }
    if let Some(v) = sim.duration {
        base.duration = seconds("simulation.duration", v)?;
    }
    if let Some(v) = sim.max_representation_size {
        base.max_representation_size = v;
    }
    if let Some(v) = sim.seed {
        base.seed = v;
    }
    if let Some(m) = &sim.change_mix {
        base.change_mix = ChangeMix { create: m.create, update: m.update, delete: m.delete };
    }
    let bandwidth = raw.network.bandwidth.unwrap_or(NetworkModel::DEFAULT_BANDWIDTH);
    let overhead = match raw.network.per_request_overhead {
        Some(0.0) => Duration::ZERO,
        Some(v) => seconds("network.per_request_overhead", v)?,
        None => NetworkModel::DEFAULT_OVERHEAD,
    };
    base.network =
        NetworkModel::new(bandwidth, overhead).map_err(|e| ConfigError::new("network.bandwidth", e.to_string()))?;

    match raw.sweep {
        None => {
            for (key, missing) in [
                ("simulation.resource_count", sim.resource_count.is_none()),
                ("simulation.change_interval", sim.change_interval.is_none()),
                ("simulation.sync_interval", sim.sync_interval.is_none()),
                ("simulation.mode", sim.mode.is_none()),
            ] {
                if missing {
                    return Err(ConfigError::new(key, "required"));
                }
            }
            base.validate().map_err(|e| ConfigError::from_sim("simulation", e))?;
            Ok(ConfigFile::Single(base))
        }
        Some(sweep) => {
            let intervals =
                |key: &str, values: Option<Vec<f64>>, default: Duration| -> Result<Vec<Duration>, ConfigError> {
                    match values {
                        Some(vs) => vs.into_iter().map(|v| seconds(key, v)).collect(),
                        None => Ok(vec![default]),
                    }
                };
            let spec = SweepSpec {
                resource_counts: sweep.resource_counts.unwrap_or_else(|| vec![base.resource_count]),
                change_intervals: intervals("sweep.change_intervals", sweep.change_intervals, base.change_interval)?,
                sync_intervals: intervals("sweep.sync_intervals", sweep.sync_intervals, base.sync_interval)?,
                modes: sweep.modes.unwrap_or_else(|| vec![base.sync_mode]),
                seeds: sweep.seeds.unwrap_or_else(|| vec![base.seed]),
                base,
            };
            spec.validate()?;
            Ok(ConfigFile::Sweep(spec))
        }
    }
}

/// Recovers a dotted key path for an error pointing into the document.
fn unknown_key_path(text: &str, e: &toml::de::Error) -> Option<String> {
    let span = e.span()?;
    let key = text.get(span.clone())?.trim().trim_matches('"');
    let section = text[..span.start]
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix('[').and_then(|l| l.strip_suffix(']')))
        .map(str::trim);
    Some(match section {
        Some(s) if !key.starts_with('[') => format!("{s}.{key}"),
        _ => key.trim_matches(|c| c == '[' || c == ']').to_string(),
    })
}

/// Command-line overrides of individual configuration keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub resource_count: Option<u64>,
    pub change_interval: Option<f64>,
    pub sync_interval: Option<f64>,
    pub mode: Option<SyncMode>,
    pub seed: Option<u64>,
    pub max_representation_size: Option<u64>,
    pub duration: Option<f64>,
    pub bandwidth: Option<u64>,
    pub per_request_overhead: Option<f64>,
}

impl Overrides {
    fn apply_base(&self, config: &mut SimConfig) -> Result<(), ConfigError> {
        if let Some(v) = self.max_representation_size {
            config.max_representation_size = v;
        }
        if let Some(v) = self.duration {
            config.duration = seconds("duration", v)?;
        }
        if self.bandwidth.is_some() || self.per_request_overhead.is_some() {
            let bandwidth = self.bandwidth.unwrap_or(config.network.bandwidth());
            let overhead = match self.per_request_overhead {
                Some(0.0) => Duration::ZERO,
                Some(v) => seconds("per_request_overhead", v)?,
                None => config.network.per_request_overhead(),
            };
            config.network =
                NetworkModel::new(bandwidth, overhead).map_err(|e| ConfigError::new("bandwidth", e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_to_config(&self, config: &mut SimConfig) -> Result<(), ConfigError> {
        self.apply_base(config)?;
        if let Some(v) = self.resource_count {
            config.resource_count = v;
        }
        if let Some(v) = self.change_interval {
            config.change_interval = seconds("change_interval", v)?;
        }
        if let Some(v) = self.sync_interval {
            config.sync_interval = seconds("sync_interval", v)?;
        }
        if let Some(v) = self.mode {
            config.sync_mode = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        config.validate().map_err(|e| ConfigError::from_sim("simulation", e))
    }

    /// Overridden keys replace the corresponding grid axis with a single
    /// value.
    pub fn apply_to_sweep(&self, spec: &mut SweepSpec) -> Result<(), ConfigError> {
        self.apply_base(&mut spec.base)?;
        if let Some(v) = self.resource_count {
            spec.resource_counts = vec![v];
        }
        if let Some(v) = self.change_interval {
            spec.change_intervals = vec![seconds("change_interval", v)?];
        }
        if let Some(v) = self.sync_interval {
            spec.sync_intervals = vec![seconds("sync_interval", v)?];
        }
        if let Some(v) = self.mode {
            spec.modes = vec![v];
        }
        if let Some(v) = self.seed {
            spec.seeds = vec![v];
        }
        spec.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(text: &str) -> SimConfig {
        match parse_config(text).unwrap() {
            ConfigFile::Single(c) => c,
            other => panic!("expected a single config, got {other:?}"),
        }
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let c = single(
            "[simulation]\nresource_count = 100\nchange_interval = 0.1\nsync_interval = 10\nmode = \"baseline\"\n",
        );
        assert_eq!(c.resource_count, 100);
        assert_eq!(c.change_interval, Duration::from_millis(100));
        assert_eq!(c.sync_interval, Duration::from_secs(10));
        assert_eq!(c.sync_mode, SyncMode::Baseline);
        assert_eq!(c.max_representation_size, 1000);
        assert_eq!(c.change_mix, ChangeMix::UPDATES_ONLY);
        assert_eq!(c.network, NetworkModel::default());
    }

    #[test]
    fn zero_change_interval_rejected() {
        let err = parse_config(
            "[simulation]\nresource_count = 1\nchange_interval = 0\nsync_interval = 1\nmode = \"baseline\"\n",
        )
        .unwrap_err();
        assert_eq!(err.key, "simulation.change_interval");
    }

    #[test]
    fn unknown_keys_rejected_with_path() {
        let err = parse_config("[simulation]\nresource_count = 1\ncolour = 3\n").unwrap_err();
        assert_eq!(err.key, "simulation.colour");
        assert!(err.reason.contains("unknown field"));
        let err = parse_config("[extra]\nx = 1\n").unwrap_err();
        assert_eq!(err.key, "extra");
    }

    #[test]
    fn missing_required_key_reported() {
        let err = parse_config("[simulation]\nresource_count = 1\n").unwrap_err();
        assert_eq!(err.key, "simulation.change_interval");
    }

    #[test]
    fn invalid_mode_and_mix() {
        assert!(parse_config("[simulation]\nmode = \"eager\"\n").is_err());
        let err = parse_config(
            "[simulation]\nresource_count = 1\nchange_interval = 1\nsync_interval = 1\nmode = \"baseline\"\n\
             change_mix = { create = 0.5, update = 0.2, delete = 0.0 }\n",
        )
        .unwrap_err();
        assert_eq!(err.key, "simulation.change_mix");
    }

    #[test]
    fn sweep_product_count() {
        let text = "[sweep]\nresource_counts = [100, 1000, 10000, 25000, 50000]\nchange_intervals = [0.1, 10]\n\
                    sync_intervals = [10, 100]\nmodes = [\"baseline\", \"incremental\"]\n";
        let ConfigFile::Sweep(spec) = parse_config(text).unwrap() else { panic!("expected sweep") };
        assert_eq!(spec.cells().len(), 5 * 2 * 2 * 2);
    }

    #[test]
    fn empty_sweep_axis_rejected() {
        let err = parse_config("[sweep]\nseeds = []\n").unwrap_err();
        assert_eq!(err.key, "sweep.seeds");
    }

    #[test]
    fn overrides_replace_values() {
        let mut c = SimConfig::new(10, Duration::from_secs(1), Duration::from_secs(1), SyncMode::Baseline);
        let o = Overrides {
            seed: Some(9),
            mode: Some(SyncMode::Incremental),
            bandwidth: Some(1000),
            ..Overrides::default()
        };
        o.apply_to_config(&mut c).unwrap();
        assert_eq!((c.seed, c.sync_mode, c.network.bandwidth()), (9, SyncMode::Incremental, 1000));

        let mut spec = SweepSpec::desk_scale();
        Overrides { seed: Some(5), ..Overrides::default() }.apply_to_sweep(&mut spec).unwrap();
        assert_eq!(spec.seeds, vec![5]);
        assert_eq!(spec.cells().len(), 24);
    }

    #[test]
    fn desk_scale_grid_shape() {
        let spec = SweepSpec::desk_scale();
        spec.validate().unwrap();
        assert_eq!(spec.cells().len(), 48);
        assert!(spec.base.duration >= Duration::from_secs(2000));
    }
}
