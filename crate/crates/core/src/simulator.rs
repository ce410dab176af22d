//! A synthetic source changing at a fixed interval and a destination
//! syncing at a fixed interval, driven by one deterministic event queue.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::endpoint::{standard_capabilities, EndpointError, Response, SourceEndpoint};
use crate::engine::{SyncError, SyncMode, SyncOptions, SyncSession};
use crate::metrics::{
    consistency_at, merge_trace, record_latencies, ConsistencySeries, LatencyReport, TraceEvent, TransferLedger,
};
use crate::model::{ChangeEvent, ChangeType, Representation, ResourceStore, ResourceUri, StoreRole};
use crate::simnet::{NetworkModel, SimClock};
use crate::syncdocs::{
    build_change_list, build_resource_list, serialize_capability_document, serialize_change_list,
    serialize_resource_list, CapabilityDocument,
};
use crate::time::Timestamp;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("{field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("synchronization failed: {0}")]
    Sync(#[from] SyncError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SimError {
    SimError::InvalidConfig { field, reason: reason.into() }
}

/// Probabilities of drawing each change type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChangeMix {
    pub create: f64,
    pub update: f64,
    pub delete: f64,
}

impl ChangeMix {
    pub const UPDATES_ONLY: ChangeMix = ChangeMix { create: 0.0, update: 1.0, delete: 0.0 };

    fn draw(&self, rng: &mut impl Rng) -> ChangeType {
        let r: f64 = rng.random();
        if r < self.create {
            ChangeType::Create
        } else if r < self.create + self.update {
            ChangeType::Update
        } else {
            ChangeType::Delete
        }
    }
}

impl Default for ChangeMix {
    fn default() -> Self {
        Self::UPDATES_ONLY
    }
}

fn secs<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub resource_count: u64,
    #[serde(serialize_with = "secs")]
    pub change_interval: Duration,
    #[serde(serialize_with = "secs")]
    pub sync_interval: Duration,
    pub sync_mode: SyncMode,
    pub max_representation_size: u64,
    #[serde(serialize_with = "secs")]
    pub duration: Duration,
    pub seed: u64,
    pub change_mix: ChangeMix,
    pub network: NetworkModel,
}

impl SimConfig {
    pub const DEFAULT_MAX_REPRESENTATION_SIZE: u64 = 1000;
    pub const DEFAULT_DURATION: Duration = Duration::from_secs(3000);

    pub fn new(resource_count: u64, change_interval: Duration, sync_interval: Duration, sync_mode: SyncMode) -> Self {
        Self {
            resource_count,
            change_interval,
            sync_interval,
            sync_mode,
            max_representation_size: Self::DEFAULT_MAX_REPRESENTATION_SIZE,
            duration: Self::DEFAULT_DURATION,
            seed: 0,
            change_mix: ChangeMix::default(),
            network: NetworkModel::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.resource_count == 0 {
            return Err(invalid("resource_count", "must be at least 1"));
        }
        for (field, d) in [
            ("change_interval", self.change_interval),
            ("sync_interval", self.sync_interval),
            ("duration", self.duration),
        ] {
            if d.is_zero() {
                return Err(invalid(field, "must be positive"));
            }
            if d.subsec_nanos() % 1_000_000 != 0 {
                return Err(invalid(field, "must be a whole number of milliseconds"));
            }
        }
        if self.max_representation_size == 0 {
            return Err(invalid("max_representation_size", "must be at least 1"));
        }
        let ChangeMix { create, update, delete } = self.change_mix;
        if [create, update, delete].iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("change_mix", "probabilities must lie in [0, 1]"));
        }
        if (create + update + delete - 1.0).abs() > 1e-9 {
            return Err(invalid("change_mix", format!("probabilities sum to {}, not 1", create + update + delete)));
        }
        Ok(())
    }
}

/// The simulated source: a lead store and the log of every change made to
/// it.
#[derive(Debug, Clone)]
pub struct SourceAgent {
    store: ResourceStore,
    change_log: Vec<ChangeEvent>,
    rng: ChaCha8Rng,
    uris: Vec<ResourceUri>,
    positions: HashMap<ResourceUri, usize>,
    next_id: u64,
    max_size: u64,
    mix: ChangeMix,
}

pub fn sim_uri(k: u64) -> ResourceUri {
    ResourceUri::parse(&format!("http://sim/res/{k}")).expect("simulation URIs are valid")
}

/// `resource_count` resources with random payloads, all last modified at 0.
pub fn bootstrap_source(config: &SimConfig) -> SourceAgent {
    let mut agent = SourceAgent {
        store: ResourceStore::new(StoreRole::SourceLead),
        change_log: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        uris: Vec::with_capacity(config.resource_count as usize),
        positions: HashMap::with_capacity(config.resource_count as usize),
        next_id: 0,
        max_size: config.max_representation_size,
        mix: config.change_mix,
    };
    for _ in 0..config.resource_count {
        let uri = agent.fresh_uri();
        let rep = agent.random_representation();
        agent.insert(uri, rep, Timestamp::ZERO);
    }
    agent
}

impl SourceAgent {
    pub fn store(&self) -> &ResourceStore {
        &self.store
    }

    pub fn change_log(&self) -> &[ChangeEvent] {
        &self.change_log
    }

    /// Draws, applies and logs one change at `now`.
    pub fn generate_change(&mut self, now: Timestamp) -> &ChangeEvent {
        let mut kind = self.mix.draw(&mut self.rng);
        if self.uris.is_empty() {
            kind = ChangeType::Create;
        }
        let change = match kind {
            ChangeType::Create => {
                let uri = self.fresh_uri();
                let rep = self.random_representation();
                self.insert(uri.clone(), rep.clone(), now);
                ChangeEvent::create(uri, now, rep)
            }
            ChangeType::Update => {
                let uri = self.pick();
                let rep = self.random_representation();
                self.store.put(uri.clone(), rep.clone(), now);
                ChangeEvent::update(uri, now, rep)
            }
            ChangeType::Delete => {
                let uri = self.pick();
                self.forget(&uri);
                ChangeEvent::delete(uri, now)
            }
        };
        self.change_log.push(change);
        self.change_log.last().expect("just pushed")
    }

    fn fresh_uri(&mut self) -> ResourceUri {
        let uri = sim_uri(self.next_id);
        self.next_id += 1;
        uri
    }

    fn random_representation(&mut self) -> Representation {
        let size = self.rng.random_range(1..=self.max_size) as usize;
        let mut payload = vec![0u8; size];
        self.rng.fill_bytes(&mut payload);
        Representation::from_payload(payload)
    }

    fn pick(&mut self) -> ResourceUri {
        let i = self.rng.random_range(0..self.uris.len());
        self.uris[i].clone()
    }

    fn insert(&mut self, uri: ResourceUri, rep: Representation, at: Timestamp) {
        self.positions.insert(uri.clone(), self.uris.len());
        self.uris.push(uri.clone());
        self.store.put(uri, rep, at);
    }

    fn forget(&mut self, uri: &ResourceUri) {
        let i = self.positions.remove(uri).expect("deleted resource is tracked");
        self.uris.swap_remove(i);
        if let Some(moved) = self.uris.get(i) {
            self.positions.insert(moved.clone(), i);
        }
        self.store.remove(uri);
    }
}

/// The simulated destination.
#[derive(Debug, Clone)]
pub struct DestinationAgent {
    pub session: SyncSession,
    pub next_sync_at: Timestamp,
}

impl DestinationAgent {
    pub fn new(mode: SyncMode) -> Self {
        let options = SyncOptions { record_journal: true, ..SyncOptions::default() };
        Self { session: SyncSession::with_options(mode, options), next_sync_at: Timestamp::ZERO }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SimEvent {
    SourceChange,
    SyncTick,
}

struct World {
    clock: SimClock<SimEvent>,
    source: SourceAgent,
    network: NetworkModel,
    capabilities: CapabilityDocument,
    change_interval: Duration,
    sync_interval: Duration,
    end: Timestamp,
    busy: bool,
    tick_due: bool,
    overrun_ticks: u64,
}

impl World {
    fn handle(&mut self, at: Timestamp, event: SimEvent) {
        match event {
            SimEvent::SourceChange => {
                let next = at + self.change_interval;
                if next <= self.end {
                    self.clock.schedule(next, SimEvent::SourceChange).expect("future event");
                }
                self.source.generate_change(at);
            }
            SimEvent::SyncTick => {
                let next = at + self.sync_interval;
                if next < self.end {
                    self.clock.schedule(next, SimEvent::SyncTick).expect("future event");
                }
                if self.busy {
                    self.overrun_ticks += 1;
                }
                self.tick_due = true;
            }
        }
    }

    /// Runs every event due up to `t` and leaves the clock there.
    fn run_to(&mut self, t: Timestamp) {
        while let Some((at, event)) = self.clock.pop_due(t) {
            self.handle(at, event);
        }
        self.clock.advance_to(t);
    }
}

/// The source as seen over the simulated link. Content is taken when a
/// request starts; the clock then advances by the transfer time, running
/// whatever happens meanwhile.
struct SimEndpoint<'w> {
    world: &'w mut World,
}

impl SimEndpoint<'_> {
    fn begin(&mut self) -> Timestamp {
        let now = self.world.clock.now();
        self.world.run_to(now);
        now
    }

    fn transfer(&mut self, started_at: Timestamp, body: Arc<[u8]>, last_modified: Option<Timestamp>) -> Response {
        let byte_count = body.len() as u64;
        let completed_at = started_at + self.world.network.transfer_time(byte_count);
        self.world.run_to(completed_at);
        Response { body, byte_count, started_at, completed_at, last_modified }
    }
}

impl SourceEndpoint for SimEndpoint<'_> {
    fn get_capabilities(&mut self) -> Result<Response, EndpointError> {
        let start = self.begin();
        let body = serialize_capability_document(&self.world.capabilities);
        Ok(self.transfer(start, body.into(), None))
    }

    fn get_resource_list(&mut self) -> Result<Response, EndpointError> {
        let start = self.begin();
        let body = serialize_resource_list(&build_resource_list(self.world.source.store(), start));
        Ok(self.transfer(start, body.into(), None))
    }

    fn get_change_list(&mut self, from: Timestamp) -> Result<Response, EndpointError> {
        let start = self.begin();
        let log = self.world.source.change_log();
        let first = log.partition_point(|c| c.timestamp() <= from);
        let list = build_change_list(&log[first..], from, start.max(from))
            .map_err(|e| EndpointError::Unavailable(e.to_string()))?;
        Ok(self.transfer(start, serialize_change_list(&list).into(), None))
    }

    fn get_representation(&mut self, uri: &ResourceUri) -> Result<Response, EndpointError> {
        let start = self.begin();
        let state = self.world.source.store().get(uri).ok_or_else(|| EndpointError::NotFound(uri.clone()))?;
        let last_modified = state.last_modified;
        let body = state.representation.shared_payload().expect("simulated resources hold payloads");
        Ok(self.transfer(start, body, Some(last_modified)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EventCounts {
    pub changes: u64,
    /// Cycles run during the simulation, excluding the final convergence
    /// cycle.
    pub sync_cycles: u64,
    /// Cycles started right after a previous one because a tick fired
    /// while it was still transferring.
    pub deferred_cycles: u64,
    /// Ticks that fired while a cycle was in progress.
    pub overrun_ticks: u64,
    pub fetches: u64,
    pub deletes: u64,
    pub warnings: u64,
    pub fetch_errors: u64,
}

/// Metric summary over the measurement window. A metric is `None` when it
/// is undefined, e.g. no change fell inside the window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub average_consistency: Option<f64>,
    pub average_latency: Option<f64>,
    pub average_efficiency: Option<f64>,
    pub unresolved_changes: u64,
    pub final_consistency: f64,
    pub window_start: Timestamp,
    pub window_end: Timestamp,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub config: SimConfig,
    pub summary: SimSummary,
    pub counts: EventCounts,
    /// Lead store before the first change.
    pub initial_lead: ResourceStore,
    /// Every lead change and copy mutation, final convergence included.
    pub trace: Vec<TraceEvent>,
    pub series: ConsistencySeries,
    /// Latencies resolved before the final convergence cycle.
    pub latencies: LatencyReport,
    /// Every cycle; the last one is the final convergence cycle.
    pub ledger: TransferLedger,
    pub change_list_windows: Vec<(Timestamp, Timestamp)>,
}

impl SimReport {
    /// Cycles counted towards average efficiency: those starting inside
    /// the window, excluding the initial baseline and the final
    /// convergence cycle.
    pub fn measured_cycles(&self) -> impl Iterator<Item = &crate::metrics::CycleRecord> {
        let cycles = self.ledger.cycles();
        let (lo, hi) = (self.summary.window_start, self.summary.window_end);
        cycles[..cycles.len().saturating_sub(1)]
            .iter()
            .skip(1)
            .filter(move |c| c.cycle_start >= lo && c.cycle_start < hi)
    }
}

/// Runs one simulation: source changes at `k * change_interval` for
/// `k >= 1` up to the duration, sync ticks at `k * sync_interval` for
/// `k >= 0` before it. Cycles never overlap; a tick that fires during a
/// cycle starts another one as soon as it finishes. Afterwards the source
/// stops changing and one more cycle runs.
///
/// Metrics are measured from the end of the initial baseline to the
/// duration.
pub fn run_simulation(config: &SimConfig) -> Result<SimReport, SimError> {
    config.validate()?;
    let end = Timestamp::ZERO + config.duration;
    let source = bootstrap_source(config);
    let initial_lead = source.store().clone();
    let mut world = World {
        clock: SimClock::new(),
        source,
        network: config.network,
        capabilities: standard_capabilities("http://sim"),
        change_interval: config.change_interval,
        sync_interval: config.sync_interval,
        end,
        busy: false,
        tick_due: false,
        overrun_ticks: 0,
    };
    let first_change = Timestamp::ZERO + config.change_interval;
    if first_change <= end {
        world.clock.schedule(first_change, SimEvent::SourceChange).expect("future event");
    }
    world.clock.schedule(Timestamp::ZERO, SimEvent::SyncTick).expect("future event");

    let mut dest = DestinationAgent::new(config.sync_mode);
    let mut counts = EventCounts::default();
    while let Some((at, event)) = world.clock.pop_due(end) {
        world.handle(at, event);
        let mut deferred = false;
        while world.tick_due && world.clock.now() < end {
            world.tick_due = false;
            if deferred {
                counts.deferred_cycles += 1;
            }
            world.busy = true;
            let outcome = dest.session.sync(&mut SimEndpoint { world: &mut world })?;
            world.busy = false;
            counts.sync_cycles += 1;
            counts.fetches += outcome.fetched;
            counts.deletes += outcome.deleted;
            counts.warnings += outcome.warnings;
            counts.fetch_errors += outcome.errors;
            dest.next_sync_at = dest.next_sync_at + config.sync_interval;
            deferred = true;
        }
        world.tick_due = false;
    }
    counts.overrun_ticks = world.overrun_ticks;

    let journal_before_final = dest.session.journal().len();
    world.busy = true;
    dest.session.sync(&mut SimEndpoint { world: &mut world })?;
    let final_consistency = consistency_at(world.source.store(), dest.session.store());

    let journal = dest.session.take_journal();
    let change_log = world.source.change_log();
    counts.changes = change_log.len() as u64;
    let empty_copy = ResourceStore::new(StoreRole::DestinationCopy);
    let trace = merge_trace(change_log, &journal);
    let series = ConsistencySeries::from_trace(Timestamp::ZERO, &initial_lead, &empty_copy, &trace);
    let latencies =
        record_latencies(&initial_lead, &empty_copy, &merge_trace(change_log, &journal[..journal_before_final]));

    let ledger = dest.session.ledger().clone();
    let window_start = ledger.cycles().first().map_or(end, |c| c.cycle_end);
    let mut report = SimReport {
        config: config.clone(),
        summary: SimSummary {
            average_consistency: None,
            average_latency: None,
            average_efficiency: None,
            unresolved_changes: 0,
            final_consistency,
            window_start,
            window_end: end,
        },
        counts,
        initial_lead,
        trace,
        series,
        latencies,
        ledger,
        change_list_windows: dest.session.change_list_windows().to_vec(),
    };
    if window_start < end {
        report.summary.average_consistency = report.series.average(window_start, end).ok();
        report.summary.average_latency = report.latencies.average_secs(window_start, end);
        report.summary.unresolved_changes = report.latencies.unresolved_in(window_start, end) as u64;
        let efficiencies: Vec<f64> =
            report.measured_cycles().filter_map(|c| crate::metrics::data_transfer_efficiency(c).ok()).collect();
        report.summary.average_efficiency =
            (!efficiencies.is_empty()).then(|| efficiencies.iter().sum::<f64>() / efficiencies.len() as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n: u64, change: f64, sync: f64, mode: SyncMode, duration: u64) -> SimConfig {
        SimConfig {
            duration: Duration::from_secs(duration),
            ..SimConfig::new(n, Duration::from_secs_f64(change), Duration::from_secs_f64(sync), mode)
        }
    }

    #[test]
    fn bootstrap_sizes_within_bounds() {
        let agent = bootstrap_source(&config(100, 10.0, 10.0, SyncMode::Baseline, 10));
        assert_eq!(agent.store().len(), 100);
        assert!(agent.store().iter().all(|s| (1..=1000).contains(&s.representation.byte_size())));
        assert!(agent.store().iter().all(|s| s.last_modified == Timestamp::ZERO));
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let c = config(50, 1.0, 1.0, SyncMode::Baseline, 10);
        assert_eq!(bootstrap_source(&c).store(), bootstrap_source(&c).store());
        let single = bootstrap_source(&config(1, 1.0, 1.0, SyncMode::Baseline, 10));
        assert_eq!(single.store().len(), 1);
    }

    #[test]
    fn updates_only_keep_resource_count() {
        let mut agent = bootstrap_source(&config(20, 1.0, 1.0, SyncMode::Baseline, 10));
        for k in 1..=100 {
            let change = agent.generate_change(Timestamp::from_millis(k * 100));
            assert_eq!(change.change_type(), ChangeType::Update);
            assert_eq!(agent.store().len(), 20);
        }
    }

    #[test]
    fn delete_on_empty_store_becomes_create() {
        let mut c = config(1, 1.0, 1.0, SyncMode::Baseline, 10);
        c.change_mix = ChangeMix { create: 0.0, update: 0.0, delete: 1.0 };
        let mut agent = bootstrap_source(&c);
        assert_eq!(agent.generate_change(Timestamp::from_secs(1)).change_type(), ChangeType::Delete);
        assert!(agent.store().is_empty());
        assert_eq!(agent.generate_change(Timestamp::from_secs(2)).change_type(), ChangeType::Create);
        assert_eq!(agent.store().len(), 1);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let ok = config(10, 1.0, 1.0, SyncMode::Baseline, 10);
        assert!(ok.validate().is_ok());
        let zero_duration = SimConfig { duration: Duration::ZERO, ..ok.clone() };
        assert!(matches!(zero_duration.validate(), Err(SimError::InvalidConfig { field: "duration", .. })));
        let no_resources = SimConfig { resource_count: 0, ..ok.clone() };
        assert!(no_resources.validate().is_err());
        let bad_mix = SimConfig { change_mix: ChangeMix { create: 0.5, update: 0.6, delete: 0.0 }, ..ok };
        assert!(matches!(bad_mix.validate(), Err(SimError::InvalidConfig { field: "change_mix", .. })));
    }

    #[test]
    fn change_count_over_duration() {
        let report = run_simulation(&config(10, 0.1, 5.0, SyncMode::Incremental, 10)).unwrap();
        assert_eq!(report.counts.changes, 100);
        let times: Vec<_> =
            report.trace.iter().filter(|e| matches!(e, TraceEvent::Lead { .. })).map(|e| e.at()).collect();
        assert!(times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn slow_source_cycle_count() {
        let report = run_simulation(&config(100, 10.0, 10.0, SyncMode::Baseline, 1000)).unwrap();
        assert_eq!(report.counts.sync_cycles, 100);
        assert_eq!(report.counts.changes, 100);
        assert_eq!(report.counts.overrun_ticks, 0);
        assert_eq!(report.ledger.len(), 101);
    }

    #[test]
    fn runs_are_deterministic() {
        let c = config(30, 0.5, 7.0, SyncMode::Incremental, 200);
        let (a, b) = (run_simulation(&c).unwrap(), run_simulation(&c).unwrap());
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.ledger, b.ledger);
    }

    #[test]
    fn final_sync_converges_in_both_modes() {
        for mode in [SyncMode::Baseline, SyncMode::Incremental] {
            let mut c = config(40, 0.2, 10.0, mode, 120);
            c.change_mix = ChangeMix { create: 0.3, update: 0.4, delete: 0.3 };
            let report = run_simulation(&c).unwrap();
            assert_eq!(report.summary.final_consistency, 1.0, "{mode}");
        }
    }

    #[test]
    fn change_list_windows_tile() {
        let report = run_simulation(&config(20, 0.3, 4.0, SyncMode::Incremental, 100)).unwrap();
        let windows = &report.change_list_windows;
        assert!(!windows.is_empty());
        // The first window opens at the baseline's list snapshot.
        let baseline = report.ledger.cycles()[0];
        assert!(windows[0].0 > baseline.cycle_start && windows[0].0 < baseline.cycle_end);
        assert!(windows.windows(2).all(|w| w[0].1 == w[1].0));
    }

    #[test]
    fn slow_link_defers_cycles() {
        let mut c = config(200, 1.0, 1.0, SyncMode::Baseline, 60);
        c.network = NetworkModel::new(5_000, Duration::from_millis(5)).unwrap();
        let report = run_simulation(&c).unwrap();
        assert!(report.counts.overrun_ticks > 0);
        assert!(report.counts.deferred_cycles > 0);
        let cycles = report.ledger.cycles();
        assert!(cycles.windows(2).all(|w| w[0].cycle_end <= w[1].cycle_start));
    }

    #[test]
    fn summary_recomputes_from_raw_data() {
        let report = run_simulation(&config(25, 0.5, 5.0, SyncMode::Baseline, 300)).unwrap();
        let (lo, hi) = (report.summary.window_start, report.summary.window_end);
        assert_eq!(report.summary.average_consistency, Some(report.series.average(lo, hi).unwrap()));
        assert_eq!(report.summary.average_latency, report.latencies.average_secs(lo, hi));
        let ok = report.measured_cycles().count();
        assert!(ok > 0);
    }
}
