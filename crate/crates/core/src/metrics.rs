//! Average consistency, average latency and data transfer efficiency.
//!
//! Consistency at an instant is the fraction of URIs, over the union of the
//! lead and copy URI sets, whose copy is present and in sync with its lead.
//! The run's consistency is a step function with a breakpoint at every lead
//! change and every copy installation or deletion; averages are
//! time-weighted over that function.
//!
//! Latency resolves each lead change at the first subsequent instant where
//! the copy of that URI matches the lead (both absent counts as matching).
//! A change that is overwritten before resolution resolves together with
//! its successor.

use std::collections::{BTreeSet, HashMap};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::model::{ChangeEvent, ChangeType, Digest, Representation, ResourceStore, ResourceUri};
use crate::time::Timestamp;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("interval [{from}, {until}) is empty")]
    EmptyInterval { from: Timestamp, until: Timestamp },
    #[error("series starts at {start}, after the requested interval start {from}")]
    Uncovered { start: Timestamp, from: Timestamp },
    #[error("cycle transferred no bytes; efficiency is undefined")]
    EmptyCycle,
}

/// Digest and size of a representation: all that equality needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct StateKey {
    pub digest: Digest,
    pub byte_size: u64,
}

impl From<&Representation> for StateKey {
    fn from(rep: &Representation) -> Self {
        Self { digest: rep.digest(), byte_size: rep.byte_size() }
    }
}

/// A copy state installation (`Some`) or deletion (`None`) at the
/// destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CopyMutation {
    pub at: Timestamp,
    pub uri: ResourceUri,
    pub state: Option<StateKey>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Lead { at: Timestamp, uri: ResourceUri, change_type: ChangeType, state: Option<StateKey> },
    Copy { at: Timestamp, uri: ResourceUri, state: Option<StateKey> },
}

impl TraceEvent {
    pub fn at(&self) -> Timestamp {
        match self {
            TraceEvent::Lead { at, .. } | TraceEvent::Copy { at, .. } => *at,
        }
    }

    pub fn uri(&self) -> &ResourceUri {
        match self {
            TraceEvent::Lead { uri, .. } | TraceEvent::Copy { uri, .. } => uri,
        }
    }
}

impl From<&ChangeEvent> for TraceEvent {
    fn from(c: &ChangeEvent) -> Self {
        TraceEvent::Lead {
            at: c.timestamp(),
            uri: c.uri().clone(),
            change_type: c.change_type(),
            state: c.new_representation().map(StateKey::from),
        }
    }
}

impl From<&CopyMutation> for TraceEvent {
    fn from(m: &CopyMutation) -> Self {
        TraceEvent::Copy { at: m.at, uri: m.uri.clone(), state: m.state }
    }
}

/// Merges a time-ordered change log with a time-ordered copy journal. At
/// equal timestamps lead changes come first: a copy installed at `t` was
/// requested before `t` and cannot reflect a change made at `t`.
pub fn merge_trace(change_log: &[ChangeEvent], copy_journal: &[CopyMutation]) -> Vec<TraceEvent> {
    let mut out = Vec::with_capacity(change_log.len() + copy_journal.len());
    let (mut i, mut j) = (0, 0);
    while i < change_log.len() || j < copy_journal.len() {
        let take_lead = match (change_log.get(i), copy_journal.get(j)) {
            (Some(c), Some(m)) => c.timestamp() <= m.at,
            (Some(_), None) => true,
            _ => false,
        };
        if take_lead {
            out.push(TraceEvent::from(&change_log[i]));
            i += 1;
        } else {
            out.push(TraceEvent::from(&copy_journal[j]));
            j += 1;
        }
    }
    out
}

/// `(in_sync, union)` counts behind a consistency value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConsistencyRatio {
    pub in_sync: u64,
    pub union: u64,
}

impl ConsistencyRatio {
    /// 1.0 when both stores are empty.
    pub fn value(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.in_sync as f64 / self.union as f64
        }
    }
}

pub fn consistency_ratio(lead: &ResourceStore, copy: &ResourceStore) -> ConsistencyRatio {
    let union: BTreeSet<&ResourceUri> = lead.uris().chain(copy.uris()).collect();
    let in_sync = union
        .iter()
        .filter(|u| match (lead.get(u), copy.get(u)) {
            (Some(l), Some(c)) => crate::model::in_sync(c, l),
            _ => false,
        })
        .count();
    ConsistencyRatio { in_sync: in_sync as u64, union: union.len() as u64 }
}

/// Fraction of URIs (over the union of both stores) whose copy is in sync.
pub fn consistency_at(lead: &ResourceStore, copy: &ResourceStore) -> f64 {
    consistency_ratio(lead, copy).value()
}

/// Incrementally maintained consistency counts.
#[derive(Debug, Clone, Default)]
pub struct ConsistencyTracker {
    lead: HashMap<ResourceUri, StateKey>,
    copy: HashMap<ResourceUri, StateKey>,
    in_sync: u64,
    union: u64,
}

impl ConsistencyTracker {
    pub fn new(initial_lead: &ResourceStore, initial_copy: &ResourceStore) -> Self {
        let mut tracker = Self::default();
        for s in initial_lead.iter() {
            tracker.set(Side::Lead, &s.uri, Some(StateKey::from(&s.representation)));
        }
        for s in initial_copy.iter() {
            tracker.set(Side::Copy, &s.uri, Some(StateKey::from(&s.representation)));
        }
        tracker
    }

    pub fn ratio(&self) -> ConsistencyRatio {
        ConsistencyRatio { in_sync: self.in_sync, union: self.union }
    }

    /// Whether the pair for `uri` is in sync, counting both-absent as in
    /// sync.
    pub fn pair_in_sync(&self, uri: &ResourceUri) -> bool {
        self.lead.get(uri) == self.copy.get(uri)
    }

    pub fn apply(&mut self, event: &TraceEvent) {
        match event {
            TraceEvent::Lead { uri, state, .. } => self.set(Side::Lead, uri, *state),
            TraceEvent::Copy { uri, state, .. } => self.set(Side::Copy, uri, *state),
        }
    }

    fn status(&self, uri: &ResourceUri) -> (bool, bool) {
        let lead = self.lead.get(uri);
        let copy = self.copy.get(uri);
        let present = lead.is_some() || copy.is_some();
        (present, present && lead == copy)
    }

    fn set(&mut self, side: Side, uri: &ResourceUri, state: Option<StateKey>) {
        let (was_present, was_in_sync) = self.status(uri);
        let map = match side {
            Side::Lead => &mut self.lead,
            Side::Copy => &mut self.copy,
        };
        match state {
            Some(s) => {
                map.insert(uri.clone(), s);
            }
            None => {
                map.remove(uri);
            }
        }
        let (present, in_sync) = self.status(uri);
        self.union = self.union + u64::from(present) - u64::from(was_present);
        self.in_sync = self.in_sync + u64::from(in_sync) - u64::from(was_in_sync);
    }
}

#[derive(Clone, Copy)]
enum Side {
    Lead,
    Copy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeriesPoint {
    pub at: Timestamp,
    pub ratio: ConsistencyRatio,
}

impl SeriesPoint {
    pub fn value(&self) -> f64 {
        self.ratio.value()
    }
}

/// Right-continuous step function: the value at `t` is that of the last
/// point with `at <= t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencySeries {
    points: Vec<SeriesPoint>,
}

impl ConsistencySeries {
    /// Starts from the given points, which must be time-ordered.
    pub fn from_points(points: Vec<SeriesPoint>) -> Self {
        debug_assert!(points.windows(2).all(|w| w[0].at <= w[1].at));
        Self { points }
    }

    /// One breakpoint at `start` for the initial stores, then one per trace
    /// event.
    pub fn from_trace(
        start: Timestamp,
        initial_lead: &ResourceStore,
        initial_copy: &ResourceStore,
        trace: &[TraceEvent],
    ) -> Self {
        let mut tracker = ConsistencyTracker::new(initial_lead, initial_copy);
        let mut points = Vec::with_capacity(trace.len() + 1);
        points.push(SeriesPoint { at: start, ratio: tracker.ratio() });
        for event in trace {
            tracker.apply(event);
            points.push(SeriesPoint { at: event.at(), ratio: tracker.ratio() });
        }
        Self { points }
    }

    pub fn points(&self) -> &[SeriesPoint] {
        &self.points
    }

    pub fn value_at(&self, t: Timestamp) -> Option<f64> {
        let idx = self.points.partition_point(|p| p.at <= t);
        idx.checked_sub(1).map(|i| self.points[i].value())
    }

    /// Time-weighted mean over `[from, until)`. Adjacent segments with equal
    /// counts are merged first, so splitting a segment never changes the
    /// result.
    pub fn average(&self, from: Timestamp, until: Timestamp) -> Result<f64, MetricsError> {
        if from >= until {
            return Err(MetricsError::EmptyInterval { from, until });
        }
        let first = self.points.first().ok_or(MetricsError::Uncovered { start: Timestamp::ZERO, from })?;
        if first.at > from {
            return Err(MetricsError::Uncovered { start: first.at, from });
        }
        let mut weighted = 0.0;
        let mut run: Option<(ConsistencyRatio, Timestamp)> = None;
        let mut flush = |ratio: ConsistencyRatio, seg_start: Timestamp, seg_end: Timestamp| {
            let lo = seg_start.max(from);
            let hi = seg_end.min(until);
            if hi > lo {
                weighted += ratio.value() * (hi.as_millis() - lo.as_millis()) as f64;
            }
        };
        for p in &self.points {
            match run {
                Some((ratio, _)) if ratio == p.ratio => {}
                Some((ratio, start)) => {
                    flush(ratio, start, p.at);
                    run = Some((p.ratio, p.at));
                }
                None => run = Some((p.ratio, p.at)),
            }
        }
        if let Some((ratio, start)) = run {
            flush(ratio, start, until.max(start));
        }
        Ok(weighted / (until.as_millis() - from.as_millis()) as f64)
    }
}

/// Time-weighted mean of a step series over `[from, until)`.
pub fn average_consistency(series: &ConsistencySeries, from: Timestamp, until: Timestamp) -> Result<f64, MetricsError> {
    series.average(from, until)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LatencyRecord {
    pub uri: ResourceUri,
    pub change_type: ChangeType,
    pub change_timestamp: Timestamp,
    pub resolved_timestamp: Timestamp,
}

impl LatencyRecord {
    pub fn latency(&self) -> Duration {
        self.resolved_timestamp - self.change_timestamp
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LatencyReport {
    pub records: Vec<LatencyRecord>,
    /// Changes still unresolved when the trace ends, as `(uri, timestamp)`.
    pub unresolved: Vec<(ResourceUri, Timestamp)>,
}

impl LatencyReport {
    /// Mean latency in seconds of the records whose change falls in
    /// `[from, until]`.
    pub fn average_secs(&self, from: Timestamp, until: Timestamp) -> Option<f64> {
        let (sum, n) = self
            .records
            .iter()
            .filter(|r| r.change_timestamp >= from && r.change_timestamp <= until)
            .fold((0u128, 0u64), |(s, n), r| (s + r.latency().as_millis(), n + 1));
        (n > 0).then(|| sum as f64 / n as f64 / 1000.0)
    }

    pub fn unresolved_in(&self, from: Timestamp, until: Timestamp) -> usize {
        self.unresolved.iter().filter(|(_, t)| *t >= from && *t <= until).count()
    }
}

/// Resolves every lead change in `trace` against the copy states that
/// follow it. `initial_lead`/`initial_copy` are the stores before the first
/// trace event.
pub fn record_latencies(
    initial_lead: &ResourceStore,
    initial_copy: &ResourceStore,
    trace: &[TraceEvent],
) -> LatencyReport {
    let mut tracker = ConsistencyTracker::new(initial_lead, initial_copy);
    let mut pending: HashMap<ResourceUri, Vec<(ChangeType, Timestamp)>> = HashMap::new();
    let mut records = Vec::new();
    for event in trace {
        tracker.apply(event);
        let uri = event.uri();
        if let TraceEvent::Lead { at, change_type, .. } = event {
            pending.entry(uri.clone()).or_default().push((*change_type, *at));
        }
        if tracker.pair_in_sync(uri) {
            if let Some(waiting) = pending.remove(uri) {
                records.extend(waiting.into_iter().map(|(change_type, t)| LatencyRecord {
                    uri: uri.clone(),
                    change_type,
                    change_timestamp: t,
                    resolved_timestamp: event.at(),
                }));
            }
        }
    }
    records.sort_by(|a, b| (a.change_timestamp, &a.uri).cmp(&(b.change_timestamp, &b.uri)));
    let mut unresolved: Vec<_> = pending
        .into_iter()
        .flat_map(|(uri, waiting)| waiting.into_iter().map(move |(_, t)| (uri.clone(), t)))
        .collect();
    unresolved.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
    LatencyReport { records, unresolved }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleKind {
    Baseline,
    Incremental,
    Dump,
}

impl CycleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CycleKind::Baseline => "baseline",
            CycleKind::Incremental => "incremental",
            CycleKind::Dump => "dump",
        }
    }
}

/// Bytes moved in one synchronization cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CycleRecord {
    pub kind: CycleKind,
    pub cycle_start: Timestamp,
    pub cycle_end: Timestamp,
    pub bytes_required: u64,
    pub bytes_overhead: u64,
    pub bytes_total: u64,
}

impl CycleRecord {
    pub fn new(
        kind: CycleKind,
        cycle_start: Timestamp,
        cycle_end: Timestamp,
        bytes_required: u64,
        bytes_total: u64,
    ) -> Self {
        assert!(bytes_required <= bytes_total, "required bytes exceed total bytes");
        Self { kind, cycle_start, cycle_end, bytes_required, bytes_overhead: bytes_total - bytes_required, bytes_total }
    }
}

/// Fraction of required bytes in the cycle's total.
pub fn data_transfer_efficiency(cycle: &CycleRecord) -> Result<f64, MetricsError> {
    if cycle.bytes_total == 0 {
        return Err(MetricsError::EmptyCycle);
    }
    Ok(cycle.bytes_required as f64 / cycle.bytes_total as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TransferLedger {
    cycles: Vec<CycleRecord>,
}

impl TransferLedger {
    pub fn push(&mut self, record: CycleRecord) {
        self.cycles.push(record);
    }

    pub fn cycles(&self) -> &[CycleRecord] {
        &self.cycles
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    /// Mean per-cycle efficiency over cycles accepted by `filter`; cycles
    /// that moved no bytes are skipped.
    pub fn average_efficiency(&self, filter: impl Fn(&CycleRecord) -> bool) -> Option<f64> {
        let values: Vec<f64> =
            self.cycles.iter().filter(|c| filter(c)).filter_map(|c| data_transfer_efficiency(c).ok()).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}
