//! Destination-side synchronization: baseline from a resource list,
//! incremental from change lists, and baseline from a resource dump.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endpoint::{EndpointError, Response, SourceEndpoint};
use crate::metrics::{CopyMutation, CycleKind, CycleRecord, StateKey, TransferLedger};
use crate::model::{states_equal, ChangeType, ModelError, Representation, ResourceStore, ResourceUri, StoreRole};
use crate::syncdocs::{
    parse_capability_document, parse_change_list, parse_resource_list, Capability, CapabilityDocument, DocumentError,
    DumpViolation, ResourceDump,
};
use crate::time::Timestamp;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SyncError {
    #[error("source unavailable: {0}")]
    SourceUnavailable(String),
    #[error(transparent)]
    Document(#[from] DocumentError),
    #[error("source does not expose a {} document", .0.token())]
    CapabilityMissing(Capability),
    #[error("incremental synchronization requires a completed baseline")]
    NoBaseline,
    #[error("change list entries are not in canonical order")]
    OutOfOrderChangeList,
    #[error("change list window starts at {available}, session needs changes since {requested}")]
    StaleSession { requested: Timestamp, available: Timestamp },
    #[error("dump has no payload for {0}")]
    MissingPayload(ResourceUri),
    #[error("dump payload for {0} does not match its manifest entry")]
    CorruptDump(ResourceUri),
    #[error(transparent)]
    Precondition(#[from] ModelError),
}

impl From<EndpointError> for SyncError {
    fn from(e: EndpointError) -> Self {
        SyncError::SourceUnavailable(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyncMode {
    Baseline,
    Incremental,
}

impl SyncMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SyncMode::Baseline => "baseline",
            SyncMode::Incremental => "incremental",
        }
    }
}

impl std::str::FromStr for SyncMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(SyncMode::Baseline),
            "incremental" => Ok(SyncMode::Incremental),
            other => Err(format!("unknown sync mode {other:?} (expected baseline or incremental)")),
        }
    }
}

impl std::fmt::Display for SyncMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncOptions {
    /// Remove local copies that no longer appear in the resource list.
    pub delete_orphans: bool,
    /// Treat create-of-present, update-of-absent and delete-of-absent in
    /// change lists as errors instead of warnings.
    pub strict: bool,
    /// Keep a journal of every copy installation and deletion.
    pub record_journal: bool,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self { delete_orphans: true, strict: false, record_journal: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SyncOutcome {
    pub fetched: u64,
    pub deleted: u64,
    pub skipped: u64,
    /// Tolerated anomalies: change list entries that did not match local
    /// state.
    pub warnings: u64,
    /// Listed resources that could not be fetched because the source no
    /// longer holds them.
    pub errors: u64,
    pub bytes_required: u64,
    pub bytes_total: u64,
    pub completed_at: Timestamp,
}

/// A destination's copy store together with its synchronization state.
#[derive(Debug, Clone)]
pub struct SyncSession {
    store: ResourceStore,
    mode: SyncMode,
    options: SyncOptions,
    last_sync_time: Option<Timestamp>,
    capabilities: Option<CapabilityDocument>,
    ledger: TransferLedger,
    journal: Vec<CopyMutation>,
    windows: Vec<(Timestamp, Timestamp)>,
}

struct Cycle {
    start: Option<Timestamp>,
    now: Timestamp,
    outcome: SyncOutcome,
}

impl Cycle {
    fn new(now: Timestamp) -> Self {
        Self { start: None, now, outcome: SyncOutcome::default() }
    }

    fn account(&mut self, response: &Response) {
        self.start.get_or_insert(response.started_at);
        self.now = self.now.max(response.completed_at);
        self.outcome.bytes_total += response.byte_count;
    }
}

impl SyncSession {
    pub fn new(mode: SyncMode) -> Self {
        Self::with_options(mode, SyncOptions::default())
    }

    pub fn with_options(mode: SyncMode, options: SyncOptions) -> Self {
        Self {
            store: ResourceStore::new(StoreRole::DestinationCopy),
            mode,
            options,
            last_sync_time: None,
            capabilities: None,
            ledger: TransferLedger::default(),
            journal: Vec::new(),
            windows: Vec::new(),
        }
    }

    pub fn store(&self) -> &ResourceStore {
        &self.store
    }

    pub fn mode(&self) -> SyncMode {
        self.mode
    }

    pub fn last_sync_time(&self) -> Option<Timestamp> {
        self.last_sync_time
    }

    pub fn ledger(&self) -> &TransferLedger {
        &self.ledger
    }

    pub fn journal(&self) -> &[CopyMutation] {
        &self.journal
    }

    pub fn take_journal(&mut self) -> Vec<CopyMutation> {
        std::mem::take(&mut self.journal)
    }

    /// Change-list windows fetched by completed incremental cycles.
    pub fn change_list_windows(&self) -> &[(Timestamp, Timestamp)] {
        &self.windows
    }

    /// Runs one cycle in the session's mode. Incremental sessions fall back
    /// to baseline until a baseline has completed.
    pub fn sync(&mut self, source: &mut dyn SourceEndpoint) -> Result<SyncOutcome, SyncError> {
        match (self.mode, self.last_sync_time) {
            (SyncMode::Incremental, Some(_)) => self.incremental_sync(source),
            _ => self.baseline_sync(source),
        }
    }

    /// Fetches the resource list, installs every missing or stale
    /// representation and deletes local copies the list no longer names.
    pub fn baseline_sync(&mut self, source: &mut dyn SourceEndpoint) -> Result<SyncOutcome, SyncError> {
        self.run_cycle(CycleKind::Baseline, |session, cycle| {
            session.require(source, Capability::ResourceList, cycle)?;
            let response = source.get_resource_list()?;
            cycle.account(&response);
            let list = parse_resource_list(&response.body)?;

            for entry in list.entries() {
                let current = session.store.get(&entry.uri).is_some_and(|s| {
                    s.representation.digest() == entry.digest && s.representation.byte_size() == entry.byte_size
                });
                if current {
                    cycle.outcome.skipped += 1;
                    continue;
                }
                session.fetch_and_install(source, &entry.uri, entry.last_modified, cycle)?;
            }

            if session.options.delete_orphans {
                let listed: HashSet<&ResourceUri> = list.entries().iter().map(|e| &e.uri).collect();
                let orphans: Vec<ResourceUri> = session.store.uris().filter(|u| !listed.contains(u)).cloned().collect();
                for uri in orphans {
                    session.remove(&uri, cycle.now);
                    cycle.outcome.deleted += 1;
                }
            }
            session.last_sync_time = Some(list.snapshot_time());
            Ok(())
        })
    }

    /// Fetches the change list since the last sync and replays it in order.
    /// Every create/update dereferences the resource's current state.
    pub fn incremental_sync(&mut self, source: &mut dyn SourceEndpoint) -> Result<SyncOutcome, SyncError> {
        let from = self.last_sync_time.ok_or(SyncError::NoBaseline)?;
        self.run_cycle(CycleKind::Incremental, |session, cycle| {
            session.require(source, Capability::ChangeList, cycle)?;
            let response = source.get_change_list(from)?;
            cycle.account(&response);
            let changes = parse_change_list(&response.body)?;
            if changes.from_time() != from {
                return Err(SyncError::StaleSession { requested: from, available: changes.from_time() });
            }
            if !changes.is_canonical() {
                return Err(SyncError::OutOfOrderChangeList);
            }

            for entry in changes.entries() {
                let present = session.store.contains(&entry.uri);
                let anomaly = match entry.change_type {
                    ChangeType::Create => present.then_some("resource already exists"),
                    ChangeType::Update | ChangeType::Delete => (!present).then_some("resource does not exist"),
                };
                if let Some(reason) = anomaly {
                    if session.options.strict {
                        return Err(SyncError::Precondition(ModelError::ChangePreconditionViolation {
                            uri: entry.uri.clone(),
                            change: entry.change_type,
                            reason,
                        }));
                    }
                    cycle.outcome.warnings += 1;
                }
                match entry.change_type {
                    ChangeType::Create | ChangeType::Update => {
                        session.fetch_and_install(source, &entry.uri, entry.timestamp, cycle)?;
                    }
                    ChangeType::Delete => {
                        if present {
                            session.remove(&entry.uri, cycle.now);
                            cycle.outcome.deleted += 1;
                        }
                    }
                }
            }
            session.windows.push((changes.from_time(), changes.until_time()));
            session.last_sync_time = Some(changes.until_time());
            Ok(())
        })
    }

    /// Baseline synchronization with payloads taken from a dump archive of
    /// `archive_bytes` bytes. The dump is verified in full before anything
    /// is installed.
    pub fn baseline_sync_from_dump(
        &mut self,
        dump: &ResourceDump,
        archive_bytes: u64,
        now: Timestamp,
    ) -> Result<SyncOutcome, SyncError> {
        dump.verify().map_err(|v| match v {
            DumpViolation::Missing(uri) => SyncError::MissingPayload(uri),
            DumpViolation::Corrupt(uri) | DumpViolation::Unlisted(uri) => SyncError::CorruptDump(uri),
        })?;
        self.run_cycle(CycleKind::Dump, |session, cycle| {
            cycle.start = Some(now);
            cycle.outcome.bytes_total = archive_bytes;
            let manifest = dump.manifest();
            for entry in manifest.entries() {
                let rep = Representation::from_payload(dump.payloads()[&entry.uri].clone());
                let current = session.store.get(&entry.uri).is_some_and(|s| states_equal(&s.representation, &rep));
                if current {
                    cycle.outcome.skipped += 1;
                } else {
                    session.install(entry.uri.clone(), rep, entry.last_modified, cycle);
                }
            }
            if session.options.delete_orphans {
                let listed: HashSet<&ResourceUri> = manifest.entries().iter().map(|e| &e.uri).collect();
                let orphans: Vec<ResourceUri> = session.store.uris().filter(|u| !listed.contains(u)).cloned().collect();
                for uri in orphans {
                    session.remove(&uri, now);
                    cycle.outcome.deleted += 1;
                }
            }
            cycle.outcome.bytes_required = cycle.outcome.bytes_required.min(archive_bytes);
            session.last_sync_time = Some(manifest.snapshot_time());
            Ok(())
        })
    }

    /// Runs `body` as one ledger cycle. Work done before an error stays
    /// applied and is still accounted; `last_sync_time` only moves on
    /// success.
    fn run_cycle<F>(&mut self, kind: CycleKind, body: F) -> Result<SyncOutcome, SyncError>
    where
        F: FnOnce(&mut Self, &mut Cycle) -> Result<(), SyncError>,
    {
        let mut cycle = Cycle::new(self.last_sync_time.unwrap_or(Timestamp::ZERO));
        let result = body(self, &mut cycle);
        let start = cycle.start.unwrap_or(cycle.now);
        cycle.outcome.completed_at = cycle.now;
        let outcome = cycle.outcome;
        if outcome.bytes_total > 0 || result.is_ok() {
            self.ledger.push(CycleRecord::new(kind, start, cycle.now, outcome.bytes_required, outcome.bytes_total));
        }
        result.map(|()| outcome)
    }

    fn require(
        &mut self,
        source: &mut dyn SourceEndpoint,
        capability: Capability,
        cycle: &mut Cycle,
    ) -> Result<(), SyncError> {
        if self.capabilities.is_none() {
            let response = source.get_capabilities()?;
            cycle.account(&response);
            self.capabilities = Some(parse_capability_document(&response.body)?);
        }
        match &self.capabilities {
            Some(doc) if doc.supports(capability) => Ok(()),
            _ => Err(SyncError::CapabilityMissing(capability)),
        }
    }

    fn fetch_and_install(
        &mut self,
        source: &mut dyn SourceEndpoint,
        uri: &ResourceUri,
        listed_last_modified: Timestamp,
        cycle: &mut Cycle,
    ) -> Result<(), SyncError> {
        match source.get_representation(uri) {
            Ok(response) => {
                cycle.account(&response);
                cycle.outcome.fetched += 1;
                let last_modified = response.last_modified.unwrap_or(listed_last_modified);
                let rep = Representation::from_payload(response.body);
                self.install(uri.clone(), rep, last_modified, cycle);
                Ok(())
            }
            // Deleted at the source after the list was produced; a later
            // list or change entry accounts for it.
            Err(EndpointError::NotFound(_)) => {
                cycle.outcome.errors += 1;
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Installs a representation. Payload bytes count as required only
    /// when they change the copy state.
    fn install(&mut self, uri: ResourceUri, rep: Representation, last_modified: Timestamp, cycle: &mut Cycle) {
        let changes_state = self.store.get(&uri).is_none_or(|s| !states_equal(&s.representation, &rep));
        if changes_state {
            cycle.outcome.bytes_required += rep.byte_size();
        }
        if self.options.record_journal {
            self.journal.push(CopyMutation { at: cycle.now, uri: uri.clone(), state: Some(StateKey::from(&rep)) });
        }
        self.store.put(uri, rep, last_modified);
    }

    fn remove(&mut self, uri: &ResourceUri, at: Timestamp) {
        if self.store.remove(uri).is_some() && self.options.record_journal {
            self.journal.push(CopyMutation { at, uri: uri.clone(), state: None });
        }
    }
}
