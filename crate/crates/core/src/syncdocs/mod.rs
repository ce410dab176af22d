//! Synchronization documents a source exposes: resource lists, change
//! lists, resource and change dumps, and the capability document.
//!
//! All documents have a canonical in-memory form (sorted, deduplicated)
//! so that serialization is byte-deterministic.

mod dump;
mod xml;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::model::{ChangeEvent, ChangeType, Digest, ResourceStore, ResourceUri};
use crate::time::Timestamp;

pub use dump::{member_name_for, ChangeDump, DumpViolation, ResourceDump, MANIFEST_MEMBER, PAYLOAD_PREFIX};
pub use xml::{
    parse_capability_document, parse_change_list, parse_resource_list, serialize_capability_document,
    serialize_change_list, serialize_resource_list, RS_NAMESPACE, SITEMAP_NAMESPACE,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DocumentError {
    #[error("malformed document at byte {position}: {reason}")]
    MalformedDocument { position: u64, reason: String },
    #[error("invalid window: from {from} is after until {until}")]
    InvalidWindow { from: Timestamp, until: Timestamp },
    #[error("no payload available for {0}")]
    MissingPayload(ResourceUri),
    #[error("archive error: {0}")]
    Archive(String),
}

impl DocumentError {
    pub(crate) fn malformed(position: u64, reason: impl Into<String>) -> Self {
        DocumentError::MalformedDocument { position, reason: reason.into() }
    }
}

/// One resource list entry: URI plus last-modified, digest and size of its
/// current representation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceListEntry {
    pub uri: ResourceUri,
    pub last_modified: Timestamp,
    pub digest: Digest,
    pub byte_size: u64,
}

/// Snapshot of a source's resources at `snapshot_time`, sorted by URI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceList {
    snapshot_time: Timestamp,
    entries: Vec<ResourceListEntry>,
}

impl ResourceList {
    /// Sorts the entries into canonical order. Duplicate URIs are rejected.
    pub fn new(snapshot_time: Timestamp, mut entries: Vec<ResourceListEntry>) -> Result<Self, DocumentError> {
        entries.sort_by(|a, b| a.uri.cmp(&b.uri));
        if let Some(dup) = entries.windows(2).find(|w| w[0].uri == w[1].uri) {
            return Err(DocumentError::malformed(0, format!("duplicate resource list entry for {}", dup[0].uri)));
        }
        Ok(Self { snapshot_time, entries })
    }

    pub fn snapshot_time(&self) -> Timestamp {
        self.snapshot_time
    }

    pub fn entries(&self) -> &[ResourceListEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A change list entry carries no payload.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ChangeListEntry {
    pub timestamp: Timestamp,
    pub uri: ResourceUri,
    pub change_type: ChangeType,
}

impl From<&ChangeEvent> for ChangeListEntry {
    fn from(change: &ChangeEvent) -> Self {
        Self { timestamp: change.timestamp(), uri: change.uri().clone(), change_type: change.change_type() }
    }
}

/// Changes in the half-open window `(from_time, until_time]`, ordered by
/// timestamp, then URI, then change type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeList {
    from_time: Timestamp,
    until_time: Timestamp,
    entries: Vec<ChangeListEntry>,
}

impl ChangeList {
    /// Validates the window and that every entry lies within it, then sorts
    /// entries canonically.
    pub fn new(
        from_time: Timestamp,
        until_time: Timestamp,
        mut entries: Vec<ChangeListEntry>,
    ) -> Result<Self, DocumentError> {
        if from_time > until_time {
            return Err(DocumentError::InvalidWindow { from: from_time, until: until_time });
        }
        if let Some(outside) = entries.iter().find(|e| e.timestamp <= from_time || e.timestamp > until_time) {
            return Err(DocumentError::malformed(
                0,
                format!(
                    "entry for {} at {} lies outside window ({from_time}, {until_time}]",
                    outside.uri, outside.timestamp
                ),
            ));
        }
        entries.sort();
        Ok(Self { from_time, until_time, entries })
    }

    /// Keeps entries in the given order, for documents whose order must be
    /// checked rather than repaired.
    pub(crate) fn new_unsorted(from_time: Timestamp, until_time: Timestamp, entries: Vec<ChangeListEntry>) -> Self {
        Self { from_time, until_time, entries }
    }

    pub fn from_time(&self) -> Timestamp {
        self.from_time
    }

    pub fn until_time(&self) -> Timestamp {
        self.until_time
    }

    pub fn entries(&self) -> &[ChangeListEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Whether entries are in canonical order and inside the window.
    pub fn is_canonical(&self) -> bool {
        self.entries.windows(2).all(|w| w[0] <= w[1])
            && self.entries.iter().all(|e| e.timestamp > self.from_time && e.timestamp <= self.until_time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Capability {
    ResourceList,
    ChangeList,
    ResourceDump,
    ChangeDump,
}

impl Capability {
    pub const ALL: [Capability; 4] =
        [Capability::ResourceList, Capability::ChangeList, Capability::ResourceDump, Capability::ChangeDump];

    pub fn token(self) -> &'static str {
        match self {
            Capability::ResourceList => "resourcelist",
            Capability::ChangeList => "changelist",
            Capability::ResourceDump => "resourcedump",
            Capability::ChangeDump => "changedump",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.token() == token)
    }
}

/// Lookup document listing which synchronization documents a source
/// exposes and where.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CapabilityDocument {
    locations: BTreeMap<Capability, ResourceUri>,
}

impl CapabilityDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, capability: Capability, location: ResourceUri) -> Self {
        self.locations.insert(capability, location);
        self
    }

    pub fn supports(&self, capability: Capability) -> bool {
        self.locations.contains_key(&capability)
    }

    pub fn location(&self, capability: Capability) -> Option<&ResourceUri> {
        self.locations.get(&capability)
    }

    pub fn available(&self) -> BTreeSet<Capability> {
        self.locations.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Capability, &ResourceUri)> {
        self.locations.iter().map(|(c, u)| (*c, u))
    }
}

/// One entry per stored resource, in URI order.
pub fn build_resource_list(source_store: &ResourceStore, now: Timestamp) -> ResourceList {
    let entries = source_store
        .iter()
        .map(|state| ResourceListEntry {
            uri: state.uri.clone(),
            last_modified: state.last_modified,
            digest: state.representation.digest(),
            byte_size: state.representation.byte_size(),
        })
        .collect();
    // Store iteration is already URI-ordered and unique.
    ResourceList { snapshot_time: now, entries }
}

/// Every logged change with `from < timestamp <= until`, uncoalesced.
pub fn build_change_list(
    change_log: &[ChangeEvent],
    from: Timestamp,
    until: Timestamp,
) -> Result<ChangeList, DocumentError> {
    if from > until {
        return Err(DocumentError::InvalidWindow { from, until });
    }
    let entries = change_log
        .iter()
        .filter(|c| c.timestamp() > from && c.timestamp() <= until)
        .map(ChangeListEntry::from)
        .collect();
    ChangeList::new(from, until, entries)
}

/// Builds a resource dump from a store whose states carry payloads.
pub fn build_resource_dump(source_store: &ResourceStore, now: Timestamp) -> Result<ResourceDump, DocumentError> {
    let manifest = build_resource_list(source_store, now);
    let mut payloads = BTreeMap::new();
    for state in source_store.iter() {
        let payload = state.representation.payload().ok_or_else(|| DocumentError::MissingPayload(state.uri.clone()))?;
        payloads.insert(state.uri.clone(), Arc::<[u8]>::from(payload));
    }
    Ok(ResourceDump::from_parts(manifest, payloads))
}

/// Builds a change dump. `payload_lookup` supplies the bytes for each URI
/// whose last change in the window is not a delete.
pub fn build_change_dump<F>(
    change_log: &[ChangeEvent],
    mut payload_lookup: F,
    from: Timestamp,
    until: Timestamp,
) -> Result<ChangeDump, DocumentError>
where
    F: FnMut(&ResourceUri) -> Option<Vec<u8>>,
{
    let manifest = build_change_list(change_log, from, until)?;
    let mut last_change: BTreeMap<&ResourceUri, ChangeType> = BTreeMap::new();
    for entry in manifest.entries() {
        last_change.insert(&entry.uri, entry.change_type);
    }
    let mut payloads = BTreeMap::new();
    for (uri, change) in last_change {
        if change == ChangeType::Delete {
            continue;
        }
        let bytes = payload_lookup(uri).ok_or_else(|| DocumentError::MissingPayload(uri.clone()))?;
        payloads.insert(uri.clone(), Arc::<[u8]>::from(bytes));
    }
    Ok(ChangeDump::from_parts(manifest, payloads))
}

/// Exact length of a serialized document.
pub fn document_byte_size(document: &[u8]) -> u64 {
    document.len() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Representation, StoreRole};

    fn uri(s: &str) -> ResourceUri {
        ResourceUri::parse(&format!("http://example.org/{s}")).unwrap()
    }

    fn rep(s: &str) -> Representation {
        Representation::from_payload(s.as_bytes().to_vec())
    }

    #[test]
    fn empty_store_gives_empty_list() {
        let store = ResourceStore::new(StoreRole::SourceLead);
        let rl = build_resource_list(&store, Timestamp::from_secs(7));
        assert!(rl.is_empty());
        assert_eq!(rl.snapshot_time(), Timestamp::from_secs(7));
    }

    #[test]
    fn resource_list_is_uri_ordered() {
        let mut store = ResourceStore::new(StoreRole::SourceLead);
        store.put(uri("b"), rep("b"), Timestamp::ZERO);
        store.put(uri("a"), rep("a"), Timestamp::ZERO);
        let rl = build_resource_list(&store, Timestamp::ZERO);
        let order: Vec<_> = rl.entries().iter().map(|e| e.uri.clone()).collect();
        assert_eq!(order, vec![uri("a"), uri("b")]);
    }

    #[test]
    fn resource_list_matches_replayed_store() {
        let log = vec![
            ChangeEvent::create(uri("x"), Timestamp::from_secs(1), rep("x1")),
            ChangeEvent::create(uri("y"), Timestamp::from_secs(2), rep("y1")),
            ChangeEvent::create(uri("z"), Timestamp::from_secs(3), rep("z1")),
            ChangeEvent::delete(uri("y"), Timestamp::from_secs(4)),
        ];
        let mut store = ResourceStore::new(StoreRole::SourceLead);
        for c in &log {
            store.apply_change(c).unwrap();
        }
        let rl = build_resource_list(&store, Timestamp::from_secs(4));
        assert_eq!(rl.len(), 2);
        for entry in rl.entries() {
            let state = store.get(&entry.uri).unwrap();
            assert_eq!(entry.digest, state.representation.digest());
            assert_eq!(entry.byte_size, state.representation.byte_size());
        }
        assert_eq!(rl.entries()[0].digest, Digest::of(b"x1"));
        assert_eq!(rl.entries()[1].digest, Digest::of(b"z1"));
    }

    #[test]
    fn change_list_windows() {
        assert!(build_change_list(&[], Timestamp::ZERO, Timestamp::from_secs(1)).unwrap().is_empty());

        let log = vec![
            ChangeEvent::create(uri("u1"), Timestamp::from_secs(1), rep("a")),
            ChangeEvent::update(uri("u1"), Timestamp::from_secs(2), rep("b")),
            ChangeEvent::delete(uri("u1"), Timestamp::from_secs(3)),
        ];
        let cl = build_change_list(&log, Timestamp::ZERO, Timestamp::from_secs(2)).unwrap();
        let got: Vec<_> = cl.entries().iter().map(|e| (e.change_type, e.timestamp)).collect();
        assert_eq!(
            got,
            vec![(ChangeType::Create, Timestamp::from_secs(1)), (ChangeType::Update, Timestamp::from_secs(2))]
        );

        let five = Timestamp::from_secs(5);
        assert!(build_change_list(&log, five, five).unwrap().is_empty());
        assert_eq!(
            build_change_list(&log, five, Timestamp::from_secs(4)).unwrap_err(),
            DocumentError::InvalidWindow { from: five, until: Timestamp::from_secs(4) }
        );
    }

    #[test]
    fn consecutive_windows_partition_the_log() {
        let log: Vec<_> =
            (1..=10).map(|i| ChangeEvent::update(uri("u"), Timestamp::from_secs(i), rep(&i.to_string()))).collect();
        let cuts = [0, 3, 3, 7, 10].map(Timestamp::from_secs);
        let total: usize = cuts.windows(2).map(|w| build_change_list(&log, w[0], w[1]).unwrap().len()).sum();
        assert_eq!(total, log.len());
    }

    #[test]
    fn change_list_ties_break_on_uri_then_type() {
        let t = Timestamp::from_secs(1);
        let entries = vec![
            ChangeListEntry { timestamp: t, uri: uri("b"), change_type: ChangeType::Create },
            ChangeListEntry { timestamp: t, uri: uri("a"), change_type: ChangeType::Update },
            ChangeListEntry { timestamp: t, uri: uri("a"), change_type: ChangeType::Create },
        ];
        let cl = ChangeList::new(Timestamp::ZERO, t, entries).unwrap();
        let order: Vec<_> = cl.entries().iter().map(|e| (e.uri.to_string(), e.change_type)).collect();
        assert_eq!(
            order,
            vec![
                ("http://example.org/a".to_string(), ChangeType::Create),
                ("http://example.org/a".to_string(), ChangeType::Update),
                ("http://example.org/b".to_string(), ChangeType::Create),
            ]
        );
        assert!(cl.is_canonical());
    }

    #[test]
    fn duplicate_resource_list_uris_rejected() {
        let e =
            ResourceListEntry { uri: uri("a"), last_modified: Timestamp::ZERO, digest: Digest::of(b""), byte_size: 0 };
        assert!(ResourceList::new(Timestamp::ZERO, vec![e.clone(), e]).is_err());
    }

    #[test]
    fn change_dump_payloads_follow_last_entry() {
        let log = vec![
            ChangeEvent::create(uri("a"), Timestamp::from_secs(1), rep("a1")),
            ChangeEvent::create(uri("b"), Timestamp::from_secs(2), rep("b1")),
            ChangeEvent::delete(uri("b"), Timestamp::from_secs(3)),
        ];
        let dump =
            build_change_dump(&log, |u| Some(u.as_str().as_bytes().to_vec()), Timestamp::ZERO, Timestamp::from_secs(3))
                .unwrap();
        assert_eq!(dump.manifest().len(), 3);
        assert_eq!(dump.payloads().keys().cloned().collect::<Vec<_>>(), vec![uri("a")]);

        let only_delete = build_change_dump(&log, |_| None, Timestamp::from_secs(2), Timestamp::from_secs(3)).unwrap();
        assert_eq!(only_delete.manifest().len(), 1);
        assert!(only_delete.payloads().is_empty());

        let missing = build_change_dump(&log, |_| None, Timestamp::ZERO, Timestamp::from_secs(1)).unwrap_err();
        assert_eq!(missing, DocumentError::MissingPayload(uri("a")));
    }

    #[test]
    fn resource_dump_requires_payloads() {
        let mut store = ResourceStore::new(StoreRole::SourceLead);
        store.put(uri("a"), rep("a").without_payload(), Timestamp::ZERO);
        assert_eq!(build_resource_dump(&store, Timestamp::ZERO).unwrap_err(), DocumentError::MissingPayload(uri("a")));
    }
}
