//! Resources, representations, states and changes.
//!
//! A resource is a URI bound to exactly one representation. Its state is
//! that representation; a copy state is in sync with its lead state when
//! their payloads are byte-equivalent, which is decided here by comparing
//! SHA-256 digests and byte sizes.

use std::collections::btree_map::{self, BTreeMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::time::Timestamp;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid resource URI {uri:?}: {reason}")]
    InvalidUri { uri: String, reason: String },
    #[error("invalid digest {0:?}: expected 64 lowercase hex characters")]
    InvalidDigest(String),
    #[error("payload does not match its digest or size")]
    PayloadMismatch,
    #[error("{change} of {uri} violates the store precondition: {reason}")]
    ChangePreconditionViolation { uri: ResourceUri, change: ChangeType, reason: &'static str },
    #[error("change event for {0} is inconsistent: delete must carry no representation, create/update must carry one")]
    MalformedChange(ResourceUri),
}

/// Absolute URI identifying a resource. Equality is exact string equality.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct ResourceUri(Arc<str>);

impl ResourceUri {
    pub fn parse(value: &str) -> Result<Self, ModelError> {
        let invalid = |reason: &str| ModelError::InvalidUri { uri: value.to_string(), reason: reason.to_string() };
        if value.is_empty() {
            return Err(invalid("empty"));
        }
        let parsed = url::Url::parse(value).map_err(|e| invalid(&e.to_string()))?;
        if !parsed.has_host() {
            return Err(invalid("missing authority"));
        }
        Ok(Self(Arc::from(value)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ResourceUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&*self.0, f)
    }
}

impl fmt::Display for ResourceUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ResourceUri {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl<'de> Deserialize<'de> for ResourceUri {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Self::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// SHA-256 payload digest, rendered as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest([u8; 32]);

impl Digest {
    pub fn of(payload: &[u8]) -> Self {
        Self(Sha256::digest(payload).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl FromStr for Digest {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidDigest(s.to_string());
        if s.len() != 64 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(bad());
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| bad())?;
        Ok(Self(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

/// The single representation bound to a resource.
///
/// Stores that only need to compare states may drop the payload and keep
/// the digest and size.
#[derive(Clone)]
pub struct Representation {
    digest: Digest,
    byte_size: u64,
    payload: Option<Arc<[u8]>>,
}

impl Representation {
    pub fn from_payload(payload: impl Into<Arc<[u8]>>) -> Self {
        let payload = payload.into();
        Self { digest: Digest::of(&payload), byte_size: payload.len() as u64, payload: Some(payload) }
    }

    pub fn from_metadata(digest: Digest, byte_size: u64) -> Self {
        Self { digest, byte_size, payload: None }
    }

    /// Attaches a payload, checking it against the recorded digest and size.
    pub fn with_payload(self, payload: impl Into<Arc<[u8]>>) -> Result<Self, ModelError> {
        let payload = payload.into();
        if payload.len() as u64 != self.byte_size || Digest::of(&payload) != self.digest {
            return Err(ModelError::PayloadMismatch);
        }
        Ok(Self { payload: Some(payload), ..self })
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn byte_size(&self) -> u64 {
        self.byte_size
    }

    pub fn payload(&self) -> Option<&[u8]> {
        self.payload.as_deref()
    }

    /// The payload as a shared buffer, without copying.
    pub fn shared_payload(&self) -> Option<Arc<[u8]>> {
        self.payload.clone()
    }

    pub fn without_payload(&self) -> Self {
        Self::from_metadata(self.digest, self.byte_size)
    }
}

/// Payload presence does not participate in equality.
impl PartialEq for Representation {
    fn eq(&self, other: &Self) -> bool {
        states_equal(self, other)
    }
}

impl Eq for Representation {}

impl fmt::Debug for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Representation")
            .field("digest", &self.digest)
            .field("byte_size", &self.byte_size)
            .field("payload", &self.payload.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceState {
    pub uri: ResourceUri,
    pub representation: Representation,
    pub last_modified: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeType {
    Create,
    Update,
    Delete,
}

impl ChangeType {
    pub const ALL: [ChangeType; 3] = [ChangeType::Create, ChangeType::Update, ChangeType::Delete];

    pub fn as_str(self) -> &'static str {
        match self {
            ChangeType::Create => "create",
            ChangeType::Update => "update",
            ChangeType::Delete => "delete",
        }
    }
}

impl fmt::Display for ChangeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChangeType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "create" => Ok(ChangeType::Create),
            "update" => Ok(ChangeType::Update),
            "delete" => Ok(ChangeType::Delete),
            other => Err(format!("unknown change type {other:?}")),
        }
    }
}

/// A change `{uri, type, timestamp}`, carrying the new representation for
/// creates and updates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeEvent {
    uri: ResourceUri,
    change_type: ChangeType,
    timestamp: Timestamp,
    new_representation: Option<Representation>,
}

impl ChangeEvent {
    pub fn create(uri: ResourceUri, timestamp: Timestamp, representation: Representation) -> Self {
        Self { uri, change_type: ChangeType::Create, timestamp, new_representation: Some(representation) }
    }

    pub fn update(uri: ResourceUri, timestamp: Timestamp, representation: Representation) -> Self {
        Self { uri, change_type: ChangeType::Update, timestamp, new_representation: Some(representation) }
    }

    pub fn delete(uri: ResourceUri, timestamp: Timestamp) -> Self {
        Self { uri, change_type: ChangeType::Delete, timestamp, new_representation: None }
    }

    pub fn new(
        uri: ResourceUri,
        change_type: ChangeType,
        timestamp: Timestamp,
        new_representation: Option<Representation>,
    ) -> Result<Self, ModelError> {
        if (change_type == ChangeType::Delete) != new_representation.is_none() {
            return Err(ModelError::MalformedChange(uri));
        }
        Ok(Self { uri, change_type, timestamp, new_representation })
    }

    pub fn uri(&self) -> &ResourceUri {
        &self.uri
    }

    pub fn change_type(&self) -> ChangeType {
        self.change_type
    }

    pub fn timestamp(&self) -> Timestamp {
        self.timestamp
    }

    pub fn new_representation(&self) -> Option<&Representation> {
        self.new_representation.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreRole {
    SourceLead,
    DestinationCopy,
}

/// URI-keyed resource states held by one agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceStore {
    role: StoreRole,
    entries: BTreeMap<ResourceUri, ResourceState>,
}

impl ResourceStore {
    pub fn new(role: StoreRole) -> Self {
        Self { role, entries: BTreeMap::new() }
    }

    pub fn role(&self) -> StoreRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, uri: &ResourceUri) -> Option<&ResourceState> {
        self.entries.get(uri)
    }

    pub fn contains(&self, uri: &ResourceUri) -> bool {
        self.entries.contains_key(uri)
    }

    /// States in ascending URI order.
    pub fn iter(&self) -> btree_map::Values<'_, ResourceUri, ResourceState> {
        self.entries.values()
    }

    pub fn uris(&self) -> impl Iterator<Item = &ResourceUri> {
        self.entries.keys()
    }

    /// Installs `representation` as the state of `uri`, replacing any
    /// previous state. Returns the replaced state.
    pub fn put(
        &mut self,
        uri: ResourceUri,
        representation: Representation,
        last_modified: Timestamp,
    ) -> Option<ResourceState> {
        let state = ResourceState { uri: uri.clone(), representation, last_modified };
        self.entries.insert(uri, state)
    }

    pub fn remove(&mut self, uri: &ResourceUri) -> Option<ResourceState> {
        self.entries.remove(uri)
    }

    /// Applies a change, enforcing that creates target absent URIs and
    /// updates/deletes target present ones.
    pub fn apply_change(&mut self, change: &ChangeEvent) -> Result<(), ModelError> {
        let present = self.contains(&change.uri);
        let violation = |reason| ModelError::ChangePreconditionViolation {
            uri: change.uri.clone(),
            change: change.change_type,
            reason,
        };
        match (change.change_type, &change.new_representation) {
            (ChangeType::Create, _) if present => Err(violation("resource already exists")),
            (ChangeType::Update | ChangeType::Delete, _) if !present => Err(violation("resource does not exist")),
            (ChangeType::Create | ChangeType::Update, Some(rep)) => {
                self.put(change.uri.clone(), rep.clone(), change.timestamp);
                Ok(())
            }
            (ChangeType::Delete, None) => {
                self.remove(&change.uri);
                Ok(())
            }
            _ => Err(ModelError::MalformedChange(change.uri.clone())),
        }
    }
}

/// Payload equality, decided by digest and byte size.
pub fn states_equal(a: &Representation, b: &Representation) -> bool {
    a.digest == b.digest && a.byte_size == b.byte_size
}

/// Whether a copy state is in sync with its lead state. Last-modified
/// metadata does not participate.
pub fn in_sync(copy: &ResourceState, lead: &ResourceState) -> bool {
    states_equal(&copy.representation, &lead.representation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uri(s: &str) -> ResourceUri {
        ResourceUri::parse(&format!("http://example.org/{s}")).unwrap()
    }

    fn digest(fill: u8) -> Digest {
        Digest([fill; 32])
    }

    #[test]
    fn uri_validation() {
        assert!(ResourceUri::parse("http://sim/res/1").is_ok());
        assert!(ResourceUri::parse("").is_err());
        assert!(ResourceUri::parse("sim/res/1").is_err());
        assert!(ResourceUri::parse("mailto:someone@example.org").is_err());
        let a = ResourceUri::parse("http://example.org/a").unwrap();
        let b = ResourceUri::parse("HTTP://example.org/a").unwrap();
        assert_ne!(a, b, "no normalization beyond parsing");
    }

    #[test]
    fn digest_hex_round_trip() {
        let d = Digest::of(b"hello");
        assert_eq!(d.to_hex(), "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
        assert_eq!(d.to_hex().parse::<Digest>().unwrap(), d);
        assert!("2CF24DBA5FB0A30E26E83B2AC5B9E29E1B161E5C1FA7425E73043362938B9824".parse::<Digest>().is_err());
        assert!("abc".parse::<Digest>().is_err());
    }

    #[test]
    fn states_equal_examples() {
        let ab3 = Representation::from_metadata(digest(0xab), 3);
        let cd3 = Representation::from_metadata(digest(0xcd), 3);
        assert!(states_equal(&ab3, &ab3.clone()));
        assert!(!states_equal(&ab3, &cd3));
        let once = Representation::from_payload(b"hello".to_vec());
        let twice = Representation::from_payload(b"hello".to_vec());
        assert!(states_equal(&once, &twice));
    }

    #[test]
    fn in_sync_ignores_last_modified() {
        let rep = Representation::from_payload(b"payload".to_vec());
        let lead = ResourceState { uri: uri("a"), representation: rep.clone(), last_modified: Timestamp::from_secs(5) };
        let copy =
            ResourceState { uri: uri("a"), representation: rep.without_payload(), last_modified: Timestamp::ZERO };
        assert!(in_sync(&copy, &lead));
        assert!(in_sync(&lead, &copy));

        let bigger =
            ResourceState { representation: Representation::from_metadata(rep.digest(), rep.byte_size() + 1), ..copy };
        assert!(!in_sync(&bigger, &lead));
    }

    #[test]
    fn representation_payload_checked() {
        let rep = Representation::from_payload(b"abc".to_vec());
        assert!(rep.without_payload().with_payload(b"abc".to_vec()).is_ok());
        assert_eq!(rep.without_payload().with_payload(b"abd".to_vec()).unwrap_err(), ModelError::PayloadMismatch);
    }

    #[test]
    fn apply_change_create_and_delete() {
        let mut store = ResourceStore::new(StoreRole::SourceLead);
        let rep = Representation::from_payload(b"p".to_vec());
        store.apply_change(&ChangeEvent::create(uri("u1"), Timestamp::from_secs(3), rep.clone())).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.get(&uri("u1")).unwrap().last_modified, Timestamp::from_secs(3));

        store.apply_change(&ChangeEvent::delete(uri("u1"), Timestamp::from_secs(4))).unwrap();
        assert!(store.is_empty());
    }

    #[test]
    fn apply_change_identical_update_advances_last_modified() {
        let mut store = ResourceStore::new(StoreRole::SourceLead);
        let rep = Representation::from_payload(b"same".to_vec());
        store.apply_change(&ChangeEvent::create(uri("u1"), Timestamp::from_secs(1), rep.clone())).unwrap();
        store.apply_change(&ChangeEvent::update(uri("u1"), Timestamp::from_secs(9), rep.clone())).unwrap();
        let state = store.get(&uri("u1")).unwrap();
        assert_eq!(state.last_modified, Timestamp::from_secs(9));
        assert_eq!(state.representation, rep);
    }

    #[test]
    fn apply_change_preconditions() {
        let mut store = ResourceStore::new(StoreRole::SourceLead);
        let rep = Representation::from_payload(b"x".to_vec());
        let err = store.apply_change(&ChangeEvent::update(uri("u"), Timestamp::ZERO, rep.clone())).unwrap_err();
        assert!(matches!(err, ModelError::ChangePreconditionViolation { change: ChangeType::Update, .. }));
        assert!(store.apply_change(&ChangeEvent::delete(uri("u"), Timestamp::ZERO)).is_err());
        store.apply_change(&ChangeEvent::create(uri("u"), Timestamp::ZERO, rep.clone())).unwrap();
        assert!(store.apply_change(&ChangeEvent::create(uri("u"), Timestamp::ZERO, rep)).is_err());
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn change_event_shape_enforced() {
        let rep = Representation::from_payload(b"x".to_vec());
        assert!(ChangeEvent::new(uri("u"), ChangeType::Delete, Timestamp::ZERO, Some(rep.clone())).is_err());
        assert!(ChangeEvent::new(uri("u"), ChangeType::Update, Timestamp::ZERO, None).is_err());
        assert!(ChangeEvent::new(uri("u"), ChangeType::Update, Timestamp::ZERO, Some(rep)).is_ok());
    }
}
