//! The four requests a destination issues against a source, plus two
//! simple source implementations: an in-memory one and one serving a local
//! directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::model::{ChangeEvent, ResourceStore, ResourceUri};
use crate::syncdocs::{
    build_change_list, build_resource_list, member_name_for, parse_change_list, serialize_capability_document,
    serialize_change_list, serialize_resource_list, Capability, CapabilityDocument, ChangeList, DocumentError,
};
use crate::time::Timestamp;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EndpointError {
    #[error("source unavailable: {0}")]
    Unavailable(String),
    #[error("resource not found: {0}")]
    NotFound(ResourceUri),
}

/// Body of a response with its wire size and timing. Simulated sources
/// report when the transfer started and completed; static sources report
/// the same instant for both.
#[derive(Debug, Clone)]
pub struct Response {
    pub body: Arc<[u8]>,
    pub byte_count: u64,
    pub started_at: Timestamp,
    pub completed_at: Timestamp,
    /// Last-modified time of a served representation.
    pub last_modified: Option<Timestamp>,
}

impl Response {
    pub fn immediate(body: impl Into<Arc<[u8]>>, at: Timestamp, last_modified: Option<Timestamp>) -> Self {
        let body = body.into();
        Self { byte_count: body.len() as u64, body, started_at: at, completed_at: at, last_modified }
    }
}

pub trait SourceEndpoint {
    fn get_capabilities(&mut self) -> Result<Response, EndpointError>;
    fn get_resource_list(&mut self) -> Result<Response, EndpointError>;
    /// Change list for the window `(from, now]`.
    fn get_change_list(&mut self, from: Timestamp) -> Result<Response, EndpointError>;
    /// The resource's current representation.
    fn get_representation(&mut self, uri: &ResourceUri) -> Result<Response, EndpointError>;
}

/// Default capability document: every document under `base`.
pub fn standard_capabilities(base: &str) -> CapabilityDocument {
    let loc = |name: &str| ResourceUri::parse(&format!("{base}/{name}")).expect("capability locations are valid URIs");
    CapabilityDocument::new()
        .with(Capability::ResourceList, loc("resourcelist.xml"))
        .with(Capability::ChangeList, loc("changelist.xml"))
        .with(Capability::ResourceDump, loc("resourcedump.zip"))
        .with(Capability::ChangeDump, loc("changedump.zip"))
}

/// A source held in memory. Time only moves when the caller applies
/// changes or sets it.
#[derive(Debug, Clone)]
pub struct MemoryEndpoint {
    store: ResourceStore,
    change_log: Vec<ChangeEvent>,
    capabilities: CapabilityDocument,
    now: Timestamp,
}

impl MemoryEndpoint {
    pub fn new(store: ResourceStore, now: Timestamp) -> Self {
        Self { store, change_log: Vec::new(), capabilities: standard_capabilities("http://source.example"), now }
    }

    pub fn with_capabilities(mut self, capabilities: CapabilityDocument) -> Self {
        self.capabilities = capabilities;
        self
    }

    /// Applies a change to the store, logs it and moves time to its
    /// timestamp.
    pub fn apply(&mut self, change: ChangeEvent) -> Result<(), crate::model::ModelError> {
        self.store.apply_change(&change)?;
        self.now = self.now.max(change.timestamp());
        self.change_log.push(change);
        Ok(())
    }

    pub fn set_now(&mut self, now: Timestamp) {
        self.now = now;
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn store(&self) -> &ResourceStore {
        &self.store
    }

    pub fn change_log(&self) -> &[ChangeEvent] {
        &self.change_log
    }
}

impl SourceEndpoint for MemoryEndpoint {
    fn get_capabilities(&mut self) -> Result<Response, EndpointError> {
        Ok(Response::immediate(serialize_capability_document(&self.capabilities), self.now, None))
    }

    fn get_resource_list(&mut self) -> Result<Response, EndpointError> {
        let rl = build_resource_list(&self.store, self.now);
        Ok(Response::immediate(serialize_resource_list(&rl), self.now, None))
    }

    fn get_change_list(&mut self, from: Timestamp) -> Result<Response, EndpointError> {
        let cl = build_change_list(&self.change_log, from, self.now.max(from))
            .map_err(|e| EndpointError::Unavailable(e.to_string()))?;
        Ok(Response::immediate(serialize_change_list(&cl), self.now, None))
    }

    fn get_representation(&mut self, uri: &ResourceUri) -> Result<Response, EndpointError> {
        let state = self.store.get(uri).ok_or_else(|| EndpointError::NotFound(uri.clone()))?;
        let payload = state
            .representation
            .payload()
            .ok_or_else(|| EndpointError::Unavailable(format!("no payload held for {uri}")))?;
        Ok(Response::immediate(payload.to_vec(), self.now, Some(state.last_modified)))
    }
}

/// Serves a source exported to a directory:
///
/// ```text
/// capabilitylist.xml
/// resourcelist.xml
/// changelist.xml
/// resources/<encoded URI>
/// ```
///
/// Payload file names use the same encoding as dump archive members.
#[derive(Debug, Clone)]
pub struct DirectoryEndpoint {
    root: PathBuf,
    now: Timestamp,
}

impl DirectoryEndpoint {
    pub fn new(root: impl Into<PathBuf>, now: Timestamp) -> Self {
        Self { root: root.into(), now }
    }

    /// Writes the directory layout for `store`, with a change list covering
    /// `(0, now]` of `change_log`.
    pub fn export(
        root: &Path,
        store: &ResourceStore,
        change_log: &[ChangeEvent],
        now: Timestamp,
    ) -> Result<(), ExportError> {
        fs::create_dir_all(root.join("resources"))?;
        fs::write(
            root.join("capabilitylist.xml"),
            serialize_capability_document(&standard_capabilities("http://source.example")),
        )?;
        fs::write(root.join("resourcelist.xml"), serialize_resource_list(&build_resource_list(store, now)))?;
        fs::write(
            root.join("changelist.xml"),
            serialize_change_list(&build_change_list(change_log, Timestamp::ZERO, now)?),
        )?;
        for state in store.iter() {
            let payload =
                state.representation.payload().ok_or_else(|| DocumentError::MissingPayload(state.uri.clone()))?;
            fs::write(root.join(member_name_for(&state.uri)), payload)?;
        }
        Ok(())
    }

    fn read(&self, relative: &str) -> Result<Vec<u8>, std::io::Error> {
        fs::read(self.root.join(relative))
    }

    fn unavailable(e: impl std::fmt::Display) -> EndpointError {
        EndpointError::Unavailable(e.to_string())
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Document(#[from] DocumentError),
}

impl SourceEndpoint for DirectoryEndpoint {
    fn get_capabilities(&mut self) -> Result<Response, EndpointError> {
        let body = self.read("capabilitylist.xml").map_err(Self::unavailable)?;
        Ok(Response::immediate(body, self.now, None))
    }

    fn get_resource_list(&mut self) -> Result<Response, EndpointError> {
        let body = self.read("resourcelist.xml").map_err(Self::unavailable)?;
        Ok(Response::immediate(body, self.now, None))
    }

    fn get_change_list(&mut self, from: Timestamp) -> Result<Response, EndpointError> {
        let body = self.read("changelist.xml").map_err(Self::unavailable)?;
        let full = parse_change_list(&body).map_err(Self::unavailable)?;
        if from < full.from_time() {
            // The window start is no longer covered; hand back what exists
            // and let the destination notice.
            return Ok(Response::immediate(body, self.now, None));
        }
        let until = full.until_time().max(from);
        let entries = full.entries().iter().filter(|e| e.timestamp > from).cloned().collect();
        let window = ChangeList::new(from, until, entries).map_err(Self::unavailable)?;
        Ok(Response::immediate(serialize_change_list(&window), self.now, None))
    }

    fn get_representation(&mut self, uri: &ResourceUri) -> Result<Response, EndpointError> {
        match self.read(&member_name_for(uri)) {
            Ok(body) => Ok(Response::immediate(body, self.now, None)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(EndpointError::NotFound(uri.clone())),
            Err(e) => Err(Self::unavailable(e)),
        }
    }
}
