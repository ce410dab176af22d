//! Sitemap-style XML rendering of synchronization documents.
//!
//! The profile is strict: every element and attribute below is required,
//! nothing else is accepted, and serialization is byte-deterministic.
//!
//! ```text
//! <?xml version="1.0" encoding="UTF-8"?>
//! <urlset xmlns="http://www.sitemaps.org/schemas/sitemap/0.9" xmlns:rs="http://www.openarchives.org/rs/terms/">
//! <rs:md capability="resourcelist" at="1970-01-01T00:00:10.000Z"/>
//! <url><loc>http://sim/res/1</loc><lastmod>1970-01-01T00:00:00.000Z</lastmod><rs:md hash="…" length="17"/></url>
//! </urlset>
//! ```
//!
//! Change lists carry `from`/`until` on the header and `change` on each
//! entry's `rs:md`; the capability document lists `<loc>` plus
//! `rs:md capability="…"` per exposed document.

use std::borrow::Cow;

use quick_xml::escape::{escape, unescape};
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{
    Capability, CapabilityDocument, ChangeList, ChangeListEntry, DocumentError, ResourceList, ResourceListEntry,
};
use crate::model::{ChangeType, Digest, ResourceUri};
use crate::time::Timestamp;

pub const SITEMAP_NAMESPACE: &str = "http://www.sitemaps.org/schemas/sitemap/0.9";
pub const RS_NAMESPACE: &str = "http://www.openarchives.org/rs/terms/";

const XML_DECL: &str = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
const CLOSE_ROOT: &str = "</urlset>\n";

fn open_root(out: &mut String) {
    out.push_str(XML_DECL);
    out.push_str("<urlset xmlns=\"");
    out.push_str(SITEMAP_NAMESPACE);
    out.push_str("\" xmlns:rs=\"");
    out.push_str(RS_NAMESPACE);
    out.push_str("\">\n");
}

fn push_loc(out: &mut String, uri: &ResourceUri) {
    out.push_str("<url><loc>");
    out.push_str(&escape(uri.as_str()));
    out.push_str("</loc>");
}

pub fn serialize_resource_list(rl: &ResourceList) -> Vec<u8> {
    // ~200 bytes per entry keeps large lists to a single allocation.
    let mut out = String::with_capacity(256 + rl.len() * 200);
    open_root(&mut out);
    out.push_str(&format!("<rs:md capability=\"resourcelist\" at=\"{}\"/>\n", rl.snapshot_time().to_wire()));
    for e in rl.entries() {
        push_loc(&mut out, &e.uri);
        out.push_str(&format!(
            "<lastmod>{}</lastmod><rs:md hash=\"{}\" length=\"{}\"/></url>\n",
            e.last_modified.to_wire(),
            e.digest,
            e.byte_size
        ));
    }
    out.push_str(CLOSE_ROOT);
    out.into_bytes()
}

pub fn serialize_change_list(cl: &ChangeList) -> Vec<u8> {
    let mut out = String::with_capacity(256 + cl.len() * 120);
    open_root(&mut out);
    out.push_str(&format!(
        "<rs:md capability=\"changelist\" from=\"{}\" until=\"{}\"/>\n",
        cl.from_time().to_wire(),
        cl.until_time().to_wire()
    ));
    for e in cl.entries() {
        push_loc(&mut out, &e.uri);
        out.push_str(&format!(
            "<lastmod>{}</lastmod><rs:md change=\"{}\"/></url>\n",
            e.timestamp.to_wire(),
            e.change_type
        ));
    }
    out.push_str(CLOSE_ROOT);
    out.into_bytes()
}

pub fn serialize_capability_document(doc: &CapabilityDocument) -> Vec<u8> {
    let mut out = String::new();
    open_root(&mut out);
    out.push_str("<rs:md capability=\"capabilitylist\"/>\n");
    for (capability, location) in doc.iter() {
        push_loc(&mut out, location);
        out.push_str(&format!("<rs:md capability=\"{}\"/></url>\n", capability.token()));
    }
    out.push_str(CLOSE_ROOT);
    out.into_bytes()
}

pub fn parse_resource_list(bytes: &[u8]) -> Result<ResourceList, DocumentError> {
    let mut doc = DocReader::new(bytes)?;
    let [at] = doc.header("resourcelist", ["at"])?;
    let snapshot_time = doc.timestamp(&at)?;
    let mut entries = Vec::new();
    while let Some(uri) = doc.next_url()? {
        let last_modified = doc.lastmod()?;
        let (attrs, pos) = doc.expect_empty("rs:md")?;
        let [hash, length] = doc.attrs(attrs, ["hash", "length"], pos)?;
        let digest: Digest =
            hash.parse().map_err(|e: crate::model::ModelError| DocumentError::malformed(pos, e.to_string()))?;
        let byte_size =
            parse_length(&length).ok_or_else(|| DocumentError::malformed(pos, format!("invalid length {length:?}")))?;
        doc.expect_end("url")?;
        entries.push(ResourceListEntry { uri, last_modified, digest, byte_size });
    }
    doc.finish()?;
    let position = doc.pos();
    if entries.windows(2).any(|w| w[0].uri >= w[1].uri) {
        return Err(DocumentError::malformed(
            position,
            "resource list entries are not in strictly ascending URI order",
        ));
    }
    ResourceList::new(snapshot_time, entries)
}

/// Parses a change list, keeping entries in document order so callers can
/// detect out-of-order feeds with [`ChangeList::is_canonical`].
pub fn parse_change_list(bytes: &[u8]) -> Result<ChangeList, DocumentError> {
    let mut doc = DocReader::new(bytes)?;
    let header_pos = doc.pos();
    let [from, until] = doc.header("changelist", ["from", "until"])?;
    let from_time = doc.timestamp(&from)?;
    let until_time = doc.timestamp(&until)?;
    if from_time > until_time {
        return Err(DocumentError::malformed(header_pos, "change list window has from after until"));
    }
    let mut entries = Vec::new();
    while let Some(uri) = doc.next_url()? {
        let timestamp = doc.lastmod()?;
        let (attrs, pos) = doc.expect_empty("rs:md")?;
        let [change] = doc.attrs(attrs, ["change"], pos)?;
        let change_type: ChangeType = change.parse().map_err(|e: String| DocumentError::malformed(pos, e))?;
        doc.expect_end("url")?;
        entries.push(ChangeListEntry { timestamp, uri, change_type });
    }
    doc.finish()?;
    Ok(ChangeList::new_unsorted(from_time, until_time, entries))
}

pub fn parse_capability_document(bytes: &[u8]) -> Result<CapabilityDocument, DocumentError> {
    let mut doc = DocReader::new(bytes)?;
    let [] = doc.header("capabilitylist", [])?;
    let mut out = CapabilityDocument::new();
    while let Some(uri) = doc.next_url()? {
        let (attrs, pos) = doc.expect_empty("rs:md")?;
        let [token] = doc.attrs(attrs, ["capability"], pos)?;
        let capability = Capability::from_token(&token)
            .ok_or_else(|| DocumentError::malformed(pos, format!("unknown capability {token:?}")))?;
        if out.supports(capability) {
            return Err(DocumentError::malformed(pos, format!("capability {token:?} listed twice")));
        }
        doc.expect_end("url")?;
        out = out.with(capability, uri);
    }
    doc.finish()?;
    Ok(out)
}

fn parse_length(text: &str) -> Option<u64> {
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) || (text.len() > 1 && text.starts_with('0')) {
        return None;
    }
    text.parse().ok()
}

type Attrs = Vec<(String, String)>;

enum Tag {
    Start(String, Attrs),
    Empty(String, Attrs),
    End(String),
    Eof,
}

impl Tag {
    fn describe(&self) -> String {
        match self {
            Tag::Start(n, _) => format!("<{n}>"),
            Tag::Empty(n, _) => format!("<{n}/>"),
            Tag::End(n) => format!("</{n}>"),
            Tag::Eof => "end of document".to_string(),
        }
    }
}

/// Pull reader over the strict profile. Whitespace between elements,
/// comments and the XML declaration are skipped; anything else must match
/// the expected structure.
struct DocReader<'a> {
    reader: Reader<&'a [u8]>,
}

impl<'a> DocReader<'a> {
    fn new(bytes: &'a [u8]) -> Result<Self, DocumentError> {
        let mut doc = Self { reader: Reader::from_reader(bytes) };
        let pos = doc.pos();
        match doc.next_tag()? {
            Tag::Start(name, attrs) if name == "urlset" => {
                let [ns, rs] = doc.attrs(attrs, ["xmlns", "xmlns:rs"], pos)?;
                if ns != SITEMAP_NAMESPACE || rs != RS_NAMESPACE {
                    return Err(DocumentError::malformed(pos, "unexpected namespace on <urlset>"));
                }
                Ok(doc)
            }
            other => Err(DocumentError::malformed(pos, format!("expected <urlset>, found {}", other.describe()))),
        }
    }

    fn pos(&self) -> u64 {
        self.reader.buffer_position()
    }

    fn next_tag(&mut self) -> Result<Tag, DocumentError> {
        loop {
            let pos = self.pos();
            let event = self
                .reader
                .read_event()
                .map_err(|e| DocumentError::malformed(self.reader.error_position(), e.to_string()))?;
            return Ok(match event {
                Event::Decl(_) | Event::Comment(_) => continue,
                Event::Text(t) if t.iter().all(u8::is_ascii_whitespace) => continue,
                Event::Start(e) => Tag::Start(self.name(&e)?, self.collect_attrs(&e)?),
                Event::Empty(e) => Tag::Empty(self.name(&e)?, self.collect_attrs(&e)?),
                Event::End(e) => Tag::End(String::from_utf8_lossy(e.name().as_ref()).into_owned()),
                Event::Eof => Tag::Eof,
                _ => return Err(DocumentError::malformed(pos, "unexpected character data or markup")),
            });
        }
    }

    fn name(&self, e: &BytesStart<'_>) -> Result<String, DocumentError> {
        String::from_utf8(e.name().as_ref().to_vec())
            .map_err(|_| DocumentError::malformed(self.pos(), "element name is not UTF-8"))
    }

    fn collect_attrs(&self, e: &BytesStart<'_>) -> Result<Attrs, DocumentError> {
        let mut out = Vec::new();
        for attr in e.attributes().with_checks(true) {
            let attr = attr.map_err(|err| DocumentError::malformed(self.pos(), err.to_string()))?;
            let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
            let value = attr
                .unescape_value()
                .map_err(|err| DocumentError::malformed(self.pos(), err.to_string()))?
                .into_owned();
            out.push((key, value));
        }
        Ok(out)
    }

    /// Requires exactly the attributes in `names`, in any order.
    fn attrs<const N: usize>(&self, attrs: Attrs, names: [&str; N], pos: u64) -> Result<[String; N], DocumentError> {
        let mut values: [Option<String>; N] = std::array::from_fn(|_| None);
        for (key, value) in attrs {
            match names.iter().position(|n| *n == key) {
                Some(i) => values[i] = Some(value),
                None => return Err(DocumentError::malformed(pos, format!("unexpected attribute {key:?}"))),
            }
        }
        let mut out: [String; N] = std::array::from_fn(|_| String::new());
        for (i, value) in values.into_iter().enumerate() {
            out[i] = value.ok_or_else(|| DocumentError::malformed(pos, format!("missing attribute {:?}", names[i])))?;
        }
        Ok(out)
    }

    fn header<const N: usize>(&mut self, capability: &str, names: [&str; N]) -> Result<[String; N], DocumentError> {
        let (attrs, pos) = self.expect_empty("rs:md")?;
        let Some(found) = attrs.iter().find(|(k, _)| k == "capability").map(|(_, v)| v.clone()) else {
            return Err(DocumentError::malformed(pos, "missing attribute \"capability\""));
        };
        if found != capability {
            return Err(DocumentError::malformed(pos, format!("expected capability {capability:?}, found {found:?}")));
        }
        let rest = attrs.into_iter().filter(|(k, _)| k != "capability").collect();
        self.attrs(rest, names, pos)
    }

    fn expect_empty(&mut self, name: &str) -> Result<(Attrs, u64), DocumentError> {
        let pos = self.pos();
        match self.next_tag()? {
            Tag::Empty(n, attrs) if n == name => Ok((attrs, pos)),
            other => Err(DocumentError::malformed(pos, format!("expected <{name}/>, found {}", other.describe()))),
        }
    }

    fn expect_start(&mut self, name: &str) -> Result<(), DocumentError> {
        let pos = self.pos();
        match self.next_tag()? {
            Tag::Start(n, attrs) if n == name && attrs.is_empty() => Ok(()),
            other => Err(DocumentError::malformed(pos, format!("expected <{name}>, found {}", other.describe()))),
        }
    }

    fn expect_end(&mut self, name: &str) -> Result<(), DocumentError> {
        let pos = self.pos();
        match self.next_tag()? {
            Tag::End(n) if n == name => Ok(()),
            other => Err(DocumentError::malformed(pos, format!("expected </{name}>, found {}", other.describe()))),
        }
    }

    /// Character content up to the closing tag, with entities resolved.
    fn text(&mut self, name: &str) -> Result<String, DocumentError> {
        let mut raw = String::new();
        loop {
            let pos = self.pos();
            let event = self
                .reader
                .read_event()
                .map_err(|e| DocumentError::malformed(self.reader.error_position(), e.to_string()))?;
            match event {
                Event::Text(t) => {
                    let text = t.decode().map_err(|e| DocumentError::malformed(pos, e.to_string()))?;
                    raw.push_str(&text);
                }
                Event::GeneralRef(r) => {
                    let name = r.decode().map_err(|e| DocumentError::malformed(pos, e.to_string()))?;
                    raw.push('&');
                    raw.push_str(&name);
                    raw.push(';');
                }
                Event::End(e) if e.name().as_ref() == name.as_bytes() => break,
                _ => return Err(DocumentError::malformed(pos, format!("expected text content in <{name}>"))),
            }
        }
        let pos = self.pos();
        let text: Cow<'_, str> = unescape(&raw).map_err(|e| DocumentError::malformed(pos, e.to_string()))?;
        Ok(text.into_owned())
    }

    /// Opens the next `<url><loc>…</loc>` or returns `None` at `</urlset>`.
    fn next_url(&mut self) -> Result<Option<ResourceUri>, DocumentError> {
        let pos = self.pos();
        match self.next_tag()? {
            Tag::Start(n, attrs) if n == "url" && attrs.is_empty() => {}
            Tag::End(n) if n == "urlset" => return Ok(None),
            other => {
                return Err(DocumentError::malformed(
                    pos,
                    format!("expected <url> or </urlset>, found {}", other.describe()),
                ))
            }
        }
        self.expect_start("loc")?;
        let pos = self.pos();
        let loc = self.text("loc")?;
        let uri = ResourceUri::parse(&loc).map_err(|e| DocumentError::malformed(pos, e.to_string()))?;
        Ok(Some(uri))
    }

    fn lastmod(&mut self) -> Result<Timestamp, DocumentError> {
        self.expect_start("lastmod")?;
        let text = self.text("lastmod")?;
        self.timestamp(&text)
    }

    fn timestamp(&self, text: &str) -> Result<Timestamp, DocumentError> {
        Timestamp::from_wire(text)
            .ok_or_else(|| DocumentError::malformed(self.pos(), format!("invalid timestamp {text:?}")))
    }

    fn finish(&mut self) -> Result<(), DocumentError> {
        let pos = self.pos();
        match self.next_tag()? {
            Tag::Eof => Ok(()),
            other => {
                Err(DocumentError::malformed(pos, format!("trailing content after </urlset>: {}", other.describe())))
            }
        }
    }
}
