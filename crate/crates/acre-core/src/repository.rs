//! Protocol repositories and the local protocol store.
//!
//! A repository is a base location holding `repository.xml` plus a
//! `repository/` directory of protocol definition files named
//! `namespace_name_version.acr`. The store mirrors that layout on disk and
//! keeps only import-flattened protocols.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::protocol::{
    load_protocol, resolve_imports, save_protocol, valid_name, valid_namespace, valid_version,
    validate_protocol, Protocol, ProtocolError, ProtocolId, ProtocolSet,
};

/// Parsed form of a `repository.xml` descriptor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepositoryDescriptor {
    pub base: String,
    pub entries: Vec<ProtocolId>,
}

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("malformed xml: {0}")]
    Xml(String),
    #[error("missing element <{0}>")]
    MissingElement(&'static str),
    #[error("missing attribute {0:?}")]
    MissingAttribute(&'static str),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("cannot fetch {location}: {reason}")]
    Fetch { location: String, reason: String },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt protocol file {path}: {source}")]
    CorruptProtocol {
        path: PathBuf,
        #[source]
        source: ProtocolError,
    },
    #[error("protocol {0} failed validation: {1}")]
    InvalidProtocol(ProtocolId, String),
    #[error("{0}")]
    Protocol(#[from] ProtocolError),
    #[error("protocol {0} already stored with different content")]
    ConflictingDefinition(ProtocolId),
}

/// Parses a repository descriptor.
pub fn parse_descriptor(xml: &str) -> Result<RepositoryDescriptor, RepoError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| RepoError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "repository" {
        return Err(RepoError::MissingElement("repository"));
    }
    let base = root
        .children()
        .find(|c| c.is_element() && c.tag_name().name() == "base")
        .and_then(|c| c.text())
        .map(str::trim)
        .ok_or(RepoError::MissingElement("base"))?
        .to_string();

    let mut entries = Vec::new();
    if let Some(namespaces) = root
        .children()
        .find(|c| c.is_element() && c.tag_name().name() == "namespaces")
    {
        for ns in namespaces
            .children()
            .filter(|c| c.is_element() && c.tag_name().name() == "namespace")
        {
            let ns_name = ns
                .attribute("name")
                .ok_or(RepoError::MissingAttribute("name"))?;
            if !valid_namespace(ns_name) {
                return Err(RepoError::Schema(format!("bad namespace {:?}", ns_name)));
            }
            for proto in ns
                .children()
                .filter(|c| c.is_element() && c.tag_name().name() == "protocol")
            {
                let name = proto
                    .attribute("name")
                    .ok_or(RepoError::MissingAttribute("name"))?;
                let version = proto
                    .attribute("version")
                    .ok_or(RepoError::MissingAttribute("version"))?;
                if !valid_name(name) {
                    return Err(RepoError::Schema(format!("bad protocol name {:?}", name)));
                }
                if !valid_version(version) {
                    return Err(RepoError::Schema(format!(
                        "bad version {:?} for protocol {:?} (expected digits.digits)",
                        version, name
                    )));
                }
                entries.push(ProtocolId::new(ns_name, name, version)?);
            }
        }
    }
    Ok(RepositoryDescriptor { base, entries })
}

/// Serializes a descriptor, grouping entries by namespace. Extra origin
/// locations are recorded in a comment.
pub fn serialize_descriptor(desc: &RepositoryDescriptor, origins: &[String]) -> String {
    let mut by_ns: BTreeMap<&str, Vec<&ProtocolId>> = BTreeMap::new();
    for id in &desc.entries {
        by_ns.entry(id.namespace()).or_default().push(id);
    }
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    if !origins.is_empty() {
        out.push_str(&format!("<!-- origins: {} -->\n", origins.join(" ")));
    }
    out.push_str("<repository xmlns=\"http://acre.lill.is\">\n");
    out.push_str(&format!("  <base>{}</base>\n", desc.base));
    out.push_str("  <namespaces>\n");
    for (ns, ids) in by_ns {
        out.push_str(&format!("    <namespace name=\"{}\">\n", ns));
        for id in ids {
            out.push_str(&format!(
                "      <protocol name=\"{}\" version=\"{}\"/>\n",
                id.name(),
                id.version()
            ));
        }
        out.push_str("    </namespace>\n");
    }
    out.push_str("  </namespaces>\n");
    out.push_str("</repository>\n");
    out
}

/// The location of a protocol definition within a repository:
/// `base/repository/namespace_name_version.acr`.
pub fn protocol_url(base: &str, id: &ProtocolId) -> String {
    format!(
        "{}/repository/{}",
        base.trim_end_matches('/'),
        protocol_file_name(id)
    )
}

pub fn protocol_file_name(id: &ProtocolId) -> String {
    format!("{}_{}_{}.acr", id.namespace(), id.name(), id.version())
}

/// Fetches raw file contents from a repository location. Implementations
/// exist for the filesystem and (in the CLI) plain HTTP GET.
pub trait Transport {
    fn fetch(&self, location: &str) -> Result<String, RepoError>;
}

/// Reads repository files from the local filesystem.
pub struct FsTransport;

impl Transport for FsTransport {
    fn fetch(&self, location: &str) -> Result<String, RepoError> {
        let path = location.strip_prefix("file://").unwrap_or(location);
        fs::read_to_string(path).map_err(|e| RepoError::Fetch {
            location: location.to_string(),
            reason: e.to_string(),
        })
    }
}

/// Per-protocol outcome of a repository fetch.
#[derive(Debug, Default)]
pub struct FetchReport {
    pub added: Vec<ProtocolId>,
    pub skipped: Vec<ProtocolId>,
    pub errors: Vec<(ProtocolId, String)>,
}

/// Warnings produced while loading a store from disk.
pub type LoadWarnings = Vec<String>;

/// A local, import-flattened mirror of fetched repositories. The on-disk
/// layout is itself a valid repository rooted at `root`.
pub struct ProtocolStore {
    root: PathBuf,
    index: BTreeMap<ProtocolId, Arc<Protocol>>,
    origins: Vec<String>,
}

impl ProtocolStore {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn get(&self, id: &ProtocolId) -> Option<Arc<Protocol>> {
        self.index.get(id).cloned()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ProtocolId> {
        self.index.keys()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// A snapshot of the whole index, cheap to clone and share.
    pub fn protocols(&self) -> ProtocolSet {
        self.index.clone()
    }

    /// Opens the store at `root`, creating an empty one if absent. Protocol
    /// files not listed in `repository.xml` are ignored with a warning; the
    /// descriptor is the source of truth.
    pub fn load(root: impl Into<PathBuf>) -> Result<(ProtocolStore, LoadWarnings), RepoError> {
        let root = root.into();
        let mut warnings = Vec::new();
        let descriptor_path = root.join("repository.xml");
        let mut store = ProtocolStore {
            root: root.clone(),
            index: BTreeMap::new(),
            origins: Vec::new(),
        };
        if !descriptor_path.exists() {
            fs::create_dir_all(root.join("repository")).map_err(|source| RepoError::Io {
                path: root.clone(),
                source,
            })?;
            store.write_descriptor()?;
            return Ok((store, warnings));
        }
        let xml = fs::read_to_string(&descriptor_path).map_err(|source| RepoError::Io {
            path: descriptor_path.clone(),
            source,
        })?;
        store.origins = parse_origins(&xml);
        let descriptor = parse_descriptor(&xml)?;
        for id in &descriptor.entries {
            let path = root.join("repository").join(protocol_file_name(id));
            let xml = fs::read_to_string(&path).map_err(|source| RepoError::Io {
                path: path.clone(),
                source,
            })?;
            let protocol = load_protocol(&xml)
                .map_err(|source| RepoError::CorruptProtocol { path, source })?;
            store.index.insert(id.clone(), Arc::new(protocol));
        }
        // orphan .acr files are not loaded
        let files_dir = root.join("repository");
        if let Ok(dir) = fs::read_dir(&files_dir) {
            let listed: Vec<String> = descriptor.entries.iter().map(protocol_file_name).collect();
            for entry in dir.flatten() {
                let name = entry.file_name().to_string_lossy().to_string();
                if name.ends_with(".acr") && !listed.contains(&name) {
                    warnings.push(format!(
                        "ignoring {} : not listed in repository.xml",
                        files_dir.join(&name).display()
                    ));
                }
            }
        }
        Ok((store, warnings))
    }

    fn write_descriptor(&self) -> Result<(), RepoError> {
        let descriptor = RepositoryDescriptor {
            base: self.root.display().to_string(),
            entries: self.index.keys().cloned().collect(),
        };
        let xml = serialize_descriptor(&descriptor, &self.origins);
        fs::write(self.root.join("repository.xml"), xml).map_err(|source| RepoError::Io {
            path: self.root.join("repository.xml"),
            source,
        })
    }

    fn write_protocol(&self, protocol: &Protocol) -> Result<(), RepoError> {
        let path = self
            .root
            .join("repository")
            .join(protocol_file_name(&protocol.id));
        fs::create_dir_all(path.parent().unwrap()).map_err(|source| RepoError::Io {
            path: path.clone(),
            source,
        })?;
        fs::write(&path, save_protocol(protocol)).map_err(|source| RepoError::Io { path, source })
    }

    /// Fetches every protocol listed by the repository at `source`, resolves
    /// imports against already-stored and co-listed protocols, flattens and
    /// persists them. Protocols already present with identical content are
    /// skipped; same id with different content is an error. Failures are
    /// reported per protocol.
    pub fn fetch_repository(
        &mut self,
        source: &str,
        transport: &dyn Transport,
    ) -> Result<FetchReport, RepoError> {
        let descriptor_xml =
            transport.fetch(&format!("{}/repository.xml", source.trim_end_matches('/')))?;
        let descriptor = parse_descriptor(&descriptor_xml)?;

        let mut report = FetchReport::default();
        // first pass: download all listed definitions
        let mut fetched: BTreeMap<ProtocolId, Protocol> = BTreeMap::new();
        for id in &descriptor.entries {
            match transport
                .fetch(&protocol_url(source, id))
                .and_then(|xml| load_protocol(&xml).map_err(RepoError::from))
            {
                Ok(protocol) => {
                    fetched.insert(id.clone(), protocol);
                }
                Err(e) => report.errors.push((id.clone(), e.to_string())),
            }
        }
        // second pass: resolve imports against the store plus co-listed
        // definitions, import-free ones first
        let mut pending: Vec<Protocol> = fetched.into_values().collect();
        pending.sort_by_key(|p| (p.imports.len(), p.id.clone()));
        for protocol in pending {
            let id = protocol.id.clone();
            let lookup = |want: &ProtocolId| self.index.get(want).cloned();
            let resolved = match resolve_imports(&protocol, &lookup) {
                Ok(r) => r,
                Err(e) => {
                    report.errors.push((id, e.to_string()));
                    continue;
                }
            };
            let validation = validate_protocol(&resolved);
            if !validation.is_ok() {
                report.errors.push((id, validation.errors.join("; ")));
                continue;
            }
            if let Some(existing) = self.index.get(&resolved.id) {
                if existing.semantically_equal(&resolved) {
                    report.skipped.push(resolved.id.clone());
                } else {
                    report.errors.push((
                        resolved.id.clone(),
                        RepoError::ConflictingDefinition(resolved.id.clone()).to_string(),
                    ));
                }
                continue;
            }
            self.write_protocol(&resolved)?;
            self.index.insert(resolved.id.clone(), Arc::new(resolved));
            report.added.push(id);
        }
        if !report.added.is_empty() {
            if !self.origins.contains(&source.to_string()) {
                self.origins.push(source.to_string());
            }
            self.write_descriptor()?;
        }
        Ok(report)
    }
}

fn parse_origins(xml: &str) -> Vec<String> {
    // origins live in a leading comment: <!-- origins: a b c -->
    if let Ok(doc) = roxmltree::Document::parse(xml) {
        for node in doc.root().children() {
            if node.is_comment() {
                if let Some(text) = node.text() {
                    if let Some(rest) = text.trim().strip_prefix("origins:") {
                        return rest.split_whitespace().map(String::from).collect();
                    }
                }
            }
        }
    }
    Vec::new()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    // verbatim example descriptor used for parse tests
    const DESCRIPTOR_XML: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<repository xmlns="http://acre.lill.is"
   xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance"
   xsi:schemaLocation="http://acre.lill.is
    http://acre.lill.is/repository.xsd">
   <base>http://acre.lill.is</base>
   <namespaces>
      <namespace name="is.lill.fipa">
         <protocol name="fipa-request" version="1.0"/>
         <protocol name="fipa-contractnet" version="1.0"/>
         <protocol name="fipa-iterated-contractnet" version="1.0"/>
      </namespace>
      <namespace name="is.lill.acre">
         <protocol name="processdocuments" version="1.0"/>
         <protocol name="english-auction" version="1.0"/>
         <protocol name="vickreyauction" version="1.0"/>
      </namespace>
   </namespaces>
</repository>
"#;

    #[test]
    fn parse_example_descriptor() {
        let desc = parse_descriptor(DESCRIPTOR_XML).unwrap();
        assert_eq!(desc.base, "http://acre.lill.is");
        assert_eq!(desc.entries.len(), 6);
        let namespaces: std::collections::BTreeSet<&str> =
            desc.entries.iter().map(|e| e.namespace()).collect();
        assert_eq!(namespaces, ["is.lill.acre", "is.lill.fipa"].into());
    }

    #[test]
    fn descriptor_without_namespaces_is_empty() {
        let xml = r#"<repository xmlns="http://acre.lill.is"><base>/x</base></repository>"#;
        let desc = parse_descriptor(xml).unwrap();
        assert!(desc.entries.is_empty());
    }

    #[test]
    fn single_component_version_is_schema_error() {
        let xml = r#"<repository xmlns="http://acre.lill.is"><base>/x</base>
            <namespaces><namespace name="is.lill">
            <protocol name="p" version="1"/>
            </namespace></namespaces></repository>"#;
        assert!(matches!(parse_descriptor(xml), Err(RepoError::Schema(_))));
    }

    #[test]
    fn protocol_url_worked_example() {
        let id = ProtocolId::new("is.lill.examples", "process-documents", "1.0").unwrap();
        assert_eq!(
            protocol_url("http://acre.lill.is", &id),
            "http://acre.lill.is/repository/is.lill.examples_process-documents_1.0.acr"
        );
        assert_eq!(
            protocol_url("/repo", &id),
            "/repo/repository/is.lill.examples_process-documents_1.0.acr"
        );
        let hyphens = ProtocolId::new("a-b.c-d", "e-f", "1.0").unwrap();
        assert_eq!(
            protocol_url("/r", &hyphens),
            "/r/repository/a-b.c-d_e-f_1.0.acr"
        );
    }

    #[test]
    fn protocol_url_injective_over_fixture_ids() {
        // id parts never contain underscores, so the filename splits back
        // unambiguously
        let set = fixtures::fixture_protocols();
        let urls: std::collections::BTreeSet<String> = set
            .keys()
            .map(|id| protocol_url("http://acre.lill.is", id))
            .collect();
        assert_eq!(urls.len(), set.len());
    }

    #[test]
    fn fetch_fixture_repository_into_empty_store() {
        let src = tempfile::tempdir().unwrap();
        fixtures::write_fixture_repository(src.path()).unwrap();
        let dst = tempfile::tempdir().unwrap();
        let (mut store, _) = ProtocolStore::load(dst.path().join("store")).unwrap();

        let report = store
            .fetch_repository(src.path().to_str().unwrap(), &FsTransport)
            .unwrap();
        assert_eq!(report.added.len(), 6, "errors: {:?}", report.errors);
        assert!(report.errors.is_empty());

        // stored protocols are import-free and valid
        for id in store.ids() {
            let p = store.get(id).unwrap();
            assert!(p.imports.is_empty());
            assert!(validate_protocol(&p).is_ok());
        }

        // the store itself is a readable repository listing all six
        let descriptor_xml =
            fs::read_to_string(dst.path().join("store").join("repository.xml")).unwrap();
        let descriptor = parse_descriptor(&descriptor_xml).unwrap();
        assert_eq!(descriptor.entries.len(), 6);
        assert!(dst
            .path()
            .join("store/repository/is.lill.examples_process-documents_1.0.acr")
            .exists());

        // the origin is recorded in a descriptor comment
        assert!(descriptor_xml.contains("<!-- origins:"));
        assert!(descriptor_xml.contains(src.path().to_str().unwrap()));

        // refetch is idempotent
        let again = store
            .fetch_repository(src.path().to_str().unwrap(), &FsTransport)
            .unwrap();
        assert!(again.added.is_empty());
        assert_eq!(again.skipped.len(), 6);

        // reload round trip matches the in-memory index
        let (reloaded, warnings) = ProtocolStore::load(dst.path().join("store")).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(
            reloaded.ids().collect::<Vec<_>>(),
            store.ids().collect::<Vec<_>>()
        );
        for id in store.ids() {
            assert!(reloaded
                .get(id)
                .unwrap()
                .semantically_equal(&store.get(id).unwrap()));
        }
    }

    #[test]
    fn unresolved_import_fails_only_that_protocol() {
        let src = tempfile::tempdir().unwrap();
        fixtures::write_fixture_repository(src.path()).unwrap();
        // drop the contract-net definition and its listing
        fs::remove_file(
            src.path()
                .join("repository/is.lill.fipa_fipa-contract-net_1.0.acr"),
        )
        .unwrap();
        let descriptor = fs::read_to_string(src.path().join("repository.xml")).unwrap();
        let descriptor = descriptor.replace(
            "      <protocol name=\"fipa-contract-net\" version=\"1.0\"/>\n",
            "",
        );
        fs::write(src.path().join("repository.xml"), descriptor).unwrap();

        let dst = tempfile::tempdir().unwrap();
        let (mut store, _) = ProtocolStore::load(dst.path()).unwrap();
        let report = store
            .fetch_repository(src.path().to_str().unwrap(), &FsTransport)
            .unwrap();
        assert_eq!(report.added.len(), 4);
        assert_eq!(report.errors.len(), 1);
        assert!(report.errors[0].1.contains("unresolved import"));
    }

    #[test]
    fn conflicting_redefinition_is_error() {
        let src = tempfile::tempdir().unwrap();
        fixtures::write_fixture_repository(src.path()).unwrap();
        let dst = tempfile::tempdir().unwrap();
        let (mut store, _) = ProtocolStore::load(dst.path()).unwrap();
        store
            .fetch_repository(src.path().to_str().unwrap(), &FsTransport)
            .unwrap();

        // alter one definition in the source and refetch
        let path = src
            .path()
            .join("repository/is.lill.examples_request-response_1.0.acr");
        let xml = fs::read_to_string(&path).unwrap();
        fs::write(&path, xml.replace("requested", "asked")).unwrap();
        let report = store
            .fetch_repository(src.path().to_str().unwrap(), &FsTransport)
            .unwrap();
        assert!(report
            .errors
            .iter()
            .any(|(id, e)| id.name() == "request-response" && e.contains("different content")));
    }

    #[test]
    fn orphan_files_warn_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let (mut store, _) = ProtocolStore::load(dir.path()).unwrap();
        let src = tempfile::tempdir().unwrap();
        fixtures::write_fixture_repository(src.path()).unwrap();
        store
            .fetch_repository(src.path().to_str().unwrap(), &FsTransport)
            .unwrap();
        fs::write(
            dir.path().join("repository/stray_file_1.0.acr"),
            "<protocol/>",
        )
        .unwrap();
        let (_, warnings) = ProtocolStore::load(dir.path()).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("stray_file_1.0.acr"));
    }

    #[test]
    fn fresh_store_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let (store, warnings) = ProtocolStore::load(dir.path().join("new-store")).unwrap();
        assert!(store.is_empty());
        assert!(warnings.is_empty());
        assert!(dir.path().join("new-store/repository.xml").exists());
    }
}
