//! Protocol fixtures shipped with the engine and helpers to lay them out as
//! an on-disk repository for tests, examples and the simulation harness.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use crate::protocol::{load_protocol, resolve_imports, Protocol, ProtocolId, ProtocolSet};

pub const PROCESS_DOCUMENTS_XML: &str =
    include_str!("../fixtures/protocols/is.lill.examples_process-documents_1.0.acr");
pub const REQUEST_RESPONSE_XML: &str =
    include_str!("../fixtures/protocols/is.lill.examples_request-response_1.0.acr");
pub const STATUS_REPORT_XML: &str =
    include_str!("../fixtures/protocols/is.lill.examples_status-report_1.0.acr");
pub const VICKREY_AUCTION_XML: &str =
    include_str!("../fixtures/protocols/is.lill.examples_vickrey-auction_1.0.acr");
pub const FIPA_CONTRACT_NET_XML: &str =
    include_str!("../fixtures/protocols/is.lill.fipa_fipa-contract-net_1.0.acr");
pub const FIPA_ITERATED_CONTRACT_NET_XML: &str =
    include_str!("../fixtures/protocols/is.lill.fipa_fipa-iterated-contract-net_1.0.acr");

/// Recorded five-message document-processing trace (agent1's perspective)
/// and its expected replay records.
pub const PROCESS_DOCUMENTS_TRACE: &str =
    include_str!("../fixtures/golden/process-documents.trace");
pub const PROCESS_DOCUMENTS_RECORDS: &str =
    include_str!("../fixtures/golden/process-documents.records");

/// All shipped fixture definitions as (filename, xml) pairs.
pub const ALL: [(&str, &str); 6] = [
    (
        "is.lill.examples_process-documents_1.0.acr",
        PROCESS_DOCUMENTS_XML,
    ),
    (
        "is.lill.examples_request-response_1.0.acr",
        REQUEST_RESPONSE_XML,
    ),
    ("is.lill.examples_status-report_1.0.acr", STATUS_REPORT_XML),
    (
        "is.lill.examples_vickrey-auction_1.0.acr",
        VICKREY_AUCTION_XML,
    ),
    (
        "is.lill.fipa_fipa-contract-net_1.0.acr",
        FIPA_CONTRACT_NET_XML,
    ),
    (
        "is.lill.fipa_fipa-iterated-contract-net_1.0.acr",
        FIPA_ITERATED_CONTRACT_NET_XML,
    ),
];

/// Parses and import-resolves every fixture protocol.
pub fn fixture_protocols() -> ProtocolSet {
    let mut raw: Vec<Protocol> = ALL
        .iter()
        .map(|(_, xml)| load_protocol(xml).expect("fixture protocols parse"))
        .collect();
    // two passes: import-free protocols first, then the importers
    raw.sort_by_key(|p| p.imports.len());
    let mut set = ProtocolSet::new();
    for p in raw {
        let lookup = |id: &ProtocolId| set.get(id).cloned();
        let resolved = resolve_imports(&p, &lookup).expect("fixture imports resolve");
        set.insert(resolved.id.clone(), Arc::new(resolved));
    }
    set
}

/// Writes the fixture set to `dir` laid out as a protocol repository:
/// `dir/repository.xml` plus `dir/repository/<files>`.
pub fn write_fixture_repository(dir: &Path) -> io::Result<()> {
    let files_dir = dir.join("repository");
    fs::create_dir_all(&files_dir)?;
    let mut descriptor = String::new();
    descriptor.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    descriptor.push_str("<repository xmlns=\"http://acre.lill.is\">\n");
    descriptor.push_str(&format!("  <base>{}</base>\n", dir.display()));
    descriptor.push_str("  <namespaces>\n");
    descriptor.push_str("    <namespace name=\"is.lill.examples\">\n");
    descriptor.push_str("      <protocol name=\"process-documents\" version=\"1.0\"/>\n");
    descriptor.push_str("      <protocol name=\"request-response\" version=\"1.0\"/>\n");
    descriptor.push_str("      <protocol name=\"status-report\" version=\"1.0\"/>\n");
    descriptor.push_str("      <protocol name=\"vickrey-auction\" version=\"1.0\"/>\n");
    descriptor.push_str("    </namespace>\n");
    descriptor.push_str("    <namespace name=\"is.lill.fipa\">\n");
    descriptor.push_str("      <protocol name=\"fipa-contract-net\" version=\"1.0\"/>\n");
    descriptor.push_str("      <protocol name=\"fipa-iterated-contract-net\" version=\"1.0\"/>\n");
    descriptor.push_str("    </namespace>\n");
    descriptor.push_str("  </namespaces>\n");
    descriptor.push_str("</repository>\n");
    fs::write(dir.join("repository.xml"), descriptor)?;
    for (name, xml) in ALL {
        fs::write(files_dir.join(name), xml)?;
    }
    Ok(())
}
