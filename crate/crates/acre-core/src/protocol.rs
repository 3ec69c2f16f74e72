//! Protocol model: identifiers, states, transitions, XML (de)serialization,
//! import resolution, structural validation and DOT rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::acl::Performative;
use crate::term::{parse_term, Bindings, ParseError, Predicate, Term, VarContext};

/// Three-part protocol identifier: namespace, name and version.
///
/// The lexical rules mirror the repository schema: namespaces are
/// dot-separated lowercase components, names are single components, versions
/// are `major.minor` digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProtocolId {
    namespace: String,
    name: String,
    version: String,
}

fn valid_name_component(s: &str) -> bool {
    // [a-z\d]([a-z\d-]*[a-z\d])?
    let bytes = s.as_bytes();
    if bytes.is_empty() {
        return false;
    }
    let inner_ok = |b: u8| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-';
    let edge_ok = |b: u8| b.is_ascii_lowercase() || b.is_ascii_digit();
    edge_ok(bytes[0]) && edge_ok(bytes[bytes.len() - 1]) && bytes.iter().all(|&b| inner_ok(b))
}

pub fn valid_namespace(s: &str) -> bool {
    !s.is_empty() && s.split('.').all(valid_name_component)
}

pub fn valid_name(s: &str) -> bool {
    valid_name_component(s)
}

pub fn valid_version(s: &str) -> bool {
    // \d+\.\d+
    match s.split_once('.') {
        Some((major, minor)) => {
            !major.is_empty()
                && !minor.is_empty()
                && major.bytes().all(|b| b.is_ascii_digit())
                && minor.bytes().all(|b| b.is_ascii_digit())
        }
        None => false,
    }
}

impl ProtocolId {
    pub fn new(
        namespace: impl Into<String>,
        name: impl Into<String>,
        version: impl Into<String>,
    ) -> Result<ProtocolId, ProtocolError> {
        let namespace = namespace.into();
        let name = name.into();
        let version = version.into();
        if !valid_namespace(&namespace) {
            return Err(ProtocolError::InvalidNamespace(namespace));
        }
        if !valid_name(&name) {
            return Err(ProtocolError::InvalidName(name));
        }
        if !valid_version(&version) {
            return Err(ProtocolError::InvalidVersion(version));
        }
        Ok(ProtocolId {
            namespace,
            name,
            version,
        })
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Parses the dotted wire form `namespace.name.version`, e.g.
    /// `is.lill.examples.process-documents.1.0`. The version is the trailing
    /// `major.minor` pair and the name the component before it.
    pub fn parse(s: &str) -> Result<ProtocolId, ProtocolError> {
        let parts: Vec<&str> = s.split('.').collect();
        if parts.len() < 4 {
            return Err(ProtocolError::InvalidProtocolId(s.to_string()));
        }
        let version = format!("{}.{}", parts[parts.len() - 2], parts[parts.len() - 1]);
        let name = parts[parts.len() - 3].to_string();
        let namespace = parts[..parts.len() - 3].join(".");
        ProtocolId::new(namespace, name, version)
            .map_err(|_| ProtocolError::InvalidProtocolId(s.to_string()))
    }
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.namespace, self.name, self.version)
    }
}

/// The content field of a transition: either a lone variable pattern
/// (commonly the anonymous `?` wildcard) or a predicate pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentPattern {
    Variable(Term),
    Predicate(Predicate),
}

impl ContentPattern {
    pub fn any() -> ContentPattern {
        ContentPattern::Variable(Term::anonymous())
    }

    pub fn parse(s: &str) -> Result<ContentPattern, ParseError> {
        let term = parse_term(s)?;
        Ok(match term {
            v @ Term::Variable { .. } => ContentPattern::Variable(v),
            Term::Constant(c) => ContentPattern::Predicate(Predicate::new(c, Vec::new())),
            Term::Function { functor, args } => {
                ContentPattern::Predicate(Predicate::new(functor, args))
            }
        })
    }

    /// Applies bindings. A bound immutable variable pattern collapses to the
    /// predicate form of its value; mutable and unbound patterns are kept.
    pub fn apply(&self, bindings: &Bindings) -> ContentPattern {
        match self {
            ContentPattern::Variable(v) => match v.apply(bindings) {
                ground @ (Term::Constant(_) | Term::Function { .. }) => {
                    ContentPattern::Predicate(Predicate::from_term(&ground).unwrap())
                }
                var => ContentPattern::Variable(var),
            },
            ContentPattern::Predicate(p) => ContentPattern::Predicate(p.apply(bindings)),
        }
    }

    /// Matches against message content. Absent content matches only the
    /// anonymous variable; a named variable matches any present content; a
    /// predicate pattern matches structurally.
    pub fn matches(&self, content: Option<&Predicate>) -> bool {
        match self {
            ContentPattern::Variable(Term::Variable { name: None, .. }) => true,
            ContentPattern::Variable(_) => content.is_some(),
            ContentPattern::Predicate(p) => match content {
                Some(g) => p.matches(g),
                None => false,
            },
        }
    }

    /// Bindings from matching message content, mirroring `matches`.
    pub fn bind(&self, content: Option<&Predicate>) -> Bindings {
        match (self, content) {
            (ContentPattern::Variable(v), Some(g)) => v.bind(&g.to_term()),
            (ContentPattern::Predicate(p), Some(g)) => p.bind(g),
            _ => Bindings::new(),
        }
    }
}

impl fmt::Display for ContentPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContentPattern::Variable(v) => write!(f, "{}", v),
            ContentPattern::Predicate(p) => write!(f, "{}", p),
        }
    }
}

/// An edge of the protocol FSM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub from_state: String,
    pub to_state: String,
    pub performative: Performative,
    pub sender: Term,
    pub receiver: Term,
    pub content: ContentPattern,
    /// Set on transitions incorporated from an imported protocol.
    pub imported: bool,
}

impl Transition {
    fn check_participant(term: &Term, field: &str) -> Result<(), ProtocolError> {
        match term {
            Term::Variable {
                context: VarContext::Mutable,
                ..
            } => Err(ProtocolError::MutableParticipant(field.to_string())),
            Term::Function { .. } => Err(ProtocolError::BadParticipant(field.to_string())),
            _ => Ok(()),
        }
    }
}

/// A protocol definition: identifier, states and transitions. Initial and
/// final states are derived, never declared.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub id: ProtocolId,
    pub description: Option<String>,
    pub states: Vec<String>,
    pub transitions: Vec<Transition>,
    /// Unresolved import references, cleared by `resolve_imports`.
    pub imports: Vec<ProtocolId>,
}

impl Protocol {
    pub fn new(id: ProtocolId) -> Protocol {
        Protocol {
            id,
            description: None,
            states: Vec::new(),
            transitions: Vec::new(),
            imports: Vec::new(),
        }
    }

    /// Semantic equality: states compared as sets, transitions in order,
    /// description ignored.
    pub fn semantically_equal(&self, other: &Protocol) -> bool {
        let a: BTreeSet<&String> = self.states.iter().collect();
        let b: BTreeSet<&String> = other.states.iter().collect();
        self.id == other.id
            && a == b
            && self.imports == other.imports
            && self.transitions.len() == other.transitions.len()
            && self
                .transitions
                .iter()
                .zip(&other.transitions)
                .all(|(x, y)| {
                    x.from_state == y.from_state
                        && x.to_state == y.to_state
                        && x.performative == y.performative
                        && x.sender == y.sender
                        && x.receiver == y.receiver
                        && x.content == y.content
                })
    }

    /// The derived initial state: the unique state with no incoming
    /// transition. Errors when there is none or more than one.
    pub fn initial_state(&self) -> Result<&str, ProtocolError> {
        let incoming: BTreeSet<&str> = self
            .transitions
            .iter()
            .map(|t| t.to_state.as_str())
            .collect();
        let mut candidates = self
            .states
            .iter()
            .filter(|s| !incoming.contains(s.as_str()));
        match (candidates.next(), candidates.next()) {
            (Some(first), None) => Ok(first),
            (None, _) => Err(ProtocolError::NoInitialState(self.id.to_string())),
            (Some(first), Some(second)) => Err(ProtocolError::MultipleInitialStates(
                self.id.to_string(),
                first.clone(),
                second.clone(),
            )),
        }
    }

    /// The derived final states: all states with no outgoing transition.
    pub fn final_states(&self) -> BTreeSet<&str> {
        let outgoing: BTreeSet<&str> = self
            .transitions
            .iter()
            .map(|t| t.from_state.as_str())
            .collect();
        self.states
            .iter()
            .map(String::as_str)
            .filter(|s| !outgoing.contains(s))
            .collect()
    }

    pub fn is_final(&self, state: &str) -> bool {
        self.final_states().contains(state)
    }

    /// Transitions leaving the given state, in definition order.
    pub fn transitions_from<'a>(&'a self, state: &'a str) -> impl Iterator<Item = &'a Transition> {
        self.transitions
            .iter()
            .filter(move |t| t.from_state == state)
    }
}

/// Errors raised by protocol parsing, validation and import resolution.
#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid namespace {0:?}")]
    InvalidNamespace(String),
    #[error("invalid protocol name {0:?}")]
    InvalidName(String),
    #[error("invalid version {0:?} (expected digits.digits)")]
    InvalidVersion(String),
    #[error("cannot parse protocol id {0:?}")]
    InvalidProtocolId(String),
    #[error("malformed xml: {0}")]
    Xml(String),
    #[error("missing element <{0}>")]
    MissingElement(&'static str),
    #[error("missing mandatory attribute {0:?} on <transition>")]
    MissingAttribute(&'static str),
    #[error("duplicate state name {0:?}")]
    DuplicateState(String),
    #[error("unknown performative {0:?}")]
    UnknownPerformative(String),
    #[error("cannot parse {field} pattern: {source}")]
    BadPattern {
        field: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("{0} pattern may not be a mutable-context variable")]
    MutableParticipant(String),
    #[error("{0} pattern must be a constant or variable")]
    BadParticipant(String),
    #[error("protocol {0} has no initial state")]
    NoInitialState(String),
    #[error("protocol {0} has multiple initial states ({1}, {2})")]
    MultipleInitialStates(String, String, String),
    #[error("unresolved import {0}")]
    UnresolvedImport(ProtocolId),
    #[error("import cycle involving {0}")]
    ImportCycle(ProtocolId),
    #[error("state {0:?} collides across import of {1}")]
    ImportStateCollision(String, ProtocolId),
}

fn local_name<'a>(node: &roxmltree::Node<'a, '_>) -> &'a str {
    node.tag_name().name()
}

fn child_text(node: &roxmltree::Node, name: &'static str) -> Option<String> {
    node.children()
        .find(|c| c.is_element() && local_name(c) == name)
        .map(|c| c.text().unwrap_or("").trim().to_string())
}

fn required_child_text(
    node: &roxmltree::Node,
    name: &'static str,
) -> Result<String, ProtocolError> {
    child_text(node, name).ok_or(ProtocolError::MissingElement(name))
}

fn parse_participant(value: &str, field: &'static str) -> Result<Term, ProtocolError> {
    let term = parse_term(value).map_err(|source| ProtocolError::BadPattern { field, source })?;
    Transition::check_participant(&term, field)?;
    Ok(term)
}

/// Parses a protocol definition file. Omitted `sender`, `receiver` and
/// `content` attributes default to the anonymous variable. Import references
/// are recorded for later resolution.
pub fn load_protocol(xml: &str) -> Result<Protocol, ProtocolError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| ProtocolError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if local_name(&root) != "protocol" {
        return Err(ProtocolError::MissingElement("protocol"));
    }

    let namespace = required_child_text(&root, "namespace")?;
    let name = required_child_text(&root, "name")?;
    let version = required_child_text(&root, "version")?;
    let id = ProtocolId::new(namespace, name, version)?;

    let mut protocol = Protocol::new(id);
    protocol.description = child_text(&root, "description").filter(|d| !d.is_empty());

    for import in root
        .children()
        .filter(|c| c.is_element() && local_name(c) == "import")
    {
        let namespace = required_child_text(&import, "namespace")?;
        let name = required_child_text(&import, "name")?;
        let version = required_child_text(&import, "version")?;
        protocol
            .imports
            .push(ProtocolId::new(namespace, name, version)?);
    }

    if let Some(states) = root
        .children()
        .find(|c| c.is_element() && local_name(c) == "states")
    {
        for state in states
            .children()
            .filter(|c| c.is_element() && local_name(c) == "state")
        {
            let name = state
                .attribute("name")
                .ok_or(ProtocolError::MissingAttribute("name"))?
                .to_string();
            if protocol.states.contains(&name) {
                return Err(ProtocolError::DuplicateState(name));
            }
            protocol.states.push(name);
        }
    }

    if let Some(transitions) = root
        .children()
        .find(|c| c.is_element() && local_name(c) == "transitions")
    {
        for node in transitions
            .children()
            .filter(|c| c.is_element() && local_name(c) == "transition")
        {
            let attr = |name: &'static str| -> Result<&str, ProtocolError> {
                node.attribute(name)
                    .ok_or(ProtocolError::MissingAttribute(name))
            };
            let performative: Performative = attr("performative")?.parse().map_err(|_| {
                ProtocolError::UnknownPerformative(attr("performative").unwrap().to_string())
            })?;
            let sender = parse_participant(node.attribute("sender").unwrap_or("?"), "sender")?;
            let receiver =
                parse_participant(node.attribute("receiver").unwrap_or("?"), "receiver")?;
            let content = ContentPattern::parse(node.attribute("content").unwrap_or("?")).map_err(
                |source| ProtocolError::BadPattern {
                    field: "content",
                    source,
                },
            )?;
            protocol.transitions.push(Transition {
                from_state: attr("from-state")?.to_string(),
                to_state: attr("to-state")?.to_string(),
                performative,
                sender,
                receiver,
                content,
                imported: false,
            });
        }
    }

    Ok(protocol)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Serializes a protocol back to XML. Anonymous patterns are written out
/// explicitly so that the output is deterministic.
pub fn save_protocol(p: &Protocol) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<protocol xmlns=\"http://acre.lill.is\">\n");
    out.push_str(&format!(
        "  <namespace>{}</namespace>\n",
        xml_escape(p.id.namespace())
    ));
    out.push_str(&format!("  <name>{}</name>\n", xml_escape(p.id.name())));
    out.push_str(&format!(
        "  <version>{}</version>\n",
        xml_escape(p.id.version())
    ));
    if let Some(desc) = &p.description {
        out.push_str(&format!(
            "  <description>{}</description>\n",
            xml_escape(desc)
        ));
    }
    for import in &p.imports {
        out.push_str("  <import>\n");
        out.push_str(&format!(
            "    <namespace>{}</namespace>\n",
            xml_escape(import.namespace())
        ));
        out.push_str(&format!("    <name>{}</name>\n", xml_escape(import.name())));
        out.push_str(&format!(
            "    <version>{}</version>\n",
            xml_escape(import.version())
        ));
        out.push_str("  </import>\n");
    }
    if p.states.is_empty() {
        out.push_str("  <states/>\n");
    } else {
        out.push_str("  <states>\n");
        for state in &p.states {
            out.push_str(&format!("    <state name=\"{}\"/>\n", xml_escape(state)));
        }
        out.push_str("  </states>\n");
    }
    if p.transitions.is_empty() {
        out.push_str("  <transitions/>\n");
    } else {
        out.push_str("  <transitions>\n");
        for t in &p.transitions {
            out.push_str(&format!(
                "    <transition from-state=\"{}\" to-state=\"{}\" performative=\"{}\" \
                 sender=\"{}\" receiver=\"{}\" content=\"{}\"/>\n",
                xml_escape(&t.from_state),
                xml_escape(&t.to_state),
                t.performative,
                xml_escape(&t.sender.to_string()),
                xml_escape(&t.receiver.to_string()),
                xml_escape(&t.content.to_string()),
            ));
        }
        out.push_str("  </transitions>\n");
    }
    out.push_str("</protocol>\n");
    out
}

/// Flattens imports: the returned protocol owns the union of its own and all
/// (recursively resolved) imported states and transitions. State-name
/// collisions across the import boundary are errors.
pub fn resolve_imports<F>(p: &Protocol, lookup: &F) -> Result<Protocol, ProtocolError>
where
    F: Fn(&ProtocolId) -> Option<Arc<Protocol>>,
{
    let mut in_progress = BTreeSet::new();
    resolve_inner(p, lookup, &mut in_progress)
}

fn resolve_inner<F>(
    p: &Protocol,
    lookup: &F,
    in_progress: &mut BTreeSet<ProtocolId>,
) -> Result<Protocol, ProtocolError>
where
    F: Fn(&ProtocolId) -> Option<Arc<Protocol>>,
{
    if p.imports.is_empty() {
        return Ok(p.clone());
    }
    if !in_progress.insert(p.id.clone()) {
        return Err(ProtocolError::ImportCycle(p.id.clone()));
    }

    let mut states: Vec<String> = Vec::new();
    let mut transitions: Vec<Transition> = Vec::new();
    for import_id in &p.imports {
        if *import_id == p.id || in_progress.contains(import_id) {
            return Err(ProtocolError::ImportCycle(import_id.clone()));
        }
        let imported =
            lookup(import_id).ok_or_else(|| ProtocolError::UnresolvedImport(import_id.clone()))?;
        let imported = resolve_inner(&imported, lookup, in_progress)?;
        for state in &imported.states {
            if states.contains(state) {
                return Err(ProtocolError::ImportStateCollision(
                    state.clone(),
                    import_id.clone(),
                ));
            }
            states.push(state.clone());
        }
        for t in &imported.transitions {
            transitions.push(Transition {
                imported: true,
                ..t.clone()
            });
        }
    }
    for state in &p.states {
        if states.contains(state) {
            return Err(ProtocolError::ImportStateCollision(
                state.clone(),
                p.imports[0].clone(),
            ));
        }
        states.push(state.clone());
    }
    transitions.extend(p.transitions.iter().cloned());

    in_progress.remove(&p.id);
    Ok(Protocol {
        id: p.id.clone(),
        description: p.description.clone(),
        states,
        transitions,
        imports: Vec::new(),
    })
}

/// Outcome of `validate_protocol`.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Conservative unification of two patterns under empty bindings: a variable
/// overlaps with anything, constants must be equal, functions must agree
/// positionally. Used by the nondeterminism check.
fn terms_overlap(a: &Term, b: &Term) -> bool {
    match (a, b) {
        (Term::Variable { .. }, _) | (_, Term::Variable { .. }) => true,
        (Term::Constant(x), Term::Constant(y)) => x == y,
        (
            Term::Function {
                functor: fa,
                args: xa,
            },
            Term::Function {
                functor: fb,
                args: xb,
            },
        ) => {
            fa == fb && xa.len() == xb.len() && xa.iter().zip(xb).all(|(x, y)| terms_overlap(x, y))
        }
        _ => false,
    }
}

fn contents_overlap(a: &ContentPattern, b: &ContentPattern) -> bool {
    match (a, b) {
        (ContentPattern::Variable(_), _) | (_, ContentPattern::Variable(_)) => true,
        (ContentPattern::Predicate(x), ContentPattern::Predicate(y)) => {
            x.symbol == y.symbol
                && x.args.len() == y.args.len()
                && x.args.iter().zip(&y.args).all(|(p, q)| terms_overlap(p, q))
        }
    }
}

/// Structural validation. Errors: ambiguous or missing initial state,
/// dangling transition endpoints, mutable participants. Warnings: potential
/// nondeterminism (overlapping transitions from one state), unreachable
/// states, no final state.
pub fn validate_protocol(p: &Protocol) -> ValidationReport {
    let mut report = ValidationReport::default();

    if !p.imports.is_empty() {
        for import in &p.imports {
            report.errors.push(format!("unresolved import {}", import));
        }
        return report;
    }

    let mut seen = BTreeSet::new();
    for state in &p.states {
        if !seen.insert(state) {
            report
                .errors
                .push(format!("duplicate state name {:?}", state));
        }
    }

    for t in &p.transitions {
        for (endpoint, label) in [(&t.from_state, "from-state"), (&t.to_state, "to-state")] {
            if !p.states.contains(endpoint) {
                report
                    .errors
                    .push(format!("{} {:?} names no declared state", label, endpoint));
            }
        }
        for (term, label) in [(&t.sender, "sender"), (&t.receiver, "receiver")] {
            if matches!(
                term,
                Term::Variable {
                    context: VarContext::Mutable,
                    ..
                }
            ) {
                report.errors.push(format!(
                    "{} of transition {}->{} is a mutable-context variable",
                    label, t.from_state, t.to_state
                ));
            }
        }
    }

    match p.initial_state() {
        Ok(initial) => {
            // reachability from the initial state
            let mut reachable = BTreeSet::from([initial.to_string()]);
            loop {
                let next: Vec<String> = p
                    .transitions
                    .iter()
                    .filter(|t| reachable.contains(&t.from_state))
                    .map(|t| t.to_state.clone())
                    .filter(|s| !reachable.contains(s))
                    .collect();
                if next.is_empty() {
                    break;
                }
                reachable.extend(next);
            }
            for state in &p.states {
                if !reachable.contains(state) {
                    report
                        .warnings
                        .push(format!("state {:?} is unreachable", state));
                }
            }
        }
        Err(ProtocolError::NoInitialState(_)) => {
            report
                .errors
                .push("no initial state: every state has an incoming transition".into());
        }
        Err(ProtocolError::MultipleInitialStates(_, a, b)) => {
            report.errors.push(format!(
                "multiple initial states: {:?} and {:?} both lack incoming transitions",
                a, b
            ));
        }
        Err(e) => report.errors.push(e.to_string()),
    }

    if p.final_states().is_empty() && !p.states.is_empty() {
        report
            .warnings
            .push("no final state: conversations cannot reach a natural conclusion".into());
    }

    for (i, a) in p.transitions.iter().enumerate() {
        for b in p.transitions.iter().skip(i + 1) {
            if a.from_state == b.from_state
                && a.performative == b.performative
                && terms_overlap(&a.sender, &b.sender)
                && terms_overlap(&a.receiver, &b.receiver)
                && contents_overlap(&a.content, &b.content)
            {
                report.warnings.push(format!(
                    "possible nondeterminism from state {:?}: transitions to {:?} and {:?} \
                     can be triggered by one {} message",
                    a.from_state, a.to_state, b.to_state, a.performative
                ));
            }
        }
    }

    report
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Renders the FSM as a Graphviz digraph. The initial state gets an entry
/// arrow from a point-shaped pseudo-node and final states are double
/// circled. When the protocol was assembled from imports, its own (newer)
/// edges are dashed.
pub fn render_dot(p: &Protocol) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "digraph \"{}\" {{\n",
        dot_escape(&p.id.to_string())
    ));
    out.push_str("  rankdir=LR;\n");
    let finals = p.final_states();
    let has_imported = p.transitions.iter().any(|t| t.imported);
    for state in &p.states {
        let shape = if finals.contains(state.as_str()) {
            "doublecircle"
        } else {
            "circle"
        };
        out.push_str(&format!("  \"{}\" [shape={}];\n", dot_escape(state), shape));
    }
    if let Ok(initial) = p.initial_state() {
        out.push_str("  \"__entry\" [shape=point];\n");
        out.push_str(&format!("  \"__entry\" -> \"{}\";\n", dot_escape(initial)));
    }
    for t in &p.transitions {
        let label = format!(
            "{} / {}\u{2192}{} / {}",
            t.performative, t.sender, t.receiver, t.content
        );
        let style = if has_imported && !t.imported {
            ", style=dashed"
        } else {
            ""
        };
        out.push_str(&format!(
            "  \"{}\" -> \"{}\" [label=\"{}\"{}];\n",
            dot_escape(&t.from_state),
            dot_escape(&t.to_state),
            dot_escape(&label),
            style
        ));
    }
    out.push_str("}\n");
    out
}

/// A read-only collection of resolved protocols keyed by identifier.
pub type ProtocolSet = BTreeMap<ProtocolId, Arc<Protocol>>;
