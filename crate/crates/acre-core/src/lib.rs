//! Conversation management engine for agent communication.
//!
//! Interaction protocols are deterministic finite state machines whose
//! transitions are labelled with performatives and first-order message
//! patterns. A per-agent conversation manager matches inbound and outbound
//! ACL messages against protocols and running conversations, accumulating
//! variable bindings as conversations advance.
//!
//! Modules:
//! - [`term`]: the content language (terms, predicates, bindings).
//! - [`acl`]: FIPA-ACL messages and the textual trace format.
//! - [`protocol`]: protocol FSMs, XML formats, validation, DOT output.
//! - [`repository`]: repository descriptors and the on-disk protocol store.
//! - [`conversation`]: conversations and the message-matching predicates.
//! - [`manager`]: the per-agent conversation manager and its event stream.
//! - [`groups`]: agent/conversation groups and group monitors.
//! - [`harness`]: deterministic in-memory multi-agent simulation.
//! - [`fixtures`]: protocol fixtures shipped with the engine.

pub mod acl;
pub mod conversation;
pub mod fixtures;
pub mod groups;
pub mod harness;
pub mod manager;
pub mod protocol;
pub mod repository;
pub mod term;

pub use acl::{Direction, Message, Performative};
pub use conversation::{Conversation, ConversationStatus};
pub use manager::{ConversationManager, Event};
pub use protocol::{Protocol, ProtocolId, Transition};
pub use term::{Bindings, Predicate, Term, VarContext};
