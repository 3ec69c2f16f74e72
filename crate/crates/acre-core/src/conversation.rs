//! Conversations and the predicates that match messages against them.
//!
//! A conversation is a running instance of a protocol between two agents:
//! current state, message history, accumulated bindings and a status. The
//! functions here are pure; the manager owns all mutation.

use std::collections::BTreeSet;
use std::fmt;

use crate::acl::Message;
use crate::protocol::{Protocol, ProtocolId, Transition};
use crate::term::{Bindings, Predicate, Term};

/// Lifecycle status of a conversation. Only `Ready` and `Active`
/// conversations are candidates for advancement; `Completed`, `Failed` and
/// `Cancelled` are terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ConversationStatus {
    Ready,
    Active,
    Completed,
    Failed,
    Stale,
    Cancelling,
    Cancelled,
}

impl ConversationStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            ConversationStatus::Completed
                | ConversationStatus::Failed
                | ConversationStatus::Cancelled
        )
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ConversationStatus::Ready => "ready",
            ConversationStatus::Active => "active",
            ConversationStatus::Completed => "completed",
            ConversationStatus::Failed => "failed",
            ConversationStatus::Stale => "stale",
            ConversationStatus::Cancelling => "cancelling",
            ConversationStatus::Cancelled => "cancelled",
        }
    }
}

impl fmt::Display for ConversationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A running conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub protocol: ProtocolId,
    /// The two participants, initiator side first.
    pub participants: (String, String),
    pub current_state: String,
    pub history: Vec<Message>,
    pub cid: String,
    pub bindings: Bindings,
    pub status: ConversationStatus,
    pub annotations: BTreeSet<Predicate>,
    /// Reply window applied to future outbound messages, in seconds.
    pub timeout_seconds: Option<u64>,
    /// Epoch deadline of the last outbound message carrying a reply-by.
    pub deadline: Option<i64>,
    pub archived: bool,
}

impl Conversation {
    /// The participant that is not `agent`. For a self-conversation this is
    /// the agent itself.
    pub fn other_participant(&self, agent: &str) -> &str {
        if self.participants.0 == agent {
            &self.participants.1
        } else {
            &self.participants.0
        }
    }

    pub fn involves(&self, agent: &str) -> bool {
        self.participants.0 == agent || self.participants.1 == agent
    }
}

/// How `advances` treats the message's protocol field. The candidate rule
/// requires a protocol match when the field is present; `FormalOnly` skips
/// that check entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProtocolIdCheck {
    #[default]
    Informal,
    FormalOnly,
}

/// True when the message can trigger the transition under the given
/// bindings: performatives equal, then sender, receiver and content matched
/// in turn with bindings threaded through each stage.
pub fn triggers(message: &Message, transition: &Transition, bindings: &Bindings) -> bool {
    if message.performative != transition.performative {
        return false;
    }
    let sender_value = Term::constant(message.sender.clone());
    let receiver_value = Term::constant(message.receiver.clone());

    let sender_pattern = transition.sender.apply(bindings);
    if !sender_pattern.matches(&sender_value) {
        return false;
    }
    let after_sender = bindings.combine(&sender_pattern.bind(&sender_value));

    let receiver_pattern = transition.receiver.apply(&after_sender);
    if !receiver_pattern.matches(&receiver_value) {
        return false;
    }
    let after_receiver = after_sender.combine(&receiver_pattern.bind(&receiver_value));

    transition
        .content
        .apply(&after_receiver)
        .matches(message.content.as_ref())
}

/// True when the message could begin a conversation following `protocol`:
/// the protocol field is absent or equal, and some transition out of the
/// initial state is triggered under empty bindings.
pub fn initiates(message: &Message, protocol: &Protocol) -> bool {
    if let Some(pid) = &message.protocol_id {
        if *pid != protocol.id {
            return false;
        }
    }
    let Ok(initial) = protocol.initial_state() else {
        return false;
    };
    protocol
        .transitions_from(initial)
        .any(|t| triggers(message, t, &Bindings::new()))
}

/// Indices of transitions out of the conversation's current state that the
/// message triggers, in definition order. More than one means the protocol
/// is nondeterministic for this message.
pub fn matching_transitions(
    message: &Message,
    conversation: &Conversation,
    protocol: &Protocol,
    check: ProtocolIdCheck,
) -> Vec<usize> {
    debug_assert_eq!(protocol.id, conversation.protocol);
    if let Some(cid) = &message.conversation_id {
        if *cid != conversation.cid {
            return Vec::new();
        }
    }
    if check == ProtocolIdCheck::Informal {
        if let Some(pid) = &message.protocol_id {
            if *pid != conversation.protocol {
                return Vec::new();
            }
        }
    }
    protocol
        .transitions
        .iter()
        .enumerate()
        .filter(|(_, t)| {
            t.from_state == conversation.current_state
                && triggers(message, t, &conversation.bindings)
        })
        .map(|(i, _)| i)
        .collect()
}

/// The transition the message would take, if any; the first in definition
/// order when several match.
pub fn advances<'p>(
    message: &Message,
    conversation: &Conversation,
    protocol: &'p Protocol,
    check: ProtocolIdCheck,
) -> Option<&'p Transition> {
    matching_transitions(message, conversation, protocol, check)
        .first()
        .map(|&i| &protocol.transitions[i])
}

/// Advances the conversation along `transition`, which the caller must have
/// obtained from `advances`. Bindings are rebuilt in three stages (sender,
/// receiver, content) so mutable-context variables can be overridden; the
/// message is appended to the history and the status becomes `Completed`
/// when a final state is reached.
pub fn advance(
    message: &Message,
    conversation: &Conversation,
    protocol: &Protocol,
    transition: &Transition,
) -> Conversation {
    debug_assert!(triggers(message, transition, &conversation.bindings));

    let sender_value = Term::constant(message.sender.clone());
    let receiver_value = Term::constant(message.receiver.clone());

    let after_sender = conversation.bindings.combine(
        &transition
            .sender
            .apply(&conversation.bindings)
            .bind(&sender_value),
    );
    let after_receiver = after_sender.combine(
        &transition
            .receiver
            .apply(&after_sender)
            .bind(&receiver_value),
    );
    let bindings = after_receiver.combine(
        &transition
            .content
            .apply(&after_receiver)
            .bind(message.content.as_ref()),
    );

    let status = if protocol.is_final(&transition.to_state) {
        ConversationStatus::Completed
    } else {
        ConversationStatus::Active
    };

    let mut history = conversation.history.clone();
    history.push(message.clone());

    Conversation {
        protocol: conversation.protocol.clone(),
        participants: conversation.participants.clone(),
        current_state: transition.to_state.clone(),
        history,
        cid: conversation.cid.clone(),
        bindings,
        status,
        annotations: conversation.annotations.clone(),
        timeout_seconds: conversation.timeout_seconds,
        deadline: conversation.deadline,
        archived: conversation.archived,
    }
}

/// Creates a conversation for a message that initiates `protocol`. The
/// conversation starts at the initial state with empty history and bindings;
/// advancement (including of this first message) happens separately.
pub fn new_conversation(
    message: &Message,
    protocol: &Protocol,
    fresh_id: impl FnOnce() -> String,
) -> Conversation {
    let cid = message.conversation_id.clone().unwrap_or_else(fresh_id);
    Conversation {
        protocol: protocol.id.clone(),
        participants: (message.sender.clone(), message.receiver.clone()),
        current_state: protocol
            .initial_state()
            .expect("initiating protocol has an initial state")
            .to_string(),
        history: Vec::new(),
        cid,
        bindings: Bindings::new(),
        status: ConversationStatus::Active,
        annotations: BTreeSet::new(),
        timeout_seconds: None,
        deadline: None,
        archived: false,
    }
}
