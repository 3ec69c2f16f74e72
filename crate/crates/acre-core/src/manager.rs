//! The per-agent conversation manager.
//!
//! Each cycle drains the message queue one message at a time through the
//! phases start → initialise → match → fail → new → update → done,
//! raising events the owning agent consumes afterwards. Cancel meta-protocol
//! traffic is intercepted ahead of the matching pipeline so it cannot be
//! mistaken for messages of the underlying conversation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::acl::{Direction, Message, Performative};
use crate::conversation::{
    advance, initiates, matching_transitions, new_conversation, Conversation, ConversationStatus,
    ProtocolIdCheck,
};
use crate::groups::{GroupError, GroupReasoner, MemberView};
use crate::protocol::{Protocol, ProtocolId, ProtocolSet};
use crate::term::Predicate;

/// Phase of the reasoning cycle. `Done` is left only by resetting to
/// `Start` at the beginning of the next cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManagerPhase {
    Start,
    Initialise,
    Match,
    Fail,
    New,
    Update,
    Done,
}

/// Working memory while one message moves through the phases.
#[derive(Debug, Default)]
struct ManagerMemory {
    current: Option<Message>,
    /// Candidate conversations by cid; provisional new conversations are
    /// carried here and only materialize if chosen in the update phase.
    candidates: Vec<Conversation>,
}

/// Events raised during a cycle, consumed by the owning agent.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Started {
        cid: String,
    },
    Advanced {
        cid: String,
        state: String,
        length: usize,
    },
    Completed {
        cid: String,
    },
    Failed {
        cid: String,
    },
    Unmatched {
        message: Message,
    },
    Ambiguous {
        message: Message,
    },
    CancelRequest {
        cid: String,
    },
    CancelConfirmed {
        cid: String,
    },
    CancelFailed {
        cid: String,
    },
    Timeout {
        cid: String,
    },
    GroupEvent {
        group: String,
        descriptor: String,
    },
    ProtocolAdded {
        id: ProtocolId,
    },
    Warning {
        text: String,
    },
}

impl Event {
    /// Stable tab-separated record rendering, one line per event.
    /// Field order: kind, then kind-specific fields.
    pub fn render_record(&self) -> String {
        fn content_of(m: &Message) -> String {
            m.content
                .as_ref()
                .map(|c| c.to_string())
                .unwrap_or_else(|| "-".to_string())
        }
        match self {
            Event::Started { cid } => format!("started\t{}", cid),
            Event::Advanced { cid, state, length } => {
                format!("advanced\t{}\t{}\t{}", cid, state, length)
            }
            Event::Completed { cid } => format!("completed\t{}", cid),
            Event::Failed { cid } => format!("failed\t{}", cid),
            Event::Unmatched { message } => format!(
                "unmatched\t{}\t{}\t{}",
                message.performative,
                message.sender,
                content_of(message)
            ),
            Event::Ambiguous { message } => format!(
                "ambiguous\t{}\t{}\t{}",
                message.performative,
                message.sender,
                content_of(message)
            ),
            Event::CancelRequest { cid } => format!("cancelRequest\t{}", cid),
            Event::CancelConfirmed { cid } => format!("cancelConfirmed\t{}", cid),
            Event::CancelFailed { cid } => format!("cancelFailed\t{}", cid),
            Event::Timeout { cid } => format!("timeout\t{}", cid),
            Event::GroupEvent { group, descriptor } => {
                format!("groupEvent\t{}\t{}", group, descriptor)
            }
            Event::ProtocolAdded { id } => format!("protocolAdded\t{}", id),
            Event::Warning { text } => format!("warning\t{}", text),
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_record())
    }
}

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error("message does not involve agent {0:?}")]
    NotParticipant(String),
    #[error("unknown protocol {0}")]
    UnknownProtocol(ProtocolId),
    #[error("unknown conversation {0:?}")]
    UnknownConversation(String),
    #[error("conversation {0:?} is archived")]
    Archived(String),
    #[error("conversation {0:?} is not archived")]
    NotArchived(String),
    #[error("conversation {0:?} is terminal ({1})")]
    Terminal(String, ConversationStatus),
    #[error("conversation {0:?} is being cancelled")]
    Cancelling(String),
    #[error("no pending cancel request for conversation {0:?}")]
    NoPendingCancel(String),
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// Injectable time source returning seconds since the Unix epoch.
pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

/// A clock whose value is set externally; used by the harness and tests.
#[derive(Clone)]
pub struct ManualClock {
    now: Arc<AtomicI64>,
}

impl ManualClock {
    pub fn new(start: i64) -> ManualClock {
        ManualClock {
            now: Arc::new(AtomicI64::new(start)),
        }
    }

    pub fn set(&self, now: i64) {
        self.now.store(now, Ordering::SeqCst);
    }

    pub fn get(&self) -> i64 {
        self.now.load(Ordering::SeqCst)
    }

    pub fn as_clock(&self) -> Clock {
        let now = self.now.clone();
        Arc::new(move || now.load(Ordering::SeqCst))
    }
}

fn wall_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0)
    })
}

/// The conversation manager of one agent.
pub struct ConversationManager {
    agent_name: String,
    queue: Mutex<VecDeque<Message>>,
    conversations: BTreeMap<String, Conversation>,
    protocols: ProtocolSet,
    events: Vec<Event>,
    pending_events: Vec<Event>,
    phase: ManagerPhase,
    memory: ManagerMemory,
    clock: Clock,
    id_counter: u64,
    group_counter: u64,
    outbox: Vec<Message>,
    strict_formal: bool,
    pending_cancels: BTreeSet<String>,
    groups: GroupReasoner,
}

impl ConversationManager {
    pub fn new(agent_name: impl Into<String>) -> ConversationManager {
        ConversationManager {
            agent_name: agent_name.into(),
            queue: Mutex::new(VecDeque::new()),
            conversations: BTreeMap::new(),
            protocols: ProtocolSet::new(),
            events: Vec::new(),
            pending_events: Vec::new(),
            phase: ManagerPhase::Start,
            memory: ManagerMemory::default(),
            clock: wall_clock(),
            id_counter: 0,
            group_counter: 0,
            outbox: Vec::new(),
            strict_formal: false,
            pending_cancels: BTreeSet::new(),
            groups: GroupReasoner::new(),
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> ConversationManager {
        self.clock = clock;
        self
    }

    /// Uses the purely formal candidate rule, which does not compare the
    /// message's protocol field against the conversation's.
    pub fn with_strict_formal(mut self, strict: bool) -> ConversationManager {
        self.strict_formal = strict;
        self
    }

    pub fn agent_name(&self) -> &str {
        &self.agent_name
    }

    pub fn phase(&self) -> ManagerPhase {
        self.phase
    }

    pub fn now(&self) -> i64 {
        (self.clock)()
    }

    /// Registers a protocol; a `protocolAdded` event is delivered with the
    /// next cycle's output.
    pub fn add_protocol(&mut self, protocol: Arc<Protocol>) {
        let id = protocol.id.clone();
        if self.protocols.insert(id.clone(), protocol).is_none() {
            self.pending_events.push(Event::ProtocolAdded { id });
        }
    }

    pub fn add_protocols(&mut self, set: &ProtocolSet) {
        for protocol in set.values() {
            self.add_protocol(protocol.clone());
        }
    }

    pub fn known_protocols(&self) -> impl Iterator<Item = &ProtocolId> {
        self.protocols.keys()
    }

    pub fn conversation(&self, cid: &str) -> Option<&Conversation> {
        self.conversations.get(cid)
    }

    fn protocol_of(&self, conversation: &Conversation) -> Arc<Protocol> {
        self.protocols
            .get(&conversation.protocol)
            .expect("conversation protocol is registered")
            .clone()
    }

    fn protocol_check(&self) -> ProtocolIdCheck {
        if self.strict_formal {
            ProtocolIdCheck::FormalOnly
        } else {
            ProtocolIdCheck::Informal
        }
    }

    /// Appends a message to the queue. Messages not involving this agent are
    /// rejected. Callable from other threads.
    pub fn submit(&self, message: Message) -> Result<(), ManagerError> {
        if message.sender != self.agent_name && message.receiver != self.agent_name {
            return Err(ManagerError::NotParticipant(self.agent_name.clone()));
        }
        self.queue.lock().unwrap().push_back(message);
        Ok(())
    }

    /// Messages produced by conversation actions since the last drain,
    /// awaiting delivery to the peers by the embedding transport.
    pub fn take_outbox(&mut self) -> Vec<Message> {
        std::mem::take(&mut self.outbox)
    }

    /// Number of messages waiting in the queue.
    pub fn queue_len(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    /// Replies to an offending message with `not-understood`, echoing its
    /// conversation-id. Never sent automatically; the agent decides.
    pub fn send_not_understood(&mut self, offending: &Message) {
        let mut reply = Message::new(
            Performative::NotUnderstood,
            self.agent_name.clone(),
            offending.sender.clone(),
        );
        reply.conversation_id = offending.conversation_id.clone();
        self.outbox.push(reply);
    }

    /// Fresh conversation identifier: `<agent>-<counter>`, regenerated past
    /// any cid already in use.
    pub fn next_id(&mut self) -> String {
        loop {
            self.id_counter += 1;
            let id = format!("{}-{}", self.agent_name, self.id_counter);
            if !self.conversations.contains_key(&id) {
                return id;
            }
        }
    }

    fn next_group_id(&mut self) -> String {
        self.group_counter += 1;
        format!("{}-g{}", self.agent_name, self.group_counter)
    }

    /// Runs one full reasoning cycle over the queued messages and returns
    /// the events it raised, in order. Events pending from outside the cycle
    /// (protocol additions) are delivered first; group monitors are polled
    /// once at the end.
    pub fn run_cycle(&mut self) -> Vec<Event> {
        if self.phase == ManagerPhase::Done {
            self.phase = ManagerPhase::Start;
        }
        assert_eq!(
            self.phase,
            ManagerPhase::Start,
            "run_cycle is not reentrant"
        );

        // start: clear the event set, then deliver pending external events
        self.events.clear();
        let pending = std::mem::take(&mut self.pending_events);
        self.events.extend(pending);

        loop {
            // initialise: pull one message or finish
            self.phase = ManagerPhase::Initialise;
            let message = self.queue.lock().unwrap().pop_front();
            let Some(message) = message else {
                self.memory = ManagerMemory::default();
                self.phase = ManagerPhase::Done;
                break;
            };

            if self.intercept_cancel_traffic(&message) {
                continue;
            }

            self.memory.current = Some(message.clone());
            self.memory.candidates.clear();

            // match: collect advanceable ready/active conversations
            self.phase = ManagerPhase::Match;
            let check = self.protocol_check();
            let mut nondeterministic = false;
            for conversation in self.conversations.values() {
                if conversation.archived
                    || !matches!(
                        conversation.status,
                        ConversationStatus::Ready | ConversationStatus::Active
                    )
                {
                    continue;
                }
                let protocol = self.protocol_of(conversation);
                let matches = matching_transitions(&message, conversation, &protocol, check);
                if !matches.is_empty() {
                    if matches.len() > 1 {
                        nondeterministic = true;
                    }
                    self.memory.candidates.push(conversation.clone());
                }
            }

            // fail: a message citing an active conversation it cannot
            // advance marks that conversation failed
            self.phase = ManagerPhase::Fail;
            if let Some(cid) = &message.conversation_id {
                let candidate_cids: Vec<&str> = self
                    .memory
                    .candidates
                    .iter()
                    .map(|c| c.cid.as_str())
                    .collect();
                let failed = self
                    .conversations
                    .values()
                    .find(|c| {
                        !c.archived
                            && c.status == ConversationStatus::Active
                            && c.cid == *cid
                            && !candidate_cids.contains(&c.cid.as_str())
                    })
                    .map(|c| c.cid.clone());
                if let Some(cid) = failed {
                    self.conversations.get_mut(&cid).unwrap().status = ConversationStatus::Failed;
                    self.events.push(Event::Failed { cid });
                }
            }

            // new: a message whose cid matches no known conversation may
            // begin a provisional conversation. Without a cid every
            // initiating protocol contributes a candidate (several of them
            // make the message ambiguous); with a cid the first initiating
            // protocol is taken, so ambiguity stays confined to cid-less
            // messages.
            self.phase = ManagerPhase::New;
            let cid_known = message
                .conversation_id
                .as_ref()
                .map(|cid| self.conversations.contains_key(cid))
                .unwrap_or(false);
            if self.memory.candidates.is_empty() && !cid_known {
                let mut fresh: Vec<Conversation> = Vec::new();
                for protocol in self.protocols.values() {
                    if initiates(&message, protocol) {
                        let initial_matches: Vec<usize> = {
                            let probe = new_conversation(&message, protocol, String::new);
                            matching_transitions(&message, &probe, protocol, check)
                        };
                        if initial_matches.len() > 1 {
                            nondeterministic = true;
                        }
                        fresh.push(new_conversation(&message, protocol, String::new));
                    }
                }
                if message.conversation_id.is_some() && fresh.len() > 1 {
                    self.events.push(Event::Warning {
                        text: format!(
                            "message with conversation id {:?} could initiate {} protocols; \
                             using the first",
                            message.conversation_id.as_deref().unwrap(),
                            fresh.len()
                        ),
                    });
                    fresh.truncate(1);
                }
                // generated ids are drawn only for conversations that are
                // actually materialized, in the update phase
                self.memory.candidates.extend(fresh);
            }

            // update: advance a unique candidate, otherwise report
            self.phase = ManagerPhase::Update;
            if nondeterministic {
                self.events.push(Event::Warning {
                    text: format!(
                        "message ({} from {}) triggers multiple transitions; \
                         using protocol definition order",
                        message.performative, message.sender
                    ),
                });
            }
            match self.memory.candidates.len() {
                1 => {
                    let mut chosen = self.memory.candidates.pop().unwrap();
                    if chosen.cid.is_empty() {
                        chosen.cid = self.next_id();
                    }
                    let protocol = self.protocol_of(&chosen);
                    let was_initial = chosen.current_state
                        == protocol
                            .initial_state()
                            .expect("registered protocols are valid");
                    let transition = matching_transitions(&message, &chosen, &protocol, check)
                        .first()
                        .map(|&i| protocol.transitions[i].clone())
                        .expect("candidate still advances");
                    let mut advanced = advance(&message, &chosen, &protocol, &transition);
                    // an inbound reply clears the reply-by deadline
                    if message.receiver == self.agent_name {
                        advanced.deadline = None;
                    }
                    let cid = advanced.cid.clone();
                    let state = advanced.current_state.clone();
                    let length = advanced.history.len();
                    let completed = advanced.status == ConversationStatus::Completed;
                    self.conversations.insert(cid.clone(), advanced);
                    if was_initial {
                        self.events.push(Event::Started { cid: cid.clone() });
                    }
                    self.events.push(Event::Advanced {
                        cid: cid.clone(),
                        state,
                        length,
                    });
                    if completed {
                        self.events.push(Event::Completed { cid });
                    }
                }
                0 => self.events.push(Event::Unmatched { message }),
                _ => self.events.push(Event::Ambiguous { message }),
            }
            self.memory.candidates.clear();
            self.memory.current = None;
        }

        self.poll_groups();
        self.events.clone()
    }

    /// Cancel meta-protocol interception. Returns true when the message was
    /// side-channel traffic that must not reach the matching pipeline.
    fn intercept_cancel_traffic(&mut self, message: &Message) -> bool {
        // our own copies of meta-protocol messages are never queued, so
        // everything seen here is inbound
        let is_cancel_request = message.performative == Performative::Cancel
            && message.reply_with.as_deref() == Some("cancel");
        let is_cancel_ack = message.performative == Performative::Inform
            && message.in_reply_to.as_deref() == Some("cancel");
        let is_cancel_denial = message.performative == Performative::Failure
            && message.in_reply_to.as_deref() == Some("cancel");
        if !is_cancel_request && !is_cancel_ack && !is_cancel_denial {
            return false;
        }
        let Some(cid) = message.conversation_id.clone() else {
            self.events.push(Event::Unmatched {
                message: message.clone(),
            });
            return true;
        };
        match self.conversations.get_mut(&cid) {
            Some(conversation) if is_cancel_request && !conversation.status.is_terminal() => {
                self.pending_cancels.insert(cid.clone());
                self.events.push(Event::CancelRequest { cid });
            }
            Some(conversation)
                if is_cancel_ack && conversation.status == ConversationStatus::Cancelling =>
            {
                conversation.status = ConversationStatus::Cancelled;
                self.events.push(Event::CancelConfirmed { cid });
            }
            Some(conversation)
                if is_cancel_denial && conversation.status == ConversationStatus::Cancelling =>
            {
                conversation.status = ConversationStatus::Active;
                self.events.push(Event::CancelFailed { cid });
            }
            _ => self.events.push(Event::Unmatched {
                message: message.clone(),
            }),
        }
        true
    }

    fn poll_groups(&mut self) {
        let group_ids: Vec<String> = self.groups.conversation_group_ids().cloned().collect();
        for gid in group_ids {
            let members: Vec<MemberView> = self
                .groups
                .conversation_group(&gid)
                .expect("listed group exists")
                .members
                .iter()
                .filter_map(|cid| self.conversations.get(cid))
                .map(|c| MemberView {
                    cid: c.cid.clone(),
                    state: c.current_state.clone(),
                    status: c.status,
                })
                .collect();
            for descriptor in self
                .groups
                .poll(&gid, &members)
                .expect("listed group exists")
            {
                self.events.push(Event::GroupEvent {
                    group: gid.clone(),
                    descriptor,
                });
            }
        }
    }

    /// Creates a conversation in `ready` status at the protocol's initial
    /// state and returns its fresh cid. No message is sent.
    pub fn start_conversation(
        &mut self,
        protocol_id: &ProtocolId,
        other: &str,
    ) -> Result<String, ManagerError> {
        let protocol = self
            .protocols
            .get(protocol_id)
            .cloned()
            .ok_or_else(|| ManagerError::UnknownProtocol(protocol_id.clone()))?;
        let cid = self.next_id();
        let conversation = Conversation {
            protocol: protocol_id.clone(),
            participants: (self.agent_name.clone(), other.to_string()),
            current_state: protocol
                .initial_state()
                .expect("registered protocols are valid")
                .to_string(),
            history: Vec::new(),
            cid: cid.clone(),
            bindings: crate::term::Bindings::new(),
            status: ConversationStatus::Ready,
            annotations: BTreeSet::new(),
            timeout_seconds: None,
            deadline: None,
            archived: false,
        };
        self.conversations.insert(cid.clone(), conversation);
        Ok(cid)
    }

    /// `start_conversation` followed by sending the first message.
    pub fn start_and_send(
        &mut self,
        protocol_id: &ProtocolId,
        other: &str,
        performative: Performative,
        content: Option<Predicate>,
    ) -> Result<String, ManagerError> {
        let cid = self.start_conversation(protocol_id, other)?;
        self.advance_conversation(&cid, performative, content)?;
        Ok(cid)
    }

    /// Constructs and sends the next message of a conversation. The receiver,
    /// conversation-id, protocol and reply-by fields are filled in
    /// automatically; the state change happens in the next cycle when the
    /// message is processed like any other.
    pub fn advance_conversation(
        &mut self,
        cid: &str,
        performative: Performative,
        content: Option<Predicate>,
    ) -> Result<(), ManagerError> {
        let now = self.now();
        let agent = self.agent_name.clone();
        let conversation = self
            .conversations
            .get_mut(cid)
            .ok_or_else(|| ManagerError::UnknownConversation(cid.to_string()))?;
        if conversation.archived {
            return Err(ManagerError::Archived(cid.to_string()));
        }
        if conversation.status.is_terminal() {
            return Err(ManagerError::Terminal(cid.to_string(), conversation.status));
        }
        if conversation.status == ConversationStatus::Cancelling {
            return Err(ManagerError::Cancelling(cid.to_string()));
        }
        let mut message = Message::new(
            performative,
            agent.clone(),
            conversation.other_participant(&agent).to_string(),
        )
        .with_conversation_id(cid.to_string())
        .with_protocol_id(conversation.protocol.clone());
        if let Some(content) = content {
            message = message.with_content(content);
        }
        if let Some(seconds) = conversation.timeout_seconds {
            let deadline = now + seconds as i64;
            message.reply_by = Some(deadline);
            conversation.deadline = Some(deadline);
        }
        self.outbox.push(message.clone());
        self.submit(message).expect("own message involves agent");
        Ok(())
    }

    /// Records a reply window. Messages sent from now on carry
    /// `reply-by = send time + seconds`.
    pub fn set_timeout(&mut self, cid: &str, seconds: u64) -> Result<(), ManagerError> {
        let conversation = self
            .conversations
            .get_mut(cid)
            .ok_or_else(|| ManagerError::UnknownConversation(cid.to_string()))?;
        conversation.timeout_seconds = Some(seconds);
        Ok(())
    }

    /// Marks conversations whose reply deadline has passed as stale,
    /// emitting one timeout event per expiry. The events are delivered with
    /// the next cycle's output.
    pub fn check_timeouts(&mut self, now: i64) -> Vec<Event> {
        let mut fired = Vec::new();
        for conversation in self.conversations.values_mut() {
            if conversation.archived || conversation.status.is_terminal() {
                continue;
            }
            if let Some(deadline) = conversation.deadline {
                if deadline < now {
                    conversation.deadline = None;
                    conversation.status = ConversationStatus::Stale;
                    fired.push(Event::Timeout {
                        cid: conversation.cid.clone(),
                    });
                }
            }
        }
        self.pending_events.extend(fired.clone());
        fired
    }

    /// True when some non-terminal conversation still has a reply deadline
    /// armed.
    pub fn has_pending_deadline(&self) -> bool {
        self.conversations
            .values()
            .any(|c| !c.archived && !c.status.is_terminal() && c.deadline.is_some())
    }

    /// Starts the cancel meta-protocol: status becomes `cancelling` and a
    /// content-free `cancel` message with reply-with "cancel" goes out.
    pub fn cancel(&mut self, cid: &str) -> Result<(), ManagerError> {
        let agent = self.agent_name.clone();
        let conversation = self
            .conversations
            .get_mut(cid)
            .ok_or_else(|| ManagerError::UnknownConversation(cid.to_string()))?;
        if conversation.status.is_terminal() {
            return Err(ManagerError::Terminal(cid.to_string(), conversation.status));
        }
        if conversation.status == ConversationStatus::Cancelling {
            return Err(ManagerError::Cancelling(cid.to_string()));
        }
        conversation.status = ConversationStatus::Cancelling;
        let mut message = Message::new(
            Performative::Cancel,
            agent.clone(),
            conversation.other_participant(&agent).to_string(),
        )
        .with_conversation_id(cid.to_string());
        message.reply_with = Some("cancel".to_string());
        self.outbox.push(message);
        Ok(())
    }

    /// Agrees to a pending cancel request: replies with an `inform` carrying
    /// in-reply-to "cancel" and marks the conversation cancelled locally.
    pub fn confirm_cancel(&mut self, cid: &str) -> Result<(), ManagerError> {
        if !self.pending_cancels.remove(cid) {
            return Err(ManagerError::NoPendingCancel(cid.to_string()));
        }
        let agent = self.agent_name.clone();
        let conversation = self.conversations.get_mut(cid).expect("pending cancel cid");
        conversation.status = ConversationStatus::Cancelled;
        let mut message = Message::new(
            Performative::Inform,
            agent.clone(),
            conversation.other_participant(&agent).to_string(),
        )
        .with_conversation_id(cid.to_string());
        message.in_reply_to = Some("cancel".to_string());
        self.outbox.push(message);
        Ok(())
    }

    /// Refuses a pending cancel request with a `failure` carrying
    /// in-reply-to "cancel"; the conversation keeps its status.
    pub fn deny_cancel(&mut self, cid: &str) -> Result<(), ManagerError> {
        if !self.pending_cancels.remove(cid) {
            return Err(ManagerError::NoPendingCancel(cid.to_string()));
        }
        let agent = self.agent_name.clone();
        let conversation = self.conversations.get_mut(cid).expect("pending cancel cid");
        let mut message = Message::new(
            Performative::Failure,
            agent.clone(),
            conversation.other_participant(&agent).to_string(),
        )
        .with_conversation_id(cid.to_string());
        message.in_reply_to = Some("cancel".to_string());
        self.outbox.push(message);
        Ok(())
    }

    /// Permanently removes a conversation, annotations included.
    pub fn forget(&mut self, cid: &str) -> Result<(), ManagerError> {
        self.conversations
            .remove(cid)
            .map(|_| ())
            .ok_or_else(|| ManagerError::UnknownConversation(cid.to_string()))
    }

    /// Hides a conversation from matching and snapshots, keeping a minimal
    /// archived record.
    pub fn archive(&mut self, cid: &str) -> Result<(), ManagerError> {
        let conversation = self
            .conversations
            .get_mut(cid)
            .ok_or_else(|| ManagerError::UnknownConversation(cid.to_string()))?;
        conversation.archived = true;
        Ok(())
    }

    pub fn recall(&mut self, cid: &str) -> Result<(), ManagerError> {
        let conversation = self
            .conversations
            .get_mut(cid)
            .ok_or_else(|| ManagerError::UnknownConversation(cid.to_string()))?;
        if !conversation.archived {
            return Err(ManagerError::NotArchived(cid.to_string()));
        }
        conversation.archived = false;
        Ok(())
    }

    pub fn annotate(&mut self, cid: &str, annotation: Predicate) -> Result<(), ManagerError> {
        let conversation = self
            .conversations
            .get_mut(cid)
            .ok_or_else(|| ManagerError::UnknownConversation(cid.to_string()))?;
        conversation.annotations.insert(annotation);
        Ok(())
    }

    /// Removes one annotation, or all of them when `annotation` is `None`.
    pub fn deannotate(
        &mut self,
        cid: &str,
        annotation: Option<&Predicate>,
    ) -> Result<(), ManagerError> {
        let conversation = self
            .conversations
            .get_mut(cid)
            .ok_or_else(|| ManagerError::UnknownConversation(cid.to_string()))?;
        match annotation {
            Some(a) => {
                conversation.annotations.remove(a);
            }
            None => conversation.annotations.clear(),
        }
        Ok(())
    }

    // --- group operations -------------------------------------------------

    /// Registers a custom group monitor constructor; call at startup.
    pub fn register_monitor(
        &mut self,
        name: impl Into<String>,
        arity: usize,
        ctor: impl Fn(&[String]) -> Box<dyn crate::groups::GroupMonitor> + Send + Sync + 'static,
    ) {
        self.groups.register_monitor(name, arity, ctor);
    }

    pub fn new_agent_group(
        &mut self,
        id: &str,
        members: impl IntoIterator<Item = String>,
    ) -> Result<(), ManagerError> {
        Ok(self.groups.new_agent_group(id, members)?)
    }

    pub fn add_agents(
        &mut self,
        id: &str,
        names: impl IntoIterator<Item = String>,
    ) -> Result<(), ManagerError> {
        Ok(self.groups.add_agents(id, names)?)
    }

    pub fn remove_agents<'a>(
        &mut self,
        id: &str,
        names: impl IntoIterator<Item = &'a str>,
    ) -> Result<(), ManagerError> {
        Ok(self.groups.remove_agents(id, names)?)
    }

    pub fn disband(&mut self, id: &str) -> Result<(), ManagerError> {
        Ok(self.groups.disband(id)?)
    }

    /// Begins one conversation per member of the agent group, all following
    /// `protocol_id`, collected into a fresh conversation group. With a
    /// performative an identical first message is sent on each.
    pub fn start_group(
        &mut self,
        protocol_id: &ProtocolId,
        agent_group: &str,
        first_message: Option<(Performative, Option<Predicate>)>,
    ) -> Result<String, ManagerError> {
        if !self.protocols.contains_key(protocol_id) {
            return Err(ManagerError::UnknownProtocol(protocol_id.clone()));
        }
        let members: Vec<String> = self
            .groups
            .agent_group(agent_group)?
            .members
            .iter()
            .cloned()
            .collect();
        if members.is_empty() {
            return Err(ManagerError::Group(GroupError::EmptyAgentGroup(
                agent_group.to_string(),
            )));
        }
        let gid = self.next_group_id();
        self.groups.new_conversation_group(&gid)?;
        for member in members {
            let cid = self.start_conversation(protocol_id, &member)?;
            self.groups.add_member(&gid, &cid, protocol_id)?;
            if let Some((performative, content)) = &first_message {
                self.advance_conversation(&cid, *performative, content.clone())?;
            }
        }
        Ok(gid)
    }

    pub fn new_conversation_group(&mut self, id: &str) -> Result<(), ManagerError> {
        Ok(self.groups.new_conversation_group(id)?)
    }

    pub fn add_to_group(&mut self, id: &str, cid: &str) -> Result<(), ManagerError> {
        let protocol = self
            .conversations
            .get(cid)
            .ok_or_else(|| ManagerError::UnknownConversation(cid.to_string()))?
            .protocol
            .clone();
        Ok(self.groups.add_member(id, cid, &protocol)?)
    }

    pub fn remove_from_group(&mut self, id: &str, cid: &str) -> Result<(), ManagerError> {
        Ok(self.groups.remove_member(id, cid)?)
    }

    pub fn group_members(&self, id: &str) -> Result<Vec<String>, ManagerError> {
        Ok(self
            .groups
            .conversation_group(id)?
            .members
            .iter()
            .cloned()
            .collect())
    }

    /// Sends the same message on every member conversation. Members that
    /// cannot take the message surface as unmatched events in the next
    /// cycle; members that cannot even be sent on (terminal, cancelling)
    /// produce warnings.
    pub fn advance_all(
        &mut self,
        id: &str,
        performative: Performative,
        content: Option<Predicate>,
    ) -> Result<(), ManagerError> {
        let members = self.group_members(id)?;
        for cid in members {
            if let Err(e) = self.advance_conversation(&cid, performative, content.clone()) {
                self.pending_events.push(Event::Warning {
                    text: format!("advance_all({}) skipped {}: {}", id, cid, e),
                });
            }
        }
        Ok(())
    }

    pub fn watch(&mut self, id: &str, descriptors: &[&str]) -> Result<(), ManagerError> {
        Ok(self.groups.watch(id, descriptors)?)
    }

    pub fn unwatch(&mut self, id: &str, descriptors: Option<&[&str]>) -> Result<(), ManagerError> {
        Ok(self.groups.unwatch(id, descriptors)?)
    }

    pub fn group_annotate(&mut self, id: &str, annotation: Predicate) -> Result<(), ManagerError> {
        Ok(self.groups.group_annotate(id, annotation)?)
    }

    pub fn group_deannotate(
        &mut self,
        id: &str,
        annotation: Option<&Predicate>,
    ) -> Result<(), ManagerError> {
        Ok(self.groups.group_deannotate(id, annotation)?)
    }

    /// An immutable view of the manager's knowledge: known protocols, one
    /// record per live conversation with its history, and minimal records
    /// for archived conversations.
    pub fn snapshot(&self) -> Snapshot {
        let mut conversations = Vec::new();
        let mut archived = Vec::new();
        for conversation in self.conversations.values() {
            if conversation.archived {
                archived.push(ArchivedRecord {
                    cid: conversation.cid.clone(),
                    protocol: conversation.protocol.clone(),
                    other_participant: conversation.other_participant(&self.agent_name).to_string(),
                });
                continue;
            }
            let history = conversation
                .history
                .iter()
                .enumerate()
                .map(|(i, m)| HistoryRecord {
                    index: i + 1,
                    direction: if m.sender == self.agent_name {
                        Direction::Sent
                    } else {
                        Direction::Received
                    },
                    performative: m.performative,
                    content: m.content.clone(),
                })
                .collect();
            conversations.push(ConversationRecord {
                cid: conversation.cid.clone(),
                status: conversation.status,
                other_participant: conversation.other_participant(&self.agent_name).to_string(),
                protocol: conversation.protocol.clone(),
                state: conversation.current_state.clone(),
                length: conversation.history.len(),
                bindings: conversation.bindings.clone(),
                annotations: conversation.annotations.iter().cloned().collect(),
                history,
            });
        }
        Snapshot {
            agent: self.agent_name.clone(),
            protocols: self.protocols.keys().cloned().collect(),
            conversations,
            archived,
        }
    }
}

/// Errors raised while replaying a recorded trace.
#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Trace(#[from] crate::acl::AclError),
    #[error(transparent)]
    Manager(#[from] ManagerError),
}

/// Replays a recorded message trace through a fresh manager from the named
/// agent's perspective, one cycle per message. The output is the stable
/// record rendering of every event, with a `bindings` record after each
/// advancement.
pub fn replay_trace(
    agent_name: &str,
    protocols: &ProtocolSet,
    trace: &str,
) -> Result<String, ReplayError> {
    replay_trace_full(agent_name, protocols, trace).map(|(records, _)| records)
}

/// `replay_trace` plus the final manager snapshot.
pub fn replay_trace_full(
    agent_name: &str,
    protocols: &ProtocolSet,
    trace: &str,
) -> Result<(String, Snapshot), ReplayError> {
    let entries = crate::acl::parse_trace(trace)?;
    let mut manager = ConversationManager::new(agent_name);
    manager.add_protocols(protocols);
    manager.run_cycle(); // swallow protocolAdded events
    let mut out = String::new();
    for entry in entries {
        manager.submit(entry.message)?;
        let events = manager.run_cycle();
        let mut advanced_cids = Vec::new();
        for event in &events {
            out.push_str(&event.render_record());
            out.push('\n');
            if let Event::Advanced { cid, .. } = event {
                if !advanced_cids.contains(cid) {
                    advanced_cids.push(cid.clone());
                }
            }
        }
        for cid in advanced_cids {
            let conversation = manager.conversation(&cid).expect("advanced cid exists");
            out.push_str(&format!("bindings\t{}\t{}\n", cid, conversation.bindings));
        }
    }
    Ok((out, manager.snapshot()))
}

/// One past message as seen from the snapshotting agent.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub index: usize,
    pub direction: Direction,
    pub performative: Performative,
    pub content: Option<Predicate>,
}

/// Snapshot record of one live conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversationRecord {
    pub cid: String,
    pub status: ConversationStatus,
    pub other_participant: String,
    pub protocol: ProtocolId,
    pub state: String,
    pub length: usize,
    pub bindings: crate::term::Bindings,
    pub annotations: Vec<Predicate>,
    pub history: Vec<HistoryRecord>,
}

/// Minimal record of an archived conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchivedRecord {
    pub cid: String,
    pub protocol: ProtocolId,
    pub other_participant: String,
}

/// Immutable manager state view, safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub agent: String,
    pub protocols: Vec<ProtocolId>,
    pub conversations: Vec<ConversationRecord>,
    pub archived: Vec<ArchivedRecord>,
}

impl Snapshot {
    /// Stable tab-separated rendering, one record per line. Line kinds:
    /// `protocol <id>`, `conversation <cid> <status> <other> <protocol>
    /// <state> <length>`, `bindings <cid> <dump>`, `annotation <cid>
    /// <predicate>`, `message <cid> <index> <direction> <performative>
    /// <content|->`, `archived <cid> <protocol> <other>`.
    pub fn render_records(&self) -> String {
        let mut out = String::new();
        for id in &self.protocols {
            out.push_str(&format!("protocol\t{}\n", id));
        }
        for c in &self.conversations {
            out.push_str(&format!(
                "conversation\t{}\t{}\t{}\t{}\t{}\t{}\n",
                c.cid, c.status, c.other_participant, c.protocol, c.state, c.length
            ));
            out.push_str(&format!("bindings\t{}\t{}\n", c.cid, c.bindings));
            for a in &c.annotations {
                out.push_str(&format!("annotation\t{}\t{}\n", c.cid, a));
            }
            for m in &c.history {
                out.push_str(&format!(
                    "message\t{}\t{}\t{}\t{}\t{}\n",
                    c.cid,
                    m.index,
                    m.direction,
                    m.performative,
                    m.content
                        .as_ref()
                        .map(|p| p.to_string())
                        .unwrap_or_else(|| "-".to_string())
                ));
            }
        }
        for a in &self.archived {
            out.push_str(&format!(
                "archived\t{}\t{}\t{}\n",
                a.cid, a.protocol, a.other_participant
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acl::parse_message;
    use crate::fixtures;
    use crate::term::parse_predicate;

    fn proc_docs_id() -> ProtocolId {
        ProtocolId::new("is.lill.examples", "process-documents", "1.0").unwrap()
    }

    fn request_response_id() -> ProtocolId {
        ProtocolId::new("is.lill.examples", "request-response", "1.0").unwrap()
    }

    fn manager_for(agent: &str) -> ConversationManager {
        let mut m = ConversationManager::new(agent);
        m.add_protocols(&fixtures::fixture_protocols());
        m.run_cycle(); // drain protocolAdded events
        m
    }

    fn msg(line: &str) -> Message {
        parse_message(line).unwrap().remove(0)
    }

    fn worked_example_messages() -> [Message; 5] {
        [
            msg(
                "(inform :sender agent1 :receiver agent2 :content ready :conversation-id c1 \
                 :protocol is.lill.examples.process-documents.1.0)",
            ),
            msg("(request :sender agent2 :receiver agent1 :content process(doc123))"),
            msg(
                "(inform :sender agent1 :receiver agent2 :content processed(doc123) \
                 :conversation-id c1 :protocol is.lill.examples.process-documents.1.0)",
            ),
            msg("(request :sender agent2 :receiver agent1 :content process(doc234))"),
            msg(
                "(refuse :sender agent1 :receiver agent2 :content process(doc234) \
                 :conversation-id c1 :protocol is.lill.examples.process-documents.1.0)",
            ),
        ]
    }

    #[test]
    fn worked_example_cycle_by_cycle() {
        let mut m = manager_for("agent1");
        let messages = worked_example_messages();

        let expected: [(&[&str], &str, &str); 5] = [
            (
                &["started\tc1", "advanced\tc1\twaiting\t1"],
                "waiting",
                "?initiator=agent1,?respondent=agent2",
            ),
            (
                &["advanced\tc1\trequested\t2"],
                "requested",
                "?docid=doc123,?initiator=agent1,?respondent=agent2",
            ),
            (
                &["advanced\tc1\twaiting\t3"],
                "waiting",
                "?docid=doc123,?initiator=agent1,?respondent=agent2",
            ),
            (
                &["advanced\tc1\trequested\t4"],
                "requested",
                "?docid=doc234,?initiator=agent1,?respondent=agent2",
            ),
            (
                &["advanced\tc1\tend\t5", "completed\tc1"],
                "end",
                "?docid=doc234,?initiator=agent1,?respondent=agent2",
            ),
        ];

        for (message, (events, state, bindings)) in messages.into_iter().zip(expected) {
            m.submit(message).unwrap();
            let raised = m.run_cycle();
            let records: Vec<String> = raised.iter().map(Event::render_record).collect();
            assert_eq!(records, events.to_vec());
            let c = m.conversation("c1").unwrap();
            assert_eq!(c.current_state, state);
            assert_eq!(c.bindings.to_string(), bindings);
        }
        assert_eq!(
            m.conversation("c1").unwrap().status,
            ConversationStatus::Completed
        );
    }

    #[test]
    fn empty_queue_cycle_raises_nothing() {
        let mut m = manager_for("agent1");
        assert!(m.run_cycle().is_empty());
        assert_eq!(m.phase(), ManagerPhase::Done);
    }

    #[test]
    fn submit_rejects_unrelated_messages() {
        let m = manager_for("agent1");
        let err = m.submit(msg("(inform :sender x :receiver y :content ready)"));
        assert!(matches!(err, Err(ManagerError::NotParticipant(_))));
    }

    #[test]
    fn fifo_processing_in_one_cycle() {
        let mut m = manager_for("agent1");
        let [m1, m2, ..] = worked_example_messages();
        m.submit(m1).unwrap();
        m.submit(m2).unwrap();
        let events = m.run_cycle();
        let records: Vec<String> = events.iter().map(Event::render_record).collect();
        assert_eq!(
            records,
            vec![
                "started\tc1".to_string(),
                "advanced\tc1\twaiting\t1".to_string(),
                "advanced\tc1\trequested\t2".to_string(),
            ]
        );
    }

    #[test]
    fn unknown_message_is_unmatched() {
        let mut m = manager_for("agent1");
        m.submit(msg(
            "(agree :sender agent9 :receiver agent1 :content nonsense(1))",
        ))
        .unwrap();
        let events = m.run_cycle();
        assert_eq!(events.len(), 1);
        assert!(matches!(events[0], Event::Unmatched { .. }));
    }

    #[test]
    fn known_cid_that_cannot_advance_fails_then_unmatches() {
        let mut m = manager_for("agent1");
        let [m1, ..] = worked_example_messages();
        m.submit(m1).unwrap();
        m.run_cycle();
        // waiting state only accepts request/process(..); send a bogus inform
        m.submit(msg(
            "(inform :sender agent2 :receiver agent1 :content bogus :conversation-id c1)",
        ))
        .unwrap();
        let events = m.run_cycle();
        let kinds: Vec<String> = events.iter().map(Event::render_record).collect();
        assert_eq!(kinds.len(), 2);
        assert_eq!(kinds[0], "failed\tc1");
        assert!(kinds[1].starts_with("unmatched\tinform\tagent2"));
        assert_eq!(
            m.conversation("c1").unwrap().status,
            ConversationStatus::Failed
        );
        // a later message citing the failed cid is unmatched only
        m.submit(msg(
            "(request :sender agent2 :receiver agent1 :content process(doc1) :conversation-id c1)",
        ))
        .unwrap();
        let events = m.run_cycle();
        assert_eq!(events.len(), 1);
        assert!(matches!(events[0], Event::Unmatched { .. }));
        assert_eq!(
            m.conversation("c1").unwrap().status,
            ConversationStatus::Failed
        );
    }

    #[test]
    fn ambiguous_message_touches_nothing() {
        let mut m = manager_for("agent1");
        // two live status-report conversations with the same peer, both in
        // the requested state
        for cid in ["sr-1", "sr-2"] {
            let open = format!(
                "(request :sender agent1 :receiver agent2 :content status(router1) \
                 :conversation-id {} :protocol is.lill.examples.status-report.1.0)",
                cid
            );
            m.submit(msg(&open)).unwrap();
            m.run_cycle();
        }
        // a cid-less refusal matching both conversations
        m.submit(msg(
            "(refuse :sender agent2 :receiver agent1 :content status(router1))",
        ))
        .unwrap();
        let events = m.run_cycle();
        assert_eq!(events.len(), 1, "{:?}", events);
        assert!(matches!(events[0], Event::Ambiguous { .. }));
        assert_eq!(m.conversation("sr-1").unwrap().current_state, "requested");
        assert_eq!(m.conversation("sr-2").unwrap().current_state, "requested");
    }

    #[test]
    fn start_then_advance_flow() {
        let mut m = manager_for("agent1");
        let cid = m.start_conversation(&proc_docs_id(), "manager").unwrap();
        assert_eq!(cid, "agent1-1");
        let c = m.conversation(&cid).unwrap();
        assert_eq!(c.status, ConversationStatus::Ready);
        assert_eq!(c.current_state, "start");
        assert!(c.history.is_empty());

        m.advance_conversation(
            &cid,
            Performative::Inform,
            Some(parse_predicate("ready").unwrap()),
        )
        .unwrap();
        let outbox = m.take_outbox();
        assert_eq!(outbox.len(), 1);
        assert_eq!(outbox[0].conversation_id.as_deref(), Some(cid.as_str()));
        assert_eq!(outbox[0].receiver, "manager");
        assert_eq!(outbox[0].protocol_id, Some(proc_docs_id()));

        let events = m.run_cycle();
        let records: Vec<String> = events.iter().map(Event::render_record).collect();
        assert_eq!(
            records,
            vec![
                format!("started\t{}", cid),
                format!("advanced\t{}\twaiting\t1", cid)
            ]
        );
        assert_eq!(
            m.conversation(&cid).unwrap().status,
            ConversationStatus::Active
        );
    }

    #[test]
    fn start_and_send_shorthand() {
        let mut m = manager_for("agent1");
        let cid = m
            .start_and_send(
                &proc_docs_id(),
                "manager",
                Performative::Inform,
                Some(parse_predicate("ready").unwrap()),
            )
            .unwrap();
        m.run_cycle();
        assert_eq!(m.conversation(&cid).unwrap().current_state, "waiting");
    }

    #[test]
    fn first_message_not_matching_initial_leaves_ready() {
        let mut m = manager_for("agent1");
        let cid = m.start_conversation(&proc_docs_id(), "manager").unwrap();
        // refuse does not match the initial inform/ready transition
        m.advance_conversation(&cid, Performative::Refuse, None)
            .unwrap();
        let events = m.run_cycle();
        assert!(events.iter().any(|e| matches!(e, Event::Unmatched { .. })));
        assert_eq!(
            m.conversation(&cid).unwrap().status,
            ConversationStatus::Ready
        );
    }

    #[test]
    fn distinct_ids_and_collision_avoidance() {
        let mut m = manager_for("a");
        assert_eq!(m.next_id(), "a-1");
        assert_eq!(m.next_id(), "a-2");
        // occupy a-3 with an inbound cid, next_id must skip it
        m.submit(msg(
            "(request :sender b :receiver a :content x :conversation-id a-3 \
             :protocol is.lill.examples.request-response.1.0)",
        ))
        .unwrap();
        m.run_cycle();
        assert!(m.conversation("a-3").is_some());
        assert_eq!(m.next_id(), "a-4");
    }

    #[test]
    fn advance_on_completed_conversation_errors() {
        let mut m = manager_for("agent1");
        let messages = worked_example_messages();
        for message in messages {
            m.submit(message).unwrap();
            m.run_cycle();
        }
        let err = m.advance_conversation("c1", Performative::Inform, None);
        assert!(matches!(err, Err(ManagerError::Terminal(_, _))));
    }

    #[test]
    fn timeout_marks_stale_once() {
        let clock = ManualClock::new(100);
        let mut m = ConversationManager::new("agent1").with_clock(clock.as_clock());
        m.add_protocols(&fixtures::fixture_protocols());
        m.run_cycle();
        let cid = m
            .start_conversation(&request_response_id(), "agent2")
            .unwrap();
        m.set_timeout(&cid, 10).unwrap();
        m.advance_conversation(&cid, Performative::Request, None)
            .unwrap();
        let sent = m.take_outbox();
        assert_eq!(sent[0].reply_by, Some(110));
        m.run_cycle();

        assert!(m.check_timeouts(105).is_empty());
        assert!(m.check_timeouts(110).is_empty()); // deadline not yet passed
        let fired = m.check_timeouts(111);
        assert_eq!(fired, vec![Event::Timeout { cid: cid.clone() }]);
        assert_eq!(
            m.conversation(&cid).unwrap().status,
            ConversationStatus::Stale
        );
        // only once per expiry
        assert!(m.check_timeouts(120).is_empty());
        // the pending event is delivered with the next cycle
        let events = m.run_cycle();
        assert_eq!(events, vec![Event::Timeout { cid }]);
    }

    #[test]
    fn reply_before_deadline_clears_it() {
        let clock = ManualClock::new(100);
        let mut m = ConversationManager::new("agent1").with_clock(clock.as_clock());
        m.add_protocols(&fixtures::fixture_protocols());
        m.run_cycle();
        let cid = m
            .start_conversation(&request_response_id(), "agent2")
            .unwrap();
        m.set_timeout(&cid, 10).unwrap();
        m.advance_conversation(&cid, Performative::Request, None)
            .unwrap();
        m.run_cycle();
        // the reply arrives in time
        m.submit(msg(&format!(
            "(inform :sender agent2 :receiver agent1 :conversation-id {})",
            cid
        )))
        .unwrap();
        m.run_cycle();
        assert!(m.check_timeouts(200).is_empty());
        assert_eq!(
            m.conversation(&cid).unwrap().status,
            ConversationStatus::Completed
        );
    }

    #[test]
    fn cancel_request_and_confirm_between_managers() {
        let mut a = manager_for("agent1");
        let mut b = manager_for("agent2");
        let cid = a
            .start_and_send(
                &request_response_id(),
                "agent2",
                Performative::Request,
                None,
            )
            .unwrap();
        for message in a.take_outbox() {
            b.submit(message).unwrap();
        }
        a.run_cycle();
        b.run_cycle();

        a.cancel(&cid).unwrap();
        assert_eq!(
            a.conversation(&cid).unwrap().status,
            ConversationStatus::Cancelling
        );
        let cancel_msgs = a.take_outbox();
        assert_eq!(cancel_msgs.len(), 1);
        assert_eq!(cancel_msgs[0].performative, Performative::Cancel);
        assert_eq!(cancel_msgs[0].reply_with.as_deref(), Some("cancel"));
        assert_eq!(cancel_msgs[0].content, None);

        b.submit(cancel_msgs.into_iter().next().unwrap()).unwrap();
        let events = b.run_cycle();
        assert_eq!(events, vec![Event::CancelRequest { cid: cid.clone() }]);

        b.confirm_cancel(&cid).unwrap();
        assert_eq!(
            b.conversation(&cid).unwrap().status,
            ConversationStatus::Cancelled
        );
        let acks = b.take_outbox();
        assert_eq!(acks[0].performative, Performative::Inform);
        assert_eq!(acks[0].in_reply_to.as_deref(), Some("cancel"));
        assert_eq!(acks[0].content, None);

        a.submit(acks.into_iter().next().unwrap()).unwrap();
        let events = a.run_cycle();
        assert_eq!(events, vec![Event::CancelConfirmed { cid: cid.clone() }]);
        assert_eq!(
            a.conversation(&cid).unwrap().status,
            ConversationStatus::Cancelled
        );
    }

    #[test]
    fn cancel_denied_restores_active() {
        let mut a = manager_for("agent1");
        let mut b = manager_for("agent2");
        let cid = a
            .start_and_send(
                &request_response_id(),
                "agent2",
                Performative::Request,
                None,
            )
            .unwrap();
        for message in a.take_outbox() {
            b.submit(message).unwrap();
        }
        a.run_cycle();
        b.run_cycle();

        a.cancel(&cid).unwrap();
        for message in a.take_outbox() {
            b.submit(message).unwrap();
        }
        b.run_cycle();
        b.deny_cancel(&cid).unwrap();
        let denials = b.take_outbox();
        assert_eq!(denials[0].performative, Performative::Failure);
        assert_eq!(denials[0].in_reply_to.as_deref(), Some("cancel"));

        a.submit(denials.into_iter().next().unwrap()).unwrap();
        let events = a.run_cycle();
        assert_eq!(events, vec![Event::CancelFailed { cid: cid.clone() }]);
        assert_eq!(
            a.conversation(&cid).unwrap().status,
            ConversationStatus::Active
        );
    }

    #[test]
    fn cancel_errors() {
        let mut m = manager_for("agent1");
        assert!(matches!(
            m.cancel("nope"),
            Err(ManagerError::UnknownConversation(_))
        ));
        assert!(matches!(
            m.confirm_cancel("nope"),
            Err(ManagerError::NoPendingCancel(_))
        ));
        let messages = worked_example_messages();
        for message in messages {
            m.submit(message).unwrap();
            m.run_cycle();
        }
        assert!(matches!(m.cancel("c1"), Err(ManagerError::Terminal(_, _))));
    }

    #[test]
    fn annotate_archive_recall_forget() {
        let mut m = manager_for("agent1");
        let cid = m.start_conversation(&proc_docs_id(), "peer").unwrap();
        let note = parse_predicate("processed(0)").unwrap();
        m.annotate(&cid, note.clone()).unwrap();
        assert!(m.conversation(&cid).unwrap().annotations.contains(&note));
        m.deannotate(&cid, Some(&note)).unwrap();
        assert!(m.conversation(&cid).unwrap().annotations.is_empty());

        m.annotate(&cid, note.clone()).unwrap();
        m.archive(&cid).unwrap();
        let snap = m.snapshot();
        assert!(snap.conversations.is_empty());
        assert_eq!(snap.archived.len(), 1);
        assert_eq!(snap.archived[0].other_participant, "peer");

        m.recall(&cid).unwrap();
        assert!(m.conversation(&cid).unwrap().annotations.contains(&note));
        assert!(matches!(m.recall(&cid), Err(ManagerError::NotArchived(_))));

        m.forget(&cid).unwrap();
        assert!(matches!(
            m.recall(&cid),
            Err(ManagerError::UnknownConversation(_))
        ));
    }

    #[test]
    fn archived_conversations_do_not_match() {
        let mut m = manager_for("agent1");
        let [m1, ..] = worked_example_messages();
        m.submit(m1).unwrap();
        m.run_cycle();
        m.archive("c1").unwrap();
        // a message citing the archived cid is unmatched: no advancement, no
        // failure marking, no new conversation under that cid
        m.submit(msg(
            "(request :sender agent2 :receiver agent1 :content process(doc123) \
             :conversation-id c1)",
        ))
        .unwrap();
        let events = m.run_cycle();
        assert_eq!(events.len(), 1);
        assert!(matches!(events[0], Event::Unmatched { .. }));
        let c = m.conversation("c1").unwrap();
        assert!(c.archived);
        assert_eq!(c.current_state, "waiting");
        assert_eq!(c.status, ConversationStatus::Active);
    }

    #[test]
    fn snapshot_after_worked_example() {
        let mut m = manager_for("agent1");
        for message in worked_example_messages() {
            m.submit(message).unwrap();
            m.run_cycle();
        }
        let snap = m.snapshot();
        assert_eq!(snap.protocols.len(), 6);
        assert_eq!(snap.conversations.len(), 1);
        let c = &snap.conversations[0];
        assert_eq!(c.status, ConversationStatus::Completed);
        assert_eq!(c.state, "end");
        assert_eq!(c.length, 5);
        assert_eq!(c.history[1].index, 2);
        assert_eq!(c.history[1].direction, Direction::Received);
        assert_eq!(c.history[1].performative, Performative::Request);
        assert_eq!(
            c.history[1].content,
            Some(parse_predicate("process(doc123)").unwrap())
        );
        let records = snap.render_records();
        assert!(records.contains(
            "conversation\tc1\tcompleted\tagent2\tis.lill.examples.process-documents.1.0\tend\t5"
        ));
        assert!(records.contains("message\tc1\t2\treceived\trequest\tprocess(doc123)"));
    }

    #[test]
    fn empty_manager_snapshot_lists_protocols_only() {
        let m = manager_for("agent1");
        let snap = m.snapshot();
        assert_eq!(snap.protocols.len(), 6);
        assert!(snap.conversations.is_empty());
        assert!(snap.archived.is_empty());
    }

    #[test]
    fn protocol_added_events_delivered_next_cycle() {
        let mut m = ConversationManager::new("agent1");
        m.add_protocols(&fixtures::fixture_protocols());
        let events = m.run_cycle();
        assert_eq!(events.len(), 6);
        assert!(events
            .iter()
            .all(|e| matches!(e, Event::ProtocolAdded { .. })));
        // re-adding is silent
        m.add_protocols(&fixtures::fixture_protocols());
        assert!(m.run_cycle().is_empty());
    }

    #[test]
    fn replaying_a_trace_is_deterministic() {
        let run = || {
            let mut m = manager_for("agent1");
            let mut all = Vec::new();
            for message in worked_example_messages() {
                m.submit(message).unwrap();
                all.extend(m.run_cycle());
            }
            (
                all.iter().map(Event::render_record).collect::<Vec<_>>(),
                m.snapshot().render_records(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn not_understood_is_explicit_and_echoes_cid() {
        let mut m = manager_for("agent1");
        let offending =
            msg("(agree :sender agent9 :receiver agent1 :content blob(1) :conversation-id weird)");
        m.submit(offending.clone()).unwrap();
        let events = m.run_cycle();
        // never sent automatically
        assert!(m.take_outbox().is_empty());
        assert!(matches!(events[0], Event::Unmatched { .. }));

        m.send_not_understood(&offending);
        let out = m.take_outbox();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].performative, Performative::NotUnderstood);
        assert_eq!(out[0].receiver, "agent9");
        assert_eq!(out[0].conversation_id.as_deref(), Some("weird"));
    }

    #[test]
    fn submit_is_thread_safe() {
        use std::sync::Arc;
        let manager = Arc::new(manager_for("agent1"));
        let mut handles = Vec::new();
        for i in 0..4 {
            let manager = manager.clone();
            handles.push(std::thread::spawn(move || {
                for j in 0..25 {
                    manager
                        .submit(
                            Message::new(Performative::Agree, "peer", "agent1")
                                .with_conversation_id(format!("t{}-{}", i, j)),
                        )
                        .unwrap();
                }
            }));
        }
        for handle in handles {
            handle.join().unwrap();
        }
        let mut manager = Arc::into_inner(manager).unwrap();
        assert_eq!(manager.queue_len(), 100);
        let events = manager.run_cycle();
        assert_eq!(events.len(), 100);
    }

    #[test]
    fn group_start_and_advance_all() {
        let mut m = manager_for("auctioneer");
        m.new_agent_group("bidders", ["b1".into(), "b2".into(), "b3".into()])
            .unwrap();
        let vickrey = ProtocolId::new("is.lill.examples", "vickrey-auction", "1.0").unwrap();
        let gid = m
            .start_group(
                &vickrey,
                "bidders",
                Some((
                    Performative::Cfp,
                    Some(parse_predicate("item(lamp)").unwrap()),
                )),
            )
            .unwrap();
        let members = m.group_members(&gid).unwrap();
        assert_eq!(members.len(), 3);
        let outbox = m.take_outbox();
        assert_eq!(outbox.len(), 3);
        // identical first messages apart from receiver/cid
        assert!(outbox
            .iter()
            .all(|msg| msg.performative == Performative::Cfp
                && msg.content == Some(parse_predicate("item(lamp)").unwrap())));
        let events = m.run_cycle();
        let advanced = events
            .iter()
            .filter(|e| matches!(e, Event::Advanced { .. }))
            .count();
        assert_eq!(advanced, 3);

        // all three now sit in invited; group poll sees them
        m.watch(&gid, &["AllInState(invited)"]).unwrap();
        let events = m.run_cycle();
        assert!(events.iter().any(|e| matches!(
            e,
            Event::GroupEvent { group, descriptor }
                if group == &gid && descriptor == "AllInState(invited)"
        )));
    }

    #[test]
    fn start_group_without_message_leaves_ready() {
        let mut m = manager_for("auctioneer");
        m.new_agent_group("bidders", ["b1".into(), "b2".into(), "b3".into()])
            .unwrap();
        let vickrey = ProtocolId::new("is.lill.examples", "vickrey-auction", "1.0").unwrap();
        let gid = m.start_group(&vickrey, "bidders", None).unwrap();
        for cid in m.group_members(&gid).unwrap() {
            assert_eq!(
                m.conversation(&cid).unwrap().status,
                ConversationStatus::Ready
            );
        }
        assert!(m.take_outbox().is_empty());
    }

    #[test]
    fn start_group_on_empty_group_errors() {
        let mut m = manager_for("auctioneer");
        m.new_agent_group("nobody", []).unwrap();
        let vickrey = ProtocolId::new("is.lill.examples", "vickrey-auction", "1.0").unwrap();
        assert!(matches!(
            m.start_group(&vickrey, "nobody", None),
            Err(ManagerError::Group(GroupError::EmptyAgentGroup(_)))
        ));
    }

    #[test]
    fn add_to_group_enforces_protocol() {
        let mut m = manager_for("agent1");
        m.new_conversation_group("g").unwrap();
        let c1 = m.start_conversation(&request_response_id(), "x").unwrap();
        let c2 = m.start_conversation(&proc_docs_id(), "y").unwrap();
        m.add_to_group("g", &c1).unwrap();
        assert!(matches!(
            m.add_to_group("g", &c2),
            Err(ManagerError::Group(GroupError::ProtocolMismatch(..)))
        ));
    }

    #[test]
    fn advance_all_partial_acceptance() {
        let mut m = manager_for("agent1");
        // two conversations where peers requested from this agent (now in
        // requested, with this agent as respondent), plus one still ready
        let mut cids = Vec::new();
        for (peer, cid) in [("p1", "r1"), ("p2", "r2")] {
            m.submit(msg(&format!(
                "(request :sender {} :receiver agent1 :conversation-id {} \
                 :protocol is.lill.examples.request-response.1.0)",
                peer, cid
            )))
            .unwrap();
            m.run_cycle();
            cids.push(cid.to_string());
        }
        cids.push(m.start_conversation(&request_response_id(), "p3").unwrap());

        m.new_conversation_group("g").unwrap();
        for cid in &cids {
            m.add_to_group("g", cid).unwrap();
        }
        // the respondent's inform closes the requested conversations; the
        // ready one cannot take it (its initial transition needs request)
        m.advance_all("g", Performative::Inform, None).unwrap();
        m.take_outbox();
        let events = m.run_cycle();
        let advanced = events
            .iter()
            .filter(|e| matches!(e, Event::Advanced { .. }))
            .count();
        let unmatched = events
            .iter()
            .filter(|e| matches!(e, Event::Unmatched { .. }))
            .count();
        assert_eq!(advanced, 2, "{:?}", events);
        assert_eq!(unmatched, 1, "{:?}", events);
    }
}
