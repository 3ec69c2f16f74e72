//! FIPA-ACL message model and the textual trace format.
//!
//! Messages travel as single-line s-expressions of the form
//! `(performative :key value ...)`. Trace files hold one message per line,
//! optionally prefixed with a `send`/`recv` direction marker relative to the
//! traced agent.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::protocol::ProtocolId;
use crate::term::{self, ParseError, Predicate};

/// The closed set of FIPA performatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Performative {
    AcceptProposal,
    Agree,
    Cancel,
    Cfp,
    Confirm,
    Disconfirm,
    Failure,
    Inform,
    InformIf,
    InformRef,
    NotUnderstood,
    Propagate,
    Propose,
    Proxy,
    QueryIf,
    QueryRef,
    Refuse,
    RejectProposal,
    Request,
    RequestWhen,
    RequestWhenever,
    Subscribe,
}

impl Performative {
    pub const ALL: [Performative; 22] = [
        Performative::AcceptProposal,
        Performative::Agree,
        Performative::Cancel,
        Performative::Cfp,
        Performative::Confirm,
        Performative::Disconfirm,
        Performative::Failure,
        Performative::Inform,
        Performative::InformIf,
        Performative::InformRef,
        Performative::NotUnderstood,
        Performative::Propagate,
        Performative::Propose,
        Performative::Proxy,
        Performative::QueryIf,
        Performative::QueryRef,
        Performative::Refuse,
        Performative::RejectProposal,
        Performative::Request,
        Performative::RequestWhen,
        Performative::RequestWhenever,
        Performative::Subscribe,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Performative::AcceptProposal => "accept-proposal",
            Performative::Agree => "agree",
            Performative::Cancel => "cancel",
            Performative::Cfp => "cfp",
            Performative::Confirm => "confirm",
            Performative::Disconfirm => "disconfirm",
            Performative::Failure => "failure",
            Performative::Inform => "inform",
            Performative::InformIf => "inform-if",
            Performative::InformRef => "inform-ref",
            Performative::NotUnderstood => "not-understood",
            Performative::Propagate => "propagate",
            Performative::Propose => "propose",
            Performative::Proxy => "proxy",
            Performative::QueryIf => "query-if",
            Performative::QueryRef => "query-ref",
            Performative::Refuse => "refuse",
            Performative::RejectProposal => "reject-proposal",
            Performative::Request => "request",
            Performative::RequestWhen => "request-when",
            Performative::RequestWhenever => "request-whenever",
            Performative::Subscribe => "subscribe",
        }
    }
}

impl fmt::Display for Performative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Performative {
    type Err = AclError;

    fn from_str(s: &str) -> Result<Performative, AclError> {
        Performative::ALL
            .iter()
            .find(|p| p.as_str() == s)
            .copied()
            .ok_or_else(|| AclError::UnknownPerformative(s.to_string()))
    }
}

/// A single ACL message with one sender and one receiver. Multi-receiver
/// wire forms are expanded into one message per receiver at parse time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub performative: Performative,
    pub sender: String,
    pub receiver: String,
    pub content: Option<Predicate>,
    pub conversation_id: Option<String>,
    pub protocol_id: Option<ProtocolId>,
    /// Deadline for a reply, seconds since the Unix epoch (UTC).
    pub reply_by: Option<i64>,
    pub reply_with: Option<String>,
    pub in_reply_to: Option<String>,
    /// FIPA fields the engine carries but does not interpret (`reply-to`,
    /// `language`, `encoding`, `ontology`) plus any `x-` extension keys.
    pub extras: BTreeMap<String, String>,
}

impl Message {
    pub fn new(
        performative: Performative,
        sender: impl Into<String>,
        receiver: impl Into<String>,
    ) -> Message {
        Message {
            performative,
            sender: sender.into(),
            receiver: receiver.into(),
            content: None,
            conversation_id: None,
            protocol_id: None,
            reply_by: None,
            reply_with: None,
            in_reply_to: None,
            extras: BTreeMap::new(),
        }
    }

    pub fn with_content(mut self, content: Predicate) -> Message {
        assert!(content.is_ground(), "message content must be ground");
        self.content = Some(content);
        self
    }

    pub fn with_conversation_id(mut self, cid: impl Into<String>) -> Message {
        self.conversation_id = Some(cid.into());
        self
    }

    pub fn with_protocol_id(mut self, pid: ProtocolId) -> Message {
        self.protocol_id = Some(pid);
        self
    }
}

/// Errors raised by message and trace parsing.
#[derive(Debug, Error)]
pub enum AclError {
    #[error("unknown performative {0:?}")]
    UnknownPerformative(String),
    #[error("unknown message key {0:?}")]
    UnknownKey(String),
    #[error("message must be a parenthesized expression")]
    NotAnExpression,
    #[error("missing value for key {0:?}")]
    MissingValue(String),
    #[error("missing mandatory field {0:?}")]
    MissingField(&'static str),
    #[error("malformed content: {0}")]
    BadContent(#[from] ParseError),
    #[error("message content must be ground")]
    NonGroundContent,
    #[error("cannot parse protocol id {0:?}")]
    BadProtocolId(String),
    #[error("cannot parse reply-by timestamp {0:?}")]
    BadReplyBy(String),
    #[error("trailing input after message")]
    TrailingInput,
    #[error("bad trace line {0}: {1}")]
    BadTraceLine(usize, String),
}

const KNOWN_KEYS: [&str; 12] = [
    "sender",
    "receiver",
    "content",
    "conversation-id",
    "protocol",
    "reply-by",
    "reply-with",
    "in-reply-to",
    "reply-to",
    "language",
    "encoding",
    "ontology",
];

struct Scanner<'a> {
    input: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(input: &'a str) -> Scanner<'a> {
        Scanner { input, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.input[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    /// Reads one atom: a quoted string or a run of characters up to
    /// whitespace or a parenthesis.
    fn atom(&mut self) -> Result<String, AclError> {
        self.skip_ws();
        if self.peek() == Some('"') {
            let (term, used) = term::parse_term_prefix(self.rest())?;
            self.pos += used;
            match term {
                crate::term::Term::Constant(c) => return Ok(c),
                _ => unreachable!("quoted input parses to a constant"),
            }
        }
        let start = self.pos;
        while matches!(self.peek(), Some(c) if !c.is_whitespace() && c != '(' && c != ')') {
            self.bump();
        }
        Ok(self.input[start..self.pos].to_string())
    }
}

/// Parses one message s-expression. A `:receiver` list of n names yields n
/// messages differing only in receiver.
pub fn parse_message(input: &str) -> Result<Vec<Message>, AclError> {
    let mut s = Scanner::new(input);
    s.skip_ws();
    if s.bump() != Some('(') {
        return Err(AclError::NotAnExpression);
    }
    let performative: Performative = s.atom()?.parse()?;

    let mut sender: Option<String> = None;
    let mut receivers: Vec<String> = Vec::new();
    let mut content: Option<Predicate> = None;
    let mut conversation_id = None;
    let mut protocol_id = None;
    let mut reply_by = None;
    let mut reply_with = None;
    let mut in_reply_to = None;
    let mut extras = BTreeMap::new();

    loop {
        s.skip_ws();
        match s.peek() {
            None => return Err(AclError::NotAnExpression),
            Some(')') => {
                s.bump();
                break;
            }
            Some(':') => {
                s.bump();
                let key = s.atom()?;
                if !KNOWN_KEYS.contains(&key.as_str()) && !key.starts_with("x-") {
                    return Err(AclError::UnknownKey(key));
                }
                match key.as_str() {
                    "content" => {
                        let (term, used) = term::parse_term_prefix(s.rest())?;
                        s.pos += used;
                        let predicate =
                            Predicate::from_term(&term).ok_or(AclError::NonGroundContent)?;
                        if !predicate.is_ground() {
                            return Err(AclError::NonGroundContent);
                        }
                        content = Some(predicate);
                    }
                    "receiver" => {
                        s.skip_ws();
                        if s.peek() == Some('(') {
                            s.bump();
                            loop {
                                s.skip_ws();
                                if s.peek() == Some(')') {
                                    s.bump();
                                    break;
                                }
                                let name = s.atom()?;
                                if name.is_empty() {
                                    return Err(AclError::MissingValue(key));
                                }
                                receivers.push(name);
                            }
                        } else {
                            let name = s.atom()?;
                            if name.is_empty() {
                                return Err(AclError::MissingValue(key));
                            }
                            receivers.push(name);
                        }
                    }
                    _ => {
                        let value = s.atom()?;
                        if value.is_empty() {
                            return Err(AclError::MissingValue(key));
                        }
                        match key.as_str() {
                            "sender" => sender = Some(value),
                            "conversation-id" => conversation_id = Some(value),
                            "protocol" => {
                                protocol_id = Some(
                                    ProtocolId::parse(&value)
                                        .map_err(|_| AclError::BadProtocolId(value))?,
                                )
                            }
                            "reply-by" => {
                                reply_by = Some(
                                    value
                                        .parse::<i64>()
                                        .map_err(|_| AclError::BadReplyBy(value))?,
                                )
                            }
                            "reply-with" => reply_with = Some(value),
                            "in-reply-to" => in_reply_to = Some(value),
                            _ => {
                                extras.insert(key, value);
                            }
                        }
                    }
                }
            }
            Some(_) => return Err(AclError::TrailingInput),
        }
    }
    s.skip_ws();
    if s.peek().is_some() {
        return Err(AclError::TrailingInput);
    }

    let sender = sender.ok_or(AclError::MissingField("sender"))?;
    if receivers.is_empty() {
        return Err(AclError::MissingField("receiver"));
    }
    Ok(receivers
        .into_iter()
        .map(|receiver| Message {
            performative,
            sender: sender.clone(),
            receiver,
            content: content.clone(),
            conversation_id: conversation_id.clone(),
            protocol_id: protocol_id.clone(),
            reply_by,
            reply_with: reply_with.clone(),
            in_reply_to: in_reply_to.clone(),
            extras: extras.clone(),
        })
        .collect())
}

fn atom_out(value: &str) -> String {
    let bare = !value.is_empty()
        && value
            .chars()
            .all(|c| !c.is_whitespace() && c != '(' && c != ')' && c != '"' && c != ':');
    if bare {
        value.to_string()
    } else {
        format!("\"{}\"", value.replace('"', "\"\""))
    }
}

/// Canonical single-line serialization. Keys appear in a fixed order
/// (sender, receiver, content, conversation-id, protocol, reply-by,
/// reply-with, in-reply-to) with preserved extras sorted last; absent fields
/// are omitted.
pub fn serialize_message(m: &Message) -> String {
    let mut out = format!("({}", m.performative);
    out.push_str(&format!(" :sender {}", atom_out(&m.sender)));
    out.push_str(&format!(" :receiver {}", atom_out(&m.receiver)));
    if let Some(content) = &m.content {
        out.push_str(&format!(" :content {}", content));
    }
    if let Some(cid) = &m.conversation_id {
        out.push_str(&format!(" :conversation-id {}", atom_out(cid)));
    }
    if let Some(pid) = &m.protocol_id {
        out.push_str(&format!(" :protocol {}", pid));
    }
    if let Some(t) = m.reply_by {
        out.push_str(&format!(" :reply-by {}", t));
    }
    if let Some(w) = &m.reply_with {
        out.push_str(&format!(" :reply-with {}", atom_out(w)));
    }
    if let Some(r) = &m.in_reply_to {
        out.push_str(&format!(" :in-reply-to {}", atom_out(r)));
    }
    for (k, v) in &m.extras {
        out.push_str(&format!(" :{} {}", k, atom_out(v)));
    }
    out.push(')');
    out
}

/// Direction of a traced message relative to the traced agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Sent => "sent",
            Direction::Received => "received",
        })
    }
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    /// Explicit direction marker, if the line carried one. Absent means the
    /// direction is inferred from the sender field.
    pub direction: Option<Direction>,
    pub message: Message,
}

/// Parses a trace file: UTF-8, one message per line, `#` comment lines
/// ignored, optional `send`/`recv` TAB prefix.
pub fn parse_trace(input: &str) -> Result<Vec<TraceEntry>, AclError> {
    let mut entries = Vec::new();
    for (lineno, raw) in input.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (direction, body) = match raw.split_once('\t') {
            Some(("send", rest)) => (Some(Direction::Sent), rest),
            Some(("recv", rest)) => (Some(Direction::Received), rest),
            _ => (None, line),
        };
        let messages = parse_message(body.trim())
            .map_err(|e| AclError::BadTraceLine(lineno + 1, e.to_string()))?;
        for message in messages {
            entries.push(TraceEntry { direction, message });
        }
    }
    Ok(entries)
}
