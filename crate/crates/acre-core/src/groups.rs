//! Group reasoning: named agent groups, groups of related conversations and
//! pluggable monitors that raise events over the member conversations.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::conversation::ConversationStatus;
use crate::protocol::ProtocolId;
use crate::term::Predicate;

/// What a monitor sees of each member conversation at poll time.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberView {
    pub cid: String,
    pub state: String,
    pub status: ConversationStatus,
}

/// A predicate over member snapshots, polled once per manager cycle.
/// Implementations may keep state for edge triggering.
pub trait GroupMonitor: Send + Sync {
    fn evaluate(&mut self, members: &[MemberView]) -> bool;
}

/// Fires on every poll at which all members sit in the given state.
struct AllInState {
    state: String,
}

impl GroupMonitor for AllInState {
    fn evaluate(&mut self, members: &[MemberView]) -> bool {
        !members.is_empty() && members.iter().all(|m| m.state == self.state)
    }
}

/// Fires once when all members reach the given state; rearms only after a
/// poll at which that no longer holds.
struct AllReachedState {
    state: String,
    armed: bool,
}

impl GroupMonitor for AllReachedState {
    fn evaluate(&mut self, members: &[MemberView]) -> bool {
        let all_in = !members.is_empty() && members.iter().all(|m| m.state == self.state);
        if all_in {
            let fire = self.armed;
            self.armed = false;
            fire
        } else {
            self.armed = true;
            false
        }
    }
}

/// Fires on every poll at which no member sits in the given state.
struct NoneInState {
    state: String,
}

impl GroupMonitor for NoneInState {
    fn evaluate(&mut self, members: &[MemberView]) -> bool {
        !members.is_empty() && members.iter().all(|m| m.state != self.state)
    }
}

/// Fires when every member has completed. Failed, stale or cancelled members
/// do not count as finished.
struct AllFinished;

impl GroupMonitor for AllFinished {
    fn evaluate(&mut self, members: &[MemberView]) -> bool {
        !members.is_empty()
            && members
                .iter()
                .all(|m| m.status == ConversationStatus::Completed)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupError {
    #[error("duplicate group id {0:?}")]
    DuplicateGroup(String),
    #[error("unknown agent group {0:?}")]
    UnknownAgentGroup(String),
    #[error("unknown conversation group {0:?}")]
    UnknownConversationGroup(String),
    #[error("agent group {0:?} is empty")]
    EmptyAgentGroup(String),
    #[error("conversation {0:?} follows a different protocol than group {1:?}")]
    ProtocolMismatch(String, String),
    #[error("unknown monitor {0:?}")]
    UnknownMonitor(String),
    #[error("monitor {0} expects {1} parameter(s), got {2}")]
    ArityMismatch(String, usize, usize),
    #[error("malformed monitor descriptor {0:?}")]
    BadDescriptor(String),
}

type MonitorCtor = std::sync::Arc<dyn Fn(&[String]) -> Box<dyn GroupMonitor> + Send + Sync>;

struct MonitorKind {
    name: String,
    arity: usize,
    ctor: MonitorCtor,
}

/// Name → constructor table. The four default monitors are pre-registered;
/// custom monitors register at startup via `register`.
pub struct MonitorRegistry {
    kinds: Vec<MonitorKind>,
}

impl Default for MonitorRegistry {
    fn default() -> MonitorRegistry {
        let mut registry = MonitorRegistry { kinds: Vec::new() };
        registry.register("AllInState", 1, |params| {
            Box::new(AllInState {
                state: params[0].clone(),
            })
        });
        registry.register("AllReachedState", 1, |params| {
            Box::new(AllReachedState {
                state: params[0].clone(),
                armed: true,
            })
        });
        registry.register("NoneInState", 1, |params| {
            Box::new(NoneInState {
                state: params[0].clone(),
            })
        });
        registry.register("AllFinished", 0, |_| Box::new(AllFinished));
        registry
    }
}

impl MonitorRegistry {
    /// Registers a constructor under a name. `arity` is the number of
    /// parameters the descriptor must carry; the constructor receives
    /// exactly that many.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        arity: usize,
        ctor: impl Fn(&[String]) -> Box<dyn GroupMonitor> + Send + Sync + 'static,
    ) {
        let name = name.into();
        self.kinds.retain(|k| k.name != name);
        self.kinds.push(MonitorKind {
            name,
            arity,
            ctor: std::sync::Arc::new(ctor),
        });
    }

    /// Parses a descriptor of the form `Name(p1,p2,...)`, instantiating the
    /// named monitor after checking the parameter count. A dotted prefix on
    /// the name (a package-style qualifier) is ignored for lookup.
    pub fn instantiate(&self, descriptor: &str) -> Result<Box<dyn GroupMonitor>, GroupError> {
        let descriptor = descriptor.trim();
        let (name, params) = match descriptor.find('(') {
            Some(open) => {
                let close = descriptor
                    .rfind(')')
                    .filter(|&c| c == descriptor.len() - 1)
                    .ok_or_else(|| GroupError::BadDescriptor(descriptor.to_string()))?;
                let inner = &descriptor[open + 1..close];
                let params: Vec<String> = if inner.trim().is_empty() {
                    Vec::new()
                } else {
                    inner.split(',').map(|p| p.trim().to_string()).collect()
                };
                (&descriptor[..open], params)
            }
            None => (descriptor, Vec::new()),
        };
        let unqualified = name.rsplit('.').next().unwrap_or(name);
        let kind = self
            .kinds
            .iter()
            .find(|k| k.name == unqualified)
            .ok_or_else(|| GroupError::UnknownMonitor(name.to_string()))?;
        if params.len() != kind.arity {
            return Err(GroupError::ArityMismatch(
                kind.name.clone(),
                kind.arity,
                params.len(),
            ));
        }
        Ok((kind.ctor)(&params))
    }
}

/// Instantiates a monitor from the default registry.
pub fn instantiate_monitor(descriptor: &str) -> Result<Box<dyn GroupMonitor>, GroupError> {
    MonitorRegistry::default().instantiate(descriptor)
}

/// A named set of agents, akin to an address-book group.
#[derive(Debug, Clone, Default)]
pub struct AgentGroup {
    pub members: BTreeSet<String>,
}

struct MonitorSlot {
    descriptor: String,
    monitor: Box<dyn GroupMonitor>,
}

/// A group of conversations following one protocol, with attached monitors.
pub struct ConversationGroup {
    pub members: BTreeSet<String>,
    pub protocol: Option<ProtocolId>,
    pub annotations: BTreeSet<Predicate>,
    monitors: Vec<MonitorSlot>,
}

impl ConversationGroup {
    fn new() -> ConversationGroup {
        ConversationGroup {
            members: BTreeSet::new(),
            protocol: None,
            annotations: BTreeSet::new(),
            monitors: Vec::new(),
        }
    }

    pub fn monitor_descriptors(&self) -> Vec<&str> {
        self.monitors
            .iter()
            .map(|m| m.descriptor.as_str())
            .collect()
    }
}

/// Per-agent registry of agent groups and conversation groups.
#[derive(Default)]
pub struct GroupReasoner {
    agent_groups: BTreeMap<String, AgentGroup>,
    conversation_groups: BTreeMap<String, ConversationGroup>,
    registry: MonitorRegistry,
}

impl GroupReasoner {
    pub fn new() -> GroupReasoner {
        GroupReasoner::default()
    }

    /// Registers a custom monitor constructor; meant to be called at
    /// startup, before any `watch`.
    pub fn register_monitor(
        &mut self,
        name: impl Into<String>,
        arity: usize,
        ctor: impl Fn(&[String]) -> Box<dyn GroupMonitor> + Send + Sync + 'static,
    ) {
        self.registry.register(name, arity, ctor);
    }

    pub fn new_agent_group(
        &mut self,
        id: &str,
        members: impl IntoIterator<Item = String>,
    ) -> Result<(), GroupError> {
        if self.agent_groups.contains_key(id) {
            return Err(GroupError::DuplicateGroup(id.to_string()));
        }
        self.agent_groups.insert(
            id.to_string(),
            AgentGroup {
                members: members.into_iter().collect(),
            },
        );
        Ok(())
    }

    pub fn agent_group(&self, id: &str) -> Result<&AgentGroup, GroupError> {
        self.agent_groups
            .get(id)
            .ok_or_else(|| GroupError::UnknownAgentGroup(id.to_string()))
    }

    pub fn add_agents(
        &mut self,
        id: &str,
        names: impl IntoIterator<Item = String>,
    ) -> Result<(), GroupError> {
        let group = self
            .agent_groups
            .get_mut(id)
            .ok_or_else(|| GroupError::UnknownAgentGroup(id.to_string()))?;
        group.members.extend(names);
        Ok(())
    }

    pub fn remove_agents<'a>(
        &mut self,
        id: &str,
        names: impl IntoIterator<Item = &'a str>,
    ) -> Result<(), GroupError> {
        let group = self
            .agent_groups
            .get_mut(id)
            .ok_or_else(|| GroupError::UnknownAgentGroup(id.to_string()))?;
        for name in names {
            group.members.remove(name);
        }
        Ok(())
    }

    pub fn disband(&mut self, id: &str) -> Result<(), GroupError> {
        self.agent_groups
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| GroupError::UnknownAgentGroup(id.to_string()))
    }

    pub fn new_conversation_group(&mut self, id: &str) -> Result<(), GroupError> {
        if self.conversation_groups.contains_key(id) {
            return Err(GroupError::DuplicateGroup(id.to_string()));
        }
        self.conversation_groups
            .insert(id.to_string(), ConversationGroup::new());
        Ok(())
    }

    pub fn conversation_group(&self, id: &str) -> Result<&ConversationGroup, GroupError> {
        self.conversation_groups
            .get(id)
            .ok_or_else(|| GroupError::UnknownConversationGroup(id.to_string()))
    }

    pub fn conversation_group_ids(&self) -> impl Iterator<Item = &String> {
        self.conversation_groups.keys()
    }

    /// Adds a conversation. All members must follow one protocol; the first
    /// member fixes it.
    pub fn add_member(
        &mut self,
        id: &str,
        cid: &str,
        protocol: &ProtocolId,
    ) -> Result<(), GroupError> {
        let group = self
            .conversation_groups
            .get_mut(id)
            .ok_or_else(|| GroupError::UnknownConversationGroup(id.to_string()))?;
        match &group.protocol {
            Some(existing) if existing != protocol => {
                return Err(GroupError::ProtocolMismatch(
                    cid.to_string(),
                    id.to_string(),
                ))
            }
            Some(_) => {}
            None => group.protocol = Some(protocol.clone()),
        }
        group.members.insert(cid.to_string());
        Ok(())
    }

    pub fn remove_member(&mut self, id: &str, cid: &str) -> Result<(), GroupError> {
        let group = self
            .conversation_groups
            .get_mut(id)
            .ok_or_else(|| GroupError::UnknownConversationGroup(id.to_string()))?;
        group.members.remove(cid);
        Ok(())
    }

    /// Attaches monitors given by descriptor text, e.g. `AllInState(started)`.
    pub fn watch(&mut self, id: &str, descriptors: &[&str]) -> Result<(), GroupError> {
        // validate all descriptors before attaching any
        let mut slots = Vec::new();
        for d in descriptors {
            slots.push(MonitorSlot {
                descriptor: d.trim().to_string(),
                monitor: self.registry.instantiate(d)?,
            });
        }
        let group = self
            .conversation_groups
            .get_mut(id)
            .ok_or_else(|| GroupError::UnknownConversationGroup(id.to_string()))?;
        group.monitors.extend(slots);
        Ok(())
    }

    /// Removes the listed monitors, or all of them when `descriptors` is
    /// `None`.
    pub fn unwatch(&mut self, id: &str, descriptors: Option<&[&str]>) -> Result<(), GroupError> {
        let group = self
            .conversation_groups
            .get_mut(id)
            .ok_or_else(|| GroupError::UnknownConversationGroup(id.to_string()))?;
        match descriptors {
            None => group.monitors.clear(),
            Some(list) => {
                let doomed: Vec<String> = list.iter().map(|d| d.trim().to_string()).collect();
                group
                    .monitors
                    .retain(|slot| !doomed.contains(&slot.descriptor));
            }
        }
        Ok(())
    }

    pub fn group_annotate(&mut self, id: &str, annotation: Predicate) -> Result<(), GroupError> {
        let group = self
            .conversation_groups
            .get_mut(id)
            .ok_or_else(|| GroupError::UnknownConversationGroup(id.to_string()))?;
        group.annotations.insert(annotation);
        Ok(())
    }

    pub fn group_deannotate(
        &mut self,
        id: &str,
        annotation: Option<&Predicate>,
    ) -> Result<(), GroupError> {
        let group = self
            .conversation_groups
            .get_mut(id)
            .ok_or_else(|| GroupError::UnknownConversationGroup(id.to_string()))?;
        match annotation {
            Some(a) => {
                group.annotations.remove(a);
            }
            None => group.annotations.clear(),
        }
        Ok(())
    }

    /// Evaluates every monitor of one group against the member views; each
    /// firing yields its descriptor.
    pub fn poll(&mut self, id: &str, members: &[MemberView]) -> Result<Vec<String>, GroupError> {
        let group = self
            .conversation_groups
            .get_mut(id)
            .ok_or_else(|| GroupError::UnknownConversationGroup(id.to_string()))?;
        let mut fired = Vec::new();
        for slot in &mut group.monitors {
            if slot.monitor.evaluate(members) {
                fired.push(slot.descriptor.clone());
            }
        }
        Ok(fired)
    }
}
