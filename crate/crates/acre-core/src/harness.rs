//! Deterministic in-memory multi-agent simulation.
//!
//! A scenario declares agents with behavior scripts (event pattern → action
//! rules) plus a clock schedule and a seed. The runner delivers messages
//! between the agents' conversation managers tick by tick, evaluates the
//! scripts against each cycle's events and records a byte-reproducible
//! transcript.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::acl::{serialize_message, Performative};
use crate::manager::{ConversationManager, Event, ManagerError, ManualClock, Snapshot};
use crate::protocol::{ProtocolId, ProtocolSet};
use crate::term::{parse_predicate, Predicate};

/// One `event pattern → actions` rule of a behavior script.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub pattern: Pattern,
    /// Rule applies at most this many times; `None` means unlimited.
    pub max_times: Option<u64>,
    pub actions: Vec<Action>,
}

/// Event pattern: a kind plus simple field equalities. The kind `init`
/// matches a pseudo-event injected once at tick 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub kind: String,
    pub fields: Vec<(String, String)>,
}

/// A parsed script action: operation name plus raw argument strings.
/// Arguments are substituted per firing (`?cid`, conversation bindings,
/// `{n}`, `{rand:lo-hi}`) before execution.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub op: String,
    pub args: Vec<String>,
}

/// An agent's ordered rule list. For each event the first matching rule
/// whose `times` guard still holds fires.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BehaviorScript {
    pub rules: Vec<Rule>,
}

/// A parsed scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub max_cycles: usize,
    pub clock_start: i64,
    pub clock_step: i64,
    /// Protocol store path; `None` means the built-in fixture set.
    pub store: Option<String>,
    pub expect_transcript: Option<String>,
    pub agents: Vec<(String, BehaviorScript)>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario line {0}: {1}")]
    Parse(usize, String),
    #[error("duplicate agent {0:?}")]
    DuplicateAgent(String),
    #[error("rule for unknown agent {0:?}")]
    UnknownAgent(String),
    #[error("action {op}: {source}")]
    Action {
        op: String,
        #[source]
        source: ManagerError,
    },
    #[error("action {0}: {1}")]
    BadAction(String, String),
    #[error("message to unknown agent {0:?}")]
    UnknownReceiver(String),
    #[error("not quiescent after {0} cycles")]
    NotQuiescent(usize),
    #[error("transcript mismatch at line {0}: expected {1:?}, got {2:?}")]
    TranscriptMismatch(usize, String, String),
}

/// Splits on top-level commas, respecting parentheses, brackets and quotes.
fn split_args(input: &str) -> Vec<String> {
    let mut args = Vec::new();
    let mut depth = 0usize;
    let mut in_quotes = false;
    let mut current = String::new();
    for c in input.chars() {
        match c {
            '"' => {
                in_quotes = !in_quotes;
                current.push(c);
            }
            '(' | '[' if !in_quotes => {
                depth += 1;
                current.push(c);
            }
            ')' | ']' if !in_quotes => {
                depth = depth.saturating_sub(1);
                current.push(c);
            }
            ',' if depth == 0 && !in_quotes => {
                args.push(current.trim().to_string());
                current.clear();
            }
            _ => current.push(c),
        }
    }
    if !current.trim().is_empty() {
        args.push(current.trim().to_string());
    }
    args
}

fn parse_call(text: &str) -> Result<(String, Vec<String>), String> {
    let text = text.trim();
    match text.find('(') {
        Some(open) => {
            if !text.ends_with(')') {
                return Err(format!("unbalanced call {:?}", text));
            }
            let name = text[..open].trim().to_string();
            let inner = &text[open + 1..text.len() - 1];
            Ok((name, split_args(inner)))
        }
        None => Ok((text.to_string(), Vec::new())),
    }
}

fn parse_pattern(text: &str) -> Result<(Pattern, Option<u64>), String> {
    let text = text.trim();
    let (body, guard) = match text.find('[') {
        Some(open) => {
            if !text.ends_with(']') {
                return Err(format!("unbalanced guard in {:?}", text));
            }
            let guard = &text[open + 1..text.len() - 1];
            let times = guard
                .trim()
                .strip_prefix("times<=")
                .ok_or_else(|| format!("unknown guard {:?}", guard))?
                .trim()
                .parse::<u64>()
                .map_err(|_| format!("bad guard count in {:?}", guard))?;
            (text[..open].trim(), Some(times))
        }
        None => (text, None),
    };
    let (kind, raw_fields) = parse_call(body)?;
    let mut fields = Vec::new();
    for raw in raw_fields {
        let (key, value) = raw
            .split_once('=')
            .ok_or_else(|| format!("pattern field {:?} is not key=value", raw))?;
        fields.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok((Pattern { kind, fields }, guard))
}

/// Parses the scenario text format: `key: value` headers, `agent: name`
/// declarations and `rule <agent>: on <pattern> do <action>; ...` lines.
pub fn parse_scenario(input: &str) -> Result<Scenario, ScenarioError> {
    let mut scenario = Scenario {
        seed: 0,
        max_cycles: 100,
        clock_start: 0,
        clock_step: 1,
        store: None,
        expect_transcript: None,
        agents: Vec::new(),
    };
    for (idx, raw) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("rule ") {
            let (agent, rule_text) = rest
                .split_once(':')
                .ok_or_else(|| ScenarioError::Parse(lineno, "rule needs `agent:`".into()))?;
            let agent = agent.trim();
            let rule_text = rule_text.trim();
            let after_on = rule_text
                .strip_prefix("on ")
                .ok_or_else(|| ScenarioError::Parse(lineno, "rule needs `on <pattern>`".into()))?;
            let (pattern_text, actions_text) = after_on
                .split_once(" do ")
                .ok_or_else(|| ScenarioError::Parse(lineno, "rule needs `do <actions>`".into()))?;
            let (pattern, max_times) =
                parse_pattern(pattern_text).map_err(|e| ScenarioError::Parse(lineno, e))?;
            let mut actions = Vec::new();
            for piece in actions_text.split(';') {
                let piece = piece.trim();
                if piece.is_empty() {
                    continue;
                }
                let (op, args) = parse_call(piece).map_err(|e| ScenarioError::Parse(lineno, e))?;
                actions.push(Action { op, args });
            }
            let script = scenario
                .agents
                .iter_mut()
                .find(|(name, _)| name == agent)
                .map(|(_, script)| script)
                .ok_or_else(|| ScenarioError::UnknownAgent(agent.to_string()))?;
            script.rules.push(Rule {
                pattern,
                max_times,
                actions,
            });
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| ScenarioError::Parse(lineno, format!("cannot parse {:?}", line)))?;
        let value = value.trim();
        match key.trim() {
            "seed" => {
                scenario.seed = value
                    .parse()
                    .map_err(|_| ScenarioError::Parse(lineno, "bad seed".into()))?
            }
            "max-cycles" => {
                scenario.max_cycles = value
                    .parse()
                    .map_err(|_| ScenarioError::Parse(lineno, "bad max-cycles".into()))?
            }
            "clock-start" => {
                scenario.clock_start = value
                    .parse()
                    .map_err(|_| ScenarioError::Parse(lineno, "bad clock-start".into()))?
            }
            "clock-step" => {
                scenario.clock_step = value
                    .parse()
                    .map_err(|_| ScenarioError::Parse(lineno, "bad clock-step".into()))?
            }
            "store" => scenario.store = Some(value.to_string()),
            "expect-transcript" => scenario.expect_transcript = Some(value.to_string()),
            "agent" => {
                if scenario.agents.iter().any(|(name, _)| name == value) {
                    return Err(ScenarioError::DuplicateAgent(value.to_string()));
                }
                scenario
                    .agents
                    .push((value.to_string(), BehaviorScript::default()));
            }
            other => {
                return Err(ScenarioError::Parse(
                    lineno,
                    format!("unknown key {:?}", other),
                ))
            }
        }
    }
    Ok(scenario)
}

/// (kind, fields) view of an event for pattern matching.
fn event_fields(event: &Event) -> (&'static str, Vec<(&'static str, String)>) {
    match event {
        Event::Started { cid } => ("started", vec![("cid", cid.clone())]),
        Event::Advanced { cid, state, length } => (
            "advanced",
            vec![
                ("cid", cid.clone()),
                ("state", state.clone()),
                ("length", length.to_string()),
            ],
        ),
        Event::Completed { cid } => ("completed", vec![("cid", cid.clone())]),
        Event::Failed { cid } => ("failed", vec![("cid", cid.clone())]),
        Event::Unmatched { message } => (
            "unmatched",
            vec![
                ("performative", message.performative.to_string()),
                ("sender", message.sender.clone()),
            ],
        ),
        Event::Ambiguous { message } => (
            "ambiguous",
            vec![
                ("performative", message.performative.to_string()),
                ("sender", message.sender.clone()),
            ],
        ),
        Event::CancelRequest { cid } => ("cancelRequest", vec![("cid", cid.clone())]),
        Event::CancelConfirmed { cid } => ("cancelConfirmed", vec![("cid", cid.clone())]),
        Event::CancelFailed { cid } => ("cancelFailed", vec![("cid", cid.clone())]),
        Event::Timeout { cid } => ("timeout", vec![("cid", cid.clone())]),
        Event::GroupEvent { group, descriptor } => (
            "groupEvent",
            vec![("group", group.clone()), ("monitor", descriptor.clone())],
        ),
        Event::ProtocolAdded { id } => ("protocolAdded", vec![("id", id.to_string())]),
        Event::Warning { text } => ("warning", vec![("text", text.clone())]),
    }
}

struct AgentRuntime {
    manager: ConversationManager,
    script: BehaviorScript,
    fired: Vec<u64>,
}

/// (kind, fields, rendered record) for one event awaiting rule evaluation.
type PendingEvent = (&'static str, Vec<(&'static str, String)>, String);

/// Outcome of a scenario run.
pub struct RunResult {
    pub transcript: String,
    pub snapshots: BTreeMap<String, Snapshot>,
    pub quiescent: bool,
    pub ticks: usize,
}

/// Runs the scenario to quiescence (or `max_cycles`). Agents take cycles in
/// lexicographic name order; messages sent in one tick are delivered at the
/// start of the next. All nondeterminism is drawn from the seed.
pub fn run(scenario: &Scenario, protocols: &ProtocolSet) -> Result<RunResult, ScenarioError> {
    let clock = ManualClock::new(scenario.clock_start);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let mut order: Vec<String> = scenario.agents.iter().map(|(n, _)| n.clone()).collect();
    order.sort();

    let mut agents: BTreeMap<String, AgentRuntime> = BTreeMap::new();
    for (name, script) in &scenario.agents {
        let mut manager = ConversationManager::new(name.clone()).with_clock(clock.as_clock());
        manager.add_protocols(protocols);
        manager.run_cycle(); // consume protocolAdded noise before tick 0
        agents.insert(
            name.clone(),
            AgentRuntime {
                manager,
                fired: script.rules.iter().map(|_| 0).collect(),
                script: script.clone(),
            },
        );
    }

    let mut transcript = String::new();
    writeln!(transcript, "# seed: {}", scenario.seed).unwrap();

    let mut in_flight: Vec<crate::acl::Message> = Vec::new();
    let mut quiescent = false;
    let mut ticks = 0;

    for tick in 0..scenario.max_cycles {
        ticks = tick + 1;
        clock.set(scenario.clock_start + tick as i64 * scenario.clock_step);
        let now = clock.get();

        for message in std::mem::take(&mut in_flight) {
            let recipient = agents
                .get_mut(&message.receiver)
                .ok_or_else(|| ScenarioError::UnknownReceiver(message.receiver.clone()))?;
            recipient
                .manager
                .submit(message)
                .expect("delivered message involves recipient");
        }

        let mut tick_block = String::new();
        let mut any_rule_fired = false;
        let mut sent_this_tick: Vec<crate::acl::Message> = Vec::new();

        for name in &order {
            let runtime = agents.get_mut(name).unwrap();
            runtime.manager.check_timeouts(now);
            let events = runtime.manager.run_cycle();

            let mut queue: Vec<PendingEvent> = Vec::new();
            if tick == 0 {
                queue.push(("init", Vec::new(), String::new()));
            }
            for event in &events {
                let (kind, fields) = event_fields(event);
                queue.push((kind, fields, event.render_record()));
            }

            for (kind, fields, record) in queue {
                if !record.is_empty() {
                    writeln!(tick_block, "# event\t{}\t{}", name, record).unwrap();
                }
                let rule_idx = runtime
                    .script
                    .rules
                    .iter()
                    .enumerate()
                    .find_map(|(i, rule)| {
                        let kind_ok = rule.pattern.kind == kind;
                        let fields_ok = rule
                            .pattern
                            .fields
                            .iter()
                            .all(|(k, v)| fields.iter().any(|(fk, fv)| fk == k && fv == v));
                        let times_ok = runtime.fired[i] < rule.max_times.unwrap_or(u64::MAX);
                        (kind_ok && fields_ok && times_ok).then_some(i)
                    });
                let Some(rule_idx) = rule_idx else { continue };
                runtime.fired[rule_idx] += 1;
                any_rule_fired = true;
                let rule = runtime.script.rules[rule_idx].clone();
                let fire_count = runtime.fired[rule_idx];
                execute_actions(&mut runtime.manager, &rule, fire_count, &fields, &mut rng)?;
            }
            sent_this_tick.extend(runtime.manager.take_outbox());
        }

        if !tick_block.is_empty() || !sent_this_tick.is_empty() {
            writeln!(transcript, "# tick: {}", tick).unwrap();
            transcript.push_str(&tick_block);
            for message in &sent_this_tick {
                writeln!(transcript, "{}", serialize_message(message)).unwrap();
            }
        }
        in_flight = sent_this_tick;

        let queues_empty = agents.values().all(|a| a.manager.queue_len() == 0);
        let deadlines_pending = agents.values().any(|a| a.manager.has_pending_deadline());
        if in_flight.is_empty() && queues_empty && !any_rule_fired && !deadlines_pending {
            quiescent = true;
            break;
        }
    }

    let snapshots = agents
        .into_iter()
        .map(|(name, runtime)| (name, runtime.manager.snapshot()))
        .collect();

    Ok(RunResult {
        transcript,
        snapshots,
        quiescent,
        ticks,
    })
}

/// Substitutes `{n}`, `{rand:lo-hi}`, `?cid`/`?gid` and conversation-binding
/// references in one action argument.
fn substitute(
    arg: &str,
    manager: &ConversationManager,
    fire_count: u64,
    event_fields: &[(&'static str, String)],
    bound_cid: Option<&str>,
    bound_gid: Option<&str>,
    rng: &mut ChaCha8Rng,
) -> Result<String, String> {
    let mut out = arg.replace("{n}", &fire_count.to_string());
    while let Some(start) = out.find("{rand:") {
        let end = out[start..]
            .find('}')
            .map(|e| start + e)
            .ok_or_else(|| format!("unterminated {{rand:..}} in {:?}", arg))?;
        let spec = &out[start + 6..end];
        let (lo, hi) = spec
            .split_once('-')
            .ok_or_else(|| format!("bad rand range {:?}", spec))?;
        let lo: i64 = lo
            .trim()
            .parse()
            .map_err(|_| format!("bad rand low {:?}", spec))?;
        let hi: i64 = hi
            .trim()
            .parse()
            .map_err(|_| format!("bad rand high {:?}", spec))?;
        let value = rng.gen_range(lo..=hi);
        out = format!("{}{}{}", &out[..start], value, &out[end + 1..]);
    }

    // resolve ?tokens: ?cid and ?gid from context, others from the
    // conversation's bindings
    let cid_context = event_fields
        .iter()
        .find(|(k, _)| *k == "cid")
        .map(|(_, v)| v.clone())
        .or_else(|| bound_cid.map(String::from));
    let gid_context = event_fields
        .iter()
        .find(|(k, _)| *k == "group")
        .map(|(_, v)| v.clone())
        .or_else(|| bound_gid.map(String::from));

    let mut result = String::new();
    let mut chars = out.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '?' {
            result.push(c);
            continue;
        }
        let mut name = String::new();
        while let Some(&nc) = chars.peek() {
            if nc.is_ascii_alphanumeric() || nc == '_' || nc == '-' {
                name.push(nc);
                chars.next();
            } else {
                break;
            }
        }
        match name.as_str() {
            "cid" => result.push_str(
                cid_context
                    .as_deref()
                    .ok_or_else(|| format!("?cid unavailable in {:?}", arg))?,
            ),
            "gid" => result.push_str(
                gid_context
                    .as_deref()
                    .ok_or_else(|| format!("?gid unavailable in {:?}", arg))?,
            ),
            "" => result.push('?'),
            var => {
                let cid = cid_context
                    .as_deref()
                    .ok_or_else(|| format!("?{} needs a conversation context", var))?;
                let conversation = manager
                    .conversation(cid)
                    .ok_or_else(|| format!("unknown conversation {:?}", cid))?;
                let value = conversation
                    .bindings
                    .get(var)
                    .ok_or_else(|| format!("variable ?{} unbound in {}", var, cid))?;
                result.push_str(&value.to_string());
            }
        }
    }
    Ok(result)
}

fn parse_content_arg(arg: &str) -> Result<Option<Predicate>, String> {
    if arg.is_empty() || arg == "-" {
        return Ok(None);
    }
    parse_predicate(arg).map(Some).map_err(|e| e.to_string())
}

fn parse_list_arg(arg: &str) -> Vec<String> {
    let inner = arg
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .unwrap_or(arg);
    inner
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn execute_actions(
    manager: &mut ConversationManager,
    rule: &Rule,
    fire_count: u64,
    fields: &[(&'static str, String)],
    rng: &mut ChaCha8Rng,
) -> Result<(), ScenarioError> {
    // a start/start-group earlier in the chain binds ?cid/?gid for the rest
    let mut bound_cid: Option<String> = None;
    let mut bound_gid: Option<String> = None;

    for action in &rule.actions {
        let op = action.op.as_str();
        let mut args = Vec::new();
        for raw in &action.args {
            let value = substitute(
                raw,
                manager,
                fire_count,
                fields,
                bound_cid.as_deref(),
                bound_gid.as_deref(),
                rng,
            )
            .map_err(|e| ScenarioError::BadAction(op.to_string(), e))?;
            args.push(value);
        }
        let bad = |why: &str| ScenarioError::BadAction(op.to_string(), why.to_string());
        let wrap = |source: ManagerError| ScenarioError::Action {
            op: op.to_string(),
            source,
        };
        let parse_pid = |s: &str| {
            ProtocolId::parse(s)
                .map_err(|e| ScenarioError::BadAction(op.to_string(), e.to_string()))
        };
        let parse_perf = |s: &str| {
            s.parse::<Performative>()
                .map_err(|e| ScenarioError::BadAction(op.to_string(), e.to_string()))
        };

        match op {
            "start" => {
                if args.len() < 2 {
                    return Err(bad("start(pid, other[, performative[, content]])"));
                }
                let pid = parse_pid(&args[0])?;
                let cid = if args.len() >= 3 {
                    let performative = parse_perf(&args[2])?;
                    let content = args
                        .get(3)
                        .map(|a| parse_content_arg(a))
                        .transpose()
                        .map_err(|e| bad(&e))?
                        .flatten();
                    manager
                        .start_and_send(&pid, &args[1], performative, content)
                        .map_err(wrap)?
                } else {
                    manager.start_conversation(&pid, &args[1]).map_err(wrap)?
                };
                bound_cid = Some(cid);
            }
            "advance" => {
                if args.len() < 2 {
                    return Err(bad("advance(cid, performative[, content])"));
                }
                let performative = parse_perf(&args[1])?;
                let content = args
                    .get(2)
                    .map(|a| parse_content_arg(a))
                    .transpose()
                    .map_err(|e| bad(&e))?
                    .flatten();
                manager
                    .advance_conversation(&args[0], performative, content)
                    .map_err(wrap)?;
            }
            "cancel" => manager.cancel(&args[0]).map_err(wrap)?,
            "confirm-cancel" => manager.confirm_cancel(&args[0]).map_err(wrap)?,
            "deny-cancel" => manager.deny_cancel(&args[0]).map_err(wrap)?,
            "set-timeout" => {
                let seconds = args
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("set-timeout(cid, seconds)"))?;
                manager.set_timeout(&args[0], seconds).map_err(wrap)?;
            }
            "annotate" => {
                let predicate = parse_predicate(&args[1]).map_err(|e| bad(&e.to_string()))?;
                manager.annotate(&args[0], predicate).map_err(wrap)?;
            }
            "deannotate" => {
                let predicate = args
                    .get(1)
                    .map(|a| parse_predicate(a))
                    .transpose()
                    .map_err(|e| bad(&e.to_string()))?;
                manager
                    .deannotate(&args[0], predicate.as_ref())
                    .map_err(wrap)?;
            }
            "archive" => manager.archive(&args[0]).map_err(wrap)?,
            "recall" => manager.recall(&args[0]).map_err(wrap)?,
            "forget" => manager.forget(&args[0]).map_err(wrap)?,
            "new-agent-group" => {
                let members = args.get(1).map(|a| parse_list_arg(a)).unwrap_or_default();
                manager.new_agent_group(&args[0], members).map_err(wrap)?;
            }
            "add-agents" => {
                let members = parse_list_arg(args.get(1).ok_or_else(|| bad("needs members"))?);
                manager.add_agents(&args[0], members).map_err(wrap)?;
            }
            "remove-agents" => {
                let members = parse_list_arg(args.get(1).ok_or_else(|| bad("needs members"))?);
                manager
                    .remove_agents(&args[0], members.iter().map(String::as_str))
                    .map_err(wrap)?;
            }
            "disband" => manager.disband(&args[0]).map_err(wrap)?,
            "start-group" => {
                if args.len() < 2 {
                    return Err(bad(
                        "start-group(pid, agent-group[, performative[, content]])",
                    ));
                }
                let pid = parse_pid(&args[0])?;
                let first = if args.len() >= 3 {
                    let performative = parse_perf(&args[2])?;
                    let content = args
                        .get(3)
                        .map(|a| parse_content_arg(a))
                        .transpose()
                        .map_err(|e| bad(&e))?
                        .flatten();
                    Some((performative, content))
                } else {
                    None
                };
                let gid = manager.start_group(&pid, &args[1], first).map_err(wrap)?;
                bound_gid = Some(gid);
            }
            "new-group" => manager.new_conversation_group(&args[0]).map_err(wrap)?,
            "add-to-group" => manager.add_to_group(&args[0], &args[1]).map_err(wrap)?,
            "remove-from-group" => manager
                .remove_from_group(&args[0], &args[1])
                .map_err(wrap)?,
            "advance-all" => {
                if args.len() < 2 {
                    return Err(bad("advance-all(group, performative[, content])"));
                }
                let performative = parse_perf(&args[1])?;
                let content = args
                    .get(2)
                    .map(|a| parse_content_arg(a))
                    .transpose()
                    .map_err(|e| bad(&e))?
                    .flatten();
                manager
                    .advance_all(&args[0], performative, content)
                    .map_err(wrap)?;
            }
            "watch" => {
                let descriptors: Vec<&str> = args[1..].iter().map(String::as_str).collect();
                manager.watch(&args[0], &descriptors).map_err(wrap)?;
            }
            "unwatch" => {
                if args.len() > 1 {
                    let descriptors: Vec<&str> = args[1..].iter().map(String::as_str).collect();
                    manager
                        .unwatch(&args[0], Some(&descriptors))
                        .map_err(wrap)?;
                } else {
                    manager.unwatch(&args[0], None).map_err(wrap)?;
                }
            }
            other => return Err(bad(&format!("unknown action {:?}", other))),
        }
    }
    Ok(())
}

/// Byte-compares a transcript against an expected one, reporting the first
/// differing line.
pub fn verify_transcript(expected: &str, actual: &str) -> Result<(), ScenarioError> {
    let mut expected_lines = expected.lines();
    let mut actual_lines = actual.lines();
    let mut lineno = 0;
    loop {
        lineno += 1;
        match (expected_lines.next(), actual_lines.next()) {
            (None, None) => return Ok(()),
            (e, a) => {
                let e = e.unwrap_or("<end of file>");
                let a = a.unwrap_or("<end of file>");
                if e != a {
                    return Err(ScenarioError::TranscriptMismatch(
                        lineno,
                        e.to_string(),
                        a.to_string(),
                    ));
                }
            }
        }
    }
}

pub const PROCESS_DOCUMENTS_SCENARIO: &str =
    include_str!("../fixtures/scenarios/process-documents.scn");
pub const REQUEST_RESPONSE_SCENARIO: &str =
    include_str!("../fixtures/scenarios/request-response.scn");
pub const VICKREY_AUCTION_SCENARIO: &str =
    include_str!("../fixtures/scenarios/vickrey-auction.scn");
pub const CANCEL_CONFIRM_SCENARIO: &str = include_str!("../fixtures/scenarios/cancel-confirm.scn");
pub const CANCEL_DENY_SCENARIO: &str = include_str!("../fixtures/scenarios/cancel-deny.scn");
pub const TIMEOUT_SCENARIO: &str = include_str!("../fixtures/scenarios/timeout.scn");

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::ConversationStatus;
    use crate::fixtures;

    fn run_fixture(text: &str) -> RunResult {
        let scenario = parse_scenario(text).unwrap();
        run(&scenario, &fixtures::fixture_protocols()).unwrap()
    }

    fn message_lines(transcript: &str) -> Vec<&str> {
        transcript
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .collect()
    }

    #[test]
    fn process_documents_scenario_matches_worked_shape() {
        let result = run_fixture(PROCESS_DOCUMENTS_SCENARIO);
        assert!(result.quiescent);
        let lines = message_lines(&result.transcript);
        assert_eq!(lines.len(), 5, "{}", result.transcript);
        assert!(lines[0].contains("(inform") && lines[0].contains("ready"));
        assert!(lines[1].contains("(request") && lines[1].contains("process(doc123)"));
        assert!(lines[2].contains("(inform") && lines[2].contains("processed(doc123)"));
        assert!(lines[3].contains("(request") && lines[3].contains("process(doc234)"));
        assert!(lines[4].contains("(refuse") && lines[4].contains("process(doc234)"));
        for snapshot in result.snapshots.values() {
            assert_eq!(snapshot.conversations.len(), 1);
            assert_eq!(
                snapshot.conversations[0].status,
                ConversationStatus::Completed
            );
            assert_eq!(snapshot.conversations[0].state, "end");
            assert_eq!(snapshot.conversations[0].length, 5);
        }
    }

    #[test]
    fn request_response_scenario_two_messages() {
        let result = run_fixture(REQUEST_RESPONSE_SCENARIO);
        assert!(result.quiescent);
        assert_eq!(message_lines(&result.transcript).len(), 2);
        for snapshot in result.snapshots.values() {
            assert_eq!(
                snapshot.conversations[0].status,
                ConversationStatus::Completed
            );
        }
    }

    #[test]
    fn vickrey_scenario_group_monitors() {
        let result = run_fixture(VICKREY_AUCTION_SCENARIO);
        assert!(result.quiescent, "{}", result.transcript);
        // 3 cfp + 3 propose + 3 reject
        assert_eq!(
            message_lines(&result.transcript).len(),
            9,
            "{}",
            result.transcript
        );
        assert!(result
            .transcript
            .contains("groupEvent\tauctioneer-g1\tAllReachedState(bid-submitted)"));
        assert!(result
            .transcript
            .contains("groupEvent\tauctioneer-g1\tAllFinished()"));
        let auctioneer = &result.snapshots["auctioneer"];
        assert_eq!(auctioneer.conversations.len(), 3);
        assert!(auctioneer
            .conversations
            .iter()
            .all(|c| c.state == "rejected" && c.status == ConversationStatus::Completed));
    }

    #[test]
    fn cancel_scenarios() {
        let confirm = run_fixture(CANCEL_CONFIRM_SCENARIO);
        assert!(confirm.quiescent);
        assert!(confirm.transcript.contains("cancelRequest"));
        assert!(confirm.transcript.contains("cancelConfirmed"));
        for snapshot in confirm.snapshots.values() {
            assert_eq!(
                snapshot.conversations[0].status,
                ConversationStatus::Cancelled
            );
        }

        let deny = run_fixture(CANCEL_DENY_SCENARIO);
        assert!(deny.quiescent);
        assert!(deny.transcript.contains("cancelFailed"));
        assert_eq!(
            deny.snapshots["alpha"].conversations[0].status,
            ConversationStatus::Active
        );
    }

    #[test]
    fn timeout_scenario_goes_stale() {
        let result = run_fixture(TIMEOUT_SCENARIO);
        assert!(result.quiescent);
        assert!(result.transcript.contains("timeout\t"));
        assert_eq!(
            result.snapshots["alpha"].conversations[0].status,
            ConversationStatus::Stale
        );
    }

    #[test]
    fn same_seed_reproduces_bytes() {
        let a = run_fixture(VICKREY_AUCTION_SCENARIO);
        let b = run_fixture(VICKREY_AUCTION_SCENARIO);
        assert_eq!(a.transcript, b.transcript);
        assert!(verify_transcript(&a.transcript, &b.transcript).is_ok());
    }

    #[test]
    fn different_seed_changes_draws_not_shape() {
        let scenario = parse_scenario(VICKREY_AUCTION_SCENARIO).unwrap();
        let mut reseeded = scenario.clone();
        reseeded.seed = scenario.seed + 1;
        let a = run(&scenario, &fixtures::fixture_protocols()).unwrap();
        let b = run(&reseeded, &fixtures::fixture_protocols()).unwrap();
        assert_ne!(a.transcript, b.transcript);
        assert_eq!(
            message_lines(&a.transcript).len(),
            message_lines(&b.transcript).len()
        );
        for result in [&a, &b] {
            assert!(result.snapshots.values().all(|s| s
                .conversations
                .iter()
                .all(|c| c.status == ConversationStatus::Completed)));
        }
    }

    #[test]
    fn verify_reports_first_diff_line() {
        let err = verify_transcript("a\nb\nc", "a\nX\nc").unwrap_err();
        match err {
            ScenarioError::TranscriptMismatch(line, expected, actual) => {
                assert_eq!(line, 2);
                assert_eq!(expected, "b");
                assert_eq!(actual, "X");
            }
            other => panic!("unexpected error {:?}", other),
        }
    }

    #[test]
    fn transport_preserves_pair_order() {
        // two messages from one sender to one receiver in one tick arrive in
        // send order
        let text = "\
seed: 1
agent: a
agent: b
rule a: on init do start(is.lill.examples.request-response.1.0, b, request); start(is.lill.examples.request-response.1.0, b, request)
";
        let scenario = parse_scenario(text).unwrap();
        let result = run(&scenario, &fixtures::fixture_protocols()).unwrap();
        let lines = message_lines(&result.transcript);
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("conversation-id a-1"));
        assert!(lines[1].contains("conversation-id a-2"));
        let b = &result.snapshots["b"];
        assert_eq!(b.conversations.len(), 2);
        assert_eq!(b.conversations[0].cid, "a-1");
    }

    #[test]
    fn scenario_parse_errors() {
        assert!(matches!(
            parse_scenario("bogus-line"),
            Err(ScenarioError::Parse(1, _))
        ));
        assert!(matches!(
            parse_scenario("rule ghost: on init do archive(x)"),
            Err(ScenarioError::UnknownAgent(_))
        ));
        assert!(matches!(
            parse_scenario("agent: a\nagent: a"),
            Err(ScenarioError::DuplicateAgent(_))
        ));
    }

    #[test]
    fn unknown_action_and_receiver_fail() {
        let text = "agent: a\nrule a: on init do frobnicate(x)";
        let scenario = parse_scenario(text).unwrap();
        assert!(matches!(
            run(&scenario, &fixtures::fixture_protocols()),
            Err(ScenarioError::BadAction(..))
        ));

        let text = "agent: a\nrule a: on init do start(is.lill.examples.request-response.1.0, ghost, request)";
        let scenario = parse_scenario(text).unwrap();
        assert!(matches!(
            run(&scenario, &fixtures::fixture_protocols()),
            Err(ScenarioError::UnknownReceiver(_))
        ));
    }
}
