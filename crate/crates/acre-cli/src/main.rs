//! Command-line frontend for the acre conversation engine: validate and
//! render protocol definitions, manage protocol repositories, replay message
//! traces and run simulation scenarios.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use acre_core::fixtures;
use acre_core::harness;
use acre_core::manager::replay_trace_full;
use acre_core::protocol::{
    load_protocol, render_dot, resolve_imports, validate_protocol, Protocol, ProtocolSet,
};
use acre_core::repository::{parse_descriptor, FsTransport, ProtocolStore, RepoError, Transport};

const EXIT_OK: u8 = 0;
const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(
    name = "acre",
    about = "Conversation engine tooling: protocol validation, repositories, trace replay, simulation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StoreOpt {
    /// Protocol store root (or the literal `builtin` for the bundled
    /// fixture protocols). Defaults to $ACRE_STORE, then ./acre-store.
    #[arg(long)]
    store: Option<String>,
}

impl StoreOpt {
    fn resolve(&self) -> String {
        self.store
            .clone()
            .or_else(|| std::env::var("ACRE_STORE").ok())
            .unwrap_or_else(|| "./acre-store".to_string())
    }

    fn explicit(&self) -> bool {
        self.store.is_some() || std::env::var("ACRE_STORE").is_ok()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check protocol definition files and report errors and warnings.
    Validate {
        /// Protocol definition files (.acr).
        files: Vec<PathBuf>,
        #[command(flatten)]
        store: StoreOpt,
    },
    /// Render a protocol FSM to DOT or JSON.
    Render {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = RenderFormat::Dot)]
        format: RenderFormat,
        #[command(flatten)]
        store: StoreOpt,
    },
    /// Protocol repository operations.
    #[command(subcommand)]
    Repo(RepoCommand),
    /// Replay a recorded message trace through a conversation manager and
    /// print its event records.
    Trace {
        /// Agent whose perspective the trace is replayed from.
        #[arg(long)]
        agent: String,
        /// Also print the final manager snapshot records.
        #[arg(long)]
        snapshot: bool,
        /// `records` (stable, golden-testable) or `human`.
        #[arg(long, value_enum, default_value_t = TraceFormat::Records)]
        format: TraceFormat,
        #[command(flatten)]
        store: StoreOpt,
        trace_file: PathBuf,
    },
    /// Run a simulation scenario and print the transcript.
    Simulate {
        scenario_file: PathBuf,
        /// Compare the transcript byte-for-byte against a stored one.
        #[arg(long)]
        verify: Option<PathBuf>,
        #[command(flatten)]
        store: StoreOpt,
    },
}

#[derive(Subcommand)]
enum RepoCommand {
    /// List the protocols a repository offers, one `namespace name version`
    /// line each.
    List { source: String },
    /// Download all protocols of a repository into the local store.
    Fetch {
        source: String,
        #[command(flatten)]
        store: StoreOpt,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RenderFormat {
    Dot,
    Json,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum TraceFormat {
    Records,
    Human,
}

/// Plain HTTP GET for remote repositories; filesystem reads otherwise.
struct AutoTransport;

impl Transport for AutoTransport {
    fn fetch(&self, location: &str) -> Result<String, RepoError> {
        if location.starts_with("http://") || location.starts_with("https://") {
            let mut response = ureq::get(location).call().map_err(|e| RepoError::Fetch {
                location: location.to_string(),
                reason: e.to_string(),
            })?;
            response
                .body_mut()
                .read_to_string()
                .map_err(|e| RepoError::Fetch {
                    location: location.to_string(),
                    reason: e.to_string(),
                })
        } else {
            FsTransport.fetch(location)
        }
    }
}

/// Loads the protocol set backing validate/render/trace/simulate.
fn load_protocol_set(store: &str) -> anyhow::Result<ProtocolSet> {
    if store == "builtin" {
        return Ok(fixtures::fixture_protocols());
    }
    let (store, warnings) = ProtocolStore::load(store)?;
    for warning in warnings {
        eprintln!("warning: {}", warning);
    }
    Ok(store.protocols())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {:#}", e);
            // anything that escapes a handler is an input/output problem
            ExitCode::from(EXIT_IO)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Validate { files, store } => cmd_validate(files, store),
        Command::Render {
            file,
            format,
            store,
        } => cmd_render(file, format, store),
        Command::Repo(RepoCommand::List { source }) => cmd_repo_list(source),
        Command::Repo(RepoCommand::Fetch { source, store }) => cmd_repo_fetch(source, store),
        Command::Trace {
            agent,
            snapshot,
            format,
            store,
            trace_file,
        } => cmd_trace(agent, snapshot, format, store, trace_file),
        Command::Simulate {
            scenario_file,
            verify,
            store,
        } => cmd_simulate(scenario_file, verify, store),
    }
}

/// Loads a protocol file and resolves its imports against the store.
fn load_resolved(path: &PathBuf, store: &StoreOpt) -> anyhow::Result<Result<Protocol, String>> {
    let xml = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let protocol = match load_protocol(&xml) {
        Ok(p) => p,
        Err(e) => return Ok(Err(e.to_string())),
    };
    if protocol.imports.is_empty() {
        return Ok(Ok(protocol));
    }
    if !store.explicit() && !PathBuf::from(store.resolve()).exists() {
        return Ok(Err(format!(
            "protocol imports {}; pass --store to resolve imports",
            protocol.imports[0]
        )));
    }
    let set = load_protocol_set(&store.resolve())?;
    let resolved = resolve_imports(&protocol, &|id| set.get(id).cloned());
    Ok(resolved.map_err(|e| e.to_string()))
}

fn cmd_validate(files: Vec<PathBuf>, store: StoreOpt) -> anyhow::Result<u8> {
    if files.is_empty() {
        eprintln!("error: no files given");
        return Ok(EXIT_USAGE);
    }
    let mut failed = false;
    for path in &files {
        match load_resolved(path, &store)? {
            Err(e) => {
                println!("{}: error: {}", path.display(), e);
                failed = true;
            }
            Ok(protocol) => {
                let report = validate_protocol(&protocol);
                for error in &report.errors {
                    println!("{}: error: {}", path.display(), error);
                }
                for warning in &report.warnings {
                    println!("{}: warning: {}", path.display(), warning);
                }
                if report.is_ok() {
                    println!("{}: ok", path.display());
                } else {
                    failed = true;
                }
            }
        }
    }
    Ok(if failed { EXIT_FAILURE } else { EXIT_OK })
}

fn render_json(protocol: &Protocol) -> serde_json::Value {
    let initial = protocol.initial_state().map(str::to_string).ok();
    let finals: Vec<&str> = protocol.final_states().into_iter().collect();
    serde_json::json!({
        "id": protocol.id.to_string(),
        "namespace": protocol.id.namespace(),
        "name": protocol.id.name(),
        "version": protocol.id.version(),
        "description": protocol.description,
        "states": protocol.states,
        "initial": initial,
        "final": finals,
        "transitions": protocol.transitions.iter().map(|t| serde_json::json!({
            "from": t.from_state,
            "to": t.to_state,
            "performative": t.performative.to_string(),
            "sender": t.sender.to_string(),
            "receiver": t.receiver.to_string(),
            "content": t.content.to_string(),
            "imported": t.imported,
        })).collect::<Vec<_>>(),
    })
}

fn cmd_render(file: PathBuf, format: RenderFormat, store: StoreOpt) -> anyhow::Result<u8> {
    let protocol = match load_resolved(&file, &store)? {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {}: {}", file.display(), e);
            return Ok(EXIT_FAILURE);
        }
    };
    match format {
        RenderFormat::Dot => print!("{}", render_dot(&protocol)),
        RenderFormat::Json => {
            println!("{}", serde_json::to_string_pretty(&render_json(&protocol))?)
        }
    }
    Ok(EXIT_OK)
}

fn cmd_repo_list(source: String) -> anyhow::Result<u8> {
    let descriptor_xml = AutoTransport
        .fetch(&format!("{}/repository.xml", source.trim_end_matches('/')))
        .map_err(|e| anyhow!(e))?;
    let descriptor = parse_descriptor(&descriptor_xml)?;
    for id in &descriptor.entries {
        println!("{} {} {}", id.namespace(), id.name(), id.version());
    }
    Ok(EXIT_OK)
}

fn cmd_repo_fetch(source: String, store: StoreOpt) -> anyhow::Result<u8> {
    let root = store.resolve();
    if root == "builtin" {
        eprintln!("error: cannot fetch into the builtin store");
        return Ok(EXIT_USAGE);
    }
    let (mut store, warnings) = ProtocolStore::load(&root)?;
    for warning in warnings {
        eprintln!("warning: {}", warning);
    }
    let report = store.fetch_repository(&source, &AutoTransport)?;
    for id in &report.added {
        println!("added {}", id);
    }
    for id in &report.skipped {
        println!("skipped {} (already stored)", id);
    }
    let mut had_io_error = false;
    for (id, error) in &report.errors {
        eprintln!("error: {}: {}", id, error);
        if error.contains("cannot fetch") {
            had_io_error = true;
        }
    }
    println!("added {}", report.added.len());
    Ok(if report.errors.is_empty() {
        EXIT_OK
    } else if had_io_error {
        EXIT_IO
    } else {
        EXIT_FAILURE
    })
}

/// Loose prose rendering of a record line; never golden-tested.
fn humanize(record: &str) -> String {
    let fields: Vec<&str> = record.split('\t').collect();
    match fields.as_slice() {
        ["started", cid] => format!("conversation {} started", cid),
        ["advanced", cid, state, length] => {
            format!(
                "conversation {} advanced to {} ({} messages)",
                cid, state, length
            )
        }
        ["completed", cid] => format!("conversation {} completed", cid),
        ["failed", cid] => format!("conversation {} failed", cid),
        ["unmatched", performative, sender, content] => {
            format!("unmatched {} from {} ({})", performative, sender, content)
        }
        ["ambiguous", performative, sender, content] => {
            format!("ambiguous {} from {} ({})", performative, sender, content)
        }
        ["bindings", cid, dump] => format!("conversation {} bindings: {}", cid, dump),
        ["timeout", cid] => format!("conversation {} timed out", cid),
        _ => fields.join(" "),
    }
}

fn cmd_trace(
    agent: String,
    snapshot: bool,
    format: TraceFormat,
    store: StoreOpt,
    trace_file: PathBuf,
) -> anyhow::Result<u8> {
    let protocols = load_protocol_set(&store.resolve())?;
    let trace = fs::read_to_string(&trace_file)
        .with_context(|| format!("reading {}", trace_file.display()))?;
    match replay_trace_full(&agent, &protocols, &trace) {
        Ok((records, final_snapshot)) => {
            let mut output = records;
            if snapshot {
                output.push_str(&final_snapshot.render_records());
            }
            match format {
                TraceFormat::Records => print!("{}", output),
                TraceFormat::Human => {
                    for line in output.lines() {
                        println!("{}", humanize(line));
                    }
                }
            }
            Ok(EXIT_OK)
        }
        Err(e) => {
            eprintln!("error: {}", e);
            Ok(EXIT_FAILURE)
        }
    }
}

fn cmd_simulate(
    scenario_file: PathBuf,
    verify: Option<PathBuf>,
    store: StoreOpt,
) -> anyhow::Result<u8> {
    let text = fs::read_to_string(&scenario_file)
        .with_context(|| format!("reading {}", scenario_file.display()))?;
    let scenario = harness::parse_scenario(&text)?;
    // precedence: --store / ACRE_STORE, then the scenario's store field,
    // then the builtin fixture set
    let store_source = if store.explicit() {
        store.resolve()
    } else {
        scenario.store.clone().unwrap_or_else(|| "builtin".into())
    };
    let protocols = load_protocol_set(&store_source)?;
    let result = harness::run(&scenario, &protocols)?;
    if !result.quiescent {
        eprintln!("error: not quiescent after {} cycles", result.ticks);
        return Ok(EXIT_FAILURE);
    }
    print!("{}", result.transcript);

    let expected_path = verify.or_else(|| {
        scenario.expect_transcript.as_ref().map(|p| {
            scenario_file
                .parent()
                .unwrap_or(&PathBuf::from("."))
                .join(p)
        })
    });
    if let Some(path) = expected_path {
        let expected =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        if let Err(e) = harness::verify_transcript(&expected, &result.transcript) {
            eprintln!("error: {}", e);
            return Ok(EXIT_FAILURE);
        }
    }
    Ok(EXIT_OK)
}
