use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use dataenclave_core::audit::{read_head, verify_bytes, VerifyOutcome};
use dataenclave_core::broker::protocol::{is_policy_code, Response};
use dataenclave_core::broker::server::Server;
use dataenclave_core::broker::{Broker, BrokerConfig};
use dataenclave_core::contract::{parse_contract, validate_contract};
use dataenclave_core::store::{SchemaCatalog, TableStore};

const OK: u8 = 0;
const DENIED: u8 = 1;
const USAGE: u8 = 2;
const BROKER: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "enclavectl", version, about = "Operate a data enclave broker")]
struct Cli {
    /// Broker address.
    #[arg(long, global = true, env = "ENCLAVECTL_ENDPOINT", default_value = "127.0.0.1:7411")]
    endpoint: String,
    /// Bearer token presented to the broker.
    #[arg(long, global = true, env = "ENCLAVECTL_TOKEN")]
    token: Option<String>,
    /// Print the broker's result as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Identity recorded as the actor for operator actions.
    #[arg(long, global = true, env = "ENCLAVECTL_ACTOR")]
    actor: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the broker in the foreground.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Listen address; defaults to --endpoint.
        #[arg(long)]
        listen: Option<String>,
    },
    #[command(subcommand)]
    Contract(ContractCmd),
    #[command(subcommand)]
    Enclave(EnclaveCmd),
    #[command(subcommand)]
    Session(SessionCmd),
    /// Run one statement in a session.
    Query { session_id: String, statement: String },
    /// List alerts.
    Alerts {
        #[arg(long)]
        rule: Option<String>,
        #[arg(long)]
        contract: Option<String>,
        #[arg(long)]
        enclave: Option<String>,
    },
    #[command(subcommand)]
    Audit(AuditCmd),
    #[command(subcommand)]
    Bg(BgCmd),
    #[command(subcommand)]
    Clock(ClockCmd),
    /// Expire everything past its TTL.
    Sweep,
    /// List grants of live contracts.
    Grants,
    /// Broker summary.
    Status,
}

#[derive(Subcommand, Debug)]
enum ContractCmd {
    Submit { file: PathBuf },
    Activate { contract_id: String },
    Revoke {
        contract_id: String,
        #[arg(long)]
        reason: Option<String>,
    },
    /// Parse and validate offline.
    Lint {
        file: PathBuf,
        /// Validate against the tables of this broker config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum EnclaveCmd {
    /// Create, provision, seal and open an enclave for a contract.
    Broker { contract_id: String },
    Destroy { enclave_id: String },
}

#[derive(Subcommand, Debug)]
enum SessionCmd {
    Open { enclave_id: String },
    Close { session_id: String },
}

#[derive(Subcommand, Debug)]
enum AuditCmd {
    Export(ExportArgs),
    /// Verify the hash chain, remotely or on a ledger file.
    Verify {
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    contract: Option<String>,
    #[arg(long = "by")]
    by_actor: Option<String>,
    #[arg(long)]
    since: Option<i64>,
    #[arg(long)]
    until: Option<i64>,
}

#[derive(Subcommand, Debug)]
enum BgCmd {
    Request {
        #[arg(long)]
        account: String,
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        justification: String,
    },
    Approve {
        request_id: String,
        #[arg(long)]
        approver: String,
    },
    Deny { request_id: String },
}

#[derive(Subcommand, Debug)]
enum ClockCmd {
    Tick { seconds: u64 },
}

enum Outcome {
    Done(u8),
    Usage(String),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(OK);
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("invalid usage");
            eprintln!("{line}");
            return ExitCode::from(USAGE);
        }
    };
    match run(cli) {
        Ok(Outcome::Done(code)) => ExitCode::from(code),
        Ok(Outcome::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(USAGE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(BROKER)
        }
    }
}

fn read_text(path: &Path) -> Result<String, Outcome> {
    std::fs::read_to_string(path)
        .map_err(|e| Outcome::Usage(format!("cannot read `{}`: {e}", path.display())))
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let actor = cli.actor.clone();
    let with_actor = |mut args: Value| {
        if let Some(a) = &actor {
            args["actor"] = json!(a);
        }
        args
    };
    let (op, args) = match &cli.command {
        Command::Serve { config, listen } => {
            return serve(config, listen.as_deref().unwrap_or(&cli.endpoint))
        }
        Command::Contract(ContractCmd::Lint { file, config }) => {
            return Ok(lint(file, config.as_deref(), cli.json))
        }
        Command::Audit(AuditCmd::Verify { file: Some(file) }) => {
            return Ok(verify_file(file, cli.json))
        }
        Command::Contract(ContractCmd::Submit { file }) => match read_text(file) {
            Ok(text) => ("submit_contract", with_actor(json!({"text": text}))),
            Err(o) => return Ok(o),
        },
        Command::Contract(ContractCmd::Activate { contract_id }) => (
            "activate_contract",
            with_actor(json!({"contract_id": contract_id})),
        ),
        Command::Contract(ContractCmd::Revoke { contract_id, reason }) => (
            "revoke_contract",
            with_actor(json!({"contract_id": contract_id, "reason": reason})),
        ),
        Command::Enclave(EnclaveCmd::Broker { contract_id }) => {
            ("broker_enclave", json!({"contract_id": contract_id}))
        }
        Command::Enclave(EnclaveCmd::Destroy { enclave_id }) => {
            ("destroy_enclave", json!({"enclave_id": enclave_id}))
        }
        Command::Session(SessionCmd::Open { enclave_id }) => {
            if cli.token.is_none() {
                return Ok(Outcome::Usage("session open needs --token".into()));
            }
            ("open_session", json!({"enclave_id": enclave_id}))
        }
        Command::Session(SessionCmd::Close { session_id }) => {
            ("close_session", json!({"session_id": session_id}))
        }
        Command::Query {
            session_id,
            statement,
        } => (
            "query",
            json!({"session_id": session_id, "statement": statement}),
        ),
        Command::Alerts {
            rule,
            contract,
            enclave,
        } => (
            "alerts",
            json!({"rule": rule, "contract_id": contract, "enclave_id": enclave}),
        ),
        Command::Audit(AuditCmd::Export(a)) => (
            "audit_export",
            json!({
                "kind": a.kind,
                "contract_id": a.contract,
                "actor": a.by_actor,
                "since": a.since,
                "until": a.until,
            }),
        ),
        Command::Audit(AuditCmd::Verify { file: None }) => ("audit_verify", json!({})),
        Command::Bg(BgCmd::Request {
            account,
            template,
            justification,
        }) => match read_text(template) {
            Ok(text) => (
                "bg_request",
                json!({"account": account, "template": text, "justification": justification}),
            ),
            Err(o) => return Ok(o),
        },
        Command::Bg(BgCmd::Approve {
            request_id,
            approver,
        }) => (
            "bg_approve",
            json!({"request_id": request_id, "approver": approver}),
        ),
        Command::Bg(BgCmd::Deny { request_id }) => {
            ("bg_deny", with_actor(json!({"request_id": request_id})))
        }
        Command::Clock(ClockCmd::Tick { seconds }) => ("tick", json!({"seconds": seconds})),
        Command::Sweep => ("sweep", json!({})),
        Command::Grants => ("live_grants", json!({})),
        Command::Status => ("status", json!({})),
    };
    let response = call(&cli.endpoint, op, args, cli.token.as_deref())?;
    Ok(Outcome::Done(report(op, response, cli.json)))
}

fn call(endpoint: &str, op: &str, args: Value, token: Option<&str>) -> anyhow::Result<Response> {
    let args: Map<String, Value> = match args {
        Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    };
    let mut request = json!({"op": op, "args": args, "id": "1"});
    if let Some(t) = token {
        request["token"] = json!(t);
    }
    let mut stream = TcpStream::connect(endpoint)
        .with_context(|| format!("cannot reach broker at {endpoint}"))?;
    writeln!(stream, "{request}")?;
    stream.flush()?;
    let mut line = String::new();
    BufReader::new(stream)
        .read_line(&mut line)
        .context("reading broker response")?;
    if line.is_empty() {
        anyhow::bail!("broker closed the connection");
    }
    serde_json::from_str(&line).context("malformed broker response")
}

/// Prints a response and picks the exit code.
fn report(op: &str, response: Response, as_json: bool) -> u8 {
    if let Some(err) = response.error {
        let code = if is_policy_code(&err.code) {
            DENIED
        } else if matches!(err.code.as_str(), "BadRequest" | "UnknownOp") {
            USAGE
        } else {
            BROKER
        };
        if as_json {
            println!("{}", json!({"code": err.code, "message": err.message}));
        } else if code == DENIED {
            println!("{}: {}", err.code, err.message);
        } else {
            eprintln!("{}: {}", err.code, err.message);
        }
        return code;
    }
    let result = response.result.unwrap_or(Value::Null);
    if as_json {
        println!("{result}");
    } else {
        print_human(op, &result);
    }
    if op == "audit_verify" && result != json!({"status": "Ok"}) {
        return DENIED;
    }
    OK
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn print_human(op: &str, v: &Value) {
    match (op, v) {
        ("query", _) => {
            if let Some(cols) = v["columns"].as_array() {
                let header: Vec<_> = cols.iter().map(scalar).collect();
                println!("{}", header.join("\t"));
            }
            for row in v["rows"].as_array().into_iter().flatten() {
                let cells: Vec<_> = row.as_array().into_iter().flatten().map(scalar).collect();
                println!("{}", cells.join("\t"));
            }
            if v["truncated"] == json!(true) {
                println!("(truncated)");
            }
        }
        ("audit_verify", _) => match v["seq"].as_u64() {
            Some(seq) => println!("FirstBadSeq {seq}"),
            None => println!("Ok"),
        },
        ("alerts", Value::Array(items)) => {
            for a in items {
                println!(
                    "{} {} {} contract={} enclave={} session={} t={}",
                    scalar(&a["alert_id"]),
                    scalar(&a["severity"]),
                    scalar(&a["rule"]),
                    scalar(&a["contract_id"]),
                    scalar(&a["enclave_id"]),
                    scalar(&a["session_id"]),
                    a["timestamp"]
                );
            }
        }
        (_, Value::Array(items)) => {
            for item in items {
                println!("{item}");
            }
        }
        (_, Value::Object(m)) => {
            for (k, val) in m {
                println!("{k}: {}", scalar(val));
            }
        }
        (_, other) => println!("{}", scalar(other)),
    }
}

fn serve(config: &Path, listen: &str) -> anyhow::Result<Outcome> {
    let cfg = match BrokerConfig::from_toml_file(config) {
        Ok(c) => c,
        Err(e) => return Ok(Outcome::Usage(e)),
    };
    let broker = Broker::open(&cfg).map_err(|e| anyhow::anyhow!("{}: {e}", e.code()))?;
    let server = Server::bind(listen, broker).with_context(|| format!("cannot listen on {listen}"))?;
    println!("listening on {}", server.local_addr()?);
    std::io::stdout().flush()?;
    server.run()?;
    Ok(Outcome::Done(OK))
}

fn lint(file: &Path, config: Option<&Path>, as_json: bool) -> Outcome {
    let text = match read_text(file) {
        Ok(t) => t,
        Err(o) => return o,
    };
    let contract = match parse_contract(&text) {
        Ok(c) => c,
        Err(e) => {
            if as_json {
                println!("{}", json!({"code": "ParseError", "message": e.to_string()}));
            } else {
                println!("ParseError: {e}");
            }
            return Outcome::Done(DENIED);
        }
    };
    let catalog = match config {
        None => None,
        Some(path) => match load_catalog(path) {
            Ok(c) => Some(c),
            Err(e) => return Outcome::Usage(e),
        },
    };
    let report = catalog.map(|c| validate_contract(&contract, &c));
    match report {
        Some(r) if !r.ok => {
            if as_json {
                println!("{}", serde_json::to_string(&r).expect("report serializes"));
            } else {
                for p in &r.problems {
                    println!("{:?}: {}", p.code, p.message);
                }
            }
            Outcome::Done(DENIED)
        }
        _ => {
            if as_json {
                println!("{}", json!({"contract_id": contract.contract_id, "ok": true}));
            } else {
                println!("ok");
            }
            Outcome::Done(OK)
        }
    }
}

fn load_catalog(path: &Path) -> Result<SchemaCatalog, String> {
    let cfg = BrokerConfig::from_toml_file(path)?;
    let mut store = TableStore::new();
    for t in &cfg.tables {
        let name = t.name.parse()?;
        store.load_csv(name, &t.path).map_err(|e| e.to_string())?;
    }
    Ok(store.catalog())
}

fn verify_file(path: &Path, as_json: bool) -> Outcome {
    let raw = match std::fs::read(path) {
        Ok(r) => r,
        Err(e) => return Outcome::Usage(format!("cannot read `{}`: {e}", path.display())),
    };
    let head = read_head(path);
    let outcome = verify_bytes(&raw, head.as_ref());
    let value = serde_json::to_value(outcome).expect("outcome serializes");
    if as_json {
        println!("{value}");
    } else {
        print_human("audit_verify", &value);
    }
    match outcome {
        VerifyOutcome::Ok => Outcome::Done(OK),
        VerifyOutcome::FirstBadSeq(_) => Outcome::Done(DENIED),
    }
}
