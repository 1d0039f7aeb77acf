//! The `agentdns` command line.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use agentdns_core::discovery::DiscoveryQuery;
use agentdns_core::naming::CategoryPath;
use agentdns_core::registry::{PriceModel, ServiceRecord, ServiceStatus};
use agentdns_core::{CredentialInput, ServiceName};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::api::{RegisterServiceRequest, UpdateServiceRequest};
use crate::client::{ClientError, RootClient};
use crate::config::ServerConfig;
use crate::harness::{self, ActionPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_API: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "agentdns", version, about = "AgentDNS root server and admin client")]
pub struct Cli {
    /// Root server base URL.
    #[arg(long, global = true, env = "AGENTDNS_SERVER", default_value = "http://127.0.0.1:8080")]
    pub server: String,
    /// Agent bearer token.
    #[arg(long, global = true, env = "AGENTDNS_TOKEN", hide_env_values = true, allow_hyphen_values = true)]
    pub token: Option<String>,
    /// Admin key for registry and billing administration.
    #[arg(long, global = true, env = "AGENTDNS_ADMIN_KEY", hide_env_values = true, allow_hyphen_values = true)]
    pub admin_key: Option<String>,
    /// Print JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a new config file with fresh keys.
    Init {
        #[arg(long, default_value = "agentdns.toml")]
        config: PathBuf,
        #[arg(long, default_value = "agentdns-data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Run the root server until interrupted.
    Serve {
        #[arg(long, env = "AGENTDNS_CONFIG", default_value = "agentdns.toml")]
        config: PathBuf,
    },
    #[command(subcommand)]
    Org(OrgCommand),
    #[command(subcommand)]
    Service(ServiceCommand),
    #[command(subcommand)]
    Agent(AgentCommand),
    /// Discover services by natural-language description.
    Search {
        text: String,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        /// Only services under this category path.
        #[arg(long)]
        category: Option<String>,
        #[arg(long)]
        max_price: Option<u64>,
    },
    /// Latest public metadata for an identifier.
    Resolve { name: String },
    #[command(subcommand)]
    Auth(AuthCommand),
    #[command(subcommand)]
    Billing(BillingCommand),
    /// Run the case study against a throwaway server and mock vendors.
    Demo {
        /// Plan file; defaults to the bundled case-study plan.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum OrgCommand {
    Register { org_id: String, display_name: String },
    Verify { org_id: String },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StatusArg {
    Active,
    Deprecated,
}

#[derive(Debug, Subcommand)]
pub enum ServiceCommand {
    Register {
        #[arg(long)]
        org: String,
        /// Slash-separated, e.g. `search/web`.
        #[arg(long)]
        category: String,
        #[arg(long)]
        name: String,
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        capabilities: String,
        /// Micro-credits per call.
        #[arg(long)]
        price: u64,
        #[arg(long = "protocol", default_values_t = vec!["HTTP".to_string()])]
        protocols: Vec<String>,
        #[arg(long)]
        ttl: Option<u64>,
        #[arg(long, requires = "credential_secret")]
        credential_header: Option<String>,
        #[arg(long, env = "AGENTDNS_CREDENTIAL_SECRET", hide_env_values = true, allow_hyphen_values = true, requires = "credential_header")]
        credential_secret: Option<String>,
    },
    Update {
        name: String,
        #[arg(long)]
        expected_version: u64,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        capabilities: Option<String>,
        #[arg(long)]
        price: Option<u64>,
        #[arg(long = "protocol")]
        protocols: Vec<String>,
        #[arg(long)]
        ttl: Option<u64>,
        #[arg(long, value_enum)]
        status: Option<StatusArg>,
        #[arg(long, requires = "credential_secret")]
        credential_header: Option<String>,
        #[arg(long, env = "AGENTDNS_CREDENTIAL_SECRET", hide_env_values = true, allow_hyphen_values = true, requires = "credential_header")]
        credential_secret: Option<String>,
    },
    Delete { name: String },
    Get { name: String },
}

#[derive(Debug, Subcommand)]
pub enum AgentCommand {
    /// Create an agent; prints its access key once.
    Create { agent_id: String },
}

#[derive(Debug, Subcommand)]
pub enum AuthCommand {
    /// Exchange an access key for a bearer token.
    Token {
        #[arg(long)]
        agent_id: String,
        #[arg(long, env = "AGENTDNS_ACCESS_KEY", hide_env_values = true, allow_hyphen_values = true)]
        access_key: String,
        #[arg(long)]
        ttl: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum BillingCommand {
    Deposit {
        amount: u64,
        #[arg(long)]
        agent_id: String,
    },
    Balance,
    Statement {
        /// `agent:<id>`, `vendor:<org>`, `platform` or `external` (admin only
        /// for accounts other than your own).
        #[arg(long)]
        account: Option<String>,
        #[arg(long)]
        from: Option<i64>,
        #[arg(long)]
        to: Option<i64>,
    },
    Settle { org_id: String },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Api(ClientError),
    Failed(String),
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        CliError::Api(e)
    }
}

/// What a command prints: JSON for `--json`, text otherwise.
struct Output {
    json: Value,
    human: String,
    ok: bool,
}

impl Output {
    fn new<T: Serialize>(value: &T, human: String) -> Self {
        Self {
            json: serde_json::to_value(value).expect("serializable"),
            human,
            ok: true,
        }
    }
}

/// Renders rows as a left-aligned text table.
pub fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:<w$}", c, w = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn parse_name(text: &str) -> Result<ServiceName, CliError> {
    ServiceName::parse(text).map_err(|e| CliError::Usage(format!("invalid identifier `{text}`: {e}")))
}

fn record_table(r: &ServiceRecord) -> String {
    let rows = vec![
        vec!["name".into(), r.name.to_string()],
        vec!["version".into(), r.version.to_string()],
        vec!["status".into(), format!("{:?}", r.status).to_lowercase()],
        vec!["endpoint".into(), r.vendor_endpoint.clone()],
        vec!["protocols".into(), r.protocols.iter().cloned().collect::<Vec<_>>().join(",")],
        vec!["price".into(), r.pricing.amount.to_string()],
        vec!["ttl".into(), r.ttl_seconds.map(|t| t.to_string()).unwrap_or_else(|| "default".into())],
        vec!["credential".into(), r.vendor_credential_ref.clone().unwrap_or_else(|| "-".into())],
        vec!["capabilities".into(), r.capabilities.clone()],
    ];
    table(&["field", "value"], &rows)
}

fn client(cli: &Cli) -> RootClient {
    let mut c = RootClient::new(&cli.server);
    if let Some(t) = &cli.token {
        c = c.with_token(t.clone());
    }
    if let Some(k) = &cli.admin_key {
        c = c.with_admin_key(k.clone());
    }
    c
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub async fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match execute(&cli).await {
        Ok(output) => {
            if cli.json {
                let _ = writeln!(out, "{}", serde_json::to_string_pretty(&output.json).unwrap());
            } else {
                let _ = write!(out, "{}", output.human);
            }
            if output.ok {
                EXIT_OK
            } else {
                EXIT_API
            }
        }
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Api(e)) => {
            match (&e, cli.json) {
                (ClientError::Api(api), true) => {
                    let _ = writeln!(err, "{}", serde_json::to_string_pretty(api).unwrap());
                }
                _ => {
                    let _ = writeln!(err, "error: {e}");
                }
            }
            EXIT_API
        }
        Err(CliError::Failed(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_API
        }
    }
}

async fn execute(cli: &Cli) -> Result<Output, CliError> {
    let c = client(cli);
    match &cli.command {
        Command::Init {
            config,
            data_dir,
            listen,
            force,
        } => {
            if config.exists() && !force {
                return Err(CliError::Usage(format!(
                    "{} already exists (use --force to overwrite)",
                    config.display()
                )));
            }
            let cfg = ServerConfig::generate(listen, Some(data_dir.clone()));
            cfg.validate(&config.display().to_string())
                .map_err(|e| CliError::Usage(e.to_string()))?;
            std::fs::write(config, cfg.to_toml())
                .map_err(|e| CliError::Failed(format!("{}: {e}", config.display())))?;
            let summary = serde_json::json!({
                "config": config,
                "listen": cfg.listen,
                "data_dir": data_dir,
            });
            Ok(Output::new(
                &summary,
                format!(
                    "wrote {}\nadmin key and master key are in the file; keep it private\n",
                    config.display()
                ),
            ))
        }
        Command::Serve { config } => {
            let shown = config.display().to_string();
            let cfg = ServerConfig::load(config).map_err(|e| CliError::Usage(e.to_string()))?;
            crate::server::serve(&cfg, &shown)
                .await
                .map_err(|e| CliError::Failed(e.to_string()))?;
            Ok(Output::new(&serde_json::json!({ "stopped": true }), "stopped\n".into()))
        }
        Command::Org(OrgCommand::Register { org_id, display_name }) => {
            let org = c.register_org(org_id, display_name).await?;
            Ok(Output::new(&org, format!("registered {} (unverified)\n", org.org_id)))
        }
        Command::Org(OrgCommand::Verify { org_id }) => {
            let org = c.verify_org(org_id).await?;
            Ok(Output::new(&org, format!("verified {}\n", org.org_id)))
        }
        Command::Service(cmd) => service(&c, cmd).await,
        Command::Agent(AgentCommand::Create { agent_id }) => {
            let created = c.create_agent(agent_id).await?;
            let human = format!(
                "agent {}\naccess key {}\n(shown once)\n",
                created.agent_id, created.access_key
            );
            Ok(Output::new(&created, human))
        }
        Command::Search {
            text,
            k,
            category,
            max_price,
        } => {
            let category_filter = category
                .as_deref()
                .map(|s| s.parse::<CategoryPath>())
                .transpose()
                .map_err(|e| CliError::Usage(format!("invalid category: {e}")))?;
            let q = DiscoveryQuery {
                text: text.clone(),
                k: *k,
                category_filter,
                max_price: *max_price,
            };
            let hits = c.search(&q).await?;
            let rows: Vec<Vec<String>> = hits
                .iter()
                .map(|h| {
                    vec![
                        h.rank.to_string(),
                        format!("{:.3}", h.score),
                        h.name.to_string(),
                        h.pricing.amount.to_string(),
                        h.protocols.iter().cloned().collect::<Vec<_>>().join(","),
                    ]
                })
                .collect();
            Ok(Output::new(&hits, table(&["rank", "score", "name", "price", "protocols"], &rows)))
        }
        Command::Resolve { name } => {
            parse_name(name)?;
            let res = c.resolve(name).await?;
            let r = &res.record;
            let rows = vec![
                vec!["name".into(), r.name.to_string()],
                vec!["version".into(), r.version.to_string()],
                vec!["status".into(), format!("{:?}", r.status).to_lowercase()],
                vec!["proxy_endpoint".into(), r.proxy_endpoint.clone()],
                vec!["protocols".into(), r.protocols.iter().cloned().collect::<Vec<_>>().join(",")],
                vec!["price".into(), r.pricing.amount.to_string()],
                vec!["ttl_seconds".into(), res.ttl_seconds.to_string()],
                vec!["capabilities".into(), r.capabilities.clone()],
            ];
            Ok(Output::new(&res, table(&["field", "value"], &rows)))
        }
        Command::Auth(AuthCommand::Token {
            agent_id,
            access_key,
            ttl,
        }) => {
            let t = c.issue_token(agent_id, access_key, *ttl).await?;
            Ok(Output::new(&t, format!("{}\n", t.token)))
        }
        Command::Billing(cmd) => billing(&c, cmd).await,
        Command::Demo { plan } => {
            let plan = match plan {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                    ActionPlan::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
                }
                None => harness::default_plan(),
            };
            let report = harness::run_demo(&plan)
                .await
                .map_err(|e| CliError::Failed(e.to_string()))?;
            let mut out = Output::new(&report, report.summary());
            out.ok = report.success;
            Ok(out)
        }
    }
}

async fn service(c: &RootClient, cmd: &ServiceCommand) -> Result<Output, CliError> {
    let record = match cmd {
        ServiceCommand::Register {
            org,
            category,
            name,
            endpoint,
            capabilities,
            price,
            protocols,
            ttl,
            credential_header,
            credential_secret,
        } => {
            category
                .parse::<CategoryPath>()
                .map_err(|e| CliError::Usage(format!("invalid category: {e}")))?;
            let req = RegisterServiceRequest {
                org_id: org.clone(),
                category: category.clone(),
                name: name.clone(),
                vendor_endpoint: endpoint.clone(),
                protocols: protocols.iter().cloned().collect(),
                capabilities: capabilities.clone(),
                pricing: PriceModel::per_call(*price),
                ttl_seconds: *ttl,
                vendor_credential_ref: None,
                credential: credential(credential_header, credential_secret),
            };
            c.register_service(&req).await?
        }
        ServiceCommand::Update {
            name,
            expected_version,
            endpoint,
            capabilities,
            price,
            protocols,
            ttl,
            status,
            credential_header,
            credential_secret,
        } => {
            let name = parse_name(name)?;
            let req = UpdateServiceRequest {
                expected_version: *expected_version,
                vendor_endpoint: endpoint.clone(),
                protocols: (!protocols.is_empty()).then(|| protocols.iter().cloned().collect::<BTreeSet<_>>()),
                capabilities: capabilities.clone(),
                pricing: price.map(PriceModel::per_call),
                ttl_seconds: *ttl,
                status: status.map(|s| match s {
                    StatusArg::Active => ServiceStatus::Active,
                    StatusArg::Deprecated => ServiceStatus::Deprecated,
                }),
                vendor_credential_ref: None,
                credential: credential(credential_header, credential_secret),
            };
            c.update_service(&name, &req).await?
        }
        ServiceCommand::Delete { name } => c.delete_service(&parse_name(name)?).await?,
        ServiceCommand::Get { name } => c.get_service(&parse_name(name)?).await?,
    };
    let human = record_table(&record);
    Ok(Output::new(&record, human))
}

fn credential(header: &Option<String>, secret: &Option<String>) -> Option<CredentialInput> {
    match (header, secret) {
        (Some(h), Some(s)) => Some(CredentialInput {
            header_name: h.clone(),
            secret: s.clone(),
        }),
        _ => None,
    }
}

async fn billing(c: &RootClient, cmd: &BillingCommand) -> Result<Output, CliError> {
    match cmd {
        BillingCommand::Deposit { amount, agent_id } => {
            let b = c.deposit(agent_id, *amount).await?;
            Ok(Output::new(&b, format!("{} balance {}\n", b.account, b.balance)))
        }
        BillingCommand::Balance => {
            let b = c.balance().await?;
            Ok(Output::new(&b, format!("{} balance {}\n", b.account, b.balance)))
        }
        BillingCommand::Statement { account, from, to } => {
            let s = c.statement(account.as_deref(), *from, *to).await?;
            let rows: Vec<Vec<String>> = s
                .entries
                .iter()
                .map(|e| {
                    vec![
                        e.entry_id.to_string(),
                        e.timestamp.to_string(),
                        e.debit_account.to_string(),
                        e.credit_account.to_string(),
                        e.amount.to_string(),
                        serde_json::to_value(e.reason).unwrap().as_str().unwrap_or("").to_string(),
                    ]
                })
                .collect();
            let mut human = table(&["id", "time", "debit", "credit", "amount", "reason"], &rows);
            human.push_str(&format!("{} balance {}\n", s.account, s.balance));
            Ok(Output::new(&s, human))
        }
        BillingCommand::Settle { org_id } => {
            let r = c.settle(org_id).await?;
            Ok(Output::new(&r, format!("settled {} for {}\n", r.amount, r.org_id)))
        }
    }
}
