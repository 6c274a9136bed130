//! Command-line front end. Each subcommand is a thin wrapper over the
//! library; errors go to stderr as one JSON object and a nonzero exit.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::bench::{self, BenchConfig, GNUPLOT_SCRIPT};
use crate::crypto::{MasterKeys, PublicKey, VoterId};
use crate::pprl::{link_registries, EncodedRegistry, EncodingParams};
use crate::registry::{
    verify_history, BulletinEntry, BulletinExport, ColumnSchema, Opcode, Policy, Registry, RegistryConfig,
    RegistryError, VoterStatus,
};
use crate::service::{self, HistoryResponse, ServiceClient, ServiceConfig};
use crate::workflows::{
    audit, maintenance_disclose, maintenance_receive, query_prepare, query_verify, register, update_registration,
    AuditVerdict, DisclosurePackage, ExpectedData, QueryFailure, WorkflowError,
};

pub const ENV_KEYSTORE: &str = "VRLOG_KEYSTORE";
pub const ENV_DATA_DIR: &str = "VRLOG_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "vrlog", version, about = "Verifiable voter registration log")]
pub struct Cli {
    /// Official keystore (JSON, owner-only permissions).
    #[arg(long, global = true, env = ENV_KEYSTORE)]
    keystore: Option<PathBuf>,
    /// Registry data directory.
    #[arg(long, global = true, env = ENV_DATA_DIR)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the official's keystore.
    InitKeys {
        #[arg(long, default_value = "official")]
        signer_id: String,
        /// Replace an existing keystore.
        #[arg(long)]
        force: bool,
    },
    /// Create a registry from schema, policy and linkage parameter files.
    InitRegistry {
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Store linkage encodings beside sealed fields.
        #[arg(long)]
        encoding_params: Option<PathBuf>,
    },
    /// Replace the third-party access policy.
    SetPolicy {
        #[arg(long)]
        policy: PathBuf,
    },
    /// Queue registrations from a CSV whose header is `base_id` plus the schema labels.
    Register {
        #[arg(long)]
        csv: PathBuf,
        /// Push an epoch after ingesting.
        #[arg(long)]
        push: bool,
    },
    /// Queue a re-encrypted update, changing the given columns.
    Update {
        #[command(flatten)]
        voter: VoterArg,
        /// `label=value`, repeatable.
        #[arg(long = "set", value_parser = parse_assignment)]
        set: Vec<(String, String)>,
    },
    /// Queue a deregistration; history stays provable
    Deregister {
        #[command(flatten)]
        voter: VoterArg,
    },
    /// Commit the queue and publish the next epoch.
    PushEpoch,
    /// Build a signed disclosure package for a third party.
    Disclose {
        #[arg(long)]
        third_party: String,
        /// Voter ids (hex), repeatable. Defaults to every committed voter.
        #[arg(long = "voter")]
        voters: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a signed query package for one voter, locally or from a service.
    Query {
        #[command(flatten)]
        voter: VoterArg,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
        #[arg(long)]
        service: Option<String>,
        #[arg(long, env = "VRLOG_TOKEN", hide_env_values = true)]
        token: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify a saved query package or public history offline.
    Verify {
        #[arg(long)]
        package: PathBuf,
        #[arg(long)]
        bulletin: PathBuf,
        /// Official public key (hex). Defaults to the key in the bulletin file.
        #[arg(long)]
        official_key: Option<String>,
        /// JSON object mapping epoch to the expected row.
        #[arg(long)]
        expected: Option<PathBuf>,
    },
    /// Verify a disclosure package offline and print the opened rows.
    Receive {
        #[arg(long)]
        package: PathBuf,
        #[arg(long)]
        bulletin: PathBuf,
        #[arg(long)]
        official_key: Option<String>,
    },
    /// Audit one pair of consecutive epochs from a saved bulletin.
    Audit {
        #[arg(long)]
        bulletin: PathBuf,
        #[arg(long)]
        older: u64,
        #[arg(long)]
        newer: u64,
        #[arg(long)]
        official_key: Option<String>,
        /// Where to write evidence on rejection.
        #[arg(long)]
        evidence: Option<PathBuf>,
    },
    /// Audit every adjacent pair, polling for new epochs.
    Watch {
        #[arg(long, conflicts_with = "bulletin")]
        service: Option<String>,
        #[arg(long)]
        bulletin: Option<PathBuf>,
        #[arg(long)]
        official_key: Option<String>,
        #[arg(long, default_value_t = 5000)]
        interval_ms: u64,
        /// Stop after this many polls; 0 polls forever.
        #[arg(long, default_value_t = 0)]
        polls: u64,
        #[arg(long, default_value = "watch-evidence.json")]
        evidence: PathBuf,
    },
    /// Write the bulletin with the official's public key.
    ExportBulletin {
        #[arg(long)]
        out: PathBuf,
    },
    /// Export this registry's linkage encodings.
    EncodeRegistry {
        #[arg(long)]
        jurisdiction: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match two exported encoded registries and write a linkage manifest.
    Match {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the latency and storage benchmark.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1000)]
        batch: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
    },
}

#[derive(Debug, Args)]
struct VoterArg {
    /// Voter id (hex).
    #[arg(long, conflicts_with = "base_id", required_unless_present = "base_id")]
    voter: Option<String>,
    /// Base-system identifier; the voter id is derived with the keystore.
    #[arg(long)]
    base_id: Option<String>,
}

fn parse_assignment(s: &str) -> Result<(String, String), String> {
    s.split_once('=').map(|(k, v)| (k.to_owned(), v.to_owned())).ok_or_else(|| format!("expected label=value, got {s}"))
}

#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    message: String,
    extra: serde_json::Value,
    exit: i32,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into(), extra: serde_json::Value::Null, exit: 1 }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self { exit: 2, ..Self::new("usage", message) }
    }

    fn with(mut self, extra: serde_json::Value) -> Self {
        self.extra = extra;
        self
    }

    fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": self.kind, "message": self.message });
        if let serde_json::Value::Object(m) = &self.extra {
            for (k, x) in m {
                v[k] = x.clone();
            }
        }
        v
    }
}

fn registry_kind(e: &RegistryError) -> &'static str {
    match e {
        RegistryError::InvalidSchema(_) => "invalid_schema",
        RegistryError::SchemaMismatch(_) => "schema_mismatch",
        RegistryError::UnknownColumn(_) => "unknown_column",
        RegistryError::RangeOutOfBounds { .. } => "range_out_of_bounds",
        RegistryError::GapDetected { .. } => "gap_detected",
        RegistryError::CorruptState(_) => "corrupt_state",
        RegistryError::AlreadyInitialized => "already_initialized",
        RegistryError::Poisoned => "poisoned",
        _ => "registry",
    }
}

impl From<RegistryError> for CliError {
    fn from(e: RegistryError) -> Self {
        Self::new(registry_kind(&e), e.to_string())
    }
}

impl From<WorkflowError> for CliError {
    fn from(e: WorkflowError) -> Self {
        let kind = match &e {
            WorkflowError::BaseSystemReject(_) => "base_system_reject",
            WorkflowError::AlreadyRegistered(_) => "already_registered",
            WorkflowError::UnknownVoter(_) => "unknown_voter",
            WorkflowError::AlreadyDeregistered(_) => "already_deregistered",
            WorkflowError::UnknownThirdParty(_) => "unknown_third_party",
            WorkflowError::InvalidOpcode(_) => "invalid_opcode",
            WorkflowError::Registry(r) => registry_kind(r),
        };
        Self::new(kind, e.to_string())
    }
}

impl From<crate::crypto::CryptoError> for CliError {
    fn from(e: crate::crypto::CryptoError) -> Self {
        match e {
            crate::crypto::CryptoError::KeystoreExists => {
                Self::new("keystore_exists", "keystore already exists; pass --force to replace it")
            }
            other => Self::new("keystore", other.to_string()),
        }
    }
}

impl From<service::ServiceError> for CliError {
    fn from(e: service::ServiceError) -> Self {
        let kind = match &e {
            service::ServiceError::BindFailure { .. } => "bind_failure",
            service::ServiceError::CorruptState(_) => "corrupt_state",
            service::ServiceError::Config(_) => "config",
            _ => "service",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<service::ClientError> for CliError {
    fn from(e: service::ClientError) -> Self {
        Self::new("service", e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::new("parse", format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Ignores write errors so a closed pipe does not panic.
fn print_json<T: Serialize>(value: &T) {
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn print_line(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

struct Ctx {
    keystore: Option<PathBuf>,
    data_dir: Option<PathBuf>,
}

impl Ctx {
    fn keystore_path(&self) -> Result<&Path, CliError> {
        self.keystore.as_deref().ok_or_else(|| CliError::usage(format!("--keystore or {ENV_KEYSTORE} is required")))
    }

    fn keys(&self) -> Result<MasterKeys, CliError> {
        Ok(MasterKeys::load(self.keystore_path()?)?)
    }

    fn data_dir(&self) -> Result<&Path, CliError> {
        self.data_dir.as_deref().ok_or_else(|| CliError::usage(format!("--data-dir or {ENV_DATA_DIR} is required")))
    }

    fn registry(&self) -> Result<Registry, CliError> {
        Ok(Registry::open(self.data_dir()?, self.keys()?)?)
    }
}

fn resolve_voter(reg: &Registry, v: &VoterArg) -> Result<VoterId, CliError> {
    match (&v.voter, &v.base_id) {
        (Some(hex), _) => parse_voter(hex),
        (None, Some(b)) => Ok(reg.keys().derive_voter_id(b.as_bytes())?),
        (None, None) => Err(CliError::usage("--voter or --base-id is required")),
    }
}

fn parse_voter(hex: &str) -> Result<VoterId, CliError> {
    VoterId::from_hex(hex).map_err(|_| CliError::usage(format!("{hex} is not a 64-digit hex voter id")))
}

fn official_key(bulletin: &BulletinExport, flag: &Option<String>) -> Result<PublicKey, CliError> {
    match flag {
        Some(hex) => PublicKey::from_hex(hex).map_err(|e| CliError::usage(format!("--official-key: {e}"))),
        None => Ok(bulletin.official_key),
    }
}

/// Parses arguments from the process and runs. Returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx { keystore: cli.keystore, data_dir: cli.data_dir };
    match cli.command {
        Command::InitKeys { signer_id, force } => {
            let keys = MasterKeys::generate(signer_id);
            keys.save(ctx.keystore_path()?, force)?;
            print_json(&json!({ "signer_id": keys.signer_id(), "public_key": keys.public_key() }));
        }
        Command::InitRegistry { schema, policy, encoding_params } => {
            let mut cfg = RegistryConfig::default();
            if let Some(p) = schema {
                cfg.schema = read_json::<ColumnSchema>(&p)?;
            }
            if let Some(p) = policy {
                cfg.policy = read_json::<Policy>(&p)?;
            }
            if let Some(p) = encoding_params {
                let params: EncodingParams = read_json(&p)?;
                params.validate().map_err(|e| CliError::new("invalid_params", e.to_string()))?;
                cfg.encoding = Some(params);
            }
            let reg = Registry::create(ctx.data_dir()?, ctx.keys()?, cfg)?;
            print_json(&json!({ "epoch": reg.epoch(), "commitment": reg.latest_commitment() }));
        }
        Command::SetPolicy { policy } => {
            let mut reg = ctx.registry()?;
            reg.set_policy(read_json(&policy)?)?;
        }
        Command::Register { csv, push } => ingest_csv(&ctx, &csv, push)?,
        Command::Update { voter, set } => {
            let mut reg = ctx.registry()?;
            let id = resolve_voter(&reg, &voter)?;
            let mut row = reg.current_data(&id)?.ok_or(WorkflowError::UnknownVoter(id))?;
            for (label, value) in set {
                let j = reg.schema().index_of(&label).ok_or(RegistryError::UnknownColumn(label))?;
                row[j] = value;
            }
            update_registration(&mut reg, id, Some(&row), Opcode::Update)?;
            print_json(&json!({ "voter_id": id, "epoch": reg.pending_epoch() }));
        }
        Command::Deregister { voter } => {
            let mut reg = ctx.registry()?;
            let id = resolve_voter(&reg, &voter)?;
            update_registration(&mut reg, id, None, Opcode::Deregister)?;
            print_json(&json!({ "voter_id": id, "epoch": reg.pending_epoch() }));
        }
        Command::PushEpoch => {
            let mut reg = ctx.registry()?;
            let entry = reg.push_epoch()?;
            print_json(&entry.commitment);
        }
        Command::Disclose { third_party, voters, out } => {
            let reg = ctx.registry()?;
            let ids = if voters.is_empty() {
                reg.voters().collect()
            } else {
                voters.iter().map(|v| parse_voter(v)).collect::<Result<Vec<_>, _>>()?
            };
            let pkg = maintenance_disclose(&reg, &third_party, &ids)?;
            write_json(&out, &pkg)?;
            let approved = pkg.body.voters.iter().flatten().count();
            print_json(&json!({ "epoch": pkg.body.epoch, "requested": ids.len(), "approved": approved }));
        }
        Command::Query { voter, from, to, service, token, out } => {
            let pkg = match service {
                Some(url) => {
                    let id = match &voter.voter {
                        Some(hex) => parse_voter(hex)?,
                        None => return Err(CliError::usage("--voter is required with --service")),
                    };
                    let token = token.ok_or_else(|| CliError::usage("--token is required with --service"))?;
                    ServiceClient::new(url).with_token(token).query(&id, from, to)?
                }
                None => {
                    let reg = ctx.registry()?;
                    let id = resolve_voter(&reg, &voter)?;
                    query_prepare(&reg, &id, from.unwrap_or(0), to.unwrap_or_else(|| reg.epoch()))?
                }
            };
            write_json(&out, &pkg)?;
            print_json(&json!({
                "voter_id": pkg.body.voter_id,
                "records": pkg.body.history.records.len(),
                "head_epoch": pkg.body.history.proof.head_epoch,
            }));
        }
        Command::Verify { package, bulletin, official_key: key, expected } => {
            verify_cmd(&package, &bulletin, &key, expected.as_deref())?
        }
        Command::Receive { package, bulletin, official_key: key } => {
            let b: BulletinExport = read_json(&bulletin)?;
            let pk = official_key(&b, &key)?;
            let pkg: DisclosurePackage = read_json(&package)?;
            let Some(entry) = b.entries.iter().find(|e| e.commitment.epoch == pkg.body.epoch) else {
                return Err(CliError::new("missing_commitment", format!("bulletin has no epoch {}", pkg.body.epoch)));
            };
            match maintenance_receive(&pkg, &entry.commitment, &pk) {
                Ok(rows) => print_json(&json!({ "columns": pkg.body.columns, "rows": rows })),
                Err(f) => {
                    print_line(&format!("REJECTED {f}"));
                    return Err(CliError::new("verification_failed", f.to_string())
                        .with(json!({ "failure": serde_json::to_value(&f).expect("serializable") })));
                }
            }
        }
        Command::Audit { bulletin, older, newer, official_key: key, evidence } => {
            if newer != older + 1 {
                return Err(CliError::usage(format!("audit takes consecutive epochs; got {older} and {newer}")));
            }
            let b: BulletinExport = read_json(&bulletin)?;
            let pk = official_key(&b, &key)?;
            let find = |e: u64| {
                b.entries
                    .iter()
                    .find(|x| x.commitment.epoch == e)
                    .ok_or_else(|| CliError::new("missing_commitment", format!("bulletin has no epoch {e}")))
            };
            let (o, n) = (find(older)?, find(newer)?);
            let verdict = audit(&o.commitment, &n.commitment, &n.update_proof, &pk);
            print_json(&verdict);
            if !verdict.accepted {
                let path = evidence.unwrap_or_else(|| PathBuf::from(format!("audit-evidence-{older}-{newer}.json")));
                write_json(&path, &verdict)?;
                return Err(audit_failure(&verdict, &path));
            }
        }
        Command::Watch { service, bulletin, official_key: key, interval_ms, polls, evidence } => {
            let source = match (service, bulletin) {
                (Some(url), None) => Source::Service(ServiceClient::new(url)),
                (None, Some(path)) => Source::File(path),
                _ => return Err(CliError::usage("watch needs exactly one of --service or --bulletin")),
            };
            watch(source, key, Duration::from_millis(interval_ms), polls, &evidence)?;
        }
        Command::ExportBulletin { out } => {
            let reg = ctx.registry()?;
            let export = reg.export_bulletin();
            write_json(&out, &export)?;
            print_json(&json!({ "epochs": export.entries.len(), "official_key": export.official_key }));
        }
        Command::EncodeRegistry { jurisdiction, out } => {
            let reg = ctx.registry()?;
            let enc = EncodedRegistry::from_registry(&reg, jurisdiction)
                .map_err(|e| CliError::new("no_encodings", e.to_string()))?;
            write_json(&out, &enc)?;
            print_json(&json!({ "records": enc.records.len(), "epoch": enc.commitment.epoch }));
        }
        Command::Match { a, b, params, threshold, out } => {
            let (a, b): (EncodedRegistry, EncodedRegistry) = (read_json(&a)?, read_json(&b)?);
            let params: EncodingParams = read_json(&params)?;
            let manifest = link_registries(&a, &b, &params, threshold)
                .map_err(|e| CliError::new("param_mismatch", e.to_string()))?;
            write_json(&out, &manifest)?;
            print_json(&json!({ "candidates": manifest.candidates.len(), "threshold": threshold }));
        }
        Command::Bench { sizes, samples, batch, seed, out_dir } => {
            let work = out_dir.join("registry");
            if work.exists() {
                return Err(CliError::usage(format!("{} already exists; use an empty output directory", work.display())));
            }
            std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
            let report = bench::run(&BenchConfig { sizes, samples, batch, seed }, &work)
                .map_err(|e| CliError::new("bench", e.to_string()))?;
            let csv_path = out_dir.join("bench.csv");
            let f = std::fs::File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?;
            report.write_csv(std::io::BufWriter::new(f)).map_err(|e| CliError::new("bench", e.to_string()))?;
            std::fs::write(out_dir.join("plot.gp"), GNUPLOT_SCRIPT).map_err(|e| io_err(&out_dir, e))?;
            let summary = json!({
                "machine": report.machine,
                "stats": report.stats(),
                "storage_fit": report.storage_fit(),
                "prove_append_only_loglog_slope": report.loglog_slope("prove_append_only"),
            });
            write_json(&out_dir.join("summary.json"), &summary)?;
            print_json(&summary);
        }
        Command::Serve { config, listen } => {
            let mut cfg = ServiceConfig::resolve_with(
                |k| std::env::var(k).ok().or_else(|| fallback_env(&ctx, k)),
                config.as_deref(),
            )?;
            if let Some(l) = listen {
                cfg.listen = l;
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new("runtime", e.to_string()))?;
            rt.block_on(async {
                let svc = service::Service::bind(&cfg).await?;
                eprintln!("{}", json!({ "listening": svc.local_addr().to_string(), "epoch_timer": cfg.epoch_interval_secs }));
                svc.run(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
                .map_err(|e| service::ServiceError::Config(e.to_string()))
            })?;
        }
    }
    Ok(())
}

/// Lets `--keystore` and `--data-dir` stand in for their variables.
fn fallback_env(ctx: &Ctx, key: &str) -> Option<String> {
    let p = match key {
        ENV_KEYSTORE => ctx.keystore.as_ref(),
        ENV_DATA_DIR => ctx.data_dir.as_ref(),
        _ => None,
    }?;
    Some(p.display().to_string())
}

fn ingest_csv(ctx: &Ctx, path: &Path, push: bool) -> Result<(), CliError> {
    let mut reg = ctx.registry()?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_path(path).map_err(|e| io_err(path, e))?;
    let header = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    let base_col = header
        .iter()
        .position(|h| h == "base_id")
        .ok_or_else(|| CliError::from(RegistryError::SchemaMismatch("header has no base_id column".into())))?;
    let mut cols = Vec::with_capacity(reg.schema().len());
    for label in reg.schema().labels() {
        let i = header.iter().position(|h| h == label).ok_or_else(|| {
            CliError::from(RegistryError::SchemaMismatch(format!("header has no column {label}")))
        })?;
        cols.push(i);
    }
    if let Some(extra) = header.iter().find(|h| *h != "base_id" && reg.schema().index_of(h).is_none()) {
        return Err(RegistryError::UnknownColumn(extra.to_owned()).into());
    }

    // Validate everything before queueing anything.
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row_no = i + 1;
        let at_row = |e: CliError| e.with(json!({ "row": row_no }));
        let rec = rec.map_err(|e| at_row(CliError::new("parse", e.to_string())))?;
        if rec.len() != header.len() {
            return Err(at_row(
                RegistryError::SchemaMismatch(format!(
                    "row {row_no} has {} fields, header has {}",
                    rec.len(),
                    header.len()
                ))
                .into(),
            ));
        }
        let base_id = rec[base_col].to_owned();
        let data: Vec<String> = cols.iter().map(|&c| rec[c].to_owned()).collect();
        for (value, col) in data.iter().zip(reg.schema().columns()) {
            if value.len() > col.pad_len {
                return Err(at_row(
                    RegistryError::SchemaMismatch(format!("row {row_no}: {} exceeds {} bytes", col.label, col.pad_len))
                        .into(),
                ));
            }
        }
        let id = reg.keys().derive_voter_id(base_id.as_bytes())?;
        if reg.status(&id) == VoterStatus::Active || !seen.insert(id) {
            return Err(at_row(WorkflowError::AlreadyRegistered(id).into()));
        }
        rows.push((base_id, data));
    }
    let mut voters = Vec::with_capacity(rows.len());
    for (base_id, data) in &rows {
        let id = register(&mut reg, base_id.as_bytes(), data)?;
        voters.push(json!({ "base_id": base_id, "voter_id": id }));
    }
    let committed = if push { Some(reg.push_epoch()?.commitment.epoch) } else { None };
    print_json(&json!({
        "registered": voters.len(),
        "epoch": committed.unwrap_or_else(|| reg.pending_epoch()),
        "pushed": push,
        "voters": voters,
    }));
    Ok(())
}

fn query_failure_kind(f: &QueryFailure) -> String {
    serde_json::to_value(f).ok().and_then(|v| v.get("failure").and_then(|x| x.as_str()).map(str::to_owned)).unwrap_or_default()
}

fn verify_cmd(package: &Path, bulletin: &Path, key: &Option<String>, expected: Option<&Path>) -> Result<(), CliError> {
    let b: BulletinExport = read_json(bulletin)?;
    let pk = official_key(&b, key)?;
    let commitments = b.commitments();
    if let Some(bad) = commitments.iter().find(|c| !c.verify(&pk)) {
        return Err(CliError::new("bad_bulletin", format!("commitment {} is not signed by the official key", bad.epoch)));
    }
    let expected: Option<ExpectedData> = match expected {
        Some(p) => {
            let raw: BTreeMap<String, Vec<String>> = read_json(p)?;
            let mut out = ExpectedData::new();
            for (k, v) in raw {
                let e = k.parse().map_err(|_| CliError::usage(format!("expected-data key {k} is not an epoch")))?;
                out.insert(e, v);
            }
            Some(out)
        }
        None => None,
    };
    let served: HistoryResponse = read_json(package)?;
    let reject = |kind: String, message: String, failure: serde_json::Value| {
        print_line(&format!("REJECTED {kind}: {message}"));
        Err(CliError::new("verification_failed", message).with(json!({ "failure": failure })))
    };
    match served {
        HistoryResponse::Package(pkg) => match query_verify(&pkg, &commitments, &pk, expected.as_ref()) {
            Ok(report) => {
                let epochs: Vec<String> = report.rows.iter().map(|(e, _)| e.to_string()).collect();
                print_line(&format!(
                    "VERIFIED voter {} epochs [{}] against head epoch {}",
                    report.voter_id,
                    epochs.join(","),
                    report.head_epoch
                ));
                Ok(())
            }
            Err(f) => reject(query_failure_kind(&f), f.to_string(), serde_json::to_value(&f).expect("serializable")),
        },
        HistoryResponse::History(h) => match verify_history(&commitments, &pk, &h) {
            Ok(()) => {
                let epochs: Vec<String> = h.records.iter().map(|r| r.meta.epoch.to_string()).collect();
                print_line(&format!(
                    "VERIFIED voter {} history epochs [{}] against head epoch {} (no keys, contents not opened)",
                    h.voter_id,
                    epochs.join(","),
                    h.proof.head_epoch
                ));
                Ok(())
            }
            Err(e) => {
                let f = QueryFailure::from(e);
                reject(query_failure_kind(&f), f.to_string(), serde_json::to_value(&f).expect("serializable"))
            }
        },
    }
}

fn audit_failure(verdict: &AuditVerdict, evidence: &Path) -> CliError {
    CliError::new(
        "audit_rejected",
        format!("epoch {} -> {}: {:?}", verdict.from_epoch, verdict.to_epoch, verdict.failure.expect("rejected")),
    )
    .with(json!({ "evidence": evidence.display().to_string() }))
}

enum Source {
    Service(ServiceClient),
    File(PathBuf),
}

impl Source {
    fn fetch(&self) -> Result<BulletinExport, CliError> {
        match self {
            Source::Service(c) => Ok(c.bulletin()?),
            Source::File(p) => read_json(p),
        }
    }
}

/// Audits adjacent pairs as they appear. Previously seen entries must not
/// change between polls.
fn watch(source: Source, key: Option<String>, interval: Duration, polls: u64, evidence: &Path) -> Result<(), CliError> {
    let mut seen: Vec<BulletinEntry> = Vec::new();
    let mut pk: Option<PublicKey> = None;
    let mut poll = 0u64;
    loop {
        let b = source.fetch()?;
        let key_now = official_key(&b, &key)?;
        let pk = *pk.get_or_insert(key_now);
        if key_now != pk {
            return Err(CliError::new("key_changed", "the bulletin's official key changed between polls"));
        }
        if let Some(i) = seen.iter().zip(&b.entries).position(|(a, x)| a != x) {
            let ev = json!({ "rewritten_epoch": i, "before": seen[i], "after": b.entries[i] });
            write_json(evidence, &ev)?;
            return Err(CliError::new("bulletin_rewritten", format!("epoch {i} changed between polls"))
                .with(json!({ "evidence": evidence.display().to_string() })));
        }
        if b.entries.len() < seen.len() {
            return Err(CliError::new("bulletin_shrank", format!("{} entries after {}", b.entries.len(), seen.len())));
        }
        if seen.is_empty() {
            let Some(g) = b.entries.first() else {
                return Err(CliError::new("empty_bulletin", "bulletin has no entries"));
            };
            if g.commitment.epoch != 0 || !g.commitment.verify(&pk) {
                return Err(CliError::new("bad_genesis", "epoch 0 commitment is missing or unsigned"));
            }
        }
        let start = seen.len().max(1);
        for i in start..b.entries.len() {
            let (o, n) = (&b.entries[i - 1], &b.entries[i]);
            let verdict = audit(&o.commitment, &n.commitment, &n.update_proof, &pk);
            if !verdict.accepted {
                write_json(evidence, &verdict)?;
                return Err(audit_failure(&verdict, evidence));
            }
            print_line(&format!("ACCEPT {} -> {}", verdict.from_epoch, verdict.to_epoch));
        }
        seen = b.entries;
        poll += 1;
        if polls != 0 && poll >= polls {
            return Ok(());
        }
        std::thread::sleep(interval);
    }
}
