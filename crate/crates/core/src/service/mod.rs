//! HTTP front end over a durable [`Registry`].
//!
//! Writes require a bearer token and serialize through one registry lock.
//! Reads never require a token and only see committed epochs.

mod client;
mod config;

pub use client::{ClientError, HistoryResponse, ServiceClient};
pub use config::ServiceConfig;

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::crypto::{CryptoError, MasterKeys, VoterId};
use crate::pprl::{EncodedRegistry, EncodingParams};
use crate::registry::{Opcode, Registry, RegistryConfig, RegistryError};
use crate::workflows::{
    maintenance_disclose, query_prepare, register, update_registration, WorkflowError,
};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: SocketAddr, source: std::io::Error },
    #[error("registry state is corrupt: {0}")]
    CorruptState(String),
    #[error("keystore: {0}")]
    Keystore(#[from] CryptoError),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Registry(RegistryError),
}

impl From<RegistryError> for ServiceError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::CorruptState(m) => ServiceError::CorruptState(m),
            RegistryError::GapDetected { .. } => ServiceError::CorruptState(e.to_string()),
            other => ServiceError::Registry(other),
        }
    }
}

struct AppState {
    registry: RwLock<Registry>,
    tokens: Vec<String>,
    writer_timeout: Duration,
}

type Shared = Arc<AppState>;

/// Opens the registry named by `config`. A fresh data directory is
/// initialized, with linkage encodings when enabled.
pub fn open_registry(config: &ServiceConfig) -> Result<Registry, ServiceError> {
    let keys = MasterKeys::load(&config.keystore)?;
    let fresh = !config.data_dir.join("bulletin.jsonl").exists();
    if fresh && config.linkage {
        let path = config
            .encoding_params
            .as_ref()
            .ok_or_else(|| ServiceError::Config("linkage is enabled but no encoding params file is set".into()))?;
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let params: EncodingParams =
            serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        params.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        let mut cfg = RegistryConfig { encoding: Some(params), ..RegistryConfig::default() };
        let dir = &config.data_dir;
        if let Some(s) = read_optional(&dir.join("schema.json"))? {
            cfg.schema = s;
        }
        if let Some(p) = read_optional(&dir.join("policy.json"))? {
            cfg.policy = p;
        }
        return Ok(Registry::create(dir, keys, cfg)?);
    }
    let reg = Registry::open(&config.data_dir, keys)?;
    if config.linkage && reg.encoding_params().is_none() {
        return Err(ServiceError::Config("linkage is enabled but the registry stores no encodings".into()));
    }
    Ok(reg)
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<Option<T>, ServiceError> {
    match std::fs::read_to_string(path) {
        Ok(s) => serde_json::from_str(&s).map(Some).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(ServiceError::Config(format!("{}: {e}", path.display()))),
    }
}

/// A bound service, ready to run.
pub struct Service {
    listener: tokio::net::TcpListener,
    state: Shared,
    epoch_interval: Option<Duration>,
}

impl Service {
    pub async fn bind(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let registry = open_registry(config)?;
        Self::with_registry(config, registry).await
    }

    pub async fn with_registry(config: &ServiceConfig, registry: Registry) -> Result<Self, ServiceError> {
        let listener = tokio::net::TcpListener::bind(config.listen)
            .await
            .map_err(|source| ServiceError::BindFailure { addr: config.listen, source })?;
        Ok(Self {
            listener,
            state: Arc::new(AppState {
                registry: RwLock::new(registry),
                tokens: config.write_tokens.clone(),
                writer_timeout: Duration::from_millis(config.writer_timeout_ms),
            }),
            epoch_interval: config.epoch_interval_secs.filter(|&s| s > 0).map(Duration::from_secs),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Serves until `shutdown` resolves.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
        let timer = self.epoch_interval.map(|every| {
            let state = self.state.clone();
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(every);
                tick.tick().await;
                loop {
                    tick.tick().await;
                    let state = state.clone();
                    // A failed push poisons the registry; later writes report it.
                    let _ = tokio::task::spawn_blocking(move || state.registry.write().push_epoch()).await;
                }
            })
        });
        let app = router(self.state);
        let out = axum::serve(self.listener, app).with_graceful_shutdown(shutdown).await;
        if let Some(t) = timer {
            t.abort();
        }
        out
    }
}

/// Binds and serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let svc = Service::bind(&config).await?;
    svc.run(async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(|e| ServiceError::Config(e.to_string()))
}

/// A service running on its own thread and runtime.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Starts a service in the background and returns once it is listening.
pub fn spawn(config: ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| ServiceError::Config(e.to_string()))?;
    let svc = rt.block_on(Service::bind(&config))?;
    let addr = svc.local_addr();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let _ = rt.block_on(svc.run(async {
            let _ = rx.await;
        }));
    });
    Ok(ServiceHandle { addr, stop: Some(tx), thread: Some(thread) })
}

fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/voters", post(register_voter))
        .route("/v1/voters/:id", get(lookup_voter).put(update_voter).delete(deregister_voter))
        .route("/v1/voters/:id/history", get(voter_history))
        .route("/v1/epochs/push", post(push_epoch))
        .route("/v1/disclosures", post(disclose))
        .route("/v1/bulletin", get(bulletin))
        .route("/v1/bulletin/:epoch", get(bulletin_entry))
        .route("/v1/encodings", get(encodings))
        .with_state(state)
}

/// Error response: `{"error": <kind>, "message": ...}` plus an optional
/// proof body for unknown voters.
#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
    proof: Option<serde_json::Value>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self { status, kind, message: message.into(), proof: None }
    }

    fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "a valid bearer token is required")
    }

    fn busy() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "writer_busy", "the registry writer is busy; retry")
    }

    fn not_found(reg: &Registry, voter: &VoterId) -> Self {
        let mut e = Self::new(StatusCode::NOT_FOUND, "unknown_voter", format!("voter {voter} is not registered"));
        e.proof = serde_json::to_value(reg.lookup(voter)).ok();
        e
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.kind, "message": self.message });
        if let Some(p) = self.proof {
            body["proof"] = p;
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let (status, kind) = match &e {
            RegistryError::SchemaMismatch(_) => (StatusCode::UNPROCESSABLE_ENTITY, "schema_mismatch"),
            RegistryError::UnknownColumn(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_column"),
            RegistryError::InvalidSchema(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_schema"),
            RegistryError::RangeOutOfBounds { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "range_out_of_bounds"),
            RegistryError::Poisoned => (StatusCode::SERVICE_UNAVAILABLE, "poisoned"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, kind, e.to_string())
    }
}

fn workflow_error(reg: &Registry, e: WorkflowError) -> ApiError {
    match e {
        WorkflowError::AlreadyRegistered(id) => {
            ApiError::new(StatusCode::CONFLICT, "already_registered", format!("voter {id} is already registered"))
        }
        WorkflowError::UnknownVoter(id) => ApiError::not_found(reg, &id),
        WorkflowError::AlreadyDeregistered(id) => {
            ApiError::new(StatusCode::CONFLICT, "already_deregistered", format!("voter {id} is deregistered"))
        }
        WorkflowError::UnknownThirdParty(p) => {
            ApiError::new(StatusCode::NOT_FOUND, "unknown_third_party", format!("third party {p} is not in the policy"))
        }
        WorkflowError::BaseSystemReject(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "rejected", m),
        WorkflowError::InvalidOpcode(op) => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_opcode", format!("{op:?}"))
        }
        WorkflowError::Registry(r) => r.into(),
    }
}

fn authorized(state: &AppState, headers: &HeaderMap) -> bool {
    let Some(value) = headers.get(axum::http::header::AUTHORIZATION).and_then(|v| v.to_str().ok()) else {
        return false;
    };
    let Some(token) = value.strip_prefix("Bearer ") else {
        return false;
    };
    state.tokens.iter().any(|t| !t.is_empty() && constant_time_eq(t.as_bytes(), token.as_bytes()))
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn parse_voter(id: &str) -> Result<VoterId, ApiError> {
    VoterId::from_hex(id).map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "bad_voter_id", "voter id must be 64 hex digits"))
}

/// Runs `f` on the blocking pool; registry locks are never held on an
/// async worker.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("handler task panicked")
}

/// Fields by column label.
pub type FieldMap = BTreeMap<String, String>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub base_id: String,
    pub data: FieldMap,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UpdateRequest {
    /// Columns to change; the rest keep their current values.
    #[serde(default)]
    pub data: FieldMap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WriteAccepted {
    pub voter_id: VoterId,
    /// Epoch the change will be committed in.
    pub epoch: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisclosureRequest {
    pub third_party: String,
    pub voters: Vec<VoterId>,
}

/// Orders `fields` by the schema, requiring every column.
fn row_from_map(reg: &Registry, fields: &FieldMap) -> Result<Vec<String>, RegistryError> {
    if let Some(extra) = fields.keys().find(|k| reg.schema().index_of(k).is_none()) {
        return Err(RegistryError::UnknownColumn(extra.clone()));
    }
    reg.schema()
        .labels()
        .map(|l| fields.get(l).cloned().ok_or_else(|| RegistryError::SchemaMismatch(format!("missing column {l}"))))
        .collect()
}

async fn register_voter(State(s): State<Shared>, headers: HeaderMap, Json(req): Json<RegisterRequest>) -> Response {
    if !authorized(&s, &headers) {
        return ApiError::unauthorized().into_response();
    }
    blocking(move || {
        let Some(mut reg) = s.registry.try_write_for(s.writer_timeout) else {
            return ApiError::busy().into_response();
        };
        let row = match row_from_map(&reg, &req.data) {
            Ok(r) => r,
            Err(e) => return ApiError::from(e).into_response(),
        };
        match register(&mut reg, req.base_id.as_bytes(), &row) {
            Ok(voter_id) => {
                (StatusCode::CREATED, Json(WriteAccepted { voter_id, epoch: reg.pending_epoch() })).into_response()
            }
            Err(e) => workflow_error(&reg, e).into_response(),
        }
    })
    .await
}

async fn update_voter(
    State(s): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(req): Json<UpdateRequest>,
) -> Response {
    if !authorized(&s, &headers) {
        return ApiError::unauthorized().into_response();
    }
    let voter = match parse_voter(&id) {
        Ok(v) => v,
        Err(e) => return e.into_response(),
    };
    write_change(s, voter, Some(req.data), Opcode::Update).await
}

async fn deregister_voter(State(s): State<Shared>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    if !authorized(&s, &headers) {
        return ApiError::unauthorized().into_response();
    }
    let voter = match parse_voter(&id) {
        Ok(v) => v,
        Err(e) => return e.into_response(),
    };
    write_change(s, voter, None, Opcode::Deregister).await
}

async fn write_change(s: Shared, voter: VoterId, changes: Option<FieldMap>, opcode: Opcode) -> Response {
    blocking(move || {
        let Some(mut reg) = s.registry.try_write_for(s.writer_timeout) else {
            return ApiError::busy().into_response();
        };
        let row = match changes.filter(|c| !c.is_empty()) {
            None => None,
            Some(c) => {
                if let Some(extra) = c.keys().find(|k| reg.schema().index_of(k).is_none()) {
                    return ApiError::from(RegistryError::UnknownColumn(extra.clone())).into_response();
                }
                let mut row = match reg.current_data(&voter) {
                    Ok(Some(r)) => r,
                    Ok(None) => return ApiError::not_found(&reg, &voter).into_response(),
                    Err(e) => return ApiError::from(e).into_response(),
                };
                for (label, value) in c {
                    let j = reg.schema().index_of(&label).expect("checked above");
                    row[j] = value;
                }
                Some(row)
            }
        };
        match update_registration(&mut reg, voter, row.as_deref(), opcode) {
            Ok(()) => {
                (StatusCode::ACCEPTED, Json(WriteAccepted { voter_id: voter, epoch: reg.pending_epoch() })).into_response()
            }
            Err(e) => workflow_error(&reg, e).into_response(),
        }
    })
    .await
}

async fn push_epoch(State(s): State<Shared>, headers: HeaderMap) -> Response {
    if !authorized(&s, &headers) {
        return ApiError::unauthorized().into_response();
    }
    blocking(move || {
        let Some(mut reg) = s.registry.try_write_for(s.writer_timeout) else {
            return ApiError::busy().into_response();
        };
        match reg.push_epoch() {
            Ok(entry) => Json(entry).into_response(),
            Err(e) => ApiError::from(e).into_response(),
        }
    })
    .await
}

async fn lookup_voter(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    let voter = match parse_voter(&id) {
        Ok(v) => v,
        Err(e) => return e.into_response(),
    };
    blocking(move || {
        let reg = s.registry.read();
        let proof = reg.lookup(&voter);
        if proof.entry.is_none() {
            return ApiError::not_found(&reg, &voter).into_response();
        }
        Json(proof).into_response()
    })
    .await
}

#[derive(Debug, Deserialize)]
struct RangeParams {
    from: Option<u64>,
    to: Option<u64>,
}

/// Without a token: the committed history and its proof. With a token:
/// the signed query package, keys included, for relay to the voter.
async fn voter_history(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(range): Query<RangeParams>,
    headers: HeaderMap,
) -> Response {
    let voter = match parse_voter(&id) {
        Ok(v) => v,
        Err(e) => return e.into_response(),
    };
    let with_keys = authorized(&s, &headers);
    blocking(move || {
        let reg = s.registry.read();
        if reg.head_entry(&voter).is_none() {
            return ApiError::not_found(&reg, &voter).into_response();
        }
        let from = range.from.unwrap_or(0);
        let to = range.to.unwrap_or_else(|| reg.epoch());
        if with_keys {
            match query_prepare(&reg, &voter, from, to) {
                Ok(pkg) => Json(HistoryResponse::Package(Box::new(pkg))).into_response(),
                Err(e) => workflow_error(&reg, e).into_response(),
            }
        } else {
            match reg.history(&voter, from, to) {
                Ok(h) => Json(HistoryResponse::History(Box::new(h))).into_response(),
                Err(e) => ApiError::from(e).into_response(),
            }
        }
    })
    .await
}

async fn disclose(State(s): State<Shared>, headers: HeaderMap, Json(req): Json<DisclosureRequest>) -> Response {
    if !authorized(&s, &headers) {
        return ApiError::unauthorized().into_response();
    }
    blocking(move || {
        let reg = s.registry.read();
        match maintenance_disclose(&reg, &req.third_party, &req.voters) {
            Ok(pkg) => Json(pkg).into_response(),
            Err(e) => workflow_error(&reg, e).into_response(),
        }
    })
    .await
}

async fn bulletin(State(s): State<Shared>) -> Response {
    blocking(move || Json(s.registry.read().export_bulletin()).into_response()).await
}

async fn bulletin_entry(State(s): State<Shared>, Path(epoch): Path<u64>) -> Response {
    blocking(move || match s.registry.read().bulletin().read(epoch) {
        Some(e) => Json(e.clone()).into_response(),
        None => ApiError::new(StatusCode::NOT_FOUND, "unknown_epoch", format!("epoch {epoch} is not published"))
            .into_response(),
    })
    .await
}

async fn encodings(State(s): State<Shared>) -> Response {
    blocking(move || {
        let reg = s.registry.read();
        match EncodedRegistry::from_registry(&reg, reg.keys().signer_id()) {
            Ok(e) => Json(e).into_response(),
            Err(e) => ApiError::new(StatusCode::NOT_FOUND, "no_encodings", e.to_string()).into_response(),
        }
    })
    .await
}
