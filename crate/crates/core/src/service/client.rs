use reqwest::blocking::{Client, RequestBuilder};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{DisclosureRequest, FieldMap, RegisterRequest, UpdateRequest, WriteAccepted};
use crate::crypto::VoterId;
use crate::pprl::EncodedRegistry;
use crate::registry::{BulletinEntry, BulletinExport, History, LookupProof};
use crate::workflows::{DisclosurePackage, QueryPackage};

/// Body of `GET /v1/voters/{id}/history`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HistoryResponse {
    /// Served to authenticated callers.
    Package(Box<QueryPackage>),
    History(Box<History>),
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("HTTP {status} {kind}: {message}")]
    Http { status: u16, kind: String, message: String, body: serde_json::Value },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Http { status, .. } => Some(*status),
            _ => None,
        }
    }

    /// The non-inclusion proof carried by a 404 for an unknown voter.
    pub fn absence_proof(&self) -> Option<LookupProof> {
        match self {
            ClientError::Http { body, .. } => serde_json::from_value(body.get("proof")?.clone()).ok(),
            _ => None,
        }
    }
}

/// Blocking client for the registry service. Responses are returned as
/// served; callers verify them against the bulletin.
#[derive(Debug, Clone)]
pub struct ServiceClient {
    base: String,
    token: Option<String>,
    http: Client,
}

impl ServiceClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self { base: base_url.into().trim_end_matches('/').to_owned(), token: None, http: Client::new() }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, ClientError> {
        let req = match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        };
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            let body: serde_json::Value = serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null);
            let field = |k: &str| body.get(k).and_then(|v| v.as_str()).unwrap_or_default().to_owned();
            return Err(ClientError::Http { status: status.as_u16(), kind: field("error"), message: field("message"), body });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn register(&self, base_id: &str, data: FieldMap) -> Result<WriteAccepted, ClientError> {
        let body = RegisterRequest { base_id: base_id.to_owned(), data };
        self.send(self.http.post(self.url("/v1/voters")).json(&body))
    }

    /// Changes the given columns; the rest keep their values.
    pub fn update(&self, voter: &VoterId, data: FieldMap) -> Result<WriteAccepted, ClientError> {
        self.send(self.http.put(self.url(&format!("/v1/voters/{voter}"))).json(&UpdateRequest { data }))
    }

    pub fn deregister(&self, voter: &VoterId) -> Result<WriteAccepted, ClientError> {
        self.send(self.http.delete(self.url(&format!("/v1/voters/{voter}"))))
    }

    pub fn push_epoch(&self) -> Result<BulletinEntry, ClientError> {
        self.send(self.http.post(self.url("/v1/epochs/push")))
    }

    pub fn lookup(&self, voter: &VoterId) -> Result<LookupProof, ClientError> {
        self.send(self.http.get(self.url(&format!("/v1/voters/{voter}"))))
    }

    pub fn history(&self, voter: &VoterId, from: Option<u64>, to: Option<u64>) -> Result<HistoryResponse, ClientError> {
        let mut q = Vec::new();
        if let Some(f) = from {
            q.push(("from", f));
        }
        if let Some(t) = to {
            q.push(("to", t));
        }
        self.send(self.http.get(self.url(&format!("/v1/voters/{voter}/history"))).query(&q))
    }

    /// Fetches a signed query package. Needs a token.
    pub fn query(&self, voter: &VoterId, from: Option<u64>, to: Option<u64>) -> Result<QueryPackage, ClientError> {
        match self.history(voter, from, to)? {
            HistoryResponse::Package(p) => Ok(*p),
            HistoryResponse::History(_) => {
                Err(ClientError::Decode("service returned a keyless history; is the token valid?".into()))
            }
        }
    }

    pub fn disclose(&self, third_party: &str, voters: &[VoterId]) -> Result<DisclosurePackage, ClientError> {
        let body = DisclosureRequest { third_party: third_party.to_owned(), voters: voters.to_vec() };
        self.send(self.http.post(self.url("/v1/disclosures")).json(&body))
    }

    pub fn bulletin(&self) -> Result<BulletinExport, ClientError> {
        self.send(self.http.get(self.url("/v1/bulletin")))
    }

    pub fn bulletin_entry(&self, epoch: u64) -> Result<BulletinEntry, ClientError> {
        self.send(self.http.get(self.url(&format!("/v1/bulletin/{epoch}"))))
    }

    pub fn encodings(&self) -> Result<EncodedRegistry, ClientError> {
        self.send(self.http.get(self.url("/v1/encodings")))
    }
}
