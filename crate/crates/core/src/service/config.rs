use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::ServiceError;

pub const ENV_LISTEN: &str = "VRLOG_LISTEN";
pub const ENV_KEYSTORE: &str = "VRLOG_KEYSTORE";
pub const ENV_DATA_DIR: &str = "VRLOG_DATA_DIR";
/// Comma-separated bearer tokens accepted on write endpoints.
pub const ENV_WRITE_TOKENS: &str = "VRLOG_WRITE_TOKENS";
pub const ENV_EPOCH_SECS: &str = "VRLOG_EPOCH_SECS";
pub const ENV_LINKAGE: &str = "VRLOG_LINKAGE";
pub const ENV_ENCODING_PARAMS: &str = "VRLOG_ENCODING_PARAMS";

#[derive(Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub keystore: PathBuf,
    pub data_dir: PathBuf,
    pub write_tokens: Vec<String>,
    /// Pushes an epoch every this many seconds when set.
    pub epoch_interval_secs: Option<u64>,
    /// Store linkage encodings beside ciphertexts.
    pub linkage: bool,
    pub encoding_params: Option<PathBuf>,
    /// How long a write waits for the registry lock before a 503.
    pub writer_timeout_ms: u64,
}

impl std::fmt::Debug for ServiceConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceConfig")
            .field("listen", &self.listen)
            .field("keystore", &self.keystore)
            .field("data_dir", &self.data_dir)
            .field("write_tokens", &format_args!("[{} redacted]", self.write_tokens.len()))
            .field("epoch_interval_secs", &self.epoch_interval_secs)
            .field("linkage", &self.linkage)
            .field("encoding_params", &self.encoding_params)
            .field("writer_timeout_ms", &self.writer_timeout_ms)
            .finish()
    }
}

/// Config file contents. Every field is optional and overrides the
/// environment.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    listen: Option<SocketAddr>,
    keystore: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    write_tokens: Option<Vec<String>>,
    epoch_interval_secs: Option<u64>,
    linkage: Option<bool>,
    encoding_params: Option<PathBuf>,
    writer_timeout_ms: Option<u64>,
}

impl ServiceConfig {
    pub fn new(keystore: impl Into<PathBuf>, data_dir: impl Into<PathBuf>) -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            keystore: keystore.into(),
            data_dir: data_dir.into(),
            write_tokens: Vec::new(),
            epoch_interval_secs: None,
            linkage: false,
            encoding_params: None,
            writer_timeout_ms: 2000,
        }
    }

    /// Builds a config from the process environment, then `file` if given.
    pub fn resolve(file: Option<&Path>) -> Result<Self, ServiceError> {
        Self::resolve_with(|k| std::env::var(k).ok(), file)
    }

    pub fn resolve_with(env: impl Fn(&str) -> Option<String>, file: Option<&Path>) -> Result<Self, ServiceError> {
        let bad = |what: &str, e: &dyn std::fmt::Display| ServiceError::Config(format!("{what}: {e}"));
        let mut c = Self::new(PathBuf::new(), PathBuf::new());
        if let Some(v) = env(ENV_LISTEN) {
            c.listen = v.parse().map_err(|e| bad(ENV_LISTEN, &e))?;
        }
        if let Some(v) = env(ENV_KEYSTORE) {
            c.keystore = v.into();
        }
        if let Some(v) = env(ENV_DATA_DIR) {
            c.data_dir = v.into();
        }
        if let Some(v) = env(ENV_WRITE_TOKENS) {
            c.write_tokens = v.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::to_owned).collect();
        }
        if let Some(v) = env(ENV_EPOCH_SECS) {
            c.epoch_interval_secs = Some(v.parse().map_err(|e| bad(ENV_EPOCH_SECS, &e))?);
        }
        if let Some(v) = env(ENV_LINKAGE) {
            c.linkage = matches!(v.as_str(), "1" | "true" | "yes");
        }
        if let Some(v) = env(ENV_ENCODING_PARAMS) {
            c.encoding_params = Some(v.into());
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| bad(&path.display().to_string(), &e))?;
            let f: FileConfig = serde_json::from_str(&text).map_err(|e| bad(&path.display().to_string(), &e))?;
            c.listen = f.listen.unwrap_or(c.listen);
            c.keystore = f.keystore.unwrap_or(c.keystore);
            c.data_dir = f.data_dir.unwrap_or(c.data_dir);
            c.write_tokens = f.write_tokens.unwrap_or(c.write_tokens);
            c.epoch_interval_secs = f.epoch_interval_secs.or(c.epoch_interval_secs);
            c.linkage = f.linkage.unwrap_or(c.linkage);
            c.encoding_params = f.encoding_params.or(c.encoding_params);
            c.writer_timeout_ms = f.writer_timeout_ms.unwrap_or(c.writer_timeout_ms);
        }
        if c.keystore.as_os_str().is_empty() {
            return Err(ServiceError::Config(format!("no keystore path; set {ENV_KEYSTORE} or the config file")));
        }
        if c.data_dir.as_os_str().is_empty() {
            return Err(ServiceError::Config(format!("no data directory; set {ENV_DATA_DIR} or the config file")));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn file_overrides_environment() {
        let env: HashMap<&str, &str> = HashMap::from([
            (ENV_KEYSTORE, "/env/keys.json"),
            (ENV_DATA_DIR, "/env/data"),
            (ENV_WRITE_TOKENS, "a, b,,"),
            (ENV_LISTEN, "0.0.0.0:9000"),
        ]);
        let get = |k: &str| env.get(k).map(|v| v.to_string());
        let c = ServiceConfig::resolve_with(get, None).unwrap();
        assert_eq!(c.write_tokens, vec!["a", "b"]);
        assert_eq!(c.listen.port(), 9000);

        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("svc.json");
        std::fs::write(&file, r#"{"data_dir": "/file/data", "write_tokens": ["s3cret-token"], "epoch_interval_secs": 60}"#).unwrap();
        let c = ServiceConfig::resolve_with(get, Some(&file)).unwrap();
        assert_eq!(c.data_dir, PathBuf::from("/file/data"));
        assert_eq!(c.keystore, PathBuf::from("/env/keys.json"));
        assert_eq!(c.write_tokens, vec!["s3cret-token"]);
        assert_eq!(c.epoch_interval_secs, Some(60));
        assert!(!format!("{c:?}").contains("s3cret"));
    }

    #[test]
    fn missing_paths_are_reported() {
        assert!(matches!(ServiceConfig::resolve_with(|_| None, None), Err(ServiceError::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("svc.json");
        std::fs::write(&file, r#"{"keystore": "k", "data_dir": "d", "bogus": 1}"#).unwrap();
        assert!(matches!(ServiceConfig::resolve_with(|_| None, Some(&file)), Err(ServiceError::Config(_))));
    }
}
