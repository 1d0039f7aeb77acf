//! Server configuration: a versioned TOML file plus `AGENTDNS_*` overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use agentdns_core::auth::{decode_master_key, generate_master_key, DEFAULT_TOKEN_TTL};
use agentdns_core::billing::BPS_DENOMINATOR;
use agentdns_core::discovery::{Bm25Params, DEFAULT_EMBEDDING_DIM};
use agentdns_core::resolution::DEFAULT_RESOLUTION_TTL;
use agentdns_core::CoreConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_FORMAT: u32 = 1;
pub const MIN_ADMIN_KEY_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: invalid `{field}`: {message}")]
    Invalid {
        path: String,
        field: &'static str,
        message: String,
    },
}

impl ConfigError {
    /// Name of the offending field, if the error is about one.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProviderKind {
    /// Signed feature hashing, no model download.
    Hashing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub format: u32,
    pub listen: String,
    /// Externally visible base URL. Defaults to `http://{listen}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_url: Option<String>,
    /// Omit to run fully in memory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub admin_key: String,
    /// 32 bytes, base64url without padding.
    pub master_key: String,
    #[serde(default = "default_token_ttl")]
    pub default_token_ttl: u64,
    #[serde(default = "default_resolution_ttl")]
    pub default_resolution_ttl: u64,
    #[serde(default)]
    pub platform_fee_bps: u64,
    #[serde(default = "default_embedding")]
    pub embedding: EmbeddingProviderKind,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_k1")]
    pub bm25_k1: f64,
    #[serde(default = "default_b")]
    pub bm25_b: f64,
}

fn default_token_ttl() -> u64 {
    DEFAULT_TOKEN_TTL
}
fn default_resolution_ttl() -> u64 {
    DEFAULT_RESOLUTION_TTL
}
fn default_embedding() -> EmbeddingProviderKind {
    EmbeddingProviderKind::Hashing
}
fn default_embedding_dim() -> usize {
    DEFAULT_EMBEDDING_DIM
}
fn default_k1() -> f64 {
    Bm25Params::default().k1
}
fn default_b() -> f64 {
    Bm25Params::default().b
}

/// Every environment variable consulted by [`ServerConfig::apply_env`].
pub const ENV_VARS: &[&str] = &[
    "AGENTDNS_LISTEN",
    "AGENTDNS_PUBLIC_URL",
    "AGENTDNS_DATA_DIR",
    "AGENTDNS_ADMIN_KEY",
    "AGENTDNS_MASTER_KEY",
    "AGENTDNS_DEFAULT_TOKEN_TTL",
    "AGENTDNS_DEFAULT_RESOLUTION_TTL",
    "AGENTDNS_PLATFORM_FEE_BPS",
    "AGENTDNS_EMBEDDING",
    "AGENTDNS_EMBEDDING_DIM",
    "AGENTDNS_BM25_K1",
    "AGENTDNS_BM25_B",
];

impl ServerConfig {
    /// A fresh config with newly generated keys.
    pub fn generate(listen: &str, data_dir: Option<PathBuf>) -> Self {
        Self {
            format: CONFIG_FORMAT,
            listen: listen.to_string(),
            public_url: None,
            data_dir,
            admin_key: generate_master_key(),
            master_key: generate_master_key(),
            default_token_ttl: DEFAULT_TOKEN_TTL,
            default_resolution_ttl: DEFAULT_RESOLUTION_TTL,
            platform_fee_bps: 0,
            embedding: EmbeddingProviderKind::Hashing,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            bm25_k1: default_k1(),
            bm25_b: default_b(),
        }
    }

    /// Reads, applies process environment overrides, validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        let mut config = Self::from_toml(&text, &shown)?;
        config.apply_env(&shown, |k| std::env::var(k).ok())?;
        config.validate(&shown)?;
        Ok(config)
    }

    pub fn from_toml(text: &str, path: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Overrides fields from `lookup` (normally the process environment).
    pub fn apply_env(
        &mut self,
        path: &str,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(
            path: &str,
            field: &'static str,
            v: &str,
        ) -> Result<T, ConfigError> {
            v.trim().parse().map_err(|_| ConfigError::Invalid {
                path: path.to_string(),
                field,
                message: format!("`{v}` is not a number"),
            })
        }
        if let Some(v) = lookup("AGENTDNS_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = lookup("AGENTDNS_PUBLIC_URL") {
            self.public_url = Some(v);
        }
        if let Some(v) = lookup("AGENTDNS_DATA_DIR") {
            self.data_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup("AGENTDNS_ADMIN_KEY") {
            self.admin_key = v;
        }
        if let Some(v) = lookup("AGENTDNS_MASTER_KEY") {
            self.master_key = v;
        }
        if let Some(v) = lookup("AGENTDNS_DEFAULT_TOKEN_TTL") {
            self.default_token_ttl = num(path, "default_token_ttl", &v)?;
        }
        if let Some(v) = lookup("AGENTDNS_DEFAULT_RESOLUTION_TTL") {
            self.default_resolution_ttl = num(path, "default_resolution_ttl", &v)?;
        }
        if let Some(v) = lookup("AGENTDNS_PLATFORM_FEE_BPS") {
            self.platform_fee_bps = num(path, "platform_fee_bps", &v)?;
        }
        if let Some(v) = lookup("AGENTDNS_EMBEDDING") {
            self.embedding = match v.trim() {
                "hashing" => EmbeddingProviderKind::Hashing,
                other => {
                    return Err(ConfigError::Invalid {
                        path: path.to_string(),
                        field: "embedding",
                        message: format!("unknown provider `{other}`"),
                    })
                }
            };
        }
        if let Some(v) = lookup("AGENTDNS_EMBEDDING_DIM") {
            self.embedding_dim = num(path, "embedding_dim", &v)?;
        }
        if let Some(v) = lookup("AGENTDNS_BM25_K1") {
            self.bm25_k1 = num(path, "bm25_k1", &v)?;
        }
        if let Some(v) = lookup("AGENTDNS_BM25_B") {
            self.bm25_b = num(path, "bm25_b", &v)?;
        }
        Ok(())
    }

    pub fn validate(&self, path: &str) -> Result<(), ConfigError> {
        let bad = |field: &'static str, message: String| {
            Err(ConfigError::Invalid {
                path: path.to_string(),
                field,
                message,
            })
        };
        if self.format != CONFIG_FORMAT {
            return bad("format", format!("unsupported version {}, expected {CONFIG_FORMAT}", self.format));
        }
        if self.listen.parse::<SocketAddr>().is_err() {
            return bad("listen", format!("`{}` is not a socket address", self.listen));
        }
        if let Some(url) = &self.public_url {
            let ok = url::Url::parse(url)
                .map(|u| matches!(u.scheme(), "http" | "https") && u.host().is_some())
                .unwrap_or(false);
            if !ok {
                return bad("public_url", format!("`{url}` is not an http(s) URL"));
            }
        }
        if self.admin_key.len() < MIN_ADMIN_KEY_LEN {
            return bad("admin_key", format!("must be at least {MIN_ADMIN_KEY_LEN} characters"));
        }
        if decode_master_key(&self.master_key).is_none() {
            return bad("master_key", "must be 32 bytes encoded as base64url".into());
        }
        if self.default_token_ttl == 0 {
            return bad("default_token_ttl", "must be positive".into());
        }
        if self.default_resolution_ttl == 0 {
            return bad("default_resolution_ttl", "must be positive".into());
        }
        if self.platform_fee_bps > BPS_DENOMINATOR {
            return bad("platform_fee_bps", format!("must be at most {BPS_DENOMINATOR}"));
        }
        if self.embedding_dim == 0 || self.embedding_dim > 1 << 16 {
            return bad("embedding_dim", "must be between 1 and 65536".into());
        }
        if !(self.bm25_k1.is_finite() && self.bm25_k1 > 0.0) {
            return bad("bm25_k1", "must be a positive number".into());
        }
        if !(0.0..=1.0).contains(&self.bm25_b) {
            return bad("bm25_b", "must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn listen_addr(&self) -> SocketAddr {
        self.listen.parse().expect("validated")
    }

    /// Core settings. `public_url` falls back to the bound address.
    pub fn core_config(&self, bound: SocketAddr) -> CoreConfig {
        CoreConfig {
            data_dir: self.data_dir.clone(),
            master_key: decode_master_key(&self.master_key).expect("validated"),
            default_token_ttl: self.default_token_ttl,
            default_resolution_ttl: self.default_resolution_ttl,
            platform_fee_bps: self.platform_fee_bps,
            bm25: Bm25Params {
                k1: self.bm25_k1,
                b: self.bm25_b,
            },
            public_url: self
                .public_url
                .clone()
                .unwrap_or_else(|| format!("http://{bound}")),
        }
    }
}
