//! Agent accounts, opaque bearer tokens and the encrypted vendor credential vault.
//!
//! Neither access keys nor tokens are kept in the clear: the server stores
//! SHA-256 digests and compares digests in constant time. Vendor secrets are
//! sealed with ChaCha20-Poly1305 under the configured master key and only
//! opened on the proxy's forwarding path.

use std::collections::HashMap;
use std::path::Path;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use parking_lot::RwLock;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::clock::Timestamp;
use crate::naming::{validate_label, NameError, ServiceName};
use crate::store::{Journal, StoreError};

pub const DEFAULT_TOKEN_TTL: u64 = 3600;
pub const MASTER_KEY_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("agent `{0}` already exists")]
    DuplicateAgent(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error(transparent)]
    IllegalLabel(#[from] NameError),
    #[error("bad credentials")]
    BadCredentials,
    #[error("account suspended")]
    Suspended,
    #[error("unknown token")]
    Unknown,
    #[error("token expired")]
    Expired,
    #[error("ttl must be positive")]
    InvalidTtl,
    #[error("caller does not own `{0}`")]
    Unauthorized(String),
    #[error("unknown credential reference")]
    UnknownRef,
    #[error("invalid credential header: {0}")]
    InvalidHeader(String),
    #[error("credential vault error")]
    Crypto,
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountStatus {
    Active,
    Suspended,
}

/// Public view of an agent account; never carries the key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAccount {
    pub agent_id: String,
    pub created_at: Timestamp,
    pub status: AccountStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessToken {
    pub token: String,
    pub agent_id: String,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
}

/// Decrypted vendor credential. Only the proxy sees these.
#[derive(Clone, PartialEq, Eq)]
pub struct VendorCredential {
    pub credential_ref: String,
    pub header_name: String,
    pub secret: String,
}

impl std::fmt::Debug for VendorCredential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VendorCredential")
            .field("credential_ref", &self.credential_ref)
            .field("header_name", &self.header_name)
            .field("secret", &"<redacted>")
            .finish()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AgentRow {
    agent_id: String,
    key_hash: String,
    created_at: Timestamp,
    status: AccountStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TokenRow {
    token_hash: String,
    agent_id: String,
    issued_at: Timestamp,
    expires_at: Timestamp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SealedCredential {
    credential_ref: String,
    org_id: String,
    service: ServiceName,
    header_name: String,
    nonce: String,
    ciphertext: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum AuthEvent {
    Agent(AgentRow),
    Token(TokenRow),
    TokenRevoked { token_hash: String },
    Credential(SealedCredential),
}

fn random_secret() -> String {
    let mut bytes = [0u8; 32];
    rand::rng().fill_bytes(&mut bytes);
    URL_SAFE_NO_PAD.encode(bytes)
}

fn digest(secret: &str) -> String {
    hex::encode(Sha256::digest(secret.as_bytes()))
}

/// Headers that may never carry a vendor credential.
const RESERVED_HEADERS: &[&str] = &[
    "authorization",
    "host",
    "connection",
    "content-length",
    "content-type",
    "transfer-encoding",
    "te",
    "trailer",
    "upgrade",
    "keep-alive",
    "proxy-authorization",
    "proxy-authenticate",
    "x-agentdns-request-id",
];

#[derive(Default)]
struct AuthState {
    agents: HashMap<String, AgentRow>,
    tokens: HashMap<String, TokenRow>,
    credentials: HashMap<String, SealedCredential>,
}

pub struct Auth {
    state: RwLock<AuthState>,
    cipher: ChaCha20Poly1305,
    journal: Journal<AuthEvent>,
}

impl Auth {
    pub fn in_memory(master_key: &[u8; MASTER_KEY_LEN]) -> Self {
        Self {
            state: RwLock::default(),
            cipher: ChaCha20Poly1305::new(Key::from_slice(master_key)),
            journal: Journal::in_memory(),
        }
    }

    pub fn open(path: &Path, master_key: &[u8; MASTER_KEY_LEN]) -> Result<Self, AuthError> {
        let (journal, events) = Journal::open(path)?;
        let mut state = AuthState::default();
        for ev in events {
            match ev {
                AuthEvent::Agent(a) => {
                    state.agents.insert(a.agent_id.clone(), a);
                }
                AuthEvent::Token(t) => {
                    state.tokens.insert(t.token_hash.clone(), t);
                }
                AuthEvent::TokenRevoked { token_hash } => {
                    state.tokens.remove(&token_hash);
                }
                AuthEvent::Credential(c) => {
                    state.credentials.insert(c.credential_ref.clone(), c);
                }
            }
        }
        Ok(Self {
            state: RwLock::new(state),
            cipher: ChaCha20Poly1305::new(Key::from_slice(master_key)),
            journal,
        })
    }

    pub fn sync(&self) -> Result<(), AuthError> {
        Ok(self.journal.sync()?)
    }

    /// Creates an account and returns its access key. The key is not recoverable later.
    pub fn create_agent(
        &self,
        agent_id: &str,
        now: Timestamp,
    ) -> Result<(AgentAccount, String), AuthError> {
        validate_label(agent_id)?;
        let mut state = self.state.write();
        if state.agents.contains_key(agent_id) {
            return Err(AuthError::DuplicateAgent(agent_id.to_string()));
        }
        let access_key = random_secret();
        let row = AgentRow {
            agent_id: agent_id.to_string(),
            key_hash: digest(&access_key),
            created_at: now,
            status: AccountStatus::Active,
        };
        self.journal.append(&AuthEvent::Agent(row.clone()))?;
        state.agents.insert(row.agent_id.clone(), row.clone());
        Ok((
            AgentAccount {
                agent_id: row.agent_id,
                created_at: now,
                status: AccountStatus::Active,
            },
            access_key,
        ))
    }

    pub fn agent(&self, agent_id: &str) -> Option<AgentAccount> {
        self.state.read().agents.get(agent_id).map(|a| AgentAccount {
            agent_id: a.agent_id.clone(),
            created_at: a.created_at,
            status: a.status,
        })
    }

    pub fn agent_ids(&self) -> Vec<String> {
        self.state.read().agents.keys().cloned().collect()
    }

    /// Sets the account status. Suspension revokes every live token of the agent.
    pub fn set_agent_status(&self, agent_id: &str, status: AccountStatus) -> Result<(), AuthError> {
        let mut state = self.state.write();
        let mut row = state
            .agents
            .get(agent_id)
            .cloned()
            .ok_or_else(|| AuthError::UnknownAgent(agent_id.to_string()))?;
        row.status = status;
        self.journal.append(&AuthEvent::Agent(row.clone()))?;
        state.agents.insert(agent_id.to_string(), row);
        if status == AccountStatus::Suspended {
            let doomed: Vec<String> = state
                .tokens
                .values()
                .filter(|t| t.agent_id == agent_id)
                .map(|t| t.token_hash.clone())
                .collect();
            for token_hash in doomed {
                self.journal.append(&AuthEvent::TokenRevoked {
                    token_hash: token_hash.clone(),
                })?;
                state.tokens.remove(&token_hash);
            }
        }
        Ok(())
    }

    pub fn issue_token(
        &self,
        agent_id: &str,
        access_key: &str,
        ttl_seconds: u64,
        now: Timestamp,
    ) -> Result<AccessToken, AuthError> {
        if ttl_seconds == 0 || ttl_seconds > i64::MAX as u64 / 2 {
            return Err(AuthError::InvalidTtl);
        }
        let presented = digest(access_key);
        let mut state = self.state.write();
        let (stored, status) = match state.agents.get(agent_id) {
            Some(a) => (a.key_hash.clone(), Some(a.status)),
            // Compare against a dummy so unknown agents cost the same as bad keys.
            None => (digest(""), None),
        };
        let matches: bool = stored.as_bytes().ct_eq(presented.as_bytes()).into();
        match (matches, status) {
            (true, Some(AccountStatus::Active)) => {}
            (true, Some(AccountStatus::Suspended)) => return Err(AuthError::Suspended),
            _ => return Err(AuthError::BadCredentials),
        }
        let token = random_secret();
        let row = TokenRow {
            token_hash: digest(&token),
            agent_id: agent_id.to_string(),
            issued_at: now,
            expires_at: now + ttl_seconds as i64,
        };
        self.journal.append(&AuthEvent::Token(row.clone()))?;
        state.tokens.insert(row.token_hash.clone(), row.clone());
        Ok(AccessToken {
            token,
            agent_id: row.agent_id,
            issued_at: row.issued_at,
            expires_at: row.expires_at,
        })
    }

    /// Returns the agent id iff the token is known and `now < expires_at`.
    pub fn validate_token(&self, token: &str, now: Timestamp) -> Result<String, AuthError> {
        let hash = digest(token);
        let state = self.state.read();
        let row = state.tokens.get(&hash).ok_or(AuthError::Unknown)?;
        if now >= row.expires_at {
            return Err(AuthError::Expired);
        }
        Ok(row.agent_id.clone())
    }

    /// Immediate, global revocation.
    pub fn revoke_token(&self, token: &str) -> Result<(), AuthError> {
        let hash = digest(token);
        let mut state = self.state.write();
        if !state.tokens.contains_key(&hash) {
            return Err(AuthError::Unknown);
        }
        self.journal.append(&AuthEvent::TokenRevoked {
            token_hash: hash.clone(),
        })?;
        state.tokens.remove(&hash);
        Ok(())
    }

    pub fn store_vendor_credential(
        &self,
        org_id: &str,
        service: &ServiceName,
        header_name: &str,
        secret: &str,
    ) -> Result<String, AuthError> {
        if service.org() != org_id {
            return Err(AuthError::Unauthorized(service.to_string()));
        }
        let header_name = header_name.to_ascii_lowercase();
        http::HeaderName::from_bytes(header_name.as_bytes())
            .map_err(|e| AuthError::InvalidHeader(e.to_string()))?;
        if RESERVED_HEADERS.contains(&header_name.as_str()) {
            return Err(AuthError::InvalidHeader(format!(
                "`{header_name}` is reserved"
            )));
        }
        if secret.is_empty() {
            return Err(AuthError::InvalidHeader("empty secret".into()));
        }
        http::HeaderValue::from_str(secret)
            .map_err(|e| AuthError::InvalidHeader(e.to_string()))?;

        let credential_ref = format!("cred_{}", random_secret());
        let mut nonce = [0u8; 12];
        rand::rng().fill_bytes(&mut nonce);
        let ciphertext = self
            .cipher
            .encrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: secret.as_bytes(),
                    aad: credential_ref.as_bytes(),
                },
            )
            .map_err(|_| AuthError::Crypto)?;
        let sealed = SealedCredential {
            credential_ref: credential_ref.clone(),
            org_id: org_id.to_string(),
            service: service.clone(),
            header_name,
            nonce: URL_SAFE_NO_PAD.encode(nonce),
            ciphertext: URL_SAFE_NO_PAD.encode(ciphertext),
        };
        let mut state = self.state.write();
        self.journal.append(&AuthEvent::Credential(sealed.clone()))?;
        state.credentials.insert(credential_ref.clone(), sealed);
        Ok(credential_ref)
    }

    /// True iff the reference exists and belongs to `org_id`.
    pub fn credential_owned_by(&self, credential_ref: &str, org_id: &str) -> bool {
        self.state
            .read()
            .credentials
            .get(credential_ref)
            .is_some_and(|c| c.org_id == org_id)
    }

    pub fn fetch_vendor_credential(&self, credential_ref: &str) -> Result<VendorCredential, AuthError> {
        let sealed = self
            .state
            .read()
            .credentials
            .get(credential_ref)
            .cloned()
            .ok_or(AuthError::UnknownRef)?;
        self.open_sealed(&sealed)
    }

    /// Like `fetch_vendor_credential`, but refuses references owned by another org.
    pub fn fetch_vendor_credential_for(
        &self,
        service: &ServiceName,
        credential_ref: &str,
    ) -> Result<VendorCredential, AuthError> {
        let sealed = self
            .state
            .read()
            .credentials
            .get(credential_ref)
            .filter(|c| c.org_id == service.org())
            .cloned()
            .ok_or(AuthError::UnknownRef)?;
        self.open_sealed(&sealed)
    }

    fn open_sealed(&self, sealed: &SealedCredential) -> Result<VendorCredential, AuthError> {
        let nonce = URL_SAFE_NO_PAD
            .decode(&sealed.nonce)
            .map_err(|_| AuthError::Crypto)?;
        let ciphertext = URL_SAFE_NO_PAD
            .decode(&sealed.ciphertext)
            .map_err(|_| AuthError::Crypto)?;
        if nonce.len() != 12 {
            return Err(AuthError::Crypto);
        }
        let plain = self
            .cipher
            .decrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: &ciphertext,
                    aad: sealed.credential_ref.as_bytes(),
                },
            )
            .map_err(|_| AuthError::Crypto)?;
        Ok(VendorCredential {
            credential_ref: sealed.credential_ref.clone(),
            header_name: sealed.header_name.clone(),
            secret: String::from_utf8(plain).map_err(|_| AuthError::Crypto)?,
        })
    }
}

/// Parses a base64url (or standard base64) 32-byte master key.
pub fn decode_master_key(text: &str) -> Option<[u8; MASTER_KEY_LEN]> {
    let text = text.trim();
    let bytes = URL_SAFE_NO_PAD
        .decode(text.trim_end_matches('='))
        .or_else(|_| base64::engine::general_purpose::STANDARD.decode(text))
        .ok()?;
    bytes.try_into().ok()
}

pub fn generate_master_key() -> String {
    random_secret()
}
