use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use xw_common::{ConfigError, Digest, Validate};
use xw_protocol::{CoordinatorIdentity, Role, DEFAULT_MAX_FRAME_BYTES, DEFAULT_PORT};

/// One access-control entry seeded from the configuration file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserEntry {
    pub login: String,
    /// See [`xw_protocol::password_digest`].
    pub password_digest: Digest,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorConfig {
    #[serde(default = "default_bind")]
    pub bind_address: String,
    #[serde(default = "default_port")]
    pub port: u16,
    pub journal_path: PathBuf,
    /// Hex seed of the coordinator's ed25519 key.
    pub identity_key: String,
    pub admin_login: String,
    #[serde(default)]
    pub acl: Vec<UserEntry>,
    #[serde(default = "default_alive_period")]
    pub alive_period_s: f64,
    /// Defaults to three alive periods.
    #[serde(default)]
    pub alive_timeout_s: Option<f64>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_max_frame")]
    pub max_frame_bytes: usize,
    #[serde(default = "default_max_payload")]
    pub max_payload_bytes: usize,
    #[serde(default = "default_queue_limit")]
    pub queue_limit: usize,
    #[serde(default = "default_true")]
    pub sync_journal: bool,
    #[serde(default = "default_token_lifetime")]
    pub token_lifetime_s: u64,
}

fn default_bind() -> String {
    "0.0.0.0".into()
}
fn default_port() -> u16 {
    DEFAULT_PORT
}
fn default_alive_period() -> f64 {
    30.0
}
fn default_max_attempts() -> u32 {
    5
}
fn default_max_frame() -> usize {
    DEFAULT_MAX_FRAME_BYTES
}
fn default_max_payload() -> usize {
    32 * 1024 * 1024
}
fn default_queue_limit() -> usize {
    1_000_000
}
fn default_true() -> bool {
    true
}
fn default_token_lifetime() -> u64 {
    24 * 3600
}

impl CoordinatorConfig {
    /// A configuration with every default applied.
    pub fn new(journal_path: impl Into<PathBuf>, identity: &CoordinatorIdentity, admin_login: &str) -> Self {
        let mut cfg = CoordinatorConfig {
            bind_address: default_bind(),
            port: default_port(),
            journal_path: journal_path.into(),
            identity_key: identity.seed_hex(),
            admin_login: admin_login.to_string(),
            acl: Vec::new(),
            alive_period_s: default_alive_period(),
            alive_timeout_s: None,
            max_attempts: default_max_attempts(),
            max_frame_bytes: default_max_frame(),
            max_payload_bytes: default_max_payload(),
            queue_limit: default_queue_limit(),
            sync_journal: true,
            token_lifetime_s: default_token_lifetime(),
        };
        cfg.resolve();
        cfg
    }

    pub fn with_alive_period(mut self, period_s: f64) -> Self {
        self.alive_period_s = period_s;
        self.alive_timeout_s = Some(3.0 * period_s);
        self
    }

    pub fn alive_period(&self) -> Duration {
        Duration::from_secs_f64(self.alive_period_s)
    }

    pub fn alive_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.alive_timeout_s.unwrap_or(3.0 * self.alive_period_s))
    }

    pub fn token_lifetime(&self) -> Duration {
        Duration::from_secs(self.token_lifetime_s)
    }

    pub fn identity(&self) -> CoordinatorIdentity {
        CoordinatorIdentity::from_hex(&self.identity_key).expect("validated at load")
    }
}

impl Validate for CoordinatorConfig {
    const KNOWN_KEYS: &'static [&'static str] = &[
        "bind_address",
        "port",
        "journal_path",
        "identity_key",
        "admin_login",
        "acl",
        "alive_period_s",
        "alive_timeout_s",
        "max_attempts",
        "max_frame_bytes",
        "max_payload_bytes",
        "queue_limit",
        "sync_journal",
        "token_lifetime_s",
    ];
    const REQUIRED_KEYS: &'static [&'static str] = &["journal_path", "identity_key", "admin_login"];

    fn resolve(&mut self) {
        self.alive_timeout_s.get_or_insert(3.0 * self.alive_period_s);
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alive_period_s > 0.0 && self.alive_period_s.is_finite()) {
            return Err(ConfigError::out_of_range("alive_period_s", "must be positive"));
        }
        let timeout = self.alive_timeout_s.unwrap_or(3.0 * self.alive_period_s);
        if !(timeout >= self.alive_period_s && timeout.is_finite()) {
            return Err(ConfigError::out_of_range(
                "alive_timeout_s",
                "must be at least alive_period_s",
            ));
        }
        if self.max_attempts == 0 {
            return Err(ConfigError::out_of_range("max_attempts", "must be at least 1"));
        }
        if !(1024..=DEFAULT_MAX_FRAME_BYTES).contains(&self.max_frame_bytes) {
            return Err(ConfigError::out_of_range(
                "max_frame_bytes",
                format!("must be within 1024..={DEFAULT_MAX_FRAME_BYTES}"),
            ));
        }
        if self.max_payload_bytes == 0 || self.max_payload_bytes > self.max_frame_bytes {
            return Err(ConfigError::out_of_range(
                "max_payload_bytes",
                "must be positive and not above max_frame_bytes",
            ));
        }
        if self.queue_limit == 0 {
            return Err(ConfigError::out_of_range("queue_limit", "must be positive"));
        }
        if self.token_lifetime_s == 0 {
            return Err(ConfigError::out_of_range("token_lifetime_s", "must be positive"));
        }
        if self.admin_login.is_empty() {
            return Err(ConfigError::out_of_range("admin_login", "must not be empty"));
        }
        if CoordinatorIdentity::from_hex(&self.identity_key).is_err() {
            return Err(ConfigError::out_of_range("identity_key", "must be 64 hex digits"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for u in &self.acl {
            if u.login.is_empty() || !seen.insert(u.login.as_str()) {
                return Err(ConfigError::out_of_range(
                    "acl",
                    format!("bad or duplicate login {:?}", u.login),
                ));
            }
        }
        if !self.acl.iter().any(|u| u.login == self.admin_login) {
            log::warn!("admin login {:?} has no acl entry", self.admin_login);
        }
        Ok(())
    }
}
