use std::time::Duration;

use serde::{Deserialize, Serialize};
use xw_common::{ConfigError, Validate};
use xw_protocol::CoordinatorFingerprint;

fn default_poll() -> f64 {
    2.0
}
fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    /// `host:port` of the coordinator.
    pub coordinator: String,
    pub fingerprint: CoordinatorFingerprint,
    pub login: String,
    pub password: String,
    #[serde(default = "default_poll")]
    pub poll_interval_s: f64,
    /// Items per submission round of the feeder.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Give up waiting for results after this long; unset waits forever.
    #[serde(default)]
    pub deadline_s: Option<f64>,
    /// Application used by `submit` and `feeder` when none is given.
    #[serde(default)]
    pub app: Option<String>,
}

impl ClientConfig {
    pub fn new(
        coordinator: impl Into<String>,
        fingerprint: CoordinatorFingerprint,
        login: impl Into<String>,
        password: impl Into<String>,
    ) -> Self {
        ClientConfig {
            coordinator: coordinator.into(),
            fingerprint,
            login: login.into(),
            password: password.into(),
            poll_interval_s: default_poll(),
            batch_size: default_batch(),
            deadline_s: None,
            app: None,
        }
    }

    pub fn poll_interval(&self) -> Duration {
        Duration::from_secs_f64(self.poll_interval_s)
    }

    pub fn deadline(&self) -> Option<Duration> {
        self.deadline_s.map(Duration::from_secs_f64)
    }
}

impl Validate for ClientConfig {
    const KNOWN_KEYS: &'static [&'static str] = &[
        "coordinator",
        "fingerprint",
        "login",
        "password",
        "poll_interval_s",
        "batch_size",
        "deadline_s",
        "app",
    ];
    const REQUIRED_KEYS: &'static [&'static str] = &["coordinator", "fingerprint", "login", "password"];

    fn validate(&self) -> Result<(), ConfigError> {
        if self.login.is_empty() {
            return Err(ConfigError::out_of_range("login", "must not be empty"));
        }
        if !(self.poll_interval_s.is_finite() && self.poll_interval_s > 0.0) {
            return Err(ConfigError::out_of_range("poll_interval_s", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::out_of_range("batch_size", "must be positive"));
        }
        if let Some(d) = self.deadline_s {
            if !(d.is_finite() && d >= 0.0) {
                return Err(ConfigError::out_of_range("deadline_s", "must be non-negative"));
            }
        }
        Ok(())
    }
}
