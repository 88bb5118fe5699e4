use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use xw_common::{ConfigError, Validate};
use xw_protocol::{CoordinatorFingerprint, WorkerCapabilities};

use crate::policy::ActivationPolicy;
use crate::sandbox::SandboxLimits;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxSettings {
    #[serde(default = "default_max_memory")]
    pub max_memory: u64,
    #[serde(default = "default_max_cpu")]
    pub max_cpu_seconds: f64,
    #[serde(default)]
    pub allow_network: bool,
    #[serde(default = "default_output")]
    pub output_file: String,
}

impl Default for SandboxSettings {
    fn default() -> Self {
        SandboxSettings {
            max_memory: default_max_memory(),
            max_cpu_seconds: default_max_cpu(),
            allow_network: false,
            output_file: default_output(),
        }
    }
}

fn default_max_memory() -> u64 {
    512 << 20
}
fn default_max_cpu() -> f64 {
    3600.0
}
fn default_output() -> String {
    "out.txt".into()
}
fn default_alive_period() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerConfig {
    /// `host:port` of the coordinator.
    pub coordinator: String,
    pub fingerprint: CoordinatorFingerprint,
    pub login: String,
    pub password: String,
    pub state_dir: PathBuf,
    /// Used the first time this state directory starts; generated if absent.
    #[serde(default)]
    pub worker_id: Option<String>,
    #[serde(default)]
    pub policy: ActivationPolicy,
    #[serde(default)]
    pub sandbox: SandboxSettings,
    #[serde(default = "default_alive_period")]
    pub alive_period_s: f64,
    /// Advertised platform; defaults to the local one.
    #[serde(default)]
    pub capabilities: Option<WorkerCapabilities>,
}

impl WorkerConfig {
    pub fn new(
        coordinator: impl Into<String>,
        fingerprint: CoordinatorFingerprint,
        login: impl Into<String>,
        password: impl Into<String>,
        state_dir: impl Into<PathBuf>,
    ) -> Self {
        WorkerConfig {
            coordinator: coordinator.into(),
            fingerprint,
            login: login.into(),
            password: password.into(),
            state_dir: state_dir.into(),
            worker_id: None,
            policy: ActivationPolicy::always(),
            sandbox: SandboxSettings::default(),
            alive_period_s: default_alive_period(),
            capabilities: None,
        }
    }

    pub fn alive_period(&self) -> Duration {
        Duration::from_secs_f64(self.alive_period_s)
    }

    pub fn capabilities(&self) -> WorkerCapabilities {
        self.capabilities.clone().unwrap_or_else(WorkerCapabilities::local)
    }

    pub fn sandbox_limits(&self) -> SandboxLimits {
        SandboxLimits {
            max_memory: self.sandbox.max_memory,
            max_cpu_seconds: self.sandbox.max_cpu_seconds,
            fs_root: self.state_dir.join("sandbox"),
            allow_network: self.sandbox.allow_network,
            output_file: self.sandbox.output_file.clone(),
        }
    }
}

impl Validate for WorkerConfig {
    const KNOWN_KEYS: &'static [&'static str] = &[
        "coordinator",
        "fingerprint",
        "login",
        "password",
        "state_dir",
        "worker_id",
        "policy",
        "sandbox",
        "alive_period_s",
        "capabilities",
    ];
    const REQUIRED_KEYS: &'static [&'static str] = &["coordinator", "fingerprint", "login", "password", "state_dir"];

    fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alive_period_s.is_finite() && self.alive_period_s > 0.0) {
            return Err(ConfigError::out_of_range("alive_period_s", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.policy.max_cpu_load) {
            return Err(ConfigError::out_of_range("policy.max_cpu_load", "must lie in [0, 1]"));
        }
        if !(self.sandbox.max_cpu_seconds.is_finite() && self.sandbox.max_cpu_seconds > 0.0) {
            return Err(ConfigError::out_of_range("sandbox.max_cpu_seconds", "must be positive"));
        }
        if self.sandbox.max_memory == 0 {
            return Err(ConfigError::out_of_range("sandbox.max_memory", "must be positive"));
        }
        let out = std::path::Path::new(&self.sandbox.output_file);
        if self.sandbox.output_file.is_empty() || out.is_absolute() || out.components().any(|c| c.as_os_str() == "..") {
            return Err(ConfigError::out_of_range(
                "sandbox.output_file",
                "must be a relative path inside the sandbox",
            ));
        }
        if self.worker_id.as_deref() == Some("") {
            return Err(ConfigError::out_of_range("worker_id", "must not be empty"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use xw_common::parse_config;

    const FP: &str = "0000000000000000000000000000000000000000000000000000000000000000";

    #[test]
    fn minimal_config_gets_defaults() {
        let text = format!(
            r#"{{"coordinator":"h:4380","fingerprint":"{FP}","login":"w","password":"p","state_dir":"/tmp/x"}}"#
        );
        let c: WorkerConfig = parse_config(&text).unwrap();
        assert_eq!(c.alive_period(), Duration::from_secs(30));
        assert_eq!(c.sandbox.output_file, "out.txt");
        assert_eq!(c.policy, ActivationPolicy::always());
        assert_eq!(c.sandbox_limits().fs_root, PathBuf::from("/tmp/x/sandbox"));
    }

    #[test]
    fn bad_values_are_rejected() {
        let text = format!(
            r#"{{"coordinator":"h:4380","fingerprint":"{FP}","login":"w","password":"p","state_dir":"/tmp/x","alive_period_s":0}}"#
        );
        assert!(matches!(
            parse_config::<WorkerConfig>(&text),
            Err(ConfigError::OutOfRange { .. })
        ));
        let text = format!(
            r#"{{"coordinator":"h:4380","fingerprint":"{FP}","login":"w","password":"p","state_dir":"/tmp/x","sandbox":{{"output_file":"../x"}}}}"#
        );
        assert!(matches!(
            parse_config::<WorkerConfig>(&text),
            Err(ConfigError::OutOfRange { .. })
        ));
        let text = r#"{"coordinator":"h:4380","login":"w","password":"p","state_dir":"/tmp/x"}"#;
        assert!(matches!(
            parse_config::<WorkerConfig>(text),
            Err(ConfigError::MissingKey(_))
        ));
    }
}
