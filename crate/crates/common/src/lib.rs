//! Utilities shared by every component of the grid: content digests,
//! millisecond timestamps and clocks, and validated JSON configuration.

pub mod clock;
pub mod config;
pub mod digest;

pub use clock::{Clock, ManualClock, ScaledClock, SystemClock, Timestamp};
pub use config::{load_config, parse_config, to_json, ConfigError, Validate};
pub use digest::{digest, digest_parts, Digest, DigestAlgorithm};

/// Installs an `env_logger` backend, defaulting to `info`. Safe to call twice.
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .try_init();
}
