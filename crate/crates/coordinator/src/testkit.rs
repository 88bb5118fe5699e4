//! Ready-made configuration and accounts for tests in this and other crates.

use std::path::Path;
use std::sync::Arc;

use xw_common::{Clock, ManualClock, Timestamp};
use xw_protocol::{password_digest, AppKind, CoordinatorIdentity, Role};

use crate::{Coordinator, CoordinatorConfig, UserEntry};

pub const ADMIN: &str = "admin";
pub const ALICE: &str = "alice";
pub const BOB: &str = "bob";
pub const WORKER: &str = "worker";
pub const APP: &str = "echo";
/// Copies its parameters to the output file.
pub const ECHO_APP: &[u8] = b"#!/bin/sh\ncp \"$1\" out.txt\n";

/// Every test account uses its login, reversed, as password.
pub fn password(login: &str) -> String {
    login.chars().rev().collect()
}

pub fn identity() -> CoordinatorIdentity {
    CoordinatorIdentity::from_seed([7; 32])
}

pub fn config(journal: &Path) -> CoordinatorConfig {
    let mut cfg = CoordinatorConfig::new(journal, &identity(), ADMIN);
    cfg.sync_journal = false;
    cfg.acl = [
        (ADMIN, Role::Client),
        (ALICE, Role::Client),
        (BOB, Role::Client),
        (WORKER, Role::Worker),
    ]
    .into_iter()
    .map(|(login, role)| UserEntry {
        login: login.to_string(),
        password_digest: password_digest(login, &password(login)),
        role,
    })
    .collect();
    cfg
}

pub fn manual_clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(Timestamp::from_millis(1_000_000)))
}

pub fn token(c: &Coordinator, login: &str) -> String {
    let role = c.state().user(login).expect("known test login").role;
    c.login(login, &password(login), role).expect("test login").token
}

/// Opens a coordinator on `journal` with the test accounts and, on a fresh
/// journal, registers the native app [`APP`].
pub fn open(journal: &Path, clock: Arc<dyn Clock>) -> Coordinator {
    open_with(config(journal), clock)
}

pub fn open_with(config: CoordinatorConfig, clock: Arc<dyn Clock>) -> Coordinator {
    let (mut c, _) = Coordinator::recover(config, clock).expect("recover");
    if c.state().app(APP).is_none() {
        let admin = token(&c, ADMIN);
        c.register_app(&admin, APP, AppKind::NativeBinary, ECHO_APP.to_vec())
            .expect("register app");
    }
    c
}
