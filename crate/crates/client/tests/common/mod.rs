#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use xw_client::Client;
use xw_common::{Clock, ManualClock};
use xw_coordinator::testkit::{self, WORKER};
use xw_coordinator::{CoordinatorConfig, Service, SharedService, UploadOutcome};
use xw_protocol::{decode_message, Kind, LocalTransport, Transport, TransportError, WorkerCapabilities};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub service: SharedService,
    pub clock: Arc<ManualClock>,
}

impl Fixture {
    pub fn new() -> Fixture {
        Self::with(|_| {})
    }

    pub fn with(tune: impl FnOnce(&mut CoordinatorConfig)) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = testkit::config(&dir.path().join("journal"));
        tune(&mut cfg);
        let clock = testkit::manual_clock();
        let c = testkit::open_with(cfg, clock.clone() as Arc<dyn Clock>);
        Fixture {
            dir,
            service: SharedService::new(Service::new(c)),
            clock,
        }
    }

    pub fn client(&self, login: &str) -> Client<Link> {
        self.client_on(login, self.link())
    }

    pub fn client_on(&self, login: &str, link: Link) -> Client<Link> {
        Client::new(
            link,
            testkit::identity().fingerprint(),
            login,
            &testkit::password(login),
        )
    }

    pub fn link(&self) -> Link {
        Link::new(self.service.clone())
    }

    /// Tasks held by the coordinator for `owner`.
    pub fn queue_len(&self, owner: &str) -> usize {
        let s = self.service.lock();
        s.coordinator().state().tasks().filter(|t| t.owner == owner).count()
    }

    /// Plays a worker that runs every pending task, producing the params
    /// reversed; returns how many it completed.
    pub fn complete_pending(&self) -> usize {
        complete_pending(&self.service)
    }

    /// Plays a worker that fails every pending task once.
    pub fn fail_pending(&self) -> usize {
        let mut s = self.service.lock();
        let c = s.coordinator_mut();
        let token = testkit::token(c, WORKER);
        let caps = WorkerCapabilities::local();
        let mut n = 0;
        while let Some(a) = c
            .request_work(&token, "sim", &caps, &format!("fail-{}", next_txid()))
            .unwrap()
        {
            c.report_failure(&token, "sim", &a.task_id, "crashed").unwrap();
            n += 1;
        }
        n
    }
}

fn next_txid() -> usize {
    static NEXT: AtomicUsize = AtomicUsize::new(0);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

/// Plays a worker that runs every pending task, producing the params
/// reversed; returns how many it completed.
pub fn complete_pending(service: &SharedService) -> usize {
    let mut s = service.lock();
    let c = s.coordinator_mut();
    let token = testkit::token(c, WORKER);
    let caps = WorkerCapabilities::local();
    let mut n = 0;
    while let Some(a) = c
        .request_work(&token, "sim", &caps, &format!("pull-{}", next_txid()))
        .unwrap()
    {
        let mut out = a.params.as_slice().to_vec();
        out.reverse();
        let r = c
            .upload_result(&token, "sim", &a.task_id, out, &format!("up-{}", next_txid()))
            .unwrap();
        assert_eq!(r, UploadOutcome::Accepted);
        n += 1;
    }
    n
}

/// In-process transport that counts exchanges per kind and can die after a
/// given number of exchanges, as the client process would when killed. The
/// exchange on which it dies still reaches the coordinator; only the reply
/// is lost.
#[derive(Clone)]
pub struct Link {
    inner: Arc<LocalTransport<SharedService>>,
    service: SharedService,
    pub exchanges: Arc<AtomicUsize>,
    pub submits: Arc<AtomicUsize>,
    die_after: Option<usize>,
    die_after_submits: Option<usize>,
    autocomplete: bool,
}

impl Link {
    pub fn new(service: SharedService) -> Link {
        Link {
            inner: Arc::new(LocalTransport::new(service.clone())),
            service,
            exchanges: Arc::default(),
            submits: Arc::default(),
            die_after: None,
            die_after_submits: None,
            autocomplete: false,
        }
    }

    pub fn dying_after(mut self, exchanges: usize) -> Link {
        self.die_after = Some(exchanges);
        self
    }

    pub fn dying_after_submits(mut self, submits: usize) -> Link {
        self.die_after_submits = Some(submits);
        self
    }

    /// Completes pending tasks after every exchange.
    pub fn with_worker(mut self) -> Link {
        self.autocomplete = true;
        self
    }

    fn dead(&self) -> bool {
        self.die_after
            .is_some_and(|n| self.exchanges.load(Ordering::SeqCst) >= n)
            || self
                .die_after_submits
                .is_some_and(|n| self.submits.load(Ordering::SeqCst) >= n)
    }
}

impl Transport for Link {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        if self.dead() {
            return Err(TransportError::Unreachable("client killed".into()));
        }
        self.exchanges.fetch_add(1, Ordering::SeqCst);
        if decode_message(request).map(|m| m.kind()).ok() == Some(Kind::SubmitTask) {
            self.submits.fetch_add(1, Ordering::SeqCst);
        }
        let reply = self.inner.exchange(request)?;
        if self.autocomplete {
            complete_pending(&self.service);
        }
        if self.dead() {
            return Err(TransportError::Unreachable("client killed".into()));
        }
        Ok(reply)
    }
}
