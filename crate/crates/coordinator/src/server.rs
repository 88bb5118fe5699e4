//! TCP front end. One thread accepts connections and hands each to a short
//! lived thread that answers its single request; another thread sweeps for
//! silent workers once per alive period.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use xw_protocol::serve_connection;

use crate::service::SharedService;

const IO_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Default)]
struct Stop {
    flag: AtomicBool,
    lock: Mutex<()>,
    wake: Condvar,
}

impl Stop {
    fn is_set(&self) -> bool {
        self.flag.load(Ordering::SeqCst)
    }

    fn set(&self) {
        self.flag.store(true, Ordering::SeqCst);
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        self.wake.notify_all();
    }

    /// Sleeps up to `d`; returns true if stopped meanwhile.
    fn wait(&self, d: Duration) -> bool {
        let guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        let (_g, _) = self
            .wake
            .wait_timeout_while(guard, d, |_| !self.is_set())
            .unwrap_or_else(|p| p.into_inner());
        self.is_set()
    }
}

pub struct Server {
    addr: SocketAddr,
    service: SharedService,
    stop: Arc<Stop>,
    threads: Vec<JoinHandle<()>>,
}

impl std::fmt::Debug for Server {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Server").field("addr", &self.addr).finish()
    }
}

impl Server {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn start(service: SharedService, addr: &str) -> io::Result<Server> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let (max_frame, period) = {
            let s = service.lock();
            let cfg = s.coordinator().config();
            (cfg.max_frame_bytes, cfg.alive_period())
        };
        let stop = Arc::new(Stop::default());

        let acceptor = {
            let service = service.clone();
            let stop = stop.clone();
            std::thread::Builder::new()
                .name("xw-accept".into())
                .spawn(move || accept_loop(listener, service, stop, max_frame))?
        };
        let sweeper = {
            let service = service.clone();
            let stop = stop.clone();
            std::thread::Builder::new().name("xw-sweep".into()).spawn(move || {
                while !stop.wait(period) {
                    let mut s = service.lock();
                    let now = s.coordinator().now();
                    match s.sweep(now) {
                        Ok(r) if !r.disconnected.is_empty() => log::info!(
                            "sweep: {} workers lost, {} tasks requeued, {} aborted",
                            r.disconnected.len(),
                            r.rescheduled.len(),
                            r.aborted.len()
                        ),
                        Ok(_) => {}
                        Err(e) => log::error!("sweep failed: {e}"),
                    }
                }
            })?
        };
        log::info!("coordinator listening on {addr}");
        Ok(Server {
            addr,
            service,
            stop,
            threads: vec![acceptor, sweeper],
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn service(&self) -> &SharedService {
        &self.service
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        if self.threads.is_empty() {
            return;
        }
        self.stop.set();
        // Unblock accept().
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn accept_loop(listener: TcpListener, service: SharedService, stop: Arc<Stop>, max_frame: usize) {
    for conn in listener.incoming() {
        if stop.is_set() {
            break;
        }
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let service = service.clone();
        let spawned = std::thread::Builder::new().name("xw-conn".into()).spawn(move || {
            if let Err(e) = serve_connection(stream, &service, max_frame, IO_TIMEOUT) {
                log::debug!("connection dropped: {e}");
            }
        });
        if let Err(e) = spawned {
            log::warn!("cannot spawn connection thread: {e}");
        }
    }
}
