//! Request/response transports.
//!
//! A [`Transport`] is always driven by the requesting side: it sends one
//! request frame and waits for one response frame. [`TcpTransport`] opens a
//! fresh connection per exchange; [`LocalTransport`] calls a [`Handler`]
//! in-process and is what tests and the harness use.

use std::io;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

use crate::frame::{self, FrameError, ReadFrameError, DEFAULT_MAX_FRAME_BYTES};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("coordinator unreachable: {0}")]
    Unreachable(String),
    #[error("i/o error during exchange: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

pub trait Transport {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError>;
}

impl<T: Transport + ?Sized> Transport for &T {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        (**self).exchange(request)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        (**self).exchange(request)
    }
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        (**self).exchange(request)
    }
}

/// Server side: turns one request frame into one response frame.
pub trait Handler: Send + Sync {
    fn handle_frame(&self, request: &[u8]) -> Vec<u8>;
}

impl<H: Handler + ?Sized> Handler for Arc<H> {
    fn handle_frame(&self, request: &[u8]) -> Vec<u8> {
        (**self).handle_frame(request)
    }
}

pub struct LocalTransport<H> {
    handler: H,
}

impl<H: Handler> LocalTransport<H> {
    pub fn new(handler: H) -> Self {
        LocalTransport { handler }
    }
}

impl<H: Handler> Transport for LocalTransport<H> {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        Ok(self.handler.handle_frame(request))
    }
}

#[derive(Debug, Clone)]
pub struct TcpTransport {
    addr: String,
    connect_timeout: Duration,
    io_timeout: Duration,
    max_frame: usize,
}

impl TcpTransport {
    pub fn new(addr: impl Into<String>) -> Self {
        TcpTransport {
            addr: addr.into(),
            connect_timeout: Duration::from_secs(5),
            io_timeout: Duration::from_secs(60),
            max_frame: DEFAULT_MAX_FRAME_BYTES,
        }
    }

    pub fn with_timeouts(mut self, connect: Duration, io: Duration) -> Self {
        self.connect_timeout = connect;
        self.io_timeout = io;
        self
    }

    pub fn with_max_frame(mut self, max_frame: usize) -> Self {
        self.max_frame = max_frame;
        self
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn resolve(&self) -> Result<SocketAddr, TransportError> {
        self.addr
            .to_socket_addrs()
            .map_err(|e| TransportError::Unreachable(format!("{}: {e}", self.addr)))?
            .next()
            .ok_or_else(|| TransportError::Unreachable(format!("{}: no address", self.addr)))
    }
}

impl Transport for TcpTransport {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        let addr = self.resolve()?;
        let mut stream = TcpStream::connect_timeout(&addr, self.connect_timeout)
            .map_err(|e| TransportError::Unreachable(format!("{addr}: {e}")))?;
        stream.set_read_timeout(Some(self.io_timeout))?;
        stream.set_write_timeout(Some(self.io_timeout))?;
        stream.set_nodelay(true)?;
        frame::write_frame(&mut stream, request)?;
        match frame::read_frame(&mut stream, self.max_frame) {
            Ok(f) => Ok(f),
            Err(ReadFrameError::Frame(e)) => Err(e.into()),
            Err(ReadFrameError::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => Err(TransportError::Unreachable(
                format!("{addr}: connection closed before reply"),
            )),
            Err(ReadFrameError::Io(e)) => Err(e.into()),
        }
    }
}

/// Answers the single request carried by an accepted connection.
pub fn serve_connection(
    mut stream: TcpStream,
    handler: &dyn Handler,
    max_frame: usize,
    io_timeout: Duration,
) -> io::Result<()> {
    stream.set_read_timeout(Some(io_timeout))?;
    stream.set_write_timeout(Some(io_timeout))?;
    stream.set_nodelay(true)?;
    let request = match frame::read_frame(&mut stream, max_frame) {
        Ok(f) => f,
        // Oversized frames still get a decodable rejection.
        Err(ReadFrameError::Frame(e)) => {
            let reply = handler.handle_frame(&oversized_marker(&e));
            return frame::write_frame(&mut stream, &reply);
        }
        Err(ReadFrameError::Io(e)) => return Err(e),
    };
    let reply = handler.handle_frame(&request);
    frame::write_frame(&mut stream, &reply)
}

// A header-only frame whose declared length can never be satisfied makes
// the handler produce its usual framing error without us buffering the body.
fn oversized_marker(_e: &FrameError) -> Vec<u8> {
    u32::MAX.to_be_bytes().to_vec()
}
