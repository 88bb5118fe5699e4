//! Typed request helpers on top of a [`Transport`].

use std::sync::atomic::{AtomicU64, Ordering};

use rand::RngCore;

use crate::auth::{verify_challenge, CoordinatorFingerprint, Credential, SessionToken, NONCE_LEN};
use crate::frame::DEFAULT_MAX_FRAME_BYTES;
use crate::message::{
    decode_message_with_limit, encode_message_with_limit, Body, DecodeError, EncodeError, Kind, Message,
};
use crate::transport::{Transport, TransportError};
use crate::types::{Blob, ErrorCode};

/// Produces transaction ids `<prefix>-<n>`.
#[derive(Debug)]
pub struct TxIdGen {
    prefix: String,
    next: AtomicU64,
}

impl TxIdGen {
    pub fn new(prefix: impl Into<String>) -> Self {
        TxIdGen {
            prefix: prefix.into(),
            next: AtomicU64::new(1),
        }
    }

    /// A generator with a random 64-bit prefix.
    pub fn random() -> Self {
        Self::new(format!("{:016x}", rand::random::<u64>()))
    }

    pub fn next_id(&self) -> String {
        format!("{}-{}", self.prefix, self.next.fetch_add(1, Ordering::Relaxed))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RpcError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("undecodable response: {0}")]
    Decode(#[from] DecodeError),
    #[error("coordinator error {code}: {message}")]
    Remote {
        code: ErrorCode,
        message: String,
        task_id: Option<String>,
    },
    #[error("unexpected {got:?} in reply to {request:?}")]
    Unexpected { request: Kind, got: Kind },
    #[error("response txid {got:?} does not echo {sent:?}")]
    TxidMismatch { sent: String, got: String },
}

impl RpcError {
    /// True for failures that say nothing about the coordinator's state
    /// (network down, coordinator stopped), which callers retry.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, RpcError::Transport(_))
    }

    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            RpcError::Remote { code, .. } => Some(*code),
            _ => None,
        }
    }
}

pub struct Rpc<T> {
    transport: T,
    txids: TxIdGen,
    max_frame: usize,
}

impl<T: Transport> Rpc<T> {
    pub fn new(transport: T) -> Self {
        Self::with_txids(transport, TxIdGen::random())
    }

    pub fn with_txids(transport: T, txids: TxIdGen) -> Self {
        Rpc {
            transport,
            txids,
            max_frame: DEFAULT_MAX_FRAME_BYTES,
        }
    }

    pub fn with_max_frame(mut self, max_frame: usize) -> Self {
        self.max_frame = max_frame;
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn next_txid(&self) -> String {
        self.txids.next_id()
    }

    pub fn call(&self, body: Body) -> Result<Body, RpcError> {
        let txid = self.txids.next_id();
        self.call_with_txid(&txid, body)
    }

    /// Sends `body` under an explicit transaction id; used to replay a
    /// request whose reply was lost.
    pub fn call_with_txid(&self, txid: &str, body: Body) -> Result<Body, RpcError> {
        let request_kind = body.kind();
        let request = encode_message_with_limit(&Message::new(txid, body), self.max_frame)?;
        let reply = self.transport.exchange(&request)?;
        let reply = decode_message_with_limit(&reply, self.max_frame)?;
        if reply.txid != txid {
            return Err(RpcError::TxidMismatch {
                sent: txid.to_string(),
                got: reply.txid,
            });
        }
        let got = reply.kind();
        if !request_kind.accepts(got) {
            return Err(RpcError::Unexpected {
                request: request_kind,
                got,
            });
        }
        match reply.body {
            Body::Error { code, message, task_id } => Err(RpcError::Remote { code, message, task_id }),
            body => Ok(body),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("coordinator failed to prove its identity")]
    FingerprintMismatch,
    #[error("authentication denied: {0}")]
    AuthDenied(String),
    #[error("coordinator unreachable: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Protocol(RpcError),
}

impl From<RpcError> for SessionError {
    fn from(e: RpcError) -> Self {
        match e {
            RpcError::Transport(t) => SessionError::Unreachable(t.to_string()),
            RpcError::Remote {
                code: ErrorCode::AuthDenied,
                message,
                ..
            } => SessionError::AuthDenied(message),
            other => SessionError::Protocol(other),
        }
    }
}

pub fn open_session<T: Transport>(
    rpc: &Rpc<T>,
    trusted: &CoordinatorFingerprint,
    cred: &Credential,
) -> Result<SessionToken, SessionError> {
    open_session_with_rng(rpc, trusted, cred, &mut rand::thread_rng())
}

/// Proves the coordinator's identity with a signed nonce, then logs in.
/// The credential is transmitted only after the proof succeeds.
pub fn open_session_with_rng<T: Transport>(
    rpc: &Rpc<T>,
    trusted: &CoordinatorFingerprint,
    cred: &Credential,
    rng: &mut impl RngCore,
) -> Result<SessionToken, SessionError> {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let reply = rpc.call(Body::Hello {
        nonce: Blob::new(nonce.to_vec()),
    })?;
    let Body::Challenge { public_key, signature } = reply else {
        unreachable!("Hello only accepts Challenge");
    };
    if !verify_challenge(trusted, &nonce, public_key.as_slice(), signature.as_slice()) {
        return Err(SessionError::FingerprintMismatch);
    }
    let reply = rpc.call(Body::Login {
        login: cred.login.clone(),
        password: cred.password.clone(),
        role: cred.role,
    })?;
    let Body::LoginOk {
        token,
        principal,
        role,
        issued_at,
        expires_at,
    } = reply
    else {
        unreachable!("Login only accepts LoginOk");
    };
    Ok(SessionToken {
        token,
        principal,
        role,
        issued_at,
        expires_at,
    })
}
