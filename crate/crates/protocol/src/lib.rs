//! Wire protocol shared by the coordinator, workers, clients and the harness.
//!
//! Every exchange is one request frame followed by one response frame on a
//! connection opened by the requesting side; the coordinator only ever
//! answers. A frame is a 4-byte big-endian length followed by a UTF-8 JSON
//! object carrying `"type"` and `"txid"`.

pub mod auth;
pub mod frame;
pub mod message;
pub mod rpc;
pub mod transport;
pub mod types;

pub use auth::{
    password_digest, verify_challenge, CoordinatorFingerprint, CoordinatorIdentity, Credential, SessionToken,
    TokenClaims, TokenError,
};
pub use frame::{FrameError, DEFAULT_MAX_FRAME_BYTES};
pub use message::{
    decode_message, decode_message_with_limit, encode_message, encode_message_with_limit, Body, DecodeError,
    EncodeError, Kind, Message,
};
pub use rpc::{open_session, open_session_with_rng, Rpc, RpcError, SessionError, TxIdGen};
pub use transport::{serve_connection, Handler, LocalTransport, TcpTransport, Transport, TransportError};
pub use types::*;

/// Default TCP port of the coordinator.
pub const DEFAULT_PORT: u16 = 4380;

#[cfg(any(test, feature = "arbitrary"))]
pub mod arbitrary;
