//! Message kinds and their JSON encoding.

use serde::{Deserialize, Serialize};
use xw_common::{Digest, Timestamp};

use crate::frame::{self, FrameError, DEFAULT_MAX_FRAME_BYTES};
use crate::types::*;

/// One request or response. `txid` is chosen by the requester and echoed in
/// the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub txid: String,
    #[serde(flatten)]
    pub body: Body,
}

impl Message {
    pub fn new(txid: impl Into<String>, body: Body) -> Self {
        Message {
            txid: txid.into(),
            body,
        }
    }

    pub fn kind(&self) -> Kind {
        self.body.kind()
    }

    /// Builds the response to `self`, echoing its transaction id.
    pub fn reply(&self, body: Body) -> Message {
        Message::new(self.txid.clone(), body)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Body {
    /// Opens the identity challenge; `nonce` is 16 fresh random bytes.
    Hello {
        nonce: Blob,
    },
    Challenge {
        public_key: Blob,
        signature: Blob,
    },

    Login {
        login: String,
        password: String,
        role: Role,
    },
    LoginOk {
        token: String,
        principal: String,
        role: Role,
        issued_at: Timestamp,
        expires_at: Timestamp,
    },

    SubmitTask {
        token: String,
        label: String,
        app_ref: String,
        params: Blob,
        requirements: PlatformRequirements,
        retention: Retention,
    },
    SubmitAck {
        task_id: String,
        created: bool,
    },

    ListTasks {
        token: String,
    },
    TaskList {
        tasks: Vec<TaskSummary>,
    },

    RequestWork {
        token: String,
        worker_id: String,
        capabilities: WorkerCapabilities,
    },
    WorkAssignment {
        task_id: String,
        app_ref: String,
        app_kind: AppKind,
        app_digest: Digest,
        params: Blob,
        attempt: u32,
    },
    NoWork {},

    Alive {
        token: String,
        worker: String,
        task: String,
    },
    AliveDirective {
        task: String,
        directive: Directive,
    },

    UploadResult {
        token: String,
        worker: String,
        task: String,
        payload: Blob,
    },
    ResultAck {
        task_id: String,
    },
    ResultReject {
        task_id: String,
        reason: RejectReason,
    },

    ReportFailure {
        token: String,
        worker: String,
        task: String,
        reason: String,
    },
    FailureAck {
        task_id: String,
        status: TaskStatus,
    },

    FetchResult {
        token: String,
        task_id: String,
    },
    ResultPayload {
        task_id: String,
        payload: Blob,
    },

    EndSession {
        token: String,
    },
    SessionEnded {
        discarded: u64,
    },

    RegisterApp {
        token: String,
        app_ref: String,
        kind: AppKind,
        payload: Blob,
    },
    AddUser {
        token: String,
        login: String,
        password_digest: Digest,
        role: Role,
    },
    RevokeUser {
        token: String,
        login: String,
    },
    Ack {},

    DownloadApp {
        token: String,
        app_ref: String,
    },
    AppPayload {
        app_ref: String,
        kind: AppKind,
        digest: Digest,
        payload: Blob,
    },

    Error {
        code: ErrorCode,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task_id: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Hello,
    Challenge,
    Login,
    LoginOk,
    SubmitTask,
    SubmitAck,
    ListTasks,
    TaskList,
    RequestWork,
    WorkAssignment,
    NoWork,
    Alive,
    AliveDirective,
    UploadResult,
    ResultAck,
    ResultReject,
    ReportFailure,
    FailureAck,
    FetchResult,
    ResultPayload,
    EndSession,
    SessionEnded,
    RegisterApp,
    AddUser,
    RevokeUser,
    Ack,
    DownloadApp,
    AppPayload,
    Error,
}

impl Kind {
    pub const ALL: [Kind; 29] = [
        Kind::Hello,
        Kind::Challenge,
        Kind::Login,
        Kind::LoginOk,
        Kind::SubmitTask,
        Kind::SubmitAck,
        Kind::ListTasks,
        Kind::TaskList,
        Kind::RequestWork,
        Kind::WorkAssignment,
        Kind::NoWork,
        Kind::Alive,
        Kind::AliveDirective,
        Kind::UploadResult,
        Kind::ResultAck,
        Kind::ResultReject,
        Kind::ReportFailure,
        Kind::FailureAck,
        Kind::FetchResult,
        Kind::ResultPayload,
        Kind::EndSession,
        Kind::SessionEnded,
        Kind::RegisterApp,
        Kind::AddUser,
        Kind::RevokeUser,
        Kind::Ack,
        Kind::DownloadApp,
        Kind::AppPayload,
        Kind::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Hello => "Hello",
            Kind::Challenge => "Challenge",
            Kind::Login => "Login",
            Kind::LoginOk => "LoginOk",
            Kind::SubmitTask => "SubmitTask",
            Kind::SubmitAck => "SubmitAck",
            Kind::ListTasks => "ListTasks",
            Kind::TaskList => "TaskList",
            Kind::RequestWork => "RequestWork",
            Kind::WorkAssignment => "WorkAssignment",
            Kind::NoWork => "NoWork",
            Kind::Alive => "Alive",
            Kind::AliveDirective => "AliveDirective",
            Kind::UploadResult => "UploadResult",
            Kind::ResultAck => "ResultAck",
            Kind::ResultReject => "ResultReject",
            Kind::ReportFailure => "ReportFailure",
            Kind::FailureAck => "FailureAck",
            Kind::FetchResult => "FetchResult",
            Kind::ResultPayload => "ResultPayload",
            Kind::EndSession => "EndSession",
            Kind::SessionEnded => "SessionEnded",
            Kind::RegisterApp => "RegisterApp",
            Kind::AddUser => "AddUser",
            Kind::RevokeUser => "RevokeUser",
            Kind::Ack => "Ack",
            Kind::DownloadApp => "DownloadApp",
            Kind::AppPayload => "AppPayload",
            Kind::Error => "Error",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.iter().copied().find(|k| k.as_str() == s)
    }

    /// Response kinds a request may legally receive, `Error` excluded.
    /// Empty for response kinds.
    pub fn responses(self) -> &'static [Kind] {
        match self {
            Kind::Hello => &[Kind::Challenge],
            Kind::Login => &[Kind::LoginOk],
            Kind::SubmitTask => &[Kind::SubmitAck],
            Kind::ListTasks => &[Kind::TaskList],
            Kind::RequestWork => &[Kind::WorkAssignment, Kind::NoWork],
            Kind::Alive => &[Kind::AliveDirective],
            Kind::UploadResult => &[Kind::ResultAck, Kind::ResultReject],
            Kind::ReportFailure => &[Kind::FailureAck],
            Kind::FetchResult => &[Kind::ResultPayload],
            Kind::EndSession => &[Kind::SessionEnded],
            Kind::RegisterApp | Kind::AddUser | Kind::RevokeUser => &[Kind::Ack],
            Kind::DownloadApp => &[Kind::AppPayload],
            _ => &[],
        }
    }

    pub fn is_request(self) -> bool {
        !self.responses().is_empty()
    }

    /// Whether `response` answers a request of this kind.
    pub fn accepts(self, response: Kind) -> bool {
        response == Kind::Error || self.responses().contains(&response)
    }
}

impl Body {
    pub fn kind(&self) -> Kind {
        match self {
            Body::Hello { .. } => Kind::Hello,
            Body::Challenge { .. } => Kind::Challenge,
            Body::Login { .. } => Kind::Login,
            Body::LoginOk { .. } => Kind::LoginOk,
            Body::SubmitTask { .. } => Kind::SubmitTask,
            Body::SubmitAck { .. } => Kind::SubmitAck,
            Body::ListTasks { .. } => Kind::ListTasks,
            Body::TaskList { .. } => Kind::TaskList,
            Body::RequestWork { .. } => Kind::RequestWork,
            Body::WorkAssignment { .. } => Kind::WorkAssignment,
            Body::NoWork {} => Kind::NoWork,
            Body::Alive { .. } => Kind::Alive,
            Body::AliveDirective { .. } => Kind::AliveDirective,
            Body::UploadResult { .. } => Kind::UploadResult,
            Body::ResultAck { .. } => Kind::ResultAck,
            Body::ResultReject { .. } => Kind::ResultReject,
            Body::ReportFailure { .. } => Kind::ReportFailure,
            Body::FailureAck { .. } => Kind::FailureAck,
            Body::FetchResult { .. } => Kind::FetchResult,
            Body::ResultPayload { .. } => Kind::ResultPayload,
            Body::EndSession { .. } => Kind::EndSession,
            Body::SessionEnded { .. } => Kind::SessionEnded,
            Body::RegisterApp { .. } => Kind::RegisterApp,
            Body::AddUser { .. } => Kind::AddUser,
            Body::RevokeUser { .. } => Kind::RevokeUser,
            Body::Ack {} => Kind::Ack,
            Body::DownloadApp { .. } => Kind::DownloadApp,
            Body::AppPayload { .. } => Kind::AppPayload,
            Body::Error { .. } => Kind::Error,
        }
    }

    /// The session token carried by an authenticated request.
    pub fn token(&self) -> Option<&str> {
        match self {
            Body::SubmitTask { token, .. }
            | Body::ListTasks { token }
            | Body::RequestWork { token, .. }
            | Body::Alive { token, .. }
            | Body::UploadResult { token, .. }
            | Body::ReportFailure { token, .. }
            | Body::FetchResult { token, .. }
            | Body::EndSession { token }
            | Body::RegisterApp { token, .. }
            | Body::AddUser { token, .. }
            | Body::RevokeUser { token, .. }
            | Body::DownloadApp { token, .. } => Some(token),
            _ => None,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Body {
        Body::Error {
            code,
            message: message.into(),
            task_id: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error("message not representable: {0}")]
    Unrepresentable(String),
    #[error("encoded message of {size} bytes exceeds the {max}-byte frame limit")]
    TooLarge { size: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("malformed message: {0}")]
    Parse(String),
    #[error("unknown message kind {0:?}")]
    UnknownKind(String),
}

pub fn encode_message(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    encode_message_with_limit(msg, DEFAULT_MAX_FRAME_BYTES)
}

pub fn encode_message_with_limit(msg: &Message, max: usize) -> Result<Vec<u8>, EncodeError> {
    let json = serde_json::to_vec(msg).map_err(|e| EncodeError::Unrepresentable(e.to_string()))?;
    if json.len() > max || json.len() > u32::MAX as usize {
        return Err(EncodeError::TooLarge { size: json.len(), max });
    }
    Ok(frame::encode_frame(&json))
}

pub fn decode_message(bytes: &[u8]) -> Result<Message, DecodeError> {
    decode_message_with_limit(bytes, DEFAULT_MAX_FRAME_BYTES)
}

pub fn decode_message_with_limit(bytes: &[u8], max: usize) -> Result<Message, DecodeError> {
    let payload = frame::decode_frame(bytes, max)?;
    let value: serde_json::Value = serde_json::from_slice(payload).map_err(|e| DecodeError::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| DecodeError::Parse("message is not a JSON object".into()))?;
    let kind = obj
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| DecodeError::Parse("missing \"type\"".into()))?;
    if Kind::parse(kind).is_none() {
        return Err(DecodeError::UnknownKind(kind.to_string()));
    }
    if !obj.get("txid").is_some_and(|t| t.is_string()) {
        return Err(DecodeError::Parse("missing \"txid\"".into()));
    }
    serde_json::from_value(value).map_err(|e| DecodeError::Parse(e.to_string()))
}
