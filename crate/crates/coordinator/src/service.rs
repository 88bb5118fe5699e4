//! Message dispatch: decodes a request frame, runs the matching operation
//! and encodes the reply.
//!
//! Replies are remembered per request frame, so a client that resends a
//! request whose reply was lost gets the same answer back instead of having
//! the operation run twice.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex, MutexGuard};

use xw_common::{digest, Digest, Timestamp};
use xw_protocol::{decode_message_with_limit, encode_message_with_limit, Blob, Body, ErrorCode, Handler, Message};

use crate::coordinator::{Coordinator, CoordinatorError, SubmitRequest, SweepReport, UploadOutcome};

const CACHE_ENTRIES: usize = 8192;
const CACHE_BYTES: usize = 256 << 20;

#[derive(Debug, Default)]
struct ReplyCache {
    replies: HashMap<Digest, Vec<u8>>,
    order: VecDeque<Digest>,
    bytes: usize,
}

impl ReplyCache {
    fn get(&self, key: &Digest) -> Option<&Vec<u8>> {
        self.replies.get(key)
    }

    fn insert(&mut self, key: Digest, reply: Vec<u8>) {
        if reply.len() > CACHE_BYTES / 4 {
            return;
        }
        self.bytes += reply.len();
        if let Some(old) = self.replies.insert(key, reply) {
            self.bytes -= old.len();
        } else {
            self.order.push_back(key);
        }
        while self.order.len() > CACHE_ENTRIES || self.bytes > CACHE_BYTES {
            let Some(k) = self.order.pop_front() else { break };
            if let Some(old) = self.replies.remove(&k) {
                self.bytes -= old.len();
            }
        }
    }
}

#[derive(Debug)]
pub struct Service {
    coordinator: Coordinator,
    cache: ReplyCache,
}

impl Service {
    pub fn new(coordinator: Coordinator) -> Self {
        Service {
            coordinator,
            cache: ReplyCache::default(),
        }
    }

    pub fn coordinator(&self) -> &Coordinator {
        &self.coordinator
    }

    pub fn coordinator_mut(&mut self) -> &mut Coordinator {
        &mut self.coordinator
    }

    pub fn into_coordinator(self) -> Coordinator {
        self.coordinator
    }

    pub fn sweep(&mut self, now: Timestamp) -> Result<SweepReport, CoordinatorError> {
        self.coordinator.sweep_liveness(now)
    }

    pub fn handle_frame(&mut self, frame: &[u8]) -> Vec<u8> {
        let max = self.coordinator.config().max_frame_bytes;
        let key = digest(frame);
        if let Some(reply) = self.cache.get(&key) {
            return reply.clone();
        }
        let request = match decode_message_with_limit(frame, max) {
            Ok(m) => m,
            Err(e) => {
                let reply = Message::new("", Body::error(ErrorCode::BadRequest, e.to_string()));
                return encode_reply(&reply, max);
            }
        };
        let reply = self.handle_message(&request);
        let cacheable = !matches!(
            reply.body,
            Body::Error {
                code: ErrorCode::Internal,
                ..
            }
        );
        let bytes = encode_reply(&reply, max);
        if cacheable {
            self.cache.insert(key, bytes.clone());
        }
        bytes
    }

    pub fn handle_message(&mut self, request: &Message) -> Message {
        let kind = request.kind();
        let body = match self.dispatch(request) {
            Ok(body) => body,
            Err(e) => {
                if e.code() == ErrorCode::Internal {
                    log::error!("{kind:?} {}: {e}", request.txid);
                } else {
                    log::debug!("{kind:?} {}: {e}", request.txid);
                }
                Body::Error {
                    code: e.code(),
                    message: e.to_string(),
                    task_id: e.task_id().map(str::to_string),
                }
            }
        };
        request.reply(body)
    }

    fn dispatch(&mut self, request: &Message) -> Result<Body, CoordinatorError> {
        let c = &mut self.coordinator;
        let body = match &request.body {
            Body::Hello { nonce } => {
                let (pk, sig) = c.challenge(nonce.as_slice());
                Body::Challenge {
                    public_key: Blob::new(pk.to_vec()),
                    signature: Blob(sig),
                }
            }
            Body::Login { login, password, role } => {
                let t = c.login(login, password, *role)?;
                Body::LoginOk {
                    token: t.token,
                    principal: t.principal,
                    role: t.role,
                    issued_at: t.issued_at,
                    expires_at: t.expires_at,
                }
            }
            Body::SubmitTask {
                token,
                label,
                app_ref,
                params,
                requirements,
                retention,
            } => {
                let (task_id, created) = c.submit_task(
                    token,
                    SubmitRequest {
                        label: label.clone(),
                        app_ref: app_ref.clone(),
                        params: params.0.clone(),
                        requirements: requirements.clone(),
                        retention: *retention,
                    },
                )?;
                Body::SubmitAck { task_id, created }
            }
            Body::ListTasks { token } => Body::TaskList {
                tasks: c.list_owned_tasks(token)?,
            },
            Body::RequestWork {
                token,
                worker_id,
                capabilities,
            } => match c.request_work(token, worker_id, capabilities, &request.txid)? {
                Some(a) => Body::WorkAssignment {
                    task_id: a.task_id,
                    app_ref: a.app_ref,
                    app_kind: a.app_kind,
                    app_digest: a.app_digest,
                    params: a.params,
                    attempt: a.attempt,
                },
                None => Body::NoWork {},
            },
            Body::Alive { token, worker, task } => Body::AliveDirective {
                task: task.clone(),
                directive: c.report_alive(token, worker, task)?,
            },
            Body::UploadResult {
                token,
                worker,
                task,
                payload,
            } => match c.upload_result(token, worker, task, payload.0.clone(), &request.txid)? {
                UploadOutcome::Accepted => Body::ResultAck { task_id: task.clone() },
                UploadOutcome::Rejected(reason) => Body::ResultReject {
                    task_id: task.clone(),
                    reason,
                },
            },
            Body::ReportFailure {
                token,
                worker,
                task,
                reason,
            } => Body::FailureAck {
                task_id: task.clone(),
                status: c.report_failure(token, worker, task, reason)?,
            },
            Body::FetchResult { token, task_id } => Body::ResultPayload {
                task_id: task_id.clone(),
                payload: Blob(c.fetch_result(token, task_id)?),
            },
            Body::EndSession { token } => Body::SessionEnded {
                discarded: c.end_session(token)?,
            },
            Body::RegisterApp {
                token,
                app_ref,
                kind,
                payload,
            } => {
                c.register_app(token, app_ref, *kind, payload.0.clone())?;
                Body::Ack {}
            }
            Body::AddUser {
                token,
                login,
                password_digest,
                role,
            } => {
                c.add_user(token, login, *password_digest, *role)?;
                Body::Ack {}
            }
            Body::RevokeUser { token, login } => {
                c.revoke_user(token, login)?;
                Body::Ack {}
            }
            Body::DownloadApp { token, app_ref } => {
                let app = c.download_app(token, app_ref)?;
                Body::AppPayload {
                    app_ref: app.app_ref,
                    kind: app.kind,
                    digest: app.digest,
                    payload: app.payload,
                }
            }
            other => {
                return Err(CoordinatorError::BadRequest(format!(
                    "{:?} is not a request",
                    other.kind()
                )))
            }
        };
        Ok(body)
    }
}

fn encode_reply(reply: &Message, max: usize) -> Vec<u8> {
    match encode_message_with_limit(reply, max) {
        Ok(bytes) => bytes,
        Err(e) => {
            let fallback = reply.reply(Body::error(ErrorCode::PayloadTooLarge, e.to_string()));
            encode_message_with_limit(&fallback, max).expect("error replies are small")
        }
    }
}

/// A [`Service`] shared between connection threads and the sweeper.
#[derive(Debug, Clone)]
pub struct SharedService(Arc<Mutex<Service>>);

impl SharedService {
    pub fn new(service: Service) -> Self {
        SharedService(Arc::new(Mutex::new(service)))
    }

    pub fn lock(&self) -> MutexGuard<'_, Service> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Handler for SharedService {
    fn handle_frame(&self, request: &[u8]) -> Vec<u8> {
        self.lock().handle_frame(request)
    }
}
