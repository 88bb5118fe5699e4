//! proptest strategies producing every message kind.

use proptest::collection::vec;
use proptest::prelude::*;
use xw_common::{digest, Digest, Timestamp};

use crate::message::{Body, Message};
use crate::types::*;

fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9_.-]{0,24}",
        any::<String>().prop_map(|s| s.chars().take(40).collect()),
    ]
}

fn blob() -> impl Strategy<Value = Blob> {
    vec(any::<u8>(), 0..256).prop_map(Blob)
}

fn ts() -> impl Strategy<Value = Timestamp> {
    any::<u64>().prop_map(Timestamp)
}

fn dg() -> impl Strategy<Value = Digest> {
    vec(any::<u8>(), 0..16).prop_map(|b| digest(&b))
}

fn role() -> impl Strategy<Value = Role> {
    prop_oneof![Just(Role::Client), Just(Role::Worker)]
}

fn app_kind() -> impl Strategy<Value = AppKind> {
    prop_oneof![Just(AppKind::NativeBinary), Just(AppKind::ManagedArchive)]
}

fn requirements() -> impl Strategy<Value = PlatformRequirements> {
    (text(), text(), any::<bool>(), app_kind()).prop_map(|(cpu_arch, os, needs_managed_runtime, app_kind)| {
        PlatformRequirements {
            cpu_arch,
            os,
            needs_managed_runtime,
            app_kind,
        }
    })
}

fn capabilities() -> impl Strategy<Value = WorkerCapabilities> {
    (text(), text(), any::<bool>()).prop_map(|(a, o, m)| WorkerCapabilities::new(a, o, m))
}

fn retention() -> impl Strategy<Value = Retention> {
    prop_oneof![Just(Retention::DiscardOnFetch), Just(Retention::KeepUntilSessionEnd)]
}

fn status() -> impl Strategy<Value = TaskStatus> {
    prop_oneof![
        Just(TaskStatus::Pending),
        Just(TaskStatus::Scheduled),
        Just(TaskStatus::Completed),
        Just(TaskStatus::Aborted)
    ]
}

fn reject() -> impl Strategy<Value = RejectReason> {
    prop_oneof![
        Just(RejectReason::AlreadyCompleted),
        Just(RejectReason::NotAssignee),
        Just(RejectReason::TaskAborted),
        Just(RejectReason::UnknownTask)
    ]
}

fn error_code() -> impl Strategy<Value = ErrorCode> {
    prop_oneof![
        Just(ErrorCode::AuthDenied),
        Just(ErrorCode::UnknownApp),
        Just(ErrorCode::QueueFull),
        Just(ErrorCode::WorkerBusy),
        Just(ErrorCode::PayloadTooLarge),
        Just(ErrorCode::NotOwner),
        Just(ErrorCode::NotReady),
        Just(ErrorCode::Gone),
        Just(ErrorCode::Aborted),
        Just(ErrorCode::DuplicateApp),
        Just(ErrorCode::UnknownTask),
        Just(ErrorCode::BadRequest),
        Just(ErrorCode::Internal),
    ]
}

pub fn any_body() -> impl Strategy<Value = Body> {
    let a = prop_oneof![
        blob().prop_map(|nonce| Body::Hello { nonce }),
        (blob(), blob()).prop_map(|(public_key, signature)| Body::Challenge { public_key, signature }),
        (text(), text(), role()).prop_map(|(login, password, role)| Body::Login { login, password, role }),
        (text(), text(), role(), ts(), ts()).prop_map(|(token, principal, role, issued_at, expires_at)| {
            Body::LoginOk {
                token,
                principal,
                role,
                issued_at,
                expires_at,
            }
        }),
        (text(), text(), text(), blob(), requirements(), retention()).prop_map(
            |(token, label, app_ref, params, requirements, retention)| Body::SubmitTask {
                token,
                label,
                app_ref,
                params,
                requirements,
                retention
            }
        ),
        (text(), any::<bool>()).prop_map(|(task_id, created)| Body::SubmitAck { task_id, created }),
        text().prop_map(|token| Body::ListTasks { token }),
        vec((text(), text(), status()), 0..6).prop_map(|ts| Body::TaskList {
            tasks: ts
                .into_iter()
                .map(|(task_id, label, status)| TaskSummary { task_id, label, status })
                .collect()
        }),
        (text(), text(), capabilities()).prop_map(|(token, worker_id, capabilities)| Body::RequestWork {
            token,
            worker_id,
            capabilities
        }),
        (text(), text(), app_kind(), dg(), blob(), any::<u32>()).prop_map(
            |(task_id, app_ref, app_kind, app_digest, params, attempt)| Body::WorkAssignment {
                task_id,
                app_ref,
                app_kind,
                app_digest,
                params,
                attempt
            }
        ),
        Just(Body::NoWork {}),
        (text(), text(), text()).prop_map(|(token, worker, task)| Body::Alive { token, worker, task }),
        (text(), any::<bool>()).prop_map(|(task, stop)| Body::AliveDirective {
            task,
            directive: if stop { Directive::Stop } else { Directive::Continue }
        }),
        (text(), text(), text(), blob()).prop_map(|(token, worker, task, payload)| Body::UploadResult {
            token,
            worker,
            task,
            payload
        }),
        text().prop_map(|task_id| Body::ResultAck { task_id }),
    ];
    let b = prop_oneof![
        (text(), reject()).prop_map(|(task_id, reason)| Body::ResultReject { task_id, reason }),
        (text(), text(), text(), text()).prop_map(|(token, worker, task, reason)| Body::ReportFailure {
            token,
            worker,
            task,
            reason
        }),
        (text(), status()).prop_map(|(task_id, status)| Body::FailureAck { task_id, status }),
        (text(), text()).prop_map(|(token, task_id)| Body::FetchResult { token, task_id }),
        (text(), blob()).prop_map(|(task_id, payload)| Body::ResultPayload { task_id, payload }),
        text().prop_map(|token| Body::EndSession { token }),
        any::<u64>().prop_map(|discarded| Body::SessionEnded { discarded }),
        (text(), text(), app_kind(), blob()).prop_map(|(token, app_ref, kind, payload)| Body::RegisterApp {
            token,
            app_ref,
            kind,
            payload
        }),
        (text(), text(), dg(), role()).prop_map(|(token, login, password_digest, role)| Body::AddUser {
            token,
            login,
            password_digest,
            role
        }),
        (text(), text()).prop_map(|(token, login)| Body::RevokeUser { token, login }),
        Just(Body::Ack {}),
        (text(), text()).prop_map(|(token, app_ref)| Body::DownloadApp { token, app_ref }),
        (text(), app_kind(), dg(), blob()).prop_map(|(app_ref, kind, digest, payload)| Body::AppPayload {
            app_ref,
            kind,
            digest,
            payload
        }),
        (error_code(), text(), proptest::option::of(text()))
            .prop_map(|(code, message, task_id)| { Body::Error { code, message, task_id } }),
    ];
    prop_oneof![a, b]
}

pub fn any_message() -> impl Strategy<Value = Message> {
    (text(), any_body()).prop_map(|(txid, body)| Message { txid, body })
}
