use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};
use std::sync::Arc;

use xw_common::SystemClock;
use xw_coordinator::testkit::{self, ALICE, APP, WORKER};
use xw_coordinator::{Server, Service, SharedService};
use xw_protocol::{
    encode_message, open_session, Body, Credential, ErrorCode, Message, PlatformRequirements, Retention, Role, Rpc,
    RpcError, TcpTransport, Transport, WorkerCapabilities,
};

fn start(dir: &std::path::Path) -> Server {
    let c = testkit::open(&dir.join("journal"), Arc::new(SystemClock::new()));
    Server::start(SharedService::new(Service::new(c)), "127.0.0.1:0").unwrap()
}

#[test]
fn full_cycle_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    let rpc = Rpc::new(TcpTransport::new(server.local_addr().to_string()));
    let fp = testkit::identity().fingerprint();
    let alice = open_session(
        &rpc,
        &fp,
        &Credential::new(ALICE, testkit::password(ALICE), Role::Client),
    )
    .unwrap()
    .token;
    let worker = open_session(
        &rpc,
        &fp,
        &Credential::new(WORKER, testkit::password(WORKER), Role::Worker),
    )
    .unwrap()
    .token;

    let submit = Body::SubmitTask {
        token: alice.clone(),
        label: "one".into(),
        app_ref: APP.into(),
        params: xw_protocol::Blob::new(b"hello".to_vec()),
        requirements: PlatformRequirements::any_native(),
        retention: Retention::DiscardOnFetch,
    };
    let Body::SubmitAck { task_id, created: true } = rpc.call(submit).unwrap() else {
        panic!()
    };

    let pull = Body::RequestWork {
        token: worker.clone(),
        worker_id: "w1".into(),
        capabilities: WorkerCapabilities::new("x86_64", "linux", false),
    };
    let Body::WorkAssignment {
        task_id: got,
        params,
        attempt: 1,
        ..
    } = rpc.call(pull).unwrap()
    else {
        panic!()
    };
    assert_eq!(got, task_id);
    assert_eq!(params.as_slice(), b"hello");

    let upload = Body::UploadResult {
        token: worker,
        worker: "w1".into(),
        task: task_id.clone(),
        payload: xw_protocol::Blob::new(b"HELLO".to_vec()),
    };
    assert!(matches!(rpc.call(upload).unwrap(), Body::ResultAck { .. }));

    let fetch = Message::new(
        "fetch-1",
        Body::FetchResult {
            token: alice.clone(),
            task_id: task_id.clone(),
        },
    );
    let frame = encode_message(&fetch).unwrap();
    let transport = TcpTransport::new(server.local_addr().to_string());
    let first = transport.exchange(&frame).unwrap();
    // A resent request gets the identical reply even though the payload
    // was discarded by the first fetch.
    let second = transport.exchange(&frame).unwrap();
    assert_eq!(first, second);
    match rpc.call(Body::FetchResult { token: alice, task_id }) {
        Err(RpcError::Remote {
            code: ErrorCode::Gone, ..
        }) => {}
        other => panic!("{other:?}"),
    }
    server.shutdown();
}

#[test]
fn garbage_and_oversized_frames_get_error_replies() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    let t = TcpTransport::new(server.local_addr().to_string());
    let reply = t.exchange(&xw_protocol::frame::encode_frame(b"{not json")).unwrap();
    let m = xw_protocol::decode_message(&reply).unwrap();
    assert!(matches!(
        m.body,
        Body::Error {
            code: ErrorCode::BadRequest,
            ..
        }
    ));
    let mut huge = (u32::MAX - 1).to_be_bytes().to_vec();
    huge.extend_from_slice(b"{}");
    let reply = t.exchange(&huge).unwrap();
    let m = xw_protocol::decode_message(&reply).unwrap();
    assert!(matches!(
        m.body,
        Body::Error {
            code: ErrorCode::BadRequest,
            ..
        }
    ));
    // Responses are not requests.
    let bogus = encode_message(&Message::new("x", Body::NoWork {})).unwrap();
    let m = xw_protocol::decode_message(&t.exchange(&bogus).unwrap()).unwrap();
    assert_eq!(m.txid, "x");
    assert!(matches!(
        m.body,
        Body::Error {
            code: ErrorCode::BadRequest,
            ..
        }
    ));
}

#[test]
fn binary_serves_and_shuts_down_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = testkit::config(&dir.path().join("journal"));
    cfg.bind_address = "127.0.0.1".into();
    cfg.port = 0;
    let cfg_path = dir.path().join("c.json");
    std::fs::write(&cfg_path, serde_json::to_vec(&cfg).unwrap()).unwrap();

    let fp = Command::new(env!("CARGO_BIN_EXE_coordinator"))
        .args(["--print-fingerprint", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(
        String::from_utf8(fp.stdout).unwrap().trim(),
        testkit::identity().fingerprint().to_hex()
    );

    let mut child = Command::new(env!("CARGO_BIN_EXE_coordinator"))
        .arg("--config")
        .arg(&cfg_path)
        .env("RUST_LOG", "info")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("coordinator exited early").unwrap();
        if let Some(rest) = line.split("listening on ").nth(1) {
            break rest.trim().to_string();
        }
    };
    let rpc = Rpc::new(TcpTransport::new(addr));
    let session = open_session(
        &rpc,
        &testkit::identity().fingerprint(),
        &Credential::new(ALICE, testkit::password(ALICE), Role::Client),
    );
    assert!(session.is_ok());
    let status = Command::new("kill")
        .arg("-INT")
        .arg(child.id().to_string())
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(child.wait().unwrap().code(), Some(0));
}
