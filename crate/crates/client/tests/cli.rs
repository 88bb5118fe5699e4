mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use xw_client::ClientConfig;
use xw_common::SystemClock;
use xw_coordinator::testkit::{self, ADMIN, ALICE};
use xw_coordinator::{Server, Service, SharedService};

fn xwclient(config: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_xwclient"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "xwclient {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, addr: &str, login: &str, app: Option<&str>) -> std::path::PathBuf {
    let mut cfg = ClientConfig::new(addr, testkit::identity().fingerprint(), login, testkit::password(login));
    cfg.poll_interval_s = 0.02;
    cfg.deadline_s = Some(20.0);
    cfg.app = app.map(str::to_string);
    let path = dir.join(format!("{login}.json"));
    fs::write(&path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn submit_await_and_feeder_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let c = testkit::open(&dir.path().join("journal"), Arc::new(SystemClock::new()));
    let server = Server::start(SharedService::new(Service::new(c)), "127.0.0.1:0").unwrap();
    let addr = server.local_addr().to_string();
    let service = server.service().clone();
    let stop = Arc::new(AtomicBool::new(false));
    let worker = {
        let stop = stop.clone();
        std::thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                common::complete_pending(&service);
                std::thread::sleep(Duration::from_millis(10));
            }
        })
    };

    let admin = write_config(dir.path(), &addr, ADMIN, None);
    let app = dir.path().join("rev.sh");
    fs::write(&app, "#!/bin/sh\nrev \"$1\" > out.txt\n").unwrap();
    let out = xwclient(
        &admin,
        &["register-app", "--ref", "rev", "--file", app.to_str().unwrap()],
    );
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "registered rev");

    fs::create_dir(dir.path().join("p")).unwrap();
    let mut jobs = String::new();
    for i in 0..3 {
        fs::write(dir.path().join(format!("p/{i}")), format!("run {i}")).unwrap();
        jobs.push_str(&format!("run-{i}\tp/{i}\n"));
    }
    fs::write(dir.path().join("jobs.txt"), &jobs).unwrap();
    let jobs_path = dir.path().join("jobs.txt");
    let alice = write_config(dir.path(), &addr, ALICE, Some("rev"));

    let out = xwclient(
        &alice,
        &["submit", "--jobs", jobs_path.to_str().unwrap(), "--retention", "keep"],
    );
    let ids_text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = ids_text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("run-0\ttask-"));
    let ids = dir.path().join("ids.txt");
    fs::write(&ids, &ids_text).unwrap();
    // Submitting again prints the same ids.
    let again = xwclient(&alice, &["submit", "--jobs", jobs_path.to_str().unwrap()]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), ids_text);

    let results = dir.path().join("results");
    let out = xwclient(
        &alice,
        &[
            "await",
            "--ids",
            ids.to_str().unwrap(),
            "--out",
            results.to_str().unwrap(),
        ],
    );
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "3 results, 0 aborted");
    for i in 0..3 {
        let mut expected = format!("run {i}").into_bytes();
        expected.reverse();
        assert_eq!(fs::read(results.join(format!("run-{i}.result"))).unwrap(), expected);
    }

    let fed = dir.path().join("fed");
    let out = xwclient(
        &alice,
        &[
            "feeder",
            "--jobs",
            jobs_path.to_str().unwrap(),
            "--out",
            fed.to_str().unwrap(),
        ],
    );
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(summary.starts_with("submitted 0, reused 3, written 3"), "{summary}");
    assert_eq!(fs::read_dir(&fed).unwrap().count(), 3);

    stop.store(true, Ordering::SeqCst);
    worker.join().unwrap();
    server.shutdown();
}

#[test]
fn wrong_fingerprint_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let c = testkit::open(&dir.path().join("journal"), Arc::new(SystemClock::new()));
    let server = Server::start(SharedService::new(Service::new(c)), "127.0.0.1:0").unwrap();
    let mut cfg = ClientConfig::new(
        server.local_addr().to_string(),
        xw_protocol::CoordinatorIdentity::from_seed([9; 32]).fingerprint(),
        ALICE,
        testkit::password(ALICE),
    );
    cfg.app = Some(testkit::APP.into());
    let path = dir.path().join("c.json");
    fs::write(&path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    fs::write(dir.path().join("jobs.txt"), "").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_xwclient"))
        .arg("--config")
        .arg(&path)
        .args(["submit", "--jobs"])
        .arg(dir.path().join("jobs.txt"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("identity"));
}
