//! The binary's exit codes, report files and the `run` lifecycle.

use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::process::{Command, Stdio};
use std::time::Duration;

use shadowfix_net::http::EnvelopeClient;
use shadowfix_net::Topology;

fn shadowfix(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_shadowfix")).args(args).output().unwrap()
}

fn code(out: &std::process::Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn usage_errors_are_environment_errors() {
    assert_eq!(code(&shadowfix(&["experiment", "rq5"])), 3);
    assert_eq!(code(&shadowfix(&["experiment", "rq2", "--oracle", "smell"])), 3);
    assert_eq!(code(&shadowfix(&["experiment", "rq4", "--scenario", "payroll"])), 3);
    assert_eq!(code(&shadowfix(&["--help"])), 0);
}

#[test]
fn run_rejects_missing_and_malformed_configs() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.conf");
    let out = shadowfix(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 3);

    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "app = shop\nlisten = nowhere\n").unwrap();
    let out = shadowfix(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"), "{out:?}");

    let ok = dir.path().join("ok.conf");
    std::fs::write(&ok, "listen = 127.0.0.1:0\nupstream = 127.0.0.1:0\ncontrol = 127.0.0.1:0\n").unwrap();
    let out = shadowfix(&["run", "--app", "bank", "--config", ok.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "unknown app profile");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn run_fails_on_a_taken_port() {
    let taken = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let port = taken.local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    std::fs::write(&conf, format!("listen = 127.0.0.1:{port}\nupstream = 127.0.0.1:0\ncontrol = 127.0.0.1:0\n")).unwrap();
    let out = shadowfix(&["run", "--config", conf.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
}

#[test]
fn rq1_without_faults_passes_and_writes_its_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rq1.json");
    let out = shadowfix(&["experiment", "rq1", "--faults", "0", "--json", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{out:?}");
    let written = std::fs::read_to_string(&path).unwrap();
    assert_eq!(written, String::from_utf8(out.stdout).unwrap());
    let v: serde_json::Value = serde_json::from_str(&written).unwrap();
    assert_eq!(v["rows"], serde_json::json!([]));
}

#[test]
fn rq4_reports_are_byte_identical_across_processes() {
    let a = shadowfix(&["experiment", "rq4", "--scenario", "shipping"]);
    let b = shadowfix(&["experiment", "rq4", "--scenario", "shipping"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn an_unwritable_report_path_is_an_environment_error() {
    let out = shadowfix(&["experiment", "rq1", "--faults", "0", "--out", "/nonexistent/dir/r.txt"]);
    assert_eq!(code(&out), 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn a_workload_file_replays_against_a_running_deployment() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("w.txt");
    let out = shadowfix(&["workload", "--seed", "7", "--out", file.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let n = std::fs::read_to_string(&file).unwrap().lines().count();
    assert!(n > 0);

    let mut config = shadowfix_net::Config::default();
    let any: SocketAddr = "127.0.0.1:0".parse().unwrap();
    (config.listen, config.upstream, config.control) = (any, any, any);
    let t = Topology::boot(&config).await.unwrap();
    let target = t.proxy_addr().to_string();
    let file_arg = file.to_str().unwrap().to_string();
    let out = tokio::task::spawn_blocking(move || {
        shadowfix(&["replay", "--workload", &file_arg, "--target", &target, "--json"])
    })
    .await
    .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let replayed = v["requests"].as_u64().unwrap();
    t.shadower.settle().await;
    assert_eq!(t.shadower.stats().requests, replayed);
    t.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn run_serves_health_and_stops_cleanly_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    let log = dir.path().join("events.jsonl");
    std::fs::write(
        &conf,
        format!(
            "listen = 127.0.0.1:0\nupstream = 127.0.0.1:0\ncontrol = 127.0.0.1:0\nevent_log = {}\n",
            log.display()
        ),
    )
    .unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_shadowfix"))
        .args(["run", "--app", "shop", "--config", conf.to_str().unwrap()])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let mut addrs = std::collections::BTreeMap::new();
    for _ in 0..3 {
        let line = lines.next().unwrap().unwrap();
        let (name, addr) = line.split_once(' ').unwrap();
        addrs.insert(name.to_string(), addr.parse::<SocketAddr>().unwrap());
    }
    let client = EnvelopeClient::new("x-session");
    let health = client.get(&format!("http://{}/health", addrs["control"])).await.unwrap();
    assert_eq!(health.status, 200);
    let home = client.get(&format!("http://{}/", addrs["proxy"])).await.unwrap();
    assert_eq!(home.status, 200);

    let pid = child.id().to_string();
    assert!(Command::new("kill").args(["-TERM", &pid]).status().unwrap().success());
    let status = tokio::time::timeout(Duration::from_secs(10), tokio::task::spawn_blocking(move || child.wait()))
        .await
        .expect("exits after SIGTERM")
        .unwrap()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(tokio::net::TcpStream::connect(addrs["proxy"]).await.is_err());
    assert!(std::fs::read_to_string(&log).unwrap().lines().count() >= 1);
}
