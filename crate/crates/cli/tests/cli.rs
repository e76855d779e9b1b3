use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

fn crm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crm")).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_design(dir: &Path) -> String {
    let path = dir.join("design.json");
    let doc = json!({
        "name": "two-stage",
        "skeleton": { "alpha": [0.04, 0.07, 0.20, 0.35, 0.55, 0.70] },
        "model": { "kind": "power_direct" },
        "design": {
            "target": 0.2,
            "inference": { "mode": "likelihood_two_stage", "escalation": { "cohort_size": 3 } }
        }
    });
    fs::write(&path, doc.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn partition_prints_the_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let design = write_design(dir.path());
    let tsv = ok(crm(&["partition", "--design", &design, "--format", "tsv"]));
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "dose\tlower\tupper");
    assert_eq!(lines.len(), 7);
    let k1: f64 = lines[1].split('\t').nth(2).unwrap().parse().unwrap();
    assert!((k1 - 0.552).abs() < 1e-3, "{k1}");

    let v: Value = serde_json::from_str(&ok(crm(&["partition", "--design", &design]))).unwrap();
    assert_eq!(v["intervals"].as_array().unwrap().len(), 6);
    assert_eq!(v["intervals"][1]["level"], 2);
}

#[test]
fn simulate_writes_reproducible_reports() {
    let dir = tempfile::tempdir().unwrap();
    let design = write_design(dir.path());
    let scenarios = dir.path().join("bank.json");
    fs::write(
        &scenarios,
        json!([
            { "name": "worked", "true_tox": [0.03, 0.22, 0.45, 0.60, 0.80, 0.95], "n": 16 },
            { "true_tox": [0.01, 0.02, 0.05, 0.10, 0.20, 0.40], "n": 20, "seed": 9 }
        ])
        .to_string(),
    )
    .unwrap();
    let run = |out: &str| {
        ok(crm(&[
            "simulate",
            "--design",
            &design,
            "--scenario",
            scenarios.to_str().unwrap(),
            "--replicates",
            "200",
            "--seed",
            "7",
            "--out",
            out,
        ]))
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let listed = run(a.to_str().unwrap());
    assert_eq!(listed.lines().count(), 4);
    run(b.to_str().unwrap());
    for f in ["worked.json", "worked.csv", "scenario-2.json", "scenario-2.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let report: Value = serde_json::from_slice(&fs::read(a.join("worked.json")).unwrap()).unwrap();
    let oc = &report["operating_characteristics"];
    assert_eq!(oc["replicates"], 200);
    assert_eq!(report["base_seed"], 7);
    let dist: Vec<f64> =
        oc["recommendation_dist"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let mut rdr = csv::Reader::from_path(a.join("worked.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["level", "label", "true_toxicity", "recommended", "allocated"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    let recommended: f64 = rows[1][3].parse().unwrap();
    assert_eq!(recommended, dist[1]);
}

#[test]
fn simulate_reports_bad_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let design = write_design(dir.path());
    let scenarios = dir.path().join("bad.json");
    fs::write(&scenarios, json!({ "true_tox": [0.3, 0.2], "n": 5 }).to_string()).unwrap();
    let out = crm(&[
        "simulate",
        "--design",
        &design,
        "--scenario",
        scenarios.to_str().unwrap(),
        "--replicates",
        "5",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("levels"));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(data: &Path) -> (Server, String) {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let child = Command::new(env!("CARGO_BIN_EXE_crm"))
        .args(["serve", "--port", &port.to_string(), "--data", data.to_str().unwrap()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let server = Server(child);
    let url = format!("http://127.0.0.1:{port}");
    let start = Instant::now();
    while std::net::TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(start.elapsed() < Duration::from_secs(20), "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
    (server, url)
}

#[test]
fn session_commands_drive_the_service() {
    let dir = tempfile::tempdir().unwrap();
    let design = write_design(dir.path());
    let (_server, url) = serve(&dir.path().join("data"));
    let session = |args: &[&str]| -> Value {
        let mut full = vec!["session", "--url", &url];
        full.extend_from_slice(args);
        serde_json::from_str(&ok(crm(&full))).unwrap()
    };

    let created = session(&["new", "--design", &design]);
    let id = created["id"].as_str().unwrap().to_string();
    assert_eq!(created["recommendation"]["level"], 1);

    for (level, tox) in [
        (1, false),
        (1, false),
        (1, false),
        (2, false),
        (2, false),
        (2, false),
        (3, true),
        (3, true),
        (3, false),
    ] {
        let level = level.to_string();
        let mut args = vec!["outcome", &id, "--level", &level];
        if tox {
            args.push("--tox");
        }
        session(&args);
    }
    let rec = session(&["show", &id, "--view", "recommendation"]);
    assert_eq!(rec["level"], 2);

    let w = session(&["what-if", &id, "ok"]);
    assert!((w["recommendation"]["parameter"].as_f64().unwrap() - 0.759).abs() < 1e-3);
    let est = session(&["show", &id, "--view", "estimates"]);
    assert_eq!(est["patients"], 9);

    // an off-recommendation level is refused without --override
    let refused = crm(&["session", "--url", &url, "outcome", &id, "--level", "5"]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("level"));

    let list = session(&["list"]);
    assert_eq!(list[0]["patients"], 9);
    let closed = session(&["close", &id, "--reason", "stopped"]);
    assert_eq!(closed["stage"], "closed");
    assert!(dir.path().join("data").join(&id).join("events.jsonl").exists());
}
