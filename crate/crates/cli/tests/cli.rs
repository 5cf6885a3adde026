use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn medseg(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_medseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "medseg {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn phantom_index_segment_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    medseg(&["phantom", "--out", s(d)]);
    for f in ["head.nii.gz", "head_truth.nii.gz", "refs/ref-a.nii.gz", "labels.csv", "profiles.toml", "demo.script"] {
        assert!(d.join(f).exists(), "{f}");
    }

    let idx = d.join("mr.idx");
    let out = medseg(&["index", "build", "--volumes", s(&d.join("refs")), "--labels", s(&d.join("labels.csv")), "--out", s(&idx)]);
    assert!(stdout(&out).contains("36 records"));

    let data = d.join("data");
    let index_arg = format!("mr={}", s(&idx));
    let out = medseg(&[
        "segment", "--script", s(&d.join("demo.script")), "--data-dir", s(&data),
        "--index", &index_arg, "--profiles", s(&d.join("profiles.toml")),
    ]);
    let lines: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 9);
    assert!(lines.iter().all(|l| l["ok"] == true));
    assert_eq!(lines[5]["kind"], "propagate");
    assert!(lines[5]["updates"].as_u64().unwrap() > 0);
    assert_eq!(lines[8]["reply"]["context"]["name"], "context@300");

    let session = std::fs::read_dir(&data).unwrap().next().unwrap().unwrap().path();
    for f in ["masks.nii.gz", "events.jsonl", "report.json", "lesion.obj", "context.obj", "volume.link"] {
        assert!(session.join(f).exists(), "{f}");
    }

    let obj = d.join("tumor.obj");
    let out = medseg(&[
        "mesh", "--mask", s(&session.join("masks.nii.gz")), "--volume", s(&d.join("head.nii.gz")),
        "--out", s(&obj), "--context-threshold", "300",
    ]);
    assert!(stdout(&out).contains("mm^3"));
    assert!(obj.exists() && d.join("tumor_context.obj").exists());
}

#[test]
fn failing_step_fails_the_run_unless_optional() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    medseg(&["phantom", "--out", s(d)]);
    let head = d.join("head.nii.gz");
    std::fs::write(d.join("ok.script"), format!("open {}\n? confirm\nnavigate 3\n", s(&head))).unwrap();
    medseg(&["segment", "--script", s(&d.join("ok.script")), "--data-dir", s(&d.join("data"))]);

    std::fs::write(d.join("bad.script"), format!("open {}\nconfirm\nnavigate 3\n", s(&head))).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_medseg"))
        .args(["segment", "--script", s(&d.join("bad.script")), "--data-dir", s(&d.join("data"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("state_violation"));
}

#[test]
fn eval_writes_composites() {
    let dir = tempfile::tempdir().unwrap();
    let trials = dir.path().join("trials.csv");
    std::fs::write(
        &trials,
        "trial_id,paradigm,accuracy,tlx_total,time,confirmed,clears\n\
         a,voice,99,10,100,3,0\nb,voice,98,20,200,4,1\nc,mouse,97,30,300,6,2\n",
    )
    .unwrap();
    let out_path = dir.path().join("report.csv");
    medseg(&["eval", "--trials", s(&trials), "--out", s(&out_path)]);
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut rdr = csv::Reader::from_reader(text.split("\n\n").next().unwrap().as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "composite").unwrap();
    let composites: Vec<f64> = rdr.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(composites.len(), 3);
    for (got, want) in composites.iter().zip([3.0, 0.0, -3.0]) {
        assert!((got - want).abs() < 1e-9);
    }
}

#[test]
fn serve_reports_health() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_medseg"))
        .args(["serve", "--port", "0", "--role", "rendering", "--data-dir", s(&dir.path().join("data"))])
        .env("RUST_LOG", "info")
        .env("NO_COLOR", "1")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let stderr = BufReader::new(child.stderr.take().unwrap());
    let addr = stderr
        .lines()
        .map(|l| l.unwrap())
        .find_map(|l| l.split("listening on ").nth(1).map(|a| a.trim().to_string()))
        .unwrap();
    let health: Value = ureq::get(&format!("http://{addr}/health")).call().unwrap().into_json().unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(health["status"], "ok");
    assert_eq!(health["roles"]["segmentation"], false);
}
