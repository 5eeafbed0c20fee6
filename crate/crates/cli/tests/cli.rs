use std::path::Path;
use std::process::{Command, Output};

fn hetswarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetswarm"))
        .args(args)
        .arg("--quiet")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_line(o: &Output) -> serde_json::Value {
    let stderr = String::from_utf8(o.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    serde_json::from_str(lines[0]).unwrap()
}

#[test]
fn cluster_with_too_few_entries_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let rand = dir.path().join("rand");
    let o = hetswarm(&["random", "--n", "10", "--horizon", "50", "--out", path(&rand)]);
    assert!(o.status.success());
    let out = dir.path().join("tax");
    let archive = rand.join("seed_0/archive.jsonl");
    let o = hetswarm(&["cluster", "--archive", path(&archive), "--k", "20", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_line(&o);
    assert_eq!(e["error"]["code"], "archive_too_small");
    assert!(!out.exists(), "nothing is written when validation fails");
}

#[test]
fn sweep_gives_one_trajectory_per_eta() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = hetswarm(&["sweep", "--preset", "aggregation", "--horizon", "60", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<serde_json::Value> =
        serde_json::from_slice(&std::fs::read(out.join("seed_0/sweep.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    let counts: Vec<u64> = rows.iter().map(|r| r["type_a_count"].as_u64().unwrap()).collect();
    assert_eq!(counts, vec![1, 3, 6, 8, 12]);
    let csvs = std::fs::read_dir(out.join("seed_0"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 5);
}

#[test]
fn manifest_rerun_reproduces_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = hetswarm(&[
        "novelty", "--generations", "3", "--population", "12", "--horizon", "80", "--seed", "4,9",
        "--out", path(&a),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["trials"].as_array().unwrap().len(), 2);
    let o = hetswarm(&["run", path(&a.join("manifest.json")), "--out", path(&b)]);
    assert!(o.status.success());
    for seed in ["seed_4", "seed_9"] {
        let x = std::fs::read(a.join(seed).join("archive.jsonl")).unwrap();
        let y = std::fs::read(b.join(seed).join("archive.jsonl")).unwrap();
        assert_eq!(x, y);
    }
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(b.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["format"], "hetswarm-summary");
    assert_eq!(s["trials"][0]["counts"]["entries"], 36);
}

#[test]
fn diagnostics_are_single_json_lines() {
    let o = hetswarm(&["replay", "--genome", "1,2,3"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["error"]["code"], "invalid_genome");

    let o = hetswarm(&["replay", "--preset", "no-such-controller"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"]["code"], "usage");

    let o = hetswarm(&["novelty", "--population", "0", "--dry-run", "--out", "unused"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["error"]["code"], "invalid_config");
    assert!(!Path::new("unused").exists());

    let o = hetswarm(&["random", "--seed", "1,1"]);
    assert_eq!(error_line(&o)["error"]["code"], "invalid_config");
}

#[test]
fn render_writes_png() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("cp.png");
    let o = hetswarm(&[
        "render", "--genome=-0.7,0.3,1,1,-0.7,0.3,1,1,0.5", "--horizon", "50", "--resolution", "64",
        "--out", path(&png),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(&std::fs::read(&png).unwrap()[..4], b"\x89PNG");
}
