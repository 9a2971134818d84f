use std::ffi::OsStr;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn geo<S: AsRef<OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geo")).args(args).output().unwrap()
}

fn ok<S: AsRef<OsStr>>(args: &[S]) -> Output {
    let out = geo(args);
    let shown: Vec<_> = args.iter().map(|a| a.as_ref().to_string_lossy()).collect();
    assert!(
        out.status.success(),
        "geo {shown:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// Small train/dev/test corpora and a config for a tiny encoder.
    fn new() -> Self {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        for (name, seed, n) in [
            ("train.jsonl", "1", "40"),
            ("dev.jsonl", "2", "12"),
            ("test.jsonl", "3", "12"),
        ] {
            ok(&[
                "generate",
                "--seed",
                seed,
                "--queries",
                n,
                "--candidates",
                "4",
                "--out",
                &f.path(name),
            ]);
        }
        std::fs::write(
            f.path("tiny.json"),
            r#"{"d_model": 8, "n_heads": 2, "n_layers": 1, "d_ff": 8, "d_out": 8, "max_epochs": 1, "batch_size": 8}"#,
        )
        .unwrap();
        f
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).display().to_string()
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }

    fn train(&self, out: &str, extra: &[&str]) {
        let mut args = vec![
            "train".to_string(),
            "--config".into(),
            self.path("tiny.json"),
            "--train".into(),
            self.path("train.jsonl"),
            "--dev".into(),
            self.path("dev.jsonl"),
            "--out".into(),
            self.path(out),
        ];
        args.extend(extra.iter().map(|a| a.to_string()));
        ok(&args);
    }
}

#[test]
fn generate_writes_records_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    ok(&[
        "generate",
        "--seed",
        "5",
        "--queries",
        "10",
        "--candidates",
        "3",
        "--out",
        s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 10);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["candidates"].as_array().unwrap().len(), 3);
    }
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("c.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["outputs"][0], s(&out));
}

#[test]
fn missing_checkpoint_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = geo(&[
        "evaluate",
        "--ckpt",
        s(&dir.path().join("nope")),
        "--test",
        s(&dir.path().join("t.jsonl")),
        "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

#[test]
fn unknown_command_prints_usage() {
    let out = geo(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(geo(&["--help"]).status.code(), Some(0));
}

#[test]
fn flags_override_config_file() {
    let f = Fixture::new();
    f.train("ck", &["--seed", "9", "--fusion", "fixed:0.5"]);
    let m: serde_json::Value = serde_json::from_str(&f.read("ck/manifest.json")).unwrap();
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["train"]["fusion"], "fixed:0.5");
    assert_eq!(m["config"]["train"]["max_epochs"], 1);
    assert_eq!(m["config"]["shape"]["d_model"], 8);
    assert_eq!(f.read("ck/curves.csv").lines().count(), 2);
}

#[test]
fn train_then_evaluate_rerank_and_analyze() {
    let f = Fixture::new();
    f.train("ck", &[]);
    let ck = f.path("ck");
    ok(&[
        "evaluate",
        "--ckpt",
        &ck,
        "--test",
        &f.path("test.jsonl"),
        "--out",
        &f.path("r.json"),
    ]);
    let r: serde_json::Value = serde_json::from_str(&f.read("r.json")).unwrap();
    assert_eq!(r["n_queries"], 12);
    let hit1 = r["hit1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&hit1));
    let m: serde_json::Value = serde_json::from_str(&f.read("r.json.manifest.json")).unwrap();
    assert!(m["timing"]["latency_ms_per_case"].as_f64().unwrap() >= 0.0);

    let out = ok(&[
        "rerank",
        "--ckpt",
        &ck,
        "--query",
        "浙江省杭州市",
        "--candidate",
        "杭州市",
        "--candidate",
        "宁波市",
    ]);
    let ranks: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(ranks.len(), 2);
    assert_eq!(ranks[0]["rank"], 1);

    let out = ok(&["analyze", "attention", "--ckpt", &ck]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("category,class,weight,observed"));
    f.train("ck2", &["--seed", "3"]);
    let out = ok(&["analyze", "correlate", "--ckpt", &ck, "--ckpt", &f.path("ck2")]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
}

#[test]
fn attention_analysis_refuses_a_none_checkpoint() {
    let f = Fixture::new();
    f.train("ck", &["--fusion", "none"]);
    assert_eq!(
        geo(&["analyze", "attention", "--ckpt", &f.path("ck")]).status.code(),
        Some(1)
    );
}

#[test]
fn sweep_reports_one_finite_row_per_gamma() {
    let f = Fixture::new();
    let (config, train, dev) = (f.path("tiny.json"), f.path("train.jsonl"), f.path("dev.jsonl"));
    let base = ["sweep", "--config", &config, "--train", &train, "--dev", &dev];
    let out_path = f.path("sweep.csv");
    let out = ok(&[&base[..], &["--gammas", "1,10,1", "--out", &out_path]].concat());
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate gamma 1 ignored"));
    let mut rows = csv::Reader::from_path(&out_path).unwrap();
    let rows: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    for (row, gamma) in rows.iter().zip(["1", "10"]) {
        assert_eq!(&row[0], gamma);
        assert!(row[1].parse::<f64>().unwrap().is_finite());
    }

    ok(&[&base[..], &["--gammas", "10", "--out", &out_path]].concat());
    assert_eq!(f.read("sweep.csv").lines().count(), 2);
}

#[test]
fn entropy_and_chunk_commands() {
    let f = Fixture::new();
    let out = ok(&["analyze", "entropy", "--input", &f.path("train.jsonl")]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("mean:specific"));
    std::fs::write(f.path("addr.txt"), "浙江省杭州市西湖区文三路90号\n").unwrap();
    let out = ok(&["chunk", "--input", &f.path("addr.txt")]);
    let v: serde_json::Value = serde_json::from_str(String::from_utf8(out.stdout).unwrap().trim()).unwrap();
    assert_eq!(v["text"], "浙江省杭州市西湖区文三路90号");
    assert!(v["chunks"].as_array().unwrap().len() >= 4);
}

#[test]
fn bad_config_key_is_rejected() {
    let f = Fixture::new();
    std::fs::write(f.path("bad.json"), r#"{"learning_rate": 0.1}"#).unwrap();
    let out = geo(&[
        "train",
        "--config",
        &f.path("bad.json"),
        "--train",
        &f.path("train.jsonl"),
        "--dev",
        &f.path("dev.jsonl"),
        "--out",
        &f.path("ck"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}
