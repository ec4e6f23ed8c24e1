//! End-to-end runs of the `ddk` binary.

use std::path::Path;
use std::process::{Command, Output};

fn ddk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddk"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("failed to launch ddk")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = ddk(&["sim-collect", "--episodes", "2", "--seed", "1", "--out", "x", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let out = ddk(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "").unwrap();
    let out = ddk(&[
        "train",
        "--config",
        path(&cfg),
        "--data",
        path(&dir.path().join("absent")),
        "--out",
        path(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[model]\nlatent_dim = \"many\"\n").unwrap();
    let out = ddk(&["train", "--config", path(&cfg), "--data", ".", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let ok = |out: Output| {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    ok(ddk(&[
        "sim-collect",
        "--episodes",
        "8",
        "--seed",
        "3",
        "--out",
        path(&data),
        "--min-steps",
        "300",
        "--max-steps",
        "400",
    ]));
    assert!(data.join("manifest.json").exists());

    let cfg = d.join("tiny.toml");
    std::fs::write(
        &cfg,
        "[model]\nlatent_dim = 8\nencoder_hidden = [16]\ndecoder_hidden = [16]\n\n\
         [optim]\nbatch_size = 16\nepochs = 2\nsteps_per_epoch = 3\nlearning_rate = 1e-3\n\n\
         [loss]\nhorizon = 10\n\n[validation]\nbatches = 1\n",
    )
    .unwrap();
    let ckpt = d.join("m.json");
    ok(ddk(&[
        "train",
        "--config",
        path(&cfg),
        "--data",
        path(&data),
        "--out",
        path(&ckpt),
    ]));
    let log = std::fs::read_to_string(d.join("m.json.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let r1 = d.join("p1.json");
    let r2 = d.join("p2.json");
    for r in [&r1, &r2] {
        ok(ddk(&[
            "predict",
            "--ckpt",
            path(&ckpt),
            "--data",
            path(&data),
            "--horizon",
            "50",
            "--out",
            path(r),
        ]));
    }
    let b1 = std::fs::read(&r1).unwrap();
    assert_eq!(b1, std::fs::read(&r2).unwrap(), "prediction report must be byte-stable");
    let report: serde_json::Value = serde_json::from_slice(&b1).unwrap();
    assert_eq!(report["format_version"], 1);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["checkpoint_hash"].as_str().unwrap().len(), 64);

    let reference = d.join("ref.csv");
    ok(ddk(&[
        "sim-reference",
        "--seconds",
        "1",
        "--seed",
        "4",
        "--out",
        path(&reference),
    ]));
    let tlog = d.join("track.csv");
    ok(ddk(&[
        "track",
        "--ckpt",
        path(&ckpt),
        "--ref",
        path(&reference),
        "--np",
        "10",
        "--nc",
        "5",
        "--out",
        path(&tlog),
    ]));
    let text = std::fs::read_to_string(&tlog).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "t,x_ref,y_ref,psi_ref,vx_ref,vy_ref,r_ref,x,y,psi,vx,vy,r,swa,engine,eps,qp_iters,solve_ms"
    );
    assert_eq!(text.lines().count(), 101);
    let tracking: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("track.csv.json")).unwrap()).unwrap();
    assert_eq!(tracking["checkpoint_hash"], report["checkpoint_hash"]);

    let pp = d.join("pp.csv");
    ok(ddk(&[
        "baseline-pp",
        "--ref",
        path(&reference),
        "--kd",
        "0.2",
        "--vref",
        "7",
        "--out",
        path(&pp),
    ]));

    let merged = d.join("all.json");
    ok(ddk(&[
        "report",
        "--in",
        path(&r1),
        path(&tlog),
        path(&d.join("pp.csv.json")),
        "--out",
        path(&merged),
    ]));
    let merged: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&merged).unwrap()).unwrap();
    let kinds: Vec<&str> = merged["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["kind"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, ["prediction", "tracking", "tracking"]);
}
