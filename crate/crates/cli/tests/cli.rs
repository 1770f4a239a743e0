use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toonrig() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_toonrig"));
    for (k, _) in std::env::vars() {
        if k.starts_with("TOONRIG_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(args: &[&str]) -> Output {
    toonrig().args(args).output().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .unwrap_or_else(|| panic!("no JSON on stderr: {text}"));
    serde_json::from_str(line).unwrap()
}

fn assert_fails(out: &Output, code: i32, kind: &str) -> serde_json::Value {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = error_json(out);
    assert_eq!(v["error"]["kind"], kind, "{v}");
    assert_eq!(v["error"]["exit_code"], code);
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rig_init(dir: &Path, size: u32) -> PathBuf {
    let out = run(&["rig", "init", "--size", &size.to_string(), "--out", s(dir)]);
    assert!(out.status.success());
    dir.join("rig.json")
}

#[test]
fn help_succeeds_and_usage_errors_exit_2() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["fit", "--help"]).status.success());
    assert_fails(&run(&[]), 2, "usage");
    assert_fails(&run(&["frobnicate"]), 2, "usage");
    assert_fails(&run(&["verify"]), 2, "usage");
}

#[test]
fn synth_and_train_require_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let rig = rig_init(dir.path(), 512);
    let out = run(&[
        "synth",
        "--rig",
        s(&rig),
        "--samples",
        "5",
        "--out",
        "x.trds",
    ]);
    let v = assert_fails(&out, 2, "usage");
    assert!(v["error"]["message"].as_str().unwrap().contains("--seed"));
    let out = run(&["train", "--dataset", "x.trds", "--out", "m.trmd"]);
    assert_fails(&out, 2, "usage");
}

#[test]
fn colliding_markers_are_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let rig = rig_init(dir.path(), 256);
    let ds = dir.path().join("d.trds");
    let out = run(&[
        "synth",
        "--rig",
        s(&rig),
        "--samples",
        "200",
        "--seed",
        "1",
        "--out",
        s(&ds),
    ]);
    assert_fails(&out, 3, "drop_rate");
}

#[test]
fn size_must_match_the_rig() {
    let dir = tempfile::tempdir().unwrap();
    let rig = rig_init(dir.path(), 512);
    let out = run(&[
        "fixture",
        "--rig",
        s(&rig),
        "--size",
        "1024",
        "--out",
        s(dir.path()),
    ]);
    assert_fails(&out, 2, "usage");
    let out = run(&["rig", "init", "--size", "10", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_env_and_flags_layer_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let rig = rig_init(dir.path(), 512);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"rig": "rig.json", "seed": 5, "samples": 3, "out": "from_config.trds"}"#,
    )
    .unwrap();
    assert!(rig.exists());
    // everything from the file, relative to its directory
    let out = run(&["--config", s(&cfg), "synth"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = std::fs::read(dir.path().join("from_config.trds")).unwrap();

    // env overrides the file
    let env_out = dir.path().join("env.trds");
    let out = toonrig()
        .args(["--config", s(&cfg), "synth"])
        .env("TOONRIG_SEED", "6")
        .env("TOONRIG_OUT", s(&env_out))
        .output()
        .unwrap();
    assert!(out.status.success());
    let b = std::fs::read(&env_out).unwrap();
    assert_ne!(a, b);

    // a flag overrides env
    let flag_out = dir.path().join("flag.trds");
    let out = toonrig()
        .args([
            "--config",
            s(&cfg),
            "synth",
            "--seed",
            "5",
            "--out",
            s(&flag_out),
        ])
        .env("TOONRIG_SEED", "6")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&flag_out).unwrap(), a);

    std::fs::write(&cfg, r#"{"seed": 1, "sede": 2}"#).unwrap();
    let v = assert_fails(&run(&["--config", s(&cfg), "synth"]), 2, "usage");
    assert!(v["error"]["message"].as_str().unwrap().contains("sede"));
    std::fs::write(&cfg, r#"{"size": 5}"#).unwrap();
    assert_eq!(run(&["--config", s(&cfg), "synth"]).status.code(), Some(2));
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let rig = rig_init(dir.path(), 512);
    let ds = dir.path().join("d.trds");
    let out = run(&[
        "synth",
        "--rig",
        s(&rig),
        "--samples",
        "100",
        "--seed",
        "2",
        "--out",
        s(&ds),
    ]);
    assert!(out.status.success());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"train": {"optimizer": "sgd", "learning_rate": 1e150, "epochs": 3, "batch_size": 30}}"#,
    )
    .unwrap();
    let out = run(&[
        "--config",
        s(&cfg),
        "train",
        "--seed",
        "1",
        "--dataset",
        s(&ds),
        "--out",
        s(&dir.path().join("m.trmd")),
    ]);
    assert_fails(&out, 3, "non_finite_loss");
}

#[test]
fn pipeline_round_trip_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rig = rig_init(d, 512);
    let ds = d.join("d.trds");
    let model = d.join("m.trmd");
    let fx = d.join("fixture");
    let pkg = d.join("pkg");
    for args in [
        vec![
            "synth",
            "--rig",
            s(&rig),
            "--samples",
            "300",
            "--seed",
            "3",
            "--out",
            s(&ds),
        ],
        vec![
            "train",
            "--seed",
            "3",
            "--epochs",
            "10",
            "--dataset",
            s(&ds),
            "--out",
            s(&model),
        ],
        vec!["fixture", "--rig", s(&rig), "--seed", "9", "--out", s(&fx)],
    ] {
        let out = run(&args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert!(d.join("m.history.json").exists());

    let portrait = fx.join("portrait.png");
    let landmarks = fx.join("landmarks.json");
    let out = run(&[
        "fit",
        "--portrait",
        s(&portrait),
        "--landmarks",
        s(&landmarks),
        "--rig",
        s(&rig),
        "--model",
        s(&model),
        "--out",
        s(&pkg),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = String::from_utf8_lossy(&out.stdout);
    for stage in [
        "load",
        "align+extract",
        "predict",
        "repaint",
        "save",
        "total",
    ] {
        assert!(
            table.lines().any(|l| l.starts_with(stage)),
            "{stage} missing:\n{table}"
        );
    }

    let out = run(&[
        "fit",
        "--portrait",
        s(&portrait),
        "--landmarks",
        s(&landmarks),
        "--rig",
        s(&rig),
        "--model",
        s(&model),
        "--out",
        s(&d.join("p2")),
        "--provider",
        "external",
    ]);
    assert_fails(&out, 2, "usage");

    let out = run(&["verify", "--package", s(&pkg)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let still = d.join("still.png");
    assert!(run(&["render", "--package", s(&pkg), "--out", s(&still)])
        .status
        .success());
    let timeline = d.join("timeline.json");
    std::fs::write(
        &timeline,
        r#"[{"time": 0.0, "channels": {}}, {"time": 0.1, "channels": {"eyeBlinkLeft": 1.0}}]"#,
    )
    .unwrap();
    let frames = d.join("frames");
    let out = run(&[
        "animate",
        "--package",
        s(&pkg),
        "--timeline",
        s(&timeline),
        "--out",
        s(&frames),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let f0 = std::fs::read(frames.join("frame_00000.png")).unwrap();
    let f1 = std::fs::read(frames.join("frame_00001.png")).unwrap();
    assert_eq!(f0, std::fs::read(&still).unwrap());
    assert_ne!(f0, f1);

    std::fs::write(
        &timeline,
        r#"[{"time": 1.0, "channels": {}}, {"time": 0.5, "channels": {}}]"#,
    )
    .unwrap();
    let out = run(&[
        "animate",
        "--package",
        s(&pkg),
        "--timeline",
        s(&timeline),
        "--out",
        s(&frames),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let atlas = pkg.join("atlas.png");
    let mut bytes = std::fs::read(&atlas).unwrap();
    let k = bytes.len() / 3;
    bytes[k] ^= 0x10;
    std::fs::write(&atlas, bytes).unwrap();
    let out = run(&["verify", "--package", s(&pkg)]);
    let v = assert_fails(&out, 2, "hash_mismatch");
    assert!(v["error"]["message"]
        .as_str()
        .unwrap()
        .contains("atlas.png"));
}
