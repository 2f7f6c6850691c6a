use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_oucd");

fn oucd(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        text(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn png_size(path: &Path) -> (u32, u32) {
    let bytes = std::fs::read(path).unwrap();
    let w = u32::from_be_bytes(bytes[16..20].try_into().unwrap());
    let h = u32::from_be_bytes(bytes[20..24].try_into().unwrap());
    (h, w)
}

fn dataset(dir: &Path, scenes: usize, size: &str) {
    let n = scenes.to_string();
    ok(oucd(&["synth", "--scenes", &n, "--size", size, "--scale-rain", "--seed", "3", "--out-dir", "ds"], dir));
}

fn trained(dir: &Path) {
    dataset(dir, 6, "32");
    ok(oucd(&["train", "--data-dir", "ds", "--output-dir", "run", "--set", "train.max_steps=2"], dir));
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    ok(oucd(&["--help"], dir.path()));
    for sub in ["synth", "train", "infer", "eval", "ablate", "rf-report", "gradcheck", "dump-features"] {
        let out = ok(oucd(&[sub, "--help"], dir.path()));
        assert!(text(&out).contains("Usage"), "{sub}");
    }
}

#[test]
fn synth_is_reproducible_and_counts_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir(d.join("clean")).unwrap();
    ok(oucd(&["synth", "--scenes", "3", "--size", "40x24", "--seed", "1", "--out-dir", "scenes"], d));
    for name in ["0000.png", "0001.png", "0002.png"] {
        std::fs::copy(d.join("scenes/clean").join(name), d.join("clean").join(name)).unwrap();
    }
    for out in ["a", "b"] {
        ok(oucd(&["synth", "--clean-dir", "clean", "--seed", "5", "--out-dir", out], d));
    }
    for name in ["0000.png", "0001.png", "0002.png"] {
        let a = std::fs::read(d.join("a/rainy").join(name)).unwrap();
        let b = std::fs::read(d.join("b/rainy").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
        assert_eq!(png_size(&d.join("a/rainy").join(name)), (40, 24));
    }
    assert_eq!(std::fs::read(d.join("a/manifest.txt")).unwrap(), std::fs::read(d.join("b/manifest.txt")).unwrap());
    assert_eq!(std::fs::read_dir(d.join("a/rainy")).unwrap().count(), 3);
}

#[test]
fn synth_rejects_missing_or_empty_sources() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir(d.join("empty")).unwrap();
    for args in [
        vec!["synth", "--clean-dir", "empty", "--out-dir", "o"],
        vec!["synth", "--clean-dir", "absent", "--out-dir", "o"],
        vec!["synth", "--out-dir", "o"],
        vec!["synth", "--scenes", "0", "--out-dir", "o"],
    ] {
        assert_eq!(oucd(&args, d).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn scaled_rain_is_recorded_in_the_written_config() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 2, "64");
    let cfg = std::fs::read_to_string(dir.path().join("ds/config.toml")).unwrap();
    assert!(cfg.contains("streak_count = [10, 40]"), "{cfg}");
    assert!(cfg.contains("seed = 3"));
}

#[test]
fn train_then_infer_eval_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let log = std::fs::read_to_string(d.join("run/train.log")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.starts_with("step=1 epoch=0 lr=0.0002 loss="));
    let cfg = std::fs::read_to_string(d.join("run/config.toml")).unwrap();
    assert!(cfg.contains("max_steps = 2"));

    ok(oucd(&["synth", "--scenes", "1", "--size", "33x47", "--out-dir", "odd"], d));
    ok(oucd(
        &["infer", "--checkpoint", "run/checkpoint.oucd", "--input", "odd/rainy/0000.png", "--output-dir", "inf"],
        d,
    ));
    assert_eq!(png_size(&d.join("inf/0000.png")), (33, 47));
    assert!(d.join("inf/config.toml").exists());

    ok(oucd(&["eval", "--checkpoint", "run/checkpoint.oucd", "--split", "train", "--output-dir", "ev"], d));
    let report = std::fs::read_to_string(d.join("ev/eval.txt")).unwrap();
    assert!(report.contains("identity baseline"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("ev/eval.json")).unwrap()).unwrap();
    assert_eq!(json["split"], "train");
    assert!(json["model"]["mean_psnr_db"].is_number());
    assert!(json["identity"]["mean_ssim"].is_number());

    ok(oucd(
        &[
            "dump-features",
            "--input",
            "ds/clean/0000.png",
            "--layers",
            "uc.enc.*",
            "--output-dir",
            "maps",
            "--max-channels",
            "1",
        ],
        d,
    ));
    assert_eq!(std::fs::read_dir(d.join("maps")).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count(), 5);
}

#[test]
fn resume_continues_the_step_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    ok(oucd(
        &[
            "train",
            "--data-dir",
            "ds",
            "--output-dir",
            "more",
            "--resume",
            "run/checkpoint.oucd",
            "--set",
            "train.max_steps=3",
        ],
        d,
    ));
    let log = std::fs::read_to_string(d.join("more/train.log")).unwrap();
    assert!(log.starts_with("step=3 "), "{log}");
}

#[test]
fn ablate_writes_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d, 10, "32");
    ok(oucd(&["ablate", "--data-dir", "ds", "--output-dir", "abl", "--set", "train.max_steps=1"], d));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("abl/ablation.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 4);
    let txt = std::fs::read_to_string(d.join("abl/ablation.txt")).unwrap();
    assert!(txt.contains("OUCD w/ MSFF block"));
}

fn rf_rows(out: &Output) -> Vec<Vec<f64>> {
    text(out)
        .lines()
        .filter_map(|l| l.split_whitespace().map(|t| t.parse().ok()).collect::<Option<Vec<f64>>>())
        .filter(|v| v.len() == 3)
        .collect()
}

#[test]
fn rf_report_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let k3 = ok(oucd(&["rf-report"], d));
    assert_eq!(rf_rows(&k3), vec![vec![1.0, 3.0, 3.0], vec![2.0, 6.0, 1.5], vec![3.0, 12.0, 0.75]]);
    let k1 = ok(oucd(&["rf-report", "--kernel", "1"], d));
    assert_eq!(rf_rows(&k1).iter().map(|r| r[1]).collect::<Vec<_>>(), vec![1.0, 2.0, 4.0]);
    let one = ok(oucd(&["rf-report", "--kernel", "5", "--max-layer", "1"], d));
    assert_eq!(rf_rows(&one), vec![vec![1.0, 5.0, 5.0]]);
    for bad in [["--kernel", "0"], ["--kernel", "-3"], ["--max-layer", "0"]] {
        let args = ["rf-report", bad[0], bad[1]];
        assert_eq!(oucd(&args, d).status.code(), Some(2), "{bad:?}");
    }
}

#[test]
fn gradcheck_single_op_and_unknown_op() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(oucd(&["gradcheck", "--ops", "relu", "--cases", "3", "--precision", "double"], d));
    let rows: Vec<_> = text(&out).lines().filter(|l| l.ends_with(" pass")).map(String::from).collect();
    assert_eq!(rows.len(), 1, "{rows:?}");
    assert!(rows[0].starts_with("relu"));
    assert_eq!(oucd(&["gradcheck", "--ops", "softmax"], d).status.code(), Some(2));
}

#[test]
fn configuration_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d);
    let unknown = oucd(&["train", "--data-dir", "ds", "--output-dir", "x", "--set", "train.bogus=1"], d);
    assert_eq!(unknown.status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), "[train]\nbatch_size = \"two\"\n").unwrap();
    let bad = oucd(&["train", "--data-dir", "ds", "--output-dir", "x", "--config", "bad.toml"], d);
    assert_eq!(bad.status.code(), Some(2));

    let mut bytes = std::fs::read(d.join("run/checkpoint.oucd")).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(d.join("cut.oucd"), &bytes).unwrap();
    std::fs::write(d.join("junk.oucd"), b"not a checkpoint").unwrap();
    for ckpt in ["cut.oucd", "junk.oucd"] {
        let out = oucd(&["infer", "--checkpoint", ckpt, "--input", "ds/rainy", "--output-dir", "y"], d);
        assert_eq!(out.status.code(), Some(3), "{ckpt}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
    }
    let wrong = oucd(
        &[
            "infer",
            "--checkpoint",
            "run/checkpoint.oucd",
            "--input",
            "ds/rainy",
            "--output-dir",
            "y",
            "--set",
            "model.variant=overcomplete_only",
        ],
        d,
    );
    assert_eq!(wrong.status.code(), Some(3));
}
