use std::path::Path;
use std::process::{Command, Output};

fn wrfsplat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wrfsplat"))
        .current_dir(dir)
        .env_remove("WRF_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = wrfsplat(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: [&str; 8] = [
    "--set",
    "grid.n_azimuth=32",
    "--set",
    "grid.n_elevation=12",
    "--set",
    "scene.sampling.count=30",
    "--set",
    "train.n_primitives=24",
];

fn gen(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["gen", "--out", out];
    args.extend(SMALL);
    args.extend(extra);
    ok(dir, &args);
}

fn train(dir: &Path, data: &str, out: &str, coarse: &str, fine: &str) -> String {
    let mut args = vec!["train", "--data", data, "--out", out, "--coarse-iters", coarse, "--fine-iters", fine];
    args.extend(SMALL);
    ok(dir, &args)
}

#[test]
fn generation_is_reproducible_and_guarded() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d, "a", &[]);
    gen(d, "b", &[]);
    for f in ["manifest.json", "spectra.bin"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap());
    }
    let again = wrfsplat(d, &["gen", "--out", "a"]);
    assert_eq!(again.status.code(), Some(3));
    assert!(wrfsplat(d, &["--force", "gen", "--out", "a", "--set", "scene.sampling.count=5"]).status.success());
}

#[test]
fn bad_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let room = wrfsplat(d, &["gen", "--out", "x", "--set", "scene.room_dims=[-1, 3, 2.5]"]);
    assert_eq!(room.status.code(), Some(2));
    let key = wrfsplat(d, &["gen", "--out", "x", "--set", "scene.rooms=1"]);
    assert_eq!(key.status.code(), Some(2));
    std::fs::write(d.join("c.json"), r#"{"train": {"lr": 1}}"#).unwrap();
    let cfg = wrfsplat(d, &["gen", "--out", "x", "--config", "c.json"]);
    assert_eq!(cfg.status.code(), Some(2));
    let threads = Command::new(env!("CARGO_BIN_EXE_wrfsplat"))
        .current_dir(d)
        .env("WRF_THREADS", "many")
        .args(["gen", "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn train_eval_render_round() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d, "data", &[]);

    // zero iterations leave the initialization
    train(d, "data", "zero.wrfc", "0", "0");
    let zero = std::fs::read(d.join("zero.wrfc")).unwrap();
    train(d, "data", "short.wrfc", "20", "5");
    assert!(d.join("short.log.csv").exists());
    let log = std::fs::read_to_string(d.join("short.log.csv")).unwrap();
    assert!(log.starts_with("iteration,stage,loss,l1_term,ssim_term,wall_ms\n"));
    assert_ne!(std::fs::read(d.join("short.wrfc")).unwrap(), zero);

    let stdout = ok(d, &["eval", "--model", "short.wrfc", "--data", "data", "--split", "test", "--out", "m.csv"]);
    assert!(stdout.contains("median PSNR"));
    let csv = std::fs::read_to_string(d.join("m.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("sample_id,psnr_db,ssim,l1"));
    assert_eq!(lines.count(), 3);

    ok(d, &["render", "--model", "short.wrfc", "--position", "1.0,1.0,1.2", "--out", "a.bin", "--pgm", "a.pgm"]);
    ok(d, &["render", "--model", "short.wrfc", "--position", "1.0,1.0,1.2", "--out", "b.bin"]);
    let a = std::fs::read(d.join("a.bin")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.bin")).unwrap());
    assert_eq!(a.len(), 4 * (3 + 2 * 32 * 12));
    let pgm = std::fs::read(d.join("a.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 12\n255\n"));
    assert_eq!(pgm.len(), b"P5\n32 12\n255\n".len() + 32 * 12);

    let far = wrfsplat(d, &["render", "--model", "short.wrfc", "--position", "3,2,2", "--out", "c.bin"]);
    assert!(far.status.success());
    assert!(String::from_utf8_lossy(&far.stderr).contains("warning"));

    let aoa = ok(d, &["aoa", "eval", "--model", "short.wrfc", "--data", "data", "--out", "aoa.csv"]);
    assert!(aoa.contains("median peak error"));
    let bench = ok(d, &["--threads", "2", "bench", "--model", "short.wrfc", "--iters", "3"]);
    assert!(bench.contains("single (1 threads)") && bench.contains("multi (2 threads)"));
}

#[test]
fn mismatched_data_exits_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    gen(d, "one", &[]);
    gen(d, "two", &["--set", "gen.seed=5"]);
    train(d, "one", "m.wrfc", "5", "0");
    let eval = wrfsplat(d, &["eval", "--model", "m.wrfc", "--data", "two", "--out", "x.csv"]);
    assert_eq!(eval.status.code(), Some(4));
    let resume = wrfsplat(d, &["train", "--data", "two", "--out", "n.wrfc", "--resume", "m.wrfc"]);
    assert_eq!(resume.status.code(), Some(4));

    // resuming on the right data continues the counter
    let mut args = vec!["train", "--data", "one", "--out", "r.wrfc", "--resume", "m.wrfc", "--coarse-iters", "5", "--fine-iters", "3"];
    args.extend(SMALL);
    let out = ok(d, &args);
    assert!(out.contains("iteration 8"));
}

#[test]
fn rssi_head_trains_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let sets = ["--set", "grid.n_azimuth=16", "--set", "grid.n_elevation=16", "--set", "scene.sampling.count=30"];
    let mut args = vec!["gen", "--out", "data"];
    args.extend(sets);
    ok(d, &args);
    let mut args = vec!["rssi", "train", "--data", "data", "--out", "r.wrfc", "--set", "train.coarse_iters=30", "--set", "train.fine_iters=10"];
    args.extend(sets);
    assert!(ok(d, &args).contains("calibration"));
    let out = ok(d, &["rssi", "eval", "--model", "r.wrfc", "--data", "data", "--out", "r.csv"]);
    assert!(out.contains("median |error|"));
    let csv = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(csv.starts_with("position_xyz,pred_dbm,gt_dbm,abs_err_db\n"));
    assert_eq!(csv.lines().count(), 4);
}
