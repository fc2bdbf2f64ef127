use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use edit_service::api::Center;
use edit_service::Model;
use eqgan::heatmap::PyramidRecord;
use eqgan::trainer::{EvalReport, Snapshot};
use eqgan_cli::generate_seeded;
use serde_json::Value;

const SMALL: [&str; 8] = [
    "latent_dim=16",
    "g_channels=[8,8,4,4]",
    "d_channels=[4,4,8,8]",
    "sel_inter_dim=4",
    "batch_size=4",
    "eval_pool=96",
    "di_per_side=16",
    "di_repeats=20",
];

fn eqgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqgan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout_paths(out: &Output) -> Vec<PathBuf> {
    String::from_utf8(out.stdout.clone()).unwrap().lines().map(PathBuf::from).collect()
}

fn train_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec!["train", "--out", out];
    for s in SMALL.iter().chain(extra) {
        args.extend(["--set", s]);
    }
    args
}

/// A 4-step run shared by the tests that need a checkpoint.
fn run_dir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let o = eqgan(&train_args(out.to_str().unwrap(), &["steps=4", "eval_every=2"]));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        dir
    })
    .path()
}

fn checkpoint() -> PathBuf {
    run_dir().join("run/final.bin")
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "one error line, got {stderr:?}");
    serde_json::from_str(lines[0]).expect("error line is JSON")
}

#[test]
fn train_prints_every_written_path() {
    let o = eqgan(&train_args(run_dir().join("again").to_str().unwrap(), &["steps=4", "eval_every=2"]));
    assert!(o.status.success());
    let paths = stdout_paths(&o);
    for name in ["config.toml", "metrics.jsonl", "evals.jsonl", "grid_000004.png", "final.bin"] {
        assert!(paths.iter().any(|p| p.ends_with(name)), "{name} not reported in {paths:?}");
    }
    assert!(paths.iter().all(|p| p.exists()));
    // same seed, same metrics
    let a = std::fs::read(run_dir().join("run/metrics.jsonl")).unwrap();
    let b = std::fs::read(run_dir().join("again/metrics.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s5");
    let mut args = train_args(out.to_str().unwrap(), &["steps=2", "eval_every=0"]);
    args.extend(["--seed", "5"]);
    assert!(eqgan(&args).status.success());
    let text = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(text.lines().any(|l| l.trim() == "seed = 5"), "{text}");
}

#[test]
fn unknown_config_key_is_one_json_line() {
    let o = eqgan(&["train", "--set", "learning_rate=0.1"]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_line(&o);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("learning_rate"));
}

#[test]
fn usage_errors_are_one_json_line() {
    let o = eqgan(&["sample"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "usage");
    let o = eqgan(&["frobnicate"]);
    assert_eq!(error_line(&o)["error"], "usage");
}

#[test]
fn unreadable_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let o = eqgan(&["sample", bad.to_str().unwrap(), "--out", dir.path().join("s.png").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["error"], "checkpoint");
}

#[test]
fn help_lists_every_config_key() {
    let o = eqgan(&["train", "--help"]);
    assert!(o.status.success());
    let help = String::from_utf8(o.stdout).unwrap();
    for (key, _) in eqgan::config::TrainConfig::keys() {
        assert!(help.contains(&format!("  {key} = ")), "{key} missing from train --help");
    }
    let top = String::from_utf8(eqgan(&["--help"]).stdout).unwrap();
    assert!(top.contains("align_tau = "));
}

#[test]
fn heatmap_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let render = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = eqgan(&["heatmap", "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        stdout_paths(&o)
    };
    let a = render("a", "11");
    let b = render("b", "11");
    let c = render("c", "12");
    // three level sums, 1 + 2 + 4 bumps and the record
    assert_eq!(a.len(), 3 + 7 + 1);
    for (pa, pb) in a.iter().zip(&b) {
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap(), "{}", pa.display());
    }
    assert_ne!(std::fs::read(&a[0]).unwrap(), std::fs::read(&c[0]).unwrap());

    // re-rendering the record reproduces the images
    let rec = dir.path().join("a/pyramid.json");
    let d = dir.path().join("d");
    let o = eqgan(&["heatmap", "--from", rec.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert!(o.status.success());
    for (pa, pd) in a.iter().zip(stdout_paths(&o)) {
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pd).unwrap());
    }
    let record: PyramidRecord = serde_json::from_slice(&std::fs::read(rec).unwrap()).unwrap();
    assert_eq!(record.seed, Some(11));
    assert_eq!(record.centers.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 2, 4]);
}

#[test]
fn sample_writes_a_three_by_four_grid() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = checkpoint();
    let sample = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["sample", ckpt.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = eqgan(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(stdout_paths(&o), vec![out.clone()]);
        std::fs::read(out).unwrap()
    };
    let a = sample("a.png", &["--seed", "3"]);
    let img = image::load_from_memory(&a).unwrap();
    // 32 px tiles with 1 px padding
    assert_eq!((img.width(), img.height()), (4 * 32 + 5, 3 * 32 + 4));
    assert_eq!(a, sample("b.png", &["--seed", "3"]));
    assert_ne!(a, sample("c.png", &["--seed", "4"]));

    let hm = dir.path().join("hm");
    assert!(eqgan(&["heatmap", "--seed", "9", "--out", hm.to_str().unwrap()]).status.success());
    let rec = hm.join("pyramid.json");
    let with = sample("p.png", &["--seed", "3", "--pyramid", rec.to_str().unwrap()]);
    assert_ne!(with, a);
}

#[test]
fn eval_reports_two_hundred_repeats_on_a_fresh_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = eqgan::config::TrainConfig::from_toml_str(
        "",
        &["latent_dim=16", "g_channels=[8,8,4,4]", "d_channels=[4,4,8,8]", "eval_pool=128"].map(String::from),
    )
    .unwrap();
    let ckpt = dir.path().join("fresh.bin");
    eqgan::trainer::TrainState::new(cfg).unwrap().save(&ckpt).unwrap();
    let o = eqgan(&["eval", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let paths = stdout_paths(&o);
    assert_eq!(paths, vec![dir.path().join("fresh_eval.json")]);
    let report: EvalReport = serde_json::from_slice(&std::fs::read(&paths[0]).unwrap()).unwrap();
    assert_eq!(report.di.repeats, 200);
    assert_eq!(report.di.min_real.len(), 200);
    assert_eq!(report.step, 0);
    assert!(report.di.di_mean.is_finite() && report.fid.fid.is_finite());
}

#[test]
fn attn_writes_overlays_and_maps() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = checkpoint();
    let out = dir.path().join("gen");
    let o = eqgan(&["attn", ckpt.to_str().unwrap(), "--seed", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let paths = stdout_paths(&o);
    assert_eq!(paths.len(), 1 + 2 * 3 + 1);
    let rec: Value = serde_json::from_slice(&std::fs::read(out.join("attn.json")).unwrap()).unwrap();
    let taps = rec["taps"].as_array().unwrap();
    for (t, (name, res)) in taps.iter().zip([("d4", 4), ("d8", 8), ("d16", 16)]) {
        assert_eq!(t["tap"], name);
        assert_eq!(t["map"].as_array().unwrap().len(), res * res);
        assert!(t["map"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap() >= 0.0));
        let overlay = image::open(out.join(format!("attn_{name}.png"))).unwrap();
        assert_eq!((overlay.width(), overlay.height()), (32, 32));
    }

    // an image file instead of a generated one
    let file = out.join("image.png");
    let o = eqgan(&[
        "attn",
        ckpt.to_str().unwrap(),
        "--image",
        file.to_str().unwrap(),
        "--taps",
        "d8",
        "--out",
        dir.path().join("file").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_paths(&o).len(), 1 + 2 + 1);

    let o = eqgan(&["attn", ckpt.to_str().unwrap(), "--taps", "d5", "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(error_line(&o)["error"], "invalid_argument");
}

#[test]
fn seeded_images_match_the_edit_service() {
    let ckpt = checkpoint();
    let snap = Snapshot::load(&ckpt).unwrap();
    let model = Model::load(&ckpt).unwrap();
    for seed in [0, 17] {
        let (ours, _) = generate_seeded(&snap, seed).unwrap();
        let centers: Vec<Vec<Center>> = model.default_centers(seed).unwrap();
        let coords = edit_service::api::validate_centers(&centers).unwrap();
        let (theirs, _) = model.image(seed, &coords).unwrap();
        let gap = ours.data().iter().zip(theirs.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-12, "seed {seed}: {gap}");
    }
}

#[test]
fn curves_renders_the_score_plot() {
    let out = run_dir().join("curves.svg");
    let o = eqgan(&["curves", run_dir().join("run").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(out).unwrap().starts_with("<svg"));
}

fn http_get(addr: &str, path: &str) -> Option<(u16, String)> {
    let mut s = TcpStream::connect(addr).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(10))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").ok()?;
    let mut text = String::new();
    s.read_to_string(&mut text).ok()?;
    let status = text.split_whitespace().nth(1)?.parse().ok()?;
    let body = text.split_once("\r\n\r\n")?.1.to_string();
    Some((status, body))
}

#[test]
fn serve_answers_model_info() {
    let ckpt = checkpoint();
    let mut child = Command::new(env!("CARGO_BIN_EXE_eqgan"))
        .args(["serve", ckpt.to_str().unwrap(), "--addr", "127.0.0.1:0", "--seed", "1"])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().trim_start_matches("http://").to_string();
    let deadline = Instant::now() + Duration::from_secs(60);
    let body = loop {
        match http_get(&addr, "/model/info") {
            Some((200, body)) => break body,
            Some((503, _)) | None if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(50)),
            other => panic!("unexpected answer {other:?}"),
        }
    };
    child.kill().unwrap();
    child.wait().unwrap();
    let info: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(info["step"], 4);
    assert_eq!(info["counts"], serde_json::json!([1, 2, 4]));
}
