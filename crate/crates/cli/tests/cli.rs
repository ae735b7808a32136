use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use psrgan::checkpoint::Checkpoint;
use psrgan::data::{load_image, save_image, synthetic_image, BitDepth};
use psrgan::gradcheck::registry;

fn psrgan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psrgan"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = psrgan(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// Small networks on six synthetic images.
const TINY: &[&str] = &[
    "--preset",
    "toy",
    "--set",
    "synthetic.count=6",
    "--set",
    "holdout=2",
    "--set",
    "g.base_channels=8",
    "--set",
    "g.residual_blocks=1",
    "--set",
    "g.head_kernel=3",
    "--set",
    "d.base_channels=8",
    "--set",
    "d.levels=2",
    "--set",
    "d.dense_width=8",
    "--set",
    "feature.widths=4,4",
    "--set",
    "train.batch_size=2",
    "--set",
    "train.checkpoint_every=3",
];

fn with<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    TINY.iter().copied().chain(extra.iter().copied()).collect()
}

#[test]
fn degrade_halves_a_png() {
    let dir = tempfile::tempdir().unwrap();
    let hr = dir.path().join("hr");
    fs::create_dir(&hr).unwrap();
    save_image(&synthetic_image(0, 0, 64), &hr.join("a.png"), BitDepth::Sixteen).unwrap();
    ok(dir.path(), &["degrade", "--input", "hr", "--output", "lr", "--scale", "2"]);
    let names: Vec<_> = fs::read_dir(dir.path().join("lr")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 2, "{names:?}");
    let lr = load_image(&dir.path().join("lr/a.png")).unwrap();
    assert_eq!(lr.shape(), &[1, 32, 32]);
    let echo = fs::read_to_string(dir.path().join("lr/config.txt")).unwrap();
    assert!(echo.contains("degrade.mode = blur_bicubic"));
}

#[test]
fn degrade_noise_follows_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--output", "hr", "--count", "2", "--size", "32"]);
    let run = |out: &str, seed: &str| {
        ok(dir.path(), &["degrade", "--input", "hr", "--output", out, "--scale", "2", "--noise", "gaussian:0.005", "--seed", seed]);
        fs::read(dir.path().join(out).join("synth_001.png")).unwrap()
    };
    assert_eq!(run("a", "4"), run("b", "4"));
    assert_ne!(run("a", "4"), run("c", "5"));
}

#[test]
fn degrade_of_an_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    let out = psrgan(dir.path(), &["degrade", "--input", "empty", "--output", "lr"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no PNG/PGM/PPM images"));
}

#[test]
fn degrade_reports_the_unreadable_file() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--output", "hr", "--count", "2", "--size", "16"]);
    fs::write(dir.path().join("hr/synth_000.png"), b"\x89PNG\r\n\x1a\nbroken").unwrap();
    let out = psrgan(dir.path(), &["degrade", "--input", "hr", "--output", "lr", "--scale", "2"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth_000.png"));
}

#[test]
fn zero_iterations_write_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with(&["train", "--output", "run", "--iters", "0"]));
    let ck = Checkpoint::load(&dir.path().join("run/checkpoint.psrg")).unwrap();
    assert_eq!(ck.iteration, 0);
    assert!(ck.tensors.contains_key("stage1.g.tail.weight"));
    let log = fs::read_to_string(dir.path().join("run/train.log")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(dir.path().join("run/config.txt").exists());
}

#[test]
fn interrupted_and_resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let args = with(&["--scale", "4", "--iters", "2", "train", "--output", "run"]);
    ok(dir.path(), &args);
    let full = fs::read(dir.path().join("run/checkpoint.psrg")).unwrap();
    let full_log = fs::read_to_string(dir.path().join("run/train.log")).unwrap();
    assert_eq!(full_log.lines().count(), 1 + 2 * 6);
    fs::remove_dir_all(dir.path().join("run")).unwrap();

    let mut first = args.clone();
    first.extend(["--max-steps", "7"]);
    ok(dir.path(), &first);
    let partial = Checkpoint::load(&dir.path().join("run/checkpoint.psrg")).unwrap();
    assert_eq!(partial.iteration, 7);
    fs::copy(dir.path().join("run/checkpoint.psrg"), dir.path().join("mid.psrg")).unwrap();
    ok(dir.path(), &["--iters", "2", "train", "--resume", "mid.psrg"]);
    assert_eq!(fs::read(dir.path().join("run/checkpoint.psrg")).unwrap(), full);
    assert_eq!(fs::read_to_string(dir.path().join("run/train.log")).unwrap(), full_log);
}

#[test]
fn training_reports_held_out_metrics_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(dir.path(), &with(&["--iters", "2", "--seed", "3", "train", "--output", "a"]));
    let b = ok(dir.path(), &with(&["--iters", "2", "--seed", "3", "train", "--output", "b"]));
    assert_eq!(a, b);
    let csv = |d: &str| fs::read(dir.path().join(d).join("holdout.csv")).unwrap();
    assert_eq!(csv("a"), csv("b"));
    for method in ["psrgan", "bilinear", "bicubic"] {
        assert!(a.contains(method), "{a}");
    }
}

#[test]
fn superres_upscales_deterministically_and_lists_supported_scales() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with(&["--scale", "4", "--iters", "1", "train", "--output", "run"]));
    save_image(&synthetic_image(9, 0, 32), &dir.path().join("in.png"), BitDepth::Sixteen).unwrap();
    let sr = ["superres", "--checkpoint", "run/checkpoint.psrg", "--input", "in.png"];
    let mut first = sr.to_vec();
    first.extend(["--output", "a.png", "--scale", "4"]);
    ok(dir.path(), &first);
    let mut second = sr.to_vec();
    second.extend(["--output", "b.png", "--scale", "4"]);
    ok(dir.path(), &second);
    assert_eq!(load_image(&dir.path().join("a.png")).unwrap().shape(), &[1, 128, 128]);
    assert_eq!(fs::read(dir.path().join("a.png")).unwrap(), fs::read(dir.path().join("b.png")).unwrap());
    assert!(dir.path().join("a.png.config.txt").exists());

    let mut bad = sr.to_vec();
    bad.extend(["--output", "c.png", "--scale", "8"]);
    let out = psrgan(dir.path(), &bad);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("supported: 2, 4"));
}

#[test]
fn eval_scores_identity_sets_and_counts_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--output", "hr", "--count", "3", "--size", "32"]);
    let stdout = ok(dir.path(), &["eval", "--sr", "hr", "--hr", "hr", "--label", "same", "--output", "ev", "--scale", "2"]);
    assert!(stdout.contains("psnr 100.000 dB") && stdout.contains("ssim 1.0000"), "{stdout}");
    let csv = fs::read_to_string(dir.path().join("ev/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().skip(1).all(|l| l.contains(",same,2,none,100.000000,1.000000,")));

    fs::create_dir(dir.path().join("one")).unwrap();
    fs::copy(dir.path().join("hr/synth_001.png"), dir.path().join("one/synth_001.png")).unwrap();
    let out = psrgan(dir.path(), &["eval", "--sr", "one", "--hr", "hr", "--label", "x", "--output", "ev2"]);
    assert_eq!(code(&out), 2);
    ok(dir.path(), &["eval", "--sr", "one", "--hr", "one", "--label", "x", "--output", "ev3"]);
    assert_eq!(fs::read_to_string(dir.path().join("ev3/metrics.csv")).unwrap().lines().count(), 2);
}

#[test]
fn gradcheck_lists_every_op_once_and_fails_on_a_broken_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["gradcheck"]);
    for case in registry(0) {
        let n = stdout.lines().filter(|l| l.split_whitespace().next() == Some(case.name.as_str())).count();
        assert_eq!(n, 1, "{}", case.name);
    }
    assert!(!stdout.contains("FAIL"));
    let out = psrgan(dir.path(), &["gradcheck", "--inject-broken"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("broken_square"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&psrgan(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&psrgan(dir.path(), &["--set", "no.such.key=1", "synth", "--output", "x"])), 1);
    assert_eq!(code(&psrgan(dir.path(), &["--noise", "pink:0.1", "synth", "--output", "x"])), 1);
    fs::write(dir.path().join("bad.cfg"), "seed = 1\nlearning_rate = 2\n").unwrap();
    let out = psrgan(dir.path(), &["--config", "bad.cfg", "synth", "--output", "x"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
    assert_eq!(code(&psrgan(dir.path(), &["--help"])), 0);
}

#[test]
fn config_file_values_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "# toy corpus\nseed = 11\nsynthetic.size = 16\n").unwrap();
    ok(dir.path(), &["--config", "run.cfg", "synth", "--output", "s", "--count", "1"]);
    let echo = fs::read_to_string(dir.path().join("s/config.txt")).unwrap();
    assert!(echo.contains("seed = 11\n") && echo.contains("synthetic.size = 16\n"));
    assert_eq!(load_image(&dir.path().join("s/synth_000.png")).unwrap().shape(), &[1, 16, 16]);
    let back = psrgan::config::RunConfig::parse(&echo).unwrap();
    assert_eq!(back.seed, 11);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, out: &str| {
        let mut args = with(&["--scale", "4", "--iters", "2", "train", "--output"]);
        args.push(out);
        let status = Command::new(env!("CARGO_BIN_EXE_psrgan"))
            .args(&args)
            .current_dir(dir.path())
            .env("RUST_LOG", "warn")
            .env("PSRG_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(dir.path().join(out).join("checkpoint.psrg")).unwrap()
    };
    // The output directory is part of the stored configuration.
    let one = run("1", "run");
    fs::remove_dir_all(dir.path().join("run")).unwrap();
    assert_eq!(one, run("4", "run"));
}
