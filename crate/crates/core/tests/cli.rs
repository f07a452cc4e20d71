use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use convmotion::mocap::synth::{generate, SynthConfig};
use convmotion::mocap::{Corpus, FrameMatrix, NormalizationStats, DEFAULT_CONST_EPSILON, DEFAULT_GLOBAL_DIMS};
use convmotion::model::{randomize, zero};
use convmotion::training::{TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn convmotion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convmotion")).args(args).output().expect("spawn convmotion")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_prep_train_predict_eval_compose() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");

    let o = convmotion(&["synth", "--out", s(&data), "--seed", "4", "--joints", "3", "--frames", "90"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(data.join("manifest.txt").exists());

    let o = convmotion(&["prep", "--data-root", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("reducedDim: 9"), "{}", stdout(&o));

    let o = convmotion(&["train", "--data-root", s(&data), "--preset", "tiny", "--iters", "3", "--out", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("config: window = 8"), "{}", stdout(&o));
    for f in ["config.txt", "stats.json", "train.csv", "final.ckpt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(run.join("train.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let seed_file = data.join("S5").join("walking_1.txt");
    let pred = dir.path().join("pred.txt");
    let o = convmotion(&[
        "predict",
        "--checkpoint",
        s(&run.join("final.ckpt")),
        "--stats",
        s(&run.join("stats.json")),
        "--input",
        s(&seed_file),
        "--out",
        s(&pred),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let frames = FrameMatrix::read(&pred).unwrap();
    assert_eq!((frames.rows(), frames.cols()), (6, 15));

    let report = dir.path().join("report");
    let o = convmotion(&[
        "eval",
        "--data-root",
        s(&data),
        "--checkpoint",
        s(&run.join("final.ckpt")),
        "--num-sequences",
        "2",
        "--baseline",
        "--out",
        s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("zero-velocity baseline"));
    let csv = std::fs::read_to_string(report.join("eval.csv")).unwrap();
    assert!(csv.starts_with("action,ms,error\n"));
    assert!(csv.contains("average,160,"));
    assert!(report.join("zero_velocity.json").exists());
}

#[test]
fn predict_with_zeroed_decoder_repeats_last_seed_frame() {
    let dir = tempfile::tempdir().unwrap();
    let trials = generate(&SynthConfig { seed: 2, ..SynthConfig::default() }).unwrap();
    let stats = Arc::new(NormalizationStats::fit_trials(&trials, DEFAULT_CONST_EPSILON, DEFAULT_GLOBAL_DIMS).unwrap());
    let mut cfg = TrainConfig::tiny();
    for (k, v) in [("seed_len", "50"), ("target_len", "25"), ("window", "20")] {
        cfg.set(k, v).unwrap();
    }
    let corpus = Corpus::new(&trials, Arc::clone(&stats)).unwrap();
    let trainer = Trainer::new(cfg, corpus).unwrap();
    let mut ck = trainer.checkpoint();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    randomize(&mut ck.model.generator, &mut rng);
    zero(&mut ck.model.generator.decoder.out);
    let ck_path = dir.path().join("zeroed.ckpt");
    let stats_path = dir.path().join("stats.json");
    ck.save(&ck_path).unwrap();
    stats.save(&stats_path).unwrap();

    let seed_path = dir.path().join("seed.txt");
    trials[1].frames.slice_rows(10, 60).unwrap().write(&seed_path).unwrap();
    let out = dir.path().join("pred.txt");
    let o = convmotion(&[
        "predict",
        "--checkpoint",
        s(&ck_path),
        "--stats",
        s(&stats_path),
        "--input",
        s(&seed_path),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let seed = FrameMatrix::read(&seed_path).unwrap();
    let pred = FrameMatrix::read(&out).unwrap();
    assert_eq!(pred.rows(), 25);
    for r in 0..25 {
        assert_eq!(pred.row(r), seed.row(59), "frame {r}");
    }
}

#[test]
fn ablate_kernel_axis_emits_one_row_per_shape() {
    let dir = tempfile::tempdir().unwrap();
    let o = convmotion(&[
        "ablate",
        "--axis",
        "kernel",
        "--synthetic",
        "--preset",
        "tiny",
        "--iters",
        "2",
        "--num-sequences",
        "2",
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("ablate_kernel.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis,setting,iterations,final_mse,err_80ms,err_160ms");
    let settings: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(settings, ["2x7", "7x2", "4x4"]);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 6 && l.starts_with("kernel,")));
}

#[test]
fn ablate_window_axis_logs_skipped_setting() {
    let o = convmotion(&[
        "ablate",
        "--axis",
        "window",
        "--synthetic",
        "--preset",
        "tiny",
        "--iters",
        "1",
        "--num-sequences",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("skipping window 20"), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("window,")).count(), 2);
}

#[test]
fn gradcheck_passes_on_one_seed() {
    let o = convmotion(&["gradcheck", "--seeds", "1"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.contains(": ok max rel err")).count(), 3, "{out}");
}

#[test]
fn gradcheck_failure_exits_nonzero() {
    let o = convmotion(&["gradcheck", "--seeds", "1", "--tolerance", "1e-15"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAILED"));
}

#[test]
fn eval_refuses_other_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = convmotion(&["train", "--synthetic", "--preset", "tiny", "--iters", "1", "--out", s(&run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = convmotion(&[
        "eval",
        "--synthetic",
        "--synth-seed",
        "7",
        "--checkpoint",
        s(&run.join("final.ckpt")),
        "--num-sequences",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("fingerprint mismatch") && err.contains("hint:"), "{err}");
}

#[test]
fn errors_are_actionable() {
    let o = convmotion(&["predict", "--checkpoint", "/nonexistent.ckpt", "--stats", "/nonexistent.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--input"));
    let o = convmotion(&["train", "--out", "/tmp/unused", "--preset", "tiny"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--data-root DIR or --synthetic"));
    let o = convmotion(&["train", "--synthetic", "--out", "/tmp/unused", "--set", "channels=1,2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad value '1,2' for channels"), "{}", stderr(&o));
}
