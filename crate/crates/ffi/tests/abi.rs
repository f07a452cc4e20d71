use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;
use std::sync::Arc;

use convmotion::eval::{euler_error, predict_frames};
use convmotion::mocap::rotation::{expmap_to_rotmat, rotmat_to_euler};
use convmotion::mocap::synth::{generate, SynthConfig};
use convmotion::mocap::{Corpus, NormalizationStats, RawTrial};
use convmotion::training::{TrainConfig, Trainer};
use convmotion_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    ckpt: PathBuf,
    stats: PathBuf,
    trials: Vec<RawTrial>,
    trained: Trainer,
}

/// A fresh checkpoint (zero decoder output) saved as `fresh.ckpt` and a
/// briefly trained one as `trained.ckpt`.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let trials = generate(&SynthConfig::default()).unwrap();
    let stats = Arc::new(NormalizationStats::fit_trials(&trials, 1e-4, 6).unwrap());
    let corpus = Corpus::new(&trials, Arc::clone(&stats)).unwrap();
    let mut trainer = Trainer::new(TrainConfig::tiny(), corpus).unwrap();
    trainer.checkpoint().save(&dir.path().join("fresh.ckpt")).unwrap();
    trainer.run(3, None, &mut std::io::sink()).unwrap();
    let ckpt = dir.path().join("trained.ckpt");
    trainer.checkpoint().save(&ckpt).unwrap();
    let stats_path = dir.path().join("stats.json");
    stats.save(&stats_path).unwrap();
    Fixture { _dir: dir, ckpt, stats: stats_path, trials, trained: trainer }
}

fn c(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(cm_last_error_message()) }.to_string_lossy().into_owned()
}

fn load(ckpt: &Path, stats: &Path) -> (CmStatus, *mut CmModel) {
    let mut model = ptr::null_mut();
    let status = unsafe { cm_model_load(c(ckpt).as_ptr(), c(stats).as_ptr(), &mut model) };
    (status, model)
}

#[test]
fn predict_matches_library() {
    let f = fixture();
    let (status, model) = load(&f.ckpt, &f.stats);
    assert_eq!(status, CmStatus::Ok, "{}", last_error());
    unsafe {
        assert_eq!(cm_model_seed_len(model), 16);
        assert_eq!(cm_model_target_len(model), 6);
        assert_eq!(cm_model_raw_dim(model), 18);
        assert_eq!(cm_model_pose_dim(model), f.trained.model.pose_dim);
    }
    let frames = f.trials[1].frames.slice_rows(3, 20).unwrap();
    let mut out = vec![0.0; 6 * 18];
    let status = unsafe { cm_model_predict(model, frames.data().as_ptr(), 20, 18, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, CmStatus::Ok, "{}", last_error());
    let stats = Arc::new(NormalizationStats::load(&f.stats).unwrap());
    let expected = predict_frames(&f.trained.model, &stats, &frames).unwrap();
    assert_eq!(out, expected.data());
    assert_eq!(last_error(), "");
    unsafe { cm_model_free(model) };
}

#[test]
fn fresh_model_repeats_last_seed_frame() {
    let f = fixture();
    let (status, model) = load(&f.ckpt.with_file_name("fresh.ckpt"), &f.stats);
    assert_eq!(status, CmStatus::Ok, "{}", last_error());
    let frames = f.trials[0].frames.slice_rows(0, 16).unwrap();
    let mut out = vec![f64::NAN; 6 * 18];
    let status = unsafe { cm_model_predict(model, frames.data().as_ptr(), 16, 18, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, CmStatus::Ok);
    for row in out.chunks(18) {
        assert_eq!(row, frames.row(15));
    }
    unsafe { cm_model_free(model) };
}

#[test]
fn failures_report_status_and_message() {
    let f = fixture();
    let missing = f.stats.with_file_name("missing.json");
    let (status, model) = load(&f.ckpt, &missing);
    assert_eq!(status, CmStatus::Io);
    assert!(model.is_null());
    assert!(last_error().contains("missing.json"));

    let other = generate(&SynthConfig { seed: 9, ..SynthConfig::default() }).unwrap();
    let other_stats = f.stats.with_file_name("other.json");
    NormalizationStats::fit_trials(&other, 1e-4, 6).unwrap().save(&other_stats).unwrap();
    let (status, _) = load(&f.ckpt, &other_stats);
    assert_eq!(status, CmStatus::Fingerprint);
    assert!(last_error().contains("fingerprint"));

    let garbage = f.stats.with_file_name("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(load(&garbage, &f.stats).0, CmStatus::Parse);

    let (_, model) = load(&f.ckpt, &f.stats);
    let frames = vec![0.0; 20 * 18];
    let mut out = vec![0.0; 6 * 18];
    unsafe {
        assert_eq!(
            cm_model_predict(model, frames.as_ptr(), 10, 18, out.as_mut_ptr(), out.len()),
            CmStatus::InvalidArgument
        );
        assert_eq!(cm_model_predict(model, frames.as_ptr(), 20, 17, out.as_mut_ptr(), out.len()), CmStatus::Shape);
        assert_eq!(cm_model_predict(model, frames.as_ptr(), 20, 18, out.as_mut_ptr(), 10), CmStatus::Shape);
        assert_eq!(cm_model_predict(model, ptr::null(), 20, 18, out.as_mut_ptr(), out.len()), CmStatus::NullPointer);
        assert_eq!(
            cm_model_predict(ptr::null(), frames.as_ptr(), 20, 18, out.as_mut_ptr(), out.len()),
            CmStatus::NullPointer
        );
        assert_eq!(cm_model_seed_len(ptr::null()), 0);
        assert_eq!(cm_model_load(ptr::null(), ptr::null(), ptr::null_mut()), CmStatus::NullPointer);
        cm_model_free(model);
        cm_model_free(ptr::null_mut());
    }
}

#[test]
fn rotation_helpers_match_library() {
    let r = [0.3, -1.1, 0.7];
    let mut m = [0.0; 9];
    assert_eq!(unsafe { cm_expmap_to_rotmat(r.as_ptr(), m.as_mut_ptr()) }, CmStatus::Ok);
    let lib = expmap_to_rotmat(r);
    assert_eq!(m, lib.concat().as_slice());
    let mut e = [0.0; 3];
    assert_eq!(unsafe { cm_rotmat_to_euler(m.as_ptr(), e.as_mut_ptr()) }, CmStatus::Ok);
    assert_eq!(e, rotmat_to_euler(&lib).unwrap());

    let skew = [2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    assert_eq!(unsafe { cm_rotmat_to_euler(skew.as_ptr(), e.as_mut_ptr()) }, CmStatus::Numeric);
    assert_eq!(unsafe { cm_expmap_to_rotmat(ptr::null(), m.as_mut_ptr()) }, CmStatus::NullPointer);
}

#[test]
fn euler_error_honours_mask() {
    let a = [0.1, 0.2, 0.3, 0.4, -0.5, 0.6];
    let b = [0.0, 0.2, 0.3, 0.4, 0.5, 0.6];
    let mut out = -1.0;
    assert_eq!(unsafe { cm_euler_error(a.as_ptr(), b.as_ptr(), ptr::null(), 6, &mut out) }, CmStatus::Ok);
    assert_eq!(out, euler_error(&a, &b, &[true; 6]).unwrap());
    let mask = [1u8, 1, 1, 0, 0, 0];
    assert_eq!(unsafe { cm_euler_error(a.as_ptr(), b.as_ptr(), mask.as_ptr(), 6, &mut out) }, CmStatus::Ok);
    assert_eq!(out, euler_error(&a, &b, &[true, true, true, false, false, false]).unwrap());
    assert_eq!(unsafe { cm_euler_error(a.as_ptr(), b.as_ptr(), ptr::null(), 5, &mut out) }, CmStatus::Shape);
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(cm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
