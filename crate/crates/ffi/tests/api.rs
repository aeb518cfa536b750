use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use closer_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(closer_last_error()) }.to_string_lossy().into_owned()
}

fn encoder(dims: &[usize], seed: u64) -> *mut CloserEncoder {
    let mut e = ptr::null_mut();
    let st = unsafe { closer_encoder_new(dims.as_ptr(), dims.len(), seed, &mut e) };
    assert_eq!(st, CloserStatus::Ok, "{}", last_error());
    e
}

fn two_cluster_data() -> (Vec<f64>, Vec<usize>) {
    let x = vec![1.0, 0.1, 0.9, -0.1, 1.1, 0.0, -1.0, 0.1, -0.9, -0.1, -1.1, 0.0];
    (x, vec![3, 3, 3, 8, 8, 8])
}

#[test]
fn version_is_nonempty() {
    let v = unsafe { CStr::from_ptr(closer_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn encoder_lifecycle_and_embedding() {
    let e = encoder(&[2, 8, 3], 5);
    let (mut din, mut dout) = (0, 0);
    assert_eq!(unsafe { closer_encoder_dims(e, &mut din, &mut dout) }, CloserStatus::Ok);
    assert_eq!((din, dout), (2, 3));

    let x = [0.5, -0.25, 1.0, 2.0];
    let mut z = [0.0; 6];
    assert_eq!(unsafe { closer_encoder_embed(e, x.as_ptr(), 2, 2, z.as_mut_ptr(), 6) }, CloserStatus::Ok);
    for row in z.chunks(3) {
        let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
    let st = unsafe { closer_encoder_embed(e, x.as_ptr(), 2, 2, z.as_mut_ptr(), 5) };
    assert_eq!(st, CloserStatus::InvalidArgument);
    let st = unsafe { closer_encoder_embed(e, x.as_ptr(), 1, 4, z.as_mut_ptr(), 3) };
    assert_eq!(st, CloserStatus::ShapeMismatch, "{}", last_error());

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("enc.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { closer_encoder_save(e, path.as_ptr()) }, CloserStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { closer_encoder_load(path.as_ptr(), &mut loaded) }, CloserStatus::Ok);
    let mut z2 = [0.0; 6];
    unsafe { closer_encoder_embed(loaded, x.as_ptr(), 2, 2, z2.as_mut_ptr(), 6) };
    assert_eq!(z, z2);

    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { closer_encoder_load(missing.as_ptr(), &mut none) }, CloserStatus::Io);
    assert!(none.is_null());
    unsafe {
        closer_encoder_free(e);
        closer_encoder_free(loaded);
        closer_encoder_free(ptr::null_mut());
    }
}

#[test]
fn null_pointers_are_reported() {
    let mut out = 0.0;
    let st = unsafe { closer_inter_loss(ptr::null(), ptr::null(), 2, 2, &mut out) };
    assert_eq!(st, CloserStatus::NullPointer);
    assert!(last_error().contains("features"));
    let st = unsafe { closer_encoder_dims(ptr::null(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, CloserStatus::NullPointer);
}

#[test]
fn prototype_bank_round_trip() {
    let e = encoder(&[2, 16, 4], 1);
    let (x, y) = two_cluster_data();
    let mut bank = ptr::null_mut();
    let st = unsafe { closer_bank_new(e, x.as_ptr(), y.as_ptr(), 6, 2, &mut bank) };
    assert_eq!(st, CloserStatus::Ok, "{}", last_error());
    let mut len = 0;
    unsafe { closer_bank_len(bank, &mut len) };
    assert_eq!(len, 2);

    let mut class = usize::MAX;
    let mut scores = [0.0; 2];
    let st = unsafe { closer_bank_classify(bank, e, [1.0, 0.05].as_ptr(), 2, &mut class, scores.as_mut_ptr(), 2) };
    assert_eq!(st, CloserStatus::Ok);
    assert_eq!(class, 3);
    assert!(scores[0] >= scores[1]);
    let st = unsafe { closer_bank_classify(bank, e, [1.0, 0.05].as_ptr(), 2, &mut class, ptr::null_mut(), 0) };
    assert_eq!(st, CloserStatus::Ok);

    // A class that already has a prototype cannot be added again.
    let st = unsafe { closer_bank_update(bank, e, x.as_ptr(), y.as_ptr(), 3, 2) };
    assert_eq!(st, CloserStatus::ClassOverlap);
    unsafe { closer_bank_len(bank, &mut len) };
    assert_eq!(len, 2);

    let new_x = [0.0, 1.0, 0.1, 0.9];
    let st = unsafe { closer_bank_update(bank, e, new_x.as_ptr(), [11usize, 11].as_ptr(), 2, 2) };
    assert_eq!(st, CloserStatus::Ok, "{}", last_error());
    unsafe { closer_bank_len(bank, &mut len) };
    assert_eq!(len, 3);

    // Updating with a different encoder violates the frozen-encoder contract.
    let other = encoder(&[2, 16, 4], 2);
    let st = unsafe { closer_bank_update(bank, other, new_x.as_ptr(), [12usize, 12].as_ptr(), 2, 2) };
    assert_eq!(st, CloserStatus::EncoderChanged);

    unsafe {
        closer_bank_free(bank);
        closer_encoder_free(e);
        closer_encoder_free(other);
    }
}

#[test]
fn losses_through_the_abi() {
    let mut out = 0.0;
    // Orthogonal two-class case at tau = 1.
    let f = [1.0, 0.0];
    let w = [1.0, 0.0, 0.0, 1.0];
    let st = unsafe { closer_sce_loss(f.as_ptr(), [0usize].as_ptr(), 1, 2, w.as_ptr(), 2, 1.0, 0.0, &mut out) };
    assert_eq!(st, CloserStatus::Ok);
    assert!((out - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);

    let same = [1.0, 0.0, 2.0, 0.0];
    unsafe { closer_intra_loss(same.as_ptr(), [0usize, 0].as_ptr(), 2, 2, &mut out) };
    assert!((out + 1.0).abs() < 1e-12);
    let orth = [1.0, 0.0, 0.0, 1.0];
    unsafe { closer_inter_loss(orth.as_ptr(), [0usize, 1].as_ptr(), 2, 2, &mut out) };
    assert!(out.abs() < 1e-12);
    let st = unsafe { closer_inter_loss(orth.as_ptr(), [0usize, 0].as_ptr(), 2, 2, &mut out) };
    assert_eq!(st, CloserStatus::InvalidArgument);

    let views = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
    let st = unsafe { closer_ssc_loss(views.as_ptr(), 2, 2, 0.5, &mut out) };
    assert_eq!(st, CloserStatus::Ok);
    assert!(out.is_finite() && out > 0.0);
    let st = unsafe { closer_ssc_loss(views.as_ptr(), 2, 2, -1.0, &mut out) };
    assert_eq!(st, CloserStatus::InvalidArgument);
}

#[test]
fn metrics_through_the_abi() {
    let protos = [1.0, 0.0, 0.0, 1.0];
    let feats = [1.0, 1.0];
    let mut t = 0.0;
    let st = unsafe { closer_transferability(protos.as_ptr(), 2, feats.as_ptr(), 1, 2, &mut t) };
    assert_eq!(st, CloserStatus::Ok, "{}", last_error());
    assert!(t.is_finite());

    let mut b = f64::NAN;
    let st = unsafe { closer_ib_lower_bound(2, [-20.0, -20.0].as_ptr(), 2, -20.0, &mut b) };
    assert_eq!(st, CloserStatus::Ok, "{}", last_error());
    assert!(b.abs() < 1e-12);
    let st = unsafe { closer_ib_lower_bound(2, [1.0, 1.0].as_ptr(), 2, 1.0, &mut b) };
    assert_eq!(st, CloserStatus::NotInLemmaRegime);
}

#[test]
fn run_config_writes_reports() {
    let config = r#"{
        "name": "tiny",
        "dataset": {"kind": "synthetic", "classes": 8, "train_per_class": 12, "test_per_class": 6,
                    "input_dim": 6, "center_separation": 3.0, "cluster_std": 0.5, "seed": 3},
        "split": {"base_classes": 4, "ways": 2, "shots": 2, "sessions": 2},
        "encoder": {"hidden": [16], "embed_dim": 4},
        "loss": {"tau": 0.0625},
        "train": {"epochs": 2, "batch_size": 8, "lr": 0.05},
        "seeds": 1
    }"#;
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new(config).unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let st = unsafe { closer_run_config(cfg.as_ptr(), out.as_ptr()) };
    assert_eq!(st, CloserStatus::Ok, "{}", last_error());
    assert!(dir.path().join("run.json").exists());

    let bad = CString::new("{").unwrap();
    assert_eq!(unsafe { closer_run_config(bad.as_ptr(), out.as_ptr()) }, CloserStatus::Io);
    assert!(!last_error().is_empty());
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/closer.h");
    let text = std::fs::read_to_string(header).expect("header generated by build script");
    for name in ["closer_encoder_new", "closer_bank_classify", "closer_ib_lower_bound", "CLOSER_STATUS_OK"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(&src, format!("#include \"{header}\"\nint main(void) {{ return CLOSER_STATUS_OK; }}\n")).unwrap();
    match Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(_) => eprintln!("no C compiler found; skipped syntax check"),
    }
}
