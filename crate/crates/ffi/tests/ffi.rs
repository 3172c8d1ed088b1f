use std::ffi::{CStr, CString};
use std::ptr;

use curator_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cur_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn normalize_round_trip() {
    let input = CString::new("a\r\nb\n\n\n\n\nc  ").unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { cur_normalize_text(input.as_ptr(), &mut out) };
    assert_eq!(st, CurStatus::Ok);
    let s = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
    unsafe { cur_string_free(out) };
    assert_eq!(s, "a\nb\n\n\nc");
}

#[test]
fn null_arguments_are_reported() {
    let st = unsafe { cur_normalize_text(ptr::null(), ptr::null_mut()) };
    assert_eq!(st, CurStatus::NullArgument);
    assert!(last_error().contains("text"));
}

#[test]
fn lr_schedule_handle() {
    let spec = CurLrSpec {
        peak_lr: 1e-3,
        warmup_end: 10,
        constant_end: 20,
        slow_decay_end: 30,
        slow_decay_lr: 5e-4,
        end: 40,
        final_lr: 0.0,
    };
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cur_lr_schedule_new(&spec, &mut h) }, CurStatus::Ok);
    let at = |step| {
        let mut v = f64::NAN;
        assert_eq!(unsafe { cur_lr_schedule_at(h, step, &mut v) }, CurStatus::Ok);
        v
    };
    assert_eq!(at(0), 0.0);
    assert!((at(5) - 5e-4).abs() < 1e-15);
    assert_eq!(at(15), 1e-3);
    assert!((at(25) - 7.5e-4).abs() < 1e-15);
    assert_eq!(at(40), 0.0);
    let mut v = 0.0;
    assert_eq!(unsafe { cur_lr_schedule_at(h, 41, &mut v) }, CurStatus::InvalidArgument);
    unsafe { cur_lr_schedule_free(h) };

    let bad = CurLrSpec { warmup_end: 50, ..spec };
    let mut h = ptr::null_mut();
    assert_ne!(unsafe { cur_lr_schedule_new(&bad, &mut h) }, CurStatus::Ok);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn packing_and_mask() {
    let a: Vec<u32> = vec![1, 2, 3];
    let b: Vec<u32> = vec![4, 5];
    let c: Vec<u32> = vec![6, 7, 8, 9, 10, 11];
    let docs = [a.as_ptr(), b.as_ptr(), c.as_ptr()];
    let lens = [a.len(), b.len(), c.len()];
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { cur_pack(docs.as_ptr(), lens.as_ptr(), 3, 6, 0, &mut p) }, CurStatus::Ok);
    let mut n = 0;
    assert_eq!(unsafe { cur_packed_len(p, &mut n) }, CurStatus::Ok);
    assert_eq!(n, 2);

    let (mut tp, mut len, mut non_pad) = (ptr::null(), 0, 0);
    assert_eq!(unsafe { cur_packed_tokens(p, 0, &mut tp, &mut len, &mut non_pad) }, CurStatus::Ok);
    let toks = unsafe { std::slice::from_raw_parts(tp, len) };
    assert_eq!(toks, &[1, 2, 3, 4, 5, 0]);
    assert_eq!(non_pad, 5);

    let allows = |i, j| {
        let mut v = false;
        assert_eq!(unsafe { cur_packed_mask(p, 0, i, j, &mut v) }, CurStatus::Ok);
        v
    };
    assert!(allows(2, 0));
    assert!(!allows(3, 2));
    assert!(allows(4, 3));
    assert!(!allows(0, 1));
    let mut v = false;
    assert_eq!(unsafe { cur_packed_mask(p, 0, 6, 0, &mut v) }, CurStatus::InvalidArgument);
    assert_eq!(unsafe { cur_packed_mask(p, 9, 0, 0, &mut v) }, CurStatus::InvalidArgument);
    unsafe { cur_packed_free(p) };
}

#[test]
fn rope_constants_and_rotation() {
    let expect = [
        (CurRopeStage::Pretrain, 4_096, 1e4),
        (CurRopeStage::Ext1, 32_768, 8e6),
        (CurRopeStage::Ext2, 131_072, 1.28e8),
    ];
    for (stage, len, theta) in expect {
        let mut c = CurRopeConfig { seq_len: 0, head_dim: 0, theta: 0.0 };
        assert_eq!(unsafe { cur_rope_config(stage, &mut c) }, CurStatus::Ok);
        assert_eq!((c.seq_len, c.head_dim, c.theta), (len, 128, theta));
    }
    let cfg = CurRopeConfig { seq_len: 4096, head_dim: 4, theta: 1e4 };
    let v = [1.0, 0.0, 1.0, 0.0];
    let mut out = [0.0; 4];
    assert_eq!(unsafe { cur_rope_rotate(&cfg, v.as_ptr(), 4, 1, out.as_mut_ptr()) }, CurStatus::Ok);
    assert!((out[0] - 1f64.cos()).abs() < 1e-12);
    assert!((out[1] - 1f64.sin()).abs() < 1e-12);
    assert!((out[2] - 0.01f64.cos()).abs() < 1e-12);
    assert_eq!(
        unsafe { cur_rope_rotate(&cfg, v.as_ptr(), 3, 1, out.as_mut_ptr()) },
        CurStatus::InvalidArgument
    );
}

#[test]
fn dedup_session_groups_duplicates() {
    let mut params = cur_dedup_default_params();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cur_dedup_new(&params, &mut h) }, CurStatus::Ok);
    let base: Vec<String> = (0..60).map(|i| format!("tok{i}")).collect();
    let mut near = base.clone();
    near[30] = "changed".into();
    let texts = [base.join(" "), base.join(" "), near.join(" "), "something else entirely here".into()];
    for t in &texts {
        let c = CString::new(t.as_str()).unwrap();
        assert_eq!(unsafe { cur_dedup_add(h, c.as_ptr()) }, CurStatus::Ok);
    }
    let mut n = 0;
    assert_eq!(unsafe { cur_dedup_run(h, 2, &mut n) }, CurStatus::Ok);
    assert_eq!(n, 2);
    let cluster = |i| {
        let mut c = 0;
        assert_eq!(unsafe { cur_dedup_cluster_of(h, i, &mut c) }, CurStatus::Ok);
        c
    };
    assert_eq!(cluster(0), cluster(1));
    assert_eq!(cluster(0), cluster(2));
    assert_ne!(cluster(0), cluster(3));
    unsafe { cur_dedup_free(h) };

    params.bands = 10;
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cur_dedup_new(&params, &mut h) }, CurStatus::Config);
    assert!(last_error().contains("bands * rows"));
}

#[test]
fn classifier_load_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.qclf");
    let pos: Vec<String> = (0..50).map(|i| format!("good words here {i} clean prose")).collect();
    let neg: Vec<String> = (0..50).map(|i| format!("buy now cheap {i} click spam")).collect();
    let hyper = curator::quality::Hyper::default();
    curator::quality::train_classifier("m", "test", &pos, &neg, &hyper).unwrap().save(&path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cur_classifier_load(cpath.as_ptr(), &mut h) }, CurStatus::Ok);
    let score = |t: &str| {
        let c = CString::new(t).unwrap();
        let mut s = -1.0;
        assert_eq!(unsafe { cur_classifier_score(h, c.as_ptr(), &mut s) }, CurStatus::Ok);
        s
    };
    assert!(score("good words here clean prose") > 0.5);
    assert!(score("buy now cheap click spam") < 0.5);
    unsafe { cur_classifier_free(h) };

    std::fs::write(&path, b"garbage").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { cur_classifier_load(cpath.as_ptr(), &mut h) }, CurStatus::Format);
    let missing = CString::new("/nonexistent/m.qclf").unwrap();
    assert_eq!(unsafe { cur_classifier_load(missing.as_ptr(), &mut h) }, CurStatus::Io);
}

#[test]
fn report_on_empty_dir_is_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { cur_pipeline_report(c.as_ptr(), &mut json) }, CurStatus::Integrity);
    assert!(json.is_null());
}
