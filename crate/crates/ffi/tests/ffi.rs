use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use deepmm_ffi::*;

const TINY: &str = r#"{"d_img": 5, "d_obj": 4, "d_word": 3, "d_shared": 6, "lstm_hidden": 3,
    "head_hidden": 5, "n_topics": 4, "n_sentiments": 3}"#;
const TINY_DATA: &str = r#"{"n_records": 25, "d_img": 5, "d_obj": 4, "d_word": 3,
    "n_topics": 4, "n_sentiments": 3, "seed": 2}"#;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn path_c(p: &Path) -> CString {
    c(p.to_str().unwrap())
}

fn last_error() -> String {
    let p = deepmm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tiny_model() -> *mut DeepmmModel {
    let mut m = ptr::null_mut();
    let cfg = c(TINY);
    assert_eq!(unsafe { deepmm_model_new(cfg.as_ptr(), 3, &mut m) }, DeepmmStatus::Ok);
    m
}

#[test]
fn predict_matches_core() {
    let m = tiny_model();
    let mut info = DeepmmModelInfo::default();
    unsafe {
        assert_eq!(deepmm_model_info(m, &mut info), DeepmmStatus::Ok);
    }
    assert_eq!((info.n_topics, info.n_sentiments, info.d_obj), (4, 3, 4));
    assert!(info.parameter_count > 0);

    let global = [0.5, -1.0, 0.25, 2.0, 0.0];
    let objects = [1.0, 0.0, -1.0, 0.5, 0.3, 0.3, 0.3, 0.3];
    let words = [0.1, 0.2, 0.3];
    let (mut t, mut s) = ([0.0; 4], [0.0; 3]);
    let status = unsafe {
        deepmm_model_predict(m, global.as_ptr(), objects.as_ptr(), 2, words.as_ptr(), 1, t.as_mut_ptr(), 4, s.as_mut_ptr(), 3)
    };
    assert_eq!(status, DeepmmStatus::Ok);

    let model = deepmm::Model::build(serde_json::from_str(TINY).unwrap(), 3).unwrap();
    let rec = deepmm::data::FeatureRecord {
        id: "x".into(),
        global_feature: global.to_vec(),
        object_features: objects.chunks(4).map(<[f64]>::to_vec).collect(),
        word_embeddings: vec![words.to_vec()],
        words: None,
        topic_labels: vec![0; 4],
        sentiment_labels: vec![0; 3],
    };
    let (et, es) = model.predict_probs(&rec).unwrap();
    assert_eq!(t.to_vec(), et);
    assert_eq!(s.to_vec(), es);
    unsafe { deepmm_model_free(m) };
}

#[test]
fn predict_rejects_small_buffers_and_nulls() {
    let m = tiny_model();
    let global = [0.0; 5];
    let (mut t, mut s) = ([0.0; 4], [0.0; 3]);
    unsafe {
        let st = deepmm_model_predict(m, global.as_ptr(), ptr::null(), 0, ptr::null(), 0, t.as_mut_ptr(), 3, s.as_mut_ptr(), 3);
        assert_eq!(st, DeepmmStatus::Shape);
        assert!(last_error().contains("capacities"));
        let st = deepmm_model_predict(m, ptr::null(), ptr::null(), 0, ptr::null(), 0, t.as_mut_ptr(), 4, s.as_mut_ptr(), 3);
        assert_eq!(st, DeepmmStatus::NullPointer);
        let st = deepmm_model_predict(m, global.as_ptr(), ptr::null(), 2, ptr::null(), 0, t.as_mut_ptr(), 4, s.as_mut_ptr(), 3);
        assert_eq!(st, DeepmmStatus::NullPointer);
        assert!(last_error().contains("objects"));
        let st = deepmm_model_predict(ptr::null(), global.as_ptr(), ptr::null(), 0, ptr::null(), 0, t.as_mut_ptr(), 4, s.as_mut_ptr(), 3);
        assert_eq!(st, DeepmmStatus::NullPointer);
        deepmm_model_free(m);
    }
}

#[test]
fn save_load_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = path_c(&dir.path().join("d.jsonl"));
    let ck = path_c(&dir.path().join("ck.json"));
    let cfg = c(TINY_DATA);
    let m = tiny_model();
    unsafe {
        assert_eq!(deepmm_synth_write(cfg.as_ptr(), data.as_ptr()), DeepmmStatus::Ok);
        assert_eq!(deepmm_model_save(m, ck.as_ptr()), DeepmmStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(deepmm_model_load(ck.as_ptr(), &mut loaded), DeepmmStatus::Ok);
        let mut ds = ptr::null_mut();
        assert_eq!(deepmm_dataset_load(data.as_ptr(), &mut ds), DeepmmStatus::Ok);
        assert_eq!(deepmm_dataset_len(ds), 25);

        let mut reports = Vec::new();
        for model in [m, loaded] {
            let mut json = ptr::null_mut();
            assert_eq!(deepmm_evaluate(model, ds, 0.5, &mut json), DeepmmStatus::Ok);
            reports.push(CStr::from_ptr(json).to_str().unwrap().to_string());
            deepmm_string_free(json);
        }
        assert_eq!(reports[0], reports[1]);
        let v: serde_json::Value = serde_json::from_str(&reports[0]).unwrap();
        assert_eq!(v["topic"]["samples"], 25);

        deepmm_dataset_free(ds);
        deepmm_model_free(loaded);
        deepmm_model_free(m);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ptr::null_mut();
    let mut ds = ptr::null_mut();
    unsafe {
        let missing = path_c(&dir.path().join("missing.json"));
        assert_eq!(deepmm_model_load(missing.as_ptr(), &mut m), DeepmmStatus::Io);
        assert!(m.is_null());
        assert!(last_error().contains("missing.json"));

        let bad = c(r#"{"d_shared": 7}"#);
        assert_eq!(deepmm_model_new(bad.as_ptr(), 0, &mut m), DeepmmStatus::Config);
        let junk = c("{not json");
        assert_eq!(deepmm_model_new(junk.as_ptr(), 0, &mut m), DeepmmStatus::Config);
        assert_eq!(deepmm_model_new(ptr::null(), 0, ptr::null_mut()), DeepmmStatus::NullPointer);

        let garbage = dir.path().join("g.jsonl");
        std::fs::write(&garbage, "hello\n").unwrap();
        assert_eq!(deepmm_dataset_load(path_c(&garbage).as_ptr(), &mut ds), DeepmmStatus::Data);

        let not_utf8 = [0xffu8, 0xfe, 0];
        assert_eq!(
            deepmm_dataset_load(not_utf8.as_ptr().cast(), &mut ds),
            DeepmmStatus::InvalidString
        );
        assert_eq!(deepmm_dataset_len(ptr::null()), 0);
        deepmm_model_free(ptr::null_mut());
        deepmm_dataset_free(ptr::null_mut());
        deepmm_string_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_per_thread() {
    let mut m = ptr::null_mut();
    let missing = c("/nonexistent/ck.json");
    assert_eq!(unsafe { deepmm_model_load(missing.as_ptr(), &mut m) }, DeepmmStatus::Io);
    let other = std::thread::spawn(|| deepmm_last_error().is_null()).join().unwrap();
    assert!(other);
}

#[test]
fn gradcheck_scopes_pass() {
    for scope in [DeepmmScope::Layers, DeepmmScope::Attention, DeepmmScope::Full] {
        let mut err = f64::NAN;
        assert_eq!(unsafe { deepmm_gradcheck(scope, 0, &mut err) }, DeepmmStatus::Ok);
        assert!(err < 1e-5);
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(deepmm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let lib = target_dir().join("libdeepmm_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "compiling the C smoke test failed");
    let out = Command::new(&exe).arg(dir.path().join("d.jsonl")).output().unwrap();
    assert!(
        out.status.success(),
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok"));
}
