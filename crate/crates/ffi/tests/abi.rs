use std::ffi::{CStr, CString};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use aspre_core::cli::{RunConfig, Session};
use aspre_ffi::*;
use serde_json::Value;

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Sample corpus with pairs, embeddings and a two-epoch model, in a scratch directory.
fn trained_sample() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let sample = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample");
    copy_dir(&sample, dir.path());
    let _ = fs::remove_dir_all(dir.path().join("out"));
    let config = dir.path().join("run.json");
    let cfg = config.to_str().unwrap();
    for cmd in ["extract-terms", "extract-pairs", "pseudo-embed"] {
        assert_eq!(aspre_core::cli::run(["aspre", cmd, "--config", cfg], None), 0, "{cmd}");
    }
    assert_eq!(aspre_core::cli::run(["aspre", "train", "--config", cfg, "--epochs", "2"], None), 0);
    (dir, config)
}

fn first_pair(dir: &Path) -> (String, String) {
    let text = fs::read_to_string(dir.join("reviews.jsonl")).unwrap();
    let rec: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    (rec["user_id"].as_str().unwrap().into(), rec["item_id"].as_str().unwrap().into())
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = aspre_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

struct OpenSession(*mut AspreSession);

impl Drop for OpenSession {
    fn drop(&mut self) {
        unsafe { aspre_session_free(self.0) }
    }
}

fn open(config: &Path) -> OpenSession {
    let mut s = ptr::null_mut();
    let st = unsafe { aspre_session_open(c(config.to_str().unwrap()).as_ptr(), &mut s) };
    assert_eq!(st, AspreStatus::Ok, "{}", last_error());
    assert!(!s.is_null());
    OpenSession(s)
}

#[test]
fn session_scores_match_the_library() {
    let (dir, config) = trained_sample();
    let session = open(&config);
    let (user, item) = first_pair(dir.path());

    let mut p = AsprePrediction::default();
    let st = unsafe { aspre_session_predict(session.0, c(&user).as_ptr(), c(&item).as_ptr(), &mut p) };
    assert_eq!(st, AspreStatus::Ok);
    assert!(aspre_last_error().is_null());

    let direct = Session::open(RunConfig::load(&config).unwrap()).unwrap().predict(&user, &item).unwrap();
    assert_eq!(p.s_hat.to_bits(), direct.s_hat.to_bits());
    assert_eq!(p.pre_clamp.to_bits(), direct.pre_clamp.to_bits());
    assert!((p.bias_term + p.implicit_term + p.explicit_term - p.pre_clamp).abs() < 1e-9);
    assert!(!p.cold_user && !p.cold_item);

    let mut k = 0usize;
    assert_eq!(unsafe { aspre_session_num_aspects(session.0, &mut k) }, AspreStatus::Ok);
    assert_eq!(k, direct.contributions.len());

    let mut cold = AsprePrediction::default();
    let st = unsafe { aspre_session_predict(session.0, c("nobody").as_ptr(), c(&item).as_ptr(), &mut cold) };
    assert_eq!(st, AspreStatus::Ok);
    assert!(cold.cold_user && !cold.cold_item);
}

#[test]
fn explanations_in_both_formats() {
    let (dir, config) = trained_sample();
    let session = open(&config);
    let (user, item) = first_pair(dir.path());
    let render = |format: u32| -> (AspreStatus, Option<String>) {
        let mut out = ptr::null_mut();
        let st = unsafe { aspre_session_explain(session.0, c(&user).as_ptr(), c(&item).as_ptr(), format, &mut out) };
        if out.is_null() {
            return (st, None);
        }
        let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
        unsafe { aspre_string_free(out) };
        (st, Some(text))
    };
    let (st, json) = render(AspreFormat::Json as u32);
    assert_eq!(st, AspreStatus::Ok);
    let report: Value = serde_json::from_str(&json.unwrap()).unwrap();
    assert_eq!(report["user_id"], user.as_str());
    assert!(!report["aspects"].as_array().unwrap().is_empty());

    let (st, md) = render(AspreFormat::Markdown as u32);
    assert_eq!(st, AspreStatus::Ok);
    assert!(md.unwrap().contains("| aspect |"));

    let (st, none) = render(7);
    assert_eq!((st, none), (AspreStatus::InvalidArgument, None));
    assert!(last_error().contains("format"));
}

#[test]
fn failures_set_status_and_message() {
    let mut s = ptr::null_mut();
    let st = unsafe { aspre_session_open(c("/nonexistent/run.json").as_ptr(), &mut s) };
    assert_eq!(st, AspreStatus::MissingInput);
    assert!(s.is_null());
    assert!(last_error().contains("/nonexistent/run.json"));

    assert_eq!(unsafe { aspre_session_open(ptr::null(), &mut s) }, AspreStatus::InvalidArgument);
    assert_eq!(unsafe { aspre_session_open(c("x").as_ptr(), ptr::null_mut()) }, AspreStatus::InvalidArgument);

    let bad_utf8 = [0xffu8, 0xfe, 0];
    let st = unsafe { aspre_session_open(bad_utf8.as_ptr().cast(), &mut s) };
    assert_eq!(st, AspreStatus::InvalidArgument);
    assert!(last_error().contains("UTF-8"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, "{\"seed\": \"not a number\"}").unwrap();
    assert_eq!(unsafe { aspre_session_open(c(cfg.to_str().unwrap()).as_ptr(), &mut s) }, AspreStatus::Schema);

    let mut p = AsprePrediction::default();
    let st = unsafe { aspre_session_predict(ptr::null(), c("u").as_ptr(), c("t").as_ptr(), &mut p) };
    assert_eq!(st, AspreStatus::InvalidArgument);

    unsafe {
        aspre_session_free(ptr::null_mut());
        aspre_store_free(ptr::null_mut());
        aspre_string_free(ptr::null_mut());
    }
}

#[test]
fn store_handle() {
    let (dir, _config) = trained_sample();
    let emb = dir.path().join("out/embeddings");
    let mut store = ptr::null_mut();
    assert_eq!(unsafe { aspre_store_open(c(emb.to_str().unwrap()).as_ptr(), &mut store) }, AspreStatus::Ok);
    let (mut n, mut checked, mut rows, mut dim) = (0usize, 0usize, 0usize, 0usize);
    unsafe {
        assert_eq!(aspre_store_len(store, &mut n), AspreStatus::Ok);
        assert_eq!(aspre_store_verify(store, 1e-5, &mut checked), AspreStatus::Ok);
        let text = fs::read_to_string(dir.path().join("reviews.jsonl")).unwrap();
        let rec: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let id = c(rec["review_id"].as_str().unwrap());
        assert_eq!(aspre_store_shape(store, id.as_ptr(), &mut rows, &mut dim), AspreStatus::Ok);
        let words = rec["text"].as_str().unwrap().split_whitespace().count();
        assert_eq!((rows, dim), (words + 2, 32));
        assert_eq!(
            aspre_store_shape(store, c("missing-review").as_ptr(), &mut rows, &mut dim),
            AspreStatus::Inconsistent
        );
        aspre_store_free(store);
    }
    assert_eq!(n, checked);
    assert!(n > 0);

    let empty = tempfile::tempdir().unwrap();
    let mut none = ptr::null_mut();
    let st = unsafe { aspre_store_open(c(empty.path().to_str().unwrap()).as_ptr(), &mut none) };
    assert_eq!(st, AspreStatus::MissingInput);
    assert!(none.is_null());
}

/// Directory holding the shared library built alongside this test binary.
fn library_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?.to_path_buf();
    let up = deps.parent()?.to_path_buf();
    [deps, up]
        .into_iter()
        .find(|d| d.join("libaspre_ffi.so").exists() || d.join("libaspre_ffi.dylib").exists())
}

#[test]
fn c_program_links_against_the_header() {
    let lib = library_dir().expect("shared library next to the test binary");
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let build = tempfile::tempdir().unwrap();
    let exe = build.path().join("smoke");
    let status = Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-L")
        .arg(&lib)
        .arg(format!("-Wl,-rpath,{}", lib.display()))
        .args(["-laspre_ffi", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler runs");
    assert!(status.success());

    let (dir, config) = trained_sample();
    let (user, item) = first_pair(dir.path());
    let out = Command::new(&exe).arg(&config).arg(&user).arg(&item).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8(out.stdout).unwrap();
    let direct = Session::open(RunConfig::load(&config).unwrap()).unwrap().predict(&user, &item).unwrap();
    let field = |name: &str| -> String {
        line.split_whitespace()
            .find_map(|kv| kv.strip_prefix(&format!("{name}=")))
            .unwrap_or_else(|| panic!("{name} missing in {line}"))
            .to_owned()
    };
    assert_eq!(field("s_hat").parse::<f64>().unwrap(), direct.s_hat);
    assert_eq!(field("version"), env!("CARGO_PKG_VERSION"));
    assert_eq!(field("table"), "1");
    assert_eq!(field("null_rejected"), "1");
}
