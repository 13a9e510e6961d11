use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use icl_dst_ffi::*;

fn fixture(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name);
    std::fs::read_to_string(p).unwrap()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

/// Takes ownership of a returned string.
unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    icl_string_free(p);
    s
}

fn last_error() -> String {
    let p = icl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn schema() -> *mut IclSchema {
    let mut out = ptr::null_mut();
    let json = c(&fixture("schema.json"));
    assert_eq!(unsafe { icl_schema_new(json.as_ptr(), &mut out) }, IclStatus::Ok);
    out
}

#[test]
fn parse_and_render() {
    let s = schema();
    unsafe {
        let mut out = ptr::null_mut();
        let text = c("state.restaurant = find_restaurant(area=state.hotel.area)");
        assert_eq!(icl_parse_completion(s, text.as_ptr(), &mut out), IclStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["parsed"]["updates"]["restaurant-area"]["ref"], "hotel-area");

        let bad = c("state.spa = update_spa(x=1)");
        assert_eq!(icl_parse_completion(s, bad.as_ptr(), &mut out), IclStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert!(v.get("rejected").is_some());

        let delta = c(r#"{"updates":{"hotel-stars":"4","hotel-area":"dontcare"},"removals":["hotel-name"]}"#);
        assert_eq!(icl_canonicalize_completion(delta.as_ptr(), &mut out), IclStatus::Ok);
        assert_eq!(
            take(out),
            r#"state.hotel = update_hotel(area="dontcare", name=None, stars="4")"#
        );
        icl_schema_free(s);
    }
}

#[test]
fn state_algebra_and_scores() {
    unsafe {
        let mut out = ptr::null_mut();
        let prev = c(r#"{"hotel-area":"east","hotel-stars":"4"}"#);
        let next = c(r#"{"hotel-area":"west"}"#);
        assert_eq!(icl_diff_states(prev.as_ptr(), next.as_ptr(), &mut out), IclStatus::Ok);
        let delta = c(&take(out));
        assert_eq!(icl_apply_state_change(prev.as_ptr(), delta.as_ptr(), &mut out), IclStatus::Ok);
        assert_eq!(take(out), r#"{"hotel-area":"west"}"#);

        let dangling = c(r#"{"updates":{"taxi-destination":{"ref":"hotel-name"}}}"#);
        assert_eq!(
            icl_apply_state_change(prev.as_ptr(), dangling.as_ptr(), &mut out),
            IclStatus::InvalidInput
        );
        assert!(last_error().contains("hotel-name"));

        let mut sim = 0.0;
        let a = c(r#"{"updates":{"hotel-area":"east"}}"#);
        let b = c(r#"{"updates":{"hotel-area":"west"}}"#);
        assert_eq!(icl_sim_f1(a.as_ptr(), b.as_ptr(), &mut sim), IclStatus::Ok);
        assert_eq!(sim, 0.5);

        let mut ratio = 0;
        let (x, y) = (c("abcd"), c("abce"));
        assert_eq!(icl_fuzzy_ratio(x.as_ptr(), y.as_ptr(), &mut ratio), IclStatus::Ok);
        assert_eq!(ratio, 75);
    }
    let s = icl_pmi_score(0.1f64.ln(), 0.01f64.ln(), 1.0);
    assert!((s - 10f64.ln()).abs() < 1e-12);
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut sim = 0.0;
        let ok = c("{}");
        assert_eq!(icl_sim_f1(ptr::null(), ok.as_ptr(), &mut sim), IclStatus::NullArgument);
        assert!(last_error().contains("a_json"));
        let broken = c("{");
        assert_eq!(icl_sim_f1(broken.as_ptr(), ok.as_ptr(), &mut sim), IclStatus::InvalidJson);
        assert_eq!(icl_sim_f1(ok.as_ptr(), ok.as_ptr(), ptr::null_mut()), IclStatus::NullArgument);
        assert_eq!(icl_sim_f1(ok.as_ptr(), ok.as_ptr(), &mut sim), IclStatus::Ok);
        assert!(icl_last_error().is_null());
        let bytes = [0xffu8, 0];
        let mut r = 0;
        assert_eq!(icl_fuzzy_ratio(bytes.as_ptr().cast(), ok.as_ptr(), &mut r), IclStatus::InvalidUtf8);
        icl_string_free(ptr::null_mut());
        icl_schema_free(ptr::null_mut());
    }
}

#[test]
fn normalizer_handle() {
    let s = schema();
    unsafe {
        let db = c(&fixture("database.json"));
        let ont = c(&fixture("ontology.json"));
        let mut map = ptr::null_mut();
        assert_eq!(
            icl_normalizer_new(s, db.as_ptr(), ont.as_ptr(), ptr::null(), 1, &mut map),
            IclStatus::Ok
        );
        let mut out = ptr::null_mut();
        let d = c(r#"{"updates":{"hotel-bookpeople":"two","hotel-name":"acorn gust house"}}"#);
        assert_eq!(icl_normalize_prediction(map, d.as_ptr(), &mut out), IclStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["updates"]["hotel-bookpeople"], "2");
        assert_eq!(v["updates"]["hotel-name"], "acorn guest house");
        assert_eq!(icl_normalizer_audit(map, &mut out), IclStatus::Ok);
        assert!(take(out).contains("\"ambiguities\":[]"));
        icl_normalizer_free(map);

        let db = c(&fixture("ambiguous/database.json"));
        let ont = c(&fixture("ambiguous/ontology.json"));
        let mut map = ptr::null_mut();
        assert_eq!(
            icl_normalizer_new(s, db.as_ptr(), ont.as_ptr(), ptr::null(), 1, &mut map),
            IclStatus::Ambiguous
        );
        assert!(map.is_null());
        assert_eq!(
            icl_normalizer_new(s, db.as_ptr(), ont.as_ptr(), ptr::null(), 0, &mut map),
            IclStatus::Ok
        );
        icl_normalizer_free(map);
        icl_schema_free(s);
    }
}

#[test]
fn index_handle() {
    let records = c(r#"[{"id":"a","vector":[1,0,0]},{"id":"b","vector":[0.9,0.1,0]},{"id":"c","vector":[0,1,0]}]"#);
    unsafe {
        let mut index = ptr::null_mut();
        assert_eq!(icl_index_new(records.as_ptr(), &mut index), IclStatus::Ok);
        let mut out = ptr::null_mut();
        let q = c("[1, 0.2, 0]");
        assert_eq!(icl_index_select(index, q.as_ptr(), 2, 0.0, 2, &mut out), IclStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        let ids: Vec<&str> = v["members"].as_array().unwrap().iter().map(|m| m["id"].as_str().unwrap()).collect();
        assert_eq!(ids, ["b", "a"]);

        assert_eq!(icl_index_select(index, q.as_ptr(), 2, 1.0, 3, &mut out), IclStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        let ids: Vec<&str> = v["members"].as_array().unwrap().iter().map(|m| m["id"].as_str().unwrap()).collect();
        assert_eq!(ids, ["b", "c"]);

        let short = c("[1, 0]");
        assert_eq!(icl_index_select(index, short.as_ptr(), 2, 0.0, 2, &mut out), IclStatus::InvalidInput);
        assert_eq!(icl_index_select(index, q.as_ptr(), 3, 0.5, 2, &mut out), IclStatus::InvalidInput);
        icl_index_free(index);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/icl_dst.h")).unwrap();
    for name in [
        "icl_last_error", "icl_version", "icl_string_free", "icl_schema_new", "icl_schema_free",
        "icl_parse_completion", "icl_canonicalize_completion", "icl_apply_state_change",
        "icl_diff_states", "icl_sim_f1", "icl_fuzzy_ratio", "icl_pmi_score", "icl_normalizer_new",
        "icl_normalizer_free", "icl_normalize_prediction", "icl_normalizer_audit", "icl_index_new",
        "icl_index_free", "icl_index_select", "ICL_STATUS_AMBIGUOUS",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

fn target_dir() -> PathBuf {
    // tests run from <target>/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let lib = target_dir().join("libicl_dst_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no static library or C compiler");
        return;
    }
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = tempfile_path("icl_smoke");
    let status = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
    let _ = std::fs::remove_file(exe);
}

fn tempfile_path(stem: &str) -> PathBuf {
    std::env::temp_dir().join(format!("{stem}-{}", std::process::id()))
}
