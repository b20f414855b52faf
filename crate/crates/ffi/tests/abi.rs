use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use pvminer_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_owned();
    pv_string_free(s);
    out
}

fn last_error() -> String {
    let p = pv_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

fn default_cb() -> *mut PvCodebook {
    let mut cb = ptr::null_mut();
    assert_eq!(unsafe { pv_codebook_default(&mut cb) }, PvStatus::Ok);
    assert!(!cb.is_null());
    cb
}

const MESSAGE: &str = "Hi Dr. Lee, I lost my job and cannot afford the copay.";

#[test]
fn codebook_queries() {
    let cb = default_cb();
    unsafe {
        let mut n = 0usize;
        assert_eq!(pv_codebook_code_count(cb, &mut n), PvStatus::Ok);
        assert_eq!(n, 8);

        let mut ok = false;
        assert_eq!(pv_codebook_is_valid_pair(cb, c("SDOH").as_ptr(), c("EconomicStability").as_ptr(), &mut ok), PvStatus::Ok);
        assert!(ok);
        assert_eq!(pv_codebook_is_valid_pair(cb, c("SDOH").as_ptr(), c("salutation").as_ptr(), &mut ok), PvStatus::Ok);
        assert!(!ok);

        assert_eq!(
            pv_codebook_is_direction_consistent(cb, c("PartnershipPatient").as_ptr(), c("N").as_ptr(), &mut ok),
            PvStatus::Ok
        );
        assert!(ok);
        assert_eq!(
            pv_codebook_is_direction_consistent(cb, c("PartnershipPatient").as_ptr(), c("Y").as_ptr(), &mut ok),
            PvStatus::Ok
        );
        assert!(!ok);
        assert_eq!(
            pv_codebook_is_direction_consistent(cb, c("SDOH").as_ptr(), c("sideways").as_ptr(), &mut ok),
            PvStatus::InvalidArgument
        );
        assert!(last_error().contains("direction"));
        pv_codebook_free(cb);
    }
}

#[test]
fn toml_round_trip_and_load_errors() {
    let cb = default_cb();
    unsafe {
        let mut toml = ptr::null_mut();
        assert_eq!(pv_codebook_to_toml(cb, &mut toml), PvStatus::Ok);
        let source = c(&take(toml));
        let mut again = ptr::null_mut();
        assert_eq!(pv_codebook_from_toml(source.as_ptr(), &mut again), PvStatus::Ok);
        let mut n = 0usize;
        pv_codebook_code_count(again, &mut n);
        assert_eq!(n, 8);
        pv_codebook_free(again);

        let mut bad = ptr::null_mut();
        assert_eq!(pv_codebook_from_toml(c("not = [toml").as_ptr(), &mut bad), PvStatus::InvalidCodebook);
        assert!(bad.is_null());
        assert_eq!(pv_codebook_load(c("/nonexistent/codebook.toml").as_ptr(), &mut bad), PvStatus::Io);
        assert!(!last_error().is_empty());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cb.toml");
        std::fs::write(&path, source.to_str().unwrap()).unwrap();
        assert_eq!(pv_codebook_load(c(path.to_str().unwrap()).as_ptr(), &mut bad), PvStatus::Ok);
        pv_codebook_free(bad);
        pv_codebook_free(cb);
    }
}

#[test]
fn null_and_utf8_arguments_are_rejected() {
    let cb = default_cb();
    unsafe {
        assert_eq!(pv_codebook_default(ptr::null_mut()), PvStatus::NullArgument);
        let mut ok = false;
        assert_eq!(pv_codebook_is_valid_pair(ptr::null(), c("SDOH").as_ptr(), c("None").as_ptr(), &mut ok), PvStatus::NullArgument);
        assert_eq!(pv_codebook_is_valid_pair(cb, ptr::null(), c("None").as_ptr(), &mut ok), PvStatus::NullArgument);
        assert!(last_error().contains("code"));
        let invalid = [0xffu8 as c_char, 0];
        assert_eq!(pv_codebook_is_valid_pair(cb, invalid.as_ptr(), c("None").as_ptr(), &mut ok), PvStatus::InvalidUtf8);
        let mut n = 0usize;
        assert_eq!(pv_codebook_code_count(cb, &mut n), PvStatus::Ok);
        assert!(pv_last_error().is_null(), "success clears the error");
        pv_codebook_free(ptr::null_mut());
        pv_string_free(ptr::null_mut());
        pv_codebook_free(cb);
    }
}

#[test]
fn validate_and_canonicalize() {
    let cb = default_cb();
    let completion = r#"Sure: {"results":[{"Code":"SDOH","Sub-code":"EconomicStability","Span":"I lost my job"}]} JSON_END"#;
    unsafe {
        let mut json = ptr::null_mut();
        let status = pv_validate_completion(cb, c(completion).as_ptr(), c(MESSAGE).as_ptr(), c("N").as_ptr(), false, &mut json);
        assert_eq!(status, PvStatus::Ok);
        let report = take(json);
        assert!(report.contains("\"outcome\":\"Repaired\""), "{report}");
        assert!(report.contains("\"span_text\":\"I lost my job\""), "{report}");
        assert!(report.contains("\"start\":12"), "{report}");

        let mut canon = ptr::null_mut();
        assert_eq!(
            pv_canonicalize_completion(cb, c(completion).as_ptr(), c(MESSAGE).as_ptr(), c("N").as_ptr(), &mut canon),
            PvStatus::Ok
        );
        let canon = take(canon);
        assert!(canon.starts_with("{\"results\": ["), "{canon}");

        let mut json = ptr::null_mut();
        let status = pv_validate_completion(cb, c(&canon).as_ptr(), c(MESSAGE).as_ptr(), c("N").as_ptr(), true, &mut json);
        assert_eq!(status, PvStatus::Ok);
        assert!(take(json).contains("\"outcome\":\"Valid\""));

        let mut json = ptr::null_mut();
        pv_validate_completion(cb, c("no json here").as_ptr(), c(MESSAGE).as_ptr(), c("N").as_ptr(), false, &mut json);
        let failed = take(json);
        assert!(failed.contains("\"outcome\":\"Failed\"") && failed.contains("\"failure_class\""), "{failed}");
        pv_codebook_free(cb);
    }
}

#[test]
fn render_prompt_matches_library() {
    let cb = default_cb();
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(
            pv_render_prompt(cb, c("engineered").as_ptr(), c(MESSAGE).as_ptr(), c("N").as_ptr(), &mut out),
            PvStatus::Ok
        );
        let rendered = take(out);
        let m = pvminer::Message::new("", MESSAGE, pvminer::Direction::N);
        let expected = pvminer::prompt::render_prompt(
            &pvminer::prompt::PromptTemplate::builtin(pvminer::prompt::TemplateKind::Engineered),
            &pvminer::Codebook::default_pvminer(),
            &m,
            &[],
        );
        assert_eq!(rendered, expected);

        let mut out = ptr::null_mut();
        assert_eq!(
            pv_render_prompt(cb, c("fancy").as_ptr(), c(MESSAGE).as_ptr(), c("N").as_ptr(), &mut out),
            PvStatus::InvalidArgument
        );
        assert!(out.is_null());
        pv_codebook_free(cb);
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pvminer.h")
}

#[test]
fn header_declares_every_entry_point() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in [
        "pv_last_error",
        "pv_string_free",
        "pv_codebook_default",
        "pv_codebook_load",
        "pv_codebook_from_toml",
        "pv_codebook_free",
        "pv_codebook_code_count",
        "pv_codebook_to_toml",
        "pv_codebook_is_valid_pair",
        "pv_codebook_is_direction_consistent",
        "pv_validate_completion",
        "pv_canonicalize_completion",
        "pv_render_prompt",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(h.contains("typedef struct PvCodebook PvCodebook;"));
    assert!(h.contains("PV_STATUS_INVALID_CODEBOOK = 5"));
}

#[test]
fn header_compiles_and_links_from_c() {
    let out = tempfile::tempdir().unwrap();
    let src = out.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "pvminer.h"
int main(void) {
    PvCodebook *cb = NULL;
    if (pv_codebook_default(&cb) != PV_STATUS_OK) return 1;
    bool ok = false;
    if (pv_codebook_is_valid_pair(cb, "SocioEmotionalBehaviour", "None", &ok) != PV_STATUS_OK || !ok) return 2;
    char *json = NULL;
    if (pv_validate_completion(cb, "{\"results\": []}", "Thanks!", "N", true, &json) != PV_STATUS_OK) return 3;
    int valid = strstr(json, "\"Valid\"") != NULL;
    pv_string_free(json);
    if (pv_codebook_load("/nonexistent.toml", &cb) != PV_STATUS_IO || pv_last_error() == NULL) return 4;
    pv_codebook_free(cb);
    puts("ok");
    return valid ? 0 : 5;
}
"#,
    )
    .unwrap();

    let include = header().parent().unwrap().to_path_buf();
    let syntax = Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg("-I").arg(&include).arg(&src).status();
    let syntax = syntax.expect("a C compiler named cc is required for this test");
    assert!(syntax.success(), "header does not compile as C");

    // Link against the static library cargo produced alongside this test binary.
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib = deps.parent().unwrap().join("libpvminer_ffi.a");
    let lib = if lib.exists() { lib } else { deps.join("libpvminer_ffi.a") };
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let exe = out.path().join("smoke");
    let status = Command::new("cc")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "link failed");
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "smoke exited {:?}: {}", run.status, String::from_utf8_lossy(&run.stdout));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
