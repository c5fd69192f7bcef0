use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use rla_core::ballots::CardManifest;
use rla_core::engine::{save_state, AuditConfig, AuditState};
use rla_core::nonneg_mean::{TestKind, TestState};
use rla_core::rational::{self, half, ratio};
use rla_ffi::*;

fn last_error() -> Option<String> {
    let m = rla_last_error_message();
    if m.is_null() {
        return None;
    }
    let s = unsafe { CStr::from_ptr(m) }.to_str().unwrap().to_string();
    unsafe { rla_string_free(m) };
    Some(s)
}

#[test]
fn single_draw_closed_forms() {
    let mut p = 0.0;
    unsafe {
        assert_eq!(rla_kk_pvalue([1.0].as_ptr(), 1, 0, 0.5, 0.0, &mut p), RlaStatus::Ok);
        assert_eq!(p, 0.5);
        assert_eq!(rla_km_pvalue([1.0].as_ptr(), 1, 0, 0.5, &mut p), RlaStatus::Ok);
    }
    assert!((p - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(last_error(), None);
}

#[test]
fn one_shot_and_handle_match_the_exact_engine() {
    let xs: Vec<f64> = (0..60).map(|i| [1.0, 0.5, 1.0, 0.0, 0.75][i % 5]).collect();
    for (kind, shift) in [(RlaTestKind::Kk, 0.125), (RlaTestKind::Km, 0.0)] {
        let core_kind = match kind {
            RlaTestKind::Kk => TestKind::kk(ratio(1, 8)),
            RlaTestKind::Km => TestKind::KaplanMartingale,
        };
        let mut exact = TestState::new(core_kind, Some(200), half()).unwrap();
        let mut handle = ptr::null_mut();
        unsafe {
            assert_eq!(rla_test_new(kind, shift, 200, 0.5, &mut handle), RlaStatus::Ok);
            for x in &xs {
                exact.push(rational::from_f64(*x).unwrap()).unwrap();
                assert_eq!(rla_test_push(handle, *x), RlaStatus::Ok);
                let mut p = 0.0;
                assert_eq!(rla_test_pvalue(handle, &mut p), RlaStatus::Ok);
                assert!((p - rational::to_f64(&exact.p_value_exact().unwrap())).abs() < 1e-9);
            }
            assert_eq!(rla_test_draws(handle), 60);
            let mut stepwise = 0.0;
            rla_test_pvalue(handle, &mut stepwise);
            rla_test_free(handle);

            let mut batch = 0.0;
            let status = match kind {
                RlaTestKind::Kk => rla_kk_pvalue(xs.as_ptr(), xs.len(), 200, 0.5, shift, &mut batch),
                RlaTestKind::Km => rla_km_pvalue(xs.as_ptr(), xs.len(), 200, 0.5, &mut batch),
            };
            assert_eq!(status, RlaStatus::Ok);
            assert_eq!(batch, stepwise);
        }
    }
}

#[test]
fn bad_arguments_report_status_and_message() {
    let mut p = 0.0;
    unsafe {
        assert_eq!(rla_kk_pvalue(ptr::null(), 3, 0, 0.5, 0.0, &mut p), RlaStatus::NullPointer);
        assert!(last_error().unwrap().contains("values"));
        assert_eq!(rla_kk_pvalue([0.5].as_ptr(), 1, 0, 0.5, 0.0, ptr::null_mut()), RlaStatus::NullPointer);
        assert_eq!(rla_km_pvalue([-1.0].as_ptr(), 1, 0, 0.5, &mut p), RlaStatus::InvalidArgument);
        assert_eq!(rla_km_pvalue([f64::NAN].as_ptr(), 1, 0, 0.5, &mut p), RlaStatus::InvalidArgument);
        assert_eq!(rla_km_pvalue([0.5].as_ptr(), 1, 0, 0.0, &mut p), RlaStatus::InvalidArgument);
        assert_eq!(rla_kk_pvalue([0.5].as_ptr(), 1, 0, 0.5, -0.1, &mut p), RlaStatus::InvalidArgument);
        assert_eq!(rla_km_pvalue([1.0, 1.0, 1.0].as_ptr(), 3, 2, 0.5, &mut p), RlaStatus::InvalidArgument);
        assert!(last_error().unwrap().contains("population"));

        // success clears the message; an empty sample has p = 1
        assert_eq!(rla_km_pvalue(ptr::null(), 0, 10, 0.5, &mut p), RlaStatus::Ok);
        assert_eq!(p, 1.0);
        assert_eq!(last_error(), None);

        assert_eq!(rla_test_push(ptr::null_mut(), 1.0), RlaStatus::NullPointer);
        assert_eq!(rla_test_pvalue(ptr::null(), &mut p), RlaStatus::NullPointer);
        assert_eq!(rla_test_draws(ptr::null()), 0);
        rla_test_free(ptr::null_mut());
        rla_audit_free(ptr::null_mut());
        rla_string_free(ptr::null_mut());
    }
}

const CONFIG: &str = r#"{
    "risk_limit": "1/20",
    "seed": "12345",
    "test": {"kind": "KM"},
    "contests": [{
        "contest_id": "mayor", "social_choice": "PLURALITY",
        "candidates": ["Alice", "Bob"], "n_winners": 1,
        "reported_winners": ["Alice"], "upper_bound_cards": 4,
        "method": "COMPARISON"
    }]
}"#;

#[test]
fn audit_handle_reads_a_saved_state() {
    let cvrs = (0..4)
        .map(|i| {
            format!(
                r#"{{"id": "C{i}", "contests": {{"mayor": {{"marks": ["{}"]}}}}}}"#,
                if i < 3 { "Alice" } else { "Bob" }
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let manifest =
        CardManifest::from_csv("location_id,cvr_id,styles\nL0,C0,\nL1,C1,\nL2,C2,\nL3,C3,\n".as_bytes()).unwrap();
    let state = AuditState::init(AuditConfig::from_json(CONFIG).unwrap(), cvrs.as_bytes(), manifest).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.json");
    save_state(&state, &path).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut audit = ptr::null_mut();
    unsafe {
        assert_eq!(rla_audit_open(c_path.as_ptr(), &mut audit), RlaStatus::Ok);
        let mut decision = RlaDecision::Certified;
        assert_eq!(rla_audit_decision(audit, &mut decision), RlaStatus::Ok);
        assert_eq!(decision, RlaDecision::InProgress);
        let mut json = ptr::null_mut();
        assert_eq!(rla_audit_status_json(audit, &mut json), RlaStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_string();
        rla_string_free(json);
        rla_audit_free(audit);
        assert!(text.contains(r#""decision": "IN_PROGRESS""#), "{text}");
        assert!(text.contains("mayor:Alice>Bob"), "{text}");

        let missing = CString::new(dir.path().join("none.json").to_str().unwrap()).unwrap();
        let mut other = ptr::null_mut();
        assert_eq!(rla_audit_open(missing.as_ptr(), &mut other), RlaStatus::IoError);
        assert!(other.is_null());
        assert_eq!(rla_audit_open(ptr::null(), &mut other), RlaStatus::NullPointer);
    }
}

#[test]
fn generated_header_compiles_as_c() {
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let header = std::fs::read_to_string(format!("{include}/rla.h")).unwrap();
    for name in ["rla_kk_pvalue", "rla_test_new", "rla_audit_status_json", "rla_last_error_message"] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".to_string());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "rla.h"
int main(void) {
    double xs[1] = {1.0}, p = 0.0;
    RlaTest *t = NULL;
    RlaStatus s = rla_kk_pvalue(xs, 1, 0, 0.5, 0.0, &p);
    if (s == RLA_STATUS_OK && rla_test_new(RLA_TEST_KIND_KM, 0.0, 10, 0.5, &t) == RLA_STATUS_OK) {
        rla_test_push(t, 1.0);
        rla_test_free(t);
    }
    rla_string_free(rla_last_error_message());
    return (int)s;
}
"#,
    )
    .unwrap();
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
