use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cvqst_ffi::*;

fn last_error() -> String {
    let p = cvqst_last_error_message();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

unsafe fn test_state(name: &str, param: f64, dim: usize) -> *mut CvqstState {
    let name = CString::new(name).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(cvqst_state_new_test(name.as_ptr(), param, dim, &mut s), CvqstStatus::Ok);
    s
}

unsafe fn heterodyne_design(cells: usize, alpha_max: f64, dim: usize) -> *mut CvqstDesign {
    let mut povm = ptr::null_mut();
    assert_eq!(cvqst_povm_heterodyne(cells, alpha_max, 0.0, dim, &mut povm), CvqstStatus::Ok);
    assert_eq!(cvqst_povm_len(povm), cells * cells);
    let mut design = ptr::null_mut();
    assert_eq!(cvqst_design_build(povm, &mut design), CvqstStatus::Ok);
    cvqst_povm_free(povm);
    design
}

#[test]
fn heterodyne_round_trip() {
    unsafe {
        let truth = test_state("cat", 1.5, 16);
        let design = heterodyne_design(21, 5.0, 16);
        let rows = cvqst_design_rows(design);
        assert_eq!(rows, 441);
        let mut probs = vec![0.0; rows];
        assert_eq!(cvqst_design_predict(design, truth, probs.as_mut_ptr(), rows), CvqstStatus::Ok);

        let mut result = ptr::null_mut();
        let st =
            cvqst_reconstruct(design, probs.as_ptr(), rows, CvqstDataKind::Probabilities, 0, ptr::null(), &mut result);
        assert_eq!(st, CvqstStatus::Ok);
        assert!(cvqst_result_converged(result));
        assert!(cvqst_result_iterations(result) > 0);
        assert!(cvqst_result_objective(result) >= 0.0);
        assert!(cvqst_result_solve_time(result) >= 0.0);

        let mut rho = ptr::null_mut();
        assert_eq!(cvqst_result_state(result, &mut rho), CvqstStatus::Ok);
        assert_eq!(cvqst_state_dim(rho), 16);
        let mut f = 0.0;
        assert_eq!(cvqst_fidelity(truth, rho, &mut f), CvqstStatus::Ok);
        assert!(f >= 0.999, "fidelity {f}");

        let json = cvqst_result_to_json(result);
        assert!(!json.is_null());
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        cvqst_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v.get("objective").is_some());

        cvqst_state_free(rho);
        cvqst_result_free(result);
        cvqst_design_free(design);
        cvqst_state_free(truth);
    }
}

#[test]
fn counts_with_custom_options() {
    unsafe {
        let truth = test_state("fock1", f64::NAN, 6);
        let design = heterodyne_design(15, 4.0, 6);
        let rows = cvqst_design_rows(design);
        let mut probs = vec![0.0; rows];
        assert_eq!(cvqst_design_predict(design, truth, probs.as_mut_ptr(), rows), CvqstStatus::Ok);
        let counts: Vec<f64> = probs.iter().map(|p| (p * 1e6).round()).collect();

        let mut opts = cvqst_solver_options_default();
        assert!(opts.max_iters > 0 && opts.polish);
        opts.max_iters = 3;
        opts.polish = false;
        let mut result = ptr::null_mut();
        let st = cvqst_reconstruct(design, counts.as_ptr(), rows, CvqstDataKind::Counts, 0, &opts, &mut result);
        assert_eq!(st, CvqstStatus::Ok);
        assert!(cvqst_result_iterations(result) <= 3);
        assert!(!cvqst_result_converged(result));
        cvqst_result_free(result);
        cvqst_design_free(design);
        cvqst_state_free(truth);
    }
}

#[test]
fn state_entries_round_trip() {
    unsafe {
        let s = test_state("squeezed", 0.3, 5);
        let (mut re, mut im) = (vec![0.0; 25], vec![0.0; 25]);
        assert_eq!(cvqst_state_entries(s, re.as_mut_ptr(), im.as_mut_ptr(), 25), CvqstStatus::Ok);
        let trace: f64 = (0..5).map(|i| re[i * 5 + i]).sum();
        assert!((trace - 1.0).abs() < 1e-12);

        let mut copy = ptr::null_mut();
        assert_eq!(cvqst_state_from_entries(5, re.as_ptr(), im.as_ptr(), &mut copy), CvqstStatus::Ok);
        let mut f = 0.0;
        assert_eq!(cvqst_fidelity(s, copy, &mut f), CvqstStatus::Ok);
        assert!((f - 1.0).abs() < 1e-9);

        assert_eq!(cvqst_state_entries(s, re.as_mut_ptr(), im.as_mut_ptr(), 24), CvqstStatus::BufferTooSmall);
        assert!(last_error().contains("need 25"));
        cvqst_state_free(copy);
        cvqst_state_free(s);
    }
}

#[test]
fn error_statuses() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(cvqst_state_new_test(ptr::null(), f64::NAN, 4, &mut s), CvqstStatus::NullPointer);
        assert!(last_error().contains("name"));
        assert!(s.is_null());

        let bad = CString::new("unicorn").unwrap();
        assert_eq!(cvqst_state_new_test(bad.as_ptr(), f64::NAN, 4, &mut s), CvqstStatus::InvalidArgument);
        assert!(s.is_null());

        let ok = test_state("vac02", f64::NAN, 4);
        assert!(cvqst_last_error_message().is_null());

        let other = test_state("vac02", f64::NAN, 5);
        let mut f = 0.0;
        assert_eq!(cvqst_fidelity(ok, other, &mut f), CvqstStatus::DimensionMismatch);
        assert_eq!(cvqst_fidelity(ok, ok, ptr::null_mut()), CvqstStatus::NullPointer);

        // Not positive semidefinite.
        let re = [2.0, 0.0, 0.0, -1.0];
        let im = [0.0; 4];
        assert_ne!(cvqst_state_from_entries(2, re.as_ptr(), im.as_ptr(), &mut s), CvqstStatus::Ok);
        let re = [0.5, 0.0, f64::NAN, 0.5];
        assert_ne!(cvqst_state_from_entries(2, re.as_ptr(), im.as_ptr(), &mut s), CvqstStatus::Ok);

        let mut povm = ptr::null_mut();
        assert_eq!(cvqst_povm_homodyne(4, 10, 4.0, 1.5, 6, &mut povm), CvqstStatus::InvalidArgument);
        assert!(povm.is_null());
        assert_eq!(cvqst_povm_wigner(0, 3.0, 6, &mut povm), CvqstStatus::InvalidArgument);

        let design = heterodyne_design(9, 3.0, 4);
        let mut out = vec![0.0; 80];
        assert_eq!(cvqst_design_predict(design, ok, out.as_mut_ptr(), 80), CvqstStatus::BufferTooSmall);
        assert_eq!(cvqst_design_predict(design, other, out.as_mut_ptr(), 81), CvqstStatus::DimensionMismatch);
        let mut result = ptr::null_mut();
        let short = [0.1; 10];
        let st =
            cvqst_reconstruct(design, short.as_ptr(), 10, CvqstDataKind::Probabilities, 0, ptr::null(), &mut result);
        assert_eq!(st, CvqstStatus::DimensionMismatch);
        assert!(result.is_null());

        assert_eq!(cvqst_state_dim(ptr::null()), 0);
        assert!(cvqst_result_objective(ptr::null()).is_nan());
        assert!(cvqst_result_to_json(ptr::null()).is_null());
        cvqst_state_free(ptr::null_mut());
        cvqst_result_free(ptr::null_mut());

        cvqst_design_free(design);
        cvqst_state_free(other);
        cvqst_state_free(ok);
    }
}

#[test]
fn errors_are_thread_local() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(cvqst_state_new_test(ptr::null(), 0.0, 4, &mut s), CvqstStatus::NullPointer);
    }
    let other = std::thread::spawn(|| cvqst_last_error_message().is_null()).join().unwrap();
    assert!(other);
    assert!(!cvqst_last_error_message().is_null());
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(cvqst_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cvqst.h");
    std::fs::read_to_string(path).expect("generated header")
}

#[test]
fn header_declares_the_api() {
    let h = header();
    for name in [
        "CVQST_STATUS_OK",
        "CVQST_STATUS_BUFFER_TOO_SMALL",
        "CVQST_DATA_KIND_COUNTS",
        "typedef struct CvqstState CvqstState",
        "CvqstSolverOptions",
        "cvqst_last_error_message",
        "cvqst_state_new_test",
        "cvqst_povm_homodyne",
        "cvqst_design_build",
        "cvqst_reconstruct",
        "cvqst_result_to_json",
        "cvqst_string_free",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"cvqst.h\"\n\
         int main(void) {\n\
           CvqstSolverOptions o = cvqst_solver_options_default();\n\
           CvqstState *s = 0;\n\
           CvqstStatus st = cvqst_state_new_test(\"cat\", 2.0, 32, &s);\n\
           cvqst_state_free(s);\n\
           return st == CVQST_STATUS_OK && o.polish ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
