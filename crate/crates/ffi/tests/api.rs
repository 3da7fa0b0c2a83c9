use std::ffi::{c_char, CStr, CString};
use std::ptr;

use jumpsde_ffi::*;

const SMALL: &str = r#"
seed = 3
paths = 400
checkpoints = [16, 32, 64, 128]
x0 = [0.5]

[model]
preset = "additive-linear(1, 0.5, 4, 1)"

[steps]
kind = "harmonic"
scale = 8.0
cap = 0.5

[reference]
burn_in = 6.0
"#;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { jsde_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn config(text: &str) -> *mut JsdeConfig {
    let text = CString::new(text).unwrap();
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { jsde_config_parse(text.as_ptr(), &mut c) }, JsdeStatus::Ok);
    c
}

#[test]
fn model_queries() {
    let preset = CString::new("additive-linear(1, 0.5, 4, 1)").unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(jsde_model_new(preset.as_ptr(), &mut m), JsdeStatus::Ok);
        let mut d = 0;
        assert_eq!(jsde_model_dim(m, &mut d), JsdeStatus::Ok);
        assert_eq!(d, 1);
        let mut theta = 0.0;
        assert_eq!(jsde_model_theta(m, &mut theta), JsdeStatus::Ok);
        assert!(theta > 0.0);
        let mut level = 0;
        assert_eq!(jsde_model_truncation_level(m, 0.1, &mut level), JsdeStatus::Ok);
        let mut eps = 0.0;
        assert_eq!(jsde_model_epsilon(m, level, &mut eps), JsdeStatus::Ok);
        assert!(eps <= 0.01);
        if level > 1 {
            assert_eq!(jsde_model_epsilon(m, level - 1, &mut eps), JsdeStatus::Ok);
            assert!(eps > 0.01);
        }
        assert_eq!(jsde_model_truncation_level(m, -1.0, &mut level), JsdeStatus::InvalidArgument);
        jsde_model_free(m);
    }
}

#[test]
fn bad_preset_reports_message() {
    let preset = CString::new("no-such-preset(1)").unwrap();
    let mut m = ptr::null_mut();
    let s = unsafe { jsde_model_new(preset.as_ptr(), &mut m) };
    assert_ne!(s, JsdeStatus::Ok);
    assert!(m.is_null());
    assert!(last_error().contains("no-such-preset"), "{}", last_error());
}

#[test]
fn null_pointers_are_rejected() {
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(jsde_model_new(ptr::null(), &mut m), JsdeStatus::NullPointer);
        assert_eq!(jsde_model_dim(ptr::null(), ptr::null_mut()), JsdeStatus::NullPointer);
        jsde_model_free(ptr::null_mut());
        jsde_config_free(ptr::null_mut());
        jsde_convergence_free(ptr::null_mut());
        jsde_string_free(ptr::null_mut());
    }
    assert!(last_error().contains("null"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let text = CString::new(format!("{SMALL}\nbogus = 1\n")).unwrap();
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { jsde_config_parse(text.as_ptr(), &mut c) }, JsdeStatus::Config);
    assert!(last_error().contains("bogus"));
}

#[test]
fn missing_config_file() {
    let path = CString::new("/nonexistent/experiment.toml").unwrap();
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { jsde_config_load(path.as_ptr(), &mut c) }, JsdeStatus::Config);
    assert!(last_error().contains("/nonexistent/experiment.toml"));
}

#[test]
fn simulate_fills_buffer_deterministically() {
    let c = config(SMALL);
    unsafe {
        let (mut paths, mut dim) = (0, 0);
        assert_eq!(jsde_config_shape(c, &mut paths, &mut dim), JsdeStatus::Ok);
        assert_eq!((paths, dim), (400, 1));
        let mut short = vec![0.0; 10];
        assert_eq!(jsde_simulate(c, 1, short.as_mut_ptr(), short.len()), JsdeStatus::BufferTooSmall);
        let mut a = vec![f64::NAN; paths * dim];
        let mut b = vec![f64::NAN; paths * dim];
        assert_eq!(jsde_simulate(c, 1, a.as_mut_ptr(), a.len()), JsdeStatus::Ok);
        assert_eq!(jsde_simulate(c, 4, b.as_mut_ptr(), b.len()), JsdeStatus::Ok);
        assert!(a.iter().all(|x| x.is_finite()));
        assert_eq!(a, b);
        assert_eq!(jsde_config_set_seed(c, 4), JsdeStatus::Ok);
        assert_eq!(jsde_simulate(c, 1, b.as_mut_ptr(), b.len()), JsdeStatus::Ok);
        assert_ne!(a, b);
        assert_eq!(jsde_config_set_paths(c, 0), JsdeStatus::Config);
        assert_eq!(jsde_config_shape(c, &mut paths, &mut dim), JsdeStatus::Ok);
        assert_eq!(paths, 400);
        jsde_config_free(c);
    }
}

#[test]
fn convergence_round_trip() {
    let c = config(SMALL);
    let mut run = ptr::null_mut();
    unsafe {
        assert_eq!(jsde_converge(c, 1, &mut run), JsdeStatus::Ok);
        let mut rows = 0;
        assert_eq!(jsde_convergence_rows(run, &mut rows), JsdeStatus::Ok);
        assert_eq!(rows, 4);
        let (mut s, mut lo, mut hi) = (0.0, 0.0, 0.0);
        let st = jsde_convergence_slope(run, JsdeDistance::W1 as u32, &mut s, &mut lo, &mut hi);
        if st == JsdeStatus::Ok {
            assert!(lo <= s && s <= hi);
        } else {
            assert_eq!(st, JsdeStatus::NoFit);
        }
        assert_eq!(
            jsde_convergence_slope(run, 7, &mut s, &mut lo, &mut hi),
            JsdeStatus::InvalidArgument
        );

        let mut json = ptr::null_mut();
        assert_eq!(jsde_convergence_json(run, &mut json), JsdeStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        jsde_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 4);

        let dir = tempfile::tempdir().unwrap();
        let d = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(jsde_convergence_write(run, d.as_ptr()), JsdeStatus::Ok);
        for f in ["report.json", "rows.csv", "reference.csv", "seeds.csv"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        jsde_convergence_free(run);
        jsde_config_free(c);
    }
}

#[test]
fn w1_and_rate_fit() {
    let a = [0.0, 1.0, 2.0];
    let b = [0.5, 1.5, 2.5];
    let mut out = 0.0;
    unsafe {
        assert_eq!(jsde_w1_1d(a.as_ptr(), 3, b.as_ptr(), 3, &mut out), JsdeStatus::Ok);
        assert!((out - 0.5).abs() < 1e-15);
        assert_ne!(jsde_w1_1d(a.as_ptr(), 0, b.as_ptr(), 3, &mut out), JsdeStatus::Ok);

        let g = [0.1, 0.05, 0.025, 0.0125];
        let d: Vec<f64> = g.iter().map(|x| 3.0 * x * x).collect();
        let (mut s, mut lo, mut hi) = (0.0, 0.0, 0.0);
        let st = jsde_rate_fit(g.as_ptr(), d.as_ptr(), ptr::null(), 4, &mut s, &mut lo, &mut hi);
        assert_eq!(st, JsdeStatus::Ok);
        assert!((s - 2.0).abs() < 1e-10);
        let st = jsde_rate_fit(g.as_ptr(), d.as_ptr(), ptr::null(), 2, &mut s, &mut lo, &mut hi);
        assert_eq!(st, JsdeStatus::InsufficientData);
    }
}
