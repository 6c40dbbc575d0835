use std::ffi::{CStr, CString};
use std::ptr;

use pdenet_ffi::*;

const BURGERS: &str =
    r#"{"pde": {"system": {"kind": "burgers", "nu": 0.05}, "fine_n": 64, "coarse_n": 16}}"#;

fn exact(config: &str) -> *mut PdenetModel {
    let cfg = CString::new(config).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { pdenet_model_exact(cfg.as_ptr(), &mut m) },
        PdenetStatus::Ok
    );
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = pdenet_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn wave(n: usize, amp: f64) -> Vec<f64> {
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let mut v = Vec::with_capacity(2 * n * n);
    for c in 0..2 {
        for ix in 0..n {
            for iy in 0..n {
                let (x, y) = (ix as f64 * h, iy as f64 * h);
                v.push(
                    amp * if c == 0 {
                        x.sin() * y.cos()
                    } else {
                        (x + 2.0 * y).cos()
                    },
                );
            }
        }
    }
    v
}

#[test]
fn shape_and_step_size() {
    let m = exact(BURGERS);
    let (mut c, mut nx, mut ny, mut dt) = (0, 0, 0, 0.0);
    unsafe {
        assert_eq!(
            pdenet_model_shape(m, &mut c, &mut nx, &mut ny),
            PdenetStatus::Ok
        );
        assert_eq!(pdenet_model_dt(m, &mut dt), PdenetStatus::Ok);
        pdenet_model_free(m);
    }
    assert_eq!((c, nx, ny), (2, 16, 16));
    assert_eq!(dt, 0.01);
}

#[test]
fn constant_state_is_a_fixed_point() {
    let m = exact(BURGERS);
    let input = vec![0.7; 2 * 256];
    let mut out = vec![0.0; input.len()];
    let status = unsafe { pdenet_model_step(m, input.as_ptr(), out.as_mut_ptr(), input.len()) };
    unsafe { pdenet_model_free(m) };
    assert_eq!(status, PdenetStatus::Ok);
    for v in out {
        assert!((v - 0.7).abs() < 1e-14);
    }
}

#[test]
fn rollout_equals_repeated_steps() {
    let m = exact(BURGERS);
    let u0 = wave(16, 1.0);
    let len = u0.len();
    let mut roll = vec![0.0; 3 * len];
    let mut cur = u0.clone();
    unsafe {
        assert_eq!(
            pdenet_model_rollout(m, u0.as_ptr(), len, 3, roll.as_mut_ptr()),
            PdenetStatus::Ok
        );
        for k in 0..3 {
            let mut next = vec![0.0; len];
            assert_eq!(
                pdenet_model_step(m, cur.as_ptr(), next.as_mut_ptr(), len),
                PdenetStatus::Ok
            );
            assert_eq!(&roll[k * len..(k + 1) * len], &next[..]);
            cur = next;
        }
        pdenet_model_free(m);
    }
}

#[test]
fn divergent_rollout_reports_and_pads_with_nan() {
    let m = exact(BURGERS);
    let u0 = wave(16, 1e200);
    let len = u0.len();
    let mut out = vec![0.0; 4 * len];
    let status = unsafe { pdenet_model_rollout(m, u0.as_ptr(), len, 4, out.as_mut_ptr()) };
    unsafe { pdenet_model_free(m) };
    assert_eq!(status, PdenetStatus::Divergence);
    assert!(last_error().contains("divergence"));
    assert!(out[3 * len..].iter().all(|v| v.is_nan()));
}

#[test]
fn equation_names_the_true_terms() {
    let m = exact(BURGERS);
    let mut s = ptr::null_mut();
    let status = unsafe { pdenet_model_equation(m, 0, 1e-3, &mut s) };
    assert_eq!(status, PdenetStatus::Ok);
    let eq = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe {
        pdenet_string_free(s);
        assert_eq!(
            pdenet_model_equation(m, 2, 1e-3, &mut s),
            PdenetStatus::InvalidArgument
        );
        pdenet_model_free(m);
    }
    assert!(eq.starts_with("u_t = "), "{eq}");
    assert!(
        eq.contains("1.0000*u*u_x") && eq.contains("0.0500*u_xx"),
        "{eq}"
    );
}

#[test]
fn json_checkpoint_round_trip() {
    use pdenet::config::ExperimentConfig;
    use pdenet::report::exact_model;
    let cfg = ExperimentConfig::from_json(BURGERS).unwrap();
    let spec = cfg.spec();
    let model = exact_model(
        &spec,
        &cfg.train
            .model_spec(spec.system.components(), spec.snapshot_dt),
    )
    .unwrap();
    let json = CString::new(serde_json::to_string(&model.to_record()).unwrap()).unwrap();
    let mut loaded = ptr::null_mut();
    assert_eq!(
        unsafe { pdenet_model_from_json(json.as_ptr(), &mut loaded) },
        PdenetStatus::Ok
    );
    let reference = exact(BURGERS);
    let u0 = wave(16, 0.5);
    let (mut a, mut b) = (vec![0.0; u0.len()], vec![0.0; u0.len()]);
    unsafe {
        pdenet_model_step(loaded, u0.as_ptr(), a.as_mut_ptr(), u0.len());
        pdenet_model_step(reference, u0.as_ptr(), b.as_mut_ptr(), u0.len());
        pdenet_model_free(loaded);
        pdenet_model_free(reference);
    }
    assert_eq!(a, b);
}

#[test]
fn bad_arguments_map_to_status_codes() {
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(
            pdenet_model_load(ptr::null(), &mut m),
            PdenetStatus::NullPointer
        );
        let missing = CString::new("/nonexistent/model.json").unwrap();
        assert_eq!(
            pdenet_model_load(missing.as_ptr(), &mut m),
            PdenetStatus::Io
        );
        let garbage = CString::new("{not json").unwrap();
        assert_eq!(
            pdenet_model_from_json(garbage.as_ptr(), &mut m),
            PdenetStatus::Parse
        );
        let no_nu = CString::new(r#"{"pde": {"system": {"kind": "burgers"}}}"#).unwrap();
        assert_eq!(
            pdenet_model_exact(no_nu.as_ptr(), &mut m),
            PdenetStatus::Config
        );
        assert!(last_error().contains("nu"));
        assert!(m.is_null());

        let model = exact(BURGERS);
        let short = vec![0.0; 10];
        let mut out = vec![0.0; 10];
        assert_eq!(
            pdenet_model_step(model, short.as_ptr(), out.as_mut_ptr(), 10),
            PdenetStatus::Shape
        );
        assert_eq!(
            pdenet_model_step(ptr::null(), short.as_ptr(), out.as_mut_ptr(), 10),
            PdenetStatus::NullPointer
        );
        pdenet_model_free(model);
        pdenet_model_free(ptr::null_mut());
    }
}

#[test]
fn relative_error_matches_definition() {
    let truth: Vec<f64> = (0..16).map(|i| i as f64).collect();
    let pred: Vec<f64> = truth.iter().map(|v| v + 1.0).collect();
    let mean = 7.5;
    let expected = 16.0 / truth.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let mut e = 0.0;
    unsafe {
        assert_eq!(
            pdenet_relative_error(truth.as_ptr(), pred.as_ptr(), 1, 4, 4, &mut e),
            PdenetStatus::Ok
        );
        assert!((e - expected).abs() < 1e-14);
        let flat = vec![1.0; 16];
        assert_eq!(
            pdenet_relative_error(flat.as_ptr(), pred.as_ptr(), 1, 4, 4, &mut e),
            PdenetStatus::Degenerate
        );
    }
}

#[test]
fn simulate_fills_the_trajectory() {
    let cfg = CString::new(BURGERS).unwrap();
    let len = 3 * 2 * 256;
    let mut out = vec![f64::NAN; len];
    unsafe {
        assert_eq!(
            pdenet_simulate(cfg.as_ptr(), 4, 2, out.as_mut_ptr(), len),
            PdenetStatus::Ok
        );
        assert!(out.iter().all(|v| v.is_finite()));
        let mut again = vec![0.0; len];
        pdenet_simulate(cfg.as_ptr(), 4, 2, again.as_mut_ptr(), len);
        assert_eq!(out, again);
        assert_eq!(
            pdenet_simulate(cfg.as_ptr(), 4, 2, out.as_mut_ptr(), len - 1),
            PdenetStatus::Shape
        );
    }
}
