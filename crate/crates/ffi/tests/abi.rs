use std::ffi::{CStr, CString};
use std::ptr;

use turbsr_ffi::*;

fn ramp(n: usize, f: impl Fn(usize, usize, usize) -> f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(n * n * n);
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                v.push(f(x, y, z));
            }
        }
    }
    v
}

fn create(n: usize) -> *mut TsrFlowState {
    let rho = ramp(n, |x, y, z| 1.0 + 0.01 * (x + 2 * y + 3 * z) as f64);
    let u = ramp(n, |x, _, _| (x as f64 * 0.3).sin());
    let v = ramp(n, |_, y, z| (y as f64 * 0.2).cos() + z as f64 * 0.1);
    let w = ramp(n, |x, y, _| 0.5 + (x * y) as f64 * 0.001);
    let mut out = ptr::null_mut();
    let st = unsafe {
        tsr_flow_state_create(n, n, n, 0.5, rho.as_ptr(), u.as_ptr(), v.as_ptr(), w.as_ptr(), &mut out)
    };
    assert_eq!(st, TsrStatus::Ok);
    assert!(!out.is_null());
    out
}

fn last_error() -> String {
    let p = tsr_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn coarsen_upsample_evaluate() {
    let fine = create(32);
    let mut coarse = ptr::null_mut();
    let mut up = ptr::null_mut();
    unsafe {
        assert_eq!(tsr_favre_coarsen(fine, 4, &mut coarse), TsrStatus::Ok);
        let mut dims = [0usize; 3];
        let mut dx = 0.0;
        assert_eq!(tsr_flow_state_dims(coarse, dims.as_mut_ptr(), &mut dx), TsrStatus::Ok);
        assert_eq!((dims, dx), ([8, 8, 8], 2.0));

        assert_eq!(tsr_tricubic_upsample(coarse, 4, &mut up), TsrStatus::Ok);
        let mut report = std::mem::zeroed::<TsrMetricReport>();
        assert_eq!(tsr_evaluate(up, fine, 4, ptr::null(), ptr::null(), &mut report), TsrStatus::Ok);
        assert!(report.ssim_rho_u > 0.5 && report.ssim_rho_u < 1.0);
        // 8^3 coarse grid trims to 6^3, below the 9^3 window.
        assert!(report.ssim_sgs.is_nan());
        assert!(report.nrmse_sgs.is_finite());

        let mut same = std::mem::zeroed::<TsrMetricReport>();
        assert_eq!(tsr_evaluate(fine, fine, 2, ptr::null(), ptr::null(), &mut same), TsrStatus::Ok);
        assert!((same.ssim_rho_u - 1.0).abs() < 1e-9);
        assert_eq!(same.nrmse_rho_u, 0.0);

        let mut rho = vec![0.0; 32 * 32 * 32];
        assert_eq!(tsr_flow_state_channel(fine, 0, rho.as_mut_ptr(), rho.len()), TsrStatus::Ok);
        assert_eq!(rho[1], 1.03);
        assert_eq!(tsr_flow_state_channel(fine, 4, rho.as_mut_ptr(), rho.len()), TsrStatus::InvalidArgument);

        tsr_flow_state_free(up);
        tsr_flow_state_free(coarse);
        tsr_flow_state_free(fine);
        tsr_flow_state_free(ptr::null_mut());
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let fine = create(8);
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(tsr_favre_coarsen(fine, 3, &mut out), TsrStatus::InvalidFactor);
        assert!(out.is_null());
        assert!(last_error().contains('3'));
        assert_eq!(tsr_favre_coarsen(ptr::null(), 2, &mut out), TsrStatus::NullPointer);
        assert!(last_error().contains("state"));

        let dir = CString::new("/nonexistent/dir").unwrap();
        let hash = CString::new("abc").unwrap();
        assert_eq!(tsr_flow_state_load(dir.as_ptr(), hash.as_ptr(), 8, 8, 8, 1.0, &mut out), TsrStatus::MissingChannel);

        let neg = [-1.0; 8];
        let ok = [1.0; 8];
        let st = tsr_flow_state_create(2, 2, 2, 1.0, neg.as_ptr(), ok.as_ptr(), ok.as_ptr(), ok.as_ptr(), &mut out);
        assert_eq!(st, TsrStatus::NonPositiveDensity);
        tsr_flow_state_free(fine);
    }
    let name = |s: i32| unsafe { CStr::from_ptr(tsr_status_name(s)) }.to_str().unwrap().to_string();
    assert_eq!(name(TsrStatus::SizeMismatch as i32), "E_SIZE_MISMATCH");
    assert_eq!(name(0), "OK");
    assert_eq!(name(55), "E_UNKNOWN");
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let hash = CString::new("h1").unwrap();
    let s = create(4);
    let mut back = ptr::null_mut();
    let mut a = vec![0.0; 64];
    let mut b = vec![0.0; 64];
    unsafe {
        assert_eq!(tsr_flow_state_save(s, path.as_ptr(), hash.as_ptr()), TsrStatus::Ok);
        assert_eq!(tsr_flow_state_load(path.as_ptr(), hash.as_ptr(), 4, 4, 4, 0.5, &mut back), TsrStatus::Ok);
        for c in 0..4 {
            tsr_flow_state_channel(s, c, a.as_mut_ptr(), 64);
            tsr_flow_state_channel(back, c, b.as_mut_ptr(), 64);
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(*y, *x as f32 as f64);
            }
        }
        let handles = [s as *const TsrFlowState, back as *const TsrFlowState];
        let mut stats = std::mem::zeroed::<TsrChannelStats>();
        assert_eq!(tsr_compute_stats(handles.as_ptr(), 2, &mut stats), TsrStatus::Ok);
        assert!(stats.rho_std > 0.0 && stats.vel_std > 0.0);
        tsr_flow_state_free(s);
        tsr_flow_state_free(back);
    }
}

#[test]
fn buffer_metrics_and_constants() {
    assert_eq!(tsr_flops(128, 128, 128, 4, false), 22_968_008_704);
    assert_eq!(tsr_flops(128, 128, 128, 4, true), 69_860_327_424);
    assert_eq!(tsr_flops(0, 1, 1, 4, false), 0);
    assert_eq!(tsr_tricubic_zero_count(), 2765);

    let cfg = tsr_ssim_config_default();
    assert_eq!((cfg.window, cfg.c1, cfg.c2), (9, 0.1, 0.3));
    let zero = vec![0.0; 1000];
    let one = vec![1.0; 1000];
    let mut out = 0.0;
    unsafe {
        assert_eq!(tsr_ssim3d(zero.as_ptr(), one.as_ptr(), 10, 10, 10, &cfg, &mut out), TsrStatus::Ok);
        assert!((out - 0.01 / 1.01).abs() < 1e-12);
        assert_eq!(tsr_ssim3d(zero.as_ptr(), one.as_ptr(), 8, 8, 8, ptr::null(), &mut out), TsrStatus::DomainTooSmall);
        let p = [1.0, 3.0];
        let t = [1.0, 2.0];
        assert_eq!(tsr_nrmse(p.as_ptr(), t.as_ptr(), 2, false, &mut out), TsrStatus::Ok);
        assert!((out - 0.2).abs() < 1e-15);
        assert_eq!(tsr_nrmse(p.as_ptr(), zero.as_ptr(), 2, false, &mut out), TsrStatus::ZeroTruth);
    }
}

#[test]
fn header_is_generated() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/turbsr.h")).unwrap();
    for name in [
        "typedef struct TsrFlowState TsrFlowState;",
        "tsr_flow_state_create",
        "tsr_evaluate",
        "tsr_last_error_message",
        "TSR_STATUS_SIZE_MISMATCH = 8",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
