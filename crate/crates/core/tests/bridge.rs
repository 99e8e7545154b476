//! Exercises the exported `tnwp_*` symbols exactly as a host would call them.

mod common;

use std::ffi::{CStr, CString};
use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use common::bits;
use tnwp_core::bridge::ffi::*;
use tnwp_core::bridge::{live_model_count, StatusCode};
use tnwp_core::model::{build_dense_model, build_identity_model, build_reference_gwd_model};
use tnwp_core::{colmajor_to_rowmajor, forward, infer, rowmajor_to_colmajor, save_model, SeededRng};

// the registry is process-global; tests that count live models must not overlap
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|p| p.into_inner())
}

const OK: i32 = StatusCode::Ok as i32;
const BAD_HANDLE: i32 = StatusCode::BadHandle as i32;
const SHAPE: i32 = StatusCode::ShapeMismatch as i32;

fn detail() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    assert_eq!(unsafe { tnwp_last_error_detail(buf.as_mut_ptr(), 512) }, 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn open(path: &Path, device: &str) -> (i32, u64) {
    let p = CString::new(path.to_str().unwrap()).unwrap();
    let d = CString::new(device).unwrap();
    let mut h = 0xdead_u64;
    let code = unsafe { tnwp_model_new(p.as_ptr(), d.as_ptr(), &mut h) };
    (code, h)
}

fn ext(shape: &[usize]) -> Vec<i64> {
    shape.iter().map(|&e| e as i64).collect()
}

fn fwd(h: u64, x: &[f64], xe: &[i64], y: &mut [f64], ye: &[i64]) -> i32 {
    unsafe {
        tnwp_model_forward(h, x.as_ptr(), xe.as_ptr(), xe.len() as i64, y.as_mut_ptr(), ye.as_ptr(), ye.len() as i64)
    }
}

fn tan(h: u64, x: &[f64], dx: &[f64], e_in: &[i64], dy: &mut [f64], e_out: &[i64]) -> i32 {
    unsafe {
        tnwp_model_tangent(
            h, x.as_ptr(), e_in.as_ptr(), e_in.len() as i64,
            dx.as_ptr(), e_in.as_ptr(), e_in.len() as i64,
            dy.as_mut_ptr(), e_out.as_ptr(), e_out.len() as i64,
        )
    }
}

fn adj(h: u64, x: &[f64], e_in: &[i64], ystar: &[f64], e_out: &[i64], xstar: &mut [f64]) -> i32 {
    unsafe {
        tnwp_model_adjoint(
            h, x.as_ptr(), e_in.as_ptr(), e_in.len() as i64,
            ystar.as_ptr(), e_out.as_ptr(), e_out.len() as i64,
            xstar.as_mut_ptr(), e_in.as_ptr(), e_in.len() as i64,
        )
    }
}

fn batch(h: u64, xs: &[f64], xe: &[i64], ys: &mut [f64], ye: &[i64], n: i64, chunk: i64) -> i32 {
    unsafe {
        tnwp_model_forward_batch(
            h, xs.as_ptr(), xe.as_ptr(), xe.len() as i64,
            ys.as_mut_ptr(), ye.as_ptr(), ye.len() as i64, n, chunk,
        )
    }
}

#[test]
fn lifecycle_and_status_codes() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("id.tnwp");
    save_model(&build_identity_model(3), &path).unwrap();

    let (code, h) = open(&path, "cpu");
    assert_eq!(code, OK);
    assert_eq!(detail(), "");
    let x = [1.0, 2.0, 3.0];
    let mut y = [0.0; 3];
    assert_eq!(fwd(h, &x, &[3], &mut y, &[3]), OK);
    assert_eq!(y, x);

    assert_eq!(unsafe { tnwp_model_delete(h) }, OK);
    assert_eq!(fwd(h, &x, &[3], &mut y, &[3]), BAD_HANDLE);
    assert!(detail().contains("not name a live model"));
    assert_eq!(unsafe { tnwp_model_delete(h) }, BAD_HANDLE);
    assert_eq!(unsafe { tnwp_model_delete(0) }, BAD_HANDLE);

    let (code, untouched) = open(&dir.path().join("missing.tnwp"), "cpu");
    assert_eq!(code, StatusCode::IoError as i32);
    assert_eq!(untouched, 0xdead);
    assert_eq!(open(&path, "gpu").0, StatusCode::DeviceUnavailable as i32);
    assert_eq!(open(&path, "fpga").0, StatusCode::InvalidArgument as i32);
}

#[test]
fn new_delete_cycles_do_not_accumulate() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("id.tnwp");
    save_model(&build_identity_model(2), &path).unwrap();
    let base = live_model_count();
    let mut peak = 0;
    let mut seen = std::collections::HashSet::new();
    for _ in 0..2_000 {
        let (code, h) = open(&path, "cpu");
        assert_eq!(code, OK);
        assert!(seen.insert(h), "handle value reissued");
        peak = peak.max(live_model_count() - base);
        assert_eq!(unsafe { tnwp_model_delete(h) }, OK);
    }
    assert_eq!(peak, 1);
    assert_eq!(live_model_count(), base);
}

#[test]
fn shape_mismatch_leaves_output_untouched() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.tnwp");
    save_model(&build_reference_gwd_model(0), &path).unwrap();
    let (_, h) = open(&path, "cpu");

    let x = vec![0.5; 11 * 88];
    let mut y = vec![7.0; 445];
    assert_eq!(fwd(h, &x, &[11, 88], &mut y, &[5, 89]), SHAPE);
    assert!(y.iter().all(|&v| v == 7.0));
    let d = detail();
    assert!(d.contains("dimension 1") && d.contains("88") && d.contains("89"), "{d}");

    let x = vec![0.5; 979];
    assert_eq!(fwd(h, &x, &[11, 89], &mut y, &[5, 88]), SHAPE);
    assert_eq!(fwd(h, &x, &[979], &mut y, &[5, 89]), SHAPE);
    assert_eq!(fwd(h, &x, &[11, 89], &mut y, &[5, 89]), OK);
    assert_eq!(detail(), "");
    assert_eq!(unsafe { tnwp_model_delete(h) }, OK);
}

#[test]
fn null_and_negative_arguments_return_codes() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("id.tnwp");
    save_model(&build_identity_model(2), &path).unwrap();
    let (_, h) = open(&path, "cpu");
    let inv = StatusCode::InvalidArgument as i32;
    unsafe {
        let mut out = 0u64;
        assert_eq!(tnwp_model_new(std::ptr::null(), c"cpu".as_ptr(), &mut out), inv);
        assert_eq!(tnwp_model_new(c"x".as_ptr(), std::ptr::null(), &mut out), inv);
        assert_eq!(tnwp_model_new(c"x".as_ptr(), c"cpu".as_ptr(), std::ptr::null_mut()), inv);
        let e = [2i64];
        let neg = [-2i64];
        let mut y = [0.0; 2];
        assert_eq!(tnwp_model_forward(h, std::ptr::null(), e.as_ptr(), 1, y.as_mut_ptr(), e.as_ptr(), 1), inv);
        assert_eq!(tnwp_model_forward(h, y.as_ptr(), std::ptr::null(), 1, y.as_mut_ptr(), e.as_ptr(), 1), inv);
        assert_eq!(tnwp_model_forward(h, y.as_ptr(), neg.as_ptr(), 1, y.as_mut_ptr(), e.as_ptr(), 1), inv);
        assert_eq!(tnwp_model_forward(h, y.as_ptr(), e.as_ptr(), 0, y.as_mut_ptr(), e.as_ptr(), 1), inv);
        assert_eq!(tnwp_model_forward(h, y.as_ptr(), e.as_ptr(), 1, std::ptr::null_mut(), e.as_ptr(), 1), inv);
        let nan = [f64::NAN, 1.0];
        assert_eq!(tnwp_model_forward(h, nan.as_ptr(), e.as_ptr(), 1, y.as_mut_ptr(), e.as_ptr(), 1), inv);
        let be = [2i64, 1];
        assert_eq!(tnwp_model_forward_batch(h, y.as_ptr(), be.as_ptr(), 2, y.as_mut_ptr(), be.as_ptr(), 2, 1, 0), inv);
        assert_eq!(tnwp_model_forward_batch(h, y.as_ptr(), be.as_ptr(), 2, y.as_mut_ptr(), be.as_ptr(), 2, -1, 1), inv);
        // batch 0 touches nothing, even NULL buffers
        assert_eq!(tnwp_model_forward_batch(h, std::ptr::null(), std::ptr::null(), 0, std::ptr::null_mut(), std::ptr::null(), 0, 0, 4), OK);
        assert_eq!(tnwp_model_forward_batch(0, std::ptr::null(), std::ptr::null(), 0, std::ptr::null_mut(), std::ptr::null(), 0, 0, 4), BAD_HANDLE);
        assert_eq!(tnwp_model_delete(h), OK);
    }
}

#[test]
fn error_detail_truncates_with_nul() {
    let _g = serial();
    assert_eq!(unsafe { tnwp_model_delete(0) }, BAD_HANDLE);
    let mut one = [1 as std::ffi::c_char; 1];
    assert_eq!(unsafe { tnwp_last_error_detail(one.as_mut_ptr(), 1) }, 0);
    assert_eq!(one[0], 0);
    let mut small = [1 as std::ffi::c_char; 6];
    assert_eq!(unsafe { tnwp_last_error_detail(small.as_mut_ptr(), 6) }, 0);
    let s = unsafe { CStr::from_ptr(small.as_ptr()) }.to_str().unwrap();
    assert_eq!(s.len(), 5);
    assert!(detail().starts_with(s));
    assert_eq!(unsafe { tnwp_last_error_detail(std::ptr::null_mut(), 10) }, 0);
    assert_eq!(unsafe { tnwp_last_error_detail(small.as_mut_ptr(), 0) }, 0);
}

#[test]
fn boundary_is_transparent_against_the_engine() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.tnwp");
    let g = build_reference_gwd_model(1);
    save_model(&g, &path).unwrap();
    let (_, h) = open(&path, "cpu");
    let mut rng = SeededRng::new(5);
    let (ein, eout) = (ext(&[11, 89]), ext(&[5, 89]));
    let x = rng.normal_tensor(&[11, 89]);
    let dx = rng.normal_tensor(&[11, 89]);
    let z = rng.normal_tensor(&[5, 89]);
    let (xc, dxc, zc) = (rowmajor_to_colmajor(&x), rowmajor_to_colmajor(&dx), rowmajor_to_colmajor(&z));

    let (y, trace) = forward(&g, &x).unwrap();
    let mut out = vec![0.0; 445];
    assert_eq!(fwd(h, &xc, &ein, &mut out, &eout), OK);
    assert_eq!(bits(&colmajor_to_rowmajor(&out, &[5, 89]).unwrap()), bits(&y));

    assert_eq!(tan(h, &xc, &dxc, &ein, &mut out, &eout), OK);
    let dy = colmajor_to_rowmajor(&out, &[5, 89]).unwrap();
    assert_eq!(bits(&dy), bits(&trace.tangent(&dx).unwrap()));

    let mut xstar = vec![0.0; 979];
    assert_eq!(adj(h, &xc, &ein, &zc, &eout, &mut xstar), OK);
    let xs = colmajor_to_rowmajor(&xstar, &[11, 89]).unwrap();
    assert_eq!(bits(&xs), bits(&trace.adjoint(&z).unwrap()));

    // dot-product identity across the two boundary calls
    let lhs = tnwp_core::tensor::dot(&out, &zc);
    let rhs = tnwp_core::tensor::dot(&dxc, &xstar);
    assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));

    let zero = vec![0.0; 979];
    assert_eq!(tan(h, &xc, &zero, &ein, &mut out, &eout), OK);
    assert!(out.iter().all(|&v| v == 0.0));
    assert_eq!(adj(h, &xc, &ein, &vec![0.0; 445], &eout, &mut xstar), OK);
    assert!(xstar.iter().all(|&v| v == 0.0));
    assert_eq!(unsafe { tnwp_model_delete(h) }, OK);
}

#[test]
fn dense_model_through_boundary() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dense.tnwp");
    let g = build_dense_model(2, 4);
    save_model(&g, &path).unwrap();
    let tnwp_core::Layer::Dense(d) = &g.layers()[0] else { unreachable!() };
    let (_, h) = open(&path, "cpu");
    let e = [4i64];
    let x = [0.1, 0.2, 0.3, 0.4];
    let dx = [1.0, -1.0, 0.5, 2.0];
    let mut dy = [0.0; 4];
    assert_eq!(tan(h, &x, &dx, &e, &mut dy, &e), OK);
    assert_eq!(dy.to_vec(), tnwp_core::tensor::matvec(&d.weight, &dx));
    let mut xstar = [0.0; 4];
    assert_eq!(adj(h, &x, &e, &dx, &e, &mut xstar), OK);
    assert_eq!(xstar.to_vec(), tnwp_core::tensor::matvec_transposed(&d.weight, &dx));
    assert_eq!(unsafe { tnwp_model_delete(h) }, OK);
}

#[test]
fn batch_is_chunk_invariant_and_matches_single_columns() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.tnwp");
    let g = build_reference_gwd_model(2);
    save_model(&g, &path).unwrap();
    let (_, h) = open(&path, "cpu");
    let n = 7usize;
    let mut rng = SeededRng::new(6);
    let xs: Vec<f64> = (0..979 * n).map(|_| rng.normal()).collect();
    let (xe, ye) = (ext(&[11, 89, n]), ext(&[5, 89, n]));
    let mut results = Vec::new();
    for chunk in [1, 3, 7, 100] {
        let mut ys = vec![0.0; 445 * n];
        assert_eq!(batch(h, &xs, &xe, &mut ys, &ye, n as i64, chunk), OK);
        results.push(ys.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    assert!(results.windows(2).all(|w| w[0] == w[1]));
    for b in 0..n {
        let x = colmajor_to_rowmajor(&xs[b * 979..(b + 1) * 979], &[11, 89]).unwrap();
        let y = rowmajor_to_colmajor(&infer(&g, &x).unwrap());
        let got: Vec<u64> = results[0][b * 445..(b + 1) * 445].to_vec();
        assert_eq!(got, y.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    let mut ys = vec![0.0; 445 * n];
    let wrong = ext(&[11, 89, n + 1]);
    assert_eq!(batch(h, &xs, &wrong, &mut ys, &ye, n as i64, 2), SHAPE);
    assert_eq!(unsafe { tnwp_model_delete(h) }, OK);
}

#[test]
fn concurrent_forwards_on_one_handle() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.tnwp");
    save_model(&build_reference_gwd_model(3), &path).unwrap();
    let (_, h) = open(&path, "cpu");
    let x = rowmajor_to_colmajor(&SeededRng::new(8).normal_tensor(&[11, 89]));
    let (ein, eout) = (ext(&[11, 89]), ext(&[5, 89]));
    let mut expected = vec![0.0; 445];
    assert_eq!(fwd(h, &x, &ein, &mut expected, &eout), OK);
    std::thread::scope(|s| {
        let workers: Vec<_> = (0..4)
            .map(|_| {
                s.spawn(|| {
                    let mut y = vec![0.0; 445];
                    for _ in 0..20 {
                        assert_eq!(fwd(h, &x, &ein, &mut y, &eout), OK);
                        assert_eq!(y, expected);
                    }
                })
            })
            .collect();
        for w in workers {
            w.join().unwrap();
        }
    });
    assert_eq!(unsafe { tnwp_model_delete(h) }, OK);
}

#[test]
fn delete_during_inflight_calls_never_corrupts() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.tnwp");
    save_model(&build_reference_gwd_model(3), &path).unwrap();
    let (_, h) = open(&path, "cpu");
    let x = vec![0.1; 979];
    let (ein, eout) = (ext(&[11, 89]), ext(&[5, 89]));
    std::thread::scope(|s| {
        let worker = s.spawn(|| {
            let mut y = vec![0.0; 445];
            let mut codes = Vec::new();
            // run until the delete lands
            loop {
                let c = fwd(h, &x, &ein, &mut y, &eout);
                codes.push(c);
                if c != OK {
                    break;
                }
            }
            codes
        });
        std::thread::sleep(std::time::Duration::from_millis(5));
        assert_eq!(unsafe { tnwp_model_delete(h) }, OK);
        let codes = worker.join().unwrap();
        assert!(codes.iter().all(|&c| c == OK || c == BAD_HANDLE));
        assert_eq!(*codes.last().unwrap(), BAD_HANDLE);
    });
}

#[test]
fn header_declares_every_exported_symbol() {
    let header = include_str!("../include/tnwp.h");
    for sym in [
        "tnwp_model_new",
        "tnwp_model_forward",
        "tnwp_model_tangent",
        "tnwp_model_adjoint",
        "tnwp_model_forward_batch",
        "tnwp_model_delete",
        "tnwp_last_error_detail",
    ] {
        assert!(header.contains(&format!("int32_t {sym}(")), "{sym} missing from header");
    }
    for (name, code) in [("OK", 0), ("BAD_HANDLE", 1), ("SHAPE_MISMATCH", 2), ("IO_ERROR", 3),
        ("DEVICE_UNAVAILABLE", 4), ("INVALID_ARGUMENT", 5), ("INTERNAL_ERROR", 6)] {
        let line = header.lines().find(|l| l.contains(&format!("TNWP_STATUS_{name} "))).unwrap();
        assert!(line.trim_end().ends_with(&code.to_string()), "{line}");
    }
}
