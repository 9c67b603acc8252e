use std::ffi::{c_char, CStr, CString};
use std::ptr;

use gkae_covert::gkae::{save_checkpoint, GkaeDims, GkaeModel};
use gkae_covert::graph::NormalizationSpec;
use gkae_covert_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; gkc_last_error_length() + 1];
    let status = unsafe { gkc_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(status, GkcStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/gkae_covert.h")).unwrap();
    for name in [
        "gkc_last_error_length",
        "gkc_last_error_message",
        "gkc_version",
        "gkc_simulate",
        "gkc_trajectory_num_frames",
        "gkc_trajectory_positions",
        "gkc_trajectory_free",
        "gkc_model_load",
        "gkc_model_num_params",
        "gkc_model_rollout",
        "gkc_model_free",
        "gkc_transmit_power_bound",
        "GKC_STATUS_OK",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(gkc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn simulate_and_read_positions() {
    let cfg = CString::new(r#"{"duration": 1.0, "seed": 3}"#).unwrap();
    let mut traj = ptr::null_mut();
    assert_eq!(unsafe { gkc_simulate(cfg.as_ptr(), &mut traj) }, GkcStatus::Ok);
    let frames = unsafe { gkc_trajectory_num_frames(traj) };
    let l = unsafe { gkc_trajectory_num_uavs(traj) };
    assert_eq!((frames, l), (11, 4));

    let mut buf = vec![f64::NAN; 3 * l];
    assert_eq!(unsafe { gkc_trajectory_positions(traj, 10, buf.as_mut_ptr(), buf.len()) }, GkcStatus::Ok);
    assert!(buf.iter().all(|v| v.is_finite()));

    let short = unsafe { gkc_trajectory_positions(traj, 0, buf.as_mut_ptr(), 2) };
    assert_eq!(short, GkcStatus::BufferTooSmall);
    let oob = unsafe { gkc_trajectory_positions(traj, frames, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(oob, GkcStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
    unsafe { gkc_trajectory_free(traj) };
}

#[test]
fn bad_config_and_null_pointers() {
    let cfg = CString::new(r#"{"bogus": 1}"#).unwrap();
    let mut traj = ptr::null_mut();
    assert_eq!(unsafe { gkc_simulate(cfg.as_ptr(), &mut traj) }, GkcStatus::InvalidArgument);
    assert!(traj.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { gkc_simulate(ptr::null(), ptr::null_mut()) }, GkcStatus::NullPointer);
    assert_eq!(unsafe { gkc_trajectory_num_frames(ptr::null()) }, 0);
    unsafe { gkc_trajectory_free(ptr::null_mut()) };
    let mut tiny = [0 as c_char; 1];
    let _ = unsafe { gkc_simulate(cfg.as_ptr(), &mut traj) };
    assert_eq!(unsafe { gkc_last_error_message(tiny.as_mut_ptr(), 1) }, GkcStatus::BufferTooSmall);
}

#[test]
fn model_load_and_rollout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let model = GkaeModel::new(GkaeDims::new(4, 3).unwrap(), NormalizationSpec::for_area(500.0).unwrap(), 1).unwrap();
    save_checkpoint(&model, &path).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { gkc_model_load(c_path.as_ptr(), &mut handle) }, GkcStatus::Ok);
    assert_eq!(unsafe { gkc_model_num_uavs(handle) }, 4);
    assert_eq!(unsafe { gkc_model_num_params(handle) }, 1571);

    let pos = [0.0, 0.0, 100.0, 50.0, 0.0, 100.0, 0.0, 50.0, 100.0, 50.0, 50.0, 100.0];
    let mut out = vec![f64::NAN; 5 * 12];
    let status = unsafe { gkc_model_rollout(handle, pos.as_ptr(), 4, 5, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, GkcStatus::Ok);
    assert!(out.iter().all(|v| v.is_finite()));
    let short = unsafe { gkc_model_rollout(handle, pos.as_ptr(), 4, 5, out.as_mut_ptr(), 10) };
    assert_eq!(short, GkcStatus::BufferTooSmall);
    let wrong_l = unsafe { gkc_model_rollout(handle, pos.as_ptr(), 3, 1, out.as_mut_ptr(), out.len()) };
    assert_eq!(wrong_l, GkcStatus::InvalidArgument);
    unsafe { gkc_model_free(handle) };

    let missing = CString::new(dir.path().join("none.json").to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { gkc_model_load(missing.as_ptr(), &mut handle) }, GkcStatus::Io);
}

#[test]
fn power_bound_respects_budget() {
    let uavs = [0.0, 0.0, 100.0];
    let nodes = [10.0, 0.0, 0.0, 400.0, 0.0, 0.0];
    let nominal = [1.0, 1.0];
    let mut out = [0.0; 2];
    let p_det = 1e-9;
    let status = unsafe {
        gkc_transmit_power_bound(uavs.as_ptr(), 1, nodes.as_ptr(), 2, nominal.as_ptr(), p_det, 3.0, out.as_mut_ptr())
    };
    assert_eq!(status, GkcStatus::Ok);
    for (k, p) in out.iter().enumerate() {
        let (dx, dz): (f64, f64) = (nodes[3 * k], 100.0);
        let gain = (dx * dx + dz * dz).sqrt().powf(-3.0);
        assert!(*p <= nominal[k] && p * gain <= p_det * (1.0 + 1e-12));
    }
    assert!(out[0] < out[1]);
    let bad = unsafe {
        gkc_transmit_power_bound(uavs.as_ptr(), 1, nodes.as_ptr(), 2, nominal.as_ptr(), -1.0, 3.0, out.as_mut_ptr())
    };
    assert_eq!(bad, GkcStatus::InvalidArgument);
}
