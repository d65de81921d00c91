use std::ffi::{CStr, CString};
use std::ptr;

use coopdrive::hgat::{checkpoint, forward, GraphInput, ModelParams};
use coopdrive::scenario::Command;
use coopdrive_ffi::*;

fn last_error() -> String {
    let p = cd_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn encode_decode_roundtrip() {
    let ticks = [100u32, 101, 103];
    let counts = [2u32, 0, 1];
    let dets = [
        CdDetection { track_id: 1, x: 10.0, y: -2.5, z: 0.3 },
        CdDetection { track_id: 4, x: -40.12, y: 3.0, z: 0.0 },
        CdDetection { track_id: 1, x: 11.0, y: -2.4, z: 0.3 },
    ];
    let pose = CdPose { x: 5.0, y: 6.0, z: 0.0, yaw: 1.0 };
    let mut buf = vec![0u8; 256];
    let mut len = 0usize;
    let st = unsafe {
        cd_encode(7, ticks.as_ptr(), counts.as_ptr(), 3, dets.as_ptr(), 3, &pose, buf.as_mut_ptr(), buf.len(), &mut len)
    };
    assert_eq!(st, CdStatus::Ok);
    assert_eq!(len, 22 + 3 * 3 + 3 * 8);

    let mut w = ptr::null_mut();
    assert_eq!(unsafe { cd_decode(buf.as_ptr(), len, &mut w) }, CdStatus::Ok);
    let (mut vid, mut p, mut n) = (0u32, CdPose::default(), 0usize);
    assert_eq!(unsafe { cd_window_info(w, &mut vid, &mut p, &mut n) }, CdStatus::Ok);
    assert_eq!((vid, n), (7, 3));
    assert!((p.x - 5.0).abs() < 0.005 && (p.yaw - 1.0).abs() < 1e-4);
    let mut k = 0;
    for (f, (&t, &c)) in ticks.iter().zip(&counts).enumerate() {
        let (mut tick, mut cnt) = (0u32, 0usize);
        assert_eq!(unsafe { cd_window_frame(w, f, &mut tick, &mut cnt) }, CdStatus::Ok);
        assert_eq!((tick, cnt), (t, c as usize));
        for i in 0..cnt {
            let mut d = CdDetection::default();
            assert_eq!(unsafe { cd_window_detection(w, f, i, &mut d) }, CdStatus::Ok);
            assert_eq!(d.track_id, dets[k].track_id);
            assert!((d.x - dets[k].x).abs() <= 0.005 && (d.y - dets[k].y).abs() <= 0.005);
            k += 1;
        }
    }
    let mut d = CdDetection::default();
    assert_eq!(unsafe { cd_window_detection(w, 1, 0, &mut d) }, CdStatus::InvalidArgument);
    unsafe { cd_window_free(w) };
}

#[test]
fn encode_reports_required_size_and_errors() {
    let ticks = [1u32];
    let counts = [1u32];
    let dets = [CdDetection { track_id: 1, x: 1.0, y: 1.0, z: 0.0 }];
    let pose = CdPose::default();
    let mut len = 0;
    let mut small = [0u8; 4];
    let st = unsafe {
        cd_encode(1, ticks.as_ptr(), counts.as_ptr(), 1, dets.as_ptr(), 1, &pose, small.as_mut_ptr(), small.len(), &mut len)
    };
    assert_eq!(st, CdStatus::BufferTooSmall);
    assert_eq!(len, 22 + 3 + 8);

    let far = [CdDetection { track_id: 1, x: 500.0, y: 0.0, z: 0.0 }];
    let mut buf = [0u8; 64];
    let st = unsafe {
        cd_encode(1, ticks.as_ptr(), counts.as_ptr(), 1, far.as_ptr(), 1, &pose, buf.as_mut_ptr(), buf.len(), &mut len)
    };
    assert_eq!(st, CdStatus::EncodeError);
    assert!(!last_error().is_empty());

    let st = unsafe { cd_encode(1, ticks.as_ptr(), counts.as_ptr(), 1, dets.as_ptr(), 0, &pose, buf.as_mut_ptr(), 64, &mut len) };
    assert_eq!(st, CdStatus::InvalidArgument);
    let st = unsafe { cd_encode(1, ptr::null(), counts.as_ptr(), 1, dets.as_ptr(), 1, &pose, buf.as_mut_ptr(), 64, &mut len) };
    assert_eq!(st, CdStatus::NullPointer);
}

#[test]
fn decode_rejects_bad_packets() {
    let mut w = ptr::null_mut();
    assert_eq!(unsafe { cd_decode([1u8, 2, 3].as_ptr(), 3, &mut w) }, CdStatus::DecodeError);
    assert!(w.is_null());
    let mut packet = vec![0u8; 22];
    packet[0] = 9;
    assert_eq!(unsafe { cd_decode(packet.as_ptr(), packet.len(), &mut w) }, CdStatus::UnsupportedVersion);
    assert!(last_error().contains("version"));
}

#[test]
fn predict_matches_core_forward() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { cd_model_init(11, &mut m) }, CdStatus::Ok);
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { cd_graph_new(&mut g) }, CdStatus::Ok);
    let nodes = [(0.0, 0.0, 0.0, true), (12.0, 3.0, 0.0, false), (12.5, 3.1, 0.0, false), (-6.0, 9.0, 0.5, false)];
    for (i, &(x, y, z, e)) in nodes.iter().enumerate() {
        let mut idx = 99;
        assert_eq!(unsafe { cd_graph_add_node(g, x, y, z, e, &mut idx) }, CdStatus::Ok);
        assert_eq!(idx as usize, i);
    }
    let spatial = [(0u32, 1u32, 12.37), (0, 2, 12.88), (0, 3, 10.83), (1, 3, 19.0)];
    for &(a, b, d) in &spatial {
        assert_eq!(unsafe { cd_graph_add_edge(g, a, b, 0, d) }, CdStatus::Ok);
    }
    assert_eq!(unsafe { cd_graph_add_edge(g, 1, 2, 1, 0.1) }, CdStatus::Ok);
    assert_eq!(unsafe { cd_graph_set_command(g, 2) }, CdStatus::Ok);
    let mut pred = CdPrediction::default();
    assert_eq!(unsafe { cd_predict(m, g, &mut pred) }, CdStatus::Ok);

    let inputs = nodes
        .iter()
        .map(|&(x, y, z, e)| [x / 30.0, y / 30.0, z / 30.0, if e { 1.0 } else { 0.0 }])
        .collect();
    let sp: Vec<_> = spatial.iter().map(|&(a, b, d)| (a, b, d / 30.0)).collect();
    let input = GraphInput::from_parts(inputs, 0, [&sp, &[(1, 2, 0.1)]], Command::TurnLeft);
    let want = forward(&input, &ModelParams::init(11)).prediction;
    assert_eq!([pred.p_brake, pred.p_go], want.p);
    assert_eq!([pred.beta_spatial, pred.beta_temporal], want.beta);
    assert_eq!(pred.brake, pred.p_brake >= pred.p_go);

    assert_eq!(unsafe { cd_graph_add_edge(g, 0, 9, 0, 1.0) }, CdStatus::InvalidArgument);
    assert_eq!(unsafe { cd_graph_add_node(g, 0.0, 0.0, 0.0, true, ptr::null_mut()) }, CdStatus::InvalidArgument);
    assert_eq!(unsafe { cd_graph_set_command(g, 6) }, CdStatus::InvalidArgument);
    unsafe {
        cd_graph_free(g);
        cd_model_free(m);
    }
}

#[test]
fn predict_needs_an_ego_node() {
    let (mut m, mut g) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        cd_model_init(0, &mut m);
        cd_graph_new(&mut g);
        cd_graph_add_node(g, 1.0, 0.0, 0.0, false, ptr::null_mut());
    }
    let mut pred = CdPrediction::default();
    assert_eq!(unsafe { cd_predict(m, g, &mut pred) }, CdStatus::InvalidArgument);
    assert_eq!(unsafe { cd_predict(ptr::null(), g, &mut pred) }, CdStatus::NullPointer);
    unsafe {
        cd_graph_free(g);
        cd_model_free(m);
    }
}

#[test]
fn model_load_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &ModelParams::init(5), &serde_json::json!({})).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { cd_model_load(c.as_ptr(), &mut m) }, CdStatus::Ok);
    unsafe { cd_model_free(m) };

    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { cd_model_load(missing.as_ptr(), &mut m) }, CdStatus::CheckpointError);
    assert!(m.is_null());
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert_eq!(unsafe { cd_model_load(c.as_ptr(), &mut m) }, CdStatus::CheckpointError);
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/coopdrive.h");
    for f in [
        "cd_last_error_message",
        "cd_version",
        "cd_encode",
        "cd_decode",
        "cd_window_info",
        "cd_window_frame",
        "cd_window_detection",
        "cd_window_free",
        "cd_model_load",
        "cd_model_init",
        "cd_model_free",
        "cd_graph_new",
        "cd_graph_add_node",
        "cd_graph_add_edge",
        "cd_graph_set_command",
        "cd_graph_free",
        "cd_predict",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct CdModel CdModel;"));
    let v = unsafe { CStr::from_ptr(cd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
