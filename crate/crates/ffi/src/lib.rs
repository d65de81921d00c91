//! C ABI over the wire codec and the decision network.
//!
//! Every function returns a [`CdStatus`]; on failure a message is kept per
//! thread and can be read with [`cd_last_error_message`]. Handles are
//! opaque and owned by the caller, who releases them with the matching
//! `*_free` function. Passing a null handle to a `*_free` function is a no-op.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use coopdrive::codec;
use coopdrive::error::Error;
use coopdrive::geometry::{Pose, Tick, Vec3};
use coopdrive::hgat::{checkpoint, forward, FeatureScale, GraphInput, ModelParams};
use coopdrive::scenario::{Action, Command, Detection, Frame};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    EncodeError = 3,
    DecodeError = 4,
    UnsupportedVersion = 5,
    BufferTooSmall = 6,
    CheckpointError = 7,
    IoError = 8,
    Internal = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: CdStatus, msg: impl Into<String>) -> CdStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> CdStatus {
    let status = match &e {
        Error::Config(_) | Error::Input(_) => CdStatus::InvalidArgument,
        Error::Encode(_) | Error::BudgetExceeded { .. } => CdStatus::EncodeError,
        Error::Decode { .. } => CdStatus::DecodeError,
        Error::UnsupportedVersion { .. } => CdStatus::UnsupportedVersion,
        Error::Checkpoint(_) => CdStatus::CheckpointError,
        Error::Io(_) => CdStatus::IoError,
        Error::Divergence { .. } => CdStatus::Internal,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into [`CdStatus::Internal`].
fn guard(f: impl FnOnce() -> CdStatus) -> CdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(CdStatus::Internal, "internal panic"))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CdPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl From<CdPose> for Pose {
    fn from(p: CdPose) -> Self {
        Pose::new(Vec3::new(p.x, p.y, p.z), p.yaw)
    }
}

impl From<Pose> for CdPose {
    fn from(p: Pose) -> Self {
        CdPose {
            x: p.position.x,
            y: p.position.y,
            z: p.position.z,
            yaw: p.yaw,
        }
    }
}

/// One tracked detection in the sender's sensor frame, metres.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CdDetection {
    pub track_id: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, len))
    }
}

/// Encodes a window of `frame_count` frames. Frame `i` has timestamp
/// `ticks[i]` (tenths of a second) and the next `counts[i]` entries of
/// `detections`. Writes the packet to `out` and its size to `out_len`;
/// if `capacity` is too small, only `out_len` is set and
/// [`CdStatus::BufferTooSmall`] is returned.
#[no_mangle]
pub unsafe extern "C" fn cd_encode(
    vehicle_id: u16,
    ticks: *const u32,
    counts: *const u32,
    frame_count: usize,
    detections: *const CdDetection,
    detection_count: usize,
    pose: *const CdPose,
    out: *mut u8,
    capacity: usize,
    out_len: *mut usize,
) -> CdStatus {
    guard(|| {
        let (Some(ticks), Some(counts), Some(dets)) = (
            slice(ticks, frame_count),
            slice(counts, frame_count),
            slice(detections, detection_count),
        ) else {
            return fail(CdStatus::NullPointer, "null array");
        };
        if pose.is_null() || out_len.is_null() {
            return fail(CdStatus::NullPointer, "null pose or length pointer");
        }
        let total: usize = counts.iter().map(|&c| c as usize).sum();
        if total != detection_count {
            return fail(
                CdStatus::InvalidArgument,
                format!("frame counts sum to {total}, {detection_count} detections given"),
            );
        }
        let mut frames = Vec::with_capacity(frame_count);
        let mut at = 0;
        for (&t, &c) in ticks.iter().zip(counts) {
            let c = c as usize;
            frames.push(Frame {
                vehicle_id: u32::from(vehicle_id),
                timestamp: Tick(t),
                detections: dets[at..at + c]
                    .iter()
                    .map(|d| Detection {
                        track_id: d.track_id,
                        position: Vec3::new(d.x, d.y, d.z),
                        truth_id: None,
                    })
                    .collect(),
            });
            at += c;
        }
        let packet = match codec::encode(u32::from(vehicle_id), &frames, &Pose::from(*pose)) {
            Ok(p) => p,
            Err(e) => return from_error(e),
        };
        *out_len = packet.len();
        if capacity < packet.len() {
            return fail(
                CdStatus::BufferTooSmall,
                format!("packet needs {} bytes, buffer holds {capacity}", packet.len()),
            );
        }
        if out.is_null() {
            return fail(CdStatus::NullPointer, "null output buffer");
        }
        ptr::copy_nonoverlapping(packet.as_ptr(), out, packet.len());
        CdStatus::Ok
    })
}

/// A decoded window.
pub struct CdWindow {
    inner: codec::DecodedWindow,
}

#[no_mangle]
pub unsafe extern "C" fn cd_decode(bytes: *const u8, len: usize, out: *mut *mut CdWindow) -> CdStatus {
    guard(|| {
        let Some(bytes) = slice(bytes, len) else {
            return fail(CdStatus::NullPointer, "null packet");
        };
        if out.is_null() {
            return fail(CdStatus::NullPointer, "null output handle");
        }
        match codec::decode(bytes) {
            Ok(w) => {
                *out = Box::into_raw(Box::new(CdWindow { inner: w }));
                CdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn cd_window_free(w: *mut CdWindow) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Sender id, pose and frame count of a decoded window.
#[no_mangle]
pub unsafe extern "C" fn cd_window_info(
    w: *const CdWindow,
    vehicle_id: *mut u32,
    pose: *mut CdPose,
    frame_count: *mut usize,
) -> CdStatus {
    guard(|| {
        let Some(w) = w.as_ref() else {
            return fail(CdStatus::NullPointer, "null window");
        };
        if vehicle_id.is_null() || pose.is_null() || frame_count.is_null() {
            return fail(CdStatus::NullPointer, "null output pointer");
        }
        *vehicle_id = w.inner.vehicle_id;
        *pose = w.inner.pose.into();
        *frame_count = w.inner.frames.len();
        CdStatus::Ok
    })
}

/// Timestamp and detection count of frame `index`.
#[no_mangle]
pub unsafe extern "C" fn cd_window_frame(
    w: *const CdWindow,
    index: usize,
    tick: *mut u32,
    detection_count: *mut usize,
) -> CdStatus {
    guard(|| {
        let Some(w) = w.as_ref() else {
            return fail(CdStatus::NullPointer, "null window");
        };
        if tick.is_null() || detection_count.is_null() {
            return fail(CdStatus::NullPointer, "null output pointer");
        }
        let Some(f) = w.inner.frames.get(index) else {
            return fail(CdStatus::InvalidArgument, format!("frame {index} out of range"));
        };
        *tick = f.timestamp.0;
        *detection_count = f.detections.len();
        CdStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn cd_window_detection(
    w: *const CdWindow,
    frame: usize,
    index: usize,
    out: *mut CdDetection,
) -> CdStatus {
    guard(|| {
        let Some(w) = w.as_ref() else {
            return fail(CdStatus::NullPointer, "null window");
        };
        if out.is_null() {
            return fail(CdStatus::NullPointer, "null output pointer");
        }
        let Some(d) = w.inner.frames.get(frame).and_then(|f| f.detections.get(index)) else {
            return fail(CdStatus::InvalidArgument, format!("detection {frame}/{index} out of range"));
        };
        *out = CdDetection {
            track_id: d.track_id,
            x: d.position.x,
            y: d.position.y,
            z: d.position.z,
        };
        CdStatus::Ok
    })
}

/// Network parameters.
pub struct CdModel {
    params: ModelParams,
}

#[no_mangle]
pub unsafe extern "C" fn cd_model_load(path: *const c_char, out: *mut *mut CdModel) -> CdStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(CdStatus::NullPointer, "null path or output handle");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(CdStatus::InvalidArgument, "path is not UTF-8");
        };
        match checkpoint::load(Path::new(path)) {
            Ok((params, _)) => {
                *out = Box::into_raw(Box::new(CdModel { params }));
                CdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Freshly initialised parameters, mainly for testing.
#[no_mangle]
pub unsafe extern "C" fn cd_model_init(seed: u64, out: *mut *mut CdModel) -> CdStatus {
    guard(|| {
        if out.is_null() {
            return fail(CdStatus::NullPointer, "null output handle");
        }
        *out = Box::into_raw(Box::new(CdModel {
            params: ModelParams::init(seed),
        }));
        CdStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn cd_model_free(m: *mut CdModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// A merged graph under construction, in the ego frame.
pub struct CdGraph {
    nodes: Vec<[f64; 4]>,
    ego: Option<usize>,
    edges: [Vec<(u32, u32, f64)>; 2],
    command: Command,
}

#[no_mangle]
pub unsafe extern "C" fn cd_graph_new(out: *mut *mut CdGraph) -> CdStatus {
    guard(|| {
        if out.is_null() {
            return fail(CdStatus::NullPointer, "null output handle");
        }
        *out = Box::into_raw(Box::new(CdGraph {
            nodes: Vec::new(),
            ego: None,
            edges: [Vec::new(), Vec::new()],
            command: Command::LaneFollow,
        }));
        CdStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn cd_graph_free(g: *mut CdGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Adds a node at (x, y, z) metres and writes its index. Exactly one node
/// must be the ego.
#[no_mangle]
pub unsafe extern "C" fn cd_graph_add_node(g: *mut CdGraph, x: f64, y: f64, z: f64, is_ego: bool, index: *mut u32) -> CdStatus {
    guard(|| {
        let Some(g) = g.as_mut() else {
            return fail(CdStatus::NullPointer, "null graph");
        };
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return fail(CdStatus::InvalidArgument, "non-finite node position");
        }
        if is_ego && g.ego.is_some() {
            return fail(CdStatus::InvalidArgument, "graph already has an ego node");
        }
        let i = g.nodes.len();
        if is_ego {
            g.ego = Some(i);
        }
        g.nodes.push([x, y, z, if is_ego { 1.0 } else { 0.0 }]);
        if !index.is_null() {
            *index = i as u32;
        }
        CdStatus::Ok
    })
}

/// Adds an edge. `kind` is 0 for spatial (attr = distance in metres) and 1
/// for temporal (attr = time gap in seconds, `a` the earlier node and `b`
/// the later one).
#[no_mangle]
pub unsafe extern "C" fn cd_graph_add_edge(g: *mut CdGraph, a: u32, b: u32, kind: u32, attr: f64) -> CdStatus {
    guard(|| {
        let Some(g) = g.as_mut() else {
            return fail(CdStatus::NullPointer, "null graph");
        };
        let n = g.nodes.len() as u32;
        if a >= n || b >= n || a == b {
            return fail(CdStatus::InvalidArgument, format!("bad edge ({a}, {b}) on {n} nodes"));
        }
        if kind > 1 || !attr.is_finite() {
            return fail(CdStatus::InvalidArgument, "edge kind must be 0 or 1 with a finite attribute");
        }
        g.edges[kind as usize].push((a, b, attr));
        CdStatus::Ok
    })
}

/// Sets the navigation command by index: lane follow, turn right, turn
/// left, go straight, change left, change right.
#[no_mangle]
pub unsafe extern "C" fn cd_graph_set_command(g: *mut CdGraph, command: u32) -> CdStatus {
    guard(|| {
        let Some(g) = g.as_mut() else {
            return fail(CdStatus::NullPointer, "null graph");
        };
        match Command::from_index(command as usize) {
            Some(c) => {
                g.command = c;
                CdStatus::Ok
            }
            None => fail(CdStatus::InvalidArgument, format!("unknown command {command}")),
        }
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CdPrediction {
    pub p_brake: f64,
    pub p_go: f64,
    pub beta_spatial: f64,
    pub beta_temporal: f64,
    /// 1 to brake, 0 to go.
    pub brake: bool,
}

#[no_mangle]
pub unsafe extern "C" fn cd_predict(m: *const CdModel, g: *const CdGraph, out: *mut CdPrediction) -> CdStatus {
    guard(|| {
        let (Some(m), Some(g)) = (m.as_ref(), g.as_ref()) else {
            return fail(CdStatus::NullPointer, "null model or graph");
        };
        if out.is_null() {
            return fail(CdStatus::NullPointer, "null output pointer");
        }
        let Some(ego) = g.ego else {
            return fail(CdStatus::InvalidArgument, "graph has no ego node");
        };
        let scale = FeatureScale::default();
        let inputs = g
            .nodes
            .iter()
            .map(|n| [n[0] / scale.position, n[1] / scale.position, n[2] / scale.position, n[3]])
            .collect();
        let spatial: Vec<_> = g.edges[0].iter().map(|&(a, b, d)| (a, b, d / scale.position)).collect();
        let temporal: Vec<_> = g.edges[1].iter().map(|&(a, b, t)| (a, b, t / scale.time)).collect();
        let input = GraphInput::from_parts(inputs, ego, [&spatial, &temporal], g.command);
        let p = forward(&input, &m.params).prediction;
        *out = CdPrediction {
            p_brake: p.p[0],
            p_go: p.p[1],
            beta_spatial: p.beta[0],
            beta_temporal: p.beta[1],
            brake: p.action() == Action::Brake,
        };
        CdStatus::Ok
    })
}
