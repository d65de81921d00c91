//! Wire format for sharing a tracked observation window, and a simple V2V
//! channel model.
//!
//! Layout (version 1), little-endian, no padding:
//!
//! ```text
//! header (22 bytes)
//!   0  u8   format version
//!   1  u16  vehicle id
//!   3  u8   frame count (<= 15)
//!   4  u32  base timestamp, deciseconds
//!   8  i32  pose x, centimeters
//!  12  i32  pose y, centimeters
//!  16  i32  pose z, centimeters
//!  20  u16  pose yaw, units of 2π/65536 in [0, 2π)
//! per frame (3 + 8·count bytes)
//!      u8   timestamp offset from base, deciseconds (strictly increasing)
//!      u16  detection count
//!      per detection: u16 track id, i16 x, i16 y, i16 z (centimeters, sensor frame)
//! ```
//!
//! Edges are not transmitted: the receiver rebuilds the graph from the
//! detections and track ids.

use std::f64::consts::TAU;

use byteorder::{ByteOrder, LittleEndian as LE, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose, Tick, Vec3};
use crate::scenario::{Detection, Frame};
use crate::stgraph::MAX_WINDOW;

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 22;
pub const FRAME_HEADER_BYTES: usize = 3;
pub const DETECTION_BYTES: usize = 8;
/// Largest representable sensor-frame coordinate, meters.
pub const MAX_COORDINATE: f64 = 327.67;
/// Size of a compressed-feature sharing payload used as the comparison
/// point for package size, bytes.
pub const REFERENCE_FEATURE_PAYLOAD: usize = 510_000;

/// Closed-form packet size for frames with the given detection counts.
pub fn packet_size(counts: impl IntoIterator<Item = usize>) -> usize {
    HEADER_BYTES
        + counts
            .into_iter()
            .map(|c| FRAME_HEADER_BYTES + DETECTION_BYTES * c)
            .sum::<usize>()
}

/// Exact encoded length.
pub fn measure_ps(packet: &[u8]) -> usize {
    packet.len()
}

fn quantize_cm(v: f64, what: &str) -> Result<i16> {
    let q = (v * 100.0).round();
    if !q.is_finite() || q.abs() > i16::MAX as f64 {
        return Err(Error::Encode(format!("{what} {v} m outside ±{MAX_COORDINATE} m")));
    }
    Ok(q as i16)
}

fn quantize_pose_cm(v: f64) -> Result<i32> {
    let q = (v * 100.0).round();
    if !q.is_finite() || q.abs() > i32::MAX as f64 {
        return Err(Error::Encode(format!("pose coordinate {v} m out of range")));
    }
    Ok(q as i32)
}

fn quantize_yaw(yaw: f64) -> u16 {
    let turns = yaw.rem_euclid(TAU) / TAU;
    ((turns * 65536.0).round() as u32 % 65536) as u16
}

fn dequantize_yaw(q: u16) -> f64 {
    normalize_angle(f64::from(q) * TAU / 65536.0)
}

/// Decoded window as seen by the receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedWindow {
    pub vehicle_id: u32,
    pub pose: Pose,
    pub frames: Vec<Frame>,
}

/// Encodes a tracked window (sensor-frame detections) with the sender's pose.
pub fn encode(vehicle_id: u32, frames: &[Frame], pose: &Pose) -> Result<Vec<u8>> {
    let vid = u16::try_from(vehicle_id).map_err(|_| Error::Encode(format!("vehicle id {vehicle_id} exceeds u16")))?;
    if frames.len() > MAX_WINDOW {
        return Err(Error::Encode(format!("{} frames exceed {MAX_WINDOW}", frames.len())));
    }
    let base = frames.first().map_or(0, |f| f.timestamp.0);
    let mut out = Vec::with_capacity(packet_size(frames.iter().map(|f| f.detections.len())));
    out.push(WIRE_VERSION);
    out.write_u16::<LE>(vid)?;
    out.push(frames.len() as u8);
    out.write_u32::<LE>(base)?;
    out.write_i32::<LE>(quantize_pose_cm(pose.position.x)?)?;
    out.write_i32::<LE>(quantize_pose_cm(pose.position.y)?)?;
    out.write_i32::<LE>(quantize_pose_cm(pose.position.z)?)?;
    out.write_u16::<LE>(quantize_yaw(pose.yaw))?;

    let mut prev: Option<u32> = None;
    for f in frames {
        if f.vehicle_id != vehicle_id {
            return Err(Error::Encode("frame from another vehicle".into()));
        }
        if prev.is_some_and(|p| f.timestamp.0 <= p) {
            return Err(Error::Encode("frame timestamps not strictly increasing".into()));
        }
        prev = Some(f.timestamp.0);
        let dt = u8::try_from(f.timestamp.0 - base)
            .map_err(|_| Error::Encode("window spans more than 25.5 s".into()))?;
        let count = u16::try_from(f.detections.len())
            .map_err(|_| Error::Encode("more than 65535 detections in a frame".into()))?;
        out.push(dt);
        out.write_u16::<LE>(count)?;
        for d in &f.detections {
            let id = u16::try_from(d.track_id)
                .map_err(|_| Error::Encode(format!("track id {} exceeds u16", d.track_id)))?;
            out.write_u16::<LE>(id)?;
            out.write_i16::<LE>(quantize_cm(d.position.x, "x")?)?;
            out.write_i16::<LE>(quantize_cm(d.position.y, "y")?)?;
            out.write_i16::<LE>(quantize_cm(d.position.z, "z")?)?;
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::decode(self.pos, format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(LE::read_u16(self.take(2, what)?))
    }
    fn i16(&mut self, what: &str) -> Result<i16> {
        Ok(LE::read_i16(self.take(2, what)?))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LE::read_u32(self.take(4, what)?))
    }
    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(LE::read_i32(self.take(4, what)?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<DecodedWindow> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let version = r.u8("version")?;
    if version != WIRE_VERSION {
        return Err(Error::UnsupportedVersion {
            found: u32::from(version),
            expected: u32::from(WIRE_VERSION),
        });
    }
    let vehicle_id = u32::from(r.u16("vehicle id")?);
    let count_at = r.pos;
    let frame_count = r.u8("frame count")? as usize;
    if frame_count > MAX_WINDOW {
        return Err(Error::decode(count_at, format!("frame count {frame_count} exceeds {MAX_WINDOW}")));
    }
    let base = r.u32("base timestamp")?;
    let x = r.i32("pose")?;
    let y = r.i32("pose")?;
    let z = r.i32("pose")?;
    let yaw = r.u16("pose yaw")?;
    let pose = Pose::new(
        Vec3::new(f64::from(x) / 100.0, f64::from(y) / 100.0, f64::from(z) / 100.0),
        dequantize_yaw(yaw),
    );

    let mut frames = Vec::with_capacity(frame_count);
    let mut prev: Option<u8> = None;
    for _ in 0..frame_count {
        let dt_at = r.pos;
        let dt = r.u8("frame offset")?;
        if prev.is_some_and(|p| dt <= p) || (prev.is_none() && dt != 0) {
            return Err(Error::decode(dt_at, "frame offsets not strictly increasing from 0"));
        }
        prev = Some(dt);
        let timestamp = base
            .checked_add(u32::from(dt))
            .ok_or_else(|| Error::decode(dt_at, "timestamp overflow"))?;
        let n = r.u16("detection count")? as usize;
        if bytes.len() - r.pos < n * DETECTION_BYTES {
            return Err(Error::decode(r.pos, "truncated detections"));
        }
        let mut detections = Vec::with_capacity(n);
        for _ in 0..n {
            let track_id = u32::from(r.u16("track id")?);
            let px = r.i16("x")?;
            let py = r.i16("y")?;
            let pz = r.i16("z")?;
            detections.push(Detection {
                track_id,
                position: Vec3::new(f64::from(px) / 100.0, f64::from(py) / 100.0, f64::from(pz) / 100.0),
                truth_id: None,
            });
        }
        frames.push(Frame {
            vehicle_id,
            timestamp: Tick(timestamp),
            detections,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::decode(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(DecodedWindow {
        vehicle_id,
        pose,
        frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    #[serde(rename = "dsrc", alias = "DSRC")]
    Dsrc,
    #[serde(rename = "cv2x", alias = "C-V2X", alias = "c-v2x")]
    CV2x,
}

impl ChannelKind {
    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::Dsrc => "DSRC",
            ChannelKind::CV2x => "C-V2X",
        }
    }
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "dsrc" => Ok(ChannelKind::Dsrc),
            "cv2x" => Ok(ChannelKind::CV2x),
            _ => Err(Error::Config(format!("unknown channel `{s}` (expected dsrc or c-v2x)"))),
        }
    }
}

pub const MAX_LOSS_PROBABILITY: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub bandwidth_bps: f64,
    pub max_package_bytes: usize,
    pub loss_probability: f64,
}

impl ChannelConfig {
    pub fn dsrc() -> Self {
        ChannelConfig {
            kind: ChannelKind::Dsrc,
            bandwidth_bps: 2.0e6,
            max_package_bytes: 200_000,
            loss_probability: 0.05,
        }
    }

    pub fn cv2x() -> Self {
        ChannelConfig {
            kind: ChannelKind::CV2x,
            bandwidth_bps: 7.2e6,
            max_package_bytes: 720_000,
            loss_probability: 0.05,
        }
    }

    pub fn preset(kind: ChannelKind) -> Self {
        match kind {
            ChannelKind::Dsrc => Self::dsrc(),
            ChannelKind::CV2x => Self::cv2x(),
        }
    }

    /// Checks the configuration is usable. Any loss probability in [0, 1]
    /// is accepted here; see [`ChannelConfig::validate_standard`].
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(Error::Config(format!(
                "loss probability {} outside [0, 1]",
                self.loss_probability
            )));
        }
        if self.bandwidth_bps <= 0.0 || self.max_package_bytes == 0 {
            return Err(Error::Config("channel bandwidth and package limit must be positive".into()));
        }
        Ok(())
    }

    /// Like [`ChannelConfig::validate`], but also requires the loss rate the
    /// standards guarantee.
    pub fn validate_standard(&self) -> Result<()> {
        self.validate()?;
        if self.loss_probability > MAX_LOSS_PROBABILITY {
            return Err(Error::Config(format!(
                "loss probability {} above the {MAX_LOSS_PROBABILITY} of the V2V standards",
                self.loss_probability
            )));
        }
        Ok(())
    }

    pub fn fits(&self, size: usize) -> bool {
        size <= self.max_package_bytes
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission<'a> {
    /// `None` when the packet was lost.
    pub delivered: Option<&'a [u8]>,
    /// Serialization delay, seconds.
    pub latency: f64,
}

/// Sends one packet over `channel`. Exactly one loss draw is taken from
/// `rng` per accepted packet.
pub fn transmit<'a, R: Rng>(packet: &'a [u8], channel: &ChannelConfig, rng: &mut R) -> Result<Transmission<'a>> {
    if !channel.fits(packet.len()) {
        return Err(Error::BudgetExceeded {
            size: packet.len(),
            max: channel.max_package_bytes,
            channel: channel.kind.name().into(),
        });
    }
    let lost = rng.gen_bool(channel.loss_probability);
    Ok(Transmission {
        delivered: (!lost).then_some(packet),
        latency: packet.len() as f64 * 8.0 / channel.bandwidth_bps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(tick: u32, dets: &[(u32, f64, f64, f64)]) -> Frame {
        Frame {
            vehicle_id: 3,
            timestamp: Tick(tick),
            detections: dets
                .iter()
                .map(|&(id, x, y, z)| Detection {
                    track_id: id,
                    position: Vec3::new(x, y, z),
                    truth_id: None,
                })
                .collect(),
        }
    }

    #[test]
    fn empty_window_is_header_only() {
        let p = encode(3, &[], &Pose::identity()).unwrap();
        assert_eq!(p.len(), 1 + 2 + 1 + 4 + 3 * 4 + 2);
        assert_eq!(measure_ps(&p), HEADER_BYTES);
        let d = decode(&p).unwrap();
        assert!(d.frames.is_empty());
    }

    #[test]
    fn fifteen_by_twenty_five_size() {
        let frames: Vec<_> = (0..15)
            .map(|t| {
                let dets: Vec<_> = (0..25).map(|i| (i, i as f64, -(i as f64), 0.0)).collect();
                frame(t, &dets)
            })
            .collect();
        let p = encode(3, &frames, &Pose::identity()).unwrap();
        assert_eq!(p.len(), 22 + 15 * (3 + 8 * 25));
        assert_eq!(p.len(), 3067);
        let again = encode(3, &decode(&p).unwrap().frames, &decode(&p).unwrap().pose).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn single_detection_quantizes_to_centimeters() {
        let p = encode(3, &[frame(5, &[(1, 1.234, -5.678, 0.0)])], &Pose::identity()).unwrap();
        let d = decode(&p).unwrap();
        let pos = d.frames[0].detections[0].position;
        assert_eq!((pos.x, pos.y, pos.z), (1.23, -5.68, 0.0));
        assert_eq!(d.frames[0].timestamp, Tick(5));
    }

    #[test]
    fn header_corruption_is_an_error() {
        let p = encode(3, &[frame(0, &[(1, 1.0, 2.0, 0.0)]), frame(2, &[])], &Pose::identity()).unwrap();
        let mut v = p.clone();
        v[0] ^= 0xff;
        assert!(matches!(decode(&v), Err(Error::UnsupportedVersion { .. })));
        for bit in 0..8 {
            let mut c = p.clone();
            c[3] ^= 1 << bit;
            assert!(matches!(decode(&c), Err(Error::Decode { .. })), "bit {bit}");
        }
        assert!(matches!(decode(&p[..p.len() - 1]), Err(Error::Decode { .. })));
        let mut long = p.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Decode { offset, .. }) if offset == p.len()));
    }

    #[test]
    fn out_of_range_position_fails_to_encode() {
        let r = encode(3, &[frame(0, &[(1, 400.0, 0.0, 0.0)])], &Pose::identity());
        assert!(matches!(r, Err(Error::Encode(_))));
        assert!(encode(3, &[frame(0, &[(1, 327.67, -327.67, 0.0)])], &Pose::identity()).is_ok());
        assert!(encode(3, &[frame(0, &[(70_000, 0.0, 0.0, 0.0)])], &Pose::identity()).is_err());
    }

    #[test]
    fn yaw_quantization_roundtrip() {
        for k in -20..=20 {
            let yaw = normalize_angle(k as f64 * 0.157);
            let back = dequantize_yaw(quantize_yaw(yaw));
            assert!(normalize_angle(back - yaw).abs() <= TAU / 65536.0);
        }
        assert_eq!(quantize_yaw(std::f64::consts::PI), 32768);
        assert_eq!(quantize_yaw(-std::f64::consts::FRAC_PI_2), 49152);
    }

    #[test]
    fn dsrc_latency_and_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ch = ChannelConfig {
            loss_probability: 0.0,
            ..ChannelConfig::dsrc()
        };
        let packet = vec![0u8; 3065];
        let t = transmit(&packet, &ch, &mut rng).unwrap();
        assert!(t.delivered.is_some());
        assert!((t.latency - 0.01226).abs() < 1e-12);
        let raw = vec![0u8; 6_000_000];
        assert!(matches!(transmit(&raw, &ch, &mut rng), Err(Error::BudgetExceeded { .. })));
        for _ in 0..1000 {
            assert!(transmit(&packet, &ch, &mut rng).unwrap().delivered.is_some());
        }
    }

    #[test]
    fn loss_rate_within_three_sigma() {
        let ch = ChannelConfig::cv2x();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let packet = [0u8; 10];
        let n = 100_000;
        let lost = (0..n)
            .filter(|_| transmit(&packet, &ch, &mut rng).unwrap().delivered.is_none())
            .count() as f64;
        let p = ch.loss_probability;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((lost - n as f64 * p).abs() <= 3.0 * sigma, "lost {lost}");
    }

    #[test]
    fn channel_presets_and_parsing() {
        assert_eq!(ChannelConfig::dsrc().max_package_bytes, 200_000);
        assert_eq!(ChannelConfig::cv2x().bandwidth_bps, 7.2e6);
        assert_eq!("C-V2X".parse::<ChannelKind>().unwrap(), ChannelKind::CV2x);
        assert!("wifi".parse::<ChannelKind>().is_err());
        let bad = ChannelConfig {
            loss_probability: 0.2,
            ..ChannelConfig::dsrc()
        };
        assert!(bad.validate().is_ok());
        assert!(bad.validate_standard().is_err());
        let worse = ChannelConfig {
            loss_probability: 1.5,
            ..ChannelConfig::dsrc()
        };
        assert!(worse.validate().is_err());
    }
}
