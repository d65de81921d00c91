use coopdrive::codec::{decode, encode, measure_ps};
use coopdrive::geometry::{Pose, Tick, Vec3};
use coopdrive::scenario::{Detection, Frame};
use coopdrive::stgraph::{build_graph, EdgeKind, TemporalMode};

fn fixture() -> Vec<u8> {
    let text = include_str!("fixtures/packet_v1.hex");
    let digits: String = text
        .lines()
        .map(|l| l.split('#').next().unwrap())
        .flat_map(|l| l.split_whitespace())
        .collect();
    hex::decode(digits).unwrap()
}

fn det(track_id: u32, x: f64, y: f64, z: f64) -> Detection {
    Detection {
        track_id,
        position: Vec3::new(x, y, z),
        truth_id: None,
    }
}

fn frames() -> Vec<Frame> {
    vec![
        Frame {
            vehicle_id: 7,
            timestamp: Tick(1234),
            detections: vec![det(3, 1.23, -5.68, 0.5), det(9, 100.0, 0.0, -1.0)],
        },
        Frame {
            vehicle_id: 7,
            timestamp: Tick(1236),
            detections: vec![det(3, 1.5, -5.5, 0.5)],
        },
    ]
}

#[test]
fn golden_packet_decodes_to_documented_fields() {
    let bytes = fixture();
    assert_eq!(measure_ps(&bytes), 52);
    let w = decode(&bytes).unwrap();
    assert_eq!(w.vehicle_id, 7);
    assert_eq!((w.pose.position.x, w.pose.position.y, w.pose.position.z), (10.5, -2.0, 0.0));
    assert!((w.pose.yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    assert_eq!(w.frames, frames());
}

#[test]
fn golden_packet_is_what_the_encoder_writes() {
    let pose = Pose::new(Vec3::new(10.5, -2.0, 0.0), std::f64::consts::FRAC_PI_2);
    assert_eq!(encode(7, &frames(), &pose).unwrap(), fixture());
}

#[test]
fn golden_packet_rebuilds_graph() {
    let g = build_graph(&decode(&fixture()).unwrap().frames, TemporalMode::Consecutive).unwrap();
    assert_eq!(g.nodes.len(), 3);
    assert_eq!(g.count(EdgeKind::Spatial), 1);
    let t: Vec<_> = g.edges_of(EdgeKind::Temporal).collect();
    assert_eq!(t.len(), 1);
    assert!((t[0].attr - 0.2).abs() < 1e-12);
}

#[test]
fn every_truncation_of_the_golden_packet_is_rejected() {
    let bytes = fixture();
    for n in 0..bytes.len() {
        assert!(decode(&bytes[..n]).is_err(), "prefix of {n} bytes decoded");
    }
}
