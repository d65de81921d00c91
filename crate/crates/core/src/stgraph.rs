//! Spatiotemporal graphs built from one vehicle's tracked frame window.
//!
//! Nodes are detections; spatial edges join every pair of detections in the
//! same frame (attr = distance in meters); temporal edges join appearances of
//! the same track (attr = time gap in seconds, earlier → later). A missing
//! relation is represented by a missing edge.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Tick, Vec3};
use crate::scenario::Frame;

/// Longest observation window a vehicle shares.
pub const MAX_WINDOW: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StNode {
    pub node_id: u32,
    pub position: Vec3,
    pub timestamp: Tick,
    pub track_id: u32,
    pub is_ego: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Spatial,
    Temporal,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 2] = [EdgeKind::Spatial, EdgeKind::Temporal];

    pub fn index(self) -> usize {
        match self {
            EdgeKind::Spatial => 0,
            EdgeKind::Temporal => 1,
        }
    }
}

/// `src`/`dst` index into the node list. Spatial edges are undirected and
/// stored once with `src < dst`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StEdge {
    pub src: u32,
    pub dst: u32,
    pub kind: EdgeKind,
    pub attr: f64,
}

/// How densely appearances of one track are linked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    /// Consecutive appearances only; each track becomes a path.
    #[default]
    Consecutive,
    /// Every earlier/later pair of appearances.
    AllPairs,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpatioTemporalGraph {
    pub nodes: Vec<StNode>,
    pub edges: Vec<StEdge>,
    pub source_vehicle: u32,
    /// First and last frame timestamps; `None` for an empty window.
    pub window: Option<(Tick, Tick)>,
}

impl SpatioTemporalGraph {
    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    pub fn edges_of(&self, kind: EdgeKind) -> impl Iterator<Item = &StEdge> {
        self.edges.iter().filter(move |e| e.kind == kind)
    }
}

pub(crate) fn check_monotone(frames: &[Frame]) -> Result<()> {
    for w in frames.windows(2) {
        if w[1].timestamp <= w[0].timestamp {
            return Err(Error::Input(format!(
                "frame timestamps not strictly increasing ({} then {})",
                w[0].timestamp.0, w[1].timestamp.0
            )));
        }
    }
    Ok(())
}

/// Pushes the complete spatial graph over `members` (node indices).
pub(crate) fn connect_complete(nodes: &[StNode], members: &[u32], edges: &mut Vec<StEdge>) {
    for (i, &a) in members.iter().enumerate() {
        for &b in &members[i + 1..] {
            let (src, dst) = if a < b { (a, b) } else { (b, a) };
            edges.push(StEdge {
                src,
                dst,
                kind: EdgeKind::Spatial,
                attr: nodes[a as usize].position.distance(nodes[b as usize].position),
            });
        }
    }
}

/// Pushes temporal edges for each track given its appearances in time order.
pub(crate) fn connect_tracks(
    nodes: &[StNode],
    tracks: &BTreeMap<u32, Vec<u32>>,
    mode: TemporalMode,
    edges: &mut Vec<StEdge>,
) {
    let mut link = |a: u32, b: u32| {
        edges.push(StEdge {
            src: a,
            dst: b,
            kind: EdgeKind::Temporal,
            attr: nodes[b as usize].timestamp.since(nodes[a as usize].timestamp),
        })
    };
    for appearances in tracks.values() {
        match mode {
            TemporalMode::Consecutive => {
                for w in appearances.windows(2) {
                    link(w[0], w[1]);
                }
            }
            TemporalMode::AllPairs => {
                for (i, &a) in appearances.iter().enumerate() {
                    for &b in &appearances[i + 1..] {
                        link(a, b);
                    }
                }
            }
        }
    }
}

/// Builds the graph of a tracked window. Node `i` is the `i`-th detection in
/// frame order, so the node order follows the input exactly.
pub fn build_graph(frames: &[Frame], mode: TemporalMode) -> Result<SpatioTemporalGraph> {
    if frames.len() > MAX_WINDOW {
        return Err(Error::Input(format!(
            "window of {} frames exceeds {MAX_WINDOW}",
            frames.len()
        )));
    }
    check_monotone(frames)?;
    let source_vehicle = frames.first().map_or(0, |f| f.vehicle_id);
    let mut nodes: Vec<StNode> = Vec::new();
    let mut edges = Vec::new();
    let mut tracks: BTreeMap<u32, Vec<u32>> = BTreeMap::new();

    for frame in frames {
        if frame.vehicle_id != source_vehicle {
            return Err(Error::Input("window mixes frames of several vehicles".into()));
        }
        let first = nodes.len() as u32;
        for d in &frame.detections {
            if !d.position.is_finite() {
                return Err(Error::Input("non-finite detection position".into()));
            }
            let id = nodes.len() as u32;
            let slot = tracks.entry(d.track_id).or_default();
            if slot.last().is_some_and(|&n| nodes[n as usize].timestamp == frame.timestamp) {
                return Err(Error::Input(format!(
                    "track id {} appears twice at tick {}",
                    d.track_id, frame.timestamp.0
                )));
            }
            slot.push(id);
            nodes.push(StNode {
                node_id: id,
                position: d.position,
                timestamp: frame.timestamp,
                track_id: d.track_id,
                is_ego: false,
            });
        }
        let members: Vec<u32> = (first..nodes.len() as u32).collect();
        connect_complete(&nodes, &members, &mut edges);
    }
    connect_tracks(&nodes, &tracks, mode, &mut edges);

    Ok(SpatioTemporalGraph {
        nodes,
        edges,
        source_vehicle,
        window: frames.first().zip(frames.last()).map(|(a, b)| (a.timestamp, b.timestamp)),
    })
}

/// Re-expresses every frame of a window in the sensor frame of the last
/// pose, so that the vehicle's own motion during the window does not show
/// up as apparent object motion. `poses` is index-aligned with `frames`.
pub fn align_window(frames: &[Frame], poses: &[Pose]) -> Vec<Frame> {
    assert_eq!(frames.len(), poses.len(), "one pose per frame");
    let Some(last) = poses.last() else {
        return Vec::new();
    };
    frames
        .iter()
        .zip(poses)
        .map(|(f, p)| {
            let motion = p.relative_to(last);
            let mut g = f.clone();
            for d in &mut g.detections {
                d.position = motion.apply(d.position);
            }
            g
        })
        .collect()
}
