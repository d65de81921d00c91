//! Fusion of the ego graph with collaborator graphs into one decision graph
//! expressed in the ego frame.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Tick, Vec3};
use crate::stgraph::{connect_complete, EdgeKind, SpatioTemporalGraph, StEdge, StNode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    /// Collaborators farther than this from the ego are ignored, meters.
    pub radius: f64,
    /// Same-timestamp nodes from different vehicles closer than this are one object.
    pub coalesce_distance: f64,
    /// Nodes this close to the ego origin are dropped (the ego itself).
    pub prune_radius: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            radius: 150.0,
            coalesce_distance: 1.0,
            prune_radius: 2.0,
        }
    }
}

/// A collaborator's graph with the pose it was expressed in, if known.
#[derive(Debug, Clone, Copy)]
pub struct CollaboratorInput<'a> {
    pub graph: &'a SpatioTemporalGraph,
    pub pose: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MergeWarning {
    MissingPose { vehicle: u32 },
    OutOfRange { vehicle: u32, distance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedGraph {
    pub nodes: Vec<StNode>,
    pub edges: Vec<StEdge>,
    pub ego_node: u32,
    /// Sorted ids of the vehicles that observed each node.
    pub provenance: Vec<Vec<u32>>,
    pub decision_tick: Tick,
    /// Collaborators whose graphs were merged.
    pub collaborators: Vec<u32>,
    pub warnings: Vec<MergeWarning>,
}

impl MergedGraph {
    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// The merged content as a plain graph without the ego node.
    pub fn without_ego(&self) -> SpatioTemporalGraph {
        let e = self.ego_node;
        let shift = |i: u32| if i > e { i - 1 } else { i };
        let nodes = self
            .nodes
            .iter()
            .filter(|n| !n.is_ego)
            .enumerate()
            .map(|(i, n)| StNode { node_id: i as u32, ..*n })
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|x| x.src != e && x.dst != e)
            .map(|x| StEdge {
                src: shift(x.src),
                dst: shift(x.dst),
                ..*x
            })
            .collect();
        SpatioTemporalGraph {
            nodes,
            edges,
            source_vehicle: self.provenance.first().and_then(|p| p.first()).copied().unwrap_or(0),
            window: None,
        }
    }
}

/// Maps a graph expressed in `source_pose`'s frame into `ego_pose`'s frame.
pub fn transform_graph(g: &SpatioTemporalGraph, source_pose: &Pose, ego_pose: &Pose) -> SpatioTemporalGraph {
    let motion = source_pose.relative_to(ego_pose);
    let mut out = g.clone();
    for n in &mut out.nodes {
        n.position = motion.apply(n.position);
    }
    out
}

struct Cluster {
    sum: Vec3,
    members: usize,
    timestamp: Tick,
    track_id: u32,
    vehicles: BTreeSet<u32>,
}

impl Cluster {
    fn centroid(&self) -> Vec3 {
        self.sum * (1.0 / self.members as f64)
    }
}

/// Builds the decision graph at `decision_tick` from the ego graph (already
/// in the ego frame) and the collaborators' graphs.
///
/// Merged nodes keep the track id of their first member; track ids are only
/// meaningful per vehicle, the temporal edges carry the association.
pub fn merge(
    ego: &SpatioTemporalGraph,
    ego_pose: &Pose,
    decision_tick: Tick,
    collaborators: &[CollaboratorInput<'_>],
    cfg: &MergeConfig,
) -> MergedGraph {
    let mut warnings = Vec::new();
    let mut sources: Vec<(u32, SpatioTemporalGraph)> = vec![(ego.source_vehicle, ego.clone())];
    let mut merged_ids = Vec::new();
    for c in collaborators {
        let vehicle = c.graph.source_vehicle;
        let Some(pose) = c.pose else {
            log::warn!("collaborator {vehicle} has no pose; skipped");
            warnings.push(MergeWarning::MissingPose { vehicle });
            continue;
        };
        let distance = pose.planar_distance(ego_pose);
        if distance > cfg.radius {
            warnings.push(MergeWarning::OutOfRange { vehicle, distance });
            continue;
        }
        merged_ids.push(vehicle);
        sources.push((vehicle, transform_graph(c.graph, &pose, ego_pose)));
    }

    // Clusters by timestamp; each source node is assigned to one cluster.
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut by_tick: BTreeMap<Tick, Vec<usize>> = BTreeMap::new();
    let mut assignment: Vec<Vec<usize>> = Vec::with_capacity(sources.len());
    for (vehicle, g) in &sources {
        let mut assigned = Vec::with_capacity(g.nodes.len());
        for n in &g.nodes {
            let bucket = by_tick.entry(n.timestamp).or_default();
            let mut best: Option<(f64, usize)> = None;
            for &ci in bucket.iter() {
                let c = &clusters[ci];
                if c.vehicles.contains(vehicle) {
                    continue;
                }
                let d = c.centroid().distance(n.position);
                if d < cfg.coalesce_distance && best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, ci));
                }
            }
            let ci = match best {
                Some((_, ci)) => {
                    let c = &mut clusters[ci];
                    c.sum = c.sum + n.position;
                    c.members += 1;
                    c.vehicles.insert(*vehicle);
                    ci
                }
                None => {
                    clusters.push(Cluster {
                        sum: n.position,
                        members: 1,
                        timestamp: n.timestamp,
                        track_id: n.track_id,
                        vehicles: BTreeSet::from([*vehicle]),
                    });
                    bucket.push(clusters.len() - 1);
                    clusters.len() - 1
                }
            };
            assigned.push(ci);
        }
        assignment.push(assigned);
    }

    // Ego node first, then surviving clusters in creation order.
    let mut nodes = vec![StNode {
        node_id: 0,
        position: Vec3::ZERO,
        timestamp: decision_tick,
        track_id: 0,
        is_ego: true,
    }];
    let mut provenance = vec![vec![ego.source_vehicle]];
    let mut index: Vec<Option<u32>> = vec![None; clusters.len()];
    for (ci, c) in clusters.iter().enumerate() {
        let p = c.centroid();
        if p.norm() <= cfg.prune_radius {
            continue;
        }
        let id = nodes.len() as u32;
        index[ci] = Some(id);
        nodes.push(StNode {
            node_id: id,
            position: p,
            timestamp: c.timestamp,
            track_id: c.track_id,
            is_ego: false,
        });
        provenance.push(c.vehicles.iter().copied().collect());
    }

    let mut edges = Vec::new();
    let mut per_tick: BTreeMap<Tick, Vec<u32>> = BTreeMap::new();
    for n in &nodes[1..] {
        per_tick.entry(n.timestamp).or_default().push(n.node_id);
    }
    for members in per_tick.values() {
        connect_complete(&nodes, members, &mut edges);
    }

    let mut seen = BTreeSet::new();
    for ((_, g), assigned) in sources.iter().zip(&assignment) {
        for e in g.edges.iter().filter(|e| e.kind == EdgeKind::Temporal) {
            let (Some(a), Some(b)) = (index[assigned[e.src as usize]], index[assigned[e.dst as usize]]) else {
                continue;
            };
            if a != b && seen.insert((a, b)) {
                edges.push(StEdge {
                    src: a,
                    dst: b,
                    kind: EdgeKind::Temporal,
                    attr: nodes[b as usize].timestamp.since(nodes[a as usize].timestamp),
                });
            }
        }
    }

    for n in &nodes[1..] {
        edges.push(StEdge {
            src: 0,
            dst: n.node_id,
            kind: EdgeKind::Spatial,
            attr: n.position.norm(),
        });
    }

    MergedGraph {
        nodes,
        edges,
        ego_node: 0,
        provenance,
        decision_tick,
        collaborators: merged_ids,
        warnings,
    }
}
