//! Network-side view of a merged graph: scaled node inputs and per-type
//! neighbourhoods in compressed sparse row form.

use serde::{Deserialize, Serialize};

use super::params::{INPUT_DIM, TYPES};
use crate::merge::MergedGraph;
use crate::scenario::Command;
use crate::stgraph::EdgeKind;

/// Fixed input scaling applied before the network sees a graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureScale {
    /// Positions and spatial edge attributes are divided by this, meters.
    pub position: f64,
    /// Temporal edge attributes are divided by this, seconds.
    pub time: f64,
}

impl Default for FeatureScale {
    fn default() -> Self {
        FeatureScale {
            position: 30.0,
            time: 1.0,
        }
    }
}

/// Neighbour lists of one edge type. Both endpoints of every edge see each
/// other. Spatial attributes are the same from both ends; a temporal edge
/// from an earlier to a later node carries `+gap` at the later node and
/// `-gap` at the earlier one, so each node sees which neighbours are older.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Adjacency {
    pub start: Vec<u32>,
    pub neighbor: Vec<u32>,
    pub attr: Vec<f64>,
}

impl Adjacency {
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.start[i] as usize..self.start[i + 1] as usize
    }

    pub fn degree(&self, i: usize) -> usize {
        (self.start[i + 1] - self.start[i]) as usize
    }

    pub fn entries(&self) -> usize {
        self.neighbor.len()
    }

    fn from_edges(n: usize, edges: &[(u32, u32, f64)], signed: bool) -> Self {
        let mut deg = vec![0u32; n + 1];
        for &(a, b, _) in edges {
            deg[a as usize + 1] += 1;
            deg[b as usize + 1] += 1;
        }
        for i in 0..n {
            deg[i + 1] += deg[i];
        }
        let mut fill = deg.clone();
        let mut neighbor = vec![0u32; 2 * edges.len()];
        let mut attr = vec![0.0; 2 * edges.len()];
        for &(a, b, e) in edges {
            let back = if signed { -e } else { e };
            for (x, y, v) in [(a, b, back), (b, a, e)] {
                let k = fill[x as usize] as usize;
                neighbor[k] = y;
                attr[k] = v;
                fill[x as usize] += 1;
            }
        }
        Adjacency {
            start: deg,
            neighbor,
            attr,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub inputs: Vec<[f64; INPUT_DIM]>,
    pub ego: usize,
    /// Indexed by [`EdgeKind::index`].
    pub adjacency: [Adjacency; TYPES],
    /// Nodes incident to at least one edge of each type.
    pub members: [Vec<u32>; TYPES],
    pub command: Command,
}

impl GraphInput {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Whether any edge of type `t` exists.
    pub fn active(&self, t: usize) -> bool {
        !self.members[t].is_empty()
    }

    /// Types whose branches run. With no edges at all the spatial branch
    /// still runs on the self term alone.
    pub fn active_types(&self) -> [bool; TYPES] {
        let a = [self.active(0), self.active(1)];
        if a == [false, false] {
            [true, false]
        } else {
            a
        }
    }

    /// Builds the input from raw parts: node inputs and edges
    /// `(a, b, scaled attr)` per type. Temporal edges run from the earlier
    /// node `a` to the later node `b`.
    pub fn from_parts(
        inputs: Vec<[f64; INPUT_DIM]>,
        ego: usize,
        edges: [&[(u32, u32, f64)]; TYPES],
        command: Command,
    ) -> Self {
        let n = inputs.len();
        let adjacency = [
            Adjacency::from_edges(n, edges[0], false),
            Adjacency::from_edges(n, edges[1], true),
        ];
        let members = [0, 1].map(|t| {
            (0..n as u32)
                .filter(|&i| adjacency[t].degree(i as usize) > 0)
                .collect::<Vec<_>>()
        });
        GraphInput {
            inputs,
            ego,
            adjacency,
            members,
            command,
        }
    }

    pub fn from_merged(g: &MergedGraph, command: Command, scale: &FeatureScale) -> Self {
        let inputs = g
            .nodes
            .iter()
            .map(|n| {
                [
                    n.position.x / scale.position,
                    n.position.y / scale.position,
                    n.position.z / scale.position,
                    if n.is_ego { 1.0 } else { 0.0 },
                ]
            })
            .collect();
        let mut edges: [Vec<(u32, u32, f64)>; TYPES] = [Vec::new(), Vec::new()];
        for e in &g.edges {
            let attr = match e.kind {
                EdgeKind::Spatial => e.attr / scale.position,
                EdgeKind::Temporal => e.attr / scale.time,
            };
            edges[e.kind.index()].push((e.src, e.dst, attr));
        }
        Self::from_parts(inputs, g.ego_node as usize, [&edges[0], &edges[1]], command)
    }

    /// Same graph with nodes relabelled: new node `perm[i]` is old node `i`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.len();
        let mut inputs = vec![[0.0; INPUT_DIM]; n];
        for (i, &p) in perm.iter().enumerate() {
            inputs[p] = self.inputs[i];
        }
        let edges = [0, 1].map(|t| {
            let adj = &self.adjacency[t];
            let mut v = Vec::new();
            // the entry at i for neighbour j holds the attribute of the
            // edge j -> i
            for i in 0..n {
                for k in adj.range(i) {
                    let j = adj.neighbor[k] as usize;
                    if i < j {
                        v.push((perm[j] as u32, perm[i] as u32, adj.attr[k]));
                    }
                }
            }
            v
        });
        Self::from_parts(inputs, perm[self.ego], [&edges[0], &edges[1]], self.command)
    }
}
