//! Turning episodes into labelled decision graphs.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{self, ChannelConfig};
use crate::error::{Error, Result};
use crate::hgat::{FeatureScale, GraphInput, Sample};
use crate::merge::{merge, CollaboratorInput, MergeConfig, MergedGraph};
use crate::scenario::{Episode, Frame};
use crate::stgraph::{align_window, build_graph, SpatioTemporalGraph, TemporalMode, MAX_WINDOW};

/// Which information the ego may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// Ego only, current frame only.
    #[serde(rename = "nt-ns")]
    NtNs,
    /// Ego only, full window.
    #[serde(rename = "t-ns")]
    TNs,
    /// Shared, current frame only.
    #[serde(rename = "nt-s")]
    NtS,
    /// Shared, full window.
    #[serde(rename = "full")]
    Full,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::NtNs, Mode::TNs, Mode::NtS, Mode::Full];

    pub fn name(self) -> &'static str {
        match self {
            Mode::NtNs => "nt-ns",
            Mode::TNs => "t-ns",
            Mode::NtS => "nt-s",
            Mode::Full => "full",
        }
    }

    pub fn temporal(self) -> bool {
        matches!(self, Mode::TNs | Mode::Full)
    }

    pub fn sharing(self) -> bool {
        matches!(self, Mode::NtS | Mode::Full)
    }

    pub fn window(self) -> usize {
        if self.temporal() {
            MAX_WINDOW
        } else {
            1
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "full" => Ok(Mode::Full),
            "nt-ns" | "ntns" => Ok(Mode::NtNs),
            "t-ns" | "tns" => Ok(Mode::TNs),
            "nt-s" | "nts" => Ok(Mode::NtS),
            _ => Err(Error::Config(format!(
                "unknown mode `{s}` (expected full, nt-ns, t-ns or nt-s)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Frames per shared window in temporal modes.
    pub window: usize,
    /// First decision step; earlier steps lack a full window of history.
    pub first_step: usize,
    /// Use every `stride`-th decision step.
    pub stride: usize,
    pub temporal_mode: TemporalMode,
    pub merge: MergeConfig,
    pub scale: FeatureScale,
    /// Seed of the per-link packet-loss streams.
    pub channel_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            window: MAX_WINDOW,
            first_step: MAX_WINDOW - 1,
            stride: 1,
            temporal_mode: TemporalMode::Consecutive,
            merge: MergeConfig::default(),
            scale: FeatureScale::default(),
            channel_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window > MAX_WINDOW {
            return Err(Error::Config(format!("window must be in 1..={MAX_WINDOW}")));
        }
        if self.first_step + 1 < self.window {
            return Err(Error::Config("first_step leaves less history than one window".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        Ok(())
    }

    fn window_for(&self, mode: Mode) -> usize {
        if mode.temporal() {
            self.window
        } else {
            1
        }
    }
}

/// Packet sizes seen while assembling a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PacketStats {
    pub sent: usize,
    pub lost: usize,
    pub total_bytes: usize,
    pub max_bytes: usize,
    pub max_latency_s: f64,
}

impl PacketStats {
    pub fn mean_bytes(&self) -> f64 {
        if self.sent == 0 {
            0.0
        } else {
            self.total_bytes as f64 / self.sent as f64
        }
    }

    fn absorb(&mut self, o: &PacketStats) {
        self.sent += o.sent;
        self.lost += o.lost;
        self.total_bytes += o.total_bytes;
        self.max_bytes = self.max_bytes.max(o.max_bytes);
        self.max_latency_s = self.max_latency_s.max(o.max_latency_s);
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// (scenario seed, step) of each sample.
    pub origin: Vec<(u64, usize)>,
    pub packets: PacketStats,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn brake_fraction(&self) -> f64 {
        let b = self
            .samples
            .iter()
            .filter(|s| s.label == crate::scenario::Action::Brake)
            .count();
        b as f64 / self.len().max(1) as f64
    }
}

fn link_seed(channel_seed: u64, episode: &Episode, sender: u32, receiver: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(b"link");
    h.update(channel_seed.to_le_bytes());
    h.update([episode.scenario.code()]);
    h.update(episode.seed.to_le_bytes());
    h.update(sender.to_le_bytes());
    h.update(receiver.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// The window of vehicle `slot` ending at `step`, expressed in its sensor
/// frame at `step`, with that pose.
pub fn vehicle_window(ep: &Episode, slot: usize, step: usize, len: usize) -> (Vec<Frame>, crate::geometry::Pose) {
    let obs = ep.window(slot, step, len);
    let frames: Vec<Frame> = obs.iter().map(|o| o.frame.clone()).collect();
    let poses: Vec<_> = obs.iter().map(|o| o.pose).collect();
    (align_window(&frames, &poses), *poses.last().unwrap())
}

/// Timing of one decision, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionTiming {
    pub build_ms: f64,
    pub merge_ms: f64,
    pub nodes: usize,
}

/// One decision of one episode: per-vehicle graphs, packet exchange and merge.
pub struct DecisionBuilder<'a> {
    pub episode: &'a Episode,
    pub mode: Mode,
    pub channel: &'a ChannelConfig,
    pub config: &'a DatasetConfig,
}

impl DecisionBuilder<'_> {
    /// Builds the merged graph at `step`. `rngs` holds one loss stream per
    /// collaborator slot.
    pub fn merged(&self, step: usize, rngs: &mut [ChaCha8Rng], stats: &mut PacketStats) -> Result<(MergedGraph, DecisionTiming)> {
        let ep = self.episode;
        let len = self.config.window_for(self.mode);
        let t0 = Instant::now();
        let (ego_frames, ego_pose) = vehicle_window(ep, 0, step, len);
        let ego_graph = build_graph(&ego_frames, self.config.temporal_mode)?;
        let mut collab_graphs: Vec<(SpatioTemporalGraph, crate::geometry::Pose)> = Vec::new();
        if self.mode.sharing() {
            for (c, rng) in (1..ep.vehicles.len()).zip(rngs.iter_mut()) {
                let vid = ep.vehicles[c];
                let (frames, pose) = vehicle_window(ep, c, step, len);
                let packet = codec::encode(vid, &frames, &pose)?;
                let size = codec::measure_ps(&packet);
                let tx = codec::transmit(&packet, self.channel, rng)?;
                stats.sent += 1;
                stats.total_bytes += size;
                stats.max_bytes = stats.max_bytes.max(size);
                stats.max_latency_s = stats.max_latency_s.max(tx.latency);
                let Some(bytes) = tx.delivered else {
                    stats.lost += 1;
                    continue;
                };
                let decoded = codec::decode(bytes)?;
                let g = build_graph(&decoded.frames, self.config.temporal_mode)?;
                collab_graphs.push((g, decoded.pose));
            }
        }
        let build_ms = t0.elapsed().as_secs_f64() * 1e3;
        let t1 = Instant::now();
        let inputs: Vec<CollaboratorInput<'_>> = collab_graphs
            .iter()
            .map(|(g, p)| CollaboratorInput { graph: g, pose: Some(*p) })
            .collect();
        let tick = ep.steps[step].tick;
        let m = merge(&ego_graph, &ego_pose, tick, &inputs, &self.config.merge);
        let merge_ms = t1.elapsed().as_secs_f64() * 1e3;
        let nodes = m.nodes.len();
        Ok((m, DecisionTiming { build_ms, merge_ms, nodes }))
    }

    pub fn link_rngs(&self) -> Vec<ChaCha8Rng> {
        let ep = self.episode;
        ep.collaborator_ids()
            .iter()
            .map(|&c| ChaCha8Rng::seed_from_u64(link_seed(self.config.channel_seed, ep, c, ep.ego_id())))
            .collect()
    }

    /// Advances the loss streams past a step that is not assembled; the
    /// channel takes exactly one draw per packet.
    pub fn skip_step(&self, rngs: &mut [ChaCha8Rng]) {
        if self.mode.sharing() {
            for rng in rngs {
                let _ = rng.gen_bool(self.channel.loss_probability);
            }
        }
    }

    /// Decision steps used for this episode.
    pub fn steps(&self) -> impl Iterator<Item = usize> {
        (self.config.first_step..self.episode.steps.len()).step_by(self.config.stride)
    }
}

/// Builds labelled samples for every decision step of every episode.
pub fn assemble_dataset(episodes: &[Episode], mode: Mode, channel: &ChannelConfig, config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    channel.validate()?;
    let parts: Vec<Result<Dataset>> = episodes
        .par_iter()
        .map(|ep| {
            let b = DecisionBuilder {
                episode: ep,
                mode,
                channel,
                config,
            };
            let mut rngs = b.link_rngs();
            let mut d = Dataset::default();
            // packets are exchanged at every step, so the loss streams do not
            // depend on the stride
            for step in config.first_step..ep.steps.len() {
                if (step - config.first_step) % config.stride != 0 {
                    b.skip_step(&mut rngs);
                    continue;
                }
                let mut stats = PacketStats::default();
                let (m, _) = b.merged(step, &mut rngs, &mut stats)?;
                d.packets.absorb(&stats);
                d.samples.push(Sample {
                    graph: GraphInput::from_merged(&m, ep.command, &config.scale),
                    label: ep.steps[step].action,
                });
                d.origin.push((ep.seed, step));
            }
            Ok(d)
        })
        .collect();
    let mut out = Dataset::default();
    for p in parts {
        let p = p?;
        out.samples.extend(p.samples);
        out.origin.extend(p.origin);
        out.packets.absorb(&p.packets);
    }
    Ok(out)
}
