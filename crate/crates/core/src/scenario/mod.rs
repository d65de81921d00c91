//! Synthetic accident-prone intersection scenarios.
//!
//! Each episode is a 300-step (30 s at 10 Hz) trial with one ego vehicle, at
//! least two connected collaborators, occluding obstacles and a stream of
//! conflicting traffic. Every vehicle runs an oracle detector with disc
//! occlusion followed by a nearest-neighbour tracker; a time-to-collision
//! expert provides brake/go labels from the full world state.

pub mod expert;
pub mod io;
pub mod route;
mod scripts;
pub mod sensor;
pub mod tracker;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Tick, Vec3, TICK_SECONDS};
use expert::{expert_policy, EgoPlan, ExpertConfig};
use route::Route;
use sensor::{observe, SensorConfig};
use tracker::{track, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Overtaking,
    LeftTurn,
    StreetCrossing,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [
        ScenarioKind::Overtaking,
        ScenarioKind::LeftTurn,
        ScenarioKind::StreetCrossing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Overtaking => "overtaking",
            ScenarioKind::LeftTurn => "left_turn",
            ScenarioKind::StreetCrossing => "street_crossing",
        }
    }

    /// The single high-level command the ego receives in this scenario.
    pub fn command(self) -> Command {
        match self {
            ScenarioKind::Overtaking => Command::ChangeLeft,
            ScenarioKind::LeftTurn => Command::TurnLeft,
            ScenarioKind::StreetCrossing => Command::GoStraight,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ScenarioKind::Overtaking => 0,
            ScenarioKind::LeftTurn => 1,
            ScenarioKind::StreetCrossing => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        ScenarioKind::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown scenario code {code}")))
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "overtaking" => Ok(ScenarioKind::Overtaking),
            "left_turn" => Ok(ScenarioKind::LeftTurn),
            "street_crossing" => Ok(ScenarioKind::StreetCrossing),
            other => Err(Error::Config(format!(
                "unknown scenario `{other}` (expected overtaking, left_turn or street_crossing)"
            ))),
        }
    }
}

/// High-level navigation command, one-hot encoded as the network's side input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    LaneFollow,
    TurnRight,
    TurnLeft,
    GoStraight,
    ChangeLeft,
    ChangeRight,
}

impl Command {
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        use Command::*;
        [LaneFollow, TurnRight, TurnLeft, GoStraight, ChangeLeft, ChangeRight]
            .get(i)
            .copied()
    }

    pub fn one_hot(self) -> [f64; Command::COUNT] {
        let mut v = [0.0; Command::COUNT];
        v[self.index()] = 1.0;
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Brake,
    Go,
}

impl Action {
    /// Class index: 0 = brake (p₁), 1 = go (p₂).
    pub fn class(self) -> usize {
        match self {
            Action::Brake => 0,
            Action::Go => 1,
        }
    }

    pub fn from_class(c: usize) -> Self {
        if c == 0 {
            Action::Brake
        } else {
            Action::Go
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Ego,
    Collaborator,
    Traffic,
    Obstacle,
}

impl ObjectKind {
    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        use ObjectKind::*;
        [Ego, Collaborator, Traffic, Obstacle].get(c as usize).copied()
    }
}

/// Snapshot of one object in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: u32,
    pub kind: ObjectKind,
    pub position: Vec3,
    pub velocity: Vec3,
    pub heading: f64,
    /// Bounding radius used for occlusion.
    pub half_extent: f64,
}

/// One detected object. `truth_id` is the simulator's ground-truth identity,
/// kept for auditing; it is never transmitted or fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub track_id: u32,
    pub position: Vec3,
    pub truth_id: Option<u32>,
}

/// A timestamped set of detections from one vehicle, in that vehicle's
/// sensor frame at capture time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub vehicle_id: u32,
    pub timestamp: Tick,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Simulation step in seconds; fixed to the 10 Hz sensing rate.
    pub timestep: f64,
    pub steps: u32,
    /// Upper bound on any object's speed, m/s.
    pub max_speed: f64,
    /// Spawn conflicting traffic. When false no object ever conflicts with the ego.
    pub hazards: bool,
    pub hazard_count_min: u32,
    pub hazard_count_max: u32,
    pub sensor: SensorConfig,
    pub tracker: TrackerConfig,
    pub expert: ExpertConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            timestep: TICK_SECONDS,
            steps: 300,
            max_speed: 20.0,
            hazards: true,
            hazard_count_min: 4,
            hazard_count_max: 6,
            sensor: SensorConfig::default(),
            tracker: TrackerConfig::default(),
            expert: ExpertConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.timestep - TICK_SECONDS).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "timestep must be {TICK_SECONDS} s, got {}",
                self.timestep
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if self.max_speed <= 0.0 {
            return Err(Error::Config("max_speed must be positive".into()));
        }
        if self.hazard_count_min > self.hazard_count_max {
            return Err(Error::Config("hazard_count_min exceeds hazard_count_max".into()));
        }
        if !(0.0..=1.0).contains(&self.sensor.dropout) || self.sensor.range <= 0.0 {
            return Err(Error::Config("sensor dropout must be in [0,1] and range positive".into()));
        }
        if self.sensor.range > 300.0 {
            return Err(Error::Config("sensor range above 300 m does not fit the wire format".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).into()
    }
}

/// Static description of an object taking part in an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectInfo {
    pub id: u32,
    pub kind: ObjectKind,
    pub half_extent: f64,
    /// Scripted to cross the ego path (absent when hazards are disabled).
    pub hazard: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub heading: f64,
}

/// What one connected vehicle knows at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// GNSS pose in the world frame.
    pub pose: Pose,
    /// Tracked detections in the sensor frame.
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub tick: Tick,
    /// Index-aligned with [`Episode::objects`].
    pub states: Vec<ObjectState>,
    /// Ego arc length along its route.
    pub ego_arc: f64,
    pub action: Action,
    /// Index-aligned with [`Episode::vehicles`].
    pub observations: Vec<Observation>,
}

/// One simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub command: Command,
    pub objects: Vec<ObjectInfo>,
    /// Connected vehicles; the ego comes first.
    pub vehicles: Vec<u32>,
    pub ego_route: Route,
    /// Speed the ego intends to drive at; used by the expert's plan.
    pub ego_cruise_speed: f64,
    pub steps: Vec<Step>,
}

impl Episode {
    pub fn ego_id(&self) -> u32 {
        self.vehicles[0]
    }

    pub fn collaborator_ids(&self) -> &[u32] {
        &self.vehicles[1..]
    }

    pub fn hazard_ids(&self) -> Vec<u32> {
        self.objects.iter().filter(|o| o.hazard).map(|o| o.id).collect()
    }

    pub fn object_index(&self, id: u32) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    /// Full world snapshot at step `k`.
    pub fn world_at(&self, k: usize) -> Vec<WorldObject> {
        self.objects
            .iter()
            .zip(&self.steps[k].states)
            .map(|(info, s)| WorldObject {
                id: info.id,
                kind: info.kind,
                position: s.position,
                velocity: s.velocity,
                heading: s.heading,
                half_extent: info.half_extent,
            })
            .collect()
    }

    pub fn ego_plan(&self, k: usize) -> EgoPlan<'_> {
        EgoPlan {
            route: &self.ego_route,
            arc: self.steps[k].ego_arc,
            speed: self.ego_cruise_speed,
        }
    }

    /// Re-evaluates the expert on the stored world at step `k`.
    pub fn relabel(&self, k: usize) -> Action {
        expert_policy(&self.world_at(k), self.ego_id(), &self.ego_plan(k), &self.config.expert)
    }

    pub fn brake_fraction(&self) -> f64 {
        let brakes = self.steps.iter().filter(|s| s.action == Action::Brake).count();
        brakes as f64 / self.steps.len().max(1) as f64
    }

    /// Observation window of vehicle slot `slot` ending at step `end`
    /// (inclusive), `len` steps long, truncated at the episode start.
    pub fn window(&self, slot: usize, end: usize, len: usize) -> Vec<&Observation> {
        let start = (end + 1).saturating_sub(len);
        self.steps[start..=end]
            .iter()
            .map(|s| &s.observations[slot])
            .collect()
    }
}

fn stream_seed(seed: u64, salt: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(salt.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Runs one trial. Deterministic in `(scenario, seed, config)`.
pub fn simulate_episode(scenario: ScenarioKind, seed: u64, config: &ScenarioConfig) -> Result<Episode> {
    config.validate()?;
    let mut script_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0x5c21_0000 + scenario.code() as u64));
    let script = scripts::build(scenario, config, &mut script_rng);
    for o in &script.objects {
        if o.motion.max_speed() > config.max_speed + 1e-9 {
            return Err(Error::Config(format!(
                "object {} exceeds the configured max speed",
                o.info.id
            )));
        }
    }
    let objects: Vec<ObjectInfo> = script.objects.iter().map(|o| o.info).collect();
    let ego_index = 0;
    let ego_id = objects[ego_index].id;
    let vehicles: Vec<u32> = objects
        .iter()
        .filter(|o| matches!(o.kind, ObjectKind::Ego | ObjectKind::Collaborator))
        .map(|o| o.id)
        .collect();
    debug_assert_eq!(vehicles[0], ego_id);

    let mut sensor_rngs: Vec<ChaCha8Rng> = vehicles
        .iter()
        .map(|&v| ChaCha8Rng::seed_from_u64(stream_seed(seed, 0x5e45_0000 + u64::from(v))))
        .collect();

    let mut steps = Vec::with_capacity(config.steps as usize);
    let mut raw_frames: Vec<Vec<Frame>> = vec![Vec::new(); vehicles.len()];
    let mut poses: Vec<Vec<Pose>> = vec![Vec::new(); vehicles.len()];
    for k in 0..config.steps {
        let tick = Tick(k);
        let t = tick.seconds();
        let kin: Vec<_> = script.objects.iter().map(|o| o.motion.state_at(t)).collect();
        let world: Vec<WorldObject> = script
            .objects
            .iter()
            .zip(&kin)
            .map(|(o, s)| WorldObject {
                id: o.info.id,
                kind: o.info.kind,
                position: s.position,
                velocity: s.velocity,
                heading: s.heading,
                half_extent: o.info.half_extent,
            })
            .collect();
        for (slot, &vid) in vehicles.iter().enumerate() {
            let obj = world.iter().find(|w| w.id == vid).unwrap();
            let pose = Pose::new(obj.position, obj.heading);
            let frame = observe(&world, vid, &pose, tick, &config.sensor, &mut sensor_rngs[slot]);
            raw_frames[slot].push(frame);
            poses[slot].push(pose);
        }
        let plan = EgoPlan {
            route: &script.ego_route,
            arc: kin[ego_index].arc,
            speed: script.ego_cruise_speed,
        };
        let action = expert_policy(&world, ego_id, &plan, &config.expert);
        steps.push(Step {
            tick,
            states: kin
                .iter()
                .map(|s| ObjectState {
                    position: s.position,
                    velocity: s.velocity,
                    heading: s.heading,
                })
                .collect(),
            ego_arc: kin[ego_index].arc,
            action,
            observations: Vec::new(),
        });
    }

    // Each vehicle tracks in a world-referenced frame using its own pose, so
    // that its own motion does not break associations.
    for slot in 0..vehicles.len() {
        let world_frames: Vec<Frame> = raw_frames[slot]
            .iter()
            .zip(&poses[slot])
            .map(|(f, p)| {
                let mut g = f.clone();
                for d in &mut g.detections {
                    d.position = p.to_world(d.position);
                }
                g
            })
            .collect();
        let tracked = track(&world_frames, &config.tracker);
        for (k, (raw, tr)) in raw_frames[slot].iter().zip(tracked).enumerate() {
            let mut frame = raw.clone();
            for (d, t) in frame.detections.iter_mut().zip(&tr.detections) {
                d.track_id = t.track_id;
            }
            steps[k].observations.push(Observation {
                pose: poses[slot][k],
                frame,
            });
        }
    }

    Ok(Episode {
        scenario,
        seed,
        config: config.clone(),
        command: scenario.command(),
        objects,
        vehicles,
        ego_route: script.ego_route,
        ego_cruise_speed: script.ego_cruise_speed,
        steps,
    })
}
