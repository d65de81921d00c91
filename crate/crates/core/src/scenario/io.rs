//! Episode files.
//!
//! Binary layout, little-endian throughout, no padding:
//!
//! ```text
//! magic            4  b"CDEP"
//! version          u16 (= 1)
//! scenario         u8  (0 overtaking, 1 left_turn, 2 street_crossing)
//! command          u8  (index into the six commands)
//! seed             u64
//! config_hash      32  SHA-256 of the config JSON below
//! config_len       u32
//! config_json      config_len bytes (UTF-8)
//! object_count     u32
//!   id u32, kind u8, hazard u8, half_extent f64
//! vehicle_count    u8
//!   vehicle id u32 (ego first)
//! ego_cruise       f64
//! route_len        u32
//!   x f64, y f64
//! step_count       u32
//! per step:
//!   tick u32, ego_arc f64, action u8 (0 brake, 1 go)
//!   per object: px py pz vx vy vz heading (7 × f64)
//!   per vehicle: pose px py pz yaw (4 × f64), detection_count u32,
//!     per detection: track_id u32, x y z (3 × f64), truth_id u32 (u32::MAX = none)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::route::Route;
use super::{
    Action, Command, Detection, Episode, Frame, ObjectInfo, ObjectKind, ObjectState, Observation,
    ScenarioConfig, ScenarioKind, Step,
};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Tick, Vec3};

pub const EPISODE_MAGIC: &[u8; 4] = b"CDEP";
pub const EPISODE_VERSION: u16 = 1;
pub const EPISODE_EXTENSION: &str = "cdep";

fn write_vec3<W: Write>(w: &mut W, v: Vec3) -> std::io::Result<()> {
    w.write_f64::<LE>(v.x)?;
    w.write_f64::<LE>(v.y)?;
    w.write_f64::<LE>(v.z)
}

fn read_vec3<R: Read>(r: &mut R) -> std::io::Result<Vec3> {
    Ok(Vec3::new(r.read_f64::<LE>()?, r.read_f64::<LE>()?, r.read_f64::<LE>()?))
}

impl Episode {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(EPISODE_MAGIC)?;
        w.write_u16::<LE>(EPISODE_VERSION)?;
        w.write_u8(self.scenario.code())?;
        w.write_u8(self.command.index() as u8)?;
        w.write_u64::<LE>(self.seed)?;
        w.write_all(&self.config.hash())?;
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        w.write_u32::<LE>(json.len() as u32)?;
        w.write_all(&json)?;

        w.write_u32::<LE>(self.objects.len() as u32)?;
        for o in &self.objects {
            w.write_u32::<LE>(o.id)?;
            w.write_u8(o.kind.code())?;
            w.write_u8(u8::from(o.hazard))?;
            w.write_f64::<LE>(o.half_extent)?;
        }
        w.write_u8(self.vehicles.len() as u8)?;
        for &v in &self.vehicles {
            w.write_u32::<LE>(v)?;
        }
        w.write_f64::<LE>(self.ego_cruise_speed)?;
        let pts = self.ego_route.points();
        w.write_u32::<LE>(pts.len() as u32)?;
        for p in pts {
            w.write_f64::<LE>(p[0])?;
            w.write_f64::<LE>(p[1])?;
        }

        w.write_u32::<LE>(self.steps.len() as u32)?;
        for s in &self.steps {
            w.write_u32::<LE>(s.tick.0)?;
            w.write_f64::<LE>(s.ego_arc)?;
            w.write_u8(s.action.class() as u8)?;
            for st in &s.states {
                write_vec3(w, st.position)?;
                write_vec3(w, st.velocity)?;
                w.write_f64::<LE>(st.heading)?;
            }
            for o in &s.observations {
                write_vec3(w, o.pose.position)?;
                w.write_f64::<LE>(o.pose.yaw)?;
                w.write_u32::<LE>(o.frame.detections.len() as u32)?;
                for d in &o.frame.detections {
                    w.write_u32::<LE>(d.track_id)?;
                    write_vec3(w, d.position)?;
                    w.write_u32::<LE>(d.truth_id.unwrap_or(u32::MAX))?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Episode> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != EPISODE_MAGIC {
            return Err(Error::Input("not an episode file (bad magic)".into()));
        }
        let version = r.read_u16::<LE>()?;
        if version != EPISODE_VERSION {
            return Err(Error::UnsupportedVersion {
                found: u32::from(version),
                expected: u32::from(EPISODE_VERSION),
            });
        }
        let scenario = ScenarioKind::from_code(r.read_u8()?)?;
        let command = Command::from_index(r.read_u8()? as usize)
            .ok_or_else(|| Error::Input("bad command code".into()))?;
        let seed = r.read_u64::<LE>()?;
        let mut hash = [0u8; 32];
        r.read_exact(&mut hash)?;
        let len = r.read_u32::<LE>()? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let config: ScenarioConfig = serde_json::from_slice(&json)
            .map_err(|e| Error::Input(format!("episode config: {e}")))?;
        if config.hash() != hash {
            return Err(Error::Input("episode config hash mismatch".into()));
        }

        let n_obj = r.read_u32::<LE>()? as usize;
        let mut objects = Vec::with_capacity(n_obj);
        for _ in 0..n_obj {
            let id = r.read_u32::<LE>()?;
            let kind = ObjectKind::from_code(r.read_u8()?)
                .ok_or_else(|| Error::Input("bad object kind".into()))?;
            let hazard = r.read_u8()? != 0;
            let half_extent = r.read_f64::<LE>()?;
            objects.push(ObjectInfo {
                id,
                kind,
                half_extent,
                hazard,
            });
        }
        let n_veh = r.read_u8()? as usize;
        let vehicles = (0..n_veh)
            .map(|_| r.read_u32::<LE>())
            .collect::<std::io::Result<Vec<_>>>()?;
        if vehicles.is_empty() {
            return Err(Error::Input("episode without vehicles".into()));
        }
        let ego_cruise_speed = r.read_f64::<LE>()?;
        let n_pts = r.read_u32::<LE>()? as usize;
        if n_pts < 2 {
            return Err(Error::Input("ego route needs two points".into()));
        }
        let mut pts = Vec::with_capacity(n_pts);
        for _ in 0..n_pts {
            pts.push([r.read_f64::<LE>()?, r.read_f64::<LE>()?]);
        }
        let ego_route = Route::new(pts);

        let n_steps = r.read_u32::<LE>()? as usize;
        let mut steps = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let tick = Tick(r.read_u32::<LE>()?);
            let ego_arc = r.read_f64::<LE>()?;
            let action = match r.read_u8()? {
                0 => Action::Brake,
                1 => Action::Go,
                other => return Err(Error::Input(format!("bad action code {other}"))),
            };
            let mut states = Vec::with_capacity(n_obj);
            for _ in 0..n_obj {
                states.push(ObjectState {
                    position: read_vec3(r)?,
                    velocity: read_vec3(r)?,
                    heading: r.read_f64::<LE>()?,
                });
            }
            let mut observations = Vec::with_capacity(n_veh);
            for &vid in &vehicles {
                let position = read_vec3(r)?;
                let yaw = r.read_f64::<LE>()?;
                let n_det = r.read_u32::<LE>()? as usize;
                let mut detections = Vec::with_capacity(n_det.min(4096));
                for _ in 0..n_det {
                    let track_id = r.read_u32::<LE>()?;
                    let position = read_vec3(r)?;
                    let truth = r.read_u32::<LE>()?;
                    detections.push(Detection {
                        track_id,
                        position,
                        truth_id: (truth != u32::MAX).then_some(truth),
                    });
                }
                observations.push(Observation {
                    pose: Pose { position, yaw },
                    frame: Frame {
                        vehicle_id: vid,
                        timestamp: tick,
                        detections,
                    },
                });
            }
            steps.push(Step {
                tick,
                states,
                ego_arc,
                action,
                observations,
            });
        }
        Ok(Episode {
            scenario,
            seed,
            config,
            command,
            objects,
            vehicles,
            ego_route,
            ego_cruise_speed,
            steps,
        })
    }

    pub fn file_name(&self) -> String {
        format!("{}_{:06}.{}", self.scenario.name(), self.seed, EPISODE_EXTENSION)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(self.file_name());
        fs::write(&path, self.to_bytes())?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Episode> {
        let bytes = fs::read(path)?;
        Episode::read_from(&mut bytes.as_slice())
    }

    /// Human-readable dump for debugging. Not parsed back.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "# episode format v{EPISODE_VERSION}");
        let _ = writeln!(s, "scenario {} seed {} command {:?}", self.scenario, self.seed, self.command);
        let _ = writeln!(s, "config_hash {}", hex::encode(self.config.hash()));
        let _ = writeln!(s, "vehicles {:?} hazards {:?}", self.vehicles, self.hazard_ids());
        for o in &self.objects {
            let _ = writeln!(s, "object {} {:?} r={:.2} hazard={}", o.id, o.kind, o.half_extent, o.hazard);
        }
        for step in &self.steps {
            let _ = writeln!(
                s,
                "t={:.1} action={:?} ego_arc={:.2}",
                step.tick.seconds(),
                step.action,
                step.ego_arc
            );
            for (info, st) in self.objects.iter().zip(&step.states) {
                let _ = writeln!(
                    s,
                    "  obj {} pos=({:.2},{:.2}) vel=({:.2},{:.2})",
                    info.id, st.position.x, st.position.y, st.velocity.x, st.velocity.y
                );
            }
            for obs in &step.observations {
                let _ = write!(
                    s,
                    "  veh {} pose=({:.2},{:.2},{:.3}) dets:",
                    obs.frame.vehicle_id, obs.pose.position.x, obs.pose.position.y, obs.pose.yaw
                );
                for d in &obs.frame.detections {
                    let _ = write!(s, " [{}:{:.2},{:.2}]", d.track_id, d.position.x, d.position.y);
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Loads every episode file in `dir`, sorted by (scenario, seed).
pub fn load_dir(dir: &Path) -> Result<Vec<Episode>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("data directory {} does not exist", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(EPISODE_EXTENSION))
        .collect();
    paths.sort();
    let mut episodes = paths.iter().map(|p| Episode::load(p)).collect::<Result<Vec<_>>>()?;
    episodes.sort_by_key(|e| (e.scenario, e.seed));
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::simulate_episode;

    #[test]
    fn binary_roundtrip_and_determinism() {
        let cfg = ScenarioConfig::default();
        let a = simulate_episode(ScenarioKind::StreetCrossing, 9, &cfg).unwrap();
        let b = simulate_episode(ScenarioKind::StreetCrossing, 9, &cfg).unwrap();
        let bytes = a.to_bytes();
        assert_eq!(bytes, b.to_bytes());
        let back = Episode::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let ep = simulate_episode(ScenarioKind::Overtaking, 1, &ScenarioConfig::default()).unwrap();
        let mut bytes = ep.to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            Episode::read_from(&mut bytes.as_slice()),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(Episode::read_from(&mut bytes.as_slice()), Err(Error::Input(_))));
        let short = &ep.to_bytes()[..100];
        assert!(Episode::read_from(&mut &short[..]).is_err());
    }

    #[test]
    fn text_export_mentions_every_step() {
        let ep = simulate_episode(ScenarioKind::LeftTurn, 2, &ScenarioConfig::default()).unwrap();
        let text = ep.to_text();
        assert_eq!(text.matches("action=").count(), ep.steps.len());
    }
}
