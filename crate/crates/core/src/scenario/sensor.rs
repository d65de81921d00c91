//! Oracle object detector with disc occlusion, range/FOV limits, noise and dropout.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::route::point_segment_distance;
use super::{Detection, Frame, WorldObject};
use crate::geometry::{normalize_angle, Pose, Tick, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Maximum detection range in meters.
    pub range: f64,
    /// Full horizontal field of view in radians, centered on the heading.
    pub field_of_view: f64,
    /// Per-axis Gaussian position noise (planar axes only), meters.
    pub noise_sigma: f64,
    /// Probability that a visible object is missed.
    pub dropout: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            range: 60.0,
            field_of_view: 2.0 * std::f64::consts::PI,
            noise_sigma: 0.1,
            dropout: 0.05,
        }
    }
}

/// True when the straight segment `from`→`target.position` clears the discs
/// of every object other than the target and the objects listed in `exclude`.
pub fn line_of_sight(from: Vec3, target: &WorldObject, world: &[WorldObject], exclude: u32) -> bool {
    world.iter().all(|o| {
        if o.id == target.id || o.id == exclude {
            return true;
        }
        point_segment_distance(o.position, from, target.position) > o.half_extent
    })
}

/// Geometric visibility (range, field of view, occlusion), ignoring dropout.
pub fn is_visible(
    observer_id: u32,
    observer: &Pose,
    target: &WorldObject,
    world: &[WorldObject],
    sensor: &SensorConfig,
) -> bool {
    if target.id == observer_id {
        return false;
    }
    let rel = target.position - observer.position;
    if rel.planar_norm() > sensor.range {
        return false;
    }
    if sensor.field_of_view < 2.0 * std::f64::consts::PI {
        let bearing = normalize_angle(rel.y.atan2(rel.x) - observer.yaw);
        if bearing.abs() > 0.5 * sensor.field_of_view {
            return false;
        }
    }
    line_of_sight(observer.position, target, world, observer_id)
}

/// Simulates one sensor sweep of `observer_id` at `observer`.
///
/// Detections are reported in the observer's sensor frame with unassigned
/// track ids (0); see [`super::tracker::track`].
pub fn observe<R: Rng + ?Sized>(
    world: &[WorldObject],
    observer_id: u32,
    observer: &Pose,
    timestamp: Tick,
    sensor: &SensorConfig,
    rng: &mut R,
) -> Frame {
    let noise = (sensor.noise_sigma > 0.0).then(|| Normal::new(0.0, sensor.noise_sigma).unwrap());
    let mut detections = Vec::new();
    for target in world {
        if !is_visible(observer_id, observer, target, world, sensor) {
            continue;
        }
        // Draw both random numbers unconditionally so the stream stays aligned
        // regardless of the dropout outcome.
        let dropped = rng.gen::<f64>() < sensor.dropout;
        let (nx, ny) = match &noise {
            Some(n) => (n.sample(rng), n.sample(rng)),
            None => (0.0, 0.0),
        };
        if dropped {
            continue;
        }
        let local = observer.to_local(target.position);
        detections.push(Detection {
            track_id: 0,
            position: Vec3::new(local.x + nx, local.y + ny, local.z),
            truth_id: Some(target.id),
        });
    }
    Frame {
        vehicle_id: observer_id,
        timestamp,
        detections,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ObjectKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obj(id: u32, x: f64, y: f64, r: f64) -> WorldObject {
        WorldObject {
            id,
            kind: ObjectKind::Traffic,
            position: Vec3::planar(x, y),
            velocity: Vec3::ZERO,
            heading: 0.0,
            half_extent: r,
        }
    }

    fn exact_sensor() -> SensorConfig {
        SensorConfig {
            noise_sigma: 0.0,
            dropout: 0.0,
            ..SensorConfig::default()
        }
    }

    #[test]
    fn unoccluded_object_detected_at_exact_relative_position() {
        let world = vec![obj(0, 0.0, 0.0, 2.0), obj(1, 6.0, 8.0, 2.0)];
        let pose = Pose::new(Vec3::ZERO, std::f64::consts::FRAC_PI_2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = observe(&world, 0, &pose, Tick(0), &exact_sensor(), &mut rng);
        assert_eq!(f.detections.len(), 1);
        let d = f.detections[0].position;
        // heading +y: world (6, 8) is 8 m ahead and 6 m to the right
        assert!((d.x - 8.0).abs() < 1e-12 && (d.y + 6.0).abs() < 1e-12);
    }

    #[test]
    fn object_behind_occluder_is_absent() {
        let world = vec![obj(0, 0.0, 0.0, 2.0), obj(1, 10.0, 0.0, 2.0), obj(2, 20.0, 0.5, 2.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = observe(&world, 0, &Pose::identity(), Tick(0), &exact_sensor(), &mut rng);
        let ids: Vec<_> = f.detections.iter().map(|d| d.truth_id.unwrap()).collect();
        assert_eq!(ids, vec![1]);
    }

    #[test]
    fn range_and_field_of_view_limits() {
        let world = vec![obj(0, 0.0, 0.0, 1.0), obj(1, 70.0, 0.0, 1.0), obj(2, -10.0, 0.0, 1.0)];
        let mut sensor = exact_sensor();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = observe(&world, 0, &Pose::identity(), Tick(0), &sensor, &mut rng);
        assert_eq!(f.detections.len(), 1, "object beyond 60 m must be dropped");
        sensor.field_of_view = std::f64::consts::PI / 2.0;
        let f = observe(&world, 0, &Pose::identity(), Tick(0), &sensor, &mut rng);
        assert!(f.detections.is_empty(), "object behind a forward sensor is invisible");
    }

    #[test]
    fn dropout_rate_matches_binomial_expectation() {
        // 100 objects on a ring, no mutual occlusion: expected 95 per sweep.
        let mut world = vec![obj(0, 0.0, 0.0, 0.1)];
        for k in 0..100 {
            let a = k as f64 * 2.0 * std::f64::consts::PI / 100.0;
            world.push(obj(k + 1, 30.0 * a.cos(), 30.0 * a.sin(), 0.1));
        }
        let sensor = SensorConfig {
            noise_sigma: 0.0,
            ..SensorConfig::default()
        };
        let seeds = 400u64;
        let mut total = 0usize;
        for s in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            total += observe(&world, 0, &Pose::identity(), Tick(0), &sensor, &mut rng)
                .detections
                .len();
        }
        let n = (seeds * 100) as f64;
        let mean = total as f64 / n;
        let sigma = (0.95 * 0.05 / n).sqrt();
        assert!((mean - 0.95).abs() < 3.0 * sigma, "mean {mean}");
    }
}
