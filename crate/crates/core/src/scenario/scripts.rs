//! Scripted layouts of the three intersection scenarios.
//!
//! Right-hand traffic, lanes 3.5 m wide. The ego drives up to a hold point
//! (behind the obstructing truck, at the yield line, at the stop line), waits
//! a random time, then proceeds. Conflicting traffic streams through the ego's
//! path at random times and is hidden from the ego by the occluders while
//! remaining visible to the parked/stopped collaborators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::route::{Motion, Route, SpeedProfile};
use super::{ObjectInfo, ObjectKind, ScenarioConfig, ScenarioKind};
use crate::geometry::Vec3;
use std::f64::consts::{FRAC_PI_2, PI};

const CAR_RADIUS: f64 = 2.2;
const TRUCK_RADIUS: f64 = 3.5;
const EGO_BRAKE: f64 = 2.5;
const EGO_ACCEL: f64 = 2.0;
const MIN_HEADWAY: f64 = 2.0;

pub(super) struct ScriptedObject {
    pub info: ObjectInfo,
    pub motion: Motion,
}

pub(super) struct Script {
    pub objects: Vec<ScriptedObject>,
    pub ego_route: Route,
    pub ego_cruise_speed: f64,
}

/// A traffic lane crossing the ego path.
struct Lane {
    route: Route,
    /// Arc where the lane meets the ego path.
    conflict_arc: f64,
    /// Arc where a yielding vehicle comes to rest.
    stop_arc: f64,
}

struct Builder {
    objects: Vec<ScriptedObject>,
}

impl Builder {
    fn push(&mut self, kind: ObjectKind, radius: f64, hazard: bool, motion: Motion) {
        let id = self.objects.len() as u32;
        self.objects.push(ScriptedObject {
            info: ObjectInfo {
                id,
                kind,
                half_extent: radius,
                hazard,
            },
            motion,
        });
    }

    fn fixed(&mut self, kind: ObjectKind, radius: f64, x: f64, y: f64, heading: f64) {
        self.push(
            kind,
            radius,
            false,
            Motion::Static {
                position: Vec3::planar(x, y),
                heading,
            },
        );
    }
}

/// Ego approaches `hold_arc`, stops there, waits, then resumes cruise speed.
fn ego_motion(route: &Route, hold_arc: f64, cruise: f64, rng: &mut ChaCha8Rng) -> Motion {
    let approach = rng.gen_range(45.0..70.0);
    let start_arc = hold_arc - approach;
    let brake_dist = cruise * cruise / (2.0 * EGO_BRAKE);
    let t_brake = (approach - brake_dist) / cruise;
    let t_stop = t_brake + cruise / EGO_BRAKE;
    let t_go = rng.gen_range(14.0..24.0f64).max(t_stop + 1.0);
    Motion::Route {
        route: route.clone(),
        profile: SpeedProfile::keyframes(vec![
            (0.0, cruise),
            (t_brake, cruise),
            (t_stop, 0.0),
            (t_go, 0.0),
            (t_go + cruise / EGO_ACCEL, cruise),
        ]),
        anchor_time: 0.0,
        anchor_arc: start_arc,
    }
}

fn arrival_times(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    for _ in 0..200 {
        let mut t: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..29.0)).collect();
        t.sort_by(f64::total_cmp);
        if t.windows(2).all(|w| w[1] - w[0] >= MIN_HEADWAY) {
            return t;
        }
    }
    (0..n).map(|i| 1.0 + i as f64 * 28.0 / n as f64).collect()
}

/// Spawns `count` conflicting vehicles spread over `lanes`. The last vehicle
/// of a lane may yield (brake to a stop before the conflict point) instead
/// of driving through.
fn hazard_stream(b: &mut Builder, lanes: &[Lane], count: u32, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) {
    let mut per_lane = vec![0usize; lanes.len()];
    for _ in 0..count {
        per_lane[rng.gen_range(0..lanes.len())] += 1;
    }
    for (lane, &n) in lanes.iter().zip(&per_lane) {
        let speed = rng.gen_range(9.0..14.0f64).min(cfg.max_speed);
        let times = arrival_times(n, rng);
        let yield_last = rng.gen_bool(0.4);
        for (i, &t) in times.iter().enumerate() {
            let motion = if yield_last && i + 1 == n {
                let decel = rng.gen_range(2.0..3.0);
                Motion::Route {
                    route: lane.route.clone(),
                    profile: SpeedProfile::keyframes(vec![(t - speed / decel, speed), (t, 0.0)]),
                    anchor_time: t,
                    anchor_arc: lane.stop_arc,
                }
            } else {
                Motion::Route {
                    route: lane.route.clone(),
                    profile: SpeedProfile::constant(speed),
                    anchor_time: t,
                    anchor_arc: lane.conflict_arc,
                }
            };
            b.push(ObjectKind::Traffic, CAR_RADIUS, true, motion);
        }
    }
}

/// Non-conflicting through traffic on a parallel lane.
fn passing_car(b: &mut Builder, route: Route, reference_arc: f64, rng: &mut ChaCha8Rng) {
    let t = rng.gen_range(3.0..27.0);
    b.push(
        ObjectKind::Traffic,
        CAR_RADIUS,
        false,
        Motion::Route {
            route,
            profile: SpeedProfile::constant(10.0),
            anchor_time: t,
            anchor_arc: reference_arc,
        },
    );
}

fn hazard_count(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> u32 {
    let n = rng.gen_range(cfg.hazard_count_min..=cfg.hazard_count_max);
    if cfg.hazards {
        n
    } else {
        0
    }
}

pub(super) fn build(kind: ScenarioKind, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Script {
    let cruise = rng.gen_range(8.0..10.0f64).min(cfg.max_speed);
    let mut b = Builder { objects: Vec::new() };
    let ego_route = match kind {
        ScenarioKind::Overtaking => overtaking(&mut b, cfg, cruise, rng),
        ScenarioKind::LeftTurn => left_turn(&mut b, cfg, cruise, rng),
        ScenarioKind::StreetCrossing => street_crossing(&mut b, cfg, cruise, rng),
    };
    Script {
        objects: b.objects,
        ego_route,
        ego_cruise_speed: cruise,
    }
}

/// Two-way single-lane road along x. A truck blocks the ego lane at x = 40;
/// the ego waits behind it and then passes through the oncoming lane.
fn overtaking(b: &mut Builder, cfg: &ScenarioConfig, cruise: f64, rng: &mut ChaCha8Rng) -> Route {
    let route = Route::new(vec![
        [-200.0, -1.75],
        [26.0, -1.75],
        [34.0, 1.75],
        [48.0, 1.75],
        [56.0, -1.75],
        [600.0, -1.75],
    ]);
    let hold = 224.0; // x = 24, two meters before the lane change
    let ego = ego_motion(&route, hold, cruise, rng);
    b.push(ObjectKind::Ego, CAR_RADIUS, false, ego);
    b.fixed(ObjectKind::Collaborator, CAR_RADIUS, 70.0, 5.0, PI);
    b.fixed(ObjectKind::Collaborator, CAR_RADIUS, 95.0, -5.0, 0.0);
    b.fixed(ObjectKind::Obstacle, TRUCK_RADIUS, 40.0, -1.75, 0.0);

    let oncoming = Route::straight([800.0, 1.75], [-800.0, 1.75]);
    let lanes = [Lane {
        conflict_arc: 800.0 - 30.0,
        stop_arc: 800.0 - rng.gen_range(66.0..85.0),
        route: oncoming,
    }];
    let n = hazard_count(cfg, rng);
    hazard_stream(b, &lanes, n, cfg, rng);
    route
}

/// Ego turns left from the northbound left-turn lane; an opposing truck
/// waiting to turn hides southbound through traffic.
fn left_turn(b: &mut Builder, cfg: &ScenarioConfig, cruise: f64, rng: &mut ChaCha8Rng) -> Route {
    let points = Route::with_arc(
        vec![[1.75, -200.0], [1.75, -8.0]],
        [-8.0, -8.0],
        9.75,
        0.0,
        FRAC_PI_2,
        12,
    );
    let mut points = points;
    points.push([-600.0, 1.75]);
    let route = Route::new(points);
    let hold = 191.0; // y = -9, at the yield line
    let ego = ego_motion(&route, hold, cruise, rng);
    b.push(ObjectKind::Ego, CAR_RADIUS, false, ego);
    b.fixed(ObjectKind::Collaborator, CAR_RADIUS, -14.0, -1.75, 0.0);
    b.fixed(ObjectKind::Collaborator, CAR_RADIUS, 14.0, 1.75, PI);
    b.fixed(ObjectKind::Obstacle, TRUCK_RADIUS, -1.75, 10.0, -FRAC_PI_2);
    b.fixed(ObjectKind::Traffic, CAR_RADIUS, -1.75, 17.5, -FRAC_PI_2);

    let southbound = Route::straight([-5.25, 800.0], [-5.25, -800.0]);
    let lanes = [Lane {
        conflict_arc: 800.0 - 1.35,
        stop_arc: 800.0 - rng.gen_range(14.0..25.0),
        route: southbound,
    }];
    let n = hazard_count(cfg, rng);
    hazard_stream(b, &lanes, n, cfg, rng);
    passing_car(b, Route::straight([5.25, -800.0], [5.25, 800.0]), 800.0, rng);
    route
}

/// Ego waits at the stop line next to a queue of left-turners; cross
/// traffic from both sides runs the light behind the queue and a parked truck.
fn street_crossing(b: &mut Builder, cfg: &ScenarioConfig, cruise: f64, rng: &mut ChaCha8Rng) -> Route {
    let route = Route::straight([5.25, -200.0], [5.25, 600.0]);
    let hold = 190.0; // y = -10
    let ego = ego_motion(&route, hold, cruise, rng);
    b.push(ObjectKind::Ego, CAR_RADIUS, false, ego);
    b.fixed(ObjectKind::Collaborator, CAR_RADIUS, 1.75, -10.0, FRAC_PI_2);
    b.fixed(ObjectKind::Collaborator, CAR_RADIUS, -1.75, 12.0, -FRAC_PI_2);
    b.fixed(ObjectKind::Traffic, CAR_RADIUS, 1.75, -17.0, FRAC_PI_2);
    b.fixed(ObjectKind::Traffic, CAR_RADIUS, 1.75, -24.0, FRAC_PI_2);
    b.fixed(ObjectKind::Obstacle, 2.5, 10.0, -6.0, FRAC_PI_2);

    let lanes = [
        Lane {
            route: Route::straight([-800.0, -1.75], [800.0, -1.75]),
            conflict_arc: 800.0 + 5.25,
            stop_arc: 800.0 - 9.0,
        },
        Lane {
            route: Route::straight([800.0, 1.75], [-800.0, 1.75]),
            conflict_arc: 800.0 - 5.25,
            stop_arc: 800.0 - 14.0,
        },
    ];
    let n = hazard_count(cfg, rng);
    hazard_stream(b, &lanes, n, cfg, rng);
    passing_car(b, Route::straight([-5.25, 800.0], [-5.25, -800.0]), 800.0, rng);
    route
}
