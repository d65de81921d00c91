//! Scripted routes and piecewise constant-acceleration speed profiles.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

/// A polyline in the ground plane, parameterized by arc length.
///
/// Queries outside `[0, length]` extrapolate along the first/last segment so
/// that vehicles can start before and drive past the scripted waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
}

impl Route {
    /// Builds a route from at least two distinct waypoints.
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        assert!(points.len() >= 2, "a route needs at least two waypoints");
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            let seg = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            assert!(seg > 0.0, "consecutive route waypoints must differ");
            acc += seg;
            cumulative.push(acc);
        }
        Route { points, cumulative }
    }

    pub fn straight(from: [f64; 2], to: [f64; 2]) -> Self {
        Route::new(vec![from, to])
    }

    /// Appends a circular arc approximated by `segments` chords.
    pub fn with_arc(
        mut points: Vec<[f64; 2]>,
        center: [f64; 2],
        radius: f64,
        from_angle: f64,
        to_angle: f64,
        segments: usize,
    ) -> Vec<[f64; 2]> {
        for k in 1..=segments {
            let a = from_angle + (to_angle - from_angle) * k as f64 / segments as f64;
            points.push([center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
        }
        points
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment_index(&self, s: f64) -> usize {
        let n = self.points.len() - 1;
        if s <= 0.0 {
            return 0;
        }
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(n - 1),
            Err(i) => (i - 1).min(n - 1),
        }
    }

    /// Position and heading at arc length `s`.
    pub fn sample(&self, s: f64) -> (Vec3, f64) {
        let i = self.segment_index(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        let len = self.cumulative[i + 1] - self.cumulative[i];
        let u = (s - self.cumulative[i]) / len;
        let heading = (b[1] - a[1]).atan2(b[0] - a[0]);
        (
            Vec3::planar(a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])),
            heading,
        )
    }

    /// Unit tangent at arc length `s`.
    pub fn tangent(&self, s: f64) -> Vec3 {
        let (_, h) = self.sample(s);
        Vec3::planar(h.cos(), h.sin())
    }

    /// Arc length at waypoint `index`.
    pub fn arc_at_vertex(&self, index: usize) -> f64 {
        self.cumulative[index]
    }

    /// Minimum planar distance from `p` to the part of the route between arc
    /// lengths `lo` and `hi` (extrapolated beyond the ends when needed).
    pub fn distance_to_span(&self, p: Vec3, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo <= hi);
        let mut knots = vec![lo];
        for &c in &self.cumulative {
            if c > lo && c < hi {
                knots.push(c);
            }
        }
        knots.push(hi);
        let mut best = f64::INFINITY;
        for w in knots.windows(2) {
            let (a, _) = self.sample(w[0]);
            let (b, _) = self.sample(w[1]);
            best = best.min(point_segment_distance(p, a, b));
        }
        best
    }
}

/// Planar distance from `p` to segment `a`–`b`.
pub fn point_segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let abx = b.x - a.x;
    let aby = b.y - a.y;
    let len2 = abx * abx + aby * aby;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * abx + (p.y - a.y) * aby) / len2).clamp(0.0, 1.0)
    };
    (p.x - (a.x + t * abx)).hypot(p.y - (a.y + t * aby))
}

/// Piecewise-linear speed over time: constant acceleration between keyframes,
/// constant speed before the first and after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    keys: Vec<(f64, f64)>,
}

impl SpeedProfile {
    pub fn constant(speed: f64) -> Self {
        SpeedProfile {
            keys: vec![(0.0, speed)],
        }
    }

    /// Keyframes `(time, speed)` with non-decreasing times.
    pub fn keyframes(keys: Vec<(f64, f64)>) -> Self {
        assert!(!keys.is_empty());
        assert!(keys.windows(2).all(|w| w[0].0 <= w[1].0));
        SpeedProfile { keys }
    }

    pub fn max_speed(&self) -> f64 {
        self.keys.iter().map(|k| k.1).fold(0.0, f64::max)
    }

    pub fn speed(&self, t: f64) -> f64 {
        let first = self.keys[0];
        if t <= first.0 {
            return first.1;
        }
        for w in self.keys.windows(2) {
            let (t0, v0) = w[0];
            let (t1, v1) = w[1];
            if t <= t1 {
                if t1 == t0 {
                    return v1;
                }
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        self.keys.last().unwrap().1
    }

    /// Exact distance travelled between `from` and `to` (signed if `to < from`).
    pub fn distance(&self, from: f64, to: f64) -> f64 {
        if to < from {
            return -self.distance(to, from);
        }
        let mut knots = vec![from];
        for &(t, _) in &self.keys {
            if t > from && t < to {
                knots.push(t);
            }
        }
        knots.push(to);
        knots
            .windows(2)
            .map(|w| 0.5 * (self.speed(w[0]) + self.speed(w[1])) * (w[1] - w[0]))
            .sum()
    }
}

/// How an object moves during an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Motion {
    Static { position: Vec3, heading: f64 },
    /// Follows `route`; at `anchor_time` it sits at arc `anchor_arc`.
    Route {
        route: Route,
        profile: SpeedProfile,
        anchor_time: f64,
        anchor_arc: f64,
    },
}

/// Kinematic state at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub position: Vec3,
    pub velocity: Vec3,
    pub heading: f64,
    pub arc: f64,
    pub speed: f64,
}

impl Motion {
    pub fn state_at(&self, t: f64) -> Kinematics {
        match self {
            Motion::Static { position, heading } => Kinematics {
                position: *position,
                velocity: Vec3::ZERO,
                heading: *heading,
                arc: 0.0,
                speed: 0.0,
            },
            Motion::Route {
                route,
                profile,
                anchor_time,
                anchor_arc,
            } => {
                let arc = anchor_arc + profile.distance(*anchor_time, t);
                let speed = profile.speed(t);
                let (position, heading) = route.sample(arc);
                Kinematics {
                    position,
                    velocity: route.tangent(arc) * speed,
                    heading,
                    arc,
                    speed,
                }
            }
        }
    }

    pub fn max_speed(&self) -> f64 {
        match self {
            Motion::Static { .. } => 0.0,
            Motion::Route { profile, .. } => profile.max_speed(),
        }
    }
}
