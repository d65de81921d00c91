//! Ground-truth brake/go labels from a time-to-collision rule.

use serde::{Deserialize, Serialize};

use super::route::Route;
use super::{Action, WorldObject};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    /// Lateral clearance to the ego path that counts as a conflict, meters.
    pub clearance: f64,
    /// Prediction horizon, seconds.
    pub horizon: f64,
    /// Half-length of the ego path window around the ego's planned position
    /// at each prediction instant, meters.
    pub longitudinal_window: f64,
    /// Sampling step of the prediction horizon, seconds.
    pub step: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            clearance: 2.0,
            horizon: 3.0,
            longitudinal_window: 10.0,
            step: 0.05,
        }
    }
}

/// The ego's intent: keep following `route` from arc `arc` at `speed`.
#[derive(Debug, Clone, Copy)]
pub struct EgoPlan<'a> {
    pub route: &'a Route,
    pub arc: f64,
    pub speed: f64,
}

/// Brake iff some non-ego object, extrapolated at constant velocity, comes
/// within `clearance` of the stretch of ego path the ego would occupy at the
/// same instant, for some instant within the horizon.
pub fn expert_policy(world: &[WorldObject], ego_id: u32, plan: &EgoPlan<'_>, cfg: &ExpertConfig) -> Action {
    let steps = (cfg.horizon / cfg.step).round() as usize;
    for obj in world.iter().filter(|o| o.id != ego_id) {
        for k in 0..=steps {
            let t = k as f64 * cfg.step;
            let predicted = obj.position + obj.velocity * t;
            let ego_arc = plan.arc + plan.speed * t;
            let d = plan.route.distance_to_span(
                predicted,
                ego_arc - cfg.longitudinal_window,
                ego_arc + cfg.longitudinal_window,
            );
            if d <= cfg.clearance {
                return Action::Brake;
            }
        }
    }
    Action::Go
}
