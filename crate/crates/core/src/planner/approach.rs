//! Coast-to-stop approach: when a known stop lies ahead at roughly the
//! coasting distance, trade kinetic energy for distance under fuel cut
//! instead of cruising in and braking.

use super::coast::coast_profile;
use super::{PlanMode, PlanPoint, SpeedPlan};
use crate::cycle::{ControlKind, Route};
use crate::traffic::{light_arcs, EnvSnapshot, Phase, SpatMessage};
use crate::vehicle::{VehicleConfig, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproachConfig {
    /// Half-width of the engagement window around the coast distance, m.
    pub window_m: f64,
    /// Plan point decimation interval, m.
    pub point_spacing_m: f64,
}

impl Default for ApproachConfig {
    fn default() -> Self {
        ApproachConfig {
            window_m: 10.0,
            point_spacing_m: 5.0,
        }
    }
}

/// A stop the planner believes it must make.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopAhead {
    pub arc_m: f64,
    pub kind: ControlKind,
}

/// Predict the phase `dt_ahead` seconds from a SPaT message, using only the
/// remaining time of the current phase and the duration of the next one.
/// Beyond that horizon the phase is unknowable from the message contents and
/// `None` is returned.
pub fn predict_phase_at(msg: &SpatMessage, dt_ahead: f64) -> Option<Phase> {
    if dt_ahead <= msg.time_remaining_s {
        return Some(msg.current_phase);
    }
    if dt_ahead <= msg.time_remaining_s + msg.next_phase_duration_s {
        return Some(match msg.current_phase {
            Phase::Red => Phase::Green,
            Phase::Green => Phase::Yellow,
            Phase::Yellow => Phase::Red,
        });
    }
    None
}

/// The stop the approach strategy should consider, if any: the nearest
/// unserved stop sign, or the nearest light predicted to demand a stop at the
/// projected arrival time. An unknowable arrival phase is treated as a stop.
pub fn next_predicted_stop(
    route: &Route,
    snap: &EnvSnapshot,
    state: &VehicleState,
    served_signs: &[f64],
) -> Option<StopAhead> {
    let arc = state.arc_m;
    let v = state.speed_mps.max(0.5);
    let mut best: Option<StopAhead> = None;
    for c in route.controls() {
        if c.kind == ControlKind::StopSign
            && c.arc_m > arc
            && !served_signs.iter().any(|&s| (s - c.arc_m).abs() < 0.1)
        {
            best = Some(StopAhead {
                arc_m: c.arc_m,
                kind: ControlKind::StopSign,
            });
            break;
        }
    }
    let arcs = light_arcs(route);
    for msg in &snap.spat {
        let Some(&light_arc) = arcs.get(msg.light_id as usize) else {
            continue;
        };
        if light_arc <= arc {
            continue;
        }
        let arrival_s = (light_arc - arc) / v;
        let stop_needed = match predict_phase_at(msg, arrival_s) {
            Some(Phase::Green) => false,
            Some(Phase::Red) | Some(Phase::Yellow) => true,
            None => true, // beyond the message horizon: assume the worst
        };
        if stop_needed && best.map_or(true, |b| light_arc < b.arc_m) {
            best = Some(StopAhead {
                arc_m: light_arc,
                kind: ControlKind::TrafficLight,
            });
        }
    }
    best
}

/// Is the stop a previously emitted approach plan targeted still in force?
/// A light that has turned green releases the plan; a stop sign holds until
/// the dwell marks it served.
pub fn stop_still_demanded(
    stop_arc: Option<f64>,
    route: &Route,
    snap: &EnvSnapshot,
    served_signs: &[f64],
) -> bool {
    let Some(stop_arc) = stop_arc else {
        return false;
    };
    if stop_arc <= snap.ego.arc_m - 5.0 {
        return false;
    }
    let arcs = light_arcs(route);
    if let Some(idx) = arcs.iter().position(|&a| (a - stop_arc).abs() < 0.1) {
        return snap
            .spat
            .iter()
            .find(|m| m.light_id as usize == idx)
            .map_or(true, |m| m.current_phase != Phase::Green);
    }
    !served_signs.iter().any(|&s| (s - stop_arc).abs() < 0.1)
}

/// Emit a coasting plan when the predicted stop sits inside the coast window
/// [coast - delta, coast + delta]. Too early (stop far beyond the coast
/// distance) or too late (inside it) returns None and the caller keeps
/// cruising or lets the baseline brake.
pub fn eco_approach_plan(
    cfg: &VehicleConfig,
    route: &Route,
    snap: &EnvSnapshot,
    state: &VehicleState,
    acfg: &ApproachConfig,
) -> Option<(SpeedPlan, f64)> {
    eco_approach_plan_served(cfg, route, snap, state, acfg, &[])
}

pub fn eco_approach_plan_served(
    cfg: &VehicleConfig,
    route: &Route,
    snap: &EnvSnapshot,
    state: &VehicleState,
    acfg: &ApproachConfig,
    served_signs: &[f64],
) -> Option<(SpeedPlan, f64)> {
    let stop = next_predicted_stop(route, snap, state, served_signs)?;
    let v = state.speed_mps;
    if v < 1.0 {
        return None;
    }
    let arc0 = state.arc_m;
    let grade_at = |x: f64| route.grade_at(arc0 + x);
    let profile = coast_profile(cfg, v, 0.0, &grade_at).ok()?;
    let coast_d = profile.last().map_or(0.0, |p| p.dist_m);
    let d_stop = stop.arc_m - arc0;
    if (d_stop - coast_d).abs() > acfg.window_m {
        return None;
    }

    let mut points: Vec<PlanPoint> = Vec::new();
    let mut last_off = f64::NEG_INFINITY;
    for p in &profile {
        if p.dist_m - last_off >= acfg.point_spacing_m {
            let limit = route.speed_limit_at(arc0 + p.dist_m);
            points.push(PlanPoint {
                arc_offset_m: p.dist_m,
                target_speed_mps: p.speed_mps.min(limit),
            });
            last_off = p.dist_m;
        }
    }
    let end = profile.last().unwrap();
    if end.dist_m - last_off > 0.01 {
        points.push(PlanPoint {
            arc_offset_m: end.dist_m,
            target_speed_mps: 0.0,
        });
    } else if let Some(last) = points.last_mut() {
        last.target_speed_mps = 0.0;
    }
    let plan = SpeedPlan {
        anchor_m: arc0,
        points,
        mode: PlanMode::EcoApproach,
    };
    debug_assert!(plan.check_shape());
    Some((plan, stop.arc_m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycle::{CycleSegment, DriveCycle};
    use crate::planner::coast::coast_distance;
    use crate::traffic::{ScenarioConfig, World};
    use crate::vehicle::Powertrain;

    fn route_with_light(light_at: f64, total: f64) -> Route {
        Route::from_cycle(
            &DriveCycle::new(
                "a",
                vec![
                    CycleSegment {
                        start_m: 0.0,
                        length_m: light_at,
                        speed_limit_mps: 13.4,
                        grade: 0.0,
                        curvature_inv_m: 0.0,
                        control: Some(ControlKind::TrafficLight),
                    },
                    CycleSegment {
                        start_m: light_at,
                        length_m: total - light_at,
                        speed_limit_mps: 13.4,
                        grade: 0.0,
                        curvature_inv_m: 0.0,
                        control: None,
                    },
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn phase_prediction_horizon() {
        let msg = SpatMessage {
            light_id: 0,
            current_phase: Phase::Red,
            time_remaining_s: 10.0,
            next_phase_duration_s: 13.0,
            full_cycle_s: 30.0,
            timestamp_s: 0.0,
        };
        assert_eq!(predict_phase_at(&msg, 5.0), Some(Phase::Red));
        assert_eq!(predict_phase_at(&msg, 12.0), Some(Phase::Green));
        assert_eq!(predict_phase_at(&msg, 30.0), None);
    }

    #[test]
    fn plan_emitted_inside_window_only() {
        let cfg = VehicleConfig::shipped_default();
        let coast = coast_distance(cfg, 13.4, 0.0, 0.0).unwrap();
        let total = coast * 3.0 + 600.0;

        // Permanent red so the arrival-phase prediction always demands a stop.
        let scen = ScenarioConfig {
            spat_red_s: 100_000.0,
            ..Default::default()
        };

        // Stop exactly at the coast distance: plan emitted.
        let route = route_with_light(coast + 200.0, total);
        let world = World::new(route.clone(), scen.clone());
        let mut plant = Powertrain::with_speed(cfg.clone(), 13.4);
        plant.state.arc_m = 200.0;
        let snap = world.snapshot(&plant.state);
        let got = eco_approach_plan(cfg, &route, &snap, &plant.state, &ApproachConfig::default());
        assert!(got.is_some(), "window at {coast:.0} m should trigger");
        let (plan, stop_arc) = got.unwrap();
        assert_eq!(stop_arc, coast + 200.0);
        assert!(plan.check_legal(&route));
        assert_eq!(plan.points.last().unwrap().target_speed_mps, 0.0);

        // Stop three coast distances ahead: too early, keep cruising.
        let far = route_with_light(3.0 * coast, total);
        let world = World::new(far.clone(), scen.clone());
        let mut plant = Powertrain::with_speed(cfg.clone(), 13.4);
        plant.state.arc_m = 0.0;
        let snap = world.snapshot(&plant.state);
        assert!(eco_approach_plan(cfg, &far, &snap, &plant.state, &ApproachConfig::default()).is_none());
    }

    #[test]
    fn green_at_arrival_means_no_plan() {
        let cfg = VehicleConfig::shipped_default();
        let coast = coast_distance(cfg, 13.4, 0.0, 0.0).unwrap();
        let route = route_with_light(coast + 100.0, coast * 2.0 + 400.0);
        // Long green covering any arrival estimate.
        let scen = ScenarioConfig {
            spat_green_s: 10_000.0,
            spat_offsets_s: vec![15.0], // start inside green
            ..Default::default()
        };
        let world = World::new(route.clone(), scen);
        let mut plant = Powertrain::with_speed(cfg.clone(), 13.4);
        plant.state.arc_m = 100.0;
        let snap = world.snapshot(&plant.state);
        assert!(
            eco_approach_plan(cfg, &route, &snap, &plant.state, &ApproachConfig::default()).is_none()
        );
    }
}
