//! Baseline driver: speed-limit tracking with IDM headway keeping, stops at
//! red/yellow lights and stop signs (2 s dwell), using only the CURRENT SPaT
//! phase — no timing lookahead. Also serves as the safety layer the eco
//! strategies are min-combined against.

use super::follower::actuator_map;
use crate::cycle::{ControlKind, Route};
use crate::traffic::{light_arcs, car_following_accel, EnvSnapshot, IdmParams, Obstacle, ObstacleKind, Phase};
use crate::vehicle::{ControlCommand, VehicleConfig, VehicleState};
use std::sync::Arc;

const EGO_LENGTH_M: f64 = 4.8;
/// Rest point offset: the virtual stop target sits past the line so the IDM
/// equilibrium gap puts the bumper about one meter before it.
const STOP_TARGET_PAST_LINE_M: f64 = 1.0;
const AT_LINE_M: f64 = 3.5;
const STOPPED_MPS: f64 = 0.15;
const DWELL_S: f64 = 2.0;
const LIMIT_LOOKAHEAD_M: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOutput {
    pub command: ControlCommand,
    /// Headway/signal-limited speed target the eco modes must not exceed.
    pub safe_speed_mps: f64,
    pub accel_demand_mps2: f64,
}

pub struct BaselineDriver {
    cfg: Arc<VehicleConfig>,
    route: Route,
    idm: IdmParams,
    light_arcs: Vec<f64>,
    served_signs: Vec<f64>,
    dwell_started_s: Option<f64>,
}

impl BaselineDriver {
    pub fn new(cfg: Arc<VehicleConfig>, route: Route) -> BaselineDriver {
        let arcs = light_arcs(&route);
        BaselineDriver {
            cfg,
            route,
            idm: IdmParams::default(),
            light_arcs: arcs,
            served_signs: Vec::new(),
            dwell_started_s: None,
        }
    }

    pub fn served_signs(&self) -> &[f64] {
        &self.served_signs
    }

    pub fn idm(&self) -> &IdmParams {
        &self.idm
    }

    fn ego_obstacle(state: &VehicleState) -> Obstacle {
        Obstacle {
            id: u32::MAX - 1,
            kind: ObstacleKind::Vehicle,
            arc_m: state.arc_m,
            speed_mps: state.speed_mps,
            accel_mps2: state.accel_mps2,
            length_m: EGO_LENGTH_M,
            width_m: 1.9,
            heading_rad: 0.0,
        }
    }

    /// Nearest arc at which the driver must currently plan to stop: an
    /// unserved stop sign, or a light whose current phase demands stopping.
    pub fn next_stop_arc(&self, snap: &EnvSnapshot, state: &VehicleState) -> Option<(f64, ControlKind)> {
        let arc = state.arc_m;
        let v = state.speed_mps;
        let mut best: Option<(f64, ControlKind)> = None;
        for c in self.route.controls() {
            if c.kind == ControlKind::StopSign
                && c.arc_m > arc
                && !self.served_signs.iter().any(|&s| (s - c.arc_m).abs() < 0.1)
            {
                best = Some((c.arc_m, ControlKind::StopSign));
                break;
            }
        }
        for msg in &snap.spat {
            let Some(&light_arc) = self.light_arcs.get(msg.light_id as usize) else {
                continue;
            };
            if light_arc <= arc {
                continue;
            }
            let demands = match msg.current_phase {
                Phase::Red => true,
                Phase::Yellow => {
                    let d = light_arc - arc;
                    v * v / (2.0 * d.max(0.1)) <= self.idm.b_comf
                }
                Phase::Green => false,
            };
            if demands && best.map_or(true, |(a, _)| light_arc < a) {
                best = Some((light_arc, ControlKind::TrafficLight));
            }
        }
        best
    }

    pub fn drive(&mut self, snap: &EnvSnapshot, state: &VehicleState) -> BaselineOutput {
        let v = state.speed_mps;
        let arc = state.arc_m;
        let me = Self::ego_obstacle(state);
        let limit = snap.speed_limit_mps;

        let mut a = match car_following_accel(&me, None, limit, &self.idm) {
            Ok(a) => a,
            Err(_) => -self.idm.b_max,
        };

        // Headway to the nearest obstacle ahead.
        let leader = snap
            .obstacles
            .iter()
            .filter(|o| o.arc_m > arc && o.id != me.id)
            .min_by(|x, y| x.arc_m.partial_cmp(&y.arc_m).unwrap());
        if let Some(l) = leader {
            match car_following_accel(&me, Some(l), limit, &self.idm) {
                Ok(al) => a = a.min(al),
                Err(_) => a = -self.idm.b_max,
            }
        }

        // Anticipate speed-limit drops ahead.
        for seg in self.route.segments() {
            if seg.start_m <= arc {
                continue;
            }
            let d = seg.start_m - arc;
            if d > LIMIT_LOOKAHEAD_M {
                break;
            }
            if seg.speed_limit_mps < v {
                let need = (seg.speed_limit_mps.powi(2) - v * v) / (2.0 * d.max(1.0));
                a = a.min(need.max(-self.idm.b_max));
            }
        }

        // Signals and stop signs.
        let mut hold = false;
        if let Some((stop_arc, kind)) = self.next_stop_arc(snap, state) {
            let target = Obstacle::fixed(u32::MAX, stop_arc + STOP_TARGET_PAST_LINE_M, 0.0);
            match car_following_accel(&me, Some(&target), limit, &self.idm) {
                Ok(astop) => a = a.min(astop),
                Err(_) => a = -self.idm.b_max,
            }
            let dist = stop_arc - arc;
            if dist < AT_LINE_M && v < STOPPED_MPS {
                match kind {
                    ControlKind::StopSign => match self.dwell_started_s {
                        None => {
                            self.dwell_started_s = Some(snap.sim_time_s);
                            hold = true;
                        }
                        Some(t0) => {
                            if snap.sim_time_s - t0 < DWELL_S {
                                hold = true;
                            } else {
                                self.served_signs.push(stop_arc);
                                self.dwell_started_s = None;
                            }
                        }
                    },
                    _ => hold = true, // red light: hold until it clears
                }
            }
        } else {
            self.dwell_started_s = None;
        }

        if hold {
            return BaselineOutput {
                command: ControlCommand::braking(0.3),
                safe_speed_mps: 0.0,
                accel_demand_mps2: -self.idm.b_comf,
            };
        }

        let a = a.clamp(-self.idm.b_max, self.idm.a_max);
        BaselineOutput {
            command: actuator_map(&self.cfg, state, snap.grade, a),
            safe_speed_mps: (v + a).max(0.0),
            accel_demand_mps2: a,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycle::{CycleSegment, DriveCycle};
    use crate::traffic::{ScenarioConfig, World};
    use crate::vehicle::Powertrain;

    fn light_route(light_at: f64, total: f64, limit: f64) -> Route {
        Route::from_cycle(
            &DriveCycle::new(
                "b",
                vec![
                    CycleSegment {
                        start_m: 0.0,
                        length_m: light_at,
                        speed_limit_mps: limit,
                        grade: 0.0,
                        curvature_inv_m: 0.0,
                        control: Some(ControlKind::TrafficLight),
                    },
                    CycleSegment {
                        start_m: light_at,
                        length_m: total - light_at,
                        speed_limit_mps: limit,
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
    fn green_light_empty_road_accelerates() {
        let cfg = VehicleConfig::shipped_default();
        let route = light_route(500.0, 1000.0, 13.4);
        // Offset the cycle so the light shows green at t=0.
        let scen = ScenarioConfig {
            spat_offsets_s: vec![15.0],
            ..Default::default()
        };
        let world = World::new(route.clone(), scen);
        let mut driver = BaselineDriver::new(cfg.clone(), route);
        let plant = Powertrain::with_speed(cfg.clone(), 8.0);
        let snap = world.snapshot(&plant.state);
        let out = driver.drive(&snap, &plant.state);
        assert!(out.command.throttle > 0.0);
        assert_eq!(out.command.brake, 0.0);
    }

    #[test]
    fn red_light_braking_and_stop_point() {
        let cfg = VehicleConfig::shipped_default();
        let light_at = 540.0;
        let route = light_route(light_at, 1000.0, 13.4);
        // Permanent red for this test.
        let scen = ScenarioConfig {
            spat_red_s: 10_000.0,
            ..Default::default()
        };
        let mut world = World::new(route.clone(), scen);
        let mut driver = BaselineDriver::new(cfg.clone(), route);
        let mut plant = Powertrain::with_speed(cfg.clone(), 13.4);
        plant.state.arc_m = light_at - 40.0;

        // The immediate command at 40 m out and 13.4 m/s must be braking.
        let snap = world.snapshot(&plant.state);
        let out = driver.drive(&snap, &plant.state);
        assert!(out.command.brake > 0.0, "expected braking, got {:?}", out.command);

        // Closed loop: the vehicle must come to rest within 2 m before the line.
        for _ in 0..3000 {
            let snap = world.snapshot(&plant.state);
            let out = driver.drive(&snap, &plant.state);
            plant.step(&out.command, 0.0);
            world.step(crate::vehicle::STEP_S, None).unwrap();
            if plant.state.speed_mps < 1e-3 && plant.state.arc_m > light_at - 10.0 {
                break;
            }
        }
        let stop = plant.state.arc_m;
        assert!(plant.state.speed_mps < 0.05);
        assert!(
            stop <= light_at && stop >= light_at - 2.0,
            "stopped at {stop}, line at {light_at}"
        );
    }

    #[test]
    fn leader_reduces_throttle() {
        let cfg = VehicleConfig::shipped_default();
        let route = light_route(900.0, 1000.0, 13.4);
        let scen = ScenarioConfig {
            spat_offsets_s: vec![15.0],
            ..Default::default()
        };
        let world = World::new(route.clone(), scen);
        let mut driver = BaselineDriver::new(cfg.clone(), route.clone());
        let plant = Powertrain::with_speed(cfg.clone(), 10.0);
        let mut snap = world.snapshot(&plant.state);
        let free = driver.drive(&snap, &plant.state);

        let mut driver2 = BaselineDriver::new(cfg.clone(), route);
        snap.obstacles.push(Obstacle {
            id: 3,
            kind: ObstacleKind::Vehicle,
            arc_m: plant.state.arc_m + 5.0 + EGO_LENGTH_M,
            speed_mps: 10.0,
            accel_mps2: 0.0,
            length_m: 4.5,
            width_m: 1.9,
            heading_rad: 0.0,
        });
        let following = driver2.drive(&snap, &plant.state);
        assert!(
            following.command.throttle < free.command.throttle
                || following.command.brake > free.command.brake,
            "leader must reduce drive: free {free:?} vs following {following:?}"
        );
        assert!(following.safe_speed_mps < free.safe_speed_mps);
    }

    #[test]
    fn stop_sign_dwell_two_seconds() {
        let cfg = VehicleConfig::shipped_default();
        let sign_at = 300.0;
        let route = Route::from_cycle(
            &DriveCycle::new(
                "sgn",
                vec![
                    CycleSegment {
                        start_m: 0.0,
                        length_m: sign_at,
                        speed_limit_mps: 13.4,
                        grade: 0.0,
                        curvature_inv_m: 0.0,
                        control: Some(ControlKind::StopSign),
                    },
                    CycleSegment {
                        start_m: sign_at,
                        length_m: 700.0,
                        speed_limit_mps: 13.4,
                        grade: 0.0,
                        curvature_inv_m: 0.0,
                        control: None,
                    },
                ],
            )
            .unwrap(),
        );
        let mut world = World::new(route.clone(), ScenarioConfig::default());
        let mut driver = BaselineDriver::new(cfg.clone(), route);
        let mut plant = Powertrain::with_speed(cfg.clone(), 13.4);
        let mut stopped_at: Option<f64> = None;
        let mut resumed_at: Option<f64> = None;
        for _ in 0..6000 {
            let snap = world.snapshot(&plant.state);
            let out = driver.drive(&snap, &plant.state);
            plant.step(&out.command, 0.0);
            world.step(crate::vehicle::STEP_S, None).unwrap();
            let t = world.sim_time_s();
            if plant.state.speed_mps < STOPPED_MPS && stopped_at.is_none()
                && plant.state.arc_m > sign_at - 5.0
            {
                stopped_at = Some(t);
            }
            if let Some(t0) = stopped_at {
                if resumed_at.is_none() && plant.state.speed_mps > 0.5 {
                    resumed_at = Some(t);
                    assert!(t - t0 >= DWELL_S, "dwelled only {} s", t - t0);
                }
            }
            if plant.state.arc_m > sign_at + 50.0 {
                break;
            }
        }
        assert!(stopped_at.is_some(), "never stopped at the sign");
        assert!(resumed_at.is_some(), "never resumed after the sign");
        assert_eq!(driver.served_signs().len(), 1);
    }
}
