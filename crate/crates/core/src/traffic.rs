//! Traffic environment: traffic-light phase machines with SPaT broadcast,
//! IDM car-following ambient traffic, static obstacles, and the range-limited
//! sensor + V2I views that feed the planner.

use crate::config::{ConfigDoc, ConfigError};
use crate::cycle::{ControlKind, Route};
use crate::vehicle::VehicleState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// V2I broadcast period, s (10 Hz per the DSRC-derived cadence).
pub const SPAT_PERIOD_S: f64 = 0.1;
pub const DEFAULT_SENSOR_RANGE_M: f64 = 150.0;
pub const DEFAULT_V2I_RANGE_M: f64 = 300.0;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("negative gap: follower {follower} overlaps leader {leader} at {arc_m:.2} m")]
    NegativeGap {
        follower: u32,
        leader: u32,
        arc_m: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Red,
    Green,
    Yellow,
}

impl Phase {
    pub fn code(self) -> u8 {
        match self {
            Phase::Red => 0,
            Phase::Green => 1,
            Phase::Yellow => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Phase> {
        match c {
            0 => Some(Phase::Red),
            1 => Some(Phase::Green),
            2 => Some(Phase::Yellow),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficLight {
    pub id: u32,
    pub arc_m: f64,
    pub red_s: f64,
    pub green_s: f64,
    pub yellow_s: f64,
    pub phase_offset_s: f64,
}

impl TrafficLight {
    pub fn full_cycle_s(&self) -> f64 {
        self.red_s + self.green_s + self.yellow_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatMessage {
    pub light_id: u32,
    pub current_phase: Phase,
    pub time_remaining_s: f64,
    pub next_phase_duration_s: f64,
    pub full_cycle_s: f64,
    pub timestamp_s: f64,
}

/// Phase and timing at time `t`. Phase order is Red -> Green -> Yellow.
pub fn spat_at(light: &TrafficLight, t: f64) -> SpatMessage {
    let cycle = light.full_cycle_s();
    let tau = (t + light.phase_offset_s).rem_euclid(cycle);
    let (phase, remaining, next) = if tau < light.red_s {
        (Phase::Red, light.red_s - tau, light.green_s)
    } else if tau < light.red_s + light.green_s {
        (Phase::Green, light.red_s + light.green_s - tau, light.yellow_s)
    } else {
        (Phase::Yellow, cycle - tau, light.red_s)
    };
    SpatMessage {
        light_id: light.id,
        current_phase: phase,
        time_remaining_s: remaining,
        next_phase_duration_s: next,
        full_cycle_s: cycle,
        timestamp_s: t,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObstacleKind {
    Vehicle,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub id: u32,
    pub kind: ObstacleKind,
    pub arc_m: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
    pub length_m: f64,
    pub width_m: f64,
    pub heading_rad: f64,
}

impl Obstacle {
    pub fn fixed(id: u32, arc_m: f64, length_m: f64) -> Obstacle {
        Obstacle {
            id,
            kind: ObstacleKind::Static,
            arc_m,
            speed_mps: 0.0,
            accel_mps2: 0.0,
            length_m,
            width_m: 2.0,
            heading_rad: 0.0,
        }
    }

    /// Rear bumper arc position.
    pub fn rear_m(&self) -> f64 {
        self.arc_m - self.length_m
    }
}

/// Intelligent-Driver-Model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmParams {
    /// Maximum acceleration, m/s^2.
    pub a_max: f64,
    /// Comfortable deceleration, m/s^2.
    pub b_comf: f64,
    /// Standstill jam gap, m.
    pub s0_m: f64,
    /// Desired time headway, s.
    pub headway_s: f64,
    /// Hard deceleration clamp, m/s^2.
    pub b_max: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            a_max: 1.5,
            b_comf: 2.0,
            s0_m: 2.0,
            headway_s: 1.5,
            b_max: 4.0,
        }
    }
}

/// IDM acceleration law: free-road term with the interaction term when a
/// leader is present. The result is clamped into [-b_max, a_max]. A leader
/// overlapping the follower is a collision and reports NegativeGap.
pub fn car_following_accel(
    follower: &Obstacle,
    leader: Option<&Obstacle>,
    speed_limit_mps: f64,
    p: &IdmParams,
) -> Result<f64, TrafficError> {
    let v = follower.speed_mps;
    let v0 = speed_limit_mps.max(0.1);
    let free = p.a_max * (1.0 - (v / v0).powi(4));
    let a = match leader {
        None => free,
        Some(l) => {
            let gap = l.rear_m() - follower.arc_m;
            if gap <= 0.0 {
                return Err(TrafficError::NegativeGap {
                    follower: follower.id,
                    leader: l.id,
                    arc_m: follower.arc_m,
                });
            }
            let dv = v - l.speed_mps;
            let s_star = p.s0_m + v * p.headway_s + v * dv / (2.0 * (p.a_max * p.b_comf).sqrt());
            free - p.a_max * (s_star / gap).powi(2)
        }
    };
    Ok(a.clamp(-p.b_max, p.a_max))
}

/// All obstacles within `range_m` of the ego arc position (closed interval),
/// sorted by distance ascending, ties by id.
pub fn sensor_scan(ego_arc_m: f64, obstacles: &[Obstacle], range_m: f64) -> Vec<Obstacle> {
    let mut hits: Vec<Obstacle> = obstacles
        .iter()
        .filter(|o| (o.arc_m - ego_arc_m).abs() <= range_m)
        .copied()
        .collect();
    hits.sort_by(|a, b| {
        let da = (a.arc_m - ego_arc_m).abs();
        let db = (b.arc_m - ego_arc_m).abs();
        da.partial_cmp(&db).unwrap().then(a.id.cmp(&b.id))
    });
    hits
}

/// Arc positions of the traffic lights a route defines, in route order.
/// Light ids broadcast over V2I index this list.
pub fn light_arcs(route: &Route) -> Vec<f64> {
    route
        .controls()
        .iter()
        .filter(|c| c.kind == ControlKind::TrafficLight)
        .map(|c| c.arc_m)
        .collect()
}

/// SPaT for every light within V2I range. Messages refresh only on 10 Hz
/// ticks: between ticks the last broadcast is replayed with its original
/// timestamp.
pub fn v2i_visible(
    ego_arc_m: f64,
    lights: &[TrafficLight],
    t: f64,
    range_m: f64,
) -> Vec<SpatMessage> {
    let tq = ((t + 1e-9) / SPAT_PERIOD_S).floor() * SPAT_PERIOD_S;
    lights
        .iter()
        .filter(|l| (l.arc_m - ego_arc_m).abs() <= range_m)
        .map(|l| spat_at(l, tq))
        .collect()
}

/// Everything the planner can see at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSnapshot {
    pub sim_time_s: f64,
    pub ego: VehicleState,
    pub obstacles: Vec<Obstacle>,
    pub spat: Vec<SpatMessage>,
    pub grade: f64,
    pub speed_limit_mps: f64,
    /// Distance to the next control device ahead, with its kind.
    pub next_control: Option<(f64, ControlKind)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Initial ambient density ahead of the ego, vehicles per km. Zero
    /// disables traffic entirely.
    pub density_veh_per_km: f64,
    /// Mean headway of Poisson arrivals at the route origin, s.
    pub mean_headway_s: f64,
    pub seed: u64,
    pub max_vehicles: usize,
    pub sensor_range_m: f64,
    pub v2i_range_m: f64,
    pub spat_red_s: f64,
    pub spat_green_s: f64,
    pub spat_yellow_s: f64,
    /// Phase offsets assigned to lights in route order (cycled); empty = all 0.
    pub spat_offsets_s: Vec<f64>,
    /// Static obstacles as (arc, length) pairs.
    pub static_obstacles: Vec<(f64, f64)>,
    pub idm: IdmParams,
    pub ambient_length_m: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            density_veh_per_km: 0.0,
            mean_headway_s: 8.0,
            seed: 1,
            max_vehicles: 64,
            sensor_range_m: DEFAULT_SENSOR_RANGE_M,
            v2i_range_m: DEFAULT_V2I_RANGE_M,
            spat_red_s: 15.0,
            spat_green_s: 13.0,
            spat_yellow_s: 2.0,
            spat_offsets_s: Vec::new(),
            static_obstacles: Vec::new(),
            idm: IdmParams::default(),
            ambient_length_m: 4.5,
        }
    }
}

impl ScenarioConfig {
    pub fn with_traffic() -> Self {
        ScenarioConfig {
            density_veh_per_km: 12.0,
            ..Default::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let doc = ConfigDoc::parse(text)?;
        let mut cfg = ScenarioConfig::default();
        if let Some(s) = doc.section("traffic") {
            cfg.density_veh_per_km = s.f64_or("density_veh_per_km", cfg.density_veh_per_km)?;
            cfg.mean_headway_s = s.f64_or("mean_headway_s", cfg.mean_headway_s)?;
            cfg.seed = s.u64_or("seed", cfg.seed)?;
            cfg.max_vehicles = s.u64_or("max_vehicles", cfg.max_vehicles as u64)? as usize;
            cfg.ambient_length_m = s.f64_or("vehicle_length", cfg.ambient_length_m)?;
        }
        if let Some(s) = doc.section("sensor") {
            cfg.sensor_range_m = s.f64_or("range", cfg.sensor_range_m)?;
        }
        if let Some(s) = doc.section("v2i") {
            cfg.v2i_range_m = s.f64_or("range", cfg.v2i_range_m)?;
        }
        if let Some(s) = doc.section("spat") {
            cfg.spat_red_s = s.f64_or("red", cfg.spat_red_s)?;
            cfg.spat_green_s = s.f64_or("green", cfg.spat_green_s)?;
            cfg.spat_yellow_s = s.f64_or("yellow", cfg.spat_yellow_s)?;
            if let Some(e) = s.get("offsets") {
                cfg.spat_offsets_s = e.parse_vec_f64()?;
            }
        }
        if let Some(s) = doc.section("obstacles") {
            for e in s.values("static") {
                let v = e.parse_vec_f64()?;
                if v.len() == 2 {
                    cfg.static_obstacles.push((v[0], v[1]));
                }
            }
        }
        if let Some(s) = doc.section("idm") {
            cfg.idm.a_max = s.f64_or("a_max", cfg.idm.a_max)?;
            cfg.idm.b_comf = s.f64_or("b_comf", cfg.idm.b_comf)?;
            cfg.idm.s0_m = s.f64_or("s0", cfg.idm.s0_m)?;
            cfg.idm.headway_s = s.f64_or("headway", cfg.idm.headway_s)?;
            cfg.idm.b_max = s.f64_or("b_max", cfg.idm.b_max)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy)]
struct Ambient {
    id: u32,
    arc_m: f64,
    speed_mps: f64,
    accel_mps2: f64,
}

/// The single-route traffic world: owns the lights, ambient vehicles, and
/// static obstacles, and advances them at the bus rate.
#[derive(Debug, Clone)]
pub struct World {
    pub cfg: ScenarioConfig,
    route: Route,
    lights: Vec<TrafficLight>,
    statics: Vec<Obstacle>,
    vehicles: Vec<Ambient>,
    rng: ChaCha8Rng,
    next_vehicle_id: u32,
    arrival_due_s: f64,
    sim_time_s: f64,
}

impl World {
    pub fn new(route: Route, cfg: ScenarioConfig) -> World {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut lights = Vec::new();
        let mut light_id = 0u32;
        for ctrl in route.controls() {
            if ctrl.kind == ControlKind::TrafficLight {
                let offset = if cfg.spat_offsets_s.is_empty() {
                    0.0
                } else {
                    cfg.spat_offsets_s[light_id as usize % cfg.spat_offsets_s.len()]
                };
                lights.push(TrafficLight {
                    id: light_id,
                    arc_m: ctrl.arc_m,
                    red_s: cfg.spat_red_s,
                    green_s: cfg.spat_green_s,
                    yellow_s: cfg.spat_yellow_s,
                    phase_offset_s: offset,
                });
                light_id += 1;
            }
        }
        let statics: Vec<Obstacle> = cfg
            .static_obstacles
            .iter()
            .enumerate()
            .map(|(i, &(arc, len))| Obstacle::fixed(10_000 + i as u32, arc, len))
            .collect();

        // Seed initial traffic ahead of the ego: Poisson count at the
        // configured density, spread over the route past a protected zone.
        let mut vehicles = Vec::new();
        let mut next_vehicle_id = 1u32;
        if cfg.density_veh_per_km > 0.0 {
            let usable_m = (route.total_length_m() - 60.0).max(0.0);
            let n = ((cfg.density_veh_per_km * usable_m / 1000.0).round() as usize)
                .min(cfg.max_vehicles);
            let mut arcs: Vec<f64> = (0..n)
                .map(|_| 60.0 + rng.random::<f64>() * usable_m)
                .collect();
            arcs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let min_gap = cfg.idm.s0_m + cfg.ambient_length_m + 4.0;
            let mut last = f64::NEG_INFINITY;
            for arc in arcs {
                let arc = arc.max(last + min_gap);
                if arc > route.total_length_m() {
                    break;
                }
                vehicles.push(Ambient {
                    id: next_vehicle_id,
                    arc_m: arc,
                    speed_mps: route.speed_limit_at(arc) * 0.9,
                    accel_mps2: 0.0,
                });
                next_vehicle_id += 1;
                last = arc;
            }
        }

        let arrival_due_s = if cfg.density_veh_per_km > 0.0 {
            exp_sample(&mut rng, cfg.mean_headway_s)
        } else {
            f64::INFINITY
        };

        World {
            cfg,
            route,
            lights,
            statics,
            vehicles,
            rng,
            next_vehicle_id,
            arrival_due_s,
            sim_time_s: 0.0,
        }
    }

    pub fn route(&self) -> &Route {
        &self.route
    }

    pub fn lights(&self) -> &[TrafficLight] {
        &self.lights
    }

    pub fn sim_time_s(&self) -> f64 {
        self.sim_time_s
    }

    pub fn ambient_obstacles(&self) -> Vec<Obstacle> {
        self.vehicles
            .iter()
            .map(|v| Obstacle {
                id: v.id,
                kind: ObstacleKind::Vehicle,
                arc_m: v.arc_m,
                speed_mps: v.speed_mps,
                accel_mps2: v.accel_mps2,
                length_m: self.cfg.ambient_length_m,
                width_m: 1.9,
                heading_rad: 0.0,
            })
            .chain(self.statics.iter().copied())
            .collect()
    }

    /// Should a vehicle at `arc`/`v` treat this light as a stop? Red always;
    /// Yellow only when a comfortable stop is still possible.
    pub fn light_demands_stop(&self, light: &TrafficLight, arc_m: f64, v: f64, t: f64) -> bool {
        let msg = spat_at(light, t);
        match msg.current_phase {
            Phase::Red => true,
            Phase::Yellow => {
                let dist = light.arc_m - arc_m;
                dist > 0.0 && v * v / (2.0 * dist.max(0.1)) <= self.cfg.idm.b_comf
            }
            Phase::Green => false,
        }
    }

    /// Advance ambient traffic by one step. The ego (if any) participates as
    /// an obstacle the ambient vehicles must follow.
    pub fn step(&mut self, dt: f64, ego: Option<&Obstacle>) -> Result<(), TrafficError> {
        let t = self.sim_time_s;
        let p = self.cfg.idm;
        let mut blockers: Vec<Obstacle> = self.ambient_obstacles();
        if let Some(e) = ego {
            blockers.push(*e);
        }
        blockers.sort_by(|a, b| a.arc_m.partial_cmp(&b.arc_m).unwrap().then(a.id.cmp(&b.id)));

        let mut accels = Vec::with_capacity(self.vehicles.len());
        for v in &self.vehicles {
            let me = Obstacle {
                id: v.id,
                kind: ObstacleKind::Vehicle,
                arc_m: v.arc_m,
                speed_mps: v.speed_mps,
                accel_mps2: v.accel_mps2,
                length_m: self.cfg.ambient_length_m,
                width_m: 1.9,
                heading_rad: 0.0,
            };
            let leader = blockers
                .iter()
                .find(|o| o.arc_m > v.arc_m || (o.arc_m == v.arc_m && o.id != v.id && o.id > v.id));
            let limit = self.route.speed_limit_at(v.arc_m);
            let mut a = car_following_accel(&me, leader, limit, &p)?;
            for light in &self.lights {
                if light.arc_m <= v.arc_m {
                    continue;
                }
                if self.light_demands_stop(light, v.arc_m, v.speed_mps, t) {
                    let stop = Obstacle::fixed(u32::MAX, light.arc_m, 0.0);
                    let a_stop = car_following_accel(&me, Some(&stop), limit, &p)?;
                    a = a.min(a_stop);
                }
                break; // only the nearest light ahead binds
            }
            accels.push(a);
        }
        for (v, a) in self.vehicles.iter_mut().zip(accels) {
            let v_new = (v.speed_mps + a * dt).max(0.0);
            v.accel_mps2 = (v_new - v.speed_mps) / dt;
            v.arc_m += v_new * dt;
            v.speed_mps = v_new;
        }
        let end = self.route.total_length_m() + 100.0;
        self.vehicles.retain(|v| v.arc_m <= end);

        // Poisson arrivals at the origin, deferred while the mouth is blocked.
        self.sim_time_s += dt;
        if self.sim_time_s >= self.arrival_due_s && self.vehicles.len() < self.cfg.max_vehicles {
            let mouth_clear = self
                .vehicles
                .iter()
                .map(|v| v.rear_m(self.cfg.ambient_length_m))
                .chain(ego.map(|e| e.rear_m()))
                .fold(f64::INFINITY, f64::min)
                > self.cfg.idm.s0_m + self.cfg.ambient_length_m + 2.0;
            if mouth_clear {
                let limit = self.route.speed_limit_at(0.0);
                self.vehicles.push(Ambient {
                    id: self.next_vehicle_id,
                    arc_m: 0.0,
                    speed_mps: limit * 0.5,
                    accel_mps2: 0.0,
                });
                self.next_vehicle_id += 1;
                self.arrival_due_s =
                    self.sim_time_s + exp_sample(&mut self.rng, self.cfg.mean_headway_s);
            }
            // else: retry next tick without consuming randomness
        }
        Ok(())
    }

    /// Assemble the planner-facing view around the ego vehicle.
    pub fn snapshot(&self, ego: &VehicleState) -> EnvSnapshot {
        let obstacles = sensor_scan(ego.arc_m, &self.ambient_obstacles(), self.cfg.sensor_range_m);
        let spat = v2i_visible(ego.arc_m, &self.lights, self.sim_time_s, self.cfg.v2i_range_m);
        EnvSnapshot {
            sim_time_s: self.sim_time_s,
            ego: *ego,
            obstacles,
            spat,
            grade: self.route.grade_at(ego.arc_m),
            speed_limit_mps: self.route.speed_limit_at(ego.arc_m),
            next_control: self
                .route
                .next_control(ego.arc_m)
                .map(|c| (c.arc_m - ego.arc_m, c.kind)),
        }
    }
}

impl Ambient {
    fn rear_m(&self, length_m: f64) -> f64 {
        self.arc_m - length_m
    }
}

fn exp_sample(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    let u: f64 = rng.random::<f64>().max(1e-12);
    -mean * u.ln()
}
