//! Banded cruise optimizer: dynamic program over a distance x speed grid,
//! minimizing quasi-static fuel plus a time value, with acceleration limits
//! and curvature/limit caps. Ties break toward the higher speed.

use super::{BandSpec, PlanError, PlanMode, PlanPoint, SpeedPlan};
use crate::cycle::Route;
use crate::vehicle::{
    effective_mass_kg, road_load_n, turbine_speed_radps, VehicleConfig,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CruiseConfig {
    pub horizon_m: f64,
    pub dist_step_m: f64,
    pub speed_step_mps: f64,
    pub accel_min_mps2: f64,
    pub accel_max_mps2: f64,
    pub a_lat_max_mps2: f64,
}

impl Default for CruiseConfig {
    fn default() -> Self {
        CruiseConfig {
            horizon_m: 1000.0,
            dist_step_m: 10.0,
            speed_step_mps: 0.25,
            accel_min_mps2: -1.5,
            accel_max_mps2: 1.0,
            a_lat_max_mps2: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSample {
    pub arc_m: f64,
    pub grade: f64,
    pub speed_limit_mps: f64,
    pub curvature_inv_m: f64,
}

/// Route preview over the planning horizon, sampled at the DP distance step.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteWindow {
    pub samples: Vec<WindowSample>,
    pub a_lat_max_mps2: f64,
}

impl RouteWindow {
    pub fn from_route(
        route: &Route,
        start_arc_m: f64,
        horizon_m: f64,
        dist_step_m: f64,
        a_lat_max_mps2: f64,
    ) -> RouteWindow {
        let end = (start_arc_m + horizon_m).min(route.total_length_m());
        let n = (((end - start_arc_m) / dist_step_m).floor() as usize).max(1);
        let samples = (0..=n)
            .map(|k| {
                let arc = start_arc_m + k as f64 * dist_step_m;
                WindowSample {
                    arc_m: arc,
                    grade: route.grade_at(arc),
                    speed_limit_mps: route.speed_limit_at(arc),
                    curvature_inv_m: route.curvature_at(arc),
                }
            })
            .collect();
        RouteWindow {
            samples,
            a_lat_max_mps2,
        }
    }

    /// Speed cap at a sample: the limit, tightened by lateral acceleration
    /// through the local curvature.
    pub fn cap_at(&self, idx: usize) -> f64 {
        let s = &self.samples[idx];
        peripheral_speed_cap(s.speed_limit_mps, s.curvature_inv_m, self.a_lat_max_mps2)
    }
}

/// Curvature-limited speed: v <= sqrt(a_lat_max / |kappa|), under the limit.
pub fn peripheral_speed_cap(limit_mps: f64, curvature_inv_m: f64, a_lat_max: f64) -> f64 {
    if curvature_inv_m.abs() < 1e-9 {
        limit_mps
    } else {
        limit_mps.min((a_lat_max / curvature_inv_m.abs()).sqrt())
    }
}

/// Highest gear that keeps the locked engine at or above idle at speed `v`.
pub fn top_feasible_gear(cfg: &VehicleConfig, v_mps: f64) -> u8 {
    for g in (1..=8u8).rev() {
        if turbine_speed_radps(cfg, v_mps, g) >= cfg.idle_speed_radps {
            return g;
        }
    }
    1
}

/// Quasi-static fuel rate at steady or slowly varying speed: engine speed
/// from the locked top-feasible gear, torque from the force balance, fuel
/// from the table (floored at zero torque).
pub fn quasi_static_fuel_gps(cfg: &VehicleConfig, v_mps: f64, accel_mps2: f64, grade: f64) -> f64 {
    let gear = top_feasible_gear(cfg, v_mps);
    let w = turbine_speed_radps(cfg, v_mps, gear).max(cfg.idle_speed_radps);
    let force = effective_mass_kg(cfg, gear) * accel_mps2 + road_load_n(cfg, v_mps, grade);
    let torque = force * cfg.wheel_radius_m / (cfg.final_drive * cfg.gear_ratios[gear as usize - 1]);
    cfg.engine.fuel.eval(w, torque.max(0.0))
}

/// Stage cost of moving `dist_m` from speed `v_i` to `v_k` on `grade`, or
/// None when the transition is dynamically infeasible. Shared by the DP and
/// by exhaustive reference enumerations so costs compare bit-exactly.
pub fn edge_cost(
    cfg: &VehicleConfig,
    lambda_g_per_s: f64,
    dist_m: f64,
    grade: f64,
    v_i: f64,
    v_k: f64,
    ccfg: &CruiseConfig,
) -> Option<f64> {
    let a = (v_k * v_k - v_i * v_i) / (2.0 * dist_m);
    if a < ccfg.accel_min_mps2 || a > ccfg.accel_max_mps2 {
        return None;
    }
    let v_avg = 0.5 * (v_i + v_k);
    if v_avg <= 0.0 {
        return None;
    }
    let gear = top_feasible_gear(cfg, v_avg);
    let w = turbine_speed_radps(cfg, v_avg, gear).max(cfg.idle_speed_radps);
    let force = effective_mass_kg(cfg, gear) * a + road_load_n(cfg, v_avg, grade);
    let torque = force * cfg.wheel_radius_m / (cfg.final_drive * cfg.gear_ratios[gear as usize - 1]);
    if torque > cfg.engine.torque.eval(w) {
        return None; // cannot climb that hard in the top feasible gear
    }
    let dt = dist_m / v_avg;
    let fuel = cfg.engine.fuel.eval(w, torque.max(0.0));
    Some(fuel * dt + lambda_g_per_s * dt)
}

/// Marginal fuel per joule of crank work around the cruise operating point,
/// from the fuel table.
pub fn marginal_fuel_per_j(cfg: &VehicleConfig, v_mps: f64) -> f64 {
    let gear = top_feasible_gear(cfg, v_mps);
    let w = turbine_speed_radps(cfg, v_mps, gear).max(cfg.idle_speed_radps);
    let t0 = (road_load_n(cfg, v_mps, 0.0) * cfg.wheel_radius_m
        / (cfg.final_drive * cfg.gear_ratios[gear as usize - 1]))
        .max(0.0);
    let dt = 20.0;
    ((cfg.engine.fuel.eval(w, t0 + dt) - cfg.engine.fuel.eval(w, t0)) / (w * dt)).max(1e-6)
}

/// Terminal correction: ending the horizon below the reference speed leaves
/// a kinetic-energy deficit the vehicle must later buy back as fuel. Without
/// it the argmin path always coasts out at the horizon end.
pub fn terminal_ke_cost(cfg: &VehicleConfig, band: &BandSpec, v_term: f64) -> f64 {
    let v_ref = band.v_ref_mps;
    if v_term >= v_ref {
        return 0.0;
    }
    let gear = top_feasible_gear(cfg, v_ref);
    let ke = 0.5 * effective_mass_kg(cfg, gear) * (v_ref * v_ref - v_term * v_term);
    ke * marginal_fuel_per_j(cfg, v_ref)
}

/// Calibrate the time value so the flat-road steady per-meter cost
/// (fuel + lambda)/v is minimized at `v_ref` rather than at some slower
/// speed: the smallest tilt making v_ref beat every candidate below it,
/// with a small margin.
pub fn calibrate_lambda(cfg: &VehicleConfig, v_ref_mps: f64) -> f64 {
    let f = |v: f64| quasi_static_fuel_gps(cfg, v, 0.0, 0.0);
    let f_ref = f(v_ref_mps);
    let mut lambda: f64 = 0.0;
    let mut v = v_ref_mps - 0.25;
    while v >= (v_ref_mps - 4.0).max(1.0) {
        // (f_ref + L)/v_ref <= (f(v) + L)/v  =>  L >= (f_ref*v - f(v)*v_ref)/(v_ref - v)
        let need = (f_ref * v - f(v) * v_ref_mps) / (v_ref_mps - v);
        lambda = lambda.max(need);
        v -= 0.25;
    }
    (lambda.max(0.0) * 1.02).max(1e-6)
}

/// The speed grid spanning the band.
pub fn speed_grid(band: &BandSpec, step: f64) -> Vec<f64> {
    let n = ((band.v_high_mps - band.v_low_mps) / step).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| band.v_low_mps + k as f64 * step).collect();
    if let Some(&last) = grid.last() {
        if band.v_high_mps - last > 1e-9 {
            grid.push(band.v_high_mps);
        }
    }
    grid
}

/// Distance-speed dynamic program over the window. Returns the argmin path
/// from the current speed snapped to the nearest grid point. Ties break
/// toward the higher speed at every predecessor choice and at the terminal.
pub fn eco_cruise_plan(
    cfg: &VehicleConfig,
    window: &RouteWindow,
    band: &BandSpec,
    v_now_mps: f64,
    lambda_g_per_s: f64,
    ccfg: &CruiseConfig,
) -> Result<SpeedPlan, PlanError> {
    let grid = speed_grid(band, ccfg.speed_step_mps);
    let stages = window.samples.len();
    if stages < 2 || grid.is_empty() {
        return Err(PlanError::InfeasibleBand);
    }

    // Per-stage admissible speed indices under the local cap.
    let admissible: Vec<Vec<usize>> = (0..stages)
        .map(|j| {
            let cap = window.cap_at(j) + 1e-9;
            (0..grid.len()).filter(|&k| grid[k] <= cap).collect()
        })
        .collect();
    if admissible.iter().any(|a| a.is_empty()) {
        return Err(PlanError::InfeasibleBand);
    }

    // Start node: nearest admissible grid point to the current speed.
    let start_k = *admissible[0]
        .iter()
        .min_by(|&&a, &&b| {
            let da = (grid[a] - v_now_mps).abs();
            let db = (grid[b] - v_now_mps).abs();
            da.partial_cmp(&db).unwrap().then(b.cmp(&a))
        })
        .ok_or(PlanError::InfeasibleBand)?;

    const INF: f64 = f64::INFINITY;
    let n = grid.len();
    let mut cost = vec![vec![INF; n]; stages];
    let mut pred = vec![vec![usize::MAX; n]; stages];
    cost[0][start_k] = 0.0;

    for j in 1..stages {
        let d = window.samples[j].arc_m - window.samples[j - 1].arc_m;
        let grade = window.samples[j - 1].grade;
        for &k in &admissible[j] {
            let mut best = INF;
            let mut best_i = usize::MAX;
            for &i in &admissible[j - 1] {
                if cost[j - 1][i].is_infinite() {
                    continue;
                }
                if let Some(ec) = edge_cost(cfg, lambda_g_per_s, d, grade, grid[i], grid[k], ccfg) {
                    let c = cost[j - 1][i] + ec;
                    if c < best || (c == best && grid[i] > grid[best_i]) {
                        best = c;
                        best_i = i;
                    }
                }
            }
            cost[j][k] = best;
            pred[j][k] = best_i;
        }
    }

    // Terminal: minimum total cost including the kinetic-energy deficit
    // correction, ties toward the higher speed.
    let last = stages - 1;
    let mut term = usize::MAX;
    let mut term_cost = INF;
    for &k in &admissible[last] {
        let c = cost[last][k] + terminal_ke_cost(cfg, band, grid[k]);
        if c < term_cost || (c == term_cost && term != usize::MAX && grid[k] > grid[term]) {
            term_cost = c;
            term = k;
        }
    }
    if term == usize::MAX || term_cost.is_infinite() {
        return Err(PlanError::InfeasibleBand);
    }

    let mut idx = vec![0usize; stages];
    idx[last] = term;
    for j in (1..stages).rev() {
        idx[j - 1] = pred[j][idx[j]];
    }

    let points = (0..stages)
        .map(|j| PlanPoint {
            arc_offset_m: window.samples[j].arc_m - window.samples[0].arc_m,
            target_speed_mps: grid[idx[j]],
        })
        .collect();
    let plan = SpeedPlan {
        anchor_m: window.samples[0].arc_m,
        points,
        mode: PlanMode::EcoCruise,
    };
    debug_assert!(plan.check_shape());
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycle::{CycleSegment, DriveCycle};

    fn flat_route(len: f64, limit: f64) -> Route {
        Route::from_cycle(
            &DriveCycle::new(
                "f",
                vec![CycleSegment {
                    start_m: 0.0,
                    length_m: len,
                    speed_limit_mps: limit,
                    grade: 0.0,
                    curvature_inv_m: 0.0,
                    control: None,
                }],
            )
            .unwrap(),
        )
    }

    #[test]
    fn degenerate_band_pins_to_ref() {
        let cfg = VehicleConfig::shipped_default();
        let route = flat_route(1200.0, 13.4);
        let ccfg = CruiseConfig::default();
        let window = RouteWindow::from_route(&route, 0.0, 1000.0, 10.0, ccfg.a_lat_max_mps2);
        let band = BandSpec {
            v_ref_mps: 13.4,
            v_low_mps: 13.4,
            v_high_mps: 13.4,
        };
        let plan = eco_cruise_plan(cfg, &window, &band, 13.4, 0.1, &ccfg).unwrap();
        assert!(plan.points.iter().all(|p| p.target_speed_mps == 13.4));
    }

    #[test]
    fn calibrated_lambda_keeps_flat_plan_near_ref() {
        let cfg = VehicleConfig::shipped_default();
        let v_ref = 13.4;
        let lambda = calibrate_lambda(cfg, v_ref);
        assert!(lambda > 0.0, "lambda = {lambda}");
        let route = flat_route(1200.0, v_ref);
        let ccfg = CruiseConfig::default();
        let window = RouteWindow::from_route(&route, 0.0, 1000.0, 10.0, ccfg.a_lat_max_mps2);
        let band = BandSpec::around(v_ref, 2.0);
        // Band may not exceed the limit.
        let band = BandSpec {
            v_high_mps: v_ref,
            ..band
        };
        let plan = eco_cruise_plan(cfg, &window, &band, v_ref, lambda, &ccfg).unwrap();
        for p in &plan.points {
            assert!(
                (p.target_speed_mps - v_ref).abs() <= ccfg.speed_step_mps + 1e-9,
                "target {} strays from v_ref {v_ref}",
                p.target_speed_mps
            );
        }
    }

    #[test]
    fn hill_plan_beats_constant_speed() {
        // 400 m approach, 200 m up at +4%, 200 m down at -4%, 400 m out.
        let cfg = VehicleConfig::shipped_default();
        let v_ref = 13.4;
        let segs = [
            (400.0, 0.0),
            (200.0, 0.04),
            (200.0, -0.04),
            (400.0, 0.0),
        ];
        let mut start = 0.0;
        let cycle = DriveCycle::new(
            "hill",
            segs.iter()
                .map(|&(len, grade)| {
                    let s = CycleSegment {
                        start_m: start,
                        length_m: len,
                        speed_limit_mps: v_ref,
                        grade,
                        curvature_inv_m: 0.0,
                        control: None,
                    };
                    start += len;
                    s
                })
                .collect(),
        )
        .unwrap();
        let route = Route::from_cycle(&cycle);
        let ccfg = CruiseConfig::default();
        let lambda = calibrate_lambda(cfg, v_ref);
        let window = RouteWindow::from_route(&route, 0.0, 1200.0, 10.0, ccfg.a_lat_max_mps2);
        let band = BandSpec {
            v_ref_mps: v_ref,
            v_low_mps: v_ref - 2.0,
            v_high_mps: v_ref, // capped by the limit
        };
        let plan = eco_cruise_plan(cfg, &window, &band, v_ref, lambda, &ccfg).unwrap();

        // Cost of the DP path vs the constant-v_ref path through the same edges.
        let path_cost = |speeds: &[f64]| -> f64 {
            let mut c = 0.0;
            for j in 1..window.samples.len() {
                let d = window.samples[j].arc_m - window.samples[j - 1].arc_m;
                let g = window.samples[j - 1].grade;
                c += edge_cost(cfg, lambda, d, g, speeds[j - 1], speeds[j], &ccfg)
                    .expect("feasible");
            }
            c
        };
        let dp_speeds: Vec<f64> = plan.points.iter().map(|p| p.target_speed_mps).collect();
        let const_speeds = vec![v_ref; window.samples.len()];
        let dp_cost = path_cost(&dp_speeds);
        let const_cost = path_cost(&const_speeds);
        assert!(dp_cost <= const_cost);
        assert!(
            (const_cost - dp_cost) / const_cost >= 0.001,
            "DP {dp_cost} vs const {const_cost}"
        );
    }

    #[test]
    fn infeasible_band_detected() {
        // A sharp curve caps speed below the band floor.
        let cfg = VehicleConfig::shipped_default();
        let cycle = DriveCycle::new(
            "curve",
            vec![
                CycleSegment {
                    start_m: 0.0,
                    length_m: 300.0,
                    speed_limit_mps: 13.4,
                    grade: 0.0,
                    curvature_inv_m: 0.0,
                    control: None,
                },
                CycleSegment {
                    start_m: 300.0,
                    length_m: 100.0,
                    speed_limit_mps: 13.4,
                    grade: 0.0,
                    curvature_inv_m: 0.1, // cap = sqrt(3/0.1) = 5.48 m/s
                    control: None,
                },
                CycleSegment {
                    start_m: 400.0,
                    length_m: 300.0,
                    speed_limit_mps: 13.4,
                    grade: 0.0,
                    curvature_inv_m: 0.0,
                    control: None,
                },
            ],
        )
        .unwrap();
        let route = Route::from_cycle(&cycle);
        let ccfg = CruiseConfig::default();
        let window = RouteWindow::from_route(&route, 0.0, 700.0, 10.0, ccfg.a_lat_max_mps2);
        let band = BandSpec {
            v_ref_mps: 13.4,
            v_low_mps: 11.4,
            v_high_mps: 13.4,
        };
        assert!(matches!(
            eco_cruise_plan(cfg, &window, &band, 13.4, 0.1, &ccfg),
            Err(PlanError::InfeasibleBand)
        ));
    }

    #[test]
    fn curvature_cap_formula() {
        assert_eq!(peripheral_speed_cap(20.0, 0.0, 3.0), 20.0);
        let cap = peripheral_speed_cap(20.0, 0.05, 3.0);
        assert!((cap - (3.0_f64 / 0.05).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dp_matches_hand_enumeration_tiny_instance() {
        // 3 stages x 3 speeds, checked against a by-hand enumeration of the
        // 9 feasible paths using the same edge costs.
        let cfg = VehicleConfig::shipped_default();
        let route = flat_route(100.0, 12.0);
        let ccfg = CruiseConfig::default();
        let window = RouteWindow::from_route(&route, 0.0, 20.0, 10.0, ccfg.a_lat_max_mps2);
        assert_eq!(window.samples.len(), 3);
        let band = BandSpec {
            v_ref_mps: 11.5,
            v_low_mps: 11.0,
            v_high_mps: 11.5,
        };
        let lambda = 0.05;
        let grid = speed_grid(&band, 0.25);
        assert_eq!(grid.len(), 3);

        let plan = eco_cruise_plan(cfg, &window, &band, 11.25, lambda, &ccfg).unwrap();

        // Enumerate: start fixed at 11.25 (snap of 11.25), free middle/end.
        let mut best: Option<(f64, Vec<f64>)> = None;
        for &v1 in &grid {
            for &v2 in &grid {
                let c1 = edge_cost(cfg, lambda, 10.0, 0.0, 11.25, v1, &ccfg);
                let c2 = edge_cost(cfg, lambda, 10.0, 0.0, v1, v2, &ccfg);
                if let (Some(c1), Some(c2)) = (c1, c2) {
                    let total = c1 + c2 + terminal_ke_cost(cfg, &band, v2);
                    let path = vec![11.25, v1, v2];
                    let replace = match &best {
                        None => true,
                        Some((bc, bp)) => {
                            total < *bc
                                || (total == *bc
                                    && (v2 > bp[2] || (v2 == bp[2] && v1 > bp[1])))
                        }
                    };
                    if replace {
                        best = Some((total, path));
                    }
                }
            }
        }
        let (_, best_path) = best.unwrap();
        let dp_path: Vec<f64> = plan.points.iter().map(|p| p.target_speed_mps).collect();
        assert_eq!(dp_path, best_path);
    }
}
