//! Coast prediction: how far the vehicle rolls from v0 to v_end with closed
//! throttle, fuel cut, no brake, and the lockup clutch open — road load plus
//! overrun driveline drag, integrated at the plant step. Below the DFCO
//! cutoff speed the plant cannot hold fuel cut (the injectors come back and
//! the converter creeps), so the tail to v_end is covered by the gentle
//! friction-brake cap the approach strategy uses there.

use super::PlanError;
use crate::vehicle::{
    effective_mass_kg, engine_friction_nm, road_load_n, turbine_speed_radps, VehicleConfig,
    STEP_S,
};

/// Deceleration of the low-speed friction-brake cap, m/s^2.
pub const CAP_DECEL_MPS2: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoastPoint {
    pub dist_m: f64,
    pub speed_mps: f64,
    pub time_s: f64,
}

/// Driveline drag force while coasting under fuel cut at road speed `v` in
/// `gear`: the engine is wheel-driven through the closed (decel-lockup)
/// clutch and its motoring friction retards the vehicle. Below the DFCO
/// restart threshold there is no fuel-cut drag.
pub fn coast_drag_force_n(cfg: &VehicleConfig, v: f64, gear: u8) -> f64 {
    let wt = turbine_speed_radps(cfg, v, gear);
    if wt <= cfg.idle_speed_radps * 1.1 {
        return 0.0;
    }
    engine_friction_nm(cfg, wt) * cfg.gear_ratios[gear as usize - 1] * cfg.final_drive
        / cfg.wheel_radius_m
}

/// Passive driveline force while braking with the engine fueled: motoring
/// friction through the locked clutch above the lockup point, converter
/// creep drive below it. Positive retards the vehicle.
pub fn braking_passive_force_n(cfg: &VehicleConfig, v: f64, gear: u8) -> f64 {
    let wt = turbine_speed_radps(cfg, v, gear);
    let reflect =
        cfg.gear_ratios[gear as usize - 1] * cfg.final_drive / cfg.wheel_radius_m;
    if gear >= cfg.converter.lockup_min_gear && wt >= cfg.converter.lockup_turbine_radps {
        engine_friction_nm(cfg, wt) * reflect
    } else {
        let we = cfg.idle_speed_radps;
        let sr = (wt / we).clamp(0.0, 1.0);
        let impeller =
            (we * crate::vehicle::RPM_PER_RADPS / cfg.converter.k_factor.eval(sr)).powi(2);
        -cfg.converter.torque_ratio.eval(sr) * impeller * reflect
    }
}

/// The gear the coasting downshift cascade settles into at speed `v`.
pub fn coast_gear_at(cfg: &VehicleConfig, v: f64) -> u8 {
    let mut gear = 8u8;
    while gear > 1 && v < cfg.shift.downshift[gear as usize - 2].eval(0.0) {
        gear -= 1;
    }
    gear
}

/// Road speed below which the plant drops DFCO (first gear, turbine at the
/// restart threshold).
pub fn dfco_cutoff_speed_mps(cfg: &VehicleConfig) -> f64 {
    cfg.idle_speed_radps * 1.1 * cfg.wheel_radius_m / (cfg.final_drive * cfg.gear_ratios[0])
}

/// Predict the coasting trajectory from `v0` down to `v_end` over a grade
/// profile (a function of distance from the prediction origin). Fails with
/// NeverReaches when the road load does not decelerate the vehicle.
pub fn coast_profile(
    cfg: &VehicleConfig,
    v0: f64,
    v_end: f64,
    grade_at: &dyn Fn(f64) -> f64,
) -> Result<Vec<CoastPoint>, PlanError> {
    assert!(v0 > v_end && v_end >= 0.0, "coast needs v0 > v_end >= 0");
    let v_cut = dfco_cutoff_speed_mps(cfg);
    let mut v = v0;
    let mut x = 0.0;
    let mut t = 0.0;
    let mut gear = coast_gear_at(cfg, v0);
    let mut points = vec![CoastPoint {
        dist_m: 0.0,
        speed_mps: v0,
        time_s: 0.0,
    }];
    let mut last_progress_v = v0;
    let mut last_progress_t = 0.0;
    loop {
        if gear > 1 && v < cfg.shift.downshift[gear as usize - 2].eval(0.0) {
            gear -= 1;
        }
        let a = if v > v_cut {
            let drag = coast_drag_force_n(cfg, v, gear) + road_load_n(cfg, v, grade_at(x));
            -drag / effective_mass_kg(cfg, gear)
        } else {
            -CAP_DECEL_MPS2
        };
        if points.len() == 1 && a >= -1e-5 {
            return Err(PlanError::NeverReaches);
        }
        let v_new = (v + a * STEP_S).max(0.0);
        x += v_new * STEP_S;
        t += STEP_S;
        v = v_new;
        points.push(CoastPoint {
            dist_m: x,
            speed_mps: v,
            time_s: t,
        });
        if v <= v_end + 1e-9 {
            return Ok(points);
        }
        // Stall detection: coasting must keep shedding speed.
        if v < last_progress_v - 0.05 {
            last_progress_v = v;
            last_progress_t = t;
        } else if t - last_progress_t > 10.0 {
            return Err(PlanError::NeverReaches);
        }
        if t > 600.0 {
            return Err(PlanError::NeverReaches);
        }
    }
}

/// Distance covered while coasting from `v0` to `v_end` on a constant grade.
pub fn coast_distance(
    cfg: &VehicleConfig,
    v0: f64,
    v_end: f64,
    grade: f64,
) -> Result<f64, PlanError> {
    if v0 <= v_end {
        return Ok(0.0);
    }
    Ok(coast_profile(cfg, v0, v_end, &|_| grade)?
        .last()
        .map_or(0.0, |p| p.dist_m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::actuator_map;
    use crate::vehicle::{ControlCommand, Powertrain, VehicleConfig};

    #[test]
    fn degenerate_coast_is_zero() {
        let cfg = VehicleConfig::shipped_default();
        assert_eq!(coast_distance(cfg, 10.0, 10.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn steep_downgrade_never_reaches() {
        let cfg = VehicleConfig::shipped_default();
        assert!(matches!(
            coast_distance(cfg, 20.0, 0.0, -0.08),
            Err(PlanError::NeverReaches)
        ));
    }

    #[test]
    fn prediction_matches_plant_rollout_within_1pct() {
        // The predictor integrates a quasi-static model; the oracle is the
        // full plant coasting closed-loop: DFCO until the cutoff, then the
        // friction-brake cap to standstill.
        let cfg = VehicleConfig::shipped_default();
        let v0 = 20.0;
        let predicted = coast_distance(cfg, v0, 0.0, 0.0).unwrap();

        let v_cut = dfco_cutoff_speed_mps(cfg);
        let mut plant = Powertrain::with_speed(cfg.clone(), v0);
        let start = plant.state.arc_m;
        let mut steps = 0u32;
        while plant.state.speed_mps > 0.0 && steps < 60_000 {
            let cmd = if plant.state.speed_mps > v_cut {
                ControlCommand::coasting_dfco()
            } else {
                actuator_map(cfg, &plant.state, 0.0, -CAP_DECEL_MPS2)
            };
            plant.step(&cmd, 0.0);
            steps += 1;
        }
        let rolled = plant.state.arc_m - start;
        let rel = (predicted - rolled).abs() / rolled;
        assert!(
            rel < 0.01,
            "predicted {predicted:.1} m vs plant {rolled:.1} m (rel {rel:.4})"
        );
    }

    #[test]
    fn coast_from_urban_speed_is_a_few_hundred_meters() {
        let cfg = VehicleConfig::shipped_default();
        let d = coast_distance(cfg, 13.4, 0.0, 0.0).unwrap();
        assert!(
            (150.0..450.0).contains(&d),
            "coast from 13.4 m/s = {d:.0} m"
        );
    }
}
