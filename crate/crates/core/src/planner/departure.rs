//! Fuel-optimal launch: pick, from a parameterized family of acceleration
//! profiles a(v) = a_peak * (1 - v/v_target)^p, the member that minimizes
//! fuel per meter over the launch horizon, evaluated by rolling the plant
//! forward. The grid search is its own oracle: every member is simulated.

use super::follower::actuator_map;
use super::{PlanMode, PlanPoint, SpeedPlan};
use crate::vehicle::{Powertrain, VehicleConfig, STEP_S};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct DepartureConfig {
    pub a_peak_min: f64,
    pub a_peak_max: f64,
    pub a_peak_count: usize,
    pub exponents: Vec<f64>,
    /// Launch horizon ends when speed reaches this fraction of the target.
    pub settle_fraction: f64,
    pub timeout_s: f64,
    /// Acceleration floor applied to the profile tail: the high-exponent
    /// members approach the target polynomially and would otherwise never
    /// settle in bounded time.
    pub a_floor: f64,
}

impl Default for DepartureConfig {
    fn default() -> Self {
        DepartureConfig {
            a_peak_min: 0.5,
            a_peak_max: 2.5,
            a_peak_count: 9,
            exponents: vec![0.5, 1.0, 2.0],
            settle_fraction: 0.95,
            timeout_s: 60.0,
            a_floor: 0.2,
        }
    }
}

impl DepartureConfig {
    pub fn a_peak_grid(&self) -> Vec<f64> {
        let n = self.a_peak_count.max(2);
        (0..n)
            .map(|i| {
                self.a_peak_min
                    + (self.a_peak_max - self.a_peak_min) * i as f64 / (n - 1) as f64
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaunchResult {
    pub a_peak: f64,
    pub exponent: f64,
    pub fuel_g: f64,
    pub dist_m: f64,
    pub time_s: f64,
    pub reached: bool,
}

impl LaunchResult {
    pub fn fuel_per_m(&self) -> f64 {
        if self.reached && self.dist_m > 0.0 {
            self.fuel_g / self.dist_m
        } else {
            f64::INFINITY
        }
    }
}

/// Roll the plant through one launch profile on a constant grade.
pub fn simulate_launch(
    cfg: &Arc<VehicleConfig>,
    v_target: f64,
    grade: f64,
    a_peak: f64,
    p: f64,
    dcfg: &DepartureConfig,
) -> (LaunchResult, Vec<(f64, f64)>) {
    let mut plant = Powertrain::new(cfg.clone());
    let settle = dcfg.settle_fraction * v_target;
    let mut trajectory: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let mut t = 0.0;
    while plant.state.speed_mps < settle && t < dcfg.timeout_s {
        let v = plant.state.speed_mps;
        let a_des = (a_peak * (1.0 - v / v_target).max(0.0).powf(p)).max(dcfg.a_floor);
        let cmd = actuator_map(cfg, &plant.state, grade, a_des);
        plant.step(&cmd, grade);
        t += STEP_S;
        trajectory.push((plant.state.arc_m, plant.state.speed_mps));
    }
    let reached = plant.state.speed_mps >= settle;
    (
        LaunchResult {
            a_peak,
            exponent: p,
            fuel_g: plant.state.powertrain.fuel_total_g,
            dist_m: plant.state.arc_m,
            time_s: t,
            reached,
        },
        trajectory,
    )
}

/// Evaluate the whole profile grid; used both by the planner and as the
/// exhaustive reference in tests.
pub fn evaluate_grid(
    cfg: &Arc<VehicleConfig>,
    v_target: f64,
    grade: f64,
    dcfg: &DepartureConfig,
) -> Vec<LaunchResult> {
    let mut out = Vec::new();
    for &p in &dcfg.exponents {
        for a_peak in dcfg.a_peak_grid() {
            out.push(simulate_launch(cfg, v_target, grade, a_peak, p, dcfg).0);
        }
    }
    out
}

/// The launch profile minimizing fuel-per-meter, as a distance-indexed speed
/// plan anchored at zero. A degenerate target yields an empty plan.
pub fn eco_departure_profile(
    cfg: &Arc<VehicleConfig>,
    v_target: f64,
    grade: f64,
    dcfg: &DepartureConfig,
) -> SpeedPlan {
    if v_target <= 0.5 {
        return SpeedPlan {
            anchor_m: 0.0,
            points: Vec::new(),
            mode: PlanMode::EcoDeparture,
        };
    }
    let mut best: Option<(LaunchResult, Vec<(f64, f64)>)> = None;
    for &p in &dcfg.exponents {
        for a_peak in dcfg.a_peak_grid() {
            let (res, traj) = simulate_launch(cfg, v_target, grade, a_peak, p, dcfg);
            let better = match &best {
                None => true,
                Some((b, _)) => res.fuel_per_m() < b.fuel_per_m(),
            };
            if better {
                best = Some((res, traj));
            }
        }
    }
    let (res, traj) = best.expect("non-empty profile grid");

    let mut points: Vec<PlanPoint> = Vec::new();
    let mut last_x = f64::NEG_INFINITY;
    for &(x, v) in &traj {
        if x - last_x >= 2.0 || points.is_empty() {
            points.push(PlanPoint {
                arc_offset_m: x,
                target_speed_mps: v.min(v_target),
            });
            last_x = x;
        }
    }
    // Gentle final ramp from the settle speed up to the full target.
    let v_last = points.last().map_or(0.0, |p| p.target_speed_mps);
    if res.reached && v_last < v_target {
        let ramp = (v_target * v_target - v_last * v_last) / (2.0 * 0.4);
        points.push(PlanPoint {
            arc_offset_m: res.dist_m + ramp.max(2.0),
            target_speed_mps: v_target,
        });
    }
    let plan = SpeedPlan {
        anchor_m: 0.0,
        points,
        mode: PlanMode::EcoDeparture,
    };
    debug_assert!(plan.check_shape());
    plan
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_target_empty_plan() {
        let cfg = VehicleConfig::shipped_default();
        let plan = eco_departure_profile(cfg, 0.0, 0.0, &DepartureConfig::default());
        assert!(plan.is_empty());
    }

    #[test]
    fn chosen_profile_no_worse_than_max_aggression() {
        let cfg = VehicleConfig::shipped_default();
        let dcfg = DepartureConfig::default();
        let grid = evaluate_grid(cfg, 15.0, 0.0, &dcfg);
        let best = grid
            .iter()
            .map(LaunchResult::fuel_per_m)
            .fold(f64::INFINITY, f64::min);
        let aggressive = grid
            .iter()
            .find(|r| r.exponent == 0.5 && (r.a_peak - 2.5).abs() < 1e-9)
            .expect("max-aggression member present");
        assert!(aggressive.reached);
        assert!(best <= aggressive.fuel_per_m() + 1e-12);
    }

    #[test]
    fn all_grid_members_settle_within_60s_on_moderate_grades() {
        // The gentlest member (a_peak 0.5, p 1) approaches exponentially with
        // time constant v_target/a_peak, so the 60 s bound holds for urban
        // targets around 9 m/s; faster targets simply drop that member from
        // the search (infinite cost), which the optimizer tolerates.
        let cfg = VehicleConfig::shipped_default();
        let dcfg = DepartureConfig::default();
        for &g in &[-0.06, 0.0, 0.06] {
            for r in evaluate_grid(cfg, 9.0, g, &dcfg) {
                assert!(
                    r.reached && r.time_s <= 60.0,
                    "profile a={} p={} on grade {g} took {} s (reached {})",
                    r.a_peak,
                    r.exponent,
                    r.time_s,
                    r.reached
                );
            }
        }
    }

    #[test]
    fn plan_is_monotone_launch() {
        let cfg = VehicleConfig::shipped_default();
        let plan = eco_departure_profile(cfg, 13.4, 0.0, &DepartureConfig::default());
        assert!(!plan.is_empty());
        assert!(plan.check_shape());
        for w in plan.points.windows(2) {
            assert!(w[1].target_speed_mps >= w[0].target_speed_mps - 1e-9);
        }
        assert!((plan.points.last().unwrap().target_speed_mps - 13.4).abs() < 1e-9);
    }
}
