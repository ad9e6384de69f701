//! Planning and behaviors: the baseline driver plus the three eco strategies
//! (coast-to-stop approach, fuel-optimal launch, banded cruise DP), all
//! feeding a common follower that turns speed targets into throttle/brake.

mod approach;
mod baseline;
mod coast;
mod cruise;
mod departure;
mod follower;

pub use approach::{
    eco_approach_plan, eco_approach_plan_served, predict_phase_at, stop_still_demanded,
    ApproachConfig, StopAhead,
};
pub use baseline::{BaselineDriver, BaselineOutput};
pub use coast::{
    braking_passive_force_n, coast_distance, coast_drag_force_n, coast_profile,
    dfco_cutoff_speed_mps, CoastPoint,
    CAP_DECEL_MPS2,
};
pub use cruise::{
    calibrate_lambda, eco_cruise_plan, edge_cost, peripheral_speed_cap, quasi_static_fuel_gps,
    marginal_fuel_per_j, speed_grid, terminal_ke_cost, top_feasible_gear, CruiseConfig,
    RouteWindow, WindowSample,
};
pub use departure::{eco_departure_profile, evaluate_grid, simulate_launch, DepartureConfig, LaunchResult};
pub use follower::{actuator_map, SpeedTracker};

use crate::config::{ConfigDoc, ConfigError};
use crate::cycle::Route;
use crate::traffic::EnvSnapshot;
use crate::vehicle::{ControlCommand, VehicleConfig, VehicleState};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("coasting never reaches the target speed (non-decelerating road load)")]
    NeverReaches,
    #[error("no dynamically feasible speed profile stays within the band")]
    InfeasibleBand,
    #[error("position {arc_m:.2} m is beyond the end of the active plan")]
    PlanExpired { arc_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanMode {
    Baseline,
    EcoApproach,
    EcoDeparture,
    EcoCruise,
}

impl PlanMode {
    pub fn token(self) -> &'static str {
        match self {
            PlanMode::Baseline => "baseline",
            PlanMode::EcoApproach => "eco-approach",
            PlanMode::EcoDeparture => "eco-departure",
            PlanMode::EcoCruise => "eco-cruise",
        }
    }

    pub fn from_token(tok: &str) -> Option<Self> {
        match tok {
            "baseline" => Some(PlanMode::Baseline),
            "eco-approach" => Some(PlanMode::EcoApproach),
            "eco-departure" => Some(PlanMode::EcoDeparture),
            "eco-cruise" => Some(PlanMode::EcoCruise),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanPoint {
    pub arc_offset_m: f64,
    pub target_speed_mps: f64,
}

/// Distance-indexed target speed profile. Offsets are relative to `anchor_m`
/// and strictly increasing; targets are non-negative and never exceed the
/// local speed limit.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedPlan {
    pub anchor_m: f64,
    pub points: Vec<PlanPoint>,
    pub mode: PlanMode,
}

impl SpeedPlan {
    pub fn end_arc_m(&self) -> f64 {
        self.anchor_m + self.points.last().map_or(0.0, |p| p.arc_offset_m)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Structural invariants: offsets strictly increasing, speeds >= 0.
    pub fn check_shape(&self) -> bool {
        self.points.windows(2).all(|w| w[1].arc_offset_m > w[0].arc_offset_m)
            && self.points.iter().all(|p| p.target_speed_mps >= 0.0)
    }

    /// Full legality: shape plus every target at or below the local limit.
    pub fn check_legal(&self, route: &Route) -> bool {
        self.check_shape()
            && self.points.iter().all(|p| {
                p.target_speed_mps <= route.speed_limit_at(self.anchor_m + p.arc_offset_m) + 1e-9
            })
    }

    /// Interpolated target speed at an absolute arc position.
    pub fn target_at(&self, arc_m: f64) -> Result<f64, PlanError> {
        let off = arc_m - self.anchor_m;
        let pts = &self.points;
        if pts.is_empty() || off > pts.last().unwrap().arc_offset_m {
            return Err(PlanError::PlanExpired { arc_m });
        }
        if off <= pts[0].arc_offset_m {
            return Ok(pts[0].target_speed_mps);
        }
        let i = pts.partition_point(|p| p.arc_offset_m < off);
        let (a, b) = (&pts[i - 1], &pts[i]);
        let f = (off - a.arc_offset_m) / (b.arc_offset_m - a.arc_offset_m);
        Ok(a.target_speed_mps + f * (b.target_speed_mps - a.target_speed_mps))
    }

    /// Plan slope at an arc position, as an acceleration feedforward v*dv/ds.
    pub fn accel_feedforward_at(&self, arc_m: f64) -> f64 {
        let off = arc_m - self.anchor_m;
        let pts = &self.points;
        if pts.len() < 2 || off < pts[0].arc_offset_m || off > pts.last().unwrap().arc_offset_m {
            return 0.0;
        }
        let i = pts.partition_point(|p| p.arc_offset_m < off).clamp(1, pts.len() - 1);
        let (a, b) = (&pts[i - 1], &pts[i]);
        let dv_ds = (b.target_speed_mps - a.target_speed_mps) / (b.arc_offset_m - a.arc_offset_m);
        let v = 0.5 * (a.target_speed_mps + b.target_speed_mps);
        v * dv_ds
    }
}

/// Reference velocity band for the cruise optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSpec {
    pub v_ref_mps: f64,
    pub v_low_mps: f64,
    pub v_high_mps: f64,
}

impl BandSpec {
    pub fn new(v_ref: f64, v_low: f64, v_high: f64) -> Option<BandSpec> {
        if 0.0 < v_low && v_low <= v_ref && v_ref <= v_high {
            Some(BandSpec {
                v_ref_mps: v_ref,
                v_low_mps: v_low,
                v_high_mps: v_high,
            })
        } else {
            None
        }
    }

    pub fn around(v_ref: f64, half_width: f64) -> BandSpec {
        BandSpec {
            v_ref_mps: v_ref,
            v_low_mps: (v_ref - half_width).max(0.5),
            v_high_mps: v_ref + half_width,
        }
    }
}

/// Per-strategy enable flags and tuning, parsed from the strategy config text.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub approach: bool,
    pub departure: bool,
    pub cruise: bool,
    pub band_half_width_mps: f64,
    /// Time-value weight for the cruise DP; None means calibrate so the
    /// flat-road optimum sits at the reference speed.
    pub lambda_g_per_s: Option<f64>,
    pub cruise_cfg: CruiseConfig,
    pub approach_cfg: ApproachConfig,
    pub departure_cfg: DepartureConfig,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            approach: true,
            departure: true,
            cruise: true,
            band_half_width_mps: 2.0,
            lambda_g_per_s: None,
            cruise_cfg: CruiseConfig::default(),
            approach_cfg: ApproachConfig::default(),
            departure_cfg: DepartureConfig::default(),
        }
    }
}

impl StrategyConfig {
    pub fn baseline_only() -> Self {
        StrategyConfig {
            approach: false,
            departure: false,
            cruise: false,
            ..Default::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let doc = ConfigDoc::parse(text)?;
        let mut cfg = StrategyConfig::default();
        if let Some(s) = doc.section("strategy") {
            cfg.approach = s.bool_or("approach", cfg.approach)?;
            cfg.departure = s.bool_or("departure", cfg.departure)?;
            cfg.cruise = s.bool_or("cruise", cfg.cruise)?;
            cfg.band_half_width_mps = s.f64_or("band_half_width", cfg.band_half_width_mps)?;
            if let Some(e) = s.get("lambda") {
                cfg.lambda_g_per_s = Some(e.parse_f64()?);
            }
            cfg.cruise_cfg.horizon_m = s.f64_or("dp_horizon", cfg.cruise_cfg.horizon_m)?;
            cfg.cruise_cfg.dist_step_m = s.f64_or("dp_dist_step", cfg.cruise_cfg.dist_step_m)?;
            cfg.cruise_cfg.speed_step_mps = s.f64_or("dp_speed_step", cfg.cruise_cfg.speed_step_mps)?;
            cfg.approach_cfg.window_m = s.f64_or("approach_window", cfg.approach_cfg.window_m)?;
            cfg.departure_cfg.a_peak_min = s.f64_or("departure_apeak_min", cfg.departure_cfg.a_peak_min)?;
            cfg.departure_cfg.a_peak_max = s.f64_or("departure_apeak_max", cfg.departure_cfg.a_peak_max)?;
        }
        Ok(cfg)
    }
}

/// Track a plan: interpolate the target, min-combine with the baseline's
/// safety target, and map through the follower. DFCO is requested on
/// decreasing targets in approach mode.
pub fn follow_plan(
    cfg: &VehicleConfig,
    plan: &SpeedPlan,
    state: &VehicleState,
    snap: &EnvSnapshot,
    safe_speed_mps: f64,
    tracker: &mut SpeedTracker,
) -> Result<ControlCommand, PlanError> {
    let v_plan = plan.target_at(state.arc_m)?;
    let v_cmd = v_plan.min(safe_speed_mps);
    let a_ff = if v_cmd < v_plan {
        0.0
    } else {
        plan.accel_feedforward_at(state.arc_m)
    };
    let mut cmd = tracker.track(cfg, state, snap.grade, v_cmd, a_ff);
    if plan.mode == PlanMode::EcoApproach && a_ff < -1e-6 && cmd.brake == 0.0 {
        cmd.dfco_request = true;
        cmd.throttle = 0.0;
    }
    Ok(cmd)
}

/// The eco planner: owns the baseline safety layer, the active plan, and the
/// per-strategy machinery. One instance drives one ego vehicle.
pub struct EcoDriver {
    cfg: Arc<VehicleConfig>,
    route: Route,
    strategy: StrategyConfig,
    baseline: BaselineDriver,
    tracker: SpeedTracker,
    plan: Option<SpeedPlan>,
    mode_now: PlanMode,
    departure_memo: BTreeMap<(i64, i64), Vec<PlanPoint>>,
    lambda_memo: BTreeMap<i64, f64>,
    /// Arc of the stop the current approach plan targets.
    approach_stop_m: Option<f64>,
    last_replan_arc_m: f64,
}

impl EcoDriver {
    pub fn new(cfg: Arc<VehicleConfig>, route: Route, strategy: StrategyConfig) -> EcoDriver {
        let baseline = BaselineDriver::new(cfg.clone(), route.clone());
        EcoDriver {
            cfg,
            route,
            strategy,
            baseline,
            tracker: SpeedTracker::default(),
            plan: None,
            mode_now: PlanMode::Baseline,
            departure_memo: BTreeMap::new(),
            lambda_memo: BTreeMap::new(),
            approach_stop_m: None,
            last_replan_arc_m: f64::NEG_INFINITY,
        }
    }

    pub fn current_mode(&self) -> PlanMode {
        self.mode_now
    }

    pub fn drive(&mut self, snap: &EnvSnapshot, state: &VehicleState) -> ControlCommand {
        let base = self.baseline.drive(snap, state);

        // Retire a finished or invalidated plan before choosing a new one.
        if let Some(plan) = &self.plan {
            let expired = plan.target_at(state.arc_m).is_err();
            let stale_approach = plan.mode == PlanMode::EcoApproach
                && !approach::stop_still_demanded(
                    self.approach_stop_m,
                    &self.route,
                    snap,
                    self.baseline.served_signs(),
                );
            if expired || stale_approach {
                self.plan = None;
                self.approach_stop_m = None;
            }
        }

        // Approach supersedes everything once its coast window opens.
        if self.strategy.approach
            && self.plan.as_ref().map_or(true, |p| p.mode != PlanMode::EcoApproach)
            && state.speed_mps > 3.0
        {
            if let Some((plan, stop_arc)) = eco_approach_plan_served(
                &self.cfg,
                &self.route,
                snap,
                state,
                &self.strategy.approach_cfg,
                self.baseline.served_signs(),
            ) {
                debug_assert!(plan.check_legal(&self.route));
                self.plan = Some(plan);
                self.approach_stop_m = Some(stop_arc);
            }
        }

        // Launch plan from (near) standstill once the baseline layer agrees
        // the road ahead is open.
        if self.plan.is_none()
            && self.strategy.departure
            && state.speed_mps < 0.5
            && base.safe_speed_mps > 2.0
        {
            let v_target = self.route.speed_limit_at(state.arc_m);
            let plan = self.departure_plan(state.arc_m, v_target, snap.grade);
            if !plan.is_empty() {
                debug_assert!(plan.check_legal(&self.route));
                self.plan = Some(plan);
            }
        }

        // Banded cruise over the lookahead window otherwise.
        if self.plan.is_none() && self.strategy.cruise && state.speed_mps >= 3.0 {
            let remaining = self.route.total_length_m() - state.arc_m;
            if remaining > 3.0 * self.strategy.cruise_cfg.dist_step_m
                && state.arc_m - self.last_replan_arc_m > self.strategy.cruise_cfg.dist_step_m
            {
                self.last_replan_arc_m = state.arc_m;
                if let Some(plan) = self.cruise_plan(state, snap) {
                    debug_assert!(plan.check_legal(&self.route));
                    self.plan = Some(plan);
                }
            }
        }

        self.mode_now = self.plan.as_ref().map_or(PlanMode::Baseline, |p| p.mode);
        match &self.plan {
            Some(plan) => {
                match follow_plan(&self.cfg, plan, state, snap, base.safe_speed_mps, &mut self.tracker)
                {
                    Ok(cmd) => cmd,
                    Err(_) => {
                        self.plan = None;
                        self.mode_now = PlanMode::Baseline;
                        base.command
                    }
                }
            }
            None => base.command,
        }
    }

    fn departure_plan(&mut self, anchor_m: f64, v_target: f64, grade: f64) -> SpeedPlan {
        let key = (
            (v_target / 0.5).floor() as i64,
            (grade * 100.0).round() as i64,
        );
        let points = self
            .departure_memo
            .entry(key)
            .or_insert_with(|| {
                let v_bucket = key.0 as f64 * 0.5;
                let g_bucket = key.1 as f64 / 100.0;
                eco_departure_profile(&self.cfg, v_bucket, g_bucket, &self.strategy.departure_cfg)
                    .points
            })
            .clone();
        SpeedPlan {
            anchor_m,
            points,
            mode: PlanMode::EcoDeparture,
        }
    }

    fn cruise_plan(&mut self, state: &VehicleState, _snap: &EnvSnapshot) -> Option<SpeedPlan> {
        let v_ref = self.route.speed_limit_at(state.arc_m);
        let band = BandSpec {
            v_ref_mps: v_ref,
            v_low_mps: (v_ref - self.strategy.band_half_width_mps).max(1.0),
            v_high_mps: v_ref,
        };
        let lam_key = (v_ref / self.strategy.cruise_cfg.speed_step_mps).round() as i64;
        let ccfg = &self.strategy.cruise_cfg;
        let cfg = &self.cfg;
        let lambda = self.strategy.lambda_g_per_s.unwrap_or_else(|| {
            *self
                .lambda_memo
                .entry(lam_key)
                .or_insert_with(|| cruise::calibrate_lambda(cfg, v_ref))
        });
        let window = RouteWindow::from_route(
            &self.route,
            state.arc_m,
            ccfg.horizon_m,
            ccfg.dist_step_m,
            ccfg.a_lat_max_mps2,
        );
        match eco_cruise_plan(cfg, &window, &band, state.speed_mps, lambda, ccfg) {
            Ok(plan) => Some(plan),
            Err(_) => {
                // Infeasible band: fall back to plain v_ref tracking.
                Some(SpeedPlan {
                    anchor_m: state.arc_m,
                    points: vec![
                        PlanPoint {
                            arc_offset_m: 0.0,
                            target_speed_mps: v_ref,
                        },
                        PlanPoint {
                            arc_offset_m: window.samples.last().map_or(10.0, |s| s.arc_m - state.arc_m),
                            target_speed_mps: v_ref,
                        },
                    ],
                    mode: PlanMode::EcoCruise,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_interpolation_and_expiry() {
        let plan = SpeedPlan {
            anchor_m: 100.0,
            points: vec![
                PlanPoint { arc_offset_m: 0.0, target_speed_mps: 10.0 },
                PlanPoint { arc_offset_m: 50.0, target_speed_mps: 5.0 },
            ],
            mode: PlanMode::EcoCruise,
        };
        assert!(plan.check_shape());
        assert_eq!(plan.target_at(100.0).unwrap(), 10.0);
        assert_eq!(plan.target_at(125.0).unwrap(), 7.5);
        assert_eq!(plan.target_at(150.0).unwrap(), 5.0);
        assert!(matches!(
            plan.target_at(151.0),
            Err(PlanError::PlanExpired { .. })
        ));
        // Decelerating plan: negative feedforward.
        assert!(plan.accel_feedforward_at(125.0) < 0.0);
    }

    #[test]
    fn band_ordering_enforced() {
        assert!(BandSpec::new(10.0, 8.0, 12.0).is_some());
        assert!(BandSpec::new(10.0, 11.0, 12.0).is_none());
        assert!(BandSpec::new(10.0, 0.0, 12.0).is_none());
    }

    #[test]
    fn strategy_config_parse() {
        let cfg = StrategyConfig::parse(
            "[strategy]\napproach = false\nlambda = 0.2\nband_half_width = 1.5\n",
        )
        .unwrap();
        assert!(!cfg.approach);
        assert!(cfg.departure);
        assert_eq!(cfg.lambda_g_per_s, Some(0.2));
        assert_eq!(cfg.band_half_width_mps, 1.5);
    }
}
