//! Longitudinal vehicle dynamics and a conventional powertrain: engine with
//! tabulated torque/fuel surfaces, torque converter with lockup, 8-speed
//! automatic with hysteretic shift schedules, and a point-mass body, advanced
//! at a fixed 20 ms step with fuel accounting.

pub mod tables;

mod config_text;

pub use config_text::load_vehicle_config;

use crate::config::ConfigError;
use std::sync::{Arc, OnceLock};
use tables::{Curve, Grid};
use thiserror::Error;

/// Fixed simulation step, seconds (50 Hz).
pub const STEP_S: f64 = 0.020;
/// Converter speed ODE substeps per simulation step.
pub const CONVERTER_SUBSTEPS: u32 = 4;
pub const GRAVITY_MPS2: f64 = 9.81;
pub const RPM_PER_RADPS: f64 = 60.0 / (2.0 * std::f64::consts::PI);

const DEFAULT_CONFIG_TEXT: &str = include_str!("../../data/default_vehicle.cfg");

#[derive(Debug, Error)]
pub enum VehicleError {
    #[error("missing table `{0}`")]
    MissingTable(String),
    #[error("non-monotone axis in `{0}`")]
    NonMonotoneAxis(String),
    #[error("bad config value: {0}")]
    BadValue(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineTables {
    /// Wide-open-throttle torque over engine speed, N*m over rad/s.
    pub torque: Curve,
    /// Fuel rate over (engine speed, torque), g/s over (rad/s, N*m).
    pub fuel: Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConverterTables {
    /// Turbine/impeller torque ratio over speed ratio. Negative beyond the
    /// coupling point models overrun engine braking.
    pub torque_ratio: Curve,
    /// Capacity factor over speed ratio, rpm/sqrt(N*m).
    pub k_factor: Curve,
    /// Turbine speed above which the lockup clutch closes, rad/s.
    pub lockup_turbine_radps: f64,
    /// Lowest gear in which lockup is allowed.
    pub lockup_min_gear: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftTables {
    pub throttle_axis: Vec<f64>,
    /// Vehicle-speed thresholds for shifting out of gear g (index g-1), g = 1..7.
    pub upshift: Vec<Curve>,
    /// Vehicle-speed thresholds for shifting out of gear g (index g-2), g = 2..8.
    pub downshift: Vec<Curve>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleConfig {
    pub mass_kg: f64,
    pub frontal_area_m2: f64,
    pub drag_coeff: f64,
    pub wheel_radius_m: f64,
    pub wheel_inertia_kgm2: f64,
    pub final_drive: f64,
    pub rolling_coeff: f64,
    pub air_density_kgpm3: f64,
    /// Friction brake force per unit brake command, N.
    pub brake_gain_n: f64,
    pub gear_ratios: [f64; 8],
    pub gear_inertia_kgm2: [f64; 8],
    pub engine: EngineTables,
    pub converter: ConverterTables,
    pub shift: ShiftTables,
    pub idle_speed_radps: f64,
    pub engine_inertia_kgm2: f64,
    /// Fuel-rate multiplier while cylinder deactivation is flagged.
    pub cyl_deact_fuel_scale: f64,
    /// Idle governor proportional gain, N*m per rad/s below idle.
    pub governor_gain: f64,
    /// Motoring friction torque coefficients (constant, per rad/s): the
    /// engine braking felt at closed throttle or fuel cut.
    pub friction_torque: (f64, f64),
}

/// Engine motoring friction at a given speed, N*m (zero when not spinning).
pub fn engine_friction_nm(cfg: &VehicleConfig, engine_speed_radps: f64) -> f64 {
    if engine_speed_radps <= 1e-6 {
        0.0
    } else {
        cfg.friction_torque.0 + cfg.friction_torque.1 * engine_speed_radps
    }
}

impl VehicleConfig {
    /// The default calibration shipped with the crate.
    pub fn shipped_default() -> &'static Arc<VehicleConfig> {
        static CFG: OnceLock<Arc<VehicleConfig>> = OnceLock::new();
        CFG.get_or_init(|| {
            Arc::new(
                load_vehicle_config(DEFAULT_CONFIG_TEXT)
                    .expect("embedded default vehicle config must parse"),
            )
        })
    }

    pub fn default_config_text() -> &'static str {
        DEFAULT_CONFIG_TEXT
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        let positive = [
            ("mass", self.mass_kg),
            ("frontal_area", self.frontal_area_m2),
            ("drag_coeff", self.drag_coeff),
            ("wheel_radius", self.wheel_radius_m),
            ("wheel_inertia", self.wheel_inertia_kgm2),
            ("final_drive", self.final_drive),
            ("rolling_coeff", self.rolling_coeff),
            ("air_density", self.air_density_kgpm3),
            ("brake_gain", self.brake_gain_n),
            ("idle_speed", self.idle_speed_radps),
            ("engine_inertia", self.engine_inertia_kgm2),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(VehicleError::BadValue(format!("`{name}` must be > 0, got {v}")));
            }
        }
        if self.gear_ratios.windows(2).any(|w| w[1] >= w[0]) {
            return Err(VehicleError::BadValue(
                "gear ratios must be strictly decreasing".into(),
            ));
        }
        if self.gear_ratios.iter().any(|&r| r <= 0.0)
            || self.gear_inertia_kgm2.iter().any(|&j| j <= 0.0)
        {
            return Err(VehicleError::BadValue("gear tables must be positive".into()));
        }
        let tr1 = self.converter.torque_ratio.eval(1.0);
        if (tr1 - 1.0).abs() > 1e-3 {
            return Err(VehicleError::BadValue(format!(
                "converter torque ratio at SR=1 must be 1.0, got {tr1}"
            )));
        }
        if self.converter.k_factor.values().iter().any(|&k| k <= 0.0) {
            return Err(VehicleError::BadValue("K factor must be positive".into()));
        }
        // Fuel surface: non-negative and non-decreasing in torque at fixed speed.
        for row in self.engine.fuel.rows() {
            if row.iter().any(|&f| f < 0.0) {
                return Err(VehicleError::BadValue("fuel rate must be >= 0".into()));
            }
            if row.windows(2).any(|w| w[1] < w[0]) {
                return Err(VehicleError::BadValue(
                    "fuel rate must be non-decreasing in torque".into(),
                ));
            }
        }
        // Shift hysteresis: downshift thresholds strictly below the upshift
        // thresholds of the gear below, at every throttle grid point.
        for g in 2..=7u8 {
            let down = &self.shift.downshift[g as usize - 2];
            let up = &self.shift.upshift[g as usize - 1];
            for &t in &self.shift.throttle_axis {
                if down.eval(t) >= up.eval(t) {
                    return Err(VehicleError::BadValue(format!(
                        "downshift[{g}] must sit strictly below upshift[{g}] at throttle {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EngineFlags {
    pub dfco: bool,
    pub shutoff: bool,
    pub cyl_deact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOutput {
    pub torque_nm: f64,
    pub fuel_gps: f64,
}

/// Engine quasi-static map evaluation with the idle governor.
pub fn engine_step(
    cfg: &VehicleConfig,
    throttle: f64,
    engine_speed_radps: f64,
    flags: EngineFlags,
) -> EngineOutput {
    engine_step_counted(cfg, throttle, engine_speed_radps, flags, &mut 0)
}

pub fn engine_step_counted(
    cfg: &VehicleConfig,
    throttle: f64,
    engine_speed_radps: f64,
    flags: EngineFlags,
    clamps: &mut u64,
) -> EngineOutput {
    let throttle = throttle.clamp(0.0, 1.0);
    let w = engine_speed_radps.max(0.0);
    // Net torque blends the WOT table against motoring friction, so full
    // throttle reproduces the table and closed throttle engine-brakes.
    let friction = engine_friction_nm(cfg, w);
    let mut torque = if flags.shutoff || flags.dfco {
        -friction
    } else {
        throttle * cfg.engine.torque.eval_counted(w, clamps) - (1.0 - throttle) * friction
    };
    if !flags.shutoff && !flags.dfco && w < cfg.idle_speed_radps {
        let governor = cfg.governor_gain * (cfg.idle_speed_radps - w);
        torque = torque.max(governor).min(cfg.engine.torque.eval_counted(w, clamps));
    }
    let fuel = if flags.dfco || flags.shutoff {
        0.0
    } else {
        let base = cfg.engine.fuel.eval_counted(w, torque.max(0.0), clamps);
        if flags.cyl_deact {
            base * cfg.cyl_deact_fuel_scale
        } else {
            base
        }
    };
    EngineOutput {
        torque_nm: torque,
        fuel_gps: fuel,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterTorques {
    pub impeller_nm: f64,
    pub turbine_nm: f64,
}

/// Torque transfer through the converter. When locked, `through_torque_nm`
/// passes 1:1. Unlocked, the K-factor law applies: impeller torque is
/// (engine rpm / K(SR))^2 and the turbine gets the torque-ratio multiple;
/// beyond SR = 1 the ratio goes negative (overrun engine braking).
pub fn converter_step(
    cfg: &VehicleConfig,
    engine_speed_radps: f64,
    turbine_speed_radps: f64,
    locked: bool,
    through_torque_nm: f64,
) -> ConverterTorques {
    if locked {
        return ConverterTorques {
            impeller_nm: through_torque_nm,
            turbine_nm: through_torque_nm,
        };
    }
    let sr = if engine_speed_radps <= 0.0 {
        0.0
    } else {
        turbine_speed_radps / engine_speed_radps
    };
    let k = cfg.converter.k_factor.eval(sr);
    let rpm = engine_speed_radps * RPM_PER_RADPS;
    let impeller = (rpm / k).powi(2);
    let turbine = cfg.converter.torque_ratio.eval(sr) * impeller;
    ConverterTorques {
        impeller_nm: impeller,
        turbine_nm: turbine,
    }
}

/// Gear selection with hysteresis: shift only when the speed is strictly
/// beyond a threshold, at most one gear per step. An exact threshold hit
/// does not shift.
pub fn select_gear(cfg: &VehicleConfig, gear: u8, vehicle_speed_mps: f64, throttle: f64) -> u8 {
    let g = gear.clamp(1, 8);
    if g < 8 {
        let up = cfg.shift.upshift[g as usize - 1].eval(throttle);
        if vehicle_speed_mps > up {
            return g + 1;
        }
    }
    if g > 1 {
        let down = cfg.shift.downshift[g as usize - 2].eval(throttle);
        if vehicle_speed_mps < down {
            return g - 1;
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionOutput {
    pub output_torque_nm: f64,
    pub new_gear: u8,
}

pub fn transmission_step(
    cfg: &VehicleConfig,
    gear: u8,
    turbine_torque_nm: f64,
    vehicle_speed_mps: f64,
    throttle: f64,
) -> TransmissionOutput {
    let gear = gear.clamp(1, 8);
    TransmissionOutput {
        output_torque_nm: turbine_torque_nm * cfg.gear_ratios[gear as usize - 1],
        new_gear: select_gear(cfg, gear, vehicle_speed_mps, throttle),
    }
}

/// Aerodynamic + rolling + grade resistance at speed `v`, N. Positive opposes
/// forward motion; rolling resistance vanishes at rest.
pub fn road_load_n(cfg: &VehicleConfig, v_mps: f64, grade: f64) -> f64 {
    let theta = grade.atan();
    let aero = 0.5 * cfg.air_density_kgpm3 * cfg.drag_coeff * cfg.frontal_area_m2 * v_mps * v_mps;
    let roll = if v_mps > 0.0 {
        cfg.rolling_coeff * cfg.mass_kg * GRAVITY_MPS2 * theta.cos()
    } else {
        0.0
    };
    let grade_force = cfg.mass_kg * GRAVITY_MPS2 * theta.sin();
    aero + roll + grade_force
}

/// Translational-equivalent mass including rotating inertia for a gear.
pub fn effective_mass_kg(cfg: &VehicleConfig, gear: u8) -> f64 {
    let gear = gear.clamp(1, 8) as usize - 1;
    let reflected = cfg.gear_inertia_kgm2[gear]
        * (cfg.gear_ratios[gear] * cfg.final_drive).powi(2);
    cfg.mass_kg + (cfg.wheel_inertia_kgm2 + reflected) / cfg.wheel_radius_m.powi(2)
}

/// Driveline-synchronous turbine speed for a road speed and gear, rad/s.
pub fn turbine_speed_radps(cfg: &VehicleConfig, v_mps: f64, gear: u8) -> f64 {
    let gear = gear.clamp(1, 8) as usize - 1;
    v_mps / cfg.wheel_radius_m * cfg.final_drive * cfg.gear_ratios[gear]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowertrainState {
    pub engine_speed_radps: f64,
    pub gear: u8,
    pub converter_locked: bool,
    pub fuel_rate_gps: f64,
    pub fuel_total_g: f64,
    pub dfco_active: bool,
}

impl PowertrainState {
    pub fn at_rest(cfg: &VehicleConfig) -> Self {
        PowertrainState {
            engine_speed_radps: cfg.idle_speed_radps,
            gear: 1,
            converter_locked: false,
            fuel_rate_gps: 0.0,
            fuel_total_g: 0.0,
            dfco_active: false,
        }
    }

    /// Accumulate fuel over `dt` at the current rate; returns the increment, g.
    pub fn integrate_fuel(&mut self, dt_s: f64) -> f64 {
        let inc = self.fuel_rate_gps * dt_s;
        self.fuel_total_g += inc;
        inc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub arc_m: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
    pub powertrain: PowertrainState,
}

impl VehicleState {
    pub fn at_rest(cfg: &VehicleConfig) -> Self {
        VehicleState {
            arc_m: 0.0,
            speed_mps: 0.0,
            accel_mps2: 0.0,
            powertrain: PowertrainState::at_rest(cfg),
        }
    }
}

/// Actuation request consumed by the plant each tick. Throttle and brake are
/// mutually exclusive; a DFCO request implies closed throttle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlCommand {
    pub throttle: f64,
    pub brake: f64,
    pub dfco_request: bool,
    pub gear_hold: Option<u8>,
}

impl ControlCommand {
    pub fn coast() -> Self {
        ControlCommand {
            throttle: 0.0,
            brake: 0.0,
            dfco_request: false,
            gear_hold: None,
        }
    }

    pub fn accel(throttle: f64) -> Self {
        ControlCommand {
            throttle: throttle.clamp(0.0, 1.0),
            brake: 0.0,
            dfco_request: false,
            gear_hold: None,
        }
    }

    pub fn braking(brake: f64) -> Self {
        ControlCommand {
            throttle: 0.0,
            brake: brake.clamp(0.0, 1.0),
            dfco_request: false,
            gear_hold: None,
        }
    }

    pub fn coasting_dfco() -> Self {
        ControlCommand {
            throttle: 0.0,
            brake: 0.0,
            dfco_request: true,
            gear_hold: None,
        }
    }

    /// Clamp fields into range and enforce throttle*brake = 0 and
    /// dfco => throttle = 0 (brake wins over throttle on conflict).
    pub fn normalized(mut self) -> Self {
        self.throttle = self.throttle.clamp(0.0, 1.0);
        self.brake = self.brake.clamp(0.0, 1.0);
        if self.brake > 0.0 || self.dfco_request {
            self.throttle = 0.0;
        }
        if let Some(g) = self.gear_hold {
            self.gear_hold = Some(g.clamp(1, 8));
        }
        self
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.throttle)
            && (0.0..=1.0).contains(&self.brake)
            && self.throttle * self.brake == 0.0
            && (!self.dfco_request || self.throttle == 0.0)
    }
}

/// Body kinematics for one step: traction minus brake and road load over the
/// effective mass, semi-implicit Euler, speed floored at zero.
pub fn body_step(
    cfg: &VehicleConfig,
    state: &VehicleState,
    output_torque_nm: f64,
    brake_cmd: f64,
    grade: f64,
    dt_s: f64,
) -> VehicleState {
    let v = state.speed_mps;
    let f_trac = output_torque_nm * cfg.final_drive / cfg.wheel_radius_m;
    let f_brake = cfg.brake_gain_n * brake_cmd.clamp(0.0, 1.0);
    let m_eff = effective_mass_kg(cfg, state.powertrain.gear);
    let a_raw = (f_trac - f_brake - road_load_n(cfg, v, grade)) / m_eff;
    let v_new = (v + a_raw * dt_s).max(0.0);
    let a = (v_new - v) / dt_s;
    VehicleState {
        arc_m: state.arc_m + v_new * dt_s,
        speed_mps: v_new,
        accel_mps2: a,
        powertrain: state.powertrain,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Diagnostics {
    pub table_clamps: u64,
    pub steps: u64,
}

/// Stateful plant: one instance per simulated vehicle, stepped at 20 ms.
#[derive(Debug, Clone)]
pub struct Powertrain {
    pub cfg: Arc<VehicleConfig>,
    pub state: VehicleState,
    pub shutoff: bool,
    pub cyl_deact: bool,
    pub diag: Diagnostics,
}

impl Powertrain {
    pub fn new(cfg: Arc<VehicleConfig>) -> Self {
        let state = VehicleState::at_rest(&cfg);
        Powertrain {
            cfg,
            state,
            shutoff: false,
            cyl_deact: false,
            diag: Diagnostics::default(),
        }
    }

    pub fn with_speed(cfg: Arc<VehicleConfig>, speed_mps: f64) -> Self {
        let mut pt = Powertrain::new(cfg);
        pt.state.speed_mps = speed_mps;
        // Settle gear and engine speed to a driveline-consistent point.
        let cfg = pt.cfg.clone();
        for _ in 0..8 {
            let g = select_gear(&cfg, pt.state.powertrain.gear, speed_mps, 0.2);
            if g == pt.state.powertrain.gear {
                break;
            }
            pt.state.powertrain.gear = g;
        }
        let wt = turbine_speed_radps(&cfg, speed_mps, pt.state.powertrain.gear);
        pt.state.powertrain.converter_locked = pt.state.powertrain.gear
            >= cfg.converter.lockup_min_gear
            && wt >= cfg.converter.lockup_turbine_radps;
        pt.state.powertrain.engine_speed_radps = if pt.state.powertrain.converter_locked {
            wt
        } else {
            wt.max(cfg.idle_speed_radps)
        };
        pt
    }

    /// Advance one fixed 20 ms step.
    pub fn step(&mut self, cmd: &ControlCommand, grade: f64) -> VehicleState {
        let cfg = self.cfg.clone();
        let cmd = cmd.normalized();
        let pt = &mut self.state.powertrain;

        // DFCO holds while the driveline spins fast enough to restart the
        // engine instantly; near standstill the injectors come back.
        let turbine_now = turbine_speed_radps(&cfg, self.state.speed_mps, pt.gear);
        pt.dfco_active = cmd.dfco_request && turbine_now > cfg.idle_speed_radps * 1.1;
        let flags = EngineFlags {
            dfco: pt.dfco_active,
            shutoff: self.shutoff,
            cyl_deact: self.cyl_deact,
        };
        let eng = engine_step_counted(
            &cfg,
            cmd.throttle,
            pt.engine_speed_radps,
            flags,
            &mut self.diag.table_clamps,
        );

        let gear = pt.gear;
        let turbine_w = turbine_speed_radps(&cfg, self.state.speed_mps, gear);
        // Normal lockup schedule, plus decel lockup whenever DFCO is active
        // so the wheels keep the engine spinning and motoring friction brakes
        // the vehicle.
        let locked = (gear >= cfg.converter.lockup_min_gear
            && turbine_w >= cfg.converter.lockup_turbine_radps)
            || pt.dfco_active;

        let turbine_torque = if locked {
            pt.engine_speed_radps = turbine_w;
            eng.torque_nm
        } else {
            // Engine speed ODE against the impeller load, substepped to keep
            // the stiff converter coupling stable.
            let sub_dt = STEP_S / CONVERTER_SUBSTEPS as f64;
            let mut w = pt.engine_speed_radps.max(if self.shutoff { 0.0 } else { cfg.idle_speed_radps });
            let mut turbine_sum = 0.0;
            for _ in 0..CONVERTER_SUBSTEPS {
                let t = converter_step(&cfg, w, turbine_w, false, 0.0);
                turbine_sum += t.turbine_nm;
                w += (eng.torque_nm - t.impeller_nm) / cfg.engine_inertia_kgm2 * sub_dt;
                if !self.shutoff {
                    w = w.max(cfg.idle_speed_radps);
                } else {
                    w = w.max(0.0);
                }
            }
            pt.engine_speed_radps = w;
            turbine_sum / CONVERTER_SUBSTEPS as f64
        };

        let trans = transmission_step(&cfg, gear, turbine_torque, self.state.speed_mps, cmd.throttle);
        let new_gear = match cmd.gear_hold {
            Some(hold) => {
                let hold = hold.clamp(1, 8);
                // Move at most one gear per step toward the held gear.
                if hold > gear {
                    gear + 1
                } else if hold < gear {
                    gear - 1
                } else {
                    gear
                }
            }
            None => trans.new_gear,
        };

        let next = body_step(&cfg, &self.state, trans.output_torque_nm, cmd.brake, grade, STEP_S);
        self.state.arc_m = next.arc_m;
        self.state.speed_mps = next.speed_mps;
        self.state.accel_mps2 = next.accel_mps2;

        let pt = &mut self.state.powertrain;
        pt.gear = new_gear;
        let turbine_after = turbine_speed_radps(&cfg, self.state.speed_mps, new_gear);
        pt.converter_locked = (new_gear >= cfg.converter.lockup_min_gear
            && turbine_after >= cfg.converter.lockup_turbine_radps)
            || pt.dfco_active;
        if pt.converter_locked {
            pt.engine_speed_radps = turbine_after;
        } else if !self.shutoff {
            pt.engine_speed_radps = pt.engine_speed_radps.max(cfg.idle_speed_radps);
        }
        pt.fuel_rate_gps = eng.fuel_gps;
        pt.integrate_fuel(STEP_S);
        self.diag.steps += 1;
        self.state
    }
}
