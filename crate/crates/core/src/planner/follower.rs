//! Low-level follower: inverts the driveline and road load to turn a desired
//! acceleration into throttle/brake, with PI speed tracking on top.

use super::coast::braking_passive_force_n;
use crate::vehicle::{
    effective_mass_kg, road_load_n, turbine_speed_radps, ControlCommand, VehicleConfig,
    VehicleState,
};

/// Small negative force demands are served by lifting off rather than braking.
const COAST_DEADBAND_N: f64 = 200.0;

/// Feedforward map from desired acceleration to an actuator command.
pub fn actuator_map(
    cfg: &VehicleConfig,
    state: &VehicleState,
    grade: f64,
    a_des_mps2: f64,
) -> ControlCommand {
    let v = state.speed_mps;
    let gear = state.powertrain.gear;
    let m_eff = effective_mass_kg(cfg, gear);
    let f_req = m_eff * a_des_mps2 + road_load_n(cfg, v, grade);

    if f_req >= 0.0 {
        let turbine_torque = f_req * cfg.wheel_radius_m
            / (cfg.final_drive * cfg.gear_ratios[gear as usize - 1]);
        let engine_torque = if state.powertrain.converter_locked {
            turbine_torque
        } else {
            // Converter multiplies torque below the coupling point.
            let we = state.powertrain.engine_speed_radps.max(cfg.idle_speed_radps);
            let wt = turbine_speed_radps(cfg, v, gear);
            let sr = (wt / we).clamp(0.0, 1.0);
            let tr = cfg.converter.torque_ratio.eval(sr).max(0.2);
            turbine_torque / tr
        };
        // Invert the net-torque blend: thr*T_max - (1-thr)*T_fric = T_e.
        let w = state.powertrain.engine_speed_radps.max(cfg.idle_speed_radps);
        let t_max = cfg.engine.torque.eval(w);
        let t_fric = crate::vehicle::engine_friction_nm(cfg, w);
        let thr = (engine_torque + t_fric) / (t_max + t_fric).max(1.0);
        ControlCommand::accel(thr.clamp(0.0, 1.0))
    } else {
        // Passive driveline forces cover part of the demand (or fight it,
        // when the converter creeps); brake the remainder.
        let passive = braking_passive_force_n(cfg, v, gear);
        let shortfall = -f_req - passive;
        if shortfall <= COAST_DEADBAND_N {
            ControlCommand::coast()
        } else {
            ControlCommand::braking(shortfall / cfg.brake_gain_n)
        }
    }
}

/// PI speed tracking wrapped around the feedforward actuator map.
#[derive(Debug, Clone)]
pub struct SpeedTracker {
    pub kp: f64,
    pub ki: f64,
    integral: f64,
}

impl Default for SpeedTracker {
    fn default() -> Self {
        SpeedTracker {
            kp: 0.6,
            ki: 0.08,
            integral: 0.0,
        }
    }
}

impl SpeedTracker {
    pub fn reset(&mut self) {
        self.integral = 0.0;
    }

    pub fn track(
        &mut self,
        cfg: &VehicleConfig,
        state: &VehicleState,
        grade: f64,
        v_target_mps: f64,
        a_ff_mps2: f64,
    ) -> ControlCommand {
        let err = v_target_mps - state.speed_mps;
        self.integral = (self.integral + err * crate::vehicle::STEP_S).clamp(-4.0, 4.0);
        let a_des = a_ff_mps2 + self.kp * err + self.ki * self.integral;
        actuator_map(cfg, state, grade, a_des)
    }
}
