//! Vehicle-config text format: named sections with axis vectors and row-major
//! table values, SI units. See `data/default_vehicle.cfg` for the grammar.

use super::tables::{Curve, Grid};
use super::{ConverterTables, EngineTables, ShiftTables, VehicleConfig, VehicleError};
use crate::config::{ConfigDoc, ConfigError, Section};

fn require_section<'a>(doc: &'a ConfigDoc, name: &str) -> Result<&'a Section, VehicleError> {
    doc.section(name)
        .ok_or_else(|| VehicleError::MissingTable(name.to_string()))
}

fn vec_key(section: &Section, key: &str) -> Result<Vec<f64>, VehicleError> {
    section
        .vec_f64(key)
        .map_err(|e| lift_missing(e, &section.name, key))
}

fn lift_missing(e: ConfigError, section: &str, key: &str) -> VehicleError {
    match e {
        ConfigError::MissingKey { .. } => VehicleError::MissingTable(format!("{section}.{key}")),
        other => VehicleError::Config(other),
    }
}

fn fixed8(name: &str, v: Vec<f64>) -> Result<[f64; 8], VehicleError> {
    <[f64; 8]>::try_from(v)
        .map_err(|v| VehicleError::BadValue(format!("`{name}` needs 8 values, found {}", v.len())))
}

pub fn load_vehicle_config(text: &str) -> Result<VehicleConfig, VehicleError> {
    let doc = ConfigDoc::parse(text)?;

    let engine_s = require_section(&doc, "engine")?;
    let torque_s = require_section(&doc, "engine.torque")?;
    let fuel_s = require_section(&doc, "engine.fuel")?;
    let conv_s = require_section(&doc, "converter")?;
    let trans_s = require_section(&doc, "transmission")?;
    let body_s = require_section(&doc, "body")?;

    let torque = Curve::new(
        "engine.torque",
        vec_key(torque_s, "speed_axis")?,
        vec_key(torque_s, "torque")?,
    )?;

    let fuel_rows: Vec<Vec<f64>> = fuel_s
        .values("row")
        .map(|e| e.parse_vec_f64())
        .collect::<Result<_, _>>()?;
    if fuel_rows.is_empty() {
        return Err(VehicleError::MissingTable("engine.fuel.row".into()));
    }
    let fuel = Grid::new(
        "engine.fuel",
        vec_key(fuel_s, "speed_axis")?,
        vec_key(fuel_s, "torque_axis")?,
        fuel_rows,
    )?;

    let sr_axis = vec_key(conv_s, "speed_ratio_axis")?;
    let converter = ConverterTables {
        torque_ratio: Curve::new(
            "converter.torque_ratio",
            sr_axis.clone(),
            vec_key(conv_s, "torque_ratio")?,
        )?,
        k_factor: Curve::new("converter.k_factor", sr_axis, vec_key(conv_s, "k_factor")?)?,
        lockup_turbine_radps: conv_s
            .f64("lockup_turbine_speed")
            .map_err(|e| lift_missing(e, "converter", "lockup_turbine_speed"))?,
        lockup_min_gear: conv_s.u64_or("lockup_min_gear", 3)? as u8,
    };

    let throttle_axis = vec_key(trans_s, "throttle_axis")?;
    let upshift: Vec<Curve> = trans_s
        .values("upshift")
        .map(|e| Curve::new("transmission.upshift", throttle_axis.clone(), e.parse_vec_f64()?))
        .collect::<Result<_, _>>()?;
    let downshift: Vec<Curve> = trans_s
        .values("downshift")
        .map(|e| Curve::new("transmission.downshift", throttle_axis.clone(), e.parse_vec_f64()?))
        .collect::<Result<_, _>>()?;
    if upshift.len() != 7 || downshift.len() != 7 {
        return Err(VehicleError::BadValue(format!(
            "transmission needs 7 upshift and 7 downshift rows, found {} and {}",
            upshift.len(),
            downshift.len()
        )));
    }

    let cfg = VehicleConfig {
        mass_kg: body_s.f64("mass")?,
        frontal_area_m2: body_s.f64("frontal_area")?,
        drag_coeff: body_s.f64("drag_coeff")?,
        wheel_radius_m: body_s.f64("wheel_radius")?,
        wheel_inertia_kgm2: body_s.f64("wheel_inertia")?,
        final_drive: body_s.f64("final_drive")?,
        rolling_coeff: body_s.f64("rolling_coeff")?,
        air_density_kgpm3: body_s.f64("air_density")?,
        brake_gain_n: body_s.f64("brake_gain")?,
        gear_ratios: fixed8("gear_ratios", vec_key(trans_s, "gear_ratios")?)?,
        gear_inertia_kgm2: fixed8("gear_inertia", vec_key(trans_s, "gear_inertia")?)?,
        engine: EngineTables { torque, fuel },
        converter,
        shift: ShiftTables {
            throttle_axis,
            upshift,
            downshift,
        },
        idle_speed_radps: engine_s.f64("idle_speed")?,
        engine_inertia_kgm2: engine_s.f64("inertia")?,
        cyl_deact_fuel_scale: engine_s.f64_or("cyl_deact_fuel_scale", 0.85)?,
        governor_gain: engine_s.f64_or("governor_gain", 4.0)?,
        friction_torque: {
            let v = vec_key(engine_s, "friction_torque")?;
            if v.len() != 2 {
                return Err(VehicleError::BadValue(
                    "`friction_torque` needs 2 coefficients".into(),
                ));
            }
            (v[0], v[1])
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_fuel_table_reported() {
        let text = VehicleConfig::default_config_text();
        let without: String = text
            .lines()
            .filter(|l| !l.contains("[engine.fuel]"))
            .collect::<Vec<_>>()
            .join("\n");
        match load_vehicle_config(&without) {
            Err(VehicleError::MissingTable(name)) => assert!(name.contains("engine.fuel")),
            other => panic!("expected MissingTable, got {other:?}"),
        }
    }

    #[test]
    fn decreasing_speed_axis_rejected() {
        let text = VehicleConfig::default_config_text().replace(
            "speed_axis = 62.8319 104.72",
            "speed_axis = 104.72 62.8319",
        );
        assert!(matches!(
            load_vehicle_config(&text),
            Err(VehicleError::NonMonotoneAxis(_))
        ));
    }
}
