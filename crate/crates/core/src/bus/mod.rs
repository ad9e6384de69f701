//! Message fabric: bit-exact codec, deterministic lockstep scheduler, and a
//! UDP transport with the same staged semantics, plus conversions between
//! the wire payloads and the in-process domain types.

pub mod codec;
pub mod lockstep;
pub mod udp;

pub use codec::{
    decode, encode, ControlPayload, EnvStatePayload, Message, MsgType, Payload, SpatPayload,
    VehStatePayload, WireEgo, WireObstacle, WireSpat, HEADER_LEN, MAGIC, WIRE_VERSION,
};
pub use lockstep::{
    lockstep_run, EnvComponent, PlannerComponent, PlantComponent, Trace, TraceRecord, SPAT_DIVISOR,
};
pub use udp::{udp_run, RxCounters, RxFlags, UdpEndpoint};

use crate::traffic::{EnvSnapshot, Obstacle, ObstacleKind, Phase, SpatMessage};
use crate::vehicle::{ControlCommand, VehicleState};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BusError {
    #[error("bad magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("unknown message type {0}")]
    UnknownType(u16),
    #[error("truncated payload: needed {needed} bytes, have {available}")]
    TruncatedPayload { needed: usize, available: usize },
    #[error("wire version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u16, found: u16 },
    #[error("failed to bind {addr}: {source}")]
    BindFailure {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("send failed: {0}")]
    SendFailure(#[source] std::io::Error),
    #[error("component fault at tick {tick}: {reason}")]
    ComponentFault { tick: u64, reason: String },
}

impl From<&SpatMessage> for WireSpat {
    fn from(m: &SpatMessage) -> WireSpat {
        WireSpat {
            light_id: m.light_id,
            phase: m.current_phase.code(),
            time_remaining_s: m.time_remaining_s,
            next_phase_duration_s: m.next_phase_duration_s,
            full_cycle_s: m.full_cycle_s,
        }
    }
}

impl WireSpat {
    pub fn to_spat_message(&self, timestamp_s: f64) -> Option<SpatMessage> {
        Some(SpatMessage {
            light_id: self.light_id,
            current_phase: Phase::from_code(self.phase)?,
            time_remaining_s: self.time_remaining_s,
            next_phase_duration_s: self.next_phase_duration_s,
            full_cycle_s: self.full_cycle_s,
            timestamp_s,
        })
    }
}

impl From<&Obstacle> for WireObstacle {
    fn from(o: &Obstacle) -> WireObstacle {
        WireObstacle {
            arc_m: o.arc_m,
            speed_mps: o.speed_mps,
            accel_mps2: o.accel_mps2,
            length_m: o.length_m,
            heading_rad: o.heading_rad,
            kind: match o.kind {
                ObstacleKind::Vehicle => 0,
                ObstacleKind::Static => 1,
            },
        }
    }
}

impl WireObstacle {
    /// Wire obstacles are anonymous; the receiver labels them by arrival order.
    pub fn to_obstacle(&self, id: u32) -> Obstacle {
        Obstacle {
            id,
            kind: if self.kind == 1 {
                ObstacleKind::Static
            } else {
                ObstacleKind::Vehicle
            },
            arc_m: self.arc_m,
            speed_mps: self.speed_mps,
            accel_mps2: self.accel_mps2,
            length_m: self.length_m,
            width_m: 1.9,
            heading_rad: self.heading_rad,
        }
    }
}

/// Wire view of a full environment snapshot.
pub fn env_payload_from_snapshot(snap: &EnvSnapshot) -> EnvStatePayload {
    EnvStatePayload {
        ego: WireEgo {
            arc_m: snap.ego.arc_m,
            speed_mps: snap.ego.speed_mps,
            accel_mps2: snap.ego.accel_mps2,
            grade: snap.grade,
        },
        obstacles: snap.obstacles.iter().map(WireObstacle::from).collect(),
        spat: snap.spat.iter().map(WireSpat::from).collect(),
    }
}

pub fn control_payload(cmd: &ControlCommand) -> ControlPayload {
    ControlPayload {
        throttle: cmd.throttle,
        brake: cmd.brake,
        flags: if cmd.dfco_request {
            ControlPayload::FLAG_DFCO
        } else {
            0
        },
        gear_hold: cmd.gear_hold.unwrap_or(0),
    }
}

pub fn control_command(p: &ControlPayload) -> ControlCommand {
    ControlCommand {
        throttle: p.throttle,
        brake: p.brake,
        dfco_request: p.flags & ControlPayload::FLAG_DFCO != 0,
        gear_hold: if p.gear_hold == 0 {
            None
        } else {
            Some(p.gear_hold)
        },
    }
    .normalized()
}

pub fn veh_payload(state: &VehicleState) -> VehStatePayload {
    VehStatePayload {
        arc_m: state.arc_m,
        speed_mps: state.speed_mps,
        accel_mps2: state.accel_mps2,
        engine_speed_radps: state.powertrain.engine_speed_radps,
        fuel_rate_gps: state.powertrain.fuel_rate_gps,
        fuel_total_g: state.powertrain.fuel_total_g,
        gear: state.powertrain.gear,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_conversion_round_trip() {
        let cmd = ControlCommand {
            throttle: 0.0,
            brake: 0.4,
            dfco_request: false,
            gear_hold: Some(3),
        };
        let back = control_command(&control_payload(&cmd));
        assert_eq!(back, cmd);
    }
}
