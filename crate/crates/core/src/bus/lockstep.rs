//! Deterministic in-process scheduler: per 20 ms tick, environment emits,
//! planner reacts, plant advances, environment absorbs — with a barrier
//! between stages and every message recorded.

use super::codec::{
    encode, ControlPayload, EnvStatePayload, Message, MsgType, Payload, SpatPayload,
    VehStatePayload,
};
use super::BusError;
use crate::vehicle::STEP_S;

/// SPaT is emitted every 5th tick (10 Hz against the 50 Hz base rate).
pub const SPAT_DIVISOR: u64 = 5;

pub trait EnvComponent {
    fn emit(&mut self, tick: u64, t: f64) -> Result<(EnvStatePayload, Option<SpatPayload>), String>;
    fn absorb(&mut self, veh: &VehStatePayload) -> Result<(), String>;
}

pub trait PlannerComponent {
    fn control(
        &mut self,
        t: f64,
        env: &EnvStatePayload,
        spat: Option<&SpatPayload>,
    ) -> Result<ControlPayload, String>;
}

pub trait PlantComponent {
    fn advance(&mut self, t: f64, ctrl: &ControlPayload) -> Result<VehStatePayload, String>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub tick: u64,
    pub message: Message,
}

/// Every message that crossed the bus, in emission order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn veh_states(&self) -> impl Iterator<Item = (u64, &VehStatePayload)> {
        self.records.iter().filter_map(|r| match &r.message.payload {
            Payload::Veh(v) => Some((r.tick, v)),
            _ => None,
        })
    }

    pub fn count_of(&self, kind: MsgType) -> usize {
        self.records
            .iter()
            .filter(|r| r.message.msg_type() == kind)
            .count()
    }

    /// Byte-exact serialization of the whole message log.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.records {
            out.extend_from_slice(&r.tick.to_le_bytes());
            out.extend_from_slice(&encode(&r.message));
        }
        out
    }

    pub fn sort_canonical(&mut self) {
        self.records
            .sort_by_key(|r| (r.tick, r.message.msg_type().tick_rank()));
    }
}

/// Sequence counters per message kind, shared by both transports so traces
/// compare across them.
#[derive(Debug, Clone, Copy, Default)]
pub struct SeqCounters {
    env: u32,
    spat: u32,
    veh: u32,
    control: u32,
}

impl SeqCounters {
    pub fn next(&mut self, kind: MsgType) -> u32 {
        let c = match kind {
            MsgType::EnvState => &mut self.env,
            MsgType::Spat => &mut self.spat,
            MsgType::VehState => &mut self.veh,
            MsgType::Control => &mut self.control,
        };
        let v = *c;
        *c += 1;
        v
    }
}

/// Run the staged loop for `duration_s` (rounded to whole ticks).
pub fn lockstep_run(
    env: &mut dyn EnvComponent,
    planner: &mut dyn PlannerComponent,
    plant: &mut dyn PlantComponent,
    duration_s: f64,
) -> Result<Trace, BusError> {
    let ticks = (duration_s / STEP_S).round() as u64;
    let mut trace = Trace::default();
    let mut seqs = SeqCounters::default();
    let fault = |tick: u64, stage: &str, e: String| BusError::ComponentFault {
        tick,
        reason: format!("{stage}: {e}"),
    };

    for tick in 0..ticks {
        let t = tick as f64 * STEP_S;

        let (env_payload, spat_payload) =
            env.emit(tick, t).map_err(|e| fault(tick, "env", e))?;
        let spat_payload = if tick % SPAT_DIVISOR == 0 {
            spat_payload
        } else {
            None
        };
        let env_msg = Message {
            seq: seqs.next(MsgType::EnvState),
            sim_time_s: t,
            payload: Payload::Env(env_payload),
        };
        trace.records.push(TraceRecord {
            tick,
            message: env_msg.clone(),
        });
        let spat_msg = spat_payload.map(|p| Message {
            seq: seqs.next(MsgType::Spat),
            sim_time_s: t,
            payload: Payload::Spat(p),
        });
        if let Some(m) = &spat_msg {
            trace.records.push(TraceRecord {
                tick,
                message: m.clone(),
            });
        }

        let Payload::Env(env_ref) = &env_msg.payload else {
            unreachable!()
        };
        let spat_ref = spat_msg.as_ref().and_then(|m| match &m.payload {
            Payload::Spat(p) => Some(p),
            _ => None,
        });
        let ctrl = planner
            .control(t, env_ref, spat_ref)
            .map_err(|e| fault(tick, "planner", e))?;
        trace.records.push(TraceRecord {
            tick,
            message: Message {
                seq: seqs.next(MsgType::Control),
                sim_time_s: t,
                payload: Payload::Control(ctrl),
            },
        });

        let veh = plant
            .advance(t, &ctrl)
            .map_err(|e| fault(tick, "plant", e))?;
        trace.records.push(TraceRecord {
            tick,
            message: Message {
                seq: seqs.next(MsgType::VehState),
                sim_time_s: t,
                payload: Payload::Veh(veh),
            },
        });

        env.absorb(&veh).map_err(|e| fault(tick, "env", e))?;
    }
    Ok(trace)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn run(duration: f64) -> Trace {
        let mut env = StubEnv { absorbed: 0 };
        let mut planner = StubPlanner;
        let mut plant = StubPlant { x: 0.0 };
        lockstep_run(&mut env, &mut planner, &mut plant, duration).unwrap()
    }

    #[test]
    fn one_second_is_50_ticks_10_spat() {
        let trace = run(1.0);
        assert_eq!(trace.count_of(MsgType::EnvState), 50);
        assert_eq!(trace.count_of(MsgType::VehState), 50);
        assert_eq!(trace.count_of(MsgType::Control), 50);
        assert_eq!(trace.count_of(MsgType::Spat), 10);
    }

    #[test]
    fn zero_duration_empty_trace() {
        let trace = run(0.0);
        assert!(trace.records.is_empty());
    }

    #[test]
    fn spat_count_formula() {
        for n in 1..=37u64 {
            let trace = run(n as f64 * STEP_S);
            assert_eq!(
                trace.count_of(MsgType::Spat) as u64,
                (n - 1) / SPAT_DIVISOR + 1,
                "n = {n}"
            );
        }
    }

    #[test]
    fn repeated_runs_byte_identical() {
        assert_eq!(run(2.0).to_bytes(), run(2.0).to_bytes());
    }

    #[test]
    fn component_fault_carries_tick() {
        struct FailingPlant;
        impl PlantComponent for FailingPlant {
            fn advance(&mut self, t: f64, _c: &ControlPayload) -> Result<VehStatePayload, String> {
                if t > 0.1 {
                    Err("plant exploded".into())
                } else {
                    Ok(VehStatePayload {
                        arc_m: 0.0,
                        speed_mps: 0.0,
                        accel_mps2: 0.0,
                        engine_speed_radps: 0.0,
                        fuel_rate_gps: 0.0,
                        fuel_total_g: 0.0,
                        gear: 1,
                    })
                }
            }
        }
        let mut env = StubEnv { absorbed: 0 };
        let mut planner = StubPlanner;
        let mut plant = FailingPlant;
        match lockstep_run(&mut env, &mut planner, &mut plant, 1.0) {
            Err(BusError::ComponentFault { tick, reason }) => {
                assert_eq!(tick, 6);
                assert!(reason.contains("plant exploded"));
            }
            other => panic!("expected ComponentFault, got {other:?}"),
        }
    }
}
