//! Bit-exact binary codec for the co-simulation wire protocol. Fixed
//! little-endian layouts; decode never reads past the declared payload
//! length and returns typed errors on any malformed input.

use super::BusError;

pub const MAGIC: u32 = 0x4952_4544;
pub const WIRE_VERSION: u16 = 1;
/// Header: magic u32, version u16, msg_type u16, seq u32, sim_time f64,
/// payload_len u32.
pub const HEADER_LEN: usize = 24;

const OBSTACLE_LEN: usize = 5 * 8 + 1;
const SPAT_LEN: usize = 4 + 1 + 3 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum MsgType {
    EnvState = 1,
    Spat = 2,
    VehState = 3,
    Control = 4,
}

impl MsgType {
    pub fn from_u16(v: u16) -> Option<MsgType> {
        match v {
            1 => Some(MsgType::EnvState),
            2 => Some(MsgType::Spat),
            3 => Some(MsgType::VehState),
            4 => Some(MsgType::Control),
            _ => None,
        }
    }

    /// Emission order of message kinds within one tick.
    pub fn tick_rank(self) -> u8 {
        match self {
            MsgType::EnvState => 0,
            MsgType::Spat => 1,
            MsgType::Control => 2,
            MsgType::VehState => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireEgo {
    pub arc_m: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
    pub grade: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireObstacle {
    pub arc_m: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
    pub length_m: f64,
    pub heading_rad: f64,
    /// 0 = vehicle, 1 = static.
    pub kind: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireSpat {
    pub light_id: u32,
    /// 0 = red, 1 = green, 2 = yellow.
    pub phase: u8,
    pub time_remaining_s: f64,
    pub next_phase_duration_s: f64,
    pub full_cycle_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStatePayload {
    pub ego: WireEgo,
    pub obstacles: Vec<WireObstacle>,
    pub spat: Vec<WireSpat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatPayload {
    pub items: Vec<WireSpat>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehStatePayload {
    pub arc_m: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
    pub engine_speed_radps: f64,
    pub fuel_rate_gps: f64,
    pub fuel_total_g: f64,
    pub gear: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPayload {
    pub throttle: f64,
    pub brake: f64,
    /// Bit 0: DFCO request.
    pub flags: u8,
    /// 0 = no hold, 1..8 = hold that gear.
    pub gear_hold: u8,
}

impl ControlPayload {
    pub const FLAG_DFCO: u8 = 0x01;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Env(EnvStatePayload),
    Spat(SpatPayload),
    Veh(VehStatePayload),
    Control(ControlPayload),
}

impl Payload {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Payload::Env(_) => MsgType::EnvState,
            Payload::Spat(_) => MsgType::Spat,
            Payload::Veh(_) => MsgType::VehState,
            Payload::Control(_) => MsgType::Control,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub seq: u32,
    pub sim_time_s: f64,
    pub payload: Payload,
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        self.payload.msg_type()
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn spat(&mut self, s: &WireSpat) {
        self.u32(s.light_id);
        self.u8(s.phase);
        self.f64(s.time_remaining_s);
        self.f64(s.next_phase_duration_s);
        self.f64(s.full_cycle_s);
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut w = Writer { buf: Vec::with_capacity(HEADER_LEN + 64) };
    w.u32(MAGIC);
    w.u16(WIRE_VERSION);
    w.u16(msg.msg_type() as u16);
    w.u32(msg.seq);
    w.f64(msg.sim_time_s);
    w.u32(0); // payload_len backpatched below
    match &msg.payload {
        Payload::Env(p) => {
            w.f64(p.ego.arc_m);
            w.f64(p.ego.speed_mps);
            w.f64(p.ego.accel_mps2);
            w.f64(p.ego.grade);
            w.u32(p.obstacles.len() as u32);
            for o in &p.obstacles {
                w.f64(o.arc_m);
                w.f64(o.speed_mps);
                w.f64(o.accel_mps2);
                w.f64(o.length_m);
                w.f64(o.heading_rad);
                w.u8(o.kind);
            }
            w.u32(p.spat.len() as u32);
            for s in &p.spat {
                w.spat(s);
            }
        }
        Payload::Spat(p) => {
            w.u32(p.items.len() as u32);
            for s in &p.items {
                w.spat(s);
            }
        }
        Payload::Veh(p) => {
            w.f64(p.arc_m);
            w.f64(p.speed_mps);
            w.f64(p.accel_mps2);
            w.f64(p.engine_speed_radps);
            w.f64(p.fuel_rate_gps);
            w.f64(p.fuel_total_g);
            w.u8(p.gear);
        }
        Payload::Control(p) => {
            w.f64(p.throttle);
            w.f64(p.brake);
            w.u8(p.flags);
            w.u8(p.gear_hold);
        }
    }
    let payload_len = (w.buf.len() - HEADER_LEN) as u32;
    w.buf[20..24].copy_from_slice(&payload_len.to_le_bytes());
    w.buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BusError> {
        if self.pos + n > self.end {
            return Err(BusError::TruncatedPayload {
                needed: self.pos + n,
                available: self.end,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, BusError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, BusError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, BusError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, BusError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn spat(&mut self) -> Result<WireSpat, BusError> {
        Ok(WireSpat {
            light_id: self.u32()?,
            phase: self.u8()?,
            time_remaining_s: self.f64()?,
            next_phase_duration_s: self.f64()?,
            full_cycle_s: self.f64()?,
        })
    }
    fn remaining(&self) -> usize {
        self.end - self.pos
    }
    /// Bound a declared element count by the bytes actually present, so a
    /// hostile count cannot trigger a huge allocation.
    fn counted(&self, count: u32, elem_len: usize) -> Result<usize, BusError> {
        let count = count as usize;
        if count * elem_len > self.remaining() {
            return Err(BusError::TruncatedPayload {
                needed: self.pos + count * elem_len,
                available: self.end,
            });
        }
        Ok(count)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Message, BusError> {
    if bytes.len() < HEADER_LEN {
        return Err(BusError::TruncatedPayload {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        end: bytes.len(),
    };
    let magic = r.u32()?;
    if magic != MAGIC {
        return Err(BusError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != WIRE_VERSION {
        return Err(BusError::VersionMismatch {
            expected: WIRE_VERSION,
            found: version,
        });
    }
    let type_raw = r.u16()?;
    let msg_type = MsgType::from_u16(type_raw).ok_or(BusError::UnknownType(type_raw))?;
    let seq = r.u32()?;
    let sim_time_s = r.f64()?;
    let payload_len = r.u32()? as usize;
    if HEADER_LEN + payload_len > bytes.len() {
        return Err(BusError::TruncatedPayload {
            needed: HEADER_LEN + payload_len,
            available: bytes.len(),
        });
    }
    // Trailing bytes beyond payload_len are ignored; reads are bounded to it.
    r.end = HEADER_LEN + payload_len;

    let payload = match msg_type {
        MsgType::EnvState => {
            let ego = WireEgo {
                arc_m: r.f64()?,
                speed_mps: r.f64()?,
                accel_mps2: r.f64()?,
                grade: r.f64()?,
            };
            let n = r.u32()?;
            let n = r.counted(n, OBSTACLE_LEN)?;
            let mut obstacles = Vec::with_capacity(n);
            for _ in 0..n {
                obstacles.push(WireObstacle {
                    arc_m: r.f64()?,
                    speed_mps: r.f64()?,
                    accel_mps2: r.f64()?,
                    length_m: r.f64()?,
                    heading_rad: r.f64()?,
                    kind: r.u8()?,
                });
            }
            let n = r.u32()?;
            let n = r.counted(n, SPAT_LEN)?;
            let mut spat = Vec::with_capacity(n);
            for _ in 0..n {
                spat.push(r.spat()?);
            }
            Payload::Env(EnvStatePayload { ego, obstacles, spat })
        }
        MsgType::Spat => {
            let n = r.u32()?;
            let n = r.counted(n, SPAT_LEN)?;
            let mut items = Vec::with_capacity(n);
            for _ in 0..n {
                items.push(r.spat()?);
            }
            Payload::Spat(SpatPayload { items })
        }
        MsgType::VehState => Payload::Veh(VehStatePayload {
            arc_m: r.f64()?,
            speed_mps: r.f64()?,
            accel_mps2: r.f64()?,
            engine_speed_radps: r.f64()?,
            fuel_rate_gps: r.f64()?,
            fuel_total_g: r.f64()?,
            gear: r.u8()?,
        }),
        MsgType::Control => Payload::Control(ControlPayload {
            throttle: r.f64()?,
            brake: r.f64()?,
            flags: r.u8()?,
            gear_hold: r.u8()?,
        }),
    };
    Ok(Message {
        seq,
        sim_time_s,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn control_msg() -> Message {
        Message {
            seq: 7,
            sim_time_s: 1.26,
            payload: Payload::Control(ControlPayload {
                throttle: 0.375,
                brake: 0.0,
                flags: ControlPayload::FLAG_DFCO,
                gear_hold: 0,
            }),
        }
    }

    #[test]
    fn control_round_trip_bit_exact() {
        let msg = control_msg();
        let bytes = encode(&msg);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, msg);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn env_round_trip_with_nan_payload_preserved() {
        let msg = Message {
            seq: 1,
            sim_time_s: 0.02,
            payload: Payload::Env(EnvStatePayload {
                ego: WireEgo {
                    arc_m: 12.5,
                    speed_mps: f64::NAN,
                    accel_mps2: -0.25,
                    grade: 0.01,
                },
                obstacles: vec![WireObstacle {
                    arc_m: 50.0,
                    speed_mps: 3.0,
                    accel_mps2: 0.0,
                    length_m: 4.5,
                    heading_rad: 0.0,
                    kind: 0,
                }],
                spat: vec![WireSpat {
                    light_id: 2,
                    phase: 1,
                    time_remaining_s: 4.5,
                    next_phase_duration_s: 2.0,
                    full_cycle_s: 30.0,
                }],
            }),
        };
        let bytes = encode(&msg);
        let back = decode(&bytes).unwrap();
        // NaN != NaN, so compare re-encoded bytes for bit exactness.
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode(&control_msg());
        bytes[0..4].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(BusError::BadMagic(0))));
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = encode(&control_msg());
        bytes[4..6].copy_from_slice(&9u16.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(BusError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn unknown_type_rejected() {
        let mut bytes = encode(&control_msg());
        bytes[6..8].copy_from_slice(&77u16.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(BusError::UnknownType(77))));
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = encode(&control_msg());
        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(BusError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn oversized_count_rejected_without_allocation() {
        // An ENV_STATE whose obstacle count claims far more than the buffer holds.
        let msg = Message {
            seq: 0,
            sim_time_s: 0.0,
            payload: Payload::Env(EnvStatePayload {
                ego: WireEgo {
                    arc_m: 0.0,
                    speed_mps: 0.0,
                    accel_mps2: 0.0,
                    grade: 0.0,
                },
                obstacles: vec![],
                spat: vec![],
            }),
        };
        let mut bytes = encode(&msg);
        // obstacle count lives right after the 32-byte ego block
        let off = HEADER_LEN + 32;
        bytes[off..off + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(BusError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn fuzz_never_panics() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..20_000 {
            let len = rng.random_range(0..256);
            let mut buf = vec![0u8; len];
            rng.fill(buf.as_mut_slice());
            // Half the time, make the header plausible to reach deeper paths.
            if len >= HEADER_LEN && rng.random::<bool>() {
                buf[0..4].copy_from_slice(&MAGIC.to_le_bytes());
                buf[4..6].copy_from_slice(&WIRE_VERSION.to_le_bytes());
                let t = rng.random_range(1..=4u16);
                buf[6..8].copy_from_slice(&t.to_le_bytes());
            }
            let _ = decode(&buf);
        }
    }
}
