//! Drive-cycle ingestion: parse, validate, and normalize per-segment route
//! records into a canonical in-memory description of a 1-D route.
//!
//! A cycle file is CSV with one row per segment:
//! `start_m,length_m,speed_limit_mps,grade,curvature_inv_m,control`
//! where `control` is one of `none`, `light`, `stop`, `turn`. Lines starting
//! with `#` are ignored, except an optional `# id=<name>` which names the
//! cycle. SI units throughout; grade is tan(theta), curvature is signed
//! (left positive).

use thiserror::Error;

pub const GRADE_LIMIT: f64 = 0.2;
pub const CURVATURE_LIMIT: f64 = 0.1;
/// Tolerance for segment contiguity checks, in meters.
pub const CONTIGUITY_TOL_M: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CycleError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: segment starts at {actual} m, expected {expected} m")]
    NonContiguousDistance {
        line: usize,
        expected: f64,
        actual: f64,
    },
    #[error("line {line}: field `{field}` out of range: {value}")]
    OutOfRangeField {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("cycle has no segments")]
    Empty,
}

/// Traffic-control device terminating a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ControlKind {
    TrafficLight,
    StopSign,
    Turn,
}

impl ControlKind {
    pub fn token(self) -> &'static str {
        match self {
            ControlKind::TrafficLight => "light",
            ControlKind::StopSign => "stop",
            ControlKind::Turn => "turn",
        }
    }

    pub fn from_token(tok: &str) -> Option<Option<Self>> {
        match tok {
            "none" => Some(None),
            "light" => Some(Some(ControlKind::TrafficLight)),
            "stop" => Some(Some(ControlKind::StopSign)),
            "turn" => Some(Some(ControlKind::Turn)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleSegment {
    /// Arc distance of the segment start from the route origin, m.
    pub start_m: f64,
    /// Segment length, m. Always > 0.
    pub length_m: f64,
    /// Speed limit, m/s. Always > 0.
    pub speed_limit_mps: f64,
    /// Road grade as tan(theta), dimensionless.
    pub grade: f64,
    /// Signed curvature, 1/m, left positive.
    pub curvature_inv_m: f64,
    /// Control device at the segment end, if any.
    pub control: Option<ControlKind>,
}

impl CycleSegment {
    pub fn end_m(&self) -> f64 {
        self.start_m + self.length_m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveCycle {
    pub id: String,
    pub segments: Vec<CycleSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleStats {
    pub distance_m: f64,
    pub n_traffic_lights: usize,
    /// Lights + stop signs + turns.
    pub n_intersections: usize,
}

impl DriveCycle {
    pub fn new(id: impl Into<String>, segments: Vec<CycleSegment>) -> Result<Self, CycleError> {
        let cycle = DriveCycle {
            id: id.into(),
            segments,
        };
        cycle.validate()?;
        Ok(cycle)
    }

    pub fn total_length_m(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end_m())
    }

    pub fn validate(&self) -> Result<(), CycleError> {
        if self.segments.is_empty() {
            return Err(CycleError::Empty);
        }
        let mut expected = self.segments[0].start_m;
        for (i, seg) in self.segments.iter().enumerate() {
            let line = i + 1;
            check_field(line, "length_m", seg.length_m, |v| v > 0.0)?;
            check_field(line, "speed_limit_mps", seg.speed_limit_mps, |v| v > 0.0)?;
            check_field(line, "grade", seg.grade, |v| v.abs() < GRADE_LIMIT)?;
            check_field(line, "curvature_inv_m", seg.curvature_inv_m, |v| {
                v.abs() <= CURVATURE_LIMIT
            })?;
            if (seg.start_m - expected).abs() > CONTIGUITY_TOL_M {
                return Err(CycleError::NonContiguousDistance {
                    line,
                    expected,
                    actual: seg.start_m,
                });
            }
            expected = seg.end_m();
        }
        Ok(())
    }
}

fn check_field(
    line: usize,
    field: &'static str,
    value: f64,
    ok: impl Fn(f64) -> bool,
) -> Result<(), CycleError> {
    if value.is_finite() && ok(value) {
        Ok(())
    } else {
        Err(CycleError::OutOfRangeField { line, field, value })
    }
}

pub const CYCLE_CSV_HEADER: &str = "start_m,length_m,speed_limit_mps,grade,curvature_inv_m,control";

/// Parse a drive-cycle CSV document.
pub fn parse_cycle(text: &str) -> Result<DriveCycle, CycleError> {
    let mut id = String::from("cycle");
    let mut segments = Vec::new();
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(name) = comment.trim().strip_prefix("id=") {
                id = name.trim().to_string();
            }
            continue;
        }
        if !saw_header {
            if line != CYCLE_CSV_HEADER {
                return Err(CycleError::MalformedRow {
                    line: line_no,
                    reason: format!("expected header `{CYCLE_CSV_HEADER}`"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(CycleError::MalformedRow {
                line: line_no,
                reason: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let num = |i: usize, name: &'static str| -> Result<f64, CycleError> {
            fields[i].parse().map_err(|_| CycleError::MalformedRow {
                line: line_no,
                reason: format!("field `{name}` is not a number: {}", fields[i]),
            })
        };
        let control = ControlKind::from_token(fields[5]).ok_or(CycleError::MalformedRow {
            line: line_no,
            reason: format!("unknown control `{}`", fields[5]),
        })?;
        segments.push(CycleSegment {
            start_m: num(0, "start_m")?,
            length_m: num(1, "length_m")?,
            speed_limit_mps: num(2, "speed_limit_mps")?,
            grade: num(3, "grade")?,
            curvature_inv_m: num(4, "curvature_inv_m")?,
            control,
        });
    }
    if !saw_header {
        return Err(CycleError::MalformedRow {
            line: text.lines().count().max(1),
            reason: "missing header".into(),
        });
    }
    validate_parsed(&segments)?;
    Ok(DriveCycle { id, segments })
}

/// Like [`DriveCycle::validate`] but reports errors with the typed variants
/// the parser promises (range vs contiguity), using 1-based segment order
/// as the line hint.
fn validate_parsed(segments: &[CycleSegment]) -> Result<(), CycleError> {
    if segments.is_empty() {
        return Err(CycleError::Empty);
    }
    let mut expected = segments[0].start_m;
    for (i, seg) in segments.iter().enumerate() {
        let line = i + 2; // header occupies the first data line
        check_field(line, "length_m", seg.length_m, |v| v > 0.0)?;
        check_field(line, "speed_limit_mps", seg.speed_limit_mps, |v| v > 0.0)?;
        check_field(line, "grade", seg.grade, |v| v.abs() < GRADE_LIMIT)?;
        check_field(line, "curvature_inv_m", seg.curvature_inv_m, |v| {
            v.abs() <= CURVATURE_LIMIT
        })?;
        check_field(line, "start_m", seg.start_m, |v| v >= 0.0)?;
        if (seg.start_m - expected).abs() > CONTIGUITY_TOL_M {
            return Err(CycleError::NonContiguousDistance {
                line,
                expected,
                actual: seg.start_m,
            });
        }
        expected = seg.end_m();
    }
    Ok(())
}

/// Emit a cycle as CSV. `parse_cycle(emit_cycle(c)) == c` exactly: floats are
/// printed with shortest round-trip formatting.
pub fn emit_cycle(cycle: &DriveCycle) -> String {
    let mut out = String::new();
    out.push_str(&format!("# id={}\n", cycle.id));
    out.push_str(CYCLE_CSV_HEADER);
    out.push('\n');
    for seg in &cycle.segments {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            seg.start_m,
            seg.length_m,
            seg.speed_limit_mps,
            seg.grade,
            seg.curvature_inv_m,
            seg.control.map_or("none", ControlKind::token),
        ));
    }
    out
}

pub fn cycle_stats(cycle: &DriveCycle) -> CycleStats {
    let n_traffic_lights = cycle
        .segments
        .iter()
        .filter(|s| s.control == Some(ControlKind::TrafficLight))
        .count();
    let n_intersections = cycle.segments.iter().filter(|s| s.control.is_some()).count();
    CycleStats {
        distance_m: cycle.total_length_m(),
        n_traffic_lights,
        n_intersections,
    }
}

/// A control device placed on the route at an absolute arc position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteControl {
    pub arc_m: f64,
    pub kind: ControlKind,
}

/// Query view over a [`DriveCycle`]: arc position to grade, limit, curvature,
/// altitude, and controls. Shared by the traffic world and the planners.
#[derive(Debug, Clone)]
pub struct Route {
    segments: Vec<CycleSegment>,
    /// Altitude at each segment start (integral of grade over arc).
    alt_at_start: Vec<f64>,
    controls: Vec<RouteControl>,
    total_m: f64,
}

impl Route {
    pub fn from_cycle(cycle: &DriveCycle) -> Route {
        let mut alt = Vec::with_capacity(cycle.segments.len());
        let mut a = 0.0;
        let mut controls = Vec::new();
        for seg in &cycle.segments {
            alt.push(a);
            a += seg.grade * seg.length_m;
            if let Some(kind) = seg.control {
                controls.push(RouteControl {
                    arc_m: seg.end_m(),
                    kind,
                });
            }
        }
        Route {
            segments: cycle.segments.clone(),
            alt_at_start: alt,
            controls,
            total_m: cycle.total_length_m(),
        }
    }

    pub fn total_length_m(&self) -> f64 {
        self.total_m
    }

    pub fn segments(&self) -> &[CycleSegment] {
        &self.segments
    }

    fn seg_index(&self, arc_m: f64) -> usize {
        let arc = arc_m.clamp(0.0, self.total_m);
        match self
            .segments
            .binary_search_by(|s| s.start_m.partial_cmp(&arc).unwrap())
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    pub fn segment_at(&self, arc_m: f64) -> &CycleSegment {
        &self.segments[self.seg_index(arc_m)]
    }

    pub fn grade_at(&self, arc_m: f64) -> f64 {
        self.segment_at(arc_m).grade
    }

    pub fn speed_limit_at(&self, arc_m: f64) -> f64 {
        self.segment_at(arc_m).speed_limit_mps
    }

    pub fn curvature_at(&self, arc_m: f64) -> f64 {
        self.segment_at(arc_m).curvature_inv_m
    }

    /// Altitude relative to the origin: cumulative integral of grade over arc.
    pub fn altitude_at(&self, arc_m: f64) -> f64 {
        let i = self.seg_index(arc_m);
        let seg = &self.segments[i];
        let local = arc_m.clamp(0.0, self.total_m) - seg.start_m;
        self.alt_at_start[i] + seg.grade * local
    }

    pub fn controls(&self) -> &[RouteControl] {
        &self.controls
    }

    /// First control strictly ahead of `arc_m`.
    pub fn next_control(&self, arc_m: f64) -> Option<RouteControl> {
        self.controls.iter().copied().find(|c| c.arc_m > arc_m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(start: f64, len: f64, limit: f64) -> CycleSegment {
        CycleSegment {
            start_m: start,
            length_m: len,
            speed_limit_mps: limit,
            grade: 0.0,
            curvature_inv_m: 0.0,
            control: None,
        }
    }

    #[test]
    fn single_row_identity() {
        let c = parse_cycle(&format!("{CYCLE_CSV_HEADER}\n0,100,13.4,0.0,0.0,none\n")).unwrap();
        assert_eq!(c.segments.len(), 1);
        assert_eq!(c.total_length_m(), 100.0);
    }

    #[test]
    fn contiguity_sum() {
        let text = format!("{CYCLE_CSV_HEADER}\n0,100,13.4,0,0,none\n100,80,13.4,0,0,none\n");
        let c = parse_cycle(&text).unwrap();
        assert_eq!(c.total_length_m(), 180.0);
    }

    #[test]
    fn gap_detected() {
        let text = format!("{CYCLE_CSV_HEADER}\n0,100,13.4,0,0,none\n250,80,13.4,0,0,none\n");
        match parse_cycle(&text) {
            Err(CycleError::NonContiguousDistance { expected, actual, .. }) => {
                assert_eq!(expected, 100.0);
                assert_eq!(actual, 250.0);
            }
            other => panic!("expected NonContiguousDistance, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_grade() {
        let text = format!("{CYCLE_CSV_HEADER}\n0,100,13.4,0.25,0,none\n");
        assert!(matches!(
            parse_cycle(&text),
            Err(CycleError::OutOfRangeField { field: "grade", .. })
        ));
    }

    #[test]
    fn malformed_row_reports_line() {
        let text = format!("{CYCLE_CSV_HEADER}\n0,100,13.4,0,0\n");
        match parse_cycle(&text) {
            Err(CycleError::MalformedRow { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn stats_counts_controls() {
        // Short-scenario analog: 1.6 km, 2 lights + 3 stop signs = 5 intersections.
        let mut segs = Vec::new();
        let kinds = [
            Some(ControlKind::TrafficLight),
            Some(ControlKind::StopSign),
            None,
            Some(ControlKind::StopSign),
            Some(ControlKind::TrafficLight),
            Some(ControlKind::StopSign),
            None,
            None,
        ];
        let mut start = 0.0;
        for k in kinds {
            segs.push(CycleSegment {
                control: k,
                ..seg(start, 200.0, 13.4)
            });
            start += 200.0;
        }
        let c = DriveCycle::new("analog", segs).unwrap();
        let s = cycle_stats(&c);
        assert_eq!(s.distance_m, 1600.0);
        assert_eq!(s.n_traffic_lights, 2);
        assert_eq!(s.n_intersections, 5);
    }

    #[test]
    fn stats_no_controls() {
        let c = DriveCycle::new("x", vec![seg(0.0, 500.0, 13.4)]).unwrap();
        let s = cycle_stats(&c);
        assert_eq!(s.distance_m, 500.0);
        assert_eq!(s.n_traffic_lights, 0);
        assert_eq!(s.n_intersections, 0);
    }

    #[test]
    fn emit_parse_round_trip_exact() {
        let c = DriveCycle::new(
            "rt-1",
            vec![
                CycleSegment {
                    start_m: 0.0,
                    length_m: 123.456789,
                    speed_limit_mps: 13.4,
                    grade: 0.0123456789,
                    curvature_inv_m: -0.03,
                    control: Some(ControlKind::Turn),
                },
                CycleSegment {
                    start_m: 123.456789,
                    length_m: std::f64::consts::PI * 50.0,
                    speed_limit_mps: 15.6,
                    grade: -0.05,
                    curvature_inv_m: 0.099999,
                    control: None,
                },
            ],
        )
        .unwrap();
        let back = parse_cycle(&emit_cycle(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn route_altitude_and_lookups() {
        let c = DriveCycle::new(
            "r",
            vec![
                CycleSegment {
                    grade: 0.0,
                    ..seg(0.0, 100.0, 10.0)
                },
                CycleSegment {
                    grade: 0.05,
                    control: Some(ControlKind::TrafficLight),
                    ..seg(100.0, 200.0, 15.0)
                },
            ],
        )
        .unwrap();
        let r = Route::from_cycle(&c);
        assert_eq!(r.altitude_at(100.0), 0.0);
        assert!((r.altitude_at(300.0) - 10.0).abs() < 1e-12);
        assert!((r.altitude_at(200.0) - 5.0).abs() < 1e-12);
        assert_eq!(r.speed_limit_at(50.0), 10.0);
        assert_eq!(r.speed_limit_at(150.0), 15.0);
        let ctrl = r.next_control(0.0).unwrap();
        assert_eq!(ctrl.arc_m, 300.0);
        assert_eq!(ctrl.kind, ControlKind::TrafficLight);
        assert!(r.next_control(300.0).is_none());
    }
}
