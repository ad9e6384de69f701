//! Road-network realization: turn a [`DriveCycle`] into 2-D geometry and emit
//! two redundant map formats — analytic edges (origin/heading/length/curvature)
//! and sampled waypoints (~3 m tiles) — plus a consistency checker that bounds
//! the disagreement between them.

use crate::cycle::{ControlKind, DriveCycle};
use thiserror::Error;

pub const DEFAULT_TILE_M: f64 = 3.0;
pub const DEFAULT_LANE_WIDTH_M: f64 = 3.5;
/// Consistency gate: waypoints must sit within this distance of the analytic edge.
pub const POSITION_TOL_M: f64 = 0.5;
/// Consistency gate: controller arc positions may differ by at most one tile.
pub const CONTROLLER_TOL_M: f64 = 3.0;

const STRAIGHT_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("line {line}: malformed document: {reason}")]
    MalformedDocument { line: usize, reason: String },
    #[error("line {line}: field `{field}` out of range: {value}")]
    OutOfRangeField {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("arc length mismatch: edge map {edge_m} m vs waypoint map {waypoint_m} m")]
    LengthMismatch { edge_m: f64, waypoint_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn dist(self, other: Point2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// One constant-curvature arc of road.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub origin: Point2,
    pub heading_rad: f64,
    pub length_m: f64,
    pub curvature_inv_m: f64,
    pub speed_limit_mps: f64,
    pub grade: f64,
}

impl Edge {
    /// Position at local arc length `s` along this edge.
    pub fn point_at(&self, s: f64) -> Point2 {
        let k = self.curvature_inv_m;
        let th0 = self.heading_rad;
        if k.abs() < STRAIGHT_EPS {
            Point2 {
                x: self.origin.x + s * th0.cos(),
                y: self.origin.y + s * th0.sin(),
            }
        } else {
            let th = th0 + k * s;
            Point2 {
                x: self.origin.x + (th.sin() - th0.sin()) / k,
                y: self.origin.y - (th.cos() - th0.cos()) / k,
            }
        }
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        self.heading_rad + self.curvature_inv_m * s
    }

    pub fn endpoint(&self) -> Point2 {
        self.point_at(self.length_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeController {
    pub edge_index: usize,
    pub offset_m: f64,
    pub kind: ControlKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub edges: Vec<Edge>,
    pub controllers: Vec<EdgeController>,
}

impl EdgeMap {
    pub fn total_length_m(&self) -> f64 {
        self.edges.iter().map(|e| e.length_m).sum()
    }

    /// Arc length from the route origin to the start of edge `i`.
    pub fn arc_at_edge_start(&self, i: usize) -> f64 {
        self.edges[..i].iter().map(|e| e.length_m).sum()
    }

    /// Position at a global arc length, clamped to the route extent.
    pub fn point_at_arc(&self, arc_m: f64) -> Point2 {
        let mut s = arc_m.max(0.0);
        for edge in &self.edges {
            if s <= edge.length_m {
                return edge.point_at(s);
            }
            s -= edge.length_m;
        }
        self.edges
            .last()
            .map(|e| e.endpoint())
            .unwrap_or(Point2 { x: 0.0, y: 0.0 })
    }

    pub fn max_abs_curvature(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.curvature_inv_m.abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), MapError> {
        if self.edges.is_empty() {
            return Err(MapError::MalformedDocument {
                line: 0,
                reason: "edge map has no edges".into(),
            });
        }
        for (i, pair) in self.edges.windows(2).enumerate() {
            let end = pair[0].endpoint();
            if end.dist(pair[1].origin) > 1e-6 {
                return Err(MapError::MalformedDocument {
                    line: i + 2,
                    reason: format!(
                        "edge {} endpoint does not meet edge {} origin",
                        i,
                        i + 1
                    ),
                });
            }
            let dh = (pair[0].heading_at(pair[0].length_m) - pair[1].heading_rad).abs();
            if dh > 1e-9 {
                return Err(MapError::MalformedDocument {
                    line: i + 2,
                    reason: format!("heading discontinuity {dh} rad between edges {i} and {}", i + 1),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: Point2,
    pub altitude_m: f64,
    pub lane_width_m: f64,
    pub speed_limit_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub waypoint_index: usize,
    pub kind: ControlKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointMap {
    pub waypoints: Vec<Waypoint>,
    pub checkpoints: Vec<Checkpoint>,
    pub tile_length_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyReport {
    pub max_position_error_m: f64,
    pub max_controller_offset_error_m: f64,
    pub pass: bool,
}

/// Realize a cycle into 2-D geometry: one constant-curvature edge per segment,
/// chained so heading integrates as theta(s) = theta0 + kappa*s. Edge 0 starts
/// at the origin heading +x. Every non-`none` control lands at its segment end.
pub fn realize_geometry(cycle: &DriveCycle) -> EdgeMap {
    let mut edges = Vec::with_capacity(cycle.segments.len());
    let mut controllers = Vec::new();
    let mut origin = Point2 { x: 0.0, y: 0.0 };
    let mut heading = 0.0_f64;
    for (i, seg) in cycle.segments.iter().enumerate() {
        let edge = Edge {
            origin,
            heading_rad: heading,
            length_m: seg.length_m,
            curvature_inv_m: seg.curvature_inv_m,
            speed_limit_mps: seg.speed_limit_mps,
            grade: seg.grade,
        };
        origin = edge.endpoint();
        heading = edge.heading_at(edge.length_m);
        if let Some(kind) = seg.control {
            controllers.push(EdgeController {
                edge_index: i,
                offset_m: seg.length_m,
                kind,
            });
        }
        edges.push(edge);
    }
    EdgeMap { edges, controllers }
}

/// The tiling schedule: global arc length of every waypoint the edge map
/// produces at a given tile length. Each edge is cut into
/// `ceil(length/tile)` equal tiles; the first waypoint sits at the origin.
pub fn tiling_arcs(edge_map: &EdgeMap, tile_length_m: f64) -> Vec<f64> {
    let mut arcs = vec![0.0];
    let mut base = 0.0;
    for edge in &edge_map.edges {
        let n = (edge.length_m / tile_length_m).ceil().max(1.0) as usize;
        let spacing = edge.length_m / n as f64;
        for j in 1..=n {
            arcs.push(base + spacing * j as f64);
        }
        base += edge.length_m;
    }
    arcs
}

pub fn emit_waypoint_map(edge_map: &EdgeMap, tile_length_m: f64) -> WaypointMap {
    emit_waypoint_map_with(edge_map, tile_length_m, DEFAULT_LANE_WIDTH_M)
}

pub fn emit_waypoint_map_with(
    edge_map: &EdgeMap,
    tile_length_m: f64,
    lane_width_m: f64,
) -> WaypointMap {
    assert!(tile_length_m > 0.0, "tile length must be positive");
    let mut waypoints = Vec::new();
    let first = edge_map.edges.first();
    waypoints.push(Waypoint {
        position: first.map_or(Point2 { x: 0.0, y: 0.0 }, |e| e.origin),
        altitude_m: 0.0,
        lane_width_m,
        speed_limit_mps: first.map_or(0.0, |e| e.speed_limit_mps),
    });
    let mut altitude = 0.0;
    for edge in &edge_map.edges {
        let n = (edge.length_m / tile_length_m).ceil().max(1.0) as usize;
        let spacing = edge.length_m / n as f64;
        for j in 1..=n {
            let s = spacing * j as f64;
            waypoints.push(Waypoint {
                position: edge.point_at(s),
                altitude_m: altitude + edge.grade * s,
                lane_width_m,
                speed_limit_mps: edge.speed_limit_mps,
            });
        }
        altitude += edge.grade * edge.length_m;
    }

    let arcs = tiling_arcs(edge_map, tile_length_m);
    let checkpoints = edge_map
        .controllers
        .iter()
        .map(|c| {
            let target = edge_map.arc_at_edge_start(c.edge_index) + c.offset_m;
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, &a) in arcs.iter().enumerate() {
                let d = (a - target).abs();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            Checkpoint {
                waypoint_index: best,
                kind: c.kind,
            }
        })
        .collect();

    WaypointMap {
        waypoints,
        checkpoints,
        tile_length_m,
    }
}

/// Compare a waypoint map against the analytic edge map it claims to sample.
/// Position error is measured at each waypoint's scheduled arc length;
/// controller positions are compared by arc length in emission order.
pub fn check_consistency(
    edge_map: &EdgeMap,
    wp_map: &WaypointMap,
) -> Result<ConsistencyReport, MapError> {
    let arcs = tiling_arcs(edge_map, wp_map.tile_length_m);
    let edge_total = edge_map.total_length_m();
    if arcs.len() != wp_map.waypoints.len() {
        let wp_chord: f64 = wp_map
            .waypoints
            .windows(2)
            .map(|w| w[0].position.dist(w[1].position))
            .sum();
        return Err(MapError::LengthMismatch {
            edge_m: edge_total,
            waypoint_m: wp_chord,
        });
    }
    // Same tiling rule and same count imply same schedule; still reject a map
    // whose chordal length disagrees with the schedule's by more than 1 m.
    let expected_chord: f64 = arcs
        .windows(2)
        .map(|w| edge_map.point_at_arc(w[0]).dist(edge_map.point_at_arc(w[1])))
        .sum();
    let actual_chord: f64 = wp_map
        .waypoints
        .windows(2)
        .map(|w| w[0].position.dist(w[1].position))
        .sum();
    if (expected_chord - actual_chord).abs() > 1.0 {
        return Err(MapError::LengthMismatch {
            edge_m: edge_total,
            waypoint_m: actual_chord,
        });
    }

    let mut max_pos = 0.0_f64;
    for (wp, &arc) in wp_map.waypoints.iter().zip(&arcs) {
        let err = wp.position.dist(edge_map.point_at_arc(arc));
        max_pos = max_pos.max(err);
    }

    let mut max_ctrl = 0.0_f64;
    if edge_map.controllers.len() != wp_map.checkpoints.len() {
        max_ctrl = f64::INFINITY;
    } else {
        for (c, chk) in edge_map.controllers.iter().zip(&wp_map.checkpoints) {
            let ctrl_arc = edge_map.arc_at_edge_start(c.edge_index) + c.offset_m;
            let chk_arc = arcs
                .get(chk.waypoint_index)
                .copied()
                .unwrap_or(f64::INFINITY);
            max_ctrl = max_ctrl.max((ctrl_arc - chk_arc).abs());
        }
    }

    Ok(ConsistencyReport {
        max_position_error_m: max_pos,
        max_controller_offset_error_m: max_ctrl,
        pass: max_pos <= POSITION_TOL_M && max_ctrl <= CONTROLLER_TOL_M,
    })
}

fn parse_float(line: usize, field: &'static str, tok: &str) -> Result<f64, MapError> {
    let v: f64 = tok.parse().map_err(|_| MapError::MalformedDocument {
        line,
        reason: format!("field `{field}` is not a number: {tok}"),
    })?;
    if !v.is_finite() {
        return Err(MapError::OutOfRangeField {
            line,
            field,
            value: v,
        });
    }
    Ok(v)
}

pub const EDGE_FILE_HEADER: &str = "EDGEMAP v1";
pub const WP_FILE_HEADER: &str = "WPMAP v1";

/// Edge-map text format: header, one `x y heading length curvature
/// speed_limit grade` line per edge, then `CTRL edge_idx offset kind` lines.
/// Floats use shortest round-trip formatting, so parse(emit(m)) == m exactly.
pub fn emit_edge_file(map: &EdgeMap) -> String {
    let mut out = String::from(EDGE_FILE_HEADER);
    out.push('\n');
    for e in &map.edges {
        out.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            e.origin.x,
            e.origin.y,
            e.heading_rad,
            e.length_m,
            e.curvature_inv_m,
            e.speed_limit_mps,
            e.grade
        ));
    }
    for c in &map.controllers {
        out.push_str(&format!(
            "CTRL {} {} {}\n",
            c.edge_index,
            c.offset_m,
            c.kind.token()
        ));
    }
    out
}

pub fn parse_edge_file(text: &str) -> Result<EdgeMap, MapError> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().ok_or(MapError::MalformedDocument {
        line: 1,
        reason: "empty document".into(),
    })?;
    if header.1.trim() != EDGE_FILE_HEADER {
        return Err(MapError::MalformedDocument {
            line: 1,
            reason: format!("expected header `{EDGE_FILE_HEADER}`"),
        });
    }
    let mut edges = Vec::new();
    let mut controllers = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("CTRL ") {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(MapError::MalformedDocument {
                    line: line_no,
                    reason: "CTRL line needs `edge_idx offset kind`".into(),
                });
            }
            let edge_index: usize = toks[0].parse().map_err(|_| MapError::MalformedDocument {
                line: line_no,
                reason: format!("bad edge index `{}`", toks[0]),
            })?;
            let offset_m = parse_float(line_no, "offset", toks[1])?;
            let kind = ControlKind::from_token(toks[2])
                .flatten()
                .ok_or_else(|| MapError::MalformedDocument {
                    line: line_no,
                    reason: format!("unknown controller kind `{}`", toks[2]),
                })?;
            if edge_index >= edges.len() {
                return Err(MapError::MalformedDocument {
                    line: line_no,
                    reason: format!("controller references edge {edge_index} of {}", edges.len()),
                });
            }
            controllers.push(EdgeController {
                edge_index,
                offset_m,
                kind,
            });
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 7 {
            return Err(MapError::MalformedDocument {
                line: line_no,
                reason: format!("edge line needs 7 fields, found {}", toks.len()),
            });
        }
        edges.push(Edge {
            origin: Point2 {
                x: parse_float(line_no, "x", toks[0])?,
                y: parse_float(line_no, "y", toks[1])?,
            },
            heading_rad: parse_float(line_no, "heading", toks[2])?,
            length_m: parse_float(line_no, "length", toks[3])?,
            curvature_inv_m: parse_float(line_no, "curvature", toks[4])?,
            speed_limit_mps: parse_float(line_no, "speed_limit", toks[5])?,
            grade: parse_float(line_no, "grade", toks[6])?,
        });
    }
    let map = EdgeMap { edges, controllers };
    map.validate()?;
    Ok(map)
}

/// Waypoint-map text format: header (with the tile length), one `x y alt
/// lane_width speed_limit` line per waypoint, then `CHK wp_idx kind` lines.
pub fn emit_waypoint_file(map: &WaypointMap) -> String {
    let mut out = format!("{WP_FILE_HEADER} {}\n", map.tile_length_m);
    for w in &map.waypoints {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            w.position.x,
            w.position.y,
            w.altitude_m,
            w.lane_width_m,
            w.speed_limit_mps
        ));
    }
    for c in &map.checkpoints {
        out.push_str(&format!("CHK {} {}\n", c.waypoint_index, c.kind.token()));
    }
    out
}

pub fn parse_waypoint_file(text: &str) -> Result<WaypointMap, MapError> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().ok_or(MapError::MalformedDocument {
        line: 1,
        reason: "empty document".into(),
    })?;
    let head = header.1.trim();
    if !head.starts_with(WP_FILE_HEADER) {
        return Err(MapError::MalformedDocument {
            line: 1,
            reason: format!("expected header `{WP_FILE_HEADER}`"),
        });
    }
    let tile_length_m = match head[WP_FILE_HEADER.len()..].trim() {
        "" => DEFAULT_TILE_M,
        tok => parse_float(1, "tile_length", tok)?,
    };
    if tile_length_m <= 0.0 {
        return Err(MapError::OutOfRangeField {
            line: 1,
            field: "tile_length",
            value: tile_length_m,
        });
    }
    let mut waypoints = Vec::new();
    let mut checkpoints = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("CHK ") {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(MapError::MalformedDocument {
                    line: line_no,
                    reason: "CHK line needs `wp_idx kind`".into(),
                });
            }
            let waypoint_index: usize =
                toks[0].parse().map_err(|_| MapError::MalformedDocument {
                    line: line_no,
                    reason: format!("bad waypoint index `{}`", toks[0]),
                })?;
            let kind = ControlKind::from_token(toks[1])
                .flatten()
                .ok_or_else(|| MapError::MalformedDocument {
                    line: line_no,
                    reason: format!("unknown checkpoint kind `{}`", toks[1]),
                })?;
            if waypoint_index >= waypoints.len() {
                return Err(MapError::MalformedDocument {
                    line: line_no,
                    reason: format!(
                        "checkpoint references waypoint {waypoint_index} of {}",
                        waypoints.len()
                    ),
                });
            }
            checkpoints.push(Checkpoint {
                waypoint_index,
                kind,
            });
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(MapError::MalformedDocument {
                line: line_no,
                reason: format!("waypoint line needs 5 fields, found {}", toks.len()),
            });
        }
        let lane_width_m = parse_float(line_no, "lane_width", toks[3])?;
        if lane_width_m <= 0.0 {
            return Err(MapError::OutOfRangeField {
                line: line_no,
                field: "lane_width",
                value: lane_width_m,
            });
        }
        waypoints.push(Waypoint {
            position: Point2 {
                x: parse_float(line_no, "x", toks[0])?,
                y: parse_float(line_no, "y", toks[1])?,
            },
            altitude_m: parse_float(line_no, "alt", toks[2])?,
            lane_width_m,
            speed_limit_mps: parse_float(line_no, "speed_limit", toks[4])?,
        });
    }
    if waypoints.is_empty() {
        return Err(MapError::MalformedDocument {
            line: 1,
            reason: "waypoint map has no waypoints".into(),
        });
    }
    Ok(WaypointMap {
        waypoints,
        checkpoints,
        tile_length_m,
    })
}
