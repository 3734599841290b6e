//! Canvas geometry: points, orthogonal line routes and distance queries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canvas extent in abstract units along each axis.
pub const CANVAS_SIZE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn offset(self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }

    pub fn in_canvas(self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && (0.0..=CANVAS_SIZE).contains(&self.x)
            && (0.0..=CANVAS_SIZE).contains(&self.y)
    }
}

/// An axis-parallel piece of a drawn line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub from: Point,
    pub to: Point,
}

impl Segment {
    pub fn is_axis_parallel(&self) -> bool {
        self.from.x == self.to.x || self.from.y == self.to.y
    }

    pub fn length(&self) -> f64 {
        self.from.distance(self.to)
    }

    /// Euclidean distance from `p` to the closest point of the segment.
    pub fn distance_to(&self, p: Point) -> f64 {
        point_segment_distance(p, self.from, self.to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("InvalidRoute: line endpoints coincide")]
    InvalidRoute,
}

/// Route a new line from `a` to `b`: a single segment when the ports are
/// axis-aligned, otherwise horizontal from `a` and then vertical into `b`.
pub fn route_line(a: Point, b: Point) -> Result<Vec<Segment>, RouteError> {
    if a == b {
        return Err(RouteError::InvalidRoute);
    }
    if a.x == b.x || a.y == b.y {
        return Ok(vec![Segment { from: a, to: b }]);
    }
    let elbow = Point::new(b.x, a.y);
    Ok(vec![Segment { from: a, to: elbow }, Segment { from: elbow, to: b }])
}

/// Route used when an existing line is redrawn after one of its components
/// moved or rotated. Non-aligned ports get three pieces split at the
/// midpoint of the dominant axis.
pub fn reroute_line(a: Point, b: Point) -> Result<Vec<Segment>, RouteError> {
    if a == b {
        return Err(RouteError::InvalidRoute);
    }
    if a.x == b.x || a.y == b.y {
        return Ok(vec![Segment { from: a, to: b }]);
    }
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let (p1, p2) = if dx.abs() >= dy.abs() {
        let mid = a.x + dx / 2.0;
        (Point::new(mid, a.y), Point::new(mid, b.y))
    } else {
        let mid = a.y + dy / 2.0;
        (Point::new(a.x, mid), Point::new(b.x, mid))
    };
    Ok(vec![
        Segment { from: a, to: p1 },
        Segment { from: p1, to: p2 },
        Segment { from: p2, to: b },
    ])
}

/// Checks the structural route invariants: 1 to 3 axis-parallel pieces,
/// chained end to start, starting at `a` and ending at `b`.
pub fn route_is_consistent(route: &[Segment], a: Point, b: Point) -> bool {
    if route.is_empty() || route.len() > 3 {
        return false;
    }
    if route[0].from != a || route[route.len() - 1].to != b {
        return false;
    }
    route.iter().all(Segment::is_axis_parallel)
        && route.windows(2).all(|w| w[0].to == w[1].from)
}

pub fn polyline_distance(route: &[Segment], p: Point) -> f64 {
    route
        .iter()
        .map(|s| s.distance_to(p))
        .fold(f64::INFINITY, f64::min)
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0);
    p.distance(Point::new(a.x + t * vx, a.y + t * vy))
}

/// Quarter-turn orientation. Rotation steps are clockwise on a y-down canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub enum Rotation {
    #[default]
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub fn degrees(self) -> u16 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    pub fn clockwise(self) -> Rotation {
        match self {
            Rotation::R0 => Rotation::R90,
            Rotation::R90 => Rotation::R180,
            Rotation::R180 => Rotation::R270,
            Rotation::R270 => Rotation::R0,
        }
    }

    /// Rotate a local offset into canvas orientation.
    pub fn apply(self, dx: f64, dy: f64) -> (f64, f64) {
        match self {
            Rotation::R0 => (dx, dy),
            Rotation::R90 => (-dy, dx),
            Rotation::R180 => (-dx, -dy),
            Rotation::R270 => (dy, -dx),
        }
    }
}

impl TryFrom<u16> for Rotation {
    type Error = String;

    fn try_from(deg: u16) -> Result<Self, Self::Error> {
        match deg {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            other => Err(format!("rotation must be a quarter turn, got {other} degrees")),
        }
    }
}

impl From<Rotation> for u16 {
    fn from(r: Rotation) -> u16 {
        r.degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub position: Point,
    #[serde(default)]
    pub rotation: Rotation,
}

impl Placement {
    pub fn at(x: f64, y: f64) -> Self {
        Self {
            position: Point::new(x, y),
            rotation: Rotation::R0,
        }
    }

    /// Canvas position of a point given in component-local coordinates.
    pub fn local_to_canvas(&self, dx: f64, dy: f64) -> Point {
        let (rx, ry) = self.rotation.apply(dx, dy);
        self.position.offset(rx, ry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_route_is_one_segment() {
        let r = route_line(Point::new(0.0, 0.0), Point::new(10.0, 0.0)).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].is_axis_parallel());
    }

    #[test]
    fn elbow_goes_horizontal_first() {
        let r = route_line(Point::new(0.0, 0.0), Point::new(10.0, 5.0)).unwrap();
        assert_eq!(
            r,
            vec![
                Segment { from: Point::new(0.0, 0.0), to: Point::new(10.0, 0.0) },
                Segment { from: Point::new(10.0, 0.0), to: Point::new(10.0, 5.0) },
            ]
        );
    }

    #[test]
    fn coincident_ports_rejected() {
        let p = Point::new(3.0, 3.0);
        assert_eq!(route_line(p, p), Err(RouteError::InvalidRoute));
        assert_eq!(reroute_line(p, p), Err(RouteError::InvalidRoute));
    }

    #[test]
    fn reroute_splits_dominant_axis() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(10.0, 4.0);
        let r = reroute_line(a, b).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].to, Point::new(5.0, 0.0));
        assert_eq!(r[1].to, Point::new(5.0, 4.0));
        assert!(route_is_consistent(&r, a, b));

        let r = reroute_line(a, Point::new(2.0, 8.0)).unwrap();
        assert_eq!(r[0].to, Point::new(0.0, 4.0));
    }

    #[test]
    fn rotation_cycles() {
        let mut r = Rotation::R0;
        for _ in 0..4 {
            r = r.clockwise();
        }
        assert_eq!(r, Rotation::R0);
        // (1, 0) points right; a clockwise quarter turn on a y-down canvas points down.
        assert_eq!(Rotation::R90.apply(1.0, 0.0), (0.0, 1.0));
        assert!(Rotation::try_from(45).is_err());
    }

    #[test]
    fn segment_distance() {
        let s = Segment { from: Point::new(0.0, 0.0), to: Point::new(10.0, 0.0) };
        assert_eq!(s.distance_to(Point::new(5.0, 3.0)), 3.0);
        assert_eq!(s.distance_to(Point::new(13.0, 4.0)), 5.0);
    }
}
