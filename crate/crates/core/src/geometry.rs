//! Planar geometry: positions, polylines with arc-length projection, and
//! oriented-rectangle overlap.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

/// A point (or vector) in the world frame, meters. `y` grows to the left of
/// a vehicle driving along `+x`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_heading(heading: f64) -> Self {
        Self::new(heading.cos(), heading.sin())
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    /// Counter-clockwise rotation about the origin.
    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Position {
    type Output = Position;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Position {
    type Output = Position;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Position {
    type Output = Position;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point. Extrapolated (negative or past the end)
    /// when the point lies beyond either end.
    pub s: f64,
    /// Signed lateral offset, positive to the left of the travel direction.
    pub lateral: f64,
    /// Euclidean distance to the nearest point *on* the polyline.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Position>", into = "Vec<Position>")]
pub struct Polyline {
    points: Vec<Position>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolylineError {
    #[error("polyline needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("polyline contains a non-finite point")]
    NonFinite,
    #[error("polyline has a zero-length segment at index {0}")]
    Degenerate(usize),
}

impl TryFrom<Vec<Position>> for Polyline {
    type Error = PolylineError;
    fn try_from(points: Vec<Position>) -> Result<Self, Self::Error> {
        Polyline::new(points)
    }
}

impl From<Polyline> for Vec<Position> {
    fn from(p: Polyline) -> Self {
        p.points
    }
}

impl Polyline {
    pub fn new(points: Vec<Position>) -> Result<Self, PolylineError> {
        if points.len() < 2 {
            return Err(PolylineError::TooFewPoints(points.len()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(PolylineError::NonFinite);
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for (i, w) in points.windows(2).enumerate() {
            let len = w[0].distance(w[1]);
            if len <= 1e-9 {
                return Err(PolylineError::Degenerate(i));
            }
            cumulative.push(cumulative[i] + len);
        }
        Ok(Self { points, cumulative })
    }

    pub fn line(from: Position, to: Position) -> Result<Self, PolylineError> {
        Self::new(vec![from, to])
    }

    /// Circular arc from `start_angle` sweeping `sweep` radians (positive is
    /// counter-clockwise) around `center`, sampled at roughly 1 m spacing.
    pub fn arc(center: Position, radius: f64, start_angle: f64, sweep: f64) -> Result<Self, PolylineError> {
        let arc_len = (radius * sweep).abs();
        let n = (arc_len.ceil() as usize).max(4);
        let points = (0..=n)
            .map(|i| {
                let a = start_angle + sweep * i as f64 / n as f64;
                center + Position::from_heading(a) * radius
            })
            .collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[Position] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().expect("polyline has points")
    }

    pub fn start(&self) -> Position {
        self.points[0]
    }

    pub fn end(&self) -> Position {
        *self.points.last().expect("polyline has points")
    }

    fn segment_for(&self, s: f64) -> usize {
        let last = self.points.len() - 2;
        match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(last),
            Err(i) => i.saturating_sub(1).min(last),
        }
    }

    /// Point at arc length `s`, extrapolating linearly past either end.
    pub fn point_at(&self, s: f64) -> Position {
        let i = self.segment_for(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        a + (b - a) * ((s - self.cumulative[i]) / seg)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_for(s);
        let d = self.points[i + 1] - self.points[i];
        d.y.atan2(d.x)
    }

    pub fn project(&self, p: Position) -> Projection {
        let last = self.points.len() - 2;
        let mut best: Option<(f64, usize, f64)> = None;
        for i in 0..=last {
            let a = self.points[i];
            let b = self.points[i + 1];
            let ab = b - a;
            let t = (p - a).dot(ab) / ab.dot(ab);
            let foot = a + ab * t.clamp(0.0, 1.0);
            let d = p.distance(foot);
            if best.is_none_or(|(bd, _, _)| d < bd - 1e-12) {
                best = Some((d, i, t));
            }
        }
        let (distance, i, mut t) = best.expect("polyline has segments");
        if !(i == 0 && t < 0.0) && !(i == last && t > 1.0) {
            t = t.clamp(0.0, 1.0);
        }
        let a = self.points[i];
        let ab = self.points[i + 1] - a;
        let seg = ab.norm();
        let s = self.cumulative[i] + t * seg;
        let lateral = (ab * (1.0 / seg)).cross(p - a);
        Projection { s, lateral, distance }
    }

    /// Minimum distance between two polylines, sampled every `step` meters.
    pub fn min_distance_to(&self, other: &Polyline, step: f64) -> f64 {
        let n = (self.length() / step).ceil() as usize;
        (0..=n)
            .map(|i| other.project(self.point_at(self.length() * i as f64 / n.max(1) as f64)).distance)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Oriented rectangle footprint of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Position,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    fn axes(&self) -> [Position; 2] {
        let f = Position::from_heading(self.heading);
        [f, Position::new(-f.y, f.x)]
    }

    fn half_extent_along(&self, axis: Position) -> f64 {
        let [f, l] = self.axes();
        0.5 * self.length * f.dot(axis).abs() + 0.5 * self.width * l.dot(axis).abs()
    }

    /// Separating-axis test. Boxes that merely touch do not overlap.
    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        let d = other.center - self.center;
        self.axes().into_iter().chain(other.axes()).all(|axis| {
            d.dot(axis).abs() < self.half_extent_along(axis) + other.half_extent_along(axis)
        })
    }

    pub fn corners(&self) -> [Position; 4] {
        let [f, l] = self.axes();
        let hf = f * (0.5 * self.length);
        let hl = l * (0.5 * self.width);
        [
            self.center + hf + hl,
            self.center + hf - hl,
            self.center - hf - hl,
            self.center - hf + hl,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn projection_extrapolates_past_ends() {
        let line = Polyline::line(Position::new(0.0, 0.0), Position::new(10.0, 0.0)).unwrap();
        let p = line.project(Position::new(12.0, 1.0));
        assert!((p.s - 12.0).abs() < 1e-12);
        assert!((p.lateral - 1.0).abs() < 1e-12);
        assert!((p.distance - 5f64.sqrt()).abs() < 1e-12);
        let q = line.project(Position::new(-3.0, -2.0));
        assert!((q.s + 3.0).abs() < 1e-12);
        assert!((q.lateral + 2.0).abs() < 1e-12);
    }

    #[test]
    fn arc_length_matches_radius_times_sweep() {
        let arc = Polyline::arc(Position::default(), 10.0, 0.0, FRAC_PI_2).unwrap();
        // chords slightly undershoot the true arc
        assert!((arc.length() - 10.0 * FRAC_PI_2).abs() < 0.05);
        let end = arc.end();
        assert!(end.x.abs() < 1e-9 && (end.y - 10.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_degenerate_polylines() {
        assert_eq!(Polyline::new(vec![Position::default()]), Err(PolylineError::TooFewPoints(1)));
        assert_eq!(
            Polyline::new(vec![Position::default(), Position::default()]),
            Err(PolylineError::Degenerate(0))
        );
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-12);
    }

    fn corner_in_box(p: Position, b: &OrientedBox) -> bool {
        let d = p - b.center;
        let f = Position::from_heading(b.heading);
        let l = Position::new(-f.y, f.x);
        d.dot(f).abs() < 0.5 * b.length && d.dot(l).abs() < 0.5 * b.width
    }

    fn segments_cross(a: Position, b: Position, c: Position, d: Position) -> bool {
        let o1 = (b - a).cross(c - a);
        let o2 = (b - a).cross(d - a);
        let o3 = (d - c).cross(a - c);
        let o4 = (d - c).cross(b - c);
        o1 * o2 < 0.0 && o3 * o4 < 0.0
    }

    // Independent oracle: rectangles intersect iff a boundary point of one
    // lies strictly inside the other or two edges properly cross. Edge points
    // are sampled so collinear, offset edges are caught too.
    fn corner_edge_oracle(a: &OrientedBox, b: &OrientedBox) -> bool {
        let ca = a.corners();
        let cb = b.corners();
        let samples = |c: &[Position; 4]| {
            (0..4)
                .flat_map(|i| (0..8).map(move |k| (i, k as f64 / 8.0)))
                .map(|(i, f)| c[i] + (c[(i + 1) % 4] - c[i]) * f)
                .collect::<Vec<_>>()
        };
        if samples(&ca).iter().any(|p| corner_in_box(*p, b)) || samples(&cb).iter().any(|p| corner_in_box(*p, a)) {
            return true;
        }
        (0..4).any(|i| (0..4).any(|j| segments_cross(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4])))
    }

    #[test]
    fn lateral_offset_overlap_case() {
        let a = OrientedBox { center: Position::new(0.0, 0.0), heading: 0.0, length: 5.0, width: 2.0 };
        let b = OrientedBox { center: Position::new(0.0, 1.9), heading: 0.0, length: 5.0, width: 2.0 };
        assert!(a.overlaps(&b));
        assert!(corner_edge_oracle(&a, &b));
        let c = OrientedBox { center: Position::new(0.0, 2.1), ..b };
        assert!(!a.overlaps(&c));
        assert!(!corner_edge_oracle(&a, &c));
    }

    proptest::proptest! {
        #[test]
        fn sat_agrees_with_corner_edge_oracle(
            x in -8.0f64..8.0, y in -8.0f64..8.0, h1 in -3.2f64..3.2, h2 in -3.2f64..3.2,
        ) {
            let a = OrientedBox { center: Position::new(0.0, 0.0), heading: h1, length: 5.0, width: 2.0 };
            let b = OrientedBox { center: Position::new(x, y), heading: h2, length: 5.0, width: 2.0 };
            proptest::prop_assert_eq!(a.overlaps(&b), corner_edge_oracle(&a, &b));
            proptest::prop_assert_eq!(a.overlaps(&b), b.overlaps(&a));
        }
    }
}
