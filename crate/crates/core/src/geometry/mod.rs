//! Planar primitives and exact area computations.
//!
//! Everything here works in continuous pixel coordinates. Rings are stored
//! without repeating the first vertex; a positive signed shoelace area marks
//! an outer ring ("counter-clockwise" in the x-right/y-up sense) and a
//! negative one a hole.

mod clip;
mod mc;
mod obb;

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

pub use clip::{
    clip_area_rect, clip_convex, convex_intersection, polygon_intersection_area, rect_rect_area,
    triple_area,
};
pub use mc::{mc_area_oracle, McEstimate};
pub use obb::{convex_hull, oriented_bbox};

/// Tolerance used for degenerate and collinear clip intersections.
pub const CLIP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn rotate(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

/// Unit direction vector for an angle in radians.
pub fn direction(angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    Point::new(c, s)
}

/// Maps any angle into `[0, π)`; rectangles are symmetric under a half turn.
pub fn canonical_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Smallest deviation between two undirected orientations, in `[0, π/2]`.
pub fn angle_deviation(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(PI);
    d.min(PI - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: Point,
    pub max: Point,
}

impl BBox {
    pub fn empty() -> Self {
        Self {
            min: Point::new(f64::INFINITY, f64::INFINITY),
            max: Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Self {
        let mut bb = Self::empty();
        for p in points {
            bb.include(*p);
        }
        bb
    }

    pub fn include(&mut self, p: Point) {
        self.min.x = self.min.x.min(p.x);
        self.min.y = self.min.y.min(p.y);
        self.max.x = self.max.x.max(p.x);
        self.max.y = self.max.y.max(p.y);
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y
    }

    /// Closed-interval overlap test; touching boxes count as intersecting.
    pub fn intersects(&self, other: &BBox) -> bool {
        !(self.is_empty()
            || other.is_empty()
            || self.max.x < other.min.x
            || other.max.x < self.min.x
            || self.max.y < other.min.y
            || other.max.y < self.min.y)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.width() * self.height()
        }
    }
}

/// A closed polygon ring; the closing edge from the last vertex back to the
/// first is implicit.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Ring {
    pub vertices: Vec<Point>,
}

impl Ring {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_points(&self.vertices)
    }

    pub fn reversed(&self) -> Ring {
        let mut v = self.vertices.clone();
        v.reverse();
        Ring::new(v)
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, p: Point) -> bool {
        point_in_ring(&self.vertices, p)
    }

    pub fn is_convex(&self) -> bool {
        is_convex(&self.vertices)
    }

    /// Edges as `(start, end)` pairs including the closing edge.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }
}

pub fn signed_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let p = vertices[i];
        let q = vertices[(i + 1) % n];
        acc += p.cross(q);
    }
    0.5 * acc
}

/// Absolute shoelace area.
pub fn polygon_area(ring: &Ring) -> f64 {
    ring.signed_area().abs()
}

pub fn point_in_ring(vertices: &[Point], p: Point) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[j];
        if (a.y > p.y) != (b.y > p.y) {
            let x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn is_convex(vertices: &[Point]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let c = vertices[(i + 2) % n];
        let z = (b - a).cross(c - b);
        if z.abs() <= CLIP_EPS {
            continue;
        }
        if sign == 0.0 {
            sign = z.signum();
        } else if z.signum() != sign {
            return false;
        }
    }
    sign != 0.0
}

/// Distance from `p` to the closed segment `a`–`b`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Distance from `p` to the infinite line through `origin` with unit `dir`.
pub fn point_line_distance(p: Point, origin: Point, dir: Point) -> f64 {
    (p - origin).cross(dir).abs()
}

/// Rectangle shape: length `a` along the axis at angle `rho`, width `b`
/// across it, centered at `center`.
///
/// Model shapes keep `a` and `b` on integer pixel values; evaluation code
/// (oriented bounding boxes, ground truth in meters) uses continuous sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectPoly {
    pub a: f64,
    pub b: f64,
    pub center: Point,
    pub rho: f64,
}

impl RectPoly {
    pub fn new(a: f64, b: f64, center: Point, rho: f64) -> Self {
        Self {
            a,
            b,
            center,
            rho: canonical_angle(rho),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.a <= 0.0 || self.b <= 0.0
    }

    pub fn area(&self) -> f64 {
        self.a.max(0.0) * self.b.max(0.0)
    }

    pub fn axis(&self) -> Point {
        direction(self.rho)
    }

    pub fn normal(&self) -> Point {
        let u = self.axis();
        Point::new(-u.y, u.x)
    }

    /// Four corners in positive (counter-clockwise) order, even when degenerate.
    pub fn corners(&self) -> [Point; 4] {
        let ha = 0.5 * self.a;
        let hb = 0.5 * self.b;
        let local = [
            Point::new(-ha, -hb),
            Point::new(ha, -hb),
            Point::new(ha, hb),
            Point::new(-ha, hb),
        ];
        local.map(|p| p.rotate(self.rho) + self.center)
    }

    /// Endpoints of the central axis (the length-`a` midline).
    pub fn axis_endpoints(&self) -> (Point, Point) {
        let h = self.axis() * (0.5 * self.a);
        (self.center - h, self.center + h)
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_points(&self.corners())
    }

    /// Membership test in the rectangle's own frame (boundary inclusive).
    pub fn contains(&self, p: Point) -> bool {
        let d = p - self.center;
        d.dot(self.axis()).abs() <= 0.5 * self.a && d.dot(self.normal()).abs() <= 0.5 * self.b
    }
}

/// Decodes a rectangle into its 4-vertex ring; `None` for a degenerate
/// (zero length or width) shape, which stands for an empty contour.
pub fn decode_rect(shape: &RectPoly) -> Option<Ring> {
    if shape.is_degenerate() {
        None
    } else {
        Some(Ring::new(shape.corners().to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn assert_same_cyclic(got: &[Point], want: &[Point]) {
        assert_eq!(got.len(), want.len());
        let n = got.len();
        let found = (0..n).any(|s| {
            (0..n).all(|i| got[(i + s) % n].dist(want[i]) < 1e-12)
        });
        assert!(found, "{got:?} is not a rotation of {want:?}");
    }

    #[test]
    fn decode_axis_aligned() {
        let r = RectPoly::new(4.0, 2.0, Point::new(0.0, 0.0), 0.0);
        let ring = decode_rect(&r).unwrap();
        assert_same_cyclic(
            &ring.vertices,
            &[
                Point::new(-2.0, -1.0),
                Point::new(2.0, -1.0),
                Point::new(2.0, 1.0),
                Point::new(-2.0, 1.0),
            ],
        );
        assert!(ring.signed_area() > 0.0);
    }

    #[test]
    fn decode_quarter_turn() {
        let r = RectPoly::new(4.0, 2.0, Point::new(0.0, 0.0), PI / 2.0);
        let ring = decode_rect(&r).unwrap();
        assert_same_cyclic(
            &ring.vertices,
            &[
                Point::new(1.0, -2.0),
                Point::new(1.0, 2.0),
                Point::new(-1.0, 2.0),
                Point::new(-1.0, -2.0),
            ],
        );
    }

    #[test]
    fn decode_degenerate_is_empty() {
        assert!(decode_rect(&RectPoly::new(0.0, 3.0, Point::default(), 0.0)).is_none());
        assert!(decode_rect(&RectPoly::new(5.0, 0.0, Point::default(), 0.0)).is_none());
    }

    #[test]
    fn simple_areas() {
        let sq = Ring::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ]);
        assert_eq!(polygon_area(&sq), 1.0);
        let tri = Ring::new(vec![
            Point::new(0.0, 0.0),
            Point::new(4.0, 0.0),
            Point::new(0.0, 3.0),
        ]);
        assert_eq!(polygon_area(&tri), 6.0);
        assert_eq!(polygon_area(&tri.reversed()), 6.0);
    }

    #[test]
    fn angles_wrap_modulo_pi() {
        assert_abs_diff_eq!(canonical_angle(-0.1), PI - 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(canonical_angle(PI + 0.2), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(angle_deviation(0.05, PI - 0.05), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(angle_deviation(0.0, PI / 2.0), PI / 2.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn decoded_area_is_product(
            a in 0.5f64..200.0, b in 0.5f64..20.0,
            x in -500.0f64..500.0, y in -500.0f64..500.0, rho in -10.0f64..10.0,
        ) {
            let ring = decode_rect(&RectPoly::new(a, b, Point::new(x, y), rho)).unwrap();
            prop_assert!((ring.signed_area() - a * b).abs() <= 1e-9 * a * b.max(1.0) * 100.0);
        }
    }
}
