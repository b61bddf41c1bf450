use super::{canonical_angle, Point, RectPoly, Ring};

/// Andrew's monotone chain; returns the hull in counter-clockwise order
/// without collinear points.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a == b);
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: Point, a: Point, b: Point| (a - o).cross(b - o);
    let mut lower: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && turn(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && turn(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Minimum-area enclosing rectangle via rotating calipers over the hull.
/// The result has `a >= b`, with `rho` giving the direction of the long side.
pub fn oriented_bbox(ring: &Ring) -> RectPoly {
    let hull = convex_hull(&ring.vertices);
    match hull.len() {
        0 => return RectPoly::new(0.0, 0.0, Point::default(), 0.0),
        1 => return RectPoly::new(0.0, 0.0, hull[0], 0.0),
        _ => {}
    }
    let n = hull.len();
    let mut best: Option<(f64, RectPoly)> = None;
    for i in 0..n {
        let e = hull[(i + 1) % n] - hull[i];
        let len = e.norm();
        if len == 0.0 {
            continue;
        }
        let u = e * (1.0 / len);
        let v = Point::new(-u.y, u.x);
        let (mut umin, mut umax, mut vmin, mut vmax) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &p in &hull {
            let du = p.dot(u);
            let dv = p.dot(v);
            umin = umin.min(du);
            umax = umax.max(du);
            vmin = vmin.min(dv);
            vmax = vmax.max(dv);
        }
        let (lu, lv) = (umax - umin, vmax - vmin);
        let area = lu * lv;
        if best.as_ref().is_none_or(|(a, _)| area < *a - 1e-12) {
            let center = u * (0.5 * (umin + umax)) + v * (0.5 * (vmin + vmax));
            let rect = if lu >= lv {
                RectPoly::new(lu, lv, center, u.y.atan2(u.x))
            } else {
                RectPoly::new(lv, lu, center, v.y.atan2(v.x))
            };
            best = Some((area, rect));
        }
    }
    let mut rect = best.expect("hull with two or more points has an edge").1;
    rect.rho = canonical_angle(rect.rho);
    rect
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angle_deviation, decode_rect};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn axis_aligned_rectangle() {
        let ring = decode_rect(&RectPoly::new(4.0, 2.0, Point::new(3.0, -1.0), 0.0)).unwrap();
        let obb = oriented_bbox(&ring);
        assert_abs_diff_eq!(obb.a, 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(obb.b, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(obb.center.x, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(obb.center.y, -1.0, epsilon = 1e-9);
        assert!(angle_deviation(obb.rho, 0.0) < 1e-9);
    }

    #[test]
    fn rotated_rectangle() {
        let rho = 30f64.to_radians();
        let ring = decode_rect(&RectPoly::new(4.0, 2.0, Point::new(0.0, 0.0), rho)).unwrap();
        let obb = oriented_bbox(&ring);
        assert_abs_diff_eq!(obb.a, 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(obb.b, 2.0, epsilon = 1e-9);
        assert!(angle_deviation(obb.rho, rho) < 1e-9);
    }

    fn arb_points() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..40)
    }

    proptest! {
        #[test]
        fn encloses_hull_and_beats_axis_box(pts in arb_points()) {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| Point::new(x, y)).collect();
            let hull = convex_hull(&pts);
            prop_assume!(hull.len() >= 3);
            let ring = Ring::new(hull.clone());
            let obb = oriented_bbox(&ring);
            let grown = RectPoly { a: obb.a + 1e-6, b: obb.b + 1e-6, ..obb };
            for p in &pts {
                prop_assert!(grown.contains(*p));
            }
            prop_assert!(obb.area() <= ring.bbox().area() + 1e-9);
        }
    }
}
