//! Greedy sample-consensus line detection and the initial model state it
//! seeds.

use crate::energy::{ModelState, ShapeBounds};
use crate::geometry::{canonical_angle, direction, Point, RectPoly};
use crate::raster_io::BinaryMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub p0: Point,
    pub p1: Point,
    pub inlier_count: usize,
}

impl LineSegment {
    pub fn length(&self) -> f64 {
        self.p0.dist(self.p1)
    }

    pub fn midpoint(&self) -> Point {
        (self.p0 + self.p1) * 0.5
    }

    pub fn angle(&self) -> f64 {
        let d = self.p1 - self.p0;
        canonical_angle(d.y.atan2(d.x))
    }
}

/// Oriented rectangle around a shape's initial position that its center may
/// not leave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBox {
    pub center0: Point,
    pub rho0: f64,
    pub l0: f64,
    pub w0: f64,
}

impl ConstraintBox {
    pub fn contains(&self, p: Point) -> bool {
        let d = p - self.center0;
        let u = direction(self.rho0);
        let n = Point::new(-u.y, u.x);
        d.dot(u).abs() <= 0.5 * self.l0 + 1e-9 && d.dot(n).abs() <= 0.5 * self.w0 + 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacParams {
    /// Inlier distance threshold, pixels.
    pub inlier_dist: f64,
    /// Minimum extent of the inlier projections, pixels.
    pub min_length: f64,
    pub min_inliers: usize,
    /// Two-point hypotheses drawn per greedy round.
    pub hypotheses: usize,
}

impl Default for SacParams {
    fn default() -> Self {
        Self {
            inlier_dist: 7.0,
            min_length: 20.0,
            min_inliers: 30,
            hypotheses: 500,
        }
    }
}

struct Hypothesis {
    inliers: Vec<usize>,
    origin: Point,
    dir: Point,
}

fn extent(points: &[Point], idx: &[usize], origin: Point, dir: Point) -> (f64, f64) {
    idx.iter()
        .map(|&k| (points[k] - origin).dot(dir))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)))
}

/// Principal axis of the inlier pixels.
fn principal_axis(points: &[Point], idx: &[usize]) -> (Point, Point) {
    let n = idx.len() as f64;
    let c = idx.iter().fold(Point::default(), |acc, &k| acc + points[k]) * (1.0 / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &k in idx {
        let d = points[k] - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    (c, Point::new(theta.cos(), theta.sin()))
}

/// Greedy iterative RANSAC over the mask's foreground pixel centers.
///
/// Each round scores `hypotheses` random two-point lines on the remaining
/// pixels; a pixel is an inlier when its distance to the line is at most
/// `inlier_dist`, and a line is valid with at least `min_inliers` inliers
/// spanning at least `min_length`. The best valid line is accepted, its
/// inliers removed, and rounds continue until none is valid. The accepted
/// segment is the inlier projection interval on the least-squares line
/// through the inliers (the sampled line is kept if the refit extent would
/// drop below `min_length`).
///
/// Segments are returned sorted by inlier count (stable, so acceptance order
/// breaks ties).
pub fn detect_lines(mask: &BinaryMask, params: &SacParams, seed: u64) -> Vec<LineSegment> {
    let points = mask.foreground_centers();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut segments = Vec::new();
    let min_inliers = params.min_inliers.max(2);

    while remaining.len() >= min_inliers {
        let mut best: Option<Hypothesis> = None;
        for _ in 0..params.hypotheses {
            let i = remaining[rng.random_range(0..remaining.len())];
            let j = remaining[rng.random_range(0..remaining.len())];
            let d = points[j] - points[i];
            let len = d.norm();
            if len == 0.0 {
                continue;
            }
            let dir = d * (1.0 / len);
            let origin = points[i];
            let count = remaining
                .iter()
                .filter(|&&k| (points[k] - origin).cross(dir).abs() <= params.inlier_dist)
                .count();
            if count < min_inliers || best.as_ref().is_some_and(|b| count <= b.inliers.len()) {
                continue;
            }
            let inliers: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&k| (points[k] - origin).cross(dir).abs() <= params.inlier_dist)
                .collect();
            let (lo, hi) = extent(&points, &inliers, origin, dir);
            if hi - lo < params.min_length {
                continue;
            }
            best = Some(Hypothesis {
                inliers,
                origin,
                dir,
            });
        }
        let Some(hyp) = best else { break };

        let (c, axis) = principal_axis(&points, &hyp.inliers);
        let (lo, hi) = extent(&points, &hyp.inliers, c, axis);
        let (origin, dir, lo, hi) = if hi - lo >= params.min_length {
            (c, axis, lo, hi)
        } else {
            let (lo, hi) = extent(&points, &hyp.inliers, hyp.origin, hyp.dir);
            (hyp.origin, hyp.dir, lo, hi)
        };
        segments.push(LineSegment {
            p0: origin + dir * lo,
            p1: origin + dir * hi,
            inlier_count: hyp.inliers.len(),
        });
        let mut taken = vec![false; points.len()];
        for &k in &hyp.inliers {
            taken[k] = true;
        }
        remaining.retain(|&k| !taken[k]);
    }
    segments.sort_by(|a, b| b.inlier_count.cmp(&a.inlier_count));
    segments
}

/// One shape and one center-constraint box per segment.
pub fn init_shapes(
    segments: &[LineSegment],
    default_width: u32,
    constraint_width: f64,
    bounds: ShapeBounds,
) -> ModelState {
    let mut shapes = Vec::with_capacity(segments.len());
    let mut boxes = Vec::with_capacity(segments.len());
    for seg in segments {
        let len = seg.length();
        let a = len.round().clamp(f64::from(bounds.a_lo), f64::from(bounds.a_hi));
        let b = f64::from(default_width.clamp(bounds.b_lo, bounds.b_hi));
        let center = seg.midpoint();
        let rho = seg.angle();
        shapes.push(RectPoly::new(a, b, center, rho));
        boxes.push(ConstraintBox {
            center0: center,
            rho0: rho,
            l0: len.max(f64::MIN_POSITIVE),
            w0: constraint_width,
        });
    }
    ModelState {
        shapes,
        boxes,
        bounds,
    }
}
