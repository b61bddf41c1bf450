use super::{signed_area, Point, RectPoly, Ring, CLIP_EPS};
use crate::contour::TargetRegion;

/// Clips `subject` (any simple ring) against one half-plane: the left side of
/// the directed line `a -> b`.
fn clip_halfplane(subject: &[Point], a: Point, b: Point, out: &mut Vec<Point>) {
    out.clear();
    let n = subject.len();
    if n == 0 {
        return;
    }
    let edge = b - a;
    let len = edge.norm();
    if len == 0.0 {
        out.extend_from_slice(subject);
        return;
    }
    let side = |p: Point| edge.cross(p - a) / len;
    let mut prev = subject[n - 1];
    let mut prev_d = side(prev);
    for &cur in subject {
        let cur_d = side(cur);
        let cur_in = cur_d >= -CLIP_EPS;
        let prev_in = prev_d >= -CLIP_EPS;
        if cur_in != prev_in {
            let t = prev_d / (prev_d - cur_d);
            out.push(prev + (cur - prev) * t);
        }
        if cur_in {
            out.push(cur);
        }
        prev = cur;
        prev_d = cur_d;
    }
}

/// Sutherland–Hodgman clip of an arbitrary simple ring against a convex
/// window. A non-convex subject may come out with zero-width bridge edges;
/// those carry no signed area, so the shoelace area of the result is exact.
pub fn clip_convex(subject: &[Point], window: &[Point]) -> Vec<Point> {
    if subject.len() < 3 || window.len() < 3 {
        return Vec::new();
    }
    let reversed;
    let window = if signed_area(window) < 0.0 {
        reversed = window.iter().rev().copied().collect::<Vec<_>>();
        &reversed[..]
    } else {
        window
    };
    let mut current = subject.to_vec();
    let mut scratch = Vec::with_capacity(subject.len() + 8);
    let m = window.len();
    for i in 0..m {
        clip_halfplane(&current, window[i], window[(i + 1) % m], &mut scratch);
        std::mem::swap(&mut current, &mut scratch);
        if current.len() < 3 {
            return Vec::new();
        }
    }
    current
}

/// Vertex list of the convex polygon `r1 ∩ r2` (empty when they do not meet).
pub fn convex_intersection(r1: &RectPoly, r2: &RectPoly) -> Vec<Point> {
    if r1.is_degenerate() || r2.is_degenerate() || !r1.bbox().intersects(&r2.bbox()) {
        return Vec::new();
    }
    clip_convex(&r1.corners(), &r2.corners())
}

pub fn rect_rect_area(r1: &RectPoly, r2: &RectPoly) -> f64 {
    let poly = convex_intersection(r1, r2);
    let area = signed_area(&poly).abs();
    area.min(r1.area()).min(r2.area())
}

fn region_window_area(region: &TargetRegion, window: &[Point]) -> f64 {
    let mut area = signed_area(&clip_convex(&region.outer.vertices, window)).abs();
    for hole in &region.holes {
        if area <= 0.0 {
            break;
        }
        area -= signed_area(&clip_convex(&hole.vertices, window)).abs();
    }
    area.max(0.0)
}

/// `|region ∩ rect|`, linear in the region's vertex count.
pub fn clip_area_rect(region: &TargetRegion, rect: &RectPoly) -> f64 {
    if rect.is_degenerate() || !region.bbox.intersects(&rect.bbox()) {
        return 0.0;
    }
    region_window_area(region, &rect.corners())
        .min(region.area)
        .min(rect.area())
}

/// `|region ∩ r1 ∩ r2|`: the convex `r1 ∩ r2` is used as the clip window.
pub fn triple_area(region: &TargetRegion, r1: &RectPoly, r2: &RectPoly) -> f64 {
    let window = convex_intersection(r1, r2);
    if window.len() < 3 {
        return 0.0;
    }
    let cap = signed_area(&window).abs();
    let bb = super::BBox::from_points(&window);
    if !region.bbox.intersects(&bb) {
        return 0.0;
    }
    region_window_area(region, &window).min(cap)
}

/// Ear-clipping triangulation of a simple polygon (either orientation).
fn triangulate(vertices: &[Point]) -> Vec<[Point; 3]> {
    let mut idx: Vec<usize> = (0..vertices.len()).collect();
    if signed_area(vertices) < 0.0 {
        idx.reverse();
    }
    let mut tris = Vec::new();
    let mut guard = 0;
    while idx.len() > 3 && guard < 10 * vertices.len() + 10 {
        guard += 1;
        let n = idx.len();
        let mut clipped = false;
        for i in 0..n {
            let a = vertices[idx[(i + n - 1) % n]];
            let b = vertices[idx[i]];
            let c = vertices[idx[(i + 1) % n]];
            if (b - a).cross(c - b) <= CLIP_EPS {
                continue;
            }
            let tri = [a, b, c];
            let blocked = idx.iter().enumerate().any(|(k, &j)| {
                if k == (i + n - 1) % n || k == i || k == (i + 1) % n {
                    return false;
                }
                let p = vertices[j];
                (b - a).cross(p - a) > -CLIP_EPS
                    && (c - b).cross(p - b) > -CLIP_EPS
                    && (a - c).cross(p - c) > -CLIP_EPS
            });
            if blocked {
                continue;
            }
            tris.push(tri);
            idx.remove(i);
            clipped = true;
            break;
        }
        if !clipped {
            // Only collinear leftovers remain; they enclose no area.
            break;
        }
    }
    if idx.len() == 3 {
        tris.push([vertices[idx[0]], vertices[idx[1]], vertices[idx[2]]]);
    }
    tris
}

/// Intersection area of two simple polygons. Exact when at least one of them
/// is convex; otherwise the second one is triangulated first.
pub fn polygon_intersection_area(p: &Ring, q: &Ring) -> f64 {
    if p.len() < 3 || q.len() < 3 || !p.bbox().intersects(&q.bbox()) {
        return 0.0;
    }
    if q.is_convex() {
        return signed_area(&clip_convex(&p.vertices, &q.vertices)).abs();
    }
    if p.is_convex() {
        return signed_area(&clip_convex(&q.vertices, &p.vertices)).abs();
    }
    triangulate(&q.vertices)
        .iter()
        .map(|tri| signed_area(&clip_convex(&p.vertices, tri)).abs())
        .sum()
}
