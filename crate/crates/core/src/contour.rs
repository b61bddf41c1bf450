//! Level-set contours of the probability raster and the target regions
//! built from them.

use crate::geometry::{point_segment_distance, BBox, Point, Ring};
use crate::raster_io::ProbabilityRaster;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ContourError {
    #[error("malformed contour set: hole ring {index} has no enclosing outer ring")]
    OrphanHole { index: usize },
}

/// A connected high-probability polygon: one outer ring plus holes.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRegion {
    pub outer: Ring,
    pub holes: Vec<Ring>,
    /// Outer area minus hole areas, in pixels².
    pub area: f64,
    pub bbox: BBox,
}

impl TargetRegion {
    /// Normalizes orientation (outer positive, holes negative) and computes
    /// area and bounds.
    pub fn new(outer: Ring, holes: Vec<Ring>) -> Self {
        let outer = if outer.signed_area() < 0.0 {
            outer.reversed()
        } else {
            outer
        };
        let holes: Vec<Ring> = holes
            .into_iter()
            .map(|h| if h.signed_area() > 0.0 { h.reversed() } else { h })
            .collect();
        let area = outer.signed_area() - holes.iter().map(|h| h.signed_area().abs()).sum::<f64>();
        let bbox = outer.bbox();
        Self {
            outer,
            holes,
            area,
            bbox,
        }
    }

    /// Point membership (inside the outer ring and outside every hole).
    pub fn contains(&self, p: Point) -> bool {
        self.bbox.contains(p) && self.outer.contains(p) && !self.holes.iter().any(|h| h.contains(p))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetRegionSet {
    pub regions: Vec<TargetRegion>,
}

impl TargetRegionSet {
    pub fn total_area(&self) -> f64 {
        self.regions.iter().map(|r| r.area).sum()
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

/// Identifies a grid edge between two adjacent samples of the padded grid:
/// `(vertical, i, j)`; horizontal edges join `(i,j)-(i+1,j)`, vertical ones
/// `(i,j)-(i,j+1)`.
type EdgeKey = (bool, u32, u32);

/// Marching squares over pixel centers. The grid is padded with a zero
/// border so every ring closes. Rings keep the foreground on their left:
/// outer boundaries come out with positive signed area, holes negative.
pub fn extract_level_contours(raster: &ProbabilityRaster, q: f64) -> Vec<Ring> {
    let w = raster.width as i64;
    let h = raster.height as i64;
    // Padded sample (i, j) is pixel (i-1, j-1); its center is (i-0.5, j-0.5).
    let sample = |i: i64, j: i64| -> f64 {
        if i < 1 || j < 1 || i > w || j > h {
            0.0
        } else {
            f64::from(raster.get((i - 1) as u32, (j - 1) as u32))
        }
    };
    let pos = |i: i64, j: i64| Point::new(i as f64 - 0.5, j as f64 - 0.5);

    let mut crossing: HashMap<EdgeKey, Point> = HashMap::new();
    let mut cross_point = |key: EdgeKey| -> Point {
        *crossing.entry(key).or_insert_with(|| {
            let (vertical, i, j) = key;
            let (i0, j0) = (i64::from(i), i64::from(j));
            let (i1, j1) = if vertical { (i0, j0 + 1) } else { (i0 + 1, j0) };
            let (v0, v1) = (sample(i0, j0), sample(i1, j1));
            let t = if v1 == v0 { 0.5 } else { ((q - v0) / (v1 - v0)).clamp(0.0, 1.0) };
            let (p0, p1) = (pos(i0, j0), pos(i1, j1));
            p0 + (p1 - p0) * t
        })
    };

    // Segment table: start edge -> end edge.
    let mut next: HashMap<EdgeKey, EdgeKey> = HashMap::new();
    let mut starts: Vec<EdgeKey> = Vec::new();
    for j in 0..=h {
        for i in 0..=w {
            // Corners walked in positive order: c0=(i,j) c1=(i+1,j) c2=(i+1,j+1) c3=(i,j+1).
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let vals = corners.map(|(a, b)| sample(a, b));
            let fg = vals.map(|v| v >= q);
            if fg.iter().all(|&f| f) || fg.iter().all(|&f| !f) {
                continue;
            }
            let (iu, ju) = (i as u32, j as u32);
            let edges: [EdgeKey; 4] = [
                (false, iu, ju),
                (true, iu + 1, ju),
                (false, iu, ju + 1),
                (true, iu, ju),
            ];
            // Walking c0->c1->c2->c3->c0, record crossings as entering or
            // leaving the foreground.
            let mut ins = Vec::with_capacity(2);
            let mut outs = Vec::with_capacity(2);
            for k in 0..4 {
                let (a, b) = (fg[k], fg[(k + 1) % 4]);
                if a != b {
                    if b {
                        ins.push(k);
                    } else {
                        outs.push(k);
                    }
                }
            }
            let mut link = |from: usize, to: usize| {
                next.insert(edges[from], edges[to]);
                starts.push(edges[from]);
            };
            if ins.len() == 1 {
                link(outs[0], ins[0]);
            } else {
                // Saddle: the cell-center average decides connectivity.
                let center = vals.iter().sum::<f64>() / 4.0;
                // Crossings in walk order alternate in/out. Rotate so that
                // the sequence reads in0, out0, in1, out1.
                let mut seq: Vec<(usize, bool)> = ins
                    .iter()
                    .map(|&k| (k, true))
                    .chain(outs.iter().map(|&k| (k, false)))
                    .collect();
                seq.sort_by_key(|&(k, _)| k);
                let first_in = seq.iter().position(|&(_, is_in)| is_in).unwrap();
                seq.rotate_left(first_in);
                let (in0, out0, in1, out1) = (seq[0].0, seq[1].0, seq[2].0, seq[3].0);
                if center >= q {
                    link(out0, in1);
                    link(out1, in0);
                } else {
                    link(out0, in0);
                    link(out1, in1);
                }
            }
        }
    }

    let mut rings = Vec::new();
    let mut visited: std::collections::HashSet<EdgeKey> = std::collections::HashSet::new();
    for start in starts {
        if visited.contains(&start) {
            continue;
        }
        let mut verts = Vec::new();
        let mut cur = start;
        loop {
            visited.insert(cur);
            verts.push(cross_point(cur));
            cur = next[&cur];
            if cur == start {
                break;
            }
        }
        let ring = Ring::new(dedup_ring(verts));
        if ring.len() >= 3 && ring.signed_area() != 0.0 {
            rings.push(ring);
        }
    }
    rings
}

fn dedup_ring(mut verts: Vec<Point>) -> Vec<Point> {
    verts.dedup_by(|a, b| a.dist(*b) < 1e-12);
    while verts.len() > 1 && verts[0].dist(verts[verts.len() - 1]) < 1e-12 {
        verts.pop();
    }
    verts
}

/// Douglas–Peucker on an open polyline; marks retained vertices.
fn dp_mark(points: &[Point], lo: usize, hi: usize, eps: f64, keep: &mut [bool]) {
    let mut stack = vec![(lo, hi)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let (a, b) = (points[lo], points[hi]);
        let mut best = (0.0, lo);
        for (k, &p) in points.iter().enumerate().take(hi).skip(lo + 1) {
            let d = point_segment_distance(p, a, b);
            if d > best.0 {
                best = (d, k);
            }
        }
        if best.0 > eps {
            keep[best.1] = true;
            stack.push((lo, best.1));
            stack.push((best.1, hi));
        }
    }
}

/// Douglas–Peucker simplification of a closed ring. The ring is split at its
/// lexicographically smallest vertex (always a strict hull corner) and the
/// vertex farthest from it. Returns `None` when fewer than three vertices or
/// no area survive.
pub fn simplify_polygon(ring: &Ring, eps_d: f64) -> Option<Ring> {
    let n = ring.len();
    if n < 3 {
        return None;
    }
    if eps_d <= 0.0 {
        return Some(ring.clone());
    }
    let v = &ring.vertices;
    let first = (0..n)
        .min_by(|&i, &j| v[i].x.total_cmp(&v[j].x).then(v[i].y.total_cmp(&v[j].y)))
        .unwrap();
    let rotated: Vec<Point> = (0..n).map(|k| v[(first + k) % n]).collect();
    let mut far = 0;
    let mut far_d = -1.0;
    for (k, p) in rotated.iter().enumerate() {
        let d = p.dist(rotated[0]);
        if d > far_d {
            far_d = d;
            far = k;
        }
    }
    let mut closed = rotated.clone();
    closed.push(rotated[0]);
    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[far] = true;
    keep[n] = true;
    dp_mark(&closed, 0, far, eps_d, &mut keep);
    dp_mark(&closed, far, n, eps_d, &mut keep);
    let out: Vec<Point> = (0..n).filter(|&k| keep[k]).map(|k| rotated[k]).collect();
    let out = Ring::new(out);
    if out.len() < 3 || out.signed_area().abs() <= 1e-12 {
        None
    } else {
        Some(out)
    }
}

/// Groups positive rings with the negative rings they enclose. Each hole
/// goes to the smallest outer ring containing it. Regions come back sorted
/// by descending area.
pub fn build_regions(rings: Vec<Ring>) -> Result<TargetRegionSet, ContourError> {
    let mut outers: Vec<(Ring, Vec<Ring>)> = Vec::new();
    let mut holes: Vec<(usize, Ring)> = Vec::new();
    for (idx, ring) in rings.into_iter().enumerate() {
        if ring.signed_area() > 0.0 {
            outers.push((ring, Vec::new()));
        } else {
            holes.push((idx, ring));
        }
    }
    for (idx, hole) in holes {
        let hole_area = hole.signed_area().abs();
        let hole_bb = hole.bbox();
        let probe = hole_probe(&hole);
        let owner = outers
            .iter()
            .enumerate()
            .filter(|(_, (o, _))| {
                o.signed_area() > hole_area && o.bbox().intersects(&hole_bb) && o.contains(probe)
            })
            .min_by(|(_, (a, _)), (_, (b, _))| a.signed_area().total_cmp(&b.signed_area()))
            .map(|(i, _)| i);
        match owner {
            Some(i) => outers[i].1.push(hole),
            None => return Err(ContourError::OrphanHole { index: idx }),
        }
    }
    let mut regions: Vec<TargetRegion> = outers
        .into_iter()
        .map(|(o, hs)| TargetRegion::new(o, hs))
        .filter(|r| r.area > 0.0)
        .collect();
    regions.sort_by(|a, b| {
        b.area
            .total_cmp(&a.area)
            .then(a.bbox.min.y.total_cmp(&b.bbox.min.y))
            .then(a.bbox.min.x.total_cmp(&b.bbox.min.x))
    });
    Ok(TargetRegionSet { regions })
}

/// A point just inside the hole ring (hole interior lies to its right).
fn hole_probe(hole: &Ring) -> Point {
    let (a, b) = (hole.vertices[0], hole.vertices[1]);
    let mid = (a + b) * 0.5;
    let d = b - a;
    let len = d.norm().max(1e-12);
    // Right-hand normal of a negatively oriented ring points into its interior.
    mid + Point::new(d.y, -d.x) * (1e-6 / len)
}

/// Full contour stage: extract, simplify, assemble.
pub fn extract_regions(
    raster: &ProbabilityRaster,
    q: f64,
    eps_d: f64,
) -> Result<TargetRegionSet, ContourError> {
    let rings = extract_level_contours(raster, q)
        .iter()
        .filter_map(|r| simplify_polygon(r, eps_d))
        .collect();
    build_regions(rings)
}
