//! Polygon- and line-level detection metrics, and synthetic scenes with known
//! ground truth.

use crate::geometry::{
    angle_deviation, oriented_bbox, polygon_area, polygon_intersection_area, rect_rect_area, Point,
    RectPoly, Ring,
};
use crate::priors::{pair_features, PairFeatures};
use crate::raster_io::ProbabilityRaster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonEvalReport {
    /// Absent when there are no detections.
    pub precision: Option<f64>,
    /// Absent when there are no references.
    pub recall: Option<f64>,
    /// Mean over matched references of the IoU with their best detection.
    pub mean_iou_matched: Option<f64>,
    pub ref_matched: Vec<bool>,
    pub det_matched: Vec<bool>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// A reference counts as found if some detection covers more than half of
/// its area; a detection counts as correct if more than half of its area
/// lies on some reference.
pub fn match_polygons(refs: &[Ring], dets: &[Ring]) -> PolygonEvalReport {
    let ref_area: Vec<f64> = refs.iter().map(polygon_area).collect();
    let det_area: Vec<f64> = dets.iter().map(polygon_area).collect();
    let mut ref_matched = vec![false; refs.len()];
    let mut det_matched = vec![false; dets.len()];
    let mut best_iou = vec![0.0f64; refs.len()];
    for (i, r) in refs.iter().enumerate() {
        for (j, d) in dets.iter().enumerate() {
            let inter = polygon_intersection_area(r, d);
            if inter <= 0.0 {
                continue;
            }
            if inter / ref_area[i] > 0.5 {
                ref_matched[i] = true;
            }
            if inter / det_area[j] > 0.5 {
                det_matched[j] = true;
            }
            let iou = inter / (ref_area[i] + det_area[j] - inter);
            best_iou[i] = best_iou[i].max(iou);
        }
    }
    let matched: Vec<f64> = (0..refs.len()).filter(|&i| ref_matched[i]).map(|i| best_iou[i]).collect();
    PolygonEvalReport {
        precision: ratio(det_matched.iter().filter(|m| **m).count(), dets.len()),
        recall: ratio(matched.len(), refs.len()),
        mean_iou_matched: (!matched.is_empty()).then(|| matched.iter().sum::<f64>() / matched.len() as f64),
        ref_matched,
        det_matched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub p0: Point,
    pub p1: Point,
}

impl Segment {
    pub fn new(p0: Point, p1: Point) -> Self {
        Self { p0, p1 }
    }

    pub fn length(&self) -> f64 {
        self.p0.dist(self.p1)
    }

    pub fn angle(&self) -> f64 {
        let d = self.p1 - self.p0;
        d.y.atan2(d.x)
    }

    fn unit(&self) -> Point {
        let d = self.p1 - self.p0;
        let l = d.norm();
        if l > 0.0 {
            d * (1.0 / l)
        } else {
            Point::new(1.0, 0.0)
        }
    }

    fn point_at(&self, t: f64) -> Point {
        self.p0 + (self.p1 - self.p0) * t
    }
}

/// Midline of the reference's minimum-area bounding rectangle, along its
/// longer side.
pub fn ref_centerline(reference: &Ring) -> Segment {
    det_centerline(&oriented_bbox(reference))
}

/// Midline of a rectangle along its longer side; squares use the `rho` axis.
pub fn det_centerline(det: &RectPoly) -> Segment {
    let (dir, half) = if det.b > det.a {
        (det.normal(), 0.5 * det.b)
    } else {
        (det.axis(), 0.5 * det.a)
    };
    Segment::new(det.center - dir * half, det.center + dir * half)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineMatchParams {
    pub angle_max: f64,
    pub dist_max: f64,
    pub cover_min: f64,
    /// Coverage a reference needs to count in `recall_at_coverage`.
    pub recall_coverage: f64,
    pub samples: usize,
}

impl Default for LineMatchParams {
    fn default() -> Self {
        Self {
            angle_max: 5f64.to_radians(),
            dist_max: 0.35,
            cover_min: 0.6,
            recall_coverage: 0.65,
            samples: 10,
        }
    }
}

/// Length of `target ∩ projection(source onto target's line)`.
fn projected_overlap(source: &Segment, target: &Segment) -> f64 {
    let u = target.unit();
    let t0 = (source.p0 - target.p0).dot(u);
    let t1 = (source.p1 - target.p0).dot(u);
    let (lo, hi) = (t0.min(t1), t0.max(t1));
    (hi.min(target.length()) - lo.max(0.0)).max(0.0)
}

fn mean_line_distance(r: &Segment, d: &Segment, samples: usize) -> f64 {
    let u = d.unit();
    let n = samples.max(2);
    (0..n)
        .map(|k| (r.point_at(k as f64 / (n - 1) as f64) - d.p0).cross(u).abs())
        .sum::<f64>()
        / n as f64
}

/// Whether reference segment `r` and detected segment `d` match.
pub fn segments_match(r: &Segment, d: &Segment, p: &LineMatchParams) -> bool {
    angle_deviation(r.angle(), d.angle()) < p.angle_max
        && mean_line_distance(r, d, p.samples) < p.dist_max
        && projected_overlap(r, d) >= p.cover_min * d.length()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineEvalReport {
    pub precision: Option<f64>,
    pub precision_simple: Option<f64>,
    pub precision_complex: Option<f64>,
    pub recall: Option<f64>,
    pub recall_at_coverage: Option<f64>,
    /// (threshold, fraction of references matched with at least that
    /// coverage), thresholds 0, 0.05, ..., 1.
    pub coverage_curve: Vec<(f64, f64)>,
    pub ref_coverage: Vec<f64>,
    pub ref_matched: Vec<bool>,
    pub det_matched: Vec<bool>,
}

fn segment_distance(a: &Segment, b: &Segment) -> f64 {
    use crate::geometry::point_segment_distance as psd;
    psd(a.p0, b.p0, b.p1)
        .min(psd(a.p1, b.p0, b.p1))
        .min(psd(b.p0, a.p0, a.p1))
        .min(psd(b.p1, a.p0, a.p1))
}

/// Line-level matching. `ref_complex` labels each reference; a matched
/// detection takes the label of its closest matched reference, an unmatched
/// one the label of the closest reference overall.
pub fn match_lines(
    refs: &[Segment],
    ref_complex: &[bool],
    dets: &[Segment],
    params: &LineMatchParams,
) -> LineEvalReport {
    let mut ref_matched = vec![false; refs.len()];
    let mut det_matched = vec![false; dets.len()];
    let mut coverage = vec![0.0f64; refs.len()];
    let mut det_label: Vec<Option<bool>> = vec![None; dets.len()];
    for (j, d) in dets.iter().enumerate() {
        let mut closest_match: Option<(f64, usize)> = None;
        let mut closest: Option<(f64, usize)> = None;
        for (i, r) in refs.iter().enumerate() {
            let dist = segment_distance(r, d);
            if closest.is_none_or(|(c, _)| dist < c) {
                closest = Some((dist, i));
            }
            if segments_match(r, d, params) {
                ref_matched[i] = true;
                det_matched[j] = true;
                let len = r.length();
                if len > 0.0 {
                    coverage[i] = coverage[i].max(projected_overlap(d, r) / len);
                }
                if closest_match.is_none_or(|(c, _)| dist < c) {
                    closest_match = Some((dist, i));
                }
            }
        }
        det_label[j] = closest_match.or(closest).map(|(_, i)| ref_complex.get(i).copied().unwrap_or(false));
    }
    let matched_with = |t: f64| (0..refs.len()).filter(|&i| ref_matched[i] && coverage[i] >= t).count();
    let coverage_curve = (0..=20)
        .map(|k| {
            let t = k as f64 * 0.05;
            (t, ratio(matched_with(t), refs.len()).unwrap_or(0.0))
        })
        .collect();
    let precision_of = |complex: bool| {
        let idx: Vec<usize> = (0..dets.len()).filter(|&j| det_label[j] == Some(complex)).collect();
        ratio(idx.iter().filter(|&&j| det_matched[j]).count(), idx.len())
    };
    LineEvalReport {
        precision: ratio(det_matched.iter().filter(|m| **m).count(), dets.len()),
        precision_simple: precision_of(false),
        precision_complex: precision_of(true),
        recall: ratio(ref_matched.iter().filter(|m| **m).count(), refs.len()),
        recall_at_coverage: ratio(matched_with(params.recall_coverage), refs.len()),
        coverage_curve,
        ref_coverage: coverage,
        ref_matched,
        det_matched,
    }
}

/// `true` for references that overlap (with positive area) any other one.
pub fn classify_complexity(refs: &[Ring]) -> Vec<bool> {
    let mut complex = vec![false; refs.len()];
    for i in 0..refs.len() {
        for j in (i + 1)..refs.len() {
            if polygon_intersection_area(&refs[i], &refs[j]) > 1e-9 {
                complex[i] = true;
                complex[j] = true;
            }
        }
    }
    complex
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    Disjoint,
    CrossingPairs,
    Clusters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSceneSpec {
    pub width: u32,
    pub height: u32,
    pub gsd: f64,
    pub stems: usize,
    pub length_m: [f64; 2],
    pub width_m: [f64; 2],
    pub angle_deg: [f64; 2],
    pub overlap: OverlapMode,
    /// Minimum clearance between separate stems or groups, m.
    pub margin_m: f64,
    pub p_in: f64,
    pub p_out: f64,
    pub noise_sigma: f64,
    /// Chance that a stem receives one gap band.
    pub gap_probability: f64,
    pub gap_width_m: [f64; 2],
    pub seed: u64,
}

impl Default for SynthSceneSpec {
    fn default() -> Self {
        Self {
            width: 400,
            height: 400,
            gsd: 0.1,
            stems: 10,
            length_m: [3.0, 15.0],
            width_m: [0.3, 0.6],
            angle_deg: [0.0, 180.0],
            overlap: OverlapMode::Disjoint,
            margin_m: 1.0,
            p_in: 0.95,
            p_out: 0.02,
            noise_sigma: 0.05,
            gap_probability: 0.0,
            gap_width_m: [0.3, 0.6],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub raster: ProbabilityRaster,
    /// Ground-truth stems in world coordinates (m).
    pub truth: Vec<RectPoly>,
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

fn random_stem(rng: &mut impl Rng, spec: &SynthSceneSpec, center: Point, angle: f64) -> RectPoly {
    RectPoly::new(uniform(rng, spec.length_m), uniform(rng, spec.width_m), center, angle)
}

fn group_for(rng: &mut impl Rng, spec: &SynthSceneSpec, center: Point) -> Vec<RectPoly> {
    let angle = uniform(rng, spec.angle_deg).to_radians();
    match spec.overlap {
        OverlapMode::Disjoint => vec![random_stem(rng, spec, center, angle)],
        OverlapMode::CrossingPairs => {
            let s1 = random_stem(rng, spec, center, angle);
            let s2 = random_stem(rng, spec, center, angle + PI / 2.0);
            // Slide each stem along its own axis; the crossing point stays on both.
            let t1 = rng.random_range(-0.3..=0.3) * s1.a;
            let t2 = rng.random_range(-0.3..=0.3) * s2.a;
            vec![
                RectPoly { center: center + s1.axis() * t1, ..s1 },
                RectPoly { center: center + s2.axis() * t2, ..s2 },
            ]
        }
        OverlapMode::Clusters => (0..3)
            .map(|_| {
                let c = center + Point::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
                let angle = rng.random_range(0.0..PI);
                random_stem(rng, spec, c, angle)
            })
            .collect(),
    }
}

fn grown(s: &RectPoly, margin: f64) -> RectPoly {
    RectPoly { a: s.a + 2.0 * margin, b: s.b + 2.0 * margin, ..*s }
}

/// Raster and ground truth for a scene of rectangular stems. Stems are placed
/// by rejection sampling so separate stems (or groups, for the crossing and
/// cluster modes) keep `margin_m` clearance and stay inside the raster; fewer
/// than `stems` are returned if placement keeps failing.
pub fn generate_scene(spec: &SynthSceneSpec) -> SynthScene {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w_m = f64::from(spec.width) * spec.gsd;
    let h_m = f64::from(spec.height) * spec.gsd;
    let per_group = match spec.overlap {
        OverlapMode::Disjoint => 1,
        OverlapMode::CrossingPairs => 2,
        OverlapMode::Clusters => 3,
    };
    let groups = spec.stems.div_ceil(per_group);
    let mut truth: Vec<RectPoly> = Vec::new();
    for _ in 0..groups {
        let need = (spec.stems - truth.len()).min(per_group);
        for _attempt in 0..2000 {
            let c = Point::new(rng.random_range(0.0..w_m), rng.random_range(0.0..h_m));
            let mut group = group_for(&mut rng, spec, c);
            group.truncate(need);
            let inside = group.iter().all(|s| {
                s.corners().iter().all(|p| {
                    p.x >= spec.margin_m && p.y >= spec.margin_m && p.x <= w_m - spec.margin_m && p.y <= h_m - spec.margin_m
                })
            });
            let clear = inside
                && group
                    .iter()
                    .all(|s| truth.iter().all(|t| rect_rect_area(&grown(s, spec.margin_m), t) <= 0.0));
            if clear {
                truth.extend(group);
                break;
            }
        }
    }

    let gaps: Vec<Option<(f64, f64)>> = truth
        .iter()
        .map(|s| {
            (rng.random::<f64>() < spec.gap_probability).then(|| {
                let w = uniform(&mut rng, spec.gap_width_m);
                let t = rng.random_range(-0.25..=0.25) * s.a;
                (t - 0.5 * w, t + 0.5 * w)
            })
        })
        .collect();

    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("finite sigma"));
    let mut values = Vec::with_capacity(spec.width as usize * spec.height as usize);
    for row in 0..spec.height {
        for col in 0..spec.width {
            let p = Point::new((f64::from(col) + 0.5) * spec.gsd, (f64::from(row) + 0.5) * spec.gsd);
            let on_stem = truth.iter().zip(&gaps).any(|(s, gap)| {
                s.contains(p)
                    && gap.is_none_or(|(lo, hi)| {
                        let t = (p - s.center).dot(s.axis());
                        t < lo || t > hi
                    })
            });
            let mut v = if on_stem { spec.p_in } else { spec.p_out };
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            values.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    let raster = ProbabilityRaster::new(spec.width, spec.height, spec.gsd, (0.0, 0.0), values)
        .expect("generated raster is valid");
    SynthScene { raster, truth }
}

pub fn rect_ring(r: &RectPoly) -> Ring {
    Ring::new(r.corners().to_vec())
}

/// Labeled training data for the priors drawn from the scene distribution:
/// `(length, width)` samples in meters, and pair features where positives
/// are two pieces of one broken stem and negatives are unrelated nearby
/// stems.
pub fn synth_training_data(
    spec: &SynthSceneSpec,
    n_shapes: usize,
    n_pairs: usize,
    seed: u64,
) -> (Vec<(f64, f64)>, Vec<(PairFeatures, bool)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = (0..n_shapes)
        .map(|_| (uniform(&mut rng, spec.length_m), uniform(&mut rng, spec.width_m)))
        .collect();
    let mut pairs = Vec::with_capacity(n_pairs);
    for k in 0..n_pairs {
        let angle = rng.random_range(0.0..PI);
        let stem = random_stem(&mut rng, spec, Point::default(), angle);
        if k % 2 == 0 {
            let split = rng.random_range(0.3..0.7) * stem.a;
            let gap = rng.random_range(0.0..0.6);
            let a1 = split;
            let a2 = (stem.a - split - gap).max(0.5);
            let u = stem.axis();
            let n = stem.normal();
            let start = stem.center - u * (0.5 * stem.a);
            let s1 = RectPoly::new(a1, stem.b, start + u * (0.5 * a1), stem.rho);
            let c2 = start + u * (split + gap + 0.5 * a2) + n * rng.random_range(-0.08..0.08);
            let s2 = RectPoly::new(a2, stem.b, c2, stem.rho + rng.random_range(-3f64..3.0).to_radians());
            pairs.push((pair_features(&s1, &s2, 1.0), true));
        } else {
            let c = Point::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let angle = rng.random_range(0.0..PI);
            let other = random_stem(&mut rng, spec, c, angle);
            pairs.push((pair_features(&stem, &other, 1.0), false));
        }
    }
    (shapes, pairs)
}
