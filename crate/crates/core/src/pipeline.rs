//! End-to-end segmentation: raster, target regions, per-region initialization
//! and annealing, metric detections, GeoJSON output.

use crate::anneal::{anneal, AnnealConfig, TraceRow};
use crate::contour::{extract_regions, ContourError, TargetRegion};
use crate::energy::{EnergyBreakdown, EnergyConfig, EnergyContext, ShapeBounds};
use crate::geometry::{Point, RectPoly, Ring};
use crate::priors::Priors;
use crate::raster_io::{BinaryMask, ProbabilityRaster, RasterError};
use crate::sac_init::{detect_lines, init_shapes, SacParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Contour(#[from] ContourError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed geojson: {0}")]
    GeoJson(String),
}

/// Line detection settings in meters, converted to pixels per raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub inlier_dist_m: f64,
    pub min_length_m: f64,
    pub min_inliers: usize,
    pub hypotheses: usize,
    pub default_width_m: f64,
    pub constraint_width_m: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            inlier_dist_m: 0.7,
            min_length_m: 2.0,
            min_inliers: 30,
            hypotheses: 500,
            default_width_m: 0.4,
            constraint_width_m: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub q: f64,
    pub eps_d: f64,
    pub sac: SacConfig,
    pub energy: EnergyConfig,
    pub anneal: AnnealConfig,
    pub min_stem_length_m: f64,
    pub max_stem_length_m: f64,
    pub max_stem_width_m: f64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            q: 0.5,
            eps_d: 1.0,
            sac: SacConfig::default(),
            energy: EnergyConfig::default(),
            anneal: AnnealConfig::default(),
            min_stem_length_m: 2.0,
            max_stem_length_m: 30.0,
            max_stem_width_m: 0.7,
            workers: 0,
            seed: 0,
        }
    }
}

// Keeps exact multiples (2 m at 0.1 m/px) from rounding the wrong way.
const ROUND_TOL: f64 = 1e-9;

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn shape_bounds(&self, gsd: f64) -> ShapeBounds {
        ShapeBounds {
            a_lo: (self.min_stem_length_m / gsd - ROUND_TOL).ceil().max(0.0) as u32,
            a_hi: (self.max_stem_length_m / gsd + ROUND_TOL).floor().max(0.0) as u32,
            b_lo: 0,
            b_hi: (self.max_stem_width_m / gsd - ROUND_TOL).ceil().max(0.0) as u32,
        }
    }

    pub fn sac_params(&self, gsd: f64) -> SacParams {
        SacParams {
            inlier_dist: (self.sac.inlier_dist_m / gsd - ROUND_TOL).ceil(),
            min_length: self.sac.min_length_m / gsd,
            min_inliers: self.sac.min_inliers,
            hypotheses: self.sac.hypotheses,
        }
    }

    pub fn validate(&self, gsd: f64) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad("q must lie in (0, 1)");
        }
        if !(self.eps_d >= 0.0) {
            return bad("eps_d must be >= 0");
        }
        if !(self.min_stem_length_m > 0.0 && self.min_stem_length_m <= self.max_stem_length_m) {
            return bad("stem length bounds must satisfy 0 < min <= max");
        }
        if !(self.max_stem_width_m > 0.0) {
            return bad("max_stem_width_m must be > 0");
        }
        let b = self.shape_bounds(gsd);
        if b.a_lo > b.a_hi || b.b_hi == 0 {
            return bad("no integer shape size fits the stem bounds at this resolution");
        }
        if !(self.sac.inlier_dist_m > 0.0 && self.sac.min_length_m > 0.0 && self.sac.min_inliers >= 2) {
            return bad("SAC thresholds must be positive with min_inliers >= 2");
        }
        if !(self.sac.default_width_m > 0.0 && self.sac.constraint_width_m > 0.0) {
            return bad("default and constraint widths must be > 0");
        }
        self.energy.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.anneal.validate().map_err(PipelineError::Config)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Corners in world coordinates (m), counter-clockwise in pixel axes.
    pub polygon: Vec<[f64; 2]>,
    pub length_m: f64,
    pub width_m: f64,
    pub angle_deg: f64,
    pub region_id: usize,
    pub energy: EnergyBreakdown,
}

impl Detection {
    fn from_shape(s: &RectPoly, raster: &ProbabilityRaster, region_id: usize, energy: EnergyBreakdown) -> Self {
        let polygon = s
            .corners()
            .iter()
            .map(|p| {
                let (x, y) = raster.pixel_to_world(p.x, p.y);
                [x, y]
            })
            .collect();
        Self {
            polygon,
            length_m: s.a * raster.gsd,
            width_m: s.b * raster.gsd,
            angle_deg: s.rho.to_degrees(),
            region_id,
            energy,
        }
    }

    pub fn ring(&self) -> Ring {
        Ring::new(self.polygon.iter().map(|p| Point::new(p[0], p[1])).collect())
    }

    /// The detection as a rectangle in world coordinates.
    pub fn rect(&self) -> RectPoly {
        rect_from_corners(&self.ring().vertices)
    }
}

/// Rectangle through four corners given in boundary order; the first edge
/// is the length axis.
pub fn rect_from_corners(v: &[Point]) -> RectPoly {
    let center = v.iter().fold(Point::default(), |acc, p| acc + *p) * (1.0 / v.len() as f64);
    let e0 = v[1] - v[0];
    let e1 = v[2] - v[1];
    RectPoly::new(e0.norm(), e1.norm(), center, e0.y.atan2(e0.x))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineOutput {
    pub detections: Vec<Detection>,
    /// Annealing trace rows tagged with their region, when recording.
    pub trace: Vec<(usize, TraceRow)>,
    pub regions: usize,
}

/// Seed for one region, independent of processing order.
pub fn region_seed(master: u64, region_id: usize) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(master ^ splitmix(region_id as u64))
}

/// Foreground pixels of `raster` whose centers lie in `region`, as a mask
/// over the region's pixel bounding box, plus the box's (col, row) offset.
pub fn region_mask(raster: &ProbabilityRaster, region: &TargetRegion, q: f64) -> (BinaryMask, (u32, u32)) {
    let bb = region.bbox;
    let c0 = bb.min.x.floor().max(0.0) as u32;
    let r0 = bb.min.y.floor().max(0.0) as u32;
    let c1 = (bb.max.x.ceil().max(0.0) as u32).min(raster.width);
    let r1 = (bb.max.y.ceil().max(0.0) as u32).min(raster.height);
    let mut mask = BinaryMask::new(c1.saturating_sub(c0).max(1), r1.saturating_sub(r0).max(1));
    for r in r0..r1 {
        for c in c0..c1 {
            let p = Point::new(c as f64 + 0.5, r as f64 + 0.5);
            if f64::from(raster.get(c, r)) >= q && region.contains(p) {
                mask.set(c - c0, r - r0, true);
            }
        }
    }
    (mask, (c0, r0))
}

pub fn passes_length_filter(length_m: f64, config: &PipelineConfig) -> bool {
    length_m >= config.min_stem_length_m - ROUND_TOL && length_m <= config.max_stem_length_m + ROUND_TOL
}

struct RegionResult {
    detections: Vec<Detection>,
    trace: Vec<TraceRow>,
}

fn process_region(
    raster: &ProbabilityRaster,
    region: &TargetRegion,
    region_id: usize,
    priors: &Priors,
    config: &PipelineConfig,
) -> Result<RegionResult, String> {
    let gsd = raster.gsd;
    let seed = region_seed(config.seed, region_id);
    let (mask, (c0, r0)) = region_mask(raster, region, config.q);
    let offset = Point::new(f64::from(c0), f64::from(r0));
    let mut segments = detect_lines(&mask, &config.sac_params(gsd), seed);
    for s in &mut segments {
        s.p0 = s.p0 + offset;
        s.p1 = s.p1 + offset;
    }
    if segments.is_empty() {
        return Ok(RegionResult {
            detections: Vec::new(),
            trace: Vec::new(),
        });
    }
    let bounds = config.shape_bounds(gsd);
    let default_width = ((config.sac.default_width_m / gsd).round() as u32).clamp(1, bounds.b_hi);
    let w0 = (config.sac.constraint_width_m / gsd).round().max(1.0);
    let init = init_shapes(&segments, default_width, w0, bounds);
    let ctx = EnergyContext {
        region,
        priors,
        config: &config.energy,
        gsd,
    };
    let anneal_config = AnnealConfig {
        seed,
        ..config.anneal
    };
    let result = anneal(&ctx, &init, &anneal_config).map_err(|e| e.to_string())?;
    let detections = result
        .state
        .shapes
        .iter()
        .filter(|s| s.b > 0.0)
        .map(|s| Detection::from_shape(s, raster, region_id, result.breakdown))
        .filter(|d| passes_length_filter(d.length_m, config))
        .collect();
    Ok(RegionResult {
        detections,
        trace: result.trace,
    })
}

/// Segments every target region of `raster` independently. Detections are
/// ordered by region, then by shape index.
pub fn run(
    raster: &ProbabilityRaster,
    priors: &Priors,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    raster.validate()?;
    config.validate(raster.gsd)?;
    let regions = extract_regions(raster, config.q, config.eps_d)?;
    if regions.is_empty() {
        log::warn!("no target regions at q = {}", config.q);
        return Ok(PipelineOutput::default());
    }
    let mut config = *config;
    config.anneal.audit_every = config.anneal.audit_every.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let results: Vec<Option<RegionResult>> = pool.install(|| {
        regions
            .regions
            .par_iter()
            .enumerate()
            .map(|(id, region)| match process_region(raster, region, id, priors, &config) {
                Ok(r) => Some(r),
                Err(e) => {
                    log::warn!("region {id} skipped: {e}");
                    None
                }
            })
            .collect()
    });
    let mut out = PipelineOutput {
        regions: regions.len(),
        ..PipelineOutput::default()
    };
    for (id, r) in results.into_iter().enumerate() {
        if let Some(r) = r {
            out.detections.extend(r.detections);
            out.trace.extend(r.trace.into_iter().map(|t| (id, t)));
        }
    }
    Ok(out)
}

fn closed_ring(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut ring = points.to_vec();
    if let Some(first) = points.first() {
        ring.push(*first);
    }
    ring
}

fn feature(ring: &[[f64; 2]], properties: Value) -> Value {
    json!({
        "type": "Feature",
        "geometry": { "type": "Polygon", "coordinates": [closed_ring(ring)] },
        "properties": properties,
    })
}

fn write_collection(features: Vec<Value>, path: &Path) -> Result<(), PipelineError> {
    let doc = json!({ "type": "FeatureCollection", "features": features });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn detections_to_geojson(detections: &[Detection]) -> Vec<Value> {
    detections
        .iter()
        .enumerate()
        .map(|(id, d)| {
            feature(
                &d.polygon,
                json!({
                    "id": id,
                    "length_m": d.length_m,
                    "width_m": d.width_m,
                    "angle_deg": d.angle_deg,
                    "region_id": d.region_id,
                    "e_data": d.energy.e_data,
                    "e_shape": d.energy.e_shape,
                    "e_overlap": d.energy.e_overlap,
                    "e_collin": d.energy.e_collin,
                    "total": d.energy.total,
                }),
            )
        })
        .collect()
}

pub fn export_geojson(detections: &[Detection], path: impl AsRef<Path>) -> Result<(), PipelineError> {
    write_collection(detections_to_geojson(detections), path.as_ref())
}

/// Writes plain polygons (for example reference rectangles) with an `id`
/// property.
pub fn export_polygons(polygons: &[Ring], path: impl AsRef<Path>) -> Result<(), PipelineError> {
    let features = polygons
        .iter()
        .enumerate()
        .map(|(id, r)| {
            let pts: Vec<[f64; 2]> = r.vertices.iter().map(|p| [p.x, p.y]).collect();
            feature(&pts, json!({ "id": id }))
        })
        .collect();
    write_collection(features, path.as_ref())
}

/// Outer rings of every Polygon feature, closing vertex dropped.
pub fn read_geojson_polygons(path: impl AsRef<Path>) -> Result<Vec<Ring>, PipelineError> {
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let bad = |m: &str| PipelineError::GeoJson(m.to_string());
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing features array"))?;
    let mut rings = Vec::with_capacity(features.len());
    for (k, f) in features.iter().enumerate() {
        let geom = f.get("geometry").ok_or_else(|| bad("feature without geometry"))?;
        if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
            return Err(PipelineError::GeoJson(format!("feature {k} is not a Polygon")));
        }
        let outer = geom
            .get("coordinates")
            .and_then(|c| c.get(0))
            .and_then(Value::as_array)
            .ok_or_else(|| PipelineError::GeoJson(format!("feature {k} has no outer ring")))?;
        let mut pts = Vec::with_capacity(outer.len());
        for v in outer {
            let xy = v
                .as_array()
                .filter(|a| a.len() >= 2)
                .and_then(|a| Some(Point::new(a[0].as_f64()?, a[1].as_f64()?)))
                .ok_or_else(|| PipelineError::GeoJson(format!("feature {k} has a bad position")))?;
            pts.push(xy);
        }
        if pts.len() > 1 && pts.first() == pts.last() {
            pts.pop();
        }
        if pts.len() < 3 {
            return Err(PipelineError::GeoJson(format!("feature {k} has fewer than 3 vertices")));
        }
        rings.push(Ring::new(pts));
    }
    Ok(rings)
}

pub fn write_trace_csv(rows: &[(usize, TraceRow)], path: impl AsRef<Path>) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["region_id", "restart", "iteration", "temperature", "energy", "best", "accepted"])?;
    for (region, t) in rows {
        w.write_record([
            region.to_string(),
            t.restart.to_string(),
            t.iteration.to_string(),
            t.temperature.to_string(),
            t.energy.to_string(),
            t.best.to_string(),
            u8::from(t.accepted).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
