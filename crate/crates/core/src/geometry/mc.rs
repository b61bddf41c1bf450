use super::{BBox, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Monte Carlo area estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub area: f64,
    pub std_err: f64,
}

impl McEstimate {
    /// True when `value` is within `k` standard errors of the estimate. A
    /// zero standard error (no hits or all hits) falls back to a tolerance of
    /// one sample's worth of area.
    pub fn agrees(&self, value: f64, k: f64, bbox_area: f64, n: usize) -> bool {
        let tol = (k * self.std_err).max(bbox_area / n as f64);
        (value - self.area).abs() <= tol
    }
}

/// Uniform-sampling estimate of the measure of `{p in bbox : inside(p)}`.
pub fn mc_area_oracle<F>(inside: F, bbox: &BBox, n: usize, seed: u64) -> McEstimate
where
    F: Fn(Point) -> bool,
{
    assert!(n >= 1, "sample count must be positive");
    let box_area = bbox.area();
    if box_area <= 0.0 {
        return McEstimate {
            area: 0.0,
            std_err: 0.0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..n {
        let p = Point::new(
            bbox.min.x + rng.random::<f64>() * bbox.width(),
            bbox.min.y + rng.random::<f64>() * bbox.height(),
        );
        if inside(p) {
            hits += 1;
        }
    }
    let frac = hits as f64 / n as f64;
    McEstimate {
        area: frac * box_area,
        std_err: box_area * (frac * (1.0 - frac) / n as f64).sqrt(),
    }
}
