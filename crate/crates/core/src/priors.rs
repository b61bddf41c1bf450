//! Learned priors: a Gaussian KDE over metric (length, width) and a logistic
//! model for "these two shapes are fragments of the same object".

use crate::geometry::{angle_deviation, point_line_distance, RectPoly};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Lower bound applied to the shape density before taking its log.
pub const DENSITY_FLOOR: f64 = 1e-300;

const L2_PENALTY: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("shape prior needs at least {needed} training shapes, got {got}")]
    TooFewShapes { needed: usize, got: usize },
    #[error("training coordinate {coord} has zero variance; supply an explicit bandwidth")]
    ZeroVariance { coord: usize },
    #[error("bandwidth matrix must be symmetric positive definite")]
    BandwidthNotSpd,
    #[error("non-finite training value")]
    NonFinite,
    #[error("collinearity training needs both labels present")]
    SingleClass,
    #[error("collinearity training needs at least 2 distinct feature vectors")]
    TooFewDistinct,
    #[error("logistic fit did not converge (gradient norm {0:e})")]
    NoConvergence(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ShapePriorRepr {
    points: Vec<[f64; 2]>,
    bandwidth: [[f64; 2]; 2],
}

/// Kernel density estimate over `(length_m, width_m)` with a full 2×2
/// Gaussian bandwidth matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShapePriorRepr", into = "ShapePriorRepr")]
pub struct ShapePrior {
    points: Vec<[f64; 2]>,
    bandwidth: [[f64; 2]; 2],
    inv: [[f64; 2]; 2],
    log_norm: f64,
}

impl TryFrom<ShapePriorRepr> for ShapePrior {
    type Error = PriorError;
    fn try_from(r: ShapePriorRepr) -> Result<Self, PriorError> {
        ShapePrior::new(r.points, r.bandwidth)
    }
}

impl From<ShapePrior> for ShapePriorRepr {
    fn from(p: ShapePrior) -> Self {
        ShapePriorRepr {
            points: p.points,
            bandwidth: p.bandwidth,
        }
    }
}

impl ShapePrior {
    pub fn new(points: Vec<[f64; 2]>, bandwidth: [[f64; 2]; 2]) -> Result<Self, PriorError> {
        if points.is_empty() {
            return Err(PriorError::TooFewShapes { needed: 1, got: 0 });
        }
        if points.iter().flatten().chain(bandwidth.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(PriorError::NonFinite);
        }
        let [[h11, h12], [h21, h22]] = bandwidth;
        let det = h11 * h22 - h12 * h21;
        if (h12 - h21).abs() > 1e-12 * (h12.abs() + h21.abs()).max(1.0) || h11 <= 0.0 || det <= 0.0 {
            return Err(PriorError::BandwidthNotSpd);
        }
        let inv = [[h22 / det, -h12 / det], [-h21 / det, h11 / det]];
        let log_norm = -(points.len() as f64).ln() - (2.0 * PI).ln() - 0.5 * det.ln();
        Ok(Self {
            points,
            bandwidth,
            inv,
            log_norm,
        })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn bandwidth(&self) -> [[f64; 2]; 2] {
        self.bandwidth
    }

    /// Log of the KDE density at `(a_m, b_m)`, floored at `ln(1e-300)`.
    pub fn log_density(&self, a_m: f64, b_m: f64) -> f64 {
        let exps: Vec<f64> = self
            .points
            .iter()
            .map(|p| {
                let d0 = a_m - p[0];
                let d1 = b_m - p[1];
                let q = d0 * (self.inv[0][0] * d0 + self.inv[0][1] * d1)
                    + d1 * (self.inv[1][0] * d0 + self.inv[1][1] * d1);
                -0.5 * q
            })
            .collect();
        let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + exps.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
        (lse + self.log_norm).max(DENSITY_FLOOR.ln())
    }
}

pub fn shape_log_density(prior: &ShapePrior, a_m: f64, b_m: f64) -> f64 {
    prior.log_density(a_m, b_m)
}

/// Fits the shape prior. Without an explicit bandwidth the diagonal rule of
/// thumb `H_jj = (σ_j · n^(-1/6))²` is used.
pub fn fit_shape_prior(
    shapes: &[(f64, f64)],
    bandwidth: Option<[[f64; 2]; 2]>,
) -> Result<ShapePrior, PriorError> {
    let points: Vec<[f64; 2]> = shapes.iter().map(|&(l, w)| [l, w]).collect();
    if let Some(h) = bandwidth {
        return ShapePrior::new(points, h);
    }
    let n = points.len();
    if n < 2 {
        return Err(PriorError::TooFewShapes { needed: 2, got: n });
    }
    let factor = (n as f64).powf(-1.0 / 6.0);
    let mut diag = [0.0; 2];
    for (j, d) in diag.iter_mut().enumerate() {
        let mean = points.iter().map(|p| p[j]).sum::<f64>() / n as f64;
        let var = points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if var <= 0.0 {
            return Err(PriorError::ZeroVariance { coord: j });
        }
        *d = var * factor * factor;
    }
    ShapePrior::new(points, [[diag[0], 0.0], [0.0, diag[1]]])
}

/// Differential features of a shape pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures {
    /// Undirected angular deviation, radians in `[0, π/2]`.
    pub d_angle: f64,
    /// Mean distance between the central axes, meters.
    pub d_axis: f64,
}

/// Angular deviation plus the symmetric mean distance of each shape's axis
/// endpoints to the other shape's (infinite) axis line.
pub fn pair_features(s1: &RectPoly, s2: &RectPoly, gsd: f64) -> PairFeatures {
    let one_way = |from: &RectPoly, to: &RectPoly| {
        let (p, q) = from.axis_endpoints();
        let dir = to.axis();
        0.5 * (point_line_distance(p, to.center, dir) + point_line_distance(q, to.center, dir))
    };
    PairFeatures {
        d_angle: angle_deviation(s1.rho, s2.rho),
        d_axis: 0.5 * (one_way(s1, s2) + one_way(s2, s1)) * gsd,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollinearityModel {
    pub bias: f64,
    pub w_angle: f64,
    pub w_dist: f64,
}

impl CollinearityModel {
    pub fn logit(&self, f: &PairFeatures) -> f64 {
        self.bias + self.w_angle * f.d_angle + self.w_dist * f.d_axis
    }

    pub fn probability(&self, f: &PairFeatures) -> f64 {
        sigmoid(self.logit(f))
    }

    /// `-ln(1 - P_eq)`, evaluated stably as `softplus(logit)`.
    pub fn penalty(&self, f: &PairFeatures) -> f64 {
        softplus(self.logit(f))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn p_same_object(model: &CollinearityModel, f: &PairFeatures) -> f64 {
    model.probability(f)
}

/// Penalized maximum-likelihood logistic regression (Newton iterations with
/// backtracking), stopped once the gradient norm drops to 1e-8.
pub fn fit_collinearity(pairs: &[(PairFeatures, bool)]) -> Result<CollinearityModel, PriorError> {
    if pairs.iter().any(|(f, _)| !f.d_angle.is_finite() || !f.d_axis.is_finite()) {
        return Err(PriorError::NonFinite);
    }
    let positives = pairs.iter().filter(|(_, y)| *y).count();
    let distinct = {
        let mut v: Vec<(u64, u64)> =
            pairs.iter().map(|(f, _)| (f.d_angle.to_bits(), f.d_axis.to_bits())).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    if distinct < 2 {
        return Err(PriorError::TooFewDistinct);
    }
    if positives == 0 || positives == pairs.len() {
        return Err(PriorError::SingleClass);
    }
    let n = pairs.len() as f64;
    let xs: Vec<[f64; 3]> = pairs.iter().map(|(f, _)| [1.0, f.d_angle, f.d_axis]).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, y)| if *y { 1.0 } else { 0.0 }).collect();

    let objective = |w: &[f64; 3]| -> f64 {
        let ll: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let z = w[0] * x[0] + w[1] * x[1] + w[2] * x[2];
                // y ln σ(z) + (1-y) ln(1-σ(z)) = y z - softplus(z)
                y * z - softplus(z)
            })
            .sum();
        ll / n - 0.5 * L2_PENALTY * (w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    };

    let mut w = [0.0f64; 3];
    let mut grad_norm = f64::INFINITY;
    for _ in 0..500 {
        let mut g = [0.0; 3];
        let mut h = [[0.0; 3]; 3];
        for (x, y) in xs.iter().zip(&ys) {
            let p = sigmoid(w[0] * x[0] + w[1] * x[1] + w[2] * x[2]);
            let s = p * (1.0 - p);
            for a in 0..3 {
                g[a] += (y - p) * x[a] / n;
                for b in 0..3 {
                    h[a][b] += s * x[a] * x[b] / n;
                }
            }
        }
        for a in 0..3 {
            g[a] -= L2_PENALTY * w[a];
            h[a][a] += L2_PENALTY;
        }
        grad_norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if grad_norm <= GRAD_TOL {
            return Ok(CollinearityModel {
                bias: w[0],
                w_angle: w[1],
                w_dist: w[2],
            });
        }
        // Ascent direction: (-Hessian of J)^{-1} g, with -Hess = h (positive definite).
        let step = solve3(h, g).unwrap_or(g);
        let base = objective(&w);
        let mut t = 1.0;
        loop {
            let cand = [w[0] + t * step[0], w[1] + t * step[1], w[2] + t * step[2]];
            if objective(&cand) >= base || t < 1e-12 {
                w = cand;
                break;
            }
            t *= 0.5;
        }
    }
    Err(PriorError::NoConvergence(grad_norm))
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = b[row];
        }
        *o = det(&mc) / d;
    }
    Some(out)
}

fn default_merge_threshold() -> f64 {
    0.5
}

/// Everything `priors.json` carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub shape_prior: ShapePrior,
    pub collinearity: CollinearityModel,
    #[serde(default = "default_merge_threshold")]
    pub merge_threshold: f64,
}

impl Priors {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PriorError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PriorError> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct ShapeRow {
    length_m: f64,
    width_m: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct PairRow {
    d_angle_rad: f64,
    d_axis_m: f64,
    label: u8,
}

pub fn read_shapes_csv(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>, PriorError> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize::<ShapeRow>()
        .map(|r| r.map(|r| (r.length_m, r.width_m)).map_err(PriorError::from))
        .collect()
}

pub fn read_pairs_csv(path: impl AsRef<Path>) -> Result<Vec<(PairFeatures, bool)>, PriorError> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize::<PairRow>()
        .map(|r| {
            r.map(|r| {
                (
                    PairFeatures {
                        d_angle: r.d_angle_rad,
                        d_axis: r.d_axis_m,
                    },
                    r.label != 0,
                )
            })
            .map_err(PriorError::from)
        })
        .collect()
}

pub fn write_shapes_csv(path: impl AsRef<Path>, shapes: &[(f64, f64)]) -> Result<(), PriorError> {
    let mut w = csv::Writer::from_path(path)?;
    for &(length_m, width_m) in shapes {
        w.serialize(ShapeRow { length_m, width_m })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pairs_csv(
    path: impl AsRef<Path>,
    pairs: &[(PairFeatures, bool)],
) -> Result<(), PriorError> {
    let mut w = csv::Writer::from_path(path)?;
    for (f, y) in pairs {
        w.serialize(PairRow {
            d_angle_rad: f.d_angle,
            d_axis_m: f.d_axis,
            label: u8::from(*y),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Trains both priors from CSV inputs.
pub fn train_priors(
    shapes_csv: impl AsRef<Path>,
    pairs_csv: impl AsRef<Path>,
) -> Result<Priors, PriorError> {
    let shapes = read_shapes_csv(shapes_csv)?;
    let pairs = read_pairs_csv(pairs_csv)?;
    Ok(Priors {
        shape_prior: fit_shape_prior(&shapes, None)?,
        collinearity: fit_collinearity(&pairs)?,
        merge_threshold: default_merge_threshold(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn density_at_single_kernel_center() {
        let prior = ShapePrior::new(vec![[10.0, 0.4]], [[1.0, 0.0], [0.0, 0.01]]).unwrap();
        let expected = (10.0 / (2.0 * PI)).ln();
        assert_abs_diff_eq!(prior.log_density(10.0, 0.4), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.4647, epsilon = 1e-4);
        assert!(prior.log_density(13.0, 0.7) < expected);
    }

    #[test]
    fn density_floor() {
        let prior = ShapePrior::new(vec![[10.0, 0.4]], [[1.0, 0.0], [0.0, 0.01]]).unwrap();
        assert_eq!(prior.log_density(1e6, -1e6), DENSITY_FLOOR.ln());
    }

    /// Grid quadrature over ±6σ around the training cloud.
    fn integrate(prior: &ShapePrior) -> f64 {
        let h = prior.bandwidth();
        let (s0, s1) = (h[0][0].sqrt(), h[1][1].sqrt());
        let pts = prior.points();
        let lo0 = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min) - 6.0 * s0;
        let hi0 = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) + 6.0 * s0;
        let lo1 = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min) - 6.0 * s1;
        let hi1 = pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max) + 6.0 * s1;
        let n = 600;
        let (d0, d1) = ((hi0 - lo0) / n as f64, (hi1 - lo1) / n as f64);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let a = lo0 + (i as f64 + 0.5) * d0;
                let b = lo1 + (j as f64 + 0.5) * d1;
                acc += prior.log_density(a, b).exp();
            }
        }
        acc * d0 * d1
    }

    #[test]
    fn fitted_density_integrates_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let shapes: Vec<(f64, f64)> = (0..50)
            .map(|_| (rng.random_range(3.0..15.0), rng.random_range(0.3..0.6)))
            .collect();
        let prior = fit_shape_prior(&shapes, None).unwrap();
        let total = integrate(&prior);
        assert!((total - 1.0).abs() < 0.01, "integral {total}");
    }

    #[test]
    fn rule_of_thumb_bandwidth() {
        let prior = fit_shape_prior(&[(8.0, 0.3), (12.0, 0.5)], None).unwrap();
        let h = prior.bandwidth();
        assert_eq!(h[0][1], 0.0);
        assert_eq!(h[1][0], 0.0);
        assert!(h[0][0] > h[1][1]);
        let explicit = [[2.0, 0.1], [0.1, 0.5]];
        assert_eq!(fit_shape_prior(&[(8.0, 0.3)], Some(explicit)).unwrap().bandwidth(), explicit);
    }

    #[test]
    fn identical_points_need_explicit_bandwidth() {
        let pts = vec![(10.0, 0.4); 5];
        assert!(matches!(fit_shape_prior(&pts, None), Err(PriorError::ZeroVariance { coord: 0 })));
        let prior = fit_shape_prior(&pts, Some([[1.0, 0.0], [0.0, 1.0]])).unwrap();
        assert_abs_diff_eq!(
            prior.log_density(10.0, 0.4).exp(),
            1.0 / (2.0 * PI),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_non_spd_bandwidth() {
        assert!(matches!(
            ShapePrior::new(vec![[1.0, 1.0]], [[1.0, 2.0], [2.0, 1.0]]),
            Err(PriorError::BandwidthNotSpd)
        ));
    }

    fn rect(a: f64, b: f64, x: f64, y: f64, rho: f64) -> RectPoly {
        RectPoly::new(a, b, Point::new(x, y), rho)
    }

    #[test]
    fn pair_feature_cases() {
        let s = rect(40.0, 4.0, 10.0, 10.0, 0.3);
        let f = pair_features(&s, &s, 0.1);
        assert_abs_diff_eq!(f.d_angle, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.d_axis, 0.0, epsilon = 1e-12);

        let a = rect(40.0, 4.0, 0.0, 0.0, 0.0);
        let b = rect(30.0, 4.0, 5.0, 10.0, 0.0);
        let f = pair_features(&a, &b, 0.1);
        assert_abs_diff_eq!(f.d_angle, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.d_axis, 1.0, epsilon = 1e-12);

        let c = rect(40.0, 4.0, 0.0, 0.0, PI / 2.0);
        assert_abs_diff_eq!(pair_features(&a, &c, 0.1).d_angle, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn logistic_values() {
        let m = CollinearityModel {
            bias: 2.0,
            w_angle: -8.0,
            w_dist: -4.0,
        };
        let near = PairFeatures {
            d_angle: 0.0,
            d_axis: 0.0,
        };
        assert_abs_diff_eq!(p_same_object(&m, &near), 0.8808, epsilon = 1e-4);
        let far = PairFeatures {
            d_angle: PI / 2.0,
            d_axis: 5.0,
        };
        let p = p_same_object(&m, &far);
        assert_abs_diff_eq!(p, sigmoid(2.0 - 4.0 * PI - 20.0), epsilon = 1e-20);
        assert!(p > 0.0 && p < 1e-13);
        assert_abs_diff_eq!(m.penalty(&near), -(1.0 - sigmoid(2.0)).ln(), epsilon = 1e-12);
    }

    fn toy_pairs() -> Vec<(PairFeatures, bool)> {
        let mut v = Vec::new();
        for _ in 0..20 {
            v.push((
                PairFeatures {
                    d_angle: 0.0,
                    d_axis: 0.0,
                },
                true,
            ));
            v.push((
                PairFeatures {
                    d_angle: PI / 2.0,
                    d_axis: 5.0,
                },
                false,
            ));
        }
        v
    }

    #[test]
    fn separable_toy_fit() {
        let pairs = toy_pairs();
        let m = fit_collinearity(&pairs).unwrap();
        let correct = pairs
            .iter()
            .filter(|(f, y)| (p_same_object(&m, f) > 0.5) == *y)
            .count();
        assert_eq!(correct, pairs.len());
    }

    #[test]
    fn fit_is_order_invariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut pairs: Vec<(PairFeatures, bool)> = (0..200)
            .map(|_| {
                let f = PairFeatures {
                    d_angle: rng.random_range(0.0..PI / 2.0),
                    d_axis: rng.random_range(0.0..5.0),
                };
                let y = rng.random::<f64>() < sigmoid(3.0 - 10.0 * f.d_angle - 2.0 * f.d_axis);
                (f, y)
            })
            .collect();
        let m1 = fit_collinearity(&pairs).unwrap();
        pairs.reverse();
        pairs.swap(3, 150);
        let m2 = fit_collinearity(&pairs).unwrap();
        assert!((m1.bias - m2.bias).abs() < 1e-6);
        assert!((m1.w_angle - m2.w_angle).abs() < 1e-6);
        assert!((m1.w_dist - m2.w_dist).abs() < 1e-6);
    }

    #[test]
    fn degenerate_training_sets() {
        let same_label: Vec<_> = toy_pairs().into_iter().map(|(f, _)| (f, true)).collect();
        assert!(matches!(fit_collinearity(&same_label), Err(PriorError::SingleClass)));
        let one_vector = vec![
            (
                PairFeatures {
                    d_angle: 0.1,
                    d_axis: 0.2,
                },
                true,
            ),
            (
                PairFeatures {
                    d_angle: 0.1,
                    d_axis: 0.2,
                },
                false,
            ),
        ];
        assert!(matches!(fit_collinearity(&one_vector), Err(PriorError::TooFewDistinct)));
    }

    #[test]
    fn priors_json_round_trip() {
        let priors = Priors {
            shape_prior: fit_shape_prior(&[(8.0, 0.3), (12.0, 0.5), (5.0, 0.45)], None).unwrap(),
            collinearity: CollinearityModel {
                bias: 1.0,
                w_angle: -5.0,
                w_dist: -2.0,
            },
            merge_threshold: 0.5,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("priors.json");
        priors.save(&path).unwrap();
        assert_eq!(Priors::load(&path).unwrap(), priors);
    }

    #[test]
    fn train_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let shapes = dir.path().join("shapes.csv");
        let pairs = dir.path().join("pairs.csv");
        std::fs::write(&shapes, "length_m,width_m\n8,0.3\n12,0.5\n6,0.4\n").unwrap();
        std::fs::write(&pairs, "d_angle_rad,d_axis_m,label\n0,0,1\n1.5,5,0\n0.05,0.1,1\n1.2,3,0\n")
            .unwrap();
        let p = train_priors(&shapes, &pairs).unwrap();
        assert_eq!(p.shape_prior.points().len(), 3);
        assert!(p.collinearity.w_angle < 0.0);
    }

    proptest! {
        #[test]
        fn density_order_invariant(seed in any::<u64>(), a in 0.0f64..20.0, b in 0.0f64..1.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut shapes: Vec<(f64, f64)> = (0..20)
                .map(|_| (rng.random_range(2.0..20.0), rng.random_range(0.2..0.7)))
                .collect();
            let p1 = fit_shape_prior(&shapes, None).unwrap();
            shapes.reverse();
            let p2 = fit_shape_prior(&shapes, None).unwrap();
            prop_assert!((p1.log_density(a, b) - p2.log_density(a, b)).abs() < 1e-9);
        }

        #[test]
        fn pair_features_symmetric(
            a1 in 1.0f64..80.0, b1 in 1.0f64..8.0, x1 in -50.0f64..50.0, y1 in -50.0f64..50.0, r1 in 0.0f64..PI,
            a2 in 1.0f64..80.0, b2 in 1.0f64..8.0, x2 in -50.0f64..50.0, y2 in -50.0f64..50.0, r2 in 0.0f64..PI,
        ) {
            let s1 = rect(a1, b1, x1, y1, r1);
            let s2 = rect(a2, b2, x2, y2, r2);
            let f = pair_features(&s1, &s2, 0.1);
            let g = pair_features(&s2, &s1, 0.1);
            prop_assert!((f.d_angle - g.d_angle).abs() < 1e-12);
            prop_assert!((f.d_axis - g.d_axis).abs() < 1e-9);
            prop_assert!(f.d_angle >= 0.0 && f.d_angle <= PI / 2.0 + 1e-12);
        }

        #[test]
        fn probability_open_interval_and_monotone(
            bias in -20.0f64..20.0, wa in -20.0f64..0.0, wd in -20.0f64..-0.01,
            da in 0.0f64..1.5, dd in 0.0f64..10.0,
        ) {
            let m = CollinearityModel { bias, w_angle: wa, w_dist: wd };
            let p = p_same_object(&m, &PairFeatures { d_angle: da, d_axis: dd });
            prop_assert!(p > 0.0 && p < 1.0);
            let further = p_same_object(&m, &PairFeatures { d_angle: da, d_axis: dd + 0.5 });
            prop_assert!(further < p);
        }
    }
}
