//! Aggregate energy of a set of rectangle shapes against one target region,
//! with a cache of unary and pairwise area terms so that a change to one or
//! two shapes is re-evaluated in time linear in the shape count.

use crate::contour::TargetRegion;
use crate::geometry::{angle_deviation, clip_area_rect, rect_rect_area, triple_area, RectPoly};
use crate::priors::{pair_features, Priors};
use crate::sac_init::ConstraintBox;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnergyError {
    #[error("target region has zero area")]
    EmptyRegion,
    #[error("invalid model state: {0}")]
    InvalidState(String),
    #[error("invalid energy config: {0}")]
    InvalidConfig(String),
}

/// Integer pixel bounds on length `a` and width `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeBounds {
    pub a_lo: u32,
    pub a_hi: u32,
    pub b_lo: u32,
    pub b_hi: u32,
}

impl ShapeBounds {
    /// Integral and in range. A width of 0 (disabled) is always admitted.
    pub fn admits(&self, a: f64, b: f64) -> bool {
        let int = |v: f64| v.fract() == 0.0 && v >= 0.0;
        int(a)
            && int(b)
            && a >= f64::from(self.a_lo)
            && a <= f64::from(self.a_hi)
            && (b == 0.0 || (b >= f64::from(self.b_lo) && b <= f64::from(self.b_hi)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub shapes: Vec<RectPoly>,
    pub boxes: Vec<ConstraintBox>,
    pub bounds: ShapeBounds,
}

impl ModelState {
    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.shapes[i].b > 0.0
    }

    pub fn active_count(&self) -> usize {
        self.shapes.iter().filter(|s| s.b > 0.0).count()
    }

    /// Whether `shape` may replace shape `i`.
    pub fn admits(&self, i: usize, shape: &RectPoly) -> bool {
        self.bounds.admits(shape.a, shape.b) && (shape.b == 0.0 || self.boxes[i].contains(shape.center))
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.shapes.len() != self.boxes.len() {
            return Err(EnergyError::InvalidState(format!(
                "{} shapes but {} constraint boxes",
                self.shapes.len(),
                self.boxes.len()
            )));
        }
        if self.bounds.b_lo != 0 || self.bounds.a_lo > self.bounds.a_hi {
            return Err(EnergyError::InvalidState(format!("bad bounds {:?}", self.bounds)));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            if !self.admits(i, s) {
                return Err(EnergyError::InvalidState(format!("shape {i} violates bounds or its box")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    pub gamma_d: f64,
    pub gamma_s: f64,
    pub gamma_o: f64,
    pub gamma_c: f64,
    pub pi_p: f64,
    /// Angular scale of the overlap gate, radians.
    pub sigma_o: f64,
    pub epsilon: f64,
    pub merge_threshold: f64,
}

impl EnergyConfig {
    /// Data and overlap weights set to `-ln(epsilon)`.
    pub fn with_epsilon(epsilon: f64) -> Self {
        let g = -epsilon.ln();
        Self {
            gamma_d: g,
            gamma_o: g,
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        let gammas = [self.gamma_d, self.gamma_s, self.gamma_o, self.gamma_c];
        if gammas.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(EnergyError::InvalidConfig("coefficients must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.pi_p) {
            return Err(EnergyError::InvalidConfig("pi_p must lie in [0, 1]".into()));
        }
        if !(self.sigma_o > 0.0) {
            return Err(EnergyError::InvalidConfig("sigma_o must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.merge_threshold) {
            return Err(EnergyError::InvalidConfig("merge_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for EnergyConfig {
    fn default() -> Self {
        let epsilon = 1e-6_f64;
        Self {
            gamma_d: -epsilon.ln(),
            gamma_s: 0.3,
            gamma_o: -epsilon.ln(),
            gamma_c: 0.3,
            pi_p: 0.5,
            sigma_o: 10f64.to_radians(),
            epsilon,
            merge_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub e_data: f64,
    pub e_shape: f64,
    pub e_overlap: f64,
    pub e_collin: f64,
    pub total: f64,
}

/// Read-only inputs shared by every evaluation within one region.
#[derive(Debug, Clone, Copy)]
pub struct EnergyContext<'a> {
    pub region: &'a TargetRegion,
    pub priors: &'a Priors,
    pub config: &'a EnergyConfig,
    /// Meters per pixel, for the metric priors.
    pub gsd: f64,
}

/// Running sums of every cached quantity.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Totals {
    pub unary_tau: f64,
    pub rect_area: f64,
    pub shape_logp: f64,
    pub pair_rect: f64,
    pub pair_tau: f64,
    pub overlap: f64,
    pub collin: f64,
    pub m_active: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Unary {
    tau: f64,
    rect: f64,
    logp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Pair {
    rect: f64,
    tau: f64,
    overlap: f64,
    collin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyCache {
    pub tau_area: f64,
    pub unary_tau: Vec<f64>,
    pub rect_area: Vec<f64>,
    pub shape_logp: Vec<f64>,
    n: usize,
    pair_rect: Vec<f64>,
    pair_tau: Vec<f64>,
    overlap: Vec<f64>,
    collin: Vec<f64>,
    pub totals: Totals,
}

impl EnergyCache {
    fn empty(n: usize, tau_area: f64) -> Self {
        Self {
            tau_area,
            unary_tau: vec![0.0; n],
            rect_area: vec![0.0; n],
            shape_logp: vec![0.0; n],
            n,
            pair_rect: vec![0.0; n * n],
            pair_tau: vec![0.0; n * n],
            overlap: vec![0.0; n * n],
            collin: vec![0.0; n * n],
            totals: Totals::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn pair_rect(&self, i: usize, j: usize) -> f64 {
        self.pair_rect[i * self.n + j]
    }

    pub fn pair_tau(&self, i: usize, j: usize) -> f64 {
        self.pair_tau[i * self.n + j]
    }

    pub fn overlap(&self, i: usize, j: usize) -> f64 {
        self.overlap[i * self.n + j]
    }

    pub fn collin(&self, i: usize, j: usize) -> f64 {
        self.collin[i * self.n + j]
    }

    fn unary(&self, i: usize) -> Unary {
        Unary {
            tau: self.unary_tau[i],
            rect: self.rect_area[i],
            logp: self.shape_logp[i],
        }
    }

    fn set_unary(&mut self, i: usize, u: Unary) {
        self.unary_tau[i] = u.tau;
        self.rect_area[i] = u.rect;
        self.shape_logp[i] = u.logp;
    }

    fn pair(&self, i: usize, j: usize) -> Pair {
        let k = i * self.n + j;
        Pair {
            rect: self.pair_rect[k],
            tau: self.pair_tau[k],
            overlap: self.overlap[k],
            collin: self.collin[k],
        }
    }

    fn set_pair(&mut self, i: usize, j: usize, p: Pair) {
        for k in [i * self.n + j, j * self.n + i] {
            self.pair_rect[k] = p.rect;
            self.pair_tau[k] = p.tau;
            self.overlap[k] = p.overlap;
            self.collin[k] = p.collin;
        }
    }

    /// Recomputes the running sums from the stored entries.
    pub fn resync(&mut self, state: &ModelState) {
        let mut t = Totals {
            m_active: state.active_count(),
            ..Totals::default()
        };
        for i in 0..self.n {
            t.unary_tau += self.unary_tau[i];
            t.rect_area += self.rect_area[i];
            t.shape_logp += self.shape_logp[i];
            for j in (i + 1)..self.n {
                let p = self.pair(i, j);
                t.pair_rect += p.rect;
                t.pair_tau += p.tau;
                t.overlap += p.overlap;
                t.collin += p.collin;
            }
        }
        self.totals = t;
    }

    pub fn breakdown(&self, config: &EnergyConfig) -> EnergyBreakdown {
        breakdown_from(&self.totals, self.tau_area, config)
    }
}

/// Angle-gated intersection area of two shapes, px².
pub fn overlap_term(s1: &RectPoly, s2: &RectPoly, sigma_o: f64) -> f64 {
    overlap_gate(s1, s2, sigma_o) * rect_rect_area(s1, s2)
}

fn overlap_gate(s1: &RectPoly, s2: &RectPoly, sigma_o: f64) -> f64 {
    let d = angle_deviation(s1.rho, s2.rho);
    (-d * d / (2.0 * sigma_o * sigma_o)).exp()
}

/// Truncated inclusion-exclusion estimates `(|φ∩τ|, |φ|)`.
pub fn approx_phi_tau(cache: &EnergyCache) -> (f64, f64) {
    let t = &cache.totals;
    (t.unary_tau - t.pair_tau, t.rect_area - t.pair_rect)
}

fn data_term(phi_tau: f64, phi: f64, tau_area: f64, pi_p: f64) -> f64 {
    let missed = tau_area - phi_tau;
    let spurious = (phi - phi_tau).max(0.0);
    2.0 * ((1.0 - pi_p) * missed + pi_p * spurious) / tau_area
}

/// Normalized data-fit term.
pub fn data_fit(cache: &EnergyCache, pi_p: f64) -> f64 {
    let (phi_tau, phi) = approx_phi_tau(cache);
    data_term(phi_tau, phi, cache.tau_area, pi_p)
}

fn breakdown_from(t: &Totals, tau_area: f64, c: &EnergyConfig) -> EnergyBreakdown {
    let m = t.m_active;
    let e_data = data_term(t.unary_tau - t.pair_tau, t.rect_area - t.pair_rect, tau_area, c.pi_p);
    let e_shape = if m == 0 { 0.0 } else { -t.shape_logp / m as f64 };
    let e_overlap = t.overlap / tau_area;
    let pairs = m * m.saturating_sub(1) / 2;
    let e_collin = if pairs == 0 { 0.0 } else { t.collin / pairs as f64 };
    EnergyBreakdown {
        e_data,
        e_shape,
        e_overlap,
        e_collin,
        total: c.gamma_d * e_data + c.gamma_s * e_shape + c.gamma_o * e_overlap + c.gamma_c * e_collin,
    }
}

fn unary_terms(ctx: &EnergyContext, s: &RectPoly) -> Unary {
    if s.b <= 0.0 {
        return Unary::default();
    }
    Unary {
        tau: clip_area_rect(ctx.region, s),
        rect: s.area(),
        logp: ctx.priors.shape_prior.log_density(s.a * ctx.gsd, s.b * ctx.gsd),
    }
}

fn pair_terms(ctx: &EnergyContext, s1: &RectPoly, s2: &RectPoly) -> Pair {
    if s1.b <= 0.0 || s2.b <= 0.0 {
        return Pair::default();
    }
    let collin = ctx.priors.collinearity.penalty(&pair_features(s1, s2, ctx.gsd));
    if !s1.bbox().intersects(&s2.bbox()) {
        return Pair {
            collin,
            ..Pair::default()
        };
    }
    let rect = rect_rect_area(s1, s2);
    if rect <= 0.0 {
        return Pair {
            collin,
            ..Pair::default()
        };
    }
    Pair {
        rect,
        tau: triple_area(ctx.region, s1, s2),
        overlap: overlap_gate(s1, s2, ctx.config.sigma_o) * rect,
        collin,
    }
}

/// Energy of `state` from scratch, plus the populated cache.
pub fn evaluate_full(
    ctx: &EnergyContext,
    state: &ModelState,
) -> Result<(EnergyBreakdown, EnergyCache), EnergyError> {
    if !(ctx.region.area > 0.0) {
        return Err(EnergyError::EmptyRegion);
    }
    let n = state.len();
    let mut cache = EnergyCache::empty(n, ctx.region.area);
    for i in 0..n {
        cache.set_unary(i, unary_terms(ctx, &state.shapes[i]));
        for j in (i + 1)..n {
            cache.set_pair(i, j, pair_terms(ctx, &state.shapes[i], &state.shapes[j]));
        }
    }
    cache.resync(state);
    Ok((cache.breakdown(ctx.config), cache))
}

/// A proposed replacement of one or more shapes, evaluated against the cache
/// but not yet applied.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingUpdate {
    pub changes: Vec<(usize, RectPoly)>,
    unary: Vec<(usize, Unary)>,
    pairs: Vec<(usize, usize, Pair)>,
    totals: Totals,
    pub breakdown: EnergyBreakdown,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("move violates shape bounds or a constraint box")]
pub struct MoveRejected;

/// Energy change caused by replacing the listed shapes. Only the rows of the
/// changed shapes are recomputed.
pub fn evaluate_delta(
    ctx: &EnergyContext,
    state: &ModelState,
    cache: &EnergyCache,
    changes: &[(usize, RectPoly)],
) -> Result<PendingUpdate, MoveRejected> {
    for (k, (i, s)) in changes.iter().enumerate() {
        if *i >= state.len() || !state.admits(*i, s) || changes[..k].iter().any(|(j, _)| j == i) {
            return Err(MoveRejected);
        }
    }
    let shape = |k: usize| -> &RectPoly {
        changes
            .iter()
            .find(|(i, _)| *i == k)
            .map(|(_, s)| s)
            .unwrap_or(&state.shapes[k])
    };

    let mut t = cache.totals;
    let mut unary = Vec::with_capacity(changes.len());
    let mut pairs = Vec::with_capacity(changes.len() * state.len());
    for (p, &(i, ref s)) in changes.iter().enumerate() {
        let old = cache.unary(i);
        let new = unary_terms(ctx, s);
        t.unary_tau += new.tau - old.tau;
        t.rect_area += new.rect - old.rect;
        t.shape_logp += new.logp - old.logp;
        let was = state.shapes[i].b > 0.0;
        let now = s.b > 0.0;
        if was && !now {
            t.m_active -= 1;
        } else if now && !was {
            t.m_active += 1;
        }
        unary.push((i, new));
        for j in 0..state.len() {
            if j == i || changes[..p].iter().any(|(c, _)| *c == j) {
                continue;
            }
            let old = cache.pair(i, j);
            let new = pair_terms(ctx, s, shape(j));
            t.pair_rect += new.rect - old.rect;
            t.pair_tau += new.tau - old.tau;
            t.overlap += new.overlap - old.overlap;
            t.collin += new.collin - old.collin;
            pairs.push((i, j, new));
        }
    }
    let before = cache.breakdown(ctx.config);
    let breakdown = breakdown_from(&t, cache.tau_area, ctx.config);
    Ok(PendingUpdate {
        changes: changes.to_vec(),
        unary,
        pairs,
        totals: t,
        breakdown,
        delta: breakdown.total - before.total,
    })
}

/// Applies an evaluated update to the state and cache.
pub fn commit(state: &mut ModelState, cache: &mut EnergyCache, pending: PendingUpdate) {
    for (i, s) in pending.changes {
        state.shapes[i] = s;
    }
    for (i, u) in pending.unary {
        cache.set_unary(i, u);
    }
    for (i, j, p) in pending.pairs {
        cache.set_pair(i, j, p);
    }
    cache.totals = pending.totals;
}

/// Worst relative discrepancy `|cached - fresh| / max(1, |fresh|)` over
/// every cached entry and running sum.
pub fn audit_cache(ctx: &EnergyContext, state: &ModelState, cache: &EnergyCache) -> f64 {
    let fresh = match evaluate_full(ctx, state) {
        Ok((_, c)) => c,
        Err(_) => return f64::INFINITY,
    };
    if fresh.n != cache.n {
        return f64::INFINITY;
    }
    let rel = |c: f64, f: f64| (c - f).abs() / f.abs().max(1.0);
    let mut worst = rel(cache.tau_area, fresh.tau_area);
    let vectors = [
        (&cache.unary_tau, &fresh.unary_tau),
        (&cache.rect_area, &fresh.rect_area),
        (&cache.shape_logp, &fresh.shape_logp),
        (&cache.pair_rect, &fresh.pair_rect),
        (&cache.pair_tau, &fresh.pair_tau),
        (&cache.overlap, &fresh.overlap),
        (&cache.collin, &fresh.collin),
    ];
    for (c, f) in vectors {
        for (a, b) in c.iter().zip(f.iter()) {
            worst = worst.max(rel(*a, *b));
        }
    }
    let (ct, ft) = (&cache.totals, &fresh.totals);
    for (a, b) in [
        (ct.unary_tau, ft.unary_tau),
        (ct.rect_area, ft.rect_area),
        (ct.shape_logp, ft.shape_logp),
        (ct.pair_rect, ft.pair_rect),
        (ct.pair_tau, ft.pair_tau),
        (ct.overlap, ft.overlap),
        (ct.collin, ft.collin),
        (ct.m_active as f64, ft.m_active as f64),
    ] {
        worst = worst.max(rel(a, b));
    }
    worst
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::{Point, Ring};
    use crate::priors::{CollinearityModel, ShapePrior};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    pub fn rect_region(x0: f64, y0: f64, w: f64, h: f64) -> TargetRegion {
        TargetRegion::new(
            Ring::new(vec![
                Point::new(x0, y0),
                Point::new(x0 + w, y0),
                Point::new(x0 + w, y0 + h),
                Point::new(x0, y0 + h),
            ]),
            vec![],
        )
    }

    pub fn test_priors() -> Priors {
        Priors {
            shape_prior: ShapePrior::new(vec![[4.0, 0.5], [6.0, 0.4], [3.0, 0.3]], [[1.0, 0.0], [0.0, 0.01]])
                .unwrap(),
            collinearity: CollinearityModel {
                bias: 2.0,
                w_angle: -20.0,
                w_dist: -8.0,
            },
            merge_threshold: 0.5,
        }
    }

    pub fn loose_box(c: Point) -> ConstraintBox {
        ConstraintBox {
            center0: c,
            rho0: 0.0,
            l0: 1e6,
            w0: 1e6,
        }
    }

    pub fn state_of(shapes: Vec<RectPoly>, bounds: ShapeBounds) -> ModelState {
        let boxes = shapes.iter().map(|s| loose_box(s.center)).collect();
        ModelState {
            shapes,
            boxes,
            bounds,
        }
    }

    pub const BOUNDS: ShapeBounds = ShapeBounds {
        a_lo: 2,
        a_hi: 100,
        b_lo: 0,
        b_hi: 12,
    };

    pub fn random_state(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> ModelState {
        let shapes = (0..n)
            .map(|_| {
                RectPoly::new(
                    f64::from(rng.random_range(5u32..40)),
                    f64::from(rng.random_range(1u32..8)),
                    Point::new(rng.random_range(lo..hi), rng.random_range(lo..hi)),
                    rng.random_range(0.0..PI),
                )
            })
            .collect();
        state_of(shapes, BOUNDS)
    }

    /// Naive energy: every area by counting sample points on a `step` grid.
    fn rasterized_energy(ctx: &EnergyContext, state: &ModelState, step: f64) -> EnergyBreakdown {
        let mut bb = ctx.region.bbox;
        for s in &state.shapes {
            if s.b > 0.0 {
                for c in s.corners() {
                    bb.include(c);
                }
            }
        }
        let n = state.len();
        let active: Vec<usize> = (0..n).filter(|&i| state.is_active(i)).collect();
        let mut unary_tau = 0.0;
        let mut rect = 0.0;
        let mut pair_rect = vec![0.0; n * n];
        let mut pair_tau = 0.0;
        let cell = step * step;
        let nx = (bb.width() / step).ceil() as usize;
        let ny = (bb.height() / step).ceil() as usize;
        let mut inside = Vec::with_capacity(n);
        for iy in 0..ny {
            for ix in 0..nx {
                let p = Point::new(bb.min.x + (ix as f64 + 0.5) * step, bb.min.y + (iy as f64 + 0.5) * step);
                inside.clear();
                inside.extend(active.iter().copied().filter(|&i| state.shapes[i].contains(p)));
                if inside.is_empty() {
                    continue;
                }
                let in_tau = ctx.region.contains(p);
                rect += cell * inside.len() as f64;
                if in_tau {
                    unary_tau += cell * inside.len() as f64;
                }
                for x in 0..inside.len() {
                    for y in (x + 1)..inside.len() {
                        pair_rect[inside[x] * n + inside[y]] += cell;
                        if in_tau {
                            pair_tau += cell;
                        }
                    }
                }
            }
        }
        let c = ctx.config;
        let tau = ctx.region.area;
        let m = active.len();
        let mut logp = 0.0;
        let mut overlap = 0.0;
        let mut collin = 0.0;
        let mut pr = 0.0;
        for (x, &i) in active.iter().enumerate() {
            let s = &state.shapes[i];
            logp += ctx.priors.shape_prior.log_density(s.a * ctx.gsd, s.b * ctx.gsd);
            for &j in &active[x + 1..] {
                let t = &state.shapes[j];
                let d = angle_deviation(s.rho, t.rho);
                overlap += (-d * d / (2.0 * c.sigma_o * c.sigma_o)).exp() * pair_rect[i * n + j];
                pr += pair_rect[i * n + j];
                let p = ctx.priors.collinearity.probability(&pair_features(s, t, ctx.gsd));
                collin += -(1.0 - p).ln();
            }
        }
        let e_data = data_term(unary_tau - pair_tau, rect - pr, tau, c.pi_p);
        let e_shape = if m == 0 { 0.0 } else { -logp / m as f64 };
        let pairs = m * m.saturating_sub(1) / 2;
        let e_collin = if pairs == 0 { 0.0 } else { collin / pairs as f64 };
        let e_overlap = overlap / tau;
        EnergyBreakdown {
            e_data,
            e_shape,
            e_overlap,
            e_collin,
            total: c.gamma_d * e_data + c.gamma_s * e_shape + c.gamma_o * e_overlap + c.gamma_c * e_collin,
        }
    }

    #[test]
    fn phi_tau_examples() {
        let region = rect_region(0.0, 0.0, 100.0, 100.0);
        let priors = test_priors();
        let config = EnergyConfig::default();
        let ctx = EnergyContext {
            region: &region,
            priors: &priors,
            config: &config,
            gsd: 0.1,
        };
        let s = RectPoly::new(20.0, 4.0, Point::new(50.0, 50.0), 0.3);
        let (_, cache) = evaluate_full(&ctx, &state_of(vec![s], BOUNDS)).unwrap();
        let (pt, p) = approx_phi_tau(&cache);
        assert_abs_diff_eq!(pt, 80.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p, 80.0, epsilon = 1e-9);

        let (_, cache) = evaluate_full(&ctx, &state_of(vec![s, s, s], BOUNDS)).unwrap();
        let (pt, p) = approx_phi_tau(&cache);
        assert_abs_diff_eq!(pt, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p, 0.0, epsilon = 1e-9);

        let t = RectPoly::new(10.0, 3.0, Point::new(20.0, 20.0), 1.0);
        let (_, cache) = evaluate_full(&ctx, &state_of(vec![s, t], BOUNDS)).unwrap();
        let (pt, p) = approx_phi_tau(&cache);
        assert_abs_diff_eq!(pt, 110.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p, 110.0, epsilon = 1e-9);
    }

    #[test]
    fn data_fit_examples() {
        let priors = test_priors();
        let config = EnergyConfig::default();
        let region = rect_region(0.0, 0.0, 20.0, 5.0);
        let ctx = EnergyContext {
            region: &region,
            priors: &priors,
            config: &config,
            gsd: 0.1,
        };
        let exact = RectPoly::new(20.0, 5.0, Point::new(10.0, 2.5), 0.0);
        let (bd, cache) = evaluate_full(&ctx, &state_of(vec![exact], BOUNDS)).unwrap();
        assert_abs_diff_eq!(bd.e_data, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(data_fit(&cache, 0.5), 0.0, epsilon = 1e-12);

        let region = rect_region(0.0, 0.0, 10.0, 10.0);
        let ctx = EnergyContext { region: &region, ..ctx };
        let half = RectPoly::new(10.0, 5.0, Point::new(5.0, 2.5), 0.0);
        let (bd, _) = evaluate_full(&ctx, &state_of(vec![half], BOUNDS)).unwrap();
        assert_abs_diff_eq!(bd.e_data, 0.5, epsilon = 1e-12);

        let (bd, _) = evaluate_full(&ctx, &state_of(vec![], BOUNDS)).unwrap();
        assert_abs_diff_eq!(bd.e_data, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bd.total, config.gamma_d, epsilon = 1e-12);
        assert_eq!((bd.e_shape, bd.e_overlap, bd.e_collin), (0.0, 0.0, 0.0));
    }

    #[test]
    fn single_shape_at_prior_mode() {
        let priors = Priors {
            shape_prior: ShapePrior::new(vec![[2.0, 0.5]], [[0.1, 0.0], [0.0, 0.01]]).unwrap(),
            ..test_priors()
        };
        let config = EnergyConfig::default();
        let region = rect_region(0.0, 0.0, 20.0, 5.0);
        let ctx = EnergyContext {
            region: &region,
            priors: &priors,
            config: &config,
            gsd: 0.1,
        };
        let s = RectPoly::new(20.0, 5.0, Point::new(10.0, 2.5), 0.0);
        let (bd, _) = evaluate_full(&ctx, &state_of(vec![s], BOUNDS)).unwrap();
        let mode = priors.shape_prior.log_density(2.0, 0.5);
        assert_abs_diff_eq!(bd.e_data, 0.0, epsilon = 1e-12);
        assert_eq!((bd.e_overlap, bd.e_collin), (0.0, 0.0));
        assert_abs_diff_eq!(bd.total, config.gamma_s * -mode, epsilon = 1e-12);
    }

    #[test]
    fn overlap_examples() {
        let s = RectPoly::new(10.0, 2.0, Point::new(0.0, 0.0), 0.4);
        assert_abs_diff_eq!(overlap_term(&s, &s, 10f64.to_radians()), 20.0, epsilon = 1e-9);
        let t = RectPoly::new(10.0, 2.0, Point::new(0.0, 0.0), 0.4 + PI / 2.0);
        let v = overlap_term(&s, &t, 10f64.to_radians());
        assert!(v < 4.0 * 2.6e-18 * 1.01 && v >= 0.0, "{v}");
        assert_abs_diff_eq!((-40.5f64).exp(), 2.6e-18, epsilon = 0.05e-18);
        let far = RectPoly::new(10.0, 2.0, Point::new(50.0, 0.0), 0.4);
        assert_eq!(overlap_term(&s, &far, 10f64.to_radians()), 0.0);
    }

    #[test]
    fn empty_region_is_error() {
        let priors = test_priors();
        let config = EnergyConfig::default();
        let region = TargetRegion::new(Ring::new(vec![]), vec![]);
        let ctx = EnergyContext {
            region: &region,
            priors: &priors,
            config: &config,
            gsd: 0.1,
        };
        assert_eq!(evaluate_full(&ctx, &state_of(vec![], BOUNDS)).unwrap_err(), EnergyError::EmptyRegion);
    }

    #[test]
    fn matches_rasterized_oracle() {
        let priors = test_priors();
        let config = EnergyConfig::default();
        let region = rect_region(10.0, 10.0, 40.0, 40.0);
        let ctx = EnergyContext {
            region: &region,
            priors: &priors,
            config: &config,
            gsd: 0.1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..4 {
            let state = random_state(&mut rng, 5, 15.0, 45.0);
            let (bd, _) = evaluate_full(&ctx, &state).unwrap();
            let oracle = rasterized_energy(&ctx, &state, 0.05);
            let rel = (bd.total - oracle.total).abs() / oracle.total.abs();
            assert!(rel <= 0.01, "cached {} oracle {}", bd.total, oracle.total);
        }
    }

    #[test]
    fn disabled_rows_are_zero() {
        let priors = test_priors();
        let config = EnergyConfig::default();
        let region = rect_region(0.0, 0.0, 60.0, 60.0);
        let ctx = EnergyContext {
            region: &region,
            priors: &priors,
            config: &config,
            gsd: 0.1,
        };
        let a = RectPoly::new(20.0, 3.0, Point::new(30.0, 30.0), 0.0);
        let b = RectPoly::new(20.0, 3.0, Point::new(30.0, 31.0), 0.1);
        let c = RectPoly::new(20.0, 3.0, Point::new(32.0, 30.0), 1.4);
        let mut state = state_of(vec![a, b, c], BOUNDS);
        let (_, mut cache) = evaluate_full(&ctx, &state).unwrap();
        let off = RectPoly { b: 0.0, ..b };
        let pending = evaluate_delta(&ctx, &state, &cache, &[(1, off)]).unwrap();
        commit(&mut state, &mut cache, pending);
        assert_eq!((cache.unary_tau[1], cache.rect_area[1], cache.shape_logp[1]), (0.0, 0.0, 0.0));
        for j in 0..3 {
            assert_eq!(cache.pair_rect(1, j), 0.0);
            assert_eq!(cache.pair_tau(j, 1), 0.0);
            assert_eq!(cache.overlap(1, j), 0.0);
            assert_eq!(cache.collin(j, 1), 0.0);
        }
        assert_eq!(cache.totals.m_active, 2);
        assert!(audit_cache(&ctx, &state, &cache) <= 1e-12);

        // Same energy as a state without that shape at all.
        let (without, _) = evaluate_full(&ctx, &state_of(vec![a, c], BOUNDS)).unwrap();
        assert_abs_diff_eq!(cache.breakdown(&config).total, without.total, epsilon = 1e-9);
    }

    #[test]
    fn move_and_inverse_cancel() {
        let priors = test_priors();
        let config = EnergyConfig::default();
        let region = rect_region(0.0, 0.0, 60.0, 60.0);
        let ctx = EnergyContext {
            region: &region,
            priors: &priors,
            config: &config,
            gsd: 0.1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut state = random_state(&mut rng, 4, 10.0, 50.0);
        let (_, mut cache) = evaluate_full(&ctx, &state).unwrap();
        let orig = state.shapes[2];
        let moved = RectPoly::new(orig.a, orig.b, orig.center + Point::new(2.5, -1.0), orig.rho + 0.2);
        let p1 = evaluate_delta(&ctx, &state, &cache, &[(2, moved)]).unwrap();
        let d1 = p1.delta;
        commit(&mut state, &mut cache, p1);
        let p2 = evaluate_delta(&ctx, &state, &cache, &[(2, orig)]).unwrap();
        assert_abs_diff_eq!(d1 + p2.delta, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_out_of_bounds() {
        let priors = test_priors();
        let config = EnergyConfig::default();
        let region = rect_region(0.0, 0.0, 60.0, 60.0);
        let ctx = EnergyContext {
            region: &region,
            priors: &priors,
            config: &config,
            gsd: 0.1,
        };
        let s = RectPoly::new(20.0, 3.0, Point::new(30.0, 30.0), 0.0);
        let mut state = state_of(vec![s], BOUNDS);
        state.boxes[0] = ConstraintBox {
            center0: s.center,
            rho0: 0.0,
            l0: 10.0,
            w0: 4.0,
        };
        let (_, cache) = evaluate_full(&ctx, &state).unwrap();
        for bad in [
            RectPoly { a: 200.0, ..s },
            RectPoly { b: 13.0, ..s },
            RectPoly { a: 20.5, ..s },
            RectPoly {
                center: Point::new(30.0, 33.0),
                ..s
            },
        ] {
            assert_eq!(evaluate_delta(&ctx, &state, &cache, &[(0, bad)]), Err(MoveRejected));
        }
    }

    #[test]
    fn corrupted_cache_is_reported() {
        let priors = test_priors();
        let config = EnergyConfig::default();
        let region = rect_region(0.0, 0.0, 60.0, 60.0);
        let ctx = EnergyContext {
            region: &region,
            priors: &priors,
            config: &config,
            gsd: 0.1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = random_state(&mut rng, 4, 10.0, 50.0);
        let (_, mut cache) = evaluate_full(&ctx, &state).unwrap();
        assert_eq!(audit_cache(&ctx, &state, &cache), 0.0);
        cache.unary_tau[1] += 0.25;
        assert!(audit_cache(&ctx, &state, &cache) >= 0.25 / cache.unary_tau[1].max(1.0) - 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn permutation_invariant(seed in any::<u64>(), n in 2usize..6) {
            let priors = test_priors();
            let config = EnergyConfig::default();
            let region = rect_region(0.0, 0.0, 60.0, 60.0);
            let ctx = EnergyContext { region: &region, priors: &priors, config: &config, gsd: 0.1 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let state = random_state(&mut rng, n, 10.0, 50.0);
            let mut rev = state.clone();
            rev.shapes.reverse();
            rev.boxes.reverse();
            let (a, _) = evaluate_full(&ctx, &state).unwrap();
            let (b, _) = evaluate_full(&ctx, &rev).unwrap();
            prop_assert!((a.total - b.total).abs() <= 1e-9 * a.total.abs().max(1.0));
        }

        #[test]
        fn breakdown_sums(seed in any::<u64>(), n in 0usize..6) {
            let priors = test_priors();
            let config = EnergyConfig { gamma_s: 0.7, gamma_c: 0.2, gamma_o: 3.0, ..EnergyConfig::default() };
            let region = rect_region(0.0, 0.0, 60.0, 60.0);
            let ctx = EnergyContext { region: &region, priors: &priors, config: &config, gsd: 0.1 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let state = random_state(&mut rng, n, 10.0, 50.0);
            let (bd, _) = evaluate_full(&ctx, &state).unwrap();
            let sum = config.gamma_d * bd.e_data + config.gamma_s * bd.e_shape
                + config.gamma_o * bd.e_overlap + config.gamma_c * bd.e_collin;
            prop_assert!((bd.total - sum).abs() <= 1e-12 * sum.abs().max(1.0));
            prop_assert!(bd.e_overlap >= 0.0 && bd.e_collin >= 0.0);
        }

        #[test]
        fn two_shapes_nonnegative_data(seed in any::<u64>()) {
            let priors = test_priors();
            let config = EnergyConfig::default();
            let region = rect_region(0.0, 0.0, 60.0, 60.0);
            let ctx = EnergyContext { region: &region, priors: &priors, config: &config, gsd: 0.1 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let state = random_state(&mut rng, 2, 0.0, 60.0);
            let (bd, _) = evaluate_full(&ctx, &state).unwrap();
            prop_assert!(bd.e_data >= -1e-12);
        }
    }
}
