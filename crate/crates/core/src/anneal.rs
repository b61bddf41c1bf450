//! Simulated annealing over a model state with five local moves.

use crate::energy::{
    audit_cache, commit, evaluate_delta, evaluate_full, EnergyBreakdown, EnergyCache, EnergyContext,
    EnergyError, ModelState, PendingUpdate,
};
use crate::geometry::{Point, RectPoly};
use crate::priors::pair_features;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest step of each move kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepBounds {
    /// Length, px (integer).
    pub delta_l: u32,
    /// Width, px (integer).
    pub delta_w: u32,
    /// Angle, radians.
    pub delta_rho: f64,
    /// Shift along the shape axis, px.
    pub delta_t_ax: f64,
    pub delta_x: f64,
    pub delta_y: f64,
}

impl Default for StepBounds {
    fn default() -> Self {
        Self {
            delta_l: 10,
            delta_w: 2,
            delta_rho: 5f64.to_radians(),
            delta_t_ax: 10.0,
            delta_x: 3.0,
            delta_y: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveKind {
    LengthWidth,
    Angle,
    ShiftAxis,
    ShiftFree,
    MergeAbsorb,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Move {
    LengthWidth { target: usize, da: i32, db: i32 },
    Angle { target: usize, drho: f64 },
    ShiftAxis { target: usize, dt: f64 },
    ShiftFree { target: usize, dx: f64, dy: f64 },
    MergeAbsorb { target: usize, partner: usize },
}

impl Move {
    pub fn kind(&self) -> MoveKind {
        match self {
            Move::LengthWidth { .. } => MoveKind::LengthWidth,
            Move::Angle { .. } => MoveKind::Angle,
            Move::ShiftAxis { .. } => MoveKind::ShiftAxis,
            Move::ShiftFree { .. } => MoveKind::ShiftFree,
            Move::MergeAbsorb { .. } => MoveKind::MergeAbsorb,
        }
    }

    pub fn target(&self) -> usize {
        match *self {
            Move::LengthWidth { target, .. }
            | Move::Angle { target, .. }
            | Move::ShiftAxis { target, .. }
            | Move::ShiftFree { target, .. }
            | Move::MergeAbsorb { target, .. } => target,
        }
    }

    /// Shapes replaced by this move, or `None` if the result would break the
    /// bounds or a constraint box.
    pub fn changes(&self, state: &ModelState) -> Option<Vec<(usize, RectPoly)>> {
        let changes = match *self {
            Move::LengthWidth { target, da, db } => {
                let s = state.shapes[target];
                let a = s.a + f64::from(da);
                let b = s.b + f64::from(db);
                if a < 0.0 || b < 0.0 {
                    return None;
                }
                vec![(target, RectPoly { a, b, ..s })]
            }
            Move::Angle { target, drho } => {
                let s = state.shapes[target];
                vec![(target, RectPoly::new(s.a, s.b, s.center, s.rho + drho))]
            }
            Move::ShiftAxis { target, dt } => {
                let s = state.shapes[target];
                let center = s.center + s.axis() * dt;
                vec![(target, RectPoly { center, ..s })]
            }
            Move::ShiftFree { target, dx, dy } => {
                let s = state.shapes[target];
                let center = s.center + Point::new(dx, dy);
                vec![(target, RectPoly { center, ..s })]
            }
            Move::MergeAbsorb { target, partner } => apply_merge(state, target, partner)?,
        };
        changes
            .iter()
            .all(|(i, s)| state.admits(*i, s))
            .then_some(changes)
    }
}

/// Extends `u` along its own axis to cover the projections of both shapes'
/// vertices and disables `v`. `None` if the merged length would fall below
/// the lower length bound or the new center would leave `u`'s box.
pub fn apply_merge(state: &ModelState, u: usize, v: usize) -> Option<Vec<(usize, RectPoly)>> {
    if u == v || !state.is_active(u) || !state.is_active(v) {
        return None;
    }
    let su = state.shapes[u];
    let sv = state.shapes[v];
    let axis = su.axis();
    let (lo, hi) = su
        .corners()
        .iter()
        .chain(sv.corners().iter())
        .map(|p| (*p - su.center).dot(axis))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    let a = (hi - lo - 1e-9).ceil().min(f64::from(state.bounds.a_hi));
    if a < f64::from(state.bounds.a_lo) {
        return None;
    }
    let center = su.center + axis * (0.5 * (lo + hi));
    let merged = RectPoly { a, center, ..su };
    if !state.boxes[u].contains(center) {
        return None;
    }
    Some(vec![(u, merged), (v, RectPoly { b: 0.0, ..sv })])
}

/// Shapes that may be absorbed into `u`.
pub fn merge_partners(ctx: &EnergyContext, state: &ModelState, u: usize) -> Vec<usize> {
    if !state.is_active(u) {
        return Vec::new();
    }
    let su = &state.shapes[u];
    (0..state.len())
        .filter(|&v| {
            v != u
                && state.is_active(v)
                && ctx
                    .priors
                    .collinearity
                    .probability(&pair_features(su, &state.shapes[v], ctx.gsd))
                    > ctx.config.merge_threshold
        })
        .collect()
}

const PROPOSAL_TRIES: usize = 10;
const DISABLED_TARGET_MASS: f64 = 0.1;

/// Draws a move target and kind. Disabled shapes get a tenth of the target
/// mass when active shapes also exist and can only be re-enabled by a
/// length/width move. Returns the move together with its shape changes, or
/// `None` when every retry broke a bound or box.
pub fn propose_move(
    ctx: &EnergyContext,
    state: &ModelState,
    steps: &StepBounds,
    rng: &mut impl Rng,
) -> Option<(Move, Vec<(usize, RectPoly)>)> {
    let n = state.len();
    if n == 0 {
        return None;
    }
    let active: Vec<usize> = (0..n).filter(|&i| state.is_active(i)).collect();
    let disabled: Vec<usize> = (0..n).filter(|&i| !state.is_active(i)).collect();
    let pick_disabled = if active.is_empty() {
        true
    } else if disabled.is_empty() {
        false
    } else {
        rng.random::<f64>() < DISABLED_TARGET_MASS
    };
    let target = if pick_disabled {
        disabled[rng.random_range(0..disabled.len())]
    } else {
        active[rng.random_range(0..active.len())]
    };

    if pick_disabled {
        for _ in 0..PROPOSAL_TRIES {
            let dl = steps.delta_l as i32;
            let mv = Move::LengthWidth {
                target,
                da: rng.random_range(-dl..=dl),
                db: rng.random_range(1..=steps.delta_w.max(1) as i32),
            };
            if let Some(ch) = mv.changes(state) {
                return Some((mv, ch));
            }
        }
        return None;
    }

    let partners = merge_partners(ctx, state, target);
    let kinds = if partners.is_empty() { 4 } else { 5 };
    let kind = rng.random_range(0..kinds);
    for _ in 0..PROPOSAL_TRIES {
        let mv = match kind {
            0 => {
                let (dl, dw) = (steps.delta_l as i32, steps.delta_w as i32);
                let (da, db) = loop {
                    let da = rng.random_range(-dl..=dl);
                    let db = rng.random_range(-dw..=dw);
                    if da != 0 || db != 0 || (dl == 0 && dw == 0) {
                        break (da, db);
                    }
                };
                Move::LengthWidth { target, da, db }
            }
            1 => Move::Angle {
                target,
                drho: symmetric(rng, steps.delta_rho),
            },
            2 => Move::ShiftAxis {
                target,
                dt: symmetric(rng, steps.delta_t_ax),
            },
            3 => Move::ShiftFree {
                target,
                dx: symmetric(rng, steps.delta_x),
                dy: symmetric(rng, steps.delta_y),
            },
            _ => Move::MergeAbsorb {
                target,
                partner: partners[rng.random_range(0..partners.len())],
            },
        };
        if let Some(ch) = mv.changes(state) {
            return Some((mv, ch));
        }
    }
    None
}

fn symmetric(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Initial temperature from 100 sampled moves: the median uphill energy
/// change divided by `ln(1.25)`, so that roughly 80% of typical uphill moves
/// are accepted at the start. Falls back to 1 when no sampled move goes
/// uphill.
pub fn calibrate_t0(
    ctx: &EnergyContext,
    state: &ModelState,
    cache: &EnergyCache,
    steps: &StepBounds,
    rng: &mut impl Rng,
) -> f64 {
    let mut uphill: Vec<f64> = (0..100)
        .filter_map(|_| {
            let (_, ch) = propose_move(ctx, state, steps, rng)?;
            let p = evaluate_delta(ctx, state, cache, &ch).ok()?;
            (p.delta > 0.0).then_some(p.delta)
        })
        .collect();
    t0_from_uphill(&mut uphill)
}

fn t0_from_uphill(uphill: &mut [f64]) -> f64 {
    if uphill.is_empty() {
        return 1.0;
    }
    uphill.sort_by(f64::total_cmp);
    let m = uphill.len();
    let median = if m % 2 == 1 {
        uphill[m / 2]
    } else {
        0.5 * (uphill[m / 2 - 1] + uphill[m / 2])
    };
    median / 1.25f64.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealConfig {
    pub restarts: usize,
    pub iters_per_temp: usize,
    pub cooling: f64,
    /// Explicit initial temperature; calibrated per restart when absent.
    pub t0: Option<f64>,
    pub t_min_ratio: f64,
    pub steps: StepBounds,
    pub seed: u64,
    /// Accepted moves between cache audits.
    pub audit_every: usize,
    pub record_trace: bool,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            restarts: 16,
            iters_per_temp: 15000,
            cooling: 0.9,
            t0: None,
            t_min_ratio: 1e-4,
            steps: StepBounds::default(),
            seed: 0,
            audit_every: 1000,
            record_trace: false,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.restarts == 0 {
            return Err("restarts must be >= 1".into());
        }
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return Err("cooling must lie in (0, 1)".into());
        }
        if self.t0.is_some_and(|t| !(t >= 0.0)) {
            return Err("t0 must be >= 0".into());
        }
        if !(self.t_min_ratio >= 0.0) {
            return Err("t_min_ratio must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub restart: usize,
    pub iteration: u64,
    pub temperature: f64,
    pub energy: f64,
    pub best: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealResult {
    pub state: ModelState,
    pub breakdown: EnergyBreakdown,
    /// Restart that produced the returned state.
    pub restart: usize,
    pub trace: Vec<TraceRow>,
    /// Worst cache discrepancy seen by the periodic audits.
    pub max_audit: f64,
}

struct RestartOutcome {
    state: ModelState,
    breakdown: EnergyBreakdown,
    trace: Vec<TraceRow>,
    max_audit: f64,
}

fn run_restart(
    ctx: &EnergyContext,
    init: &ModelState,
    config: &AnnealConfig,
    restart: usize,
) -> Result<RestartOutcome, EnergyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(restart as u64));
    let mut state = init.clone();
    let (mut current, mut cache) = evaluate_full(ctx, &state)?;
    let t0 = match config.t0 {
        Some(t) => t,
        None => calibrate_t0(ctx, &state, &cache, &config.steps, &mut rng),
    };
    let mut best_state = state.clone();
    let mut best = current;
    let mut trace = Vec::new();
    let mut max_audit: f64 = 0.0;
    let mut accepted_total = 0usize;
    let mut iteration = 0u64;
    let mut temperature = t0;

    loop {
        let mut accepted_level = 0usize;
        for _ in 0..config.iters_per_temp {
            iteration += 1;
            let pending: Option<PendingUpdate> = propose_move(ctx, &state, &config.steps, &mut rng)
                .and_then(|(_, ch)| evaluate_delta(ctx, &state, &cache, &ch).ok());
            let mut accepted = false;
            if let Some(p) = pending {
                let delta = p.delta;
                accepted = delta <= 0.0 || rng.random::<f64>() < (-delta / temperature).exp();
                if accepted {
                    current = p.breakdown;
                    commit(&mut state, &mut cache, p);
                    accepted_level += 1;
                    accepted_total += 1;
                    if config.audit_every > 0 && accepted_total % config.audit_every == 0 {
                        let drift = audit_cache(ctx, &state, &cache);
                        max_audit = max_audit.max(drift);
                        if drift > 1e-6 {
                            log::warn!("cache drift {drift:e} after {accepted_total} moves, rebuilding");
                            (current, cache) = evaluate_full(ctx, &state)?;
                        } else {
                            cache.resync(&state);
                            current = cache.breakdown(ctx.config);
                        }
                    }
                    if current.total < best.total {
                        best = current;
                        best_state.clone_from(&state);
                    }
                }
            }
            if config.record_trace {
                trace.push(TraceRow {
                    restart,
                    iteration,
                    temperature,
                    energy: current.total,
                    best: best.total,
                    accepted,
                });
            }
        }
        temperature *= config.cooling;
        if accepted_level == 0 || temperature < t0 * config.t_min_ratio {
            break;
        }
    }
    // Report the best state's energy from scratch rather than the running sums.
    let (breakdown, _) = evaluate_full(ctx, &best_state)?;
    Ok(RestartOutcome {
        state: best_state,
        breakdown,
        trace,
        max_audit,
    })
}

/// Independent restarts (seeded `seed + index`) run in parallel; the lowest
/// final energy wins, ties going to the lowest restart index.
pub fn anneal(
    ctx: &EnergyContext,
    init: &ModelState,
    config: &AnnealConfig,
) -> Result<AnnealResult, EnergyError> {
    config.validate().map_err(EnergyError::InvalidConfig)?;
    init.validate()?;
    let outcomes: Vec<RestartOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(ctx, init, config, r))
        .collect::<Result<_, _>>()?;
    let mut best = 0;
    for (r, o) in outcomes.iter().enumerate() {
        if o.breakdown.total < outcomes[best].breakdown.total {
            best = r;
        }
    }
    let max_audit = outcomes.iter().map(|o| o.max_audit).fold(0.0, f64::max);
    let mut trace = Vec::new();
    let mut winner = None;
    for (r, o) in outcomes.into_iter().enumerate() {
        trace.extend(o.trace);
        if r == best {
            winner = Some((o.state, o.breakdown));
        }
    }
    let (state, breakdown) = winner.expect("at least one restart");
    Ok(AnnealResult {
        state,
        breakdown,
        restart: best,
        trace,
        max_audit,
    })
}
