//! Motion restricted to a finite set of glide directions.
//!
//! Each disclination moves along the admissible direction most aligned with its force,
//! with velocity `(F_k·g)g`. Where two directions tie the right-hand side becomes the
//! segment between the two projections and the dynamics is a differential inclusion.
//! Crossing the switching set `F_k·(g⁺-g⁻) = 0` is classified by the one-sided rates:
//! both pushing across gives cross-slip, both pushing into it gives sliding (fine
//! cross-slip) with the blended field `(1-α)F⁻ + αF⁺`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{
    self, Diagnostics, Event, EventKind, EventMonitor, FlowError, IntegratorSettings, Subjects,
    Termination, Trace, TraceBuilder, EVENT_TIME_TOL, STATIONARY_FORCE,
};
use crate::geometry::Vec2;
use crate::model::{self, Configuration, Disclination, ModelError};
use crate::ode::{self, OdeSystem, Step, StepError, Stepper};

/// Relative tolerance for declaring two directions equally aligned.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;
/// Finite-difference step for the switching-surface normal.
pub const NORMAL_FD_STEP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GlideError {
    #[error("invalid glide set: {0}")]
    InvalidGlideSet(String),
    #[error("sliding requires F⁻·N > 0 and F⁺·N < 0 (got {minus} and {plus})")]
    NotSliding { minus: f64, plus: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Finite set of unit glide directions, closed under negation and spanning the plane.
///
/// Serialized as `"axes"`, `"hex"` or an explicit list of directions.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "GlideSetRepr")]
pub struct GlideSet {
    directions: Vec<Vec2>,
}

impl GlideSet {
    pub fn new(directions: Vec<Vec2>) -> Result<Self, GlideError> {
        let bad = |m: &str| Err(GlideError::InvalidGlideSet(m.to_string()));
        let m = directions.len();
        if m < 4 || !m.is_multiple_of(2) {
            return bad("needs an even number (at least 4) of directions");
        }
        for g in &directions {
            if !g.is_finite() || (g.norm() - 1.0).abs() > 1e-12 {
                return bad("directions must be unit vectors");
            }
        }
        for (i, a) in directions.iter().enumerate() {
            for b in &directions[i + 1..] {
                if (*a - *b).norm() < 1e-12 {
                    return bad("directions must be pairwise distinct");
                }
            }
            if !directions.iter().any(|b| (*a + *b).norm() < 1e-12) {
                return bad("set must be closed under negation");
            }
        }
        let spans = directions
            .iter()
            .any(|a| directions.iter().any(|b| a.cross(*b).abs() > 1e-9));
        if !spans {
            return bad("directions must span the plane");
        }
        Ok(Self { directions })
    }

    /// `{±e1, ±e2}`.
    pub fn axes() -> Self {
        Self {
            directions: vec![Vec2::E1, Vec2::E2, -Vec2::E1, -Vec2::E2],
        }
    }

    /// `{±(cos jπ/3, sin jπ/3)}, j = 0, 1, 2`.
    pub fn hexagonal() -> Self {
        let directions = (0..6)
            .map(|j| Vec2::polar(1.0, j as f64 * std::f64::consts::PI / 3.0))
            .collect();
        Self { directions }
    }

    /// `"axes"` or `"hex"` (also `"hexagonal"`).
    pub fn named(name: &str) -> Result<Self, GlideError> {
        match name {
            "axes" => Ok(Self::axes()),
            "hex" | "hexagonal" => Ok(Self::hexagonal()),
            other => Err(GlideError::InvalidGlideSet(format!(
                "unknown glide set {other:?}; expected \"axes\", \"hex\" or a list of directions"
            ))),
        }
    }

    /// Name of a built-in set, if this is one.
    pub fn name(&self) -> Option<&'static str> {
        if *self == Self::axes() {
            Some("axes")
        } else if *self == Self::hexagonal() {
            Some("hex")
        } else {
            None
        }
    }

    pub fn directions(&self) -> &[Vec2] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GlideSetRepr {
    Named(String),
    Directions(Vec<Vec2>),
}

impl TryFrom<GlideSetRepr> for GlideSet {
    type Error = GlideError;
    fn try_from(r: GlideSetRepr) -> Result<Self, GlideError> {
        match r {
            GlideSetRepr::Named(name) => Self::named(&name),
            GlideSetRepr::Directions(v) => Self::new(v),
        }
    }
}

impl Serialize for GlideSet {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let repr = match self.name() {
            Some(name) => GlideSetRepr::Named(name.to_string()),
            None => GlideSetRepr::Directions(self.directions.clone()),
        };
        repr.serialize(ser)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStatus {
    ZeroForce,
    Unique,
    Tie,
}

/// Maximally aligned direction(s) and the corresponding projected forces.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSelection {
    pub status: SelectionStatus,
    /// Empty for zero force, one direction when unique, two on a tie.
    pub directions: Vec<Vec2>,
    pub projected_forces: Vec<Vec2>,
    /// Indices of `directions` in the glide set.
    pub indices: Vec<usize>,
    pub force: Vec2,
}

/// Picks the glide direction(s) maximizing `F·g`.
pub fn select_directions(force: Vec2, gs: &GlideSet, tie_tol: f64) -> DirectionSelection {
    let norm = force.norm();
    if norm == 0.0 {
        return DirectionSelection {
            status: SelectionStatus::ZeroForce,
            directions: vec![],
            projected_forces: vec![Vec2::ZERO],
            indices: vec![],
            force,
        };
    }
    let mut ranked: Vec<(usize, f64)> = gs
        .directions
        .iter()
        .enumerate()
        .map(|(i, g)| (i, force.dot(*g)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let (i0, p0) = ranked[0];
    let (i1, p1) = ranked[1];
    let indices = if p0 - p1 <= tie_tol * norm {
        vec![i0, i1]
    } else {
        vec![i0]
    };
    let directions: Vec<Vec2> = indices.iter().map(|&i| gs.directions[i]).collect();
    let projected_forces = directions.iter().map(|&g| force.dot(g) * g).collect();
    DirectionSelection {
        status: if indices.len() == 2 {
            SelectionStatus::Tie
        } else {
            SelectionStatus::Unique
        },
        directions,
        projected_forces,
        indices,
        force,
    }
}

/// Convex hull of the admissible projected forces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForceSet {
    Zero,
    Point(Vec2),
    /// Endpoints `(F·g±)g⁻` and `(F·g±)g⁺`.
    Segment(Vec2, Vec2),
}

pub fn convexified_force(sel: &DirectionSelection) -> ForceSet {
    match sel.status {
        SelectionStatus::ZeroForce => ForceSet::Zero,
        SelectionStatus::Unique => ForceSet::Point(sel.projected_forces[0]),
        SelectionStatus::Tie => {
            let common = sel.force.dot(sel.directions[0]);
            ForceSet::Segment(common * sel.directions[0], common * sel.directions[1])
        }
    }
}

/// `α = a⁻ / (a⁻ - a⁺)` from the normal rates of the two one-sided fields.
fn alpha_from_rates(minus: f64, plus: f64) -> f64 {
    minus / (minus - plus)
}

/// Blending weight of `F⁺` that keeps `(1-α)F⁻ + αF⁺` tangent to the switching set.
pub fn sliding_coefficient(f_minus: Vec2, f_plus: Vec2, normal: Vec2) -> Result<f64, GlideError> {
    let minus = f_minus.dot(normal);
    let plus = f_plus.dot(normal);
    if !(minus > 0.0 && plus < 0.0) {
        return Err(GlideError::NotSliding { minus, plus });
    }
    Ok(alpha_from_rates(minus, plus))
}

/// Data attached to sliding events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlidingInfo {
    pub active_index: usize,
    /// Unit normal of the switching set in the active disclination's plane, pointing to the
    /// side where `g⁺` alone is maximal.
    pub normal: Vec2,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Rest,
    Glide(usize),
    /// Confined to the switching set between `minus` and `plus`; `attracting` is false for
    /// a start on an unstable switching set, where both sides push away.
    Slide {
        minus: usize,
        plus: usize,
        attracting: bool,
    },
}

struct GlideSystem<'a> {
    template: &'a Configuration,
    gs: &'a GlideSet,
    modes: Vec<Mode>,
}

/// Per-disclination sliding quantities at a state.
#[derive(Debug, Clone, Copy)]
struct SlideRates {
    minus_rate: f64,
    plus_rate: f64,
    alpha: f64,
    normal: Vec2,
}

impl GlideSystem<'_> {
    fn dir(&self, i: usize) -> Vec2 {
        self.gs.directions[i]
    }

    fn force_on(items: &[Disclination], k: usize) -> Result<Vec2, ModelError> {
        model::force_parts_of(items, k).map(|p| p.total())
    }

    /// Switching function `F_k·(g⁺ - g⁻)`.
    fn switching(items: &[Disclination], k: usize, g0: Vec2) -> Result<f64, ModelError> {
        Ok(Self::force_on(items, k)?.dot(g0))
    }

    /// Gradient of the switching function with respect to `Ξ_k`.
    fn switching_gradient(items: &[Disclination], k: usize, g0: Vec2) -> Result<Vec2, ModelError> {
        let h = NORMAL_FD_STEP;
        let mut work = items.to_vec();
        let mut partial = |delta: Vec2| -> Result<f64, ModelError> {
            work[k].pos = items[k].pos + delta;
            let ep = Self::switching(&work, k, g0)?;
            work[k].pos = items[k].pos - delta;
            let em = Self::switching(&work, k, g0)?;
            work[k].pos = items[k].pos;
            Ok((ep - em) / (2.0 * h))
        };
        Ok(Vec2::new(partial(Vec2::new(h, 0.0))?, partial(Vec2::new(0.0, h))?))
    }

    /// Rate of change of the switching function due to the other disclinations' motion.
    fn others_rate(
        items: &[Disclination],
        k: usize,
        g0: Vec2,
        velocities: &[Vec2],
    ) -> Result<f64, ModelError> {
        let vmax = velocities
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max);
        if vmax == 0.0 {
            return Ok(0.0);
        }
        let h = NORMAL_FD_STEP / vmax;
        let shifted = |sign: f64| -> Vec<Disclination> {
            items
                .iter()
                .enumerate()
                .map(|(j, d)| Disclination {
                    angle: d.angle,
                    pos: if j == k { d.pos } else { d.pos + sign * h * velocities[j] },
                })
                .collect()
        };
        let ep = Self::switching(&shifted(1.0), k, g0)?;
        let em = Self::switching(&shifted(-1.0), k, g0)?;
        Ok((ep - em) / (2.0 * h))
    }

    /// One-sided rates of the switching function between directions `minus` and `plus`.
    fn slide_rates(
        &self,
        items: &[Disclination],
        k: usize,
        force: Vec2,
        minus: usize,
        plus: usize,
        velocities: &[Vec2],
    ) -> Result<SlideRates, ModelError> {
        let (gm, gp) = (self.dir(minus), self.dir(plus));
        let g0 = gp - gm;
        let grad = Self::switching_gradient(items, k, g0)?;
        let others = Self::others_rate(items, k, g0, velocities)?;
        let f_minus = force.dot(gm) * gm;
        let f_plus = force.dot(gp) * gp;
        let minus_rate = grad.dot(f_minus) + others;
        let plus_rate = grad.dot(f_plus) + others;
        Ok(SlideRates {
            minus_rate,
            plus_rate,
            alpha: alpha_from_rates(minus_rate, plus_rate),
            normal: grad.normalized().unwrap_or(Vec2::ZERO),
        })
    }

    /// Velocities of all disclinations under the current modes.
    fn velocities(
        &self,
        items: &[Disclination],
    ) -> Result<(Vec<Vec2>, Vec<Option<SlideRates>>), ModelError> {
        let forces = model::forces_of(items)?;
        let mut v = vec![Vec2::ZERO; items.len()];
        let mut sliding = Vec::new();
        for (k, mode) in self.modes.iter().enumerate() {
            match *mode {
                Mode::Rest => {}
                Mode::Glide(i) => {
                    let g = self.dir(i);
                    v[k] = forces[k].dot(g) * g;
                }
                Mode::Slide { minus, plus, .. } => {
                    let (gm, gp) = (self.dir(minus), self.dir(plus));
                    v[k] = 0.5 * (forces[k].dot(gm) * gm + forces[k].dot(gp) * gp);
                    sliding.push((k, minus, plus));
                }
            }
        }
        let mut rates = vec![None; items.len()];
        // Sliding disclinations see each other's blended velocity; a few sweeps settle it.
        let sweeps = match sliding.len() {
            0 => 0,
            1 => 1,
            _ => 3,
        };
        for _ in 0..sweeps {
            for &(k, minus, plus) in &sliding {
                let r = self.slide_rates(items, k, forces[k], minus, plus, &v)?;
                let (gm, gp) = (self.dir(minus), self.dir(plus));
                let alpha = if r.alpha.is_finite() { r.alpha } else { 0.5 };
                v[k] = (1.0 - alpha) * (forces[k].dot(gm) * gm) + alpha * (forces[k].dot(gp) * gp);
                rates[k] = Some(r);
            }
        }
        Ok((v, rates))
    }
}

impl OdeSystem for GlideSystem<'_> {
    type Error = ModelError;

    fn dim(&self) -> usize {
        2 * self.template.len()
    }

    fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), ModelError> {
        let items = self.template.items_at(y);
        let (v, _) = self.velocities(&items)?;
        for (k, vk) in v.iter().enumerate() {
            dydt[2 * k] = vk.x;
            dydt[2 * k + 1] = vk.y;
        }
        Ok(())
    }
}

/// What happens to one disclination at a located switching time.
#[derive(Debug, Clone, Copy)]
struct Switch {
    k: usize,
    time: f64,
    kind: SwitchKind,
}

#[derive(Debug, Clone, Copy)]
enum SwitchKind {
    /// Another direction became at least as aligned as the current one.
    Crossing { competitor: usize },
    /// The sliding condition failed; continue along the given direction.
    Exit { along: usize },
    /// A resting disclination started to feel a force.
    Wake,
}

struct Integrator<'a> {
    template: &'a Configuration,
    gs: &'a GlideSet,
    tie_tol: f64,
}

impl<'a> Integrator<'a> {
    fn system(&self, modes: &[Mode]) -> GlideSystem<'a> {
        GlideSystem {
            template: self.template,
            gs: self.gs,
            modes: modes.to_vec(),
        }
    }

    /// Margin applied to the crossing test, relative to the force magnitude.
    fn margin(&self, force: Vec2) -> f64 {
        self.tie_tol * force.norm()
    }

    /// Best competitor of `current` and the excess `max F·g' - F·g - margin`.
    fn crossing_excess(&self, force: Vec2, current: usize) -> (usize, f64) {
        let mine = force.dot(self.gs.directions[current]);
        let (best, val) = self
            .gs
            .directions
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != current)
            .map(|(i, g)| (i, force.dot(*g)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("glide set has several directions");
        (best, val - mine - self.margin(force))
    }

    /// Event functions for disclination `k` at state `y`; an event is a sign change from
    /// non-positive to positive.
    fn event_value(&self, sys: &GlideSystem, y: &[f64], k: usize) -> Result<f64, ModelError> {
        let items = self.template.items_at(y);
        match sys.modes[k] {
            Mode::Rest => Ok(GlideSystem::force_on(&items, k)?.norm() - STATIONARY_FORCE),
            Mode::Glide(i) => {
                let f = GlideSystem::force_on(&items, k)?;
                Ok(self.crossing_excess(f, i).1)
            }
            Mode::Slide { .. } => {
                let (_, rates) = sys.velocities(&items)?;
                let r = rates[k].expect("sliding rates");
                Ok(self.slide_exit_value(sys.modes[k], r))
            }
        }
    }

    /// Positive once the sliding motion can no longer be sustained.
    fn slide_exit_value(&self, mode: Mode, r: SlideRates) -> f64 {
        let Mode::Slide { attracting, .. } = mode else {
            unreachable!()
        };
        if attracting {
            // needs minus_rate > 0 > plus_rate
            r.plus_rate.max(-r.minus_rate)
        } else {
            r.minus_rate.max(-r.plus_rate)
        }
    }

    fn exit_direction(&self, mode: Mode, r: SlideRates) -> usize {
        let Mode::Slide {
            minus,
            plus,
            attracting,
        } = mode
        else {
            unreachable!()
        };
        let toward_plus = if attracting {
            r.plus_rate > -r.minus_rate
        } else {
            r.minus_rate > -r.plus_rate
        };
        if toward_plus {
            plus
        } else {
            minus
        }
    }

    /// Earliest switching time inside an accepted step.
    fn earliest_switch(&self, sys: &GlideSystem, step: &Step) -> Result<Option<Switch>, ModelError> {
        let mut best: Option<Switch> = None;
        for k in 0..self.template.len() {
            let end = self.event_value(sys, &step.y1, k)?;
            if end <= 0.0 {
                continue;
            }
            let start = self.event_value(sys, &step.y0, k)?;
            let time = if start > 0.0 {
                step.t0
            } else {
                let g = |t: f64| self.event_value(sys, &step.interpolate(t), k).unwrap_or(1.0);
                ode::bisect(g, step.t0, step.t1, start, EVENT_TIME_TOL).1
            };
            if best.is_none_or(|b| time < b.time) {
                let y = step.interpolate(time);
                let items = self.template.items_at(&y);
                let kind = match sys.modes[k] {
                    Mode::Rest => SwitchKind::Wake,
                    Mode::Glide(i) => {
                        let f = GlideSystem::force_on(&items, k)?;
                        SwitchKind::Crossing {
                            competitor: self.crossing_excess(f, i).0,
                        }
                    }
                    Mode::Slide { .. } => {
                        let (_, rates) = sys.velocities(&items)?;
                        SwitchKind::Exit {
                            along: self.exit_direction(sys.modes[k], rates[k].expect("rates")),
                        }
                    }
                };
                best = Some(Switch { k, time, kind });
            }
        }
        Ok(best)
    }

    /// Mode for disclination `k` at a state where `minus` and `plus` are equally aligned,
    /// given that it arrives from the `minus` side (`arriving = true`) or starts there.
    fn resolve_tie(
        &self,
        modes: &[Mode],
        items: &[Disclination],
        k: usize,
        minus: usize,
        plus: usize,
        arriving: bool,
        time: f64,
        events: &mut Vec<Event>,
    ) -> Result<Mode, ModelError> {
        let mut trial = modes.to_vec();
        trial[k] = Mode::Slide {
            minus,
            plus,
            attracting: true,
        };
        let sys = self.system(&trial);
        let (_, rates) = sys.velocities(items)?;
        let r = rates[k].expect("rates");
        let force = GlideSystem::force_on(items, k)?;
        let info = |alpha: f64| SlidingInfo {
            active_index: k,
            normal: r.normal,
            alpha,
        };
        let mode = if r.plus_rate > 0.0 && (r.minus_rate > 0.0 || arriving) {
            events.push(Event::new(EventKind::CrossSlip, time, Subjects::One(k)));
            Mode::Glide(plus)
        } else if r.minus_rate > 0.0 && r.plus_rate < 0.0 {
            let mut e = Event::new(EventKind::SlidingBegin, time, Subjects::One(k));
            e.sliding = Some(info(r.alpha));
            events.push(e);
            Mode::Slide {
                minus,
                plus,
                attracting: true,
            }
        } else if !arriving && r.minus_rate < 0.0 && r.plus_rate > 0.0 {
            // unstable switching set: the symmetric Filippov solution stays on it
            let mut e = Event::new(EventKind::SlidingBegin, time, Subjects::One(k));
            e.sliding = Some(info(r.alpha));
            events.push(e);
            Mode::Slide {
                minus,
                plus,
                attracting: false,
            }
        } else if arriving {
            // grazing contact; keep the maximal direction on this side
            let (_, excess) = self.crossing_excess(force, minus);
            if excess > 0.0 {
                Mode::Glide(plus)
            } else {
                Mode::Glide(minus)
            }
        } else {
            // both one-sided fields push to the same side
            Mode::Glide(if r.minus_rate < 0.0 { minus } else { plus })
        };
        Ok(mode)
    }

    fn initial_modes(
        &self,
        items: &[Disclination],
        events: &mut Vec<Event>,
    ) -> Result<Vec<Mode>, ModelError> {
        let forces = model::forces_of(items)?;
        let mut modes: Vec<Mode> = forces
            .iter()
            .map(|&f| {
                if f.norm() < STATIONARY_FORCE {
                    return Mode::Rest;
                }
                let sel = select_directions(f, self.gs, self.tie_tol);
                match sel.status {
                    SelectionStatus::ZeroForce => Mode::Rest,
                    SelectionStatus::Unique => Mode::Glide(sel.indices[0]),
                    SelectionStatus::Tie => Mode::Slide {
                        minus: sel.indices[0],
                        plus: sel.indices[1],
                        attracting: true,
                    },
                }
            })
            .collect();
        for k in 0..modes.len() {
            if let Mode::Slide { minus, plus, .. } = modes[k] {
                modes[k] = self.resolve_tie(&modes, items, k, minus, plus, false, 0.0, events)?;
            }
        }
        Ok(modes)
    }

    fn apply_switch(
        &self,
        modes: &mut [Mode],
        sw: Switch,
        y: &[f64],
        events: &mut Vec<Event>,
    ) -> Result<(), ModelError> {
        let items = self.template.items_at(y);
        let k = sw.k;
        match (modes[k], sw.kind) {
            (Mode::Glide(current), SwitchKind::Crossing { competitor }) => {
                modes[k] =
                    self.resolve_tie(modes, &items, k, current, competitor, true, sw.time, events)?;
            }
            (Mode::Slide { .. }, SwitchKind::Exit { along }) => {
                let sys = self.system(modes);
                let (_, rates) = sys.velocities(&items)?;
                let r = rates[k].expect("rates");
                let mut e = Event::new(EventKind::SlidingEnd, sw.time, Subjects::One(k));
                e.sliding = Some(SlidingInfo {
                    active_index: k,
                    normal: r.normal,
                    alpha: r.alpha.clamp(0.0, 1.0),
                });
                events.push(e);
                modes[k] = Mode::Glide(along);
            }
            (Mode::Rest, SwitchKind::Wake) => {
                let f = GlideSystem::force_on(&items, k)?;
                let sel = select_directions(f, self.gs, self.tie_tol);
                modes[k] = match sel.status {
                    SelectionStatus::ZeroForce => Mode::Rest,
                    SelectionStatus::Unique => Mode::Glide(sel.indices[0]),
                    SelectionStatus::Tie => self.resolve_tie(
                        modes,
                        &items,
                        k,
                        sel.indices[0],
                        sel.indices[1],
                        false,
                        sw.time,
                        events,
                    )?,
                };
            }
            _ => unreachable!("switch kind does not match mode"),
        }
        Ok(())
    }

    fn sliding_residual(&self, modes: &[Mode], y: &[f64]) -> Result<f64, ModelError> {
        let items = self.template.items_at(y);
        let mut worst: f64 = 0.0;
        for (k, mode) in modes.iter().enumerate() {
            if let Mode::Slide { minus, plus, .. } = *mode {
                let g0 = self.gs.directions[plus] - self.gs.directions[minus];
                worst = worst.max(GlideSystem::switching(&items, k, g0)?.abs());
            }
        }
        Ok(worst)
    }
}

fn max_speed(v: &[f64]) -> f64 {
    v.chunks_exact(2).map(|c| c[0].hypot(c[1])).fold(0.0, f64::max)
}

/// Integrates the glide-constrained inclusion with the default tie tolerance.
pub fn integrate_inclusion(
    cfg0: &Configuration,
    gs: &GlideSet,
    settings: &IntegratorSettings,
) -> Result<Trace, GlideError> {
    integrate_inclusion_with(cfg0, gs, settings, DEFAULT_TIE_TOL)
}

pub fn integrate_inclusion_with(
    cfg0: &Configuration,
    gs: &GlideSet,
    settings: &IntegratorSettings,
    tie_tol: f64,
) -> Result<Trace, GlideError> {
    settings.validate()?;
    flow::check_initial(cfg0)?;
    let integ = Integrator {
        template: cfg0,
        gs,
        tie_tol,
    };
    let y0 = cfg0.to_state();
    let mut builder = TraceBuilder::new(cfg0, settings);
    let mut monitor = EventMonitor::new(&y0, settings);
    builder.record_initial(&y0)?;
    let mut modes = integ.initial_modes(cfg0.items(), &mut builder.events)?;

    let mut diag = Diagnostics::default();
    let mut t = 0.0;
    let mut y = y0;
    // A model error inside the loop means two disclinations met; end the run there.
    macro_rules! collapse_on_err {
        ($e:expr, $time:expr, $label:lifetime) => {
            match $e {
                Ok(v) => v,
                Err(err) => {
                    let subjects = match err {
                        ModelError::CoincidentPositions(k, h) => Subjects::Pair(k, h),
                        _ => Subjects::None,
                    };
                    builder
                        .events
                        .push(Event::new(EventKind::StepCollapse, $time, subjects));
                    break $label Termination::StepCollapse;
                }
            }
        };
    }
    let termination = 'segments: loop {
        let sys = integ.system(&modes);
        let mut stepper = match Stepper::new(&sys, t, y.clone(), settings.tolerances(), settings.max_step)
        {
            Ok(s) => s,
            Err(_) => {
                builder
                    .events
                    .push(Event::new(EventKind::StepCollapse, t, Subjects::None));
                break Termination::StepCollapse;
            }
        };
        let forces = collapse_on_err!(model::forces_of(&cfg0.items_at(&y)), t, 'segments);
        if forces.iter().all(|f| f.norm() < STATIONARY_FORCE) {
            builder.fill_constant(&y)?;
            accumulate(&mut diag, &stepper);
            break Termination::Stationary;
        }
        loop {
            if stepper.t() >= settings.t_end {
                accumulate(&mut diag, &stepper);
                break 'segments Termination::EndTime;
            }
            let step = match stepper.step(settings.t_end) {
                Ok(s) => s,
                Err(StepError::Collapse { t, last_error }) => {
                    let subjects = match last_error {
                        Some(ModelError::CoincidentPositions(k, h)) => Subjects::Pair(k, h),
                        _ => Subjects::None,
                    };
                    builder
                        .events
                        .push(Event::new(EventKind::StepCollapse, t, subjects));
                    accumulate(&mut diag, &stepper);
                    break 'segments Termination::StepCollapse;
                }
                Err(StepError::InitialState(e)) => return Err(e.into()),
            };
            let switch = collapse_on_err!(integ.earliest_switch(&sys, &step), step.t0, 'segments);
            let step = match switch {
                Some(sw) if sw.time < step.t1 => step.truncate(sw.time),
                _ => step,
            };
            monitor.scan(&step, &mut builder.events);
            collapse_on_err!(builder.record_step(&step), step.t0, 'segments);
            let residual = collapse_on_err!(integ.sliding_residual(&modes, &step.y1), step.t1, 'segments);
            diag.max_sliding_residual = diag.max_sliding_residual.max(residual);
            if let Some(sw) = switch {
                collapse_on_err!(
                    integ.apply_switch(&mut modes, sw, &step.y1, &mut builder.events),
                    step.t1,
                    'segments
                );
                t = step.t1;
                y = step.y1.clone();
                accumulate(&mut diag, &stepper);
                if t >= settings.t_end {
                    break 'segments Termination::EndTime;
                }
                continue 'segments;
            }
            if max_speed(&step.f1) < STATIONARY_FORCE && step.t1 < settings.t_end {
                let items = cfg0.items_at(&step.y1);
                let forces = collapse_on_err!(model::forces_of(&items), step.t1, 'segments);
                if forces.iter().all(|f| f.norm() < STATIONARY_FORCE) {
                    builder.fill_constant(&step.y1)?;
                    accumulate(&mut diag, &stepper);
                    break 'segments Termination::Stationary;
                }
            }
        }
    };
    Ok(builder.finish(termination, diag))
}

fn accumulate(diag: &mut Diagnostics, stepper: &Stepper<GlideSystem>) {
    let s = stepper.stats();
    diag.accepted_steps += s.accepted;
    diag.rejected_steps += s.rejected;
    diag.rhs_evals += s.rhs_evals;
}
