//! Unconstrained gradient flow `Ξ̇_k = F_k(Ξ)` with dense sampling and event detection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::glide::SlidingInfo;
use crate::model::{self, Configuration, Disclination, FrankAngle, ModelError, Position};
use crate::ode::{self, OdeSystem, Step, StepError, Stepper, Tolerances};

/// Event times are located on the dense interpolant to this accuracy.
pub const EVENT_TIME_TOL: f64 = 1e-9;
/// Below this total force magnitude a state is treated as stationary.
pub const STATIONARY_FORCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("invalid integrator settings: {0}")]
    InvalidSettings(String),
    #[error("invalid initial state: {0}")]
    InitialState(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub t_end: f64,
    pub sample_interval: f64,
    /// Critical distance below which two disclinations are said to collide.
    pub collision_distance: f64,
    /// A boundary-approach event fires when `|Ξ_k| > 1 - boundary_margin`.
    pub boundary_margin: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            max_step: 0.05,
            t_end: 1.0,
            sample_interval: 0.01,
            collision_distance: 0.05,
            boundary_margin: 0.01,
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<(), FlowError> {
        let fields = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step),
            ("t_end", self.t_end),
            ("sample_interval", self.sample_interval),
            ("collision_distance", self.collision_distance),
            ("boundary_margin", self.boundary_margin),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FlowError::InvalidSettings(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.rel_tol > 1e-3 || self.abs_tol > 1e-3 {
            return Err(FlowError::InvalidSettings(
                "rel_tol and abs_tol must not exceed 1e-3".into(),
            ));
        }
        if self.collision_distance >= 2.0 {
            return Err(FlowError::InvalidSettings(
                "collision_distance must be below the disk diameter 2".into(),
            ));
        }
        if self.boundary_margin >= 1.0 {
            return Err(FlowError::InvalidSettings(
                "boundary_margin must be below 1".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn tolerances(&self) -> Tolerances {
        Tolerances {
            rel: self.rel_tol,
            abs: self.abs_tol,
        }
    }

    /// Uniform sample times `0, Δ, 2Δ, …` followed by `t_end`.
    pub fn sample_times(&self) -> Vec<f64> {
        let n = (self.t_end / self.sample_interval).floor() as usize;
        let mut times: Vec<f64> = (0..=n).map(|i| i as f64 * self.sample_interval).collect();
        let last = *times.last().unwrap();
        if self.t_end - last > 1e-9 * self.sample_interval {
            times.push(self.t_end);
        } else {
            *times.last_mut().unwrap() = self.t_end;
        }
        times
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    CollisionBegin,
    CollisionEnd,
    BoundaryApproach,
    StepCollapse,
    CrossSlip,
    SlidingBegin,
    SlidingEnd,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::CollisionBegin => "collision-begin",
            EventKind::CollisionEnd => "collision-end",
            EventKind::BoundaryApproach => "boundary-approach",
            EventKind::StepCollapse => "step-collapse",
            EventKind::CrossSlip => "cross-slip",
            EventKind::SlidingBegin => "sliding-begin",
            EventKind::SlidingEnd => "sliding-end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subjects {
    None,
    One(usize),
    Pair(usize, usize),
}

impl Subjects {
    pub fn indices(&self) -> Vec<usize> {
        match *self {
            Subjects::None => vec![],
            Subjects::One(k) => vec![k],
            Subjects::Pair(i, j) => vec![i, j],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub time: f64,
    pub subjects: Subjects,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sliding: Option<SlidingInfo>,
}

impl Event {
    pub fn new(kind: EventKind, time: f64, subjects: Subjects) -> Self {
        Self {
            kind,
            time,
            subjects,
            sliding: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub config: Configuration,
    pub energy: f64,
    pub forces: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    EndTime,
    Stationary,
    StepCollapse,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub accepted_steps: u64,
    pub rejected_steps: u64,
    pub rhs_evals: u64,
    /// Largest `|F_k·g0|` seen at accepted steps while sliding (glide dynamics only).
    pub max_sliding_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub termination: Termination,
    pub diagnostics: Diagnostics,
}

impl Trace {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.energy).collect()
    }

    /// Positions of disclination `k` at every sample.
    pub fn path(&self, k: usize) -> Vec<Position> {
        self.samples.iter().map(|s| s.config.items()[k].pos).collect()
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

/// The gradient-flow right-hand side on the flattened position state.
pub(crate) struct GradientFlow<'a> {
    pub(crate) template: &'a Configuration,
}

impl OdeSystem for GradientFlow<'_> {
    type Error = ModelError;

    fn dim(&self) -> usize {
        2 * self.template.len()
    }

    fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), ModelError> {
        let items = self.template.items_at(y);
        let forces = model::forces_of(&items)?;
        for (k, f) in forces.iter().enumerate() {
            dydt[2 * k] = f.x;
            dydt[2 * k + 1] = f.y;
        }
        Ok(())
    }
}

/// Collision and boundary-approach monitoring on flattened position states.
#[derive(Debug, Clone)]
pub(crate) struct EventMonitor {
    n: usize,
    collision_distance: f64,
    boundary_radius: f64,
    /// Pair separation last seen above the critical distance.
    armed: Vec<bool>,
    colliding: Vec<bool>,
    boundary_fired: Vec<bool>,
}

impl EventMonitor {
    pub(crate) fn new(y0: &[f64], settings: &IntegratorSettings) -> Self {
        let n = y0.len() / 2;
        let pos = model::state_positions(y0);
        let mut armed = Vec::new();
        for k in 0..n {
            for h in (k + 1)..n {
                armed.push((pos[k] - pos[h]).norm() > settings.collision_distance);
            }
        }
        let boundary_radius = 1.0 - settings.boundary_margin;
        Self {
            n,
            collision_distance: settings.collision_distance,
            boundary_radius,
            colliding: vec![false; armed.len()],
            armed,
            boundary_fired: pos.iter().map(|p| p.norm() > boundary_radius).collect(),
        }
    }

    fn pair_distance(y: &[f64], k: usize, h: usize) -> f64 {
        (y[2 * k] - y[2 * h]).hypot(y[2 * k + 1] - y[2 * h + 1])
    }

    fn radius(y: &[f64], k: usize) -> f64 {
        y[2 * k].hypot(y[2 * k + 1])
    }

    /// Checks the step end against the monitored thresholds and locates crossings.
    pub(crate) fn scan(&mut self, step: &Step, events: &mut Vec<Event>) {
        let mut found = Vec::new();
        let mut p = 0;
        for k in 0..self.n {
            for h in (k + 1)..self.n {
                let eps = self.collision_distance;
                let g = |t: f64| Self::pair_distance(&step.interpolate(t), k, h) - eps;
                let d1 = Self::pair_distance(&step.y1, k, h);
                if self.colliding[p] {
                    if d1 > eps {
                        let t = locate(g, step);
                        found.push(Event::new(EventKind::CollisionEnd, t, Subjects::Pair(k, h)));
                        self.colliding[p] = false;
                        self.armed[p] = true;
                    }
                } else if self.armed[p] {
                    if d1 <= eps {
                        let t = locate(g, step);
                        found.push(Event::new(EventKind::CollisionBegin, t, Subjects::Pair(k, h)));
                        self.colliding[p] = true;
                        self.armed[p] = false;
                    }
                } else if d1 > eps {
                    self.armed[p] = true;
                }
                p += 1;
            }
        }
        for k in 0..self.n {
            if !self.boundary_fired[k] && Self::radius(&step.y1, k) > self.boundary_radius {
                let r = self.boundary_radius;
                let t = locate(|t| Self::radius(&step.interpolate(t), k) - r, step);
                found.push(Event::new(EventKind::BoundaryApproach, t, Subjects::One(k)));
                self.boundary_fired[k] = true;
            }
        }
        found.sort_by(|a, b| a.time.total_cmp(&b.time));
        events.extend(found);
    }
}

/// Crossing time of `g` within the step, given `g(t1)` differs in sign from `g(t0)`.
fn locate<G: FnMut(f64) -> f64>(mut g: G, step: &Step) -> f64 {
    let g0 = g(step.t0);
    let (_, hi) = ode::bisect(g, step.t0, step.t1, g0, EVENT_TIME_TOL);
    hi
}

/// Accumulates uniformly spaced samples from successive accepted steps.
pub(crate) struct TraceBuilder<'a> {
    template: &'a Configuration,
    times: Vec<f64>,
    next: usize,
    pub(crate) samples: Vec<Sample>,
    pub(crate) events: Vec<Event>,
}

impl<'a> TraceBuilder<'a> {
    pub(crate) fn new(template: &'a Configuration, settings: &IntegratorSettings) -> Self {
        Self {
            template,
            times: settings.sample_times(),
            next: 0,
            samples: Vec::new(),
            events: Vec::new(),
        }
    }

    pub(crate) fn push_state(&mut self, time: f64, y: &[f64]) -> Result<(), ModelError> {
        let items = self.template.items_at(y);
        let energy = model::energy_of(&items)?;
        let forces = model::forces_of(&items)?;
        self.samples.push(Sample {
            time,
            config: Configuration::from_items_unchecked(items),
            energy,
            forces,
        });
        Ok(())
    }

    /// Records every sample time in `[t0, t1]` not yet recorded.
    pub(crate) fn record_step(&mut self, step: &Step) -> Result<(), ModelError> {
        while self.next < self.times.len() && self.times[self.next] <= step.t1 {
            let t = self.times[self.next];
            let y = if t == step.t1 {
                step.y1.clone()
            } else {
                step.interpolate(t)
            };
            self.push_state(t, &y)?;
            self.next += 1;
        }
        Ok(())
    }

    /// Records the initial sample.
    pub(crate) fn record_initial(&mut self, y0: &[f64]) -> Result<(), ModelError> {
        if self.next == 0 {
            self.push_state(self.times[0], y0)?;
            self.next = 1;
        }
        Ok(())
    }

    /// Remaining samples for a state that no longer moves.
    pub(crate) fn fill_constant(&mut self, y: &[f64]) -> Result<(), ModelError> {
        while self.next < self.times.len() {
            let t = self.times[self.next];
            self.push_state(t, y)?;
            self.next += 1;
        }
        Ok(())
    }

    pub(crate) fn finish(
        mut self,
        termination: Termination,
        diagnostics: Diagnostics,
    ) -> Trace {
        self.events.sort_by(|a, b| a.time.total_cmp(&b.time));
        Trace {
            samples: self.samples,
            events: self.events,
            termination,
            diagnostics,
        }
    }
}

pub(crate) fn check_initial(cfg0: &Configuration) -> Result<(), FlowError> {
    for (k, d) in cfg0.items().iter().enumerate() {
        if d.pos.norm_sq() >= 1.0 {
            return Err(FlowError::InitialState(format!(
                "disclination {k} is not in the open unit disk"
            )));
        }
    }
    if let Some((k, h)) = cfg0.superposed_pair() {
        return Err(FlowError::InitialState(format!(
            "disclinations {k} and {h} are superposed; forces are undefined there"
        )));
    }
    Ok(())
}

fn max_force(forces: &[f64]) -> f64 {
    forces
        .chunks_exact(2)
        .map(|c| c[0].hypot(c[1]))
        .fold(0.0, f64::max)
}

/// Integrates the gradient flow from `cfg0` up to `settings.t_end`.
pub fn simulate(cfg0: &Configuration, settings: &IntegratorSettings) -> Result<Trace, FlowError> {
    settings.validate()?;
    check_initial(cfg0)?;

    let sys = GradientFlow { template: cfg0 };
    let y0 = cfg0.to_state();
    let mut builder = TraceBuilder::new(cfg0, settings);
    let mut monitor = EventMonitor::new(&y0, settings);
    builder.record_initial(&y0)?;

    let mut stepper = Stepper::new(&sys, 0.0, y0, settings.tolerances(), settings.max_step)
        .map_err(|e| match e {
            StepError::InitialState(m) | StepError::Collapse { last_error: Some(m), .. } => {
                FlowError::Model(m)
            }
            StepError::Collapse { .. } => FlowError::InitialState("step collapse at start".into()),
        })?;

    let diagnostics = |st: &Stepper<GradientFlow>| {
        let s = st.stats();
        Diagnostics {
            accepted_steps: s.accepted,
            rejected_steps: s.rejected,
            rhs_evals: s.rhs_evals,
            max_sliding_residual: 0.0,
        }
    };

    if max_force(stepper.derivative()) < STATIONARY_FORCE {
        let y = stepper.y().to_vec();
        builder.fill_constant(&y)?;
        let d = diagnostics(&stepper);
        return Ok(builder.finish(Termination::Stationary, d));
    }

    let termination = loop {
        if stepper.t() >= settings.t_end {
            break Termination::EndTime;
        }
        match stepper.step(settings.t_end) {
            Ok(step) => {
                monitor.scan(&step, &mut builder.events);
                if builder.record_step(&step).is_err() {
                    builder
                        .events
                        .push(Event::new(EventKind::StepCollapse, step.t0, Subjects::None));
                    break Termination::StepCollapse;
                }
                if max_force(&step.f1) < STATIONARY_FORCE && step.t1 < settings.t_end {
                    builder.fill_constant(&step.y1)?;
                    break Termination::Stationary;
                }
            }
            Err(StepError::Collapse { t, last_error }) => {
                let subjects = match last_error {
                    Some(ModelError::CoincidentPositions(k, h)) => Subjects::Pair(k, h),
                    _ => Subjects::None,
                };
                builder
                    .events
                    .push(Event::new(EventKind::StepCollapse, t, subjects));
                break Termination::StepCollapse;
            }
            Err(StepError::InitialState(e)) => return Err(e.into()),
        }
    };
    let d = diagnostics(&stepper);
    Ok(builder.finish(termination, d))
}

/// Dense samples `(t, y)` of a generic system on the settings' sample grid.
pub(crate) struct SampledSolution {
    pub(crate) points: Vec<(f64, Vec<f64>)>,
    pub(crate) termination: Termination,
}

/// Integrates `sys` from `y0` and samples it; the run ends early (with `StepCollapse`) when
/// the right-hand side keeps refusing states.
pub(crate) fn sample_solution<S: OdeSystem>(
    sys: &S,
    y0: Vec<f64>,
    settings: &IntegratorSettings,
) -> Result<SampledSolution, S::Error> {
    let times = settings.sample_times();
    let mut points = vec![(0.0, y0.clone())];
    let mut next = 1;
    let mut stepper = match Stepper::new(sys, 0.0, y0, settings.tolerances(), settings.max_step) {
        Ok(s) => s,
        Err(StepError::InitialState(e)) => return Err(e),
        Err(StepError::Collapse { .. }) => unreachable!("construction takes no step"),
    };
    let termination = loop {
        if stepper.t() >= settings.t_end {
            break Termination::EndTime;
        }
        match stepper.step(settings.t_end) {
            Ok(step) => {
                while next < times.len() && times[next] <= step.t1 {
                    let t = times[next];
                    let y = if t == step.t1 {
                        step.y1.clone()
                    } else {
                        step.interpolate(t)
                    };
                    points.push((t, y));
                    next += 1;
                }
            }
            Err(StepError::Collapse { .. }) => break Termination::StepCollapse,
            Err(StepError::InitialState(e)) => return Err(e),
        }
    };
    Ok(SampledSolution {
        points,
        termination,
    })
}

/// Exact position of a lone disclination at time `t`:
/// `ρ(t) = 1/√(1 + μ0 e^{-4s²t})`, `μ0 = (1-ρ0²)/ρ0²`, constant polar angle.
pub fn analytic_single(s: FrankAngle, rho0: f64, phi0: f64, t: f64) -> Position {
    if rho0 <= 0.0 {
        return Vec2::ZERO;
    }
    if rho0 >= 1.0 {
        return Vec2::polar(1.0, phi0);
    }
    let mu0 = (1.0 - rho0 * rho0) / (rho0 * rho0);
    let s2 = s.value() * s.value();
    let rho = 1.0 / (1.0 + mu0 * (-4.0 * s2 * t).exp()).sqrt();
    Vec2::polar(rho, phi0)
}

/// `dH/dT = -Σ_k |F_k|²` along the gradient flow.
pub fn energy_dissipation_rate(cfg: &Configuration) -> Result<f64, ModelError> {
    Ok(-model::all_forces(cfg)?
        .iter()
        .map(|f| f.norm_sq())
        .sum::<f64>())
}

/// Convenience constructor used throughout tests and scenarios.
pub fn single(s: f64, pos: Position) -> Result<Configuration, ModelError> {
    Configuration::new(vec![Disclination::new(s, pos)?])
}
