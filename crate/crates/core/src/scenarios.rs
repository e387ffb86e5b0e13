//! Built-in benchmarks, TOML scenario files and dispatch to the integrators.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{self, IntegratorSettings, Termination, Trace};
use crate::geometry::Vec2;
use crate::glide::{self, GlideSet};
use crate::model::{self, Configuration, Disclination, FrankAngle, MIN_SEPARATION};
use crate::pairlab::{self, EffectivePair, PairTrace};
use crate::tracefile::{TraceFile, TraceFileError, TraceHeader, TraceRow, TOOL_NAME, TOOL_VERSION};

/// Half the separation given to superposed pairs before a free or glide run.
pub const SUPERPOSITION_OFFSET: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("integration failed: {0}")]
    Runtime(String),
    #[error(transparent)]
    Output(#[from] TraceFileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Unconstrained gradient flow.
    Free,
    /// Motion restricted to a glide set.
    Glide,
    /// Symmetric pair with opposite angles, reduced to its separation.
    Dipole,
    /// Two disclinations moving rigidly together.
    ConstrainedPair,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Free => "free",
            Mode::Glide => "glide",
            Mode::Dipole => "dipole",
            Mode::ConstrainedPair => "constrained-pair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glide_set: Option<GlideSet>,
    #[serde(default)]
    pub settings: IntegratorSettings,
    pub disclinations: Configuration,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Validation(m));
        if self.name.trim().is_empty() {
            return invalid("name must not be empty".into());
        }
        self.settings
            .validate()
            .map_err(|e| ScenarioError::Validation(e.to_string()))?;
        let cfg = &self.disclinations;
        for (k, d) in cfg.items().iter().enumerate() {
            if d.pos.norm_sq() >= 1.0 {
                return invalid(format!(
                    "disclination {} must lie strictly inside the unit disk (|Ξ| < 1), got |Ξ| = {}",
                    k + 1,
                    d.pos.norm()
                ));
            }
        }
        match (self.mode, &self.glide_set) {
            (Mode::Glide, None) => return invalid("glide mode requires a glide_set".into()),
            (Mode::Glide, Some(_)) => {}
            (_, Some(_)) => return invalid("glide_set is only used in glide mode".into()),
            _ => {}
        }
        match self.mode {
            Mode::Free | Mode::Glide => {
                superposed_groups(cfg)?;
            }
            Mode::Dipole => {
                let [a, b] = two(cfg, "dipole")?;
                if a.s() != -b.s() {
                    return invalid("dipole mode requires opposite Frank angles (s1 = -s2)".into());
                }
                if (a.pos + b.pos).norm() > 1e-12 {
                    return invalid("dipole mode requires positions symmetric about the origin".into());
                }
                if a.pos.norm() * 2.0 < MIN_SEPARATION {
                    return invalid("dipole mode requires distinct positions".into());
                }
            }
            Mode::ConstrainedPair => {
                two(cfg, "constrained-pair")?;
            }
        }
        Ok(())
    }
}

fn two(cfg: &Configuration, mode: &str) -> Result<[Disclination; 2], ScenarioError> {
    match cfg.items() {
        [a, b] => Ok([*a, *b]),
        _ => Err(ScenarioError::Validation(format!(
            "{mode} mode requires exactly two disclinations, got {}",
            cfg.len()
        ))),
    }
}

/// Pairs of coincident disclinations; three or more at one point are rejected.
fn superposed_groups(cfg: &Configuration) -> Result<Vec<(usize, usize)>, ScenarioError> {
    let items = cfg.items();
    let mut pairs = Vec::new();
    for k in 0..items.len() {
        for h in (k + 1)..items.len() {
            if (items[k].pos - items[h].pos).norm() < MIN_SEPARATION {
                pairs.push((k, h));
            }
        }
    }
    for (i, a) in pairs.iter().enumerate() {
        for b in &pairs[i + 1..] {
            if a.0 == b.0 || a.0 == b.1 || a.1 == b.0 || a.1 == b.1 {
                return Err(ScenarioError::Validation(
                    "at most two disclinations may share a position".into(),
                ));
            }
        }
    }
    Ok(pairs)
}

/// Separates each superposed pair by `±SUPERPOSITION_OFFSET` along the axis from the nearest
/// other disclination (or the origin when there is none) to the common point; the first
/// index moves away from that feature.
pub fn regularize(cfg: &Configuration) -> Result<(Configuration, Vec<String>), ScenarioError> {
    let pairs = superposed_groups(cfg)?;
    let mut positions = cfg.positions();
    let mut notes = Vec::new();
    for &(k, h) in &pairs {
        let p = cfg.items()[k].pos;
        let nearest = (0..cfg.len())
            .filter(|&j| j != k && j != h)
            .map(|j| cfg.items()[j].pos)
            .filter(|q| (*q - p).norm() >= MIN_SEPARATION)
            .min_by(|a, b| (*a - p).norm().total_cmp(&(*b - p).norm()));
        let (feature, label) = match nearest {
            Some(q) => (q, "nearest disclination"),
            None => (Vec2::ZERO, "origin"),
        };
        let axis = (p - feature).normalized().unwrap_or(Vec2::E1);
        positions[k] = p + SUPERPOSITION_OFFSET * axis;
        positions[h] = p - SUPERPOSITION_OFFSET * axis;
        notes.push(format!(
            "superposed disclinations {} and {} separated by ±{:e} along ({:e} {:e}), the axis from the {label}",
            k + 1,
            h + 1,
            SUPERPOSITION_OFFSET,
            axis.x,
            axis.y
        ));
    }
    let moved = cfg
        .with_positions(&positions)
        .map_err(|e| ScenarioError::Validation(e.to_string()))?;
    Ok((moved, notes))
}

fn settings_with(t_end: f64) -> IntegratorSettings {
    IntegratorSettings {
        t_end,
        ..Default::default()
    }
}

fn free(name: &str, triples: &[(f64, f64, f64)], t_end: f64) -> Scenario {
    Scenario {
        name: name.to_string(),
        mode: Mode::Free,
        glide_set: None,
        settings: settings_with(t_end),
        disclinations: Configuration::from_triples(triples).expect("built-in configuration"),
    }
}

/// Side length of the built-in equilateral triangle.
pub const TRIANGLE_SIDE: f64 = 0.48;
/// Radius of the built-in heptagon.
pub const HEPTAGON_RADIUS: f64 = 0.5;

/// The five benchmark problems, in order.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let r = TRIANGLE_SIDE / 3f64.sqrt();
    let vertex = |deg: f64| {
        let v = Vec2::polar(r, deg.to_radians());
        (v.x, v.y)
    };
    let (a, b, c) = (vertex(210.0), vertex(90.0), vertex(330.0));
    let heptagon: Vec<(f64, f64, f64)> = (0..7)
        .map(|k| {
            let v = Vec2::polar(HEPTAGON_RADIUS, std::f64::consts::TAU * k as f64 / 7.0);
            (if k % 2 == 0 { 1.0 } else { -1.0 }, v.x, v.y)
        })
        .collect();
    vec![
        free("unequal-pair", &[(1.0, -0.3, 0.0), (-2.0, 0.3, 0.0)], 1.6),
        free("superposed-pair", &[(1.0, 0.3, 0.0), (-2.0, 0.3, 0.0)], 1.0),
        free(
            "superposed-triple",
            &[(1.0, 0.3, 0.0), (-1.0, 0.3, 0.0), (1.0, -0.3, 0.0)],
            1.0,
        ),
        free(
            "triangle",
            &[(1.0, a.0, a.1), (-1.0, b.0, b.1), (1.0, c.0, c.1)],
            8.0,
        ),
        free("heptagon", &heptagon, 4.0),
    ]
}

pub fn builtin(name: &str) -> Option<Scenario> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

/// Parses and validates a TOML scenario.
pub fn parse_config(text: &str) -> Result<Scenario, ScenarioError> {
    let sc: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    sc.validate()?;
    Ok(sc)
}

pub fn serialize_config(sc: &Scenario) -> String {
    toml::to_string(sc).expect("scenario serializes to TOML")
}

/// Runs a scenario in memory.
pub fn simulate_scenario(sc: &Scenario, seed: u64) -> Result<TraceFile, ScenarioError> {
    sc.validate()?;
    let runtime = |e: &dyn std::fmt::Display| ScenarioError::Runtime(e.to_string());
    let mut notes = Vec::new();
    let (rows, events, termination, diagnostics) = match sc.mode {
        Mode::Free | Mode::Glide => {
            let (cfg, reg) = regularize(&sc.disclinations)?;
            notes.extend(reg);
            let trace = if sc.mode == Mode::Free {
                flow::simulate(&cfg, &sc.settings).map_err(|e| runtime(&e))?
            } else {
                let gs = sc.glide_set.as_ref().expect("validated");
                glide::integrate_inclusion(&cfg, gs, &sc.settings).map_err(|e| runtime(&e))?
            };
            let Trace {
                samples,
                events,
                termination,
                diagnostics,
            } = trace;
            let rows = samples
                .iter()
                .map(|s| TraceRow {
                    time: s.time,
                    positions: s.config.positions(),
                    energy: s.energy,
                    force_norms: s.forces.iter().map(|f| f.norm()).collect(),
                })
                .collect();
            (rows, events, termination, diagnostics)
        }
        Mode::Dipole => {
            let [a, b] = two(&sc.disclinations, "dipole")?;
            let axis = (a.pos - b.pos).normalized().expect("validated distinct");
            let s = a.angle;
            let delta0 = (a.pos - b.pos).norm();
            let tr = pairlab::simulate_dipole_with(delta0, s, &sc.settings)
                .map_err(|e| runtime(&e))?;
            notes.push("reduced to the separation ODE; positions rebuilt as ±Δ/2 along the initial axis".into());
            let mut rows = Vec::new();
            for (&time, &delta) in tr.times.iter().zip(&tr.deltas) {
                let p = 0.5 * delta * axis;
                let items = vec![Disclination { angle: a.angle, pos: p }, Disclination { angle: b.angle, pos: -p }];
                let cfg = Configuration::new(items).map_err(|e| runtime(&e))?;
                let forces = model::all_forces(&cfg).map_err(|e| runtime(&e))?;
                rows.push(TraceRow {
                    time,
                    positions: vec![p, -p],
                    energy: model::energy(&cfg).map_err(|e| runtime(&e))?,
                    force_norms: forces.iter().map(|f| f.norm()).collect(),
                });
            }
            (rows, Vec::new(), tr.termination, Default::default())
        }
        Mode::ConstrainedPair => {
            let [a, b] = two(&sc.disclinations, "constrained-pair")?;
            let eps = a.pos - b.pos;
            let tr = if eps.norm() < MIN_SEPARATION {
                notes.push("superposed pair integrated as one effective disclination".into());
                let ep = EffectivePair::new(a.angle, b.angle, a.pos).map_err(|e| runtime(&e))?;
                pairlab::simulate_effective_pair(&ep, &sc.settings).map_err(|e| runtime(&e))?
            } else {
                pairlab::simulate_constrained_eps(a.angle, b.angle, a.pos, eps, &sc.settings)
                    .map_err(|e| runtime(&e))?
            };
            notes.push("force columns hold the common velocity of the pair".into());
            constrained_rows(a.angle, b.angle, &tr)
                .map(|rows| (rows, Vec::new(), tr.termination, Default::default()))
                .map_err(|e| runtime(&e))?
        }
    };
    let file = TraceFile {
        header: TraceHeader {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            seed,
            scenario: sc.clone(),
            notes,
            termination,
            diagnostics,
        },
        rows,
        events,
    };
    file.validate()?;
    Ok(file)
}

fn constrained_rows(
    s1: FrankAngle,
    s2: FrankAngle,
    tr: &PairTrace,
) -> Result<Vec<TraceRow>, model::ModelError> {
    tr.samples
        .iter()
        .map(|smp| {
            let (energy, speed) = if (smp.xi1 - smp.xi2).norm() < MIN_SEPARATION {
                let ep = EffectivePair::new(s1, s2, smp.xi1).map_err(|_| model::ModelError::OutsideDisk {
                    index: 0,
                    x: smp.xi1.x,
                    y: smp.xi1.y,
                })?;
                let (v, _) = pairlab::effective_pair_rhs(&ep);
                (model::superposed_energy(s1, s2, smp.xi1), v.norm())
            } else {
                let cfg = Configuration::new(vec![
                    Disclination { angle: s1, pos: smp.xi1 },
                    Disclination { angle: s2, pos: smp.xi2 },
                ])?;
                let f = model::all_forces(&cfg)?;
                (model::energy(&cfg)?, (0.5 * (f[0] + f[1])).norm())
            };
            Ok(TraceRow {
                time: smp.time,
                positions: vec![smp.xi1, smp.xi2],
                energy,
                force_norms: vec![speed, speed],
            })
        })
        .collect()
}

/// Runs a scenario and writes the CSV trace to `out_path` plus its JSON sidecar.
pub fn run_scenario(sc: &Scenario, out_path: &Path, seed: u64) -> Result<TraceFile, ScenarioError> {
    let file = simulate_scenario(sc, seed)?;
    file.write(out_path)?;
    Ok(file)
}

/// True when the run ended before the requested horizon.
pub fn ended_early(file: &TraceFile) -> bool {
    file.header.termination == Termination::StepCollapse
}
