//! Independent oracles: finite-difference gradients of the energy, a fixed-step Euler
//! integrator built on the force law alone, and a seeded invariant suite.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{self, Diagnostics, IntegratorSettings, Sample, Termination, Trace};
use crate::geometry::Vec2;
use crate::glide;
use crate::model::{self, Configuration, Disclination, FrankAngle, ModelError};
use crate::pairlab;

pub const GRADIENT_REL_TOL: f64 = 1e-6;
pub const EQUIVARIANCE_TOL: f64 = 1e-12;
/// Multiple of `abs_tol` by which a sampled energy may rise between samples.
pub const DISSIPATION_SLACK: f64 = 10.0;
/// Forces below this magnitude are compared in absolute terms.
pub const FORCE_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("perturbed position of disclination {index} leaves the admissible domain")]
    PerturbationExitsDomain { index: usize },
    #[error("state left the admissible domain at t = {time}")]
    DomainExit { time: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub label: String,
    pub abs_error: f64,
    pub rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub pass: bool,
    pub details: Vec<CaseRecord>,
}

impl OracleReport {
    fn from_cases(name: &str, details: Vec<CaseRecord>) -> Self {
        let max_abs_error = details.iter().map(|c| c.abs_error).fold(0.0, f64::max);
        let max_rel_error = details.iter().map(|c| c.rel_error).fold(0.0, f64::max);
        let pass = !details.is_empty() && details.iter().all(|c| c.pass);
        Self {
            name: name.to_string(),
            max_abs_error,
            max_rel_error,
            pass,
            details,
        }
    }

    fn failed(name: &str, label: &str) -> Self {
        Self::from_cases(
            name,
            vec![CaseRecord {
                label: label.to_string(),
                abs_error: f64::INFINITY,
                rel_error: f64::INFINITY,
                pass: false,
            }],
        )
    }
}

/// Central-difference approximation of `-∇_{Ξ_k} H`.
pub fn fd_gradient(cfg: &Configuration, k: usize, step: f64) -> Result<Vec2, VerifyError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(VerifyError::InvalidParameter(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let base = cfg.get(k)?.pos;
    let energy_at = |p: Vec2| -> Result<f64, VerifyError> {
        if p.norm_sq() >= 1.0 {
            return Err(VerifyError::PerturbationExitsDomain { index: k });
        }
        let mut positions = cfg.positions();
        positions[k] = p;
        let moved = cfg
            .with_positions(&positions)
            .map_err(|_| VerifyError::PerturbationExitsDomain { index: k })?;
        model::energy(&moved).map_err(|e| match e {
            ModelError::CoincidentPositions(..) => VerifyError::PerturbationExitsDomain { index: k },
            other => other.into(),
        })
    };
    let dx = Vec2::new(step, 0.0);
    let dy = Vec2::new(0.0, step);
    let gx = (energy_at(base + dx)? - energy_at(base - dx)?) / (2.0 * step);
    let gy = (energy_at(base + dy)? - energy_at(base - dy)?) / (2.0 * step);
    Ok(Vec2::new(-gx, -gy))
}

/// Fixed-step explicit Euler trajectory with one sample per step.
pub fn euler_reference(cfg0: &Configuration, dt: f64, t_end: f64) -> Result<Trace, VerifyError> {
    if !(dt > 0.0 && dt.is_finite() && t_end >= 0.0 && t_end.is_finite()) {
        return Err(VerifyError::InvalidParameter(format!(
            "need dt > 0 and t_end >= 0, got dt = {dt}, t_end = {t_end}"
        )));
    }
    let steps = (t_end / dt).round() as usize;
    let mut cfg = cfg0.clone();
    let mut samples = Vec::with_capacity(steps + 1);
    let sample = |time: f64, cfg: &Configuration| -> Result<Sample, VerifyError> {
        let forces = (0..cfg.len())
            .map(|k| model::total_force(cfg, k))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Sample {
            time,
            config: cfg.clone(),
            energy: model::energy(cfg)?,
            forces,
        })
    };
    samples.push(sample(0.0, &cfg)?);
    for i in 1..=steps {
        let forces = &samples.last().expect("initial sample").forces;
        let positions: Vec<Vec2> = cfg
            .positions()
            .iter()
            .zip(forces)
            .map(|(p, f)| *p + dt * *f)
            .collect();
        let time = i as f64 * dt;
        cfg = match cfg.with_positions(&positions) {
            Ok(c) if c.superposed_pair().is_none() && positions.iter().all(|p| p.norm() < 1.0) => c,
            _ => return Err(VerifyError::DomainExit { time }),
        };
        samples.push(sample(time, &cfg).map_err(|_| VerifyError::DomainExit { time })?);
    }
    Ok(Trace {
        samples,
        events: Vec::new(),
        termination: Termination::EndTime,
        diagnostics: Diagnostics {
            accepted_steps: steps as u64,
            ..Default::default()
        },
    })
}

/// Random configuration of `n` disclinations with `|Ξ| ≤ 0.85`, pairwise distances at least
/// 0.05 and angles of magnitude in `[0.25, 2]`.
pub fn random_configuration(rng: &mut ChaCha8Rng, n: usize) -> Configuration {
    loop {
        let mut items: Vec<Disclination> = Vec::with_capacity(n);
        let mut tries = 0;
        while items.len() < n && tries < 1000 {
            tries += 1;
            let r = 0.85 * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let p = Vec2::polar(r, phi);
            if items.iter().any(|d| (d.pos - p).norm() < 0.05) {
                continue;
            }
            let mag = rng.random_range(0.25..2.0);
            let s = if rng.random::<bool>() { mag } else { -mag };
            items.push(Disclination::new(s, p).expect("nonzero angle"));
        }
        if items.len() == n {
            return Configuration::new(items).expect("valid random configuration");
        }
    }
}

fn case(label: String, abs_error: f64, scale: f64, tol: f64) -> CaseRecord {
    let rel_error = abs_error / scale;
    CaseRecord {
        label,
        abs_error,
        rel_error,
        pass: rel_error < tol,
    }
}

fn gradient_cases(rng: &mut ChaCha8Rng, count: usize) -> Vec<CaseRecord> {
    let mut out = Vec::new();
    for c in 0..count {
        let n = rng.random_range(1..=5);
        let cfg = random_configuration(rng, n);
        for k in 0..n {
            let exact = model::total_force(&cfg, k).expect("interior configuration");
            let approx = fd_gradient(&cfg, k, 1e-6).expect("interior configuration");
            let err = (exact - approx).norm();
            out.push(case(
                format!("config {c:03} disclination {k}"),
                err,
                exact.norm().max(FORCE_FLOOR),
                GRADIENT_REL_TOL,
            ));
        }
    }
    out
}

/// Gradient consistency over random configurations, as used by the self-check.
pub fn gradient_report(seed: u64, count: usize) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    OracleReport::from_cases("gradient-consistency", gradient_cases(&mut rng, count))
}

fn richardson_report(rng: &mut ChaCha8Rng) -> OracleReport {
    let mut cases = Vec::new();
    for c in 0..10 {
        let cfg = random_configuration(rng, 3);
        let exact = model::total_force(&cfg, 0).expect("interior");
        let e1 = (fd_gradient(&cfg, 0, 1e-3).expect("interior") - exact).norm();
        let e2 = (fd_gradient(&cfg, 0, 5e-4).expect("interior") - exact).norm();
        let ratio = e1 / e2;
        // second order: halving the step divides the error by about 4
        let deviation = (ratio - 4.0).abs();
        cases.push(CaseRecord {
            label: format!("config {c:02} ratio {ratio:.3}"),
            abs_error: deviation,
            rel_error: deviation / 4.0,
            pass: deviation < 0.5,
        });
    }
    OracleReport::from_cases("richardson-consistency", cases)
}

fn rotation_report(rng: &mut ChaCha8Rng) -> OracleReport {
    let mut cases = Vec::new();
    for c in 0..20 {
        let n = rng.random_range(1..=5);
        let cfg = random_configuration(rng, n);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let rotated: Vec<Vec2> = cfg.positions().iter().map(|p| p.rotated(theta)).collect();
        let rcfg = cfg.with_positions(&rotated).expect("rotation keeps the disk");
        let f = model::all_forces(&cfg).expect("interior");
        let rf = model::all_forces(&rcfg).expect("interior");
        let h = model::energy(&cfg).expect("interior");
        let rh = model::energy(&rcfg).expect("interior");
        let scale = f.iter().map(|v| v.norm()).fold(h.abs(), f64::max).max(1.0);
        let err = f
            .iter()
            .zip(&rf)
            .map(|(a, b)| (a.rotated(theta) - *b).norm())
            .fold((h - rh).abs(), f64::max);
        cases.push(case(format!("config {c:02}"), err, scale, EQUIVARIANCE_TOL));
    }
    OracleReport::from_cases("rotation-equivariance", cases)
}

fn permutation_report(rng: &mut ChaCha8Rng) -> OracleReport {
    let mut cases = Vec::new();
    for c in 0..20 {
        let n = rng.random_range(2..=5);
        let cfg = random_configuration(rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let items: Vec<Disclination> = perm.iter().map(|&i| cfg.items()[i]).collect();
        let pcfg = Configuration::new(items).expect("same disclinations");
        let f = model::all_forces(&cfg).expect("interior");
        let pf = model::all_forces(&pcfg).expect("interior");
        let h = model::energy(&cfg).expect("interior");
        let ph = model::energy(&pcfg).expect("interior");
        let scale = f.iter().map(|v| v.norm()).fold(h.abs(), f64::max).max(1.0);
        let err = perm
            .iter()
            .enumerate()
            .map(|(j, &i)| (pf[j] - f[i]).norm())
            .fold((h - ph).abs(), f64::max);
        cases.push(case(format!("config {c:02}"), err, scale, EQUIVARIANCE_TOL));
    }
    OracleReport::from_cases("permutation-equivariance", cases)
}

fn homogeneity_report(rng: &mut ChaCha8Rng) -> OracleReport {
    let mut cases = Vec::new();
    for c in 0..20 {
        let n = rng.random_range(1..=5);
        let cfg = random_configuration(rng, n);
        let doubled = Configuration::new(
            cfg.items()
                .iter()
                .map(|d| Disclination::new(2.0 * d.s(), d.pos).expect("nonzero"))
                .collect(),
        )
        .expect("same positions");
        let h = model::energy(&cfg).expect("interior");
        let h2 = model::energy(&doubled).expect("interior");
        let f = model::all_forces(&cfg).expect("interior");
        let f2 = model::all_forces(&doubled).expect("interior");
        let scale = f.iter().map(|v| 4.0 * v.norm()).fold(4.0 * h.abs(), f64::max).max(1.0);
        let err = f
            .iter()
            .zip(&f2)
            .map(|(a, b)| (4.0 * *a - *b).norm())
            .fold((4.0 * h - h2).abs(), f64::max);
        cases.push(case(format!("config {c:02}"), err, scale, EQUIVARIANCE_TOL));
    }
    OracleReport::from_cases("angle-homogeneity", cases)
}

fn dissipation_report(rng: &mut ChaCha8Rng) -> OracleReport {
    let settings = IntegratorSettings {
        t_end: 0.2,
        ..Default::default()
    };
    let slack = DISSIPATION_SLACK * settings.abs_tol;
    let mut cases = Vec::new();
    for c in 0..5 {
        let n = rng.random_range(2..=4);
        let cfg = random_configuration(rng, n);
        let Ok(tr) = flow::simulate(&cfg, &settings) else {
            return OracleReport::failed("energy-dissipation", &format!("config {c} failed"));
        };
        let rise = tr
            .energies()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max);
        cases.push(CaseRecord {
            label: format!("config {c} max rise"),
            abs_error: rise,
            rel_error: rise / slack,
            pass: rise <= slack,
        });
    }
    OracleReport::from_cases("energy-dissipation", cases)
}

fn single_analytic_report() -> OracleReport {
    let settings = IntegratorSettings {
        rel_tol: 1e-9,
        abs_tol: 1e-9,
        t_end: 2.0,
        ..Default::default()
    };
    let mut cases = Vec::new();
    for (s, x, y) in [(1.0, 0.5, 0.0), (-2.0, 0.1, 0.2), (0.5, -0.3, -0.6)] {
        let cfg = flow::single(s, Vec2::new(x, y)).expect("valid");
        let Ok(tr) = flow::simulate(&cfg, &settings) else {
            return OracleReport::failed("single-closed-form", "integration failed");
        };
        let angle = FrankAngle::new(s).expect("nonzero");
        let p0 = Vec2::new(x, y);
        let err = tr
            .samples
            .iter()
            .map(|smp| {
                let exact = flow::analytic_single(angle, p0.norm(), p0.angle(), smp.time);
                (smp.config.items()[0].pos - exact).norm()
            })
            .fold(0.0, f64::max);
        cases.push(case(format!("s={s} start=({x},{y})"), err, 1.0, 1e-6));
    }
    OracleReport::from_cases("single-closed-form", cases)
}

fn euler_report() -> OracleReport {
    let cfg = Configuration::from_triples(&[(1.0, 0.3, 0.0), (-2.0, -0.3, 0.0)]).expect("valid");
    let t_end = 0.1;
    let settings = IntegratorSettings {
        t_end,
        ..Default::default()
    };
    let Ok(adaptive) = flow::simulate(&cfg, &settings) else {
        return OracleReport::failed("euler-consistency", "adaptive integration failed");
    };
    let end = adaptive.samples.last().expect("samples").config.positions();
    let mut cases = Vec::new();
    let mut prev = f64::INFINITY;
    for dt in [1e-3, 5e-4, 2.5e-4] {
        let Ok(tr) = euler_reference(&cfg, dt, t_end) else {
            return OracleReport::failed("euler-consistency", "euler reference failed");
        };
        let got = tr.samples.last().expect("samples").config.positions();
        let err = got
            .iter()
            .zip(&end)
            .map(|(a, b)| (*a - *b).norm())
            .fold(0.0, f64::max);
        // first order: the error roughly halves with dt
        let pass = err < 1e-2 && err < 0.6 * prev;
        cases.push(CaseRecord {
            label: format!("dt={dt}"),
            abs_error: err,
            rel_error: err,
            pass,
        });
        prev = err;
    }
    OracleReport::from_cases("euler-consistency", cases)
}

fn dipole_reduction_report() -> OracleReport {
    let mut cases = Vec::new();
    for s in [0.5, 1.0, 2.0] {
        let angle = FrankAngle::new(s).expect("nonzero");
        for i in 1..20 {
            let delta = 0.1 * i as f64;
            let cfg = pairlab::dipole_configuration(delta, angle).expect("valid");
            let f = model::all_forces(&cfg).expect("interior");
            let full = f[0].x - f[1].x;
            let st = pairlab::DipoleState::new(delta, angle).expect("valid");
            let reduced = pairlab::dipole_rhs(&st);
            let err = (full - reduced).abs();
            cases.push(case(
                format!("s={s} delta={delta:.1}"),
                err,
                full.abs().max(1.0),
                1e-12,
            ));
        }
    }
    OracleReport::from_cases("dipole-reduction", cases)
}

fn sliding_coefficient_report() -> OracleReport {
    let n = Vec2::E2;
    let cases = [
        (Vec2::new(0.3, 1.0), Vec2::new(-2.0, -1.0), 0.5),
        (Vec2::new(0.0, 3.0), Vec2::new(1.0, -1.0), 0.75),
    ]
    .iter()
    .map(|&(fm, fp, expected)| {
        let err = glide::sliding_coefficient(fm, fp, n)
            .map(|a| (a - expected).abs())
            .unwrap_or(f64::INFINITY);
        CaseRecord {
            label: format!("alpha={expected}"),
            abs_error: err,
            rel_error: err / expected,
            pass: err == 0.0,
        }
    })
    .collect();
    OracleReport::from_cases("sliding-coefficient", cases)
}

/// Runs every invariant check with randomness drawn from `seed`; reports are sorted by name.
pub fn run_invariant_suite(seed: u64) -> Vec<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = vec![
        OracleReport::from_cases("gradient-consistency", gradient_cases(&mut rng, 100)),
        richardson_report(&mut rng),
        rotation_report(&mut rng),
        permutation_report(&mut rng),
        homogeneity_report(&mut rng),
        dissipation_report(&mut rng),
        single_analytic_report(),
        euler_report(),
        dipole_reduction_report(),
        sliding_coefficient_report(),
    ];
    reports.sort_by(|a, b| a.name.cmp(&b.name));
    reports
}
