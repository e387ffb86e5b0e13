//! Reduced two-disclination models.
//!
//! * The symmetric zero-total-charge pair `s1 = -s2 = s` placed at `(±Δ/2, 0)` reduces to
//!   the scalar equation `Δ̇ = G(Δ)` with
//!   `G(Δ) = 4s²Δ[(4-Δ²)/(4+Δ²) + 2 log(4Δ/(4+Δ²))]`.
//! * A superposed pair held together by the holonomic constraint `Ξ1 - Ξ2 = ε` moves like a
//!   single disclination of angle `(s1+s2)/√2`, at the price of a reaction `±λ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{self, FlowError, IntegratorSettings, Termination};
use crate::geometry::Vec2;
use crate::model::{self, Configuration, Disclination, FrankAngle, ModelError, Position};
use crate::ode::OdeSystem;

/// Upper end of the near-zero asymptotic neighborhood.
pub const NEAR_ZERO_MAX: f64 = 0.05;
/// Lower end of the near-two asymptotic neighborhood.
pub const NEAR_TWO_MIN: f64 = 1.95;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PairError {
    #[error("separation {0} is outside (0, 2)")]
    InvalidSeparation(f64),
    #[error("separation {delta0} is outside the {branch:?} neighborhood")]
    BranchMismatch { delta0: f64, branch: Branch },
    #[error("position {0:?} is not in the open unit disk")]
    OutsideDisk(Vec2),
    #[error("constraint offset must be non-zero")]
    ZeroOffset,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Symmetric dipole state: separation `Δ ∈ (0, 2)` and the common angle magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipoleState {
    delta: f64,
    s: FrankAngle,
}

impl DipoleState {
    pub fn new(delta: f64, s: FrankAngle) -> Result<Self, PairError> {
        if !(delta > 0.0 && delta < 2.0) {
            return Err(PairError::InvalidSeparation(delta));
        }
        Ok(Self { delta, s })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn s(&self) -> FrankAngle {
        self.s
    }
}

fn forcing(delta: f64, s: f64) -> f64 {
    let d2 = delta * delta;
    4.0 * s * s * delta * ((4.0 - d2) / (4.0 + d2) + 2.0 * (4.0 * delta / (4.0 + d2)).ln())
}

/// Rate of change of the separation, `G(Δ)`.
pub fn dipole_rhs(st: &DipoleState) -> f64 {
    forcing(st.delta, st.s.value())
}

/// Root of `G` in `(0, 2)` by bisection to absolute accuracy `1e-12`.
pub fn find_dipole_equilibrium(s: FrankAngle) -> f64 {
    let g = |d: f64| forcing(d, s.value());
    // G < 0 near 0 and G > 0 near 2.
    let (mut lo, mut hi) = (0.1, 1.9);
    debug_assert!(g(lo) < 0.0 && g(hi) > 0.0);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sampled separation `Δ(T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DipoleTrace {
    pub times: Vec<f64>,
    pub deltas: Vec<f64>,
    pub termination: Termination,
}

struct DipoleOde {
    s: f64,
}

impl OdeSystem for DipoleOde {
    type Error = PairError;

    fn dim(&self) -> usize {
        1
    }

    fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), PairError> {
        let d = y[0];
        if !(model::MIN_SEPARATION..2.0).contains(&d) {
            return Err(PairError::InvalidSeparation(d));
        }
        dydt[0] = forcing(d, self.s);
        Ok(())
    }
}

/// Integrates `Δ̇ = G(Δ)` with default integrator settings up to `t_end`.
pub fn simulate_dipole(delta0: f64, s: FrankAngle, t_end: f64) -> Result<DipoleTrace, PairError> {
    let settings = IntegratorSettings {
        t_end,
        ..Default::default()
    };
    simulate_dipole_with(delta0, s, &settings)
}

/// Integrates `Δ̇ = G(Δ)`; the run ends early once `Δ` drops below the separation guard.
pub fn simulate_dipole_with(
    delta0: f64,
    s: FrankAngle,
    settings: &IntegratorSettings,
) -> Result<DipoleTrace, PairError> {
    settings.validate()?;
    DipoleState::new(delta0, s)?;
    let sol = flow::sample_solution(&DipoleOde { s: s.value() }, vec![delta0], settings)?;
    let (times, deltas) = sol.points.into_iter().map(|(t, y)| (t, y[0])).unzip();
    Ok(DipoleTrace {
        times,
        deltas,
        termination: sol.termination,
    })
}

/// Initial configuration of the full system matching a symmetric dipole.
pub fn dipole_configuration(delta0: f64, s: FrankAngle) -> Result<Configuration, PairError> {
    DipoleState::new(delta0, s)?;
    let half = 0.5 * delta0;
    Ok(Configuration::new(vec![
        Disclination {
            angle: s,
            pos: Vec2::new(half, 0.0),
        },
        Disclination::new(-s.value(), Vec2::new(-half, 0.0))?,
    ])?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    NearZero,
    NearTwo,
}

/// Closed-form solutions of the principal-part equations near `Δ = 0` and `Δ = 2`.
pub fn dipole_asymptotic(
    delta0: f64,
    s: FrankAngle,
    t: f64,
    branch: Branch,
) -> Result<f64, PairError> {
    let s2 = s.value() * s.value();
    match branch {
        Branch::NearZero if delta0 > 0.0 && delta0 <= NEAR_ZERO_MAX => {
            Ok((delta0.ln() * (8.0 * s2 * t).exp()).exp())
        }
        Branch::NearTwo if (NEAR_TWO_MIN..2.0).contains(&delta0) => {
            Ok(2.0 - (2.0 - delta0) * (-4.0 * s2 * t).exp())
        }
        _ => Err(PairError::BranchMismatch { delta0, branch }),
    }
}

/// Two superposed disclinations forced to stay together at `pos`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectivePair {
    pub s1: FrankAngle,
    pub s2: FrankAngle,
    pos: Position,
}

impl EffectivePair {
    pub fn new(s1: FrankAngle, s2: FrankAngle, pos: Position) -> Result<Self, PairError> {
        if !(pos.norm_sq() < 1.0) {
            return Err(PairError::OutsideDisk(pos));
        }
        Ok(Self { s1, s2, pos })
    }

    pub fn pos(&self) -> Position {
        self.pos
    }

    /// Effective angle `(s1 + s2)/√2`.
    pub fn s_eff(&self) -> f64 {
        (self.s1.value() + self.s2.value()) / std::f64::consts::SQRT_2
    }
}

/// Velocity `2 s_e² (1-|Ξ|²) Ξ` of the pair and the reaction `λ = (s2²-s1²)(1-|Ξ|²) Ξ`.
pub fn effective_pair_rhs(ep: &EffectivePair) -> (Vec2, Vec2) {
    let w = 1.0 - ep.pos.norm_sq();
    let se = ep.s_eff();
    let (s1, s2) = (ep.s1.value(), ep.s2.value());
    let velocity = 2.0 * se * se * w * ep.pos;
    let multiplier = (s2 * s2 - s1 * s1) * w * ep.pos;
    (velocity, multiplier)
}

/// One sample of a constrained or effective pair trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSample {
    pub time: f64,
    pub xi1: Position,
    pub xi2: Position,
    pub multiplier: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTrace {
    pub samples: Vec<PairSample>,
    pub termination: Termination,
}

impl PairTrace {
    pub fn max_gap_to(&self, other: &PairTrace) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a.xi1 - b.xi1).norm())
            .fold(0.0, f64::max)
    }
}

struct EffectiveOde {
    s1: FrankAngle,
    s2: FrankAngle,
}

impl OdeSystem for EffectiveOde {
    type Error = PairError;

    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), PairError> {
        let ep = EffectivePair {
            s1: self.s1,
            s2: self.s2,
            pos: Vec2::new(y[0], y[1]),
        };
        let (v, _) = effective_pair_rhs(&ep);
        dydt[0] = v.x;
        dydt[1] = v.y;
        Ok(())
    }
}

/// Trajectory of the superposed pair under the effective (ε → 0) dynamics.
pub fn simulate_effective_pair(
    ep: &EffectivePair,
    settings: &IntegratorSettings,
) -> Result<PairTrace, PairError> {
    settings.validate()?;
    let sys = EffectiveOde {
        s1: ep.s1,
        s2: ep.s2,
    };
    let sol = flow::sample_solution(&sys, vec![ep.pos.x, ep.pos.y], settings)?;
    let samples = sol
        .points
        .into_iter()
        .map(|(time, y)| {
            let at = EffectivePair {
                pos: Vec2::new(y[0], y[1]),
                ..*ep
            };
            let (_, multiplier) = effective_pair_rhs(&at);
            PairSample {
                time,
                xi1: at.pos,
                xi2: at.pos,
                multiplier,
            }
        })
        .collect();
    Ok(PairTrace {
        samples,
        termination: sol.termination,
    })
}

struct ConstrainedOde {
    s1: FrankAngle,
    s2: FrankAngle,
    eps: Vec2,
}

impl ConstrainedOde {
    fn forces(&self, xi1: Position) -> Result<(Vec2, Vec2), ModelError> {
        let items = [
            Disclination {
                angle: self.s1,
                pos: xi1,
            },
            Disclination {
                angle: self.s2,
                pos: xi1 - self.eps,
            },
        ];
        let f = model::forces_of(&items)?;
        Ok((f[0], f[1]))
    }

    /// Velocity of the constrained pair and the reaction on disclination 1.
    fn velocity_and_multiplier(&self, xi1: Position) -> Result<(Vec2, Vec2), ModelError> {
        let (f1, f2) = self.forces(xi1)?;
        let velocity = 0.5 * (f1 + f2);
        Ok((velocity, f2 - velocity))
    }
}

impl OdeSystem for ConstrainedOde {
    type Error = ModelError;

    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), ModelError> {
        let (v, _) = self.velocity_and_multiplier(Vec2::new(y[0], y[1]))?;
        dydt[0] = v.x;
        dydt[1] = v.y;
        Ok(())
    }
}

/// Superposed pair with the constraint `Ξ2 = Ξ1 - ε`, `ε` a fixed small vector.
///
/// `Ξ1` follows `Ξ̇1 = ½(F1 + F2)` evaluated at `(Ξ1, Ξ1 - ε)`; the multiplier is
/// `λ = F2 - Ξ̇1`, so disclination 1 feels `+λ` and disclination 2 feels `-λ`.
pub fn simulate_constrained_eps(
    s1: FrankAngle,
    s2: FrankAngle,
    xi10: Position,
    eps: Vec2,
    settings: &IntegratorSettings,
) -> Result<PairTrace, PairError> {
    settings.validate()?;
    if eps.norm() == 0.0 {
        return Err(PairError::ZeroOffset);
    }
    for p in [xi10, xi10 - eps] {
        if !(p.norm_sq() < 1.0) {
            return Err(PairError::OutsideDisk(p));
        }
    }
    let sys = ConstrainedOde { s1, s2, eps };
    let sol = flow::sample_solution(&sys, vec![xi10.x, xi10.y], settings)?;
    let samples = sol
        .points
        .into_iter()
        .map(|(time, y)| {
            let xi1 = Vec2::new(y[0], y[1]);
            let (_, multiplier) = sys.velocity_and_multiplier(xi1)?;
            Ok(PairSample {
                time,
                xi1,
                xi2: xi1 - eps,
                multiplier,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(PairTrace {
        samples,
        termination: sol.termination,
    })
}

/// Residual of `Ξ̇1 = F1 + λ` at a constrained state; zero up to rounding.
pub fn constraint_force_residual(
    s1: FrankAngle,
    s2: FrankAngle,
    xi1: Position,
    eps: Vec2,
) -> Result<f64, ModelError> {
    let sys = ConstrainedOde { s1, s2, eps };
    let (f1, _) = sys.forces(xi1)?;
    let (v, lambda) = sys.velocity_and_multiplier(xi1)?;
    Ok((v - (f1 + lambda)).norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn angle(s: f64) -> FrankAngle {
        FrankAngle::new(s).unwrap()
    }

    /// G evaluated from the full force law: Δ̇ = F1x - F2x for the symmetric dipole.
    fn forcing_from_forces(delta: f64, s: f64) -> f64 {
        let cfg = dipole_configuration(delta, angle(s)).unwrap();
        let f = model::all_forces(&cfg).unwrap();
        f[0].x - f[1].x
    }

    #[test]
    fn forcing_matches_full_force_law() {
        for &d in &[0.01, 0.3, 0.8, 1.4, 1.99] {
            for &s in &[0.5, 1.0, 2.0] {
                let st = DipoleState::new(d, angle(s)).unwrap();
                let a = dipole_rhs(&st);
                let b = forcing_from_forces(d, s);
                assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()), "Δ={d} s={s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn principal_parts() {
        let s = angle(1.0);
        for &gap in &[1e-3, 1e-4, 1e-5] {
            let g = dipole_rhs(&DipoleState::new(2.0 - gap, s).unwrap());
            assert!((g / (4.0 * gap) - 1.0).abs() < 10.0 * gap);
        }
        for &d in &[1e-6, 1e-9, 1e-12] {
            let g = dipole_rhs(&DipoleState::new(d, s).unwrap());
            let principal = 8.0 * d * d.ln();
            assert!(g < 0.0);
            // next-order term is 4Δ, so the relative gap is 1/(2|log Δ|)
            assert!((g / principal - 1.0).abs() <= 0.5 / d.ln().abs() + 1e-9);
        }
    }

    #[test]
    fn equilibrium_is_a_sign_change() {
        let eq = find_dipole_equilibrium(angle(1.0));
        assert!((0.75..=0.85).contains(&eq));
        let s = angle(1.0);
        assert!(dipole_rhs(&DipoleState::new(eq - 1e-9, s).unwrap()) < 0.0);
        assert!(dipole_rhs(&DipoleState::new(eq + 1e-9, s).unwrap()) > 0.0);
    }

    #[test]
    fn equilibrium_matches_grid_scan() {
        // brute-force oracle: first sign change on a 1e-6 grid
        let mut prev = forcing(1e-6, 1.0);
        let mut crossing = None;
        for i in 2..2_000_000 {
            let d = i as f64 * 1e-6;
            let g = forcing(d, 1.0);
            if prev < 0.0 && g >= 0.0 {
                crossing = Some(d);
                break;
            }
            prev = g;
        }
        let grid = crossing.expect("no sign change");
        let eq = find_dipole_equilibrium(angle(1.0));
        assert!((grid - eq).abs() <= 1e-6, "grid {grid} bisection {eq}");
    }

    #[test]
    fn equilibrium_independent_of_angle() {
        let a = find_dipole_equilibrium(angle(0.5));
        let b = find_dipole_equilibrium(angle(1.0));
        let c = find_dipole_equilibrium(angle(2.0));
        assert!((a - b).abs() < 1e-12 && (b - c).abs() < 1e-12);
    }

    #[test]
    fn asymptotic_branches() {
        let s = angle(1.0);
        assert!((dipole_asymptotic(0.03, s, 0.0, Branch::NearZero).unwrap() - 0.03).abs() < 1e-15);
        let v = dipole_asymptotic(1.97, s, 0.0, Branch::NearTwo).unwrap();
        assert!((v - 1.97).abs() < 1e-15);
        assert_eq!(dipole_asymptotic(1.97, s, 50.0, Branch::NearTwo).unwrap(), 2.0);
        assert!(matches!(
            dipole_asymptotic(0.5, s, 0.1, Branch::NearZero),
            Err(PairError::BranchMismatch { .. })
        ));
        assert!(dipole_asymptotic(1.5, s, 0.1, Branch::NearTwo).is_err());
    }

    #[test]
    fn effective_pair_hand_values() {
        let p = Vec2::new(0.5, 0.0);
        let ep = EffectivePair::new(angle(1.0), angle(2.0), p).unwrap();
        let (_, lambda) = effective_pair_rhs(&ep);
        assert!((lambda.x - 1.125).abs() < 1e-15 && lambda.y == 0.0);
        let ep = EffectivePair::new(angle(-1.5), angle(1.5), Vec2::new(0.2, 0.3)).unwrap();
        let (v, lambda) = effective_pair_rhs(&ep);
        assert_eq!(v, Vec2::ZERO);
        assert_eq!(lambda, Vec2::ZERO);
        let ep = EffectivePair::new(angle(2.0), angle(2.0), Vec2::new(0.2, 0.3)).unwrap();
        assert_eq!(effective_pair_rhs(&ep).1, Vec2::ZERO);
        assert!(EffectivePair::new(angle(1.0), angle(1.0), Vec2::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn effective_pair_moves_like_a_single_disclination() {
        let ep = EffectivePair::new(angle(1.0), angle(2.0), Vec2::new(0.3, 0.1)).unwrap();
        let settings = IntegratorSettings {
            t_end: 1.0,
            rel_tol: 1e-11,
            abs_tol: 1e-13,
            ..Default::default()
        };
        let tr = simulate_effective_pair(&ep, &settings).unwrap();
        let se = FrankAngle::new(ep.s_eff()).unwrap();
        let rho0 = ep.pos().norm();
        let phi0 = ep.pos().angle();
        for smp in &tr.samples {
            let exact = flow::analytic_single(se, rho0, phi0, smp.time);
            let err = (smp.xi1 - exact).norm();
            assert!(err < 1e-9, "t={} err={err}", smp.time);
        }
    }

    #[test]
    fn constrained_pair_keeps_offset_and_force_balance() {
        let eps = Vec2::new(1e-3, 0.0);
        let settings = IntegratorSettings {
            t_end: 0.5,
            ..Default::default()
        };
        let tr =
            simulate_constrained_eps(angle(1.0), angle(2.0), Vec2::new(0.3, 0.0), eps, &settings)
                .unwrap();
        for smp in &tr.samples {
            assert!((smp.xi1 - smp.xi2 - eps).norm() < 1e-15);
            let r = constraint_force_residual(angle(1.0), angle(2.0), smp.xi1, eps).unwrap();
            assert!(r < 1e-12);
        }
    }

    #[test]
    fn constrained_inputs_are_checked() {
        let settings = IntegratorSettings::default();
        let s = angle(1.0);
        assert!(matches!(
            simulate_constrained_eps(s, s, Vec2::new(0.3, 0.0), Vec2::ZERO, &settings),
            Err(PairError::ZeroOffset)
        ));
        assert!(simulate_constrained_eps(s, s, Vec2::new(1.0, 0.0), Vec2::new(0.1, 0.0), &settings)
            .is_err());
        assert!(simulate_dipole(0.0, s, 1.0).is_err());
        assert!(simulate_dipole(2.0, s, 1.0).is_err());
    }
}
