//! Closed-form nondimensional energy and forces for wedge disclinations in the unit disk.
//!
//! Positions are measured in units of the disk radius, so the domain is the open unit
//! disk. The energy of `N` disclinations `(s_k, Ξ_k)` is
//!
//! ```text
//! H = ½ Σ_k s_k² (1-|Ξ_k|²)²
//!   + Σ_{k<h} s_k s_h (1-|Ξ_k|²)(1-|Ξ_h|²)
//!   + Σ_{k<h} s_k s_h |Ξ_k-Ξ_h|² log Φ_kh
//! ```
//!
//! with the pair ratio `Φ_kh = d² / (d² + (1-|Ξ_k|²)(1-|Ξ_h|²))`, `d = |Ξ_k-Ξ_h|`.
//! The force `F_k = -∇_{Ξ_k} H` splits into a self (boundary) term, boundary terms
//! modulated by every other disclination, and mutual terms along the connecting segment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;

/// Separations below this are treated as superposed.
pub const MIN_SEPARATION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("Frank angle must be a finite non-zero number, got {0}")]
    ZeroFrankAngle(f64),
    #[error("position ({x}, {y}) of disclination {index} lies outside the closed unit disk")]
    OutsideDisk { index: usize, x: f64, y: f64 },
    #[error("disclinations {0} and {1} are superposed (separation below {MIN_SEPARATION:e})")]
    CoincidentPositions(usize, usize),
    #[error("a configuration needs at least one disclination")]
    EmptyConfiguration,
    #[error("disclination index {index} out of range for N = {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid physical scales: {0}")]
    InvalidScales(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Signed Frank angle of a disclination; never zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FrankAngle(f64);

impl FrankAngle {
    pub fn new(value: f64) -> Result<Self> {
        if value == 0.0 || !value.is_finite() {
            return Err(ModelError::ZeroFrankAngle(value));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for FrankAngle {
    type Error = ModelError;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<FrankAngle> for f64 {
    fn from(s: FrankAngle) -> f64 {
        s.0
    }
}

/// Nondimensional position; the unit is the disk radius.
pub type Position = Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disclination {
    pub angle: FrankAngle,
    pub pos: Position,
}

impl Disclination {
    pub fn new(angle: f64, pos: Position) -> Result<Self> {
        Ok(Self {
            angle: FrankAngle::new(angle)?,
            pos,
        })
    }

    pub fn s(&self) -> f64 {
        self.angle.value()
    }
}

/// Ordered list of disclinations, all inside the closed unit disk.
///
/// Superposed positions are allowed here; the force and energy routines reject them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Disclination>", into = "Vec<Disclination>")]
pub struct Configuration {
    items: Vec<Disclination>,
}

impl Configuration {
    pub fn new(items: Vec<Disclination>) -> Result<Self> {
        if items.is_empty() {
            return Err(ModelError::EmptyConfiguration);
        }
        for (index, d) in items.iter().enumerate() {
            let r2 = d.pos.norm_sq();
            if !d.pos.is_finite() || r2 > 1.0 {
                return Err(ModelError::OutsideDisk {
                    index,
                    x: d.pos.x,
                    y: d.pos.y,
                });
            }
        }
        Ok(Self { items })
    }

    /// Builds a configuration from `(s, x, y)` triples.
    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self> {
        let items = triples
            .iter()
            .map(|&(s, x, y)| Disclination::new(s, Vec2::new(x, y)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Disclination] {
        &self.items
    }

    pub fn get(&self, k: usize) -> Result<&Disclination> {
        self.items.get(k).ok_or(ModelError::IndexOutOfRange {
            index: k,
            len: self.items.len(),
        })
    }

    pub fn angles(&self) -> Vec<f64> {
        self.items.iter().map(Disclination::s).collect()
    }

    pub fn positions(&self) -> Vec<Position> {
        self.items.iter().map(|d| d.pos).collect()
    }

    pub fn total_angle(&self) -> f64 {
        self.items.iter().map(Disclination::s).sum()
    }

    /// Same angles, new positions (validated).
    pub fn with_positions(&self, positions: &[Position]) -> Result<Self> {
        assert_eq!(positions.len(), self.items.len(), "position count mismatch");
        let items = self
            .items
            .iter()
            .zip(positions)
            .map(|(d, &pos)| Disclination { angle: d.angle, pos })
            .collect();
        Self::new(items)
    }

    /// Flattened `[x1, y1, x2, y2, ...]` state vector.
    pub fn to_state(&self) -> Vec<f64> {
        self.items.iter().flat_map(|d| [d.pos.x, d.pos.y]).collect()
    }

    pub fn from_state(&self, state: &[f64]) -> Result<Self> {
        self.with_positions(&state_positions(state))
    }

    /// Same angles at the positions encoded in `state`, without the disk check.
    pub(crate) fn items_at(&self, state: &[f64]) -> Vec<Disclination> {
        self.items
            .iter()
            .zip(state.chunks_exact(2))
            .map(|(d, c)| Disclination {
                angle: d.angle,
                pos: Vec2::new(c[0], c[1]),
            })
            .collect()
    }

    pub(crate) fn from_items_unchecked(items: Vec<Disclination>) -> Self {
        Self { items }
    }

    /// First superposed pair, if any.
    pub fn superposed_pair(&self) -> Option<(usize, usize)> {
        let n = self.items.len();
        (0..n)
            .flat_map(|k| ((k + 1)..n).map(move |h| (k, h)))
            .find(|&(k, h)| (self.items[k].pos - self.items[h].pos).norm() < MIN_SEPARATION)
    }
}

impl TryFrom<Vec<Disclination>> for Configuration {
    type Error = ModelError;
    fn try_from(items: Vec<Disclination>) -> Result<Self> {
        Self::new(items)
    }
}

impl From<Configuration> for Vec<Disclination> {
    fn from(c: Configuration) -> Self {
        c.items
    }
}

pub(crate) fn state_positions(state: &[f64]) -> Vec<Position> {
    state.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect()
}

/// `1 - |p|²`, the distance-to-boundary weight.
fn boundary_weight(p: Position) -> f64 {
    1.0 - p.norm_sq()
}

/// Pair geometry shared by energy and force terms.
#[derive(Debug, Clone, Copy)]
struct PairTerms {
    d2: f64,
    ratio: f64,
    log_ratio: f64,
}

fn pair_terms(a: Position, b: Position) -> Option<PairTerms> {
    let d2 = (a - b).norm_sq();
    if d2.sqrt() < MIN_SEPARATION {
        return None;
    }
    let q = boundary_weight(a) * boundary_weight(b);
    let denom = d2 + q;
    // log Φ = log d² - log(d² + q); stays accurate when Φ is close to 1.
    let log_ratio = if q == 0.0 { 0.0 } else { d2.ln() - denom.ln() };
    Some(PairTerms {
        d2,
        ratio: d2 / denom,
        log_ratio,
    })
}

/// Pair ratio `Φ(a, b) = |a-b|² / (|a-b|² + (1-|a|²)(1-|b|²))`.
pub fn pair_ratio(a: Position, b: Position) -> Result<f64> {
    pair_terms(a, b)
        .map(|t| t.ratio)
        .ok_or(ModelError::CoincidentPositions(0, 1))
}

/// Nondimensional elastic energy of a configuration.
pub fn energy(cfg: &Configuration) -> Result<f64> {
    energy_of(cfg.items())
}

pub(crate) fn energy_of(items: &[Disclination]) -> Result<f64> {
    let mut self_part = 0.0;
    let mut boundary_part = 0.0;
    let mut mutual_part = 0.0;
    for (k, dk) in items.iter().enumerate() {
        let wk = boundary_weight(dk.pos);
        self_part += 0.5 * dk.s() * dk.s() * wk * wk;
        for (h, dh) in items.iter().enumerate().skip(k + 1) {
            let t = pair_terms(dk.pos, dh.pos).ok_or(ModelError::CoincidentPositions(k, h))?;
            let ss = dk.s() * dh.s();
            boundary_part += ss * wk * boundary_weight(dh.pos);
            mutual_part += ss * t.d2 * t.log_ratio;
        }
    }
    Ok(self_part + boundary_part + mutual_part)
}

/// Energy of two superposed disclinations at `p`: `½(s1+s2)²(1-|p|²)²`.
pub fn superposed_energy(s1: FrankAngle, s2: FrankAngle, p: Position) -> f64 {
    let s = s1.value() + s2.value();
    let w = boundary_weight(p);
    0.5 * s * s * w * w
}

/// Boundary self-interaction `2 s² (1-|Ξ|²) Ξ`; radial.
pub fn force_self(d: &Disclination) -> Vec2 {
    2.0 * d.s() * d.s() * boundary_weight(d.pos) * d.pos
}

/// Boundary action on `k` modulated by `h`: `2 s_k s_h (1-Φ)(1-|Ξ_h|²) Ξ_k`.
pub fn force_boundary_pair(k: &Disclination, h: &Disclination) -> Result<Vec2> {
    let t = pair_terms(k.pos, h.pos).ok_or(ModelError::CoincidentPositions(0, 1))?;
    Ok(boundary_pair(k, h, t))
}

fn boundary_pair(k: &Disclination, h: &Disclination, t: PairTerms) -> Vec2 {
    2.0 * k.s() * h.s() * (1.0 - t.ratio) * boundary_weight(h.pos) * k.pos
}

/// Mutual interaction on `k` due to `h`: `2 s_k s_h (1-Φ+log Φ)(Ξ_h-Ξ_k)`.
pub fn force_mutual_pair(k: &Disclination, h: &Disclination) -> Result<Vec2> {
    let t = pair_terms(k.pos, h.pos).ok_or(ModelError::CoincidentPositions(0, 1))?;
    Ok(mutual_pair(k, h, t))
}

fn mutual_pair(k: &Disclination, h: &Disclination, t: PairTerms) -> Vec2 {
    2.0 * k.s() * h.s() * mutual_factor_terms(t) * (h.pos - k.pos)
}

fn mutual_factor_terms(t: PairTerms) -> f64 {
    1.0 - t.ratio + t.log_ratio
}

/// Scalar `1 - Φ + log Φ`; strictly negative on `(0, 1)`.
pub fn mutual_factor(ratio: f64) -> f64 {
    1.0 - ratio + ratio.ln()
}

/// The three contributions to the force on one disclination.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForceParts {
    pub self_term: Vec2,
    pub boundary: Vec2,
    pub mutual: Vec2,
}

impl ForceParts {
    pub fn total(&self) -> Vec2 {
        self.self_term + self.boundary + self.mutual
    }
}

/// Force decomposition on disclination `k`.
pub fn force_parts(cfg: &Configuration, k: usize) -> Result<ForceParts> {
    cfg.get(k)?;
    force_parts_of(cfg.items(), k)
}

pub(crate) fn force_parts_of(items: &[Disclination], k: usize) -> Result<ForceParts> {
    let dk = &items[k];
    let mut parts = ForceParts {
        self_term: force_self(dk),
        ..Default::default()
    };
    for (h, dh) in items.iter().enumerate() {
        if h == k {
            continue;
        }
        let t = pair_terms(dk.pos, dh.pos)
            .ok_or(ModelError::CoincidentPositions(k.min(h), k.max(h)))?;
        parts.boundary += boundary_pair(dk, dh, t);
        parts.mutual += mutual_pair(dk, dh, t);
    }
    Ok(parts)
}

/// Total force `F_k = -∇_{Ξ_k} H`.
pub fn total_force(cfg: &Configuration, k: usize) -> Result<Vec2> {
    force_parts(cfg, k).map(|p| p.total())
}

/// Forces on every disclination, in order.
pub fn all_forces(cfg: &Configuration) -> Result<Vec<Vec2>> {
    forces_of(cfg.items())
}

/// Forces for an unvalidated list; integrator stages may step marginally past the boundary,
/// where the closed-form expressions still apply.
pub(crate) fn forces_of(items: &[Disclination]) -> Result<Vec<Vec2>> {
    (0..items.len())
        .map(|k| force_parts_of(items, k).map(|p| p.total()))
        .collect()
}

/// Dimensional material and kinetic constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalScales {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub radius: f64,
    pub mobility: f64,
}

impl PhysicalScales {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(ModelError::InvalidScales(what.to_string()));
        if !(self.young_modulus > 0.0) || !self.young_modulus.is_finite() {
            return bad("Young's modulus must be positive");
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return bad("Poisson ratio must lie in (-1, 0.5)");
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return bad("radius must be positive");
        }
        if !(self.mobility > 0.0) || !self.mobility.is_finite() {
            return bad("mobility must be positive");
        }
        Ok(())
    }

    /// Energy scale `C = E R² / (16 π (1 - ν²))`.
    pub fn energy_scale(&self) -> f64 {
        let nu = self.poisson_ratio;
        self.young_modulus * self.radius * self.radius
            / (16.0 * std::f64::consts::PI * (1.0 - nu * nu))
    }
}

/// Converts physical time to nondimensional time `T = λ C t / R²`.
pub fn to_nondimensional(ps: &PhysicalScales, t_physical: f64) -> Result<f64> {
    ps.validate()?;
    Ok(ps.mobility * ps.energy_scale() / (ps.radius * ps.radius) * t_physical)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(s: f64, x: f64, y: f64) -> Disclination {
        Disclination::new(s, Vec2::new(x, y)).unwrap()
    }

    #[test]
    fn pair_ratio_hand_values() {
        let r = pair_ratio(Vec2::ZERO, Vec2::new(0.5, 0.0)).unwrap();
        assert!((r - 0.25).abs() < 1e-15);
        assert_eq!(pair_ratio(Vec2::ZERO, Vec2::new(1.0, 0.0)).unwrap(), 1.0);
        let a = Vec2::new(0.1, -0.4);
        let b = Vec2::new(-0.3, 0.2);
        assert_eq!(pair_ratio(a, b).unwrap(), pair_ratio(b, a).unwrap());
    }

    #[test]
    fn pair_ratio_rejects_coincident() {
        let a = Vec2::new(0.2, 0.2);
        assert!(matches!(
            pair_ratio(a, a),
            Err(ModelError::CoincidentPositions(..))
        ));
    }

    #[test]
    fn single_disclination_energy() {
        let c = Configuration::from_triples(&[(1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(energy(&c).unwrap(), 0.5);
        let c = Configuration::from_triples(&[(1.0, 0.5, 0.0)]).unwrap();
        assert!((energy(&c).unwrap() - 0.28125).abs() < 1e-15);
    }

    #[test]
    fn boundary_configuration_has_zero_energy() {
        let c = Configuration::from_triples(&[
            (1.0, 1.0, 0.0),
            (-2.0, 0.0, 1.0),
            (1.5, -0.6, -0.8),
        ])
        .unwrap();
        assert!(energy(&c).unwrap().abs() < 1e-15);
    }

    #[test]
    fn superposed_energy_cases() {
        let p = FrankAngle::new(1.0).unwrap();
        let m = FrankAngle::new(-1.0).unwrap();
        assert_eq!(superposed_energy(p, m, Vec2::new(0.3, 0.1)), 0.0);
        assert_eq!(superposed_energy(p, p, Vec2::ZERO), 2.0);
        let s3 = FrankAngle::new(-3.0).unwrap();
        let pos = Vec2::new(0.2, -0.5);
        let single = Configuration::from_triples(&[(-2.0, pos.x, pos.y)]).unwrap();
        assert!((superposed_energy(p, s3, pos) - energy(&single).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn superposed_energy_is_the_limit_of_the_pair_energy() {
        let p = Vec2::new(0.3, 0.2);
        let (s1, s2) = (1.0, -2.0);
        let eps = 1e-7;
        let c = Configuration::from_triples(&[(s1, p.x + eps, p.y), (s2, p.x, p.y)]).unwrap();
        let limit = superposed_energy(FrankAngle::new(s1).unwrap(), FrankAngle::new(s2).unwrap(), p);
        assert!((energy(&c).unwrap() - limit).abs() < 1e-6);
    }

    #[test]
    fn self_force_hand_values() {
        assert_eq!(force_self(&disc(1.0, 0.0, 0.0)), Vec2::ZERO);
        let f = force_self(&disc(1.0, 0.5, 0.0));
        assert!((f.x - 0.75).abs() < 1e-15 && f.y == 0.0);
        assert_eq!(force_self(&disc(-1.0, 0.3, 0.4)), force_self(&disc(1.0, 0.3, 0.4)));
        assert_eq!(force_self(&disc(2.0, 0.6, 0.8)).norm(), 0.0);
    }

    #[test]
    fn boundary_pair_hand_values() {
        let f = force_boundary_pair(&disc(1.0, 0.5, 0.0), &disc(1.0, 0.0, 0.0)).unwrap();
        // 2 (1 - 0.25)(1 - 0) (0.5, 0)
        assert!((f.x - 0.75).abs() < 1e-15 && f.y == 0.0);
        let f = force_boundary_pair(&disc(1.0, 0.0, 0.0), &disc(2.0, 0.3, 0.1)).unwrap();
        assert_eq!(f, Vec2::ZERO);
        let f = force_boundary_pair(&disc(1.0, 0.3, 0.1), &disc(2.0, 0.0, 1.0)).unwrap();
        assert!(f.norm() < 1e-15);
    }

    #[test]
    fn mutual_pair_hand_value_and_sign() {
        let k = disc(1.0, 0.5, 0.0);
        let h = disc(1.0, 0.0, 0.0);
        let f = force_mutual_pair(&k, &h).unwrap();
        // 2 (1 - 0.25 + ln 0.25) (-0.5, 0); ln 0.25 = -1.3862943611198906
        let expected = 2.0 * (0.75 - 1.386_294_361_119_890_6) * -0.5;
        assert!((f.x - expected).abs() < 1e-15);
        assert!((f.x - 0.636_294_361_119_890_6).abs() < 1e-12);
        assert!(f.dot(h.pos - k.pos) < 0.0);
        let h_neg = disc(-1.0, 0.0, 0.0);
        assert!(force_mutual_pair(&k, &h_neg).unwrap().dot(h.pos - k.pos) > 0.0);
    }

    #[test]
    fn mutual_factor_negative_on_grid() {
        for i in 1..10_000 {
            let phi = i as f64 / 10_000.0;
            assert!(mutual_factor(phi) < 0.0, "phi = {phi}");
        }
    }

    #[test]
    fn single_total_force_is_self_force() {
        let c = Configuration::from_triples(&[(1.5, 0.2, -0.6)]).unwrap();
        assert_eq!(total_force(&c, 0).unwrap(), force_self(&c.items()[0]));
    }

    #[test]
    fn coincident_configuration_is_rejected() {
        let c = Configuration::from_triples(&[(1.0, 0.3, 0.0), (-1.0, 0.3, 0.0)]).unwrap();
        assert_eq!(energy(&c), Err(ModelError::CoincidentPositions(0, 1)));
        assert_eq!(total_force(&c, 1), Err(ModelError::CoincidentPositions(0, 1)));
        assert_eq!(c.superposed_pair(), Some((0, 1)));
    }

    #[test]
    fn annihilating_pair_forces_vanish_in_the_superposed_limit() {
        let eps = 1e-9;
        let c = Configuration::from_triples(&[(1.0, 0.3 + eps, 0.1), (-1.0, 0.3, 0.1)]).unwrap();
        for f in all_forces(&c).unwrap() {
            assert!(f.norm() < 1e-6, "{f:?}");
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(FrankAngle::new(0.0).is_err());
        assert!(FrankAngle::new(f64::NAN).is_err());
        assert!(Configuration::from_triples(&[(1.0, 0.9, 0.9)]).is_err());
        assert!(Configuration::new(vec![]).is_err());
        let c = Configuration::from_triples(&[(1.0, 0.0, 0.0)]).unwrap();
        assert!(matches!(total_force(&c, 3), Err(ModelError::IndexOutOfRange { .. })));
    }

    #[test]
    fn nondimensional_time() {
        let ps = PhysicalScales {
            young_modulus: 16.0 * std::f64::consts::PI,
            poisson_ratio: 0.0,
            radius: 1.0,
            mobility: 1.0,
        };
        assert_eq!(to_nondimensional(&ps, 0.0).unwrap(), 0.0);
        assert!((to_nondimensional(&ps, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let fast = PhysicalScales { mobility: 2.0, ..ps };
        let t = to_nondimensional(&ps, 0.7).unwrap();
        assert!((to_nondimensional(&fast, 0.7).unwrap() - 2.0 * t).abs() < 1e-15);
        let bad = PhysicalScales { poisson_ratio: 0.5, ..ps };
        assert!(to_nondimensional(&bad, 1.0).is_err());
        let bad = PhysicalScales { radius: 0.0, ..ps };
        assert!(to_nondimensional(&bad, 1.0).is_err());
    }
}
