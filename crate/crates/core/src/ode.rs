//! Adaptive Dormand–Prince 5(4) stepper with PI step-size control.
//!
//! Dense output between accepted steps uses the fourth-order continuous extension of the
//! method. Events are located by bisection on that interpolant.

/// Autonomous or time-dependent first-order system `y' = f(t, y)`.
///
/// The right-hand side may refuse a state (e.g. superposed disclinations); the stepper
/// treats that as a rejected step and retries with a smaller step.
pub trait OdeSystem {
    type Error: Clone;

    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), Self::Error>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepError<E> {
    /// The step size fell below the representable minimum at time `t`.
    Collapse { t: f64, last_error: Option<E> },
    /// The right-hand side failed at the initial state.
    InitialState(E),
}

/// Interpolating polynomial over `[base, base + span]` in `θ = (t - base)/span`:
/// `r1 + θ(r2 + (1-θ)(r3 + θ(r4 + (1-θ)r5)))`.
#[derive(Debug, Clone)]
struct Dense {
    base: f64,
    span: f64,
    r: [Vec<f64>; 5],
}

impl Dense {
    fn theta(&self, t: f64) -> f64 {
        ((t - self.base) / self.span).clamp(0.0, 1.0)
    }

    fn value(&self, t: f64) -> Vec<f64> {
        let th = self.theta(t);
        let u = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.r;
        (0..r1.len())
            .map(|i| r1[i] + th * (r2[i] + u * (r3[i] + th * (r4[i] + u * r5[i]))))
            .collect()
    }

    fn derivative(&self, t: f64) -> Vec<f64> {
        let th = self.theta(t);
        let u = 1.0 - th;
        let [_, r2, r3, r4, r5] = &self.r;
        let c3 = u - th;
        let c4 = th * (2.0 - 3.0 * th);
        let c5 = 2.0 * th * u * (u - th);
        (0..r2.len())
            .map(|i| (r2[i] + c3 * r3[i] + c4 * r4[i] + c5 * r5[i]) / self.span)
            .collect()
    }
}

/// One accepted step with the data needed for dense output.
#[derive(Debug, Clone)]
pub struct Step {
    pub t0: f64,
    pub t1: f64,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
    dense: Dense,
}

impl Step {
    /// A step whose dense output is the cubic Hermite interpolant of the endpoint data.
    pub fn hermite(
        t0: f64,
        t1: f64,
        y0: Vec<f64>,
        y1: Vec<f64>,
        f0: Vec<f64>,
        f1: Vec<f64>,
    ) -> Step {
        let h = t1 - t0;
        let diff: Vec<f64> = y1.iter().zip(&y0).map(|(a, b)| a - b).collect();
        let r3: Vec<f64> = (0..y0.len()).map(|i| h * f0[i] - diff[i]).collect();
        let r4: Vec<f64> = (0..y0.len()).map(|i| diff[i] - h * f1[i] - r3[i]).collect();
        let dense = Dense {
            base: t0,
            span: h,
            r: [y0.clone(), diff, r3, r4, vec![0.0; y0.len()]],
        };
        Step {
            t0,
            t1,
            y0,
            y1,
            f0,
            f1,
            dense,
        }
    }

    pub fn h(&self) -> f64 {
        self.t1 - self.t0
    }

    /// Dense output at `t ∈ [t0, t1]`.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        if self.h() == 0.0 || t >= self.t1 {
            return self.y1.clone();
        }
        if t <= self.t0 {
            return self.y0.clone();
        }
        self.dense.value(t)
    }

    /// Time derivative of the dense output.
    pub fn derivative_at(&self, t: f64) -> Vec<f64> {
        if self.h() == 0.0 || t >= self.t1 {
            return self.f1.clone();
        }
        if t <= self.t0 {
            return self.f0.clone();
        }
        self.dense.derivative(t)
    }

    /// The same step cut at `t`, keeping its interpolant.
    pub fn truncate(&self, t: f64) -> Step {
        let t = t.clamp(self.t0, self.t1);
        Step {
            t0: self.t0,
            t1: t,
            y0: self.y0.clone(),
            y1: self.interpolate(t),
            f0: self.f0.clone(),
            f1: self.derivative_at(t),
            dense: self.dense.clone(),
        }
    }
}

// Dormand–Prince coefficients.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// 5th-order weights minus embedded 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - 0.75 * BETA;

/// Integration statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
}

pub struct Stepper<'a, S: OdeSystem> {
    sys: &'a S,
    tol: Tolerances,
    max_step: f64,
    t: f64,
    y: Vec<f64>,
    f: Vec<f64>,
    h: f64,
    err_prev: f64,
    last_rejected: bool,
    stats: Stats,
}

impl<'a, S: OdeSystem> Stepper<'a, S> {
    pub fn new(
        sys: &'a S,
        t0: f64,
        y0: Vec<f64>,
        tol: Tolerances,
        max_step: f64,
    ) -> Result<Self, StepError<S::Error>> {
        let n = sys.dim();
        assert_eq!(y0.len(), n, "state dimension mismatch");
        let mut f = vec![0.0; n];
        sys.rhs(t0, &y0, &mut f).map_err(StepError::InitialState)?;
        let mut stepper = Self {
            sys,
            tol,
            max_step,
            t: t0,
            y: y0,
            f,
            h: 0.0,
            err_prev: 1e-4,
            last_rejected: false,
            stats: Stats {
                rhs_evals: 1,
                ..Default::default()
            },
        };
        stepper.h = stepper.initial_step();
        Ok(stepper)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn derivative(&self) -> &[f64] {
        &self.f
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    fn weight(&self, a: f64, b: f64) -> f64 {
        self.tol.abs + self.tol.rel * a.abs().max(b.abs())
    }

    fn initial_step(&self) -> f64 {
        let n = self.y.len().max(1) as f64;
        let rms = |v: &[f64]| {
            (v.iter()
                .zip(&self.y)
                .map(|(a, y)| (a / self.weight(*y, *y)).powi(2))
                .sum::<f64>()
                / n)
                .sqrt()
        };
        let d0 = rms(&self.y);
        let d1 = rms(&self.f);
        let h = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h.min(self.max_step).max(1e-10)
    }

    fn min_step(&self) -> f64 {
        16.0 * f64::EPSILON * self.t.abs().max(1.0)
    }

    /// Advances by one accepted step, never past `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<Step, StepError<S::Error>> {
        let n = self.y.len();
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut ys = vec![0.0; n];
        let mut y_new = vec![0.0; n];
        let mut last_error = None;

        loop {
            let remaining = t_limit - self.t;
            let mut h = self.h.min(self.max_step);
            let hits_limit = h >= remaining;
            if hits_limit {
                h = remaining;
            }
            if h < self.min_step() && !(hits_limit && h > 0.0) {
                return Err(StepError::Collapse {
                    t: self.t,
                    last_error,
                });
            }
            let t = self.t;
            let y = &self.y;
            let k1 = &self.f;

            let attempt = (|| {
                for i in 0..n {
                    ys[i] = y[i] + h * A21 * k1[i];
                }
                self.sys.rhs(t + C2 * h, &ys, &mut k2)?;
                for i in 0..n {
                    ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
                }
                self.sys.rhs(t + C3 * h, &ys, &mut k3)?;
                for i in 0..n {
                    ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
                }
                self.sys.rhs(t + C4 * h, &ys, &mut k4)?;
                for i in 0..n {
                    ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
                }
                self.sys.rhs(t + C5 * h, &ys, &mut k5)?;
                for i in 0..n {
                    ys[i] = y[i]
                        + h * (A61 * k1[i]
                            + A62 * k2[i]
                            + A63 * k3[i]
                            + A64 * k4[i]
                            + A65 * k5[i]);
                }
                self.sys.rhs(t + h, &ys, &mut k6)?;
                for i in 0..n {
                    y_new[i] = y[i]
                        + h * (A71 * k1[i]
                            + A73 * k3[i]
                            + A74 * k4[i]
                            + A75 * k5[i]
                            + A76 * k6[i]);
                }
                self.sys.rhs(t + h, &y_new, &mut k7)?;
                Ok::<(), S::Error>(())
            })();
            self.stats.rhs_evals += 6;

            if let Err(e) = attempt {
                last_error = Some(e);
                self.stats.rejected += 1;
                self.h = 0.25 * h;
                self.last_rejected = true;
                continue;
            }

            let mut sum = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
                let w = self.weight(y[i], y_new[i]);
                sum += (e / w).powi(2);
            }
            let err = (sum / n.max(1) as f64).sqrt();

            if err <= 1.0 && err.is_finite() {
                let err_c = err.max(1e-10);
                let mut fac = SAFETY * err_c.powf(-ALPHA) * self.err_prev.powf(BETA);
                fac = fac.clamp(FAC_MIN, FAC_MAX);
                if self.last_rejected {
                    fac = fac.min(1.0);
                }
                self.err_prev = err_c;
                let t1 = if hits_limit { t_limit } else { t + h };
                let diff: Vec<f64> = (0..n).map(|i| y_new[i] - y[i]).collect();
                let r3: Vec<f64> = (0..n).map(|i| h * k1[i] - diff[i]).collect();
                let r4: Vec<f64> = (0..n).map(|i| diff[i] - h * k7[i] - r3[i]).collect();
                let r5: Vec<f64> = (0..n)
                    .map(|i| {
                        h * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i])
                    })
                    .collect();
                let step = Step {
                    t0: t,
                    t1,
                    y0: y.clone(),
                    y1: y_new.clone(),
                    f0: k1.clone(),
                    f1: k7.clone(),
                    dense: Dense {
                        base: t,
                        span: t1 - t,
                        r: [y.clone(), diff, r3, r4, r5],
                    },
                };
                self.t = t1;
                self.y.copy_from_slice(&y_new);
                self.f.copy_from_slice(&k7);
                // Keep the controller's proposal even when the step was clipped to t_limit.
                self.h = if hits_limit { self.h.max(h) } else { h * fac };
                self.last_rejected = false;
                self.stats.accepted += 1;
                return Ok(step);
            }

            self.stats.rejected += 1;
            let fac = if err.is_finite() {
                (SAFETY * err.powf(-ALPHA)).clamp(FAC_MIN, 1.0)
            } else {
                FAC_MIN
            };
            self.h = h * fac;
            self.last_rejected = true;
        }
    }
}

/// Locates a sign change of `g` on `[a, b]` by bisection; `ga` and `gb` must differ in sign
/// (or `gb` be zero). Returns the bracket `(lo, hi)` with `hi - lo <= tol`.
pub fn bisect<G: FnMut(f64) -> f64>(mut g: G, a: f64, b: f64, ga: f64, tol: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (a, b);
    let lo_sign = ga > 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if (gm > 0.0) == lo_sign && gm != 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;

    impl OdeSystem for Decay {
        type Error = ();
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), ()> {
            dydt[0] = -y[0];
            Ok(())
        }
    }

    struct Oscillator;

    impl OdeSystem for Oscillator {
        type Error = ();
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), ()> {
            dydt[0] = y[1];
            dydt[1] = -y[0];
            Ok(())
        }
    }

    /// Refuses states with y < 0.5, like a separation guard.
    struct Guarded;

    impl OdeSystem for Guarded {
        type Error = &'static str;
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dydt: &mut [f64]) -> Result<(), &'static str> {
            if y[0] < 0.5 {
                return Err("guard");
            }
            dydt[0] = -1.0;
            Ok(())
        }
    }

    fn run<S: OdeSystem>(sys: &S, y0: Vec<f64>, t_end: f64, tol: f64) -> Vec<f64> {
        let tol = Tolerances { rel: tol, abs: tol };
        let mut st = Stepper::new(sys, 0.0, y0, tol, 1.0).ok().unwrap();
        while st.t() < t_end {
            st.step(t_end).ok().unwrap();
        }
        st.y().to_vec()
    }

    #[test]
    fn exponential_decay_is_accurate() {
        let y = run(&Decay, vec![1.0], 3.0, 1e-10);
        assert!((y[0] - (-3.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn oscillator_period() {
        let t = 2.0 * std::f64::consts::PI;
        let y = run(&Oscillator, vec![1.0, 0.0], t, 1e-11);
        assert!((y[0] - 1.0).abs() < 1e-9 && y[1].abs() < 1e-9);
    }

    #[test]
    fn tighter_tolerance_is_more_accurate() {
        let exact = (-5.0f64).exp();
        let loose = (run(&Decay, vec![1.0], 5.0, 1e-6)[0] - exact).abs();
        let tight = (run(&Decay, vec![1.0], 5.0, 1e-9)[0] - exact).abs();
        assert!(tight * 4.0 < loose, "loose {loose:e} tight {tight:e}");
    }

    #[test]
    fn hermite_interpolant_matches_endpoints_and_cubic() {
        // y = t³ has an exact cubic Hermite representation.
        let step = Step::hermite(1.0, 2.0, vec![1.0], vec![8.0], vec![3.0], vec![12.0]);
        assert_eq!(step.interpolate(1.0), vec![1.0]);
        assert_eq!(step.interpolate(2.0), vec![8.0]);
        assert!((step.interpolate(1.5)[0] - 3.375).abs() < 1e-14);
        assert!((step.derivative_at(1.5)[0] - 6.75).abs() < 1e-13);
        let cut = step.truncate(1.5);
        for t in [1.1, 1.25, 1.4] {
            assert!((cut.interpolate(t)[0] - t * t * t).abs() < 1e-13);
        }
    }

    #[test]
    fn dense_output_is_fourth_order() {
        // local interpolation error against the exact flow from each step's start
        let err_at = |h: f64| {
            let tol = Tolerances { rel: 1.0e-3, abs: 1.0e-3 };
            let mut st = Stepper::new(&Decay, 0.0, vec![1.0], tol, h).unwrap();
            let mut worst: f64 = 0.0;
            while st.t() < 4.0 {
                let step = st.step(4.0).unwrap();
                if step.h() < 0.999 * h {
                    continue;
                }
                for i in 0..=10 {
                    let t = step.t0 + step.h() * i as f64 / 10.0;
                    let exact = step.y0[0] * (step.t0 - t).exp();
                    worst = worst.max((step.interpolate(t)[0] - exact).abs());
                }
            }
            worst
        };
        let (coarse, fine) = (err_at(0.4), err_at(0.2));
        assert!(coarse < 1e-5, "{coarse:e}");
        assert!(coarse / fine > 20.0, "ratio {}", coarse / fine);
    }

    #[test]
    fn guard_violation_ends_in_collapse() {
        let tol = Tolerances { rel: 1e-8, abs: 1e-8 };
        let mut st = Stepper::new(&Guarded, 0.0, vec![1.0], tol, 0.1).ok().unwrap();
        let outcome = loop {
            match st.step(10.0) {
                Ok(_) => continue,
                Err(e) => break e,
            }
        };
        match outcome {
            StepError::Collapse { t, last_error } => {
                assert!((t - 0.5).abs() < 1e-6, "t = {t}");
                assert_eq!(last_error, Some("guard"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bisection_brackets_root() {
        let (lo, hi) = bisect(|t| t * t - 2.0, 0.0, 2.0, -2.0, 1e-12);
        assert!(hi - lo <= 1e-12);
        assert!((lo - 2f64.sqrt()).abs() < 1e-11);
    }
}
