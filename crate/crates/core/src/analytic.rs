//! Closed-form immersions checked numerically: a family of nonlinear
//! oscillators built from the harmonic oscillator, a planar limit cycle and a
//! system with four coexisting steady-state angles.
//!
//! Every verifier integrates the nonlinear system, evaluates the observables
//! along the trajectory and compares them with the exact linear solution.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynsys::{make_system, system, LinearSystemSpec, VectorField};
use crate::error::{Error, Result};
use crate::immersion::encoding::wrap_angle;
use crate::odeint::{flow_to, integrate, IntegratorConfig};

/// Outcome of one verifier, written by the `verify-analytic` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReport {
    pub case: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Named auxiliary quantities (frequencies, end values, stability flags).
    #[serde(default)]
    pub details: BTreeMap<String, f64>,
}

impl AnalyticReport {
    fn new(case: &str, max_error: f64, tolerance: f64, extra_ok: bool, details: BTreeMap<String, f64>) -> Self {
        Self {
            case: case.to_string(),
            max_error,
            tolerance,
            pass: max_error.is_finite() && max_error < tolerance && extra_ok,
            details,
        }
    }
}

fn tight() -> IntegratorConfig {
    IntegratorConfig::with_tol(1e-12, 1e-14)
}

type PolarMap = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Planar system `x = (f_r(r, theta), f_phi(r, theta))` driven by the polar
/// state of the harmonic oscillator with frequency `omega`.
///
/// The oscillator keeps `r` fixed and advances `theta` at rate `omega`, so by
/// the chain rule `dx/dt = omega * d/dtheta (f_r, f_phi)`. Evaluating the
/// field at a state `x` requires `(r, theta)`, obtained by Newton iteration
/// started from `guess(x)`.
pub struct HarmonicFamily {
    pub omega: f64,
    f_r: PolarMap,
    f_phi: PolarMap,
    guess: Box<dyn Fn(&[f64]) -> (f64, f64) + Send + Sync>,
}

const FD_STEP: f64 = 1e-6;

impl HarmonicFamily {
    pub fn new(
        omega: f64,
        f_r: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        f_phi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        guess: impl Fn(&[f64]) -> (f64, f64) + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(omega > 0.0) {
            return Err(Error::invalid("omega must be positive"));
        }
        Ok(Self { omega, f_r: Box::new(f_r), f_phi: Box::new(f_phi), guess: Box::new(guess) })
    }

    /// `f_r = r`, `f_phi = theta - theta sin(pi r / 2)`: frequency
    /// `omega (1 - sin(pi r / 2))`, equal to `omega` at the center and zero at `r = 1`.
    pub fn default_example(omega: f64) -> Result<Self> {
        Self::new(
            omega,
            |r, _| r,
            |r, t| t - t * (FRAC_PI_2 * r).sin(),
            |x| (x[0], x[1] / (1.0 - (FRAC_PI_2 * x[0]).sin())),
        )
    }

    /// `f_r = r`, `f_phi = theta`: the harmonic oscillator in polar form.
    pub fn identity(omega: f64) -> Result<Self> {
        Self::new(omega, |r, _| r, |_, t| t, |x| (x[0], x[1]))
    }

    pub fn observe(&self, r: f64, theta: f64) -> [f64; 2] {
        [(self.f_r)(r, theta), (self.f_phi)(r, theta)]
    }

    /// Chain-rule velocity at the polar state `(r, theta)`.
    pub fn velocity(&self, r: f64, theta: f64) -> [f64; 2] {
        let h = FD_STEP;
        let a = self.observe(r, theta + h);
        let b = self.observe(r, theta - h);
        [self.omega * (a[0] - b[0]) / (2.0 * h), self.omega * (a[1] - b[1]) / (2.0 * h)]
    }

    /// Instantaneous angular speed `omega * d f_phi / d theta`.
    pub fn frequency(&self, r: f64, theta: f64) -> f64 {
        self.velocity(r, theta)[1]
    }

    /// Polar state with `observe(r, theta) = x`.
    pub fn invert(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (mut r, mut t) = (self.guess)(x);
        let h = FD_STEP;
        for _ in 0..50 {
            let f = self.observe(r, t);
            let (e0, e1) = (f[0] - x[0], f[1] - x[1]);
            if e0.abs().max(e1.abs()) < 1e-14 * (1.0 + x[0].abs().max(x[1].abs())) {
                return Ok((r, t));
            }
            let fr = self.observe(r + h, t);
            let fr_ = self.observe(r - h, t);
            let ft = self.observe(r, t + h);
            let ft_ = self.observe(r, t - h);
            let j = [
                [(fr[0] - fr_[0]) / (2.0 * h), (ft[0] - ft_[0]) / (2.0 * h)],
                [(fr[1] - fr_[1]) / (2.0 * h), (ft[1] - ft_[1]) / (2.0 * h)],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if !det.is_finite() || det.abs() < 1e-300 {
                return Err(Error::invalid(format!("observable pair is not invertible near {x:?}")));
            }
            r -= (j[1][1] * e0 - j[0][1] * e1) / det;
            t -= (j[0][0] * e1 - j[1][0] * e0) / det;
            if !(r.is_finite() && t.is_finite()) {
                break;
            }
        }
        let f = self.observe(r, t);
        if (f[0] - x[0]).abs().max((f[1] - x[1]).abs()) < 1e-10 {
            Ok((r, t))
        } else {
            Err(Error::invalid(format!("observable inversion did not converge at {x:?}")))
        }
    }
}

impl VectorField for HarmonicFamily {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
        match self.invert(x) {
            Ok((r, t)) => dx.copy_from_slice(&self.velocity(r, t)),
            Err(_) => dx.fill(f64::NAN),
        }
    }

    fn name(&self) -> &str {
        "harmonic_family"
    }
}

/// Checks the default harmonic-family example: the frequency at `r = 0` and
/// `r = 1`, and that integrated trajectories are the images of harmonic
/// circles (forward through the observables and back through their inverse).
pub fn verify_harmonic_family(omega: f64, tolerance: f64) -> Result<AnalyticReport> {
    let fam = HarmonicFamily::default_example(omega)?;
    let f0 = fam.frequency(0.0, 0.7);
    let f1 = fam.frequency(1.0, 0.7);
    let mut err: f64 = (f0 - omega).abs().max(f1.abs());
    let cfg = tight();
    for (r0, t0) in [(0.2, 0.3), (0.5, 1.0), (0.8, -0.4)] {
        let x0 = fam.observe(r0, t0);
        let tr = integrate(&fam, &x0, 0.0, 10.0, &cfg, 0.1)?;
        for (t, x) in tr.times.iter().zip(&tr.states) {
            let expect = fam.observe(r0, t0 + omega * t);
            err = err.max((x[0] - expect[0]).abs()).max((x[1] - expect[1]).abs());
            // Back to the harmonic oscillator's Cartesian state.
            let (r, th) = fam.invert(x)?;
            let y = [r * th.sin(), r * th.cos()];
            let ye = [r0 * (t0 + omega * t).sin(), r0 * (t0 + omega * t).cos()];
            err = err.max((y[0] - ye[0]).abs()).max((y[1] - ye[1]).abs());
        }
    }
    let details = BTreeMap::from([("frequency_r0".to_string(), f0), ("frequency_r1".to_string(), f1)]);
    Ok(AnalyticReport::new("harmonic_family", err, tolerance, true, details))
}

/// Radius and angle `atan2(x1, x2)` of a state of the planar limit-cycle system.
pub fn limit_cycle_observables(x: &[f64]) -> Result<(f64, f64)> {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return Err(Error::invalid("the observables are singular at the origin"));
    }
    Ok((r, x[0].atan2(x[1])))
}

/// Adds multiples of `2 pi` so consecutive angles differ by less than `pi`.
pub fn unwrap_angles(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    let mut offset = 0.0;
    for (i, &a) in angles.iter().enumerate() {
        if i > 0 {
            let prev = angles[i - 1];
            let d = a - prev;
            if d > PI {
                offset -= TAU;
            } else if d < -PI {
                offset += TAU;
            }
        }
        out.push(a + offset);
    }
    out
}

/// Integrates the planar limit-cycle system and compares radius and unwrapped
/// angle with `1 + (y1(0) - 1) e^-t` and `y2(0) + t`, then with the flow of
/// the three-dimensional lift on the slice `y3 = 1`.
pub fn verify_limit_cycle_case(tolerance: f64, seed: u64) -> Result<AnalyticReport> {
    let sys = system("app_lc")?;
    let lift =
        LinearSystemSpec::from_matrix(DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ics = vec![[0.6, 0.8], [2.0, 0.0]];
    for _ in 0..6 {
        let r = rng.random_range(0.2..3.0);
        let t: f64 = rng.random_range(0.0..TAU);
        ics.push([r * t.sin(), r * t.cos()]);
    }
    let cfg = tight();
    let mut err: f64 = 0.0;
    let mut details = BTreeMap::new();
    for (k, x0) in ics.iter().enumerate() {
        let tr = integrate(&sys, x0, 0.0, TAU, &cfg, TAU / 600.0)?;
        let obs = tr.states.iter().map(|x| limit_cycle_observables(x)).collect::<Result<Vec<_>>>()?;
        let angles = unwrap_angles(&obs.iter().map(|o| o.1).collect::<Vec<_>>());
        let (r0, a0) = (obs[0].0, angles[0]);
        for (i, &t) in tr.times.iter().enumerate() {
            let r_exact = 1.0 + (r0 - 1.0) * (-t).exp();
            err = err.max((obs[i].0 - r_exact).abs()).max((angles[i] - (a0 + t)).abs());
            if i % 20 == 0 {
                let y = lift.flow(&[r0, a0, 1.0], t)?;
                err = err.max((y[0] - obs[i].0).abs()).max((y[1] - angles[i]).abs()).max((y[2] - 1.0).abs());
            }
        }
        if k == 1 {
            let y = flow_to(&sys, x0, 0.0, 1.0, &cfg)?;
            details.insert("radius_at_1_from_2".to_string(), y[0].hypot(y[1]));
        }
        if k == 0 {
            details.insert("angle_gain_over_2pi".to_string(), angles.last().copied().unwrap_or(0.0) - a0);
        }
    }
    Ok(AnalyticReport::new("limit_cycle", err, tolerance, true, details))
}

/// The steady-state angles of the coexisting-states system.
pub const STEADY_ANGLES: [f64; 4] = [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2];

/// Linear stability of a steady angle: `d/dtheta [(l1 - l2) sin cos] = (l1 - l2) cos(2 theta) < 0`.
pub fn angle_is_stable(lambda1: f64, lambda2: f64, angle: f64) -> bool {
    (lambda1 - lambda2) * (2.0 * angle).cos() < 0.0
}

/// Integrates the coexisting-states system, compares `(x1 sin x2, x1 cos x2)`
/// with `y_i(0) e^{lambda_i t}`, and classifies the four steady angles by
/// launching perturbed states.
pub fn verify_coexisting_case(lambda1: f64, lambda2: f64, tolerance: f64, seed: u64) -> Result<AnalyticReport> {
    let params = BTreeMap::from([("lambda1".to_string(), lambda1), ("lambda2".to_string(), lambda2)]);
    let sys = make_system("app_coexist", &params)?;
    let cfg = tight();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err: f64 = 0.0;
    let mut details = BTreeMap::new();
    let mut ok = true;
    let mut ics = vec![[1.0, 0.0]];
    for _ in 0..8 {
        ics.push([rng.random_range(0.2..2.0), rng.random_range(0.0..TAU)]);
    }
    for x0 in &ics {
        let tr = integrate(&sys, x0, 0.0, 5.0, &cfg, 0.05)?;
        let y0 = [x0[0] * x0[1].sin(), x0[0] * x0[1].cos()];
        for (t, x) in tr.times.iter().zip(&tr.states) {
            let y = [x[0] * x[1].sin(), x[0] * x[1].cos()];
            err = err.max((y[0] - y0[0] * (lambda1 * t).exp()).abs()).max((y[1] - y0[1] * (lambda2 * t).exp()).abs());
        }
    }
    // Generic states settle on a stable angle.
    let horizon = 40.0 / (lambda1 - lambda2);
    for x0 in ics.iter().skip(1) {
        let end = flow_to(&sys, x0, 0.0, horizon, &cfg)?;
        let a = wrap_angle(end[1]);
        let settled = STEADY_ANGLES
            .iter()
            .chain(std::iter::once(&TAU))
            .any(|s| (a - s).abs() < 1e-6 && angle_is_stable(lambda1, lambda2, *s));
        ok &= settled;
    }
    for (k, &angle) in STEADY_ANGLES.iter().enumerate() {
        let exact = flow_to(&sys, &[1.0, angle], 0.0, horizon, &cfg)?;
        let stays = (exact[1] - angle).abs() < 1e-9;
        let mut returns = true;
        for d in [1e-3, -1e-3] {
            let end = flow_to(&sys, &[1.0, angle + d], 0.0, horizon, &cfg)?;
            returns &= (end[1] - angle).abs() < 1e-6;
        }
        details.insert(format!("angle{k}_stable"), if returns { 1.0 } else { 0.0 });
        ok &= stays && returns == angle_is_stable(lambda1, lambda2, angle);
    }
    Ok(AnalyticReport::new("coexisting", err, tolerance, ok, details))
}

/// Runs all three verifiers with their default parameters.
pub fn verify_all(tolerance: f64, seed: u64) -> Result<Vec<AnalyticReport>> {
    Ok(vec![
        verify_harmonic_family(1.0, tolerance)?,
        verify_limit_cycle_case(tolerance, seed)?,
        verify_coexisting_case(-0.5, -2.0, tolerance, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_family_frequency() {
        let fam = HarmonicFamily::default_example(2.0).unwrap();
        assert!((fam.frequency(0.0, 1.3) - 2.0).abs() < 1e-8);
        assert!(fam.frequency(1.0, 1.3).abs() < 1e-8);
        let r: f64 = 0.4;
        assert!((fam.frequency(r, -0.2) - 2.0 * (1.0 - (FRAC_PI_2 * r).sin())).abs() < 1e-8);
    }

    #[test]
    fn identity_family_is_polar_harmonic() {
        let fam = HarmonicFamily::identity(1.5).unwrap();
        for (r, t) in [(0.3, 0.1), (2.0, 4.0)] {
            let v = fam.velocity(r, t);
            assert!(v[0].abs() < 1e-12 && (v[1] - 1.5).abs() < 1e-8);
        }
    }

    #[test]
    fn family_inversion_round_trip() {
        let fam = HarmonicFamily::default_example(1.0).unwrap();
        for (r, t) in [(0.1, 0.2), (0.7, 5.0), (0.95, -3.0)] {
            let x = fam.observe(r, t);
            let (r2, t2) = fam.invert(&x).unwrap();
            assert!((r2 - r).abs() < 1e-12 && (t2 - t).abs() < 1e-9);
        }
    }

    #[test]
    fn harmonic_family_verifies() {
        let rep = verify_harmonic_family(1.0, 1e-6).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn limit_cycle_examples() {
        let sys = system("app_lc").unwrap();
        let cfg = tight();
        let tr = integrate(&sys, &[0.0, 1.0], 0.0, 10.0, &cfg, 0.1).unwrap();
        for x in &tr.states {
            assert!((x[0].hypot(x[1]) - 1.0).abs() < 1e-8);
        }
        let y = flow_to(&sys, &[2.0, 0.0], 0.0, 1.0, &cfg).unwrap();
        assert!((y[0].hypot(y[1]) - (1.0 + (-1.0f64).exp())).abs() < 1e-8);
        assert!(limit_cycle_observables(&[0.0, 0.0]).is_err());
        let rep = verify_limit_cycle_case(1e-6, 1).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!((rep.details["angle_gain_over_2pi"] - TAU).abs() < 1e-8);
    }

    #[test]
    fn unwrap_is_continuous() {
        let raw = [3.0, -3.0, -2.0, 3.1];
        let u = unwrap_angles(&raw);
        assert!((u[1] - (TAU - 3.0)).abs() < 1e-15);
        assert!((u[3] - (3.1 + TAU)).abs() < 1e-15 || (u[3] - 3.1).abs() < 1e-15);
        for w in u.windows(2) {
            assert!((w[1] - w[0]).abs() <= PI);
        }
    }

    #[test]
    fn coexisting_zero_angle_ray() {
        let sys = make_system("app_coexist", &BTreeMap::new()).unwrap();
        let tr = integrate(&sys, &[1.5, 0.0], 0.0, 5.0, &tight(), 0.5).unwrap();
        for (t, x) in tr.times.iter().zip(&tr.states) {
            assert_eq!(x[1], 0.0);
            assert_eq!(x[0] * x[1].sin(), 0.0);
            assert!((x[0] - 1.5 * (-2.0 * t).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn coexisting_stability_pattern() {
        let expected = [false, true, false, true];
        for (a, e) in STEADY_ANGLES.iter().zip(expected) {
            assert_eq!(angle_is_stable(-0.5, -2.0, *a), e);
        }
        let rep = verify_coexisting_case(-0.5, -2.0, 1e-6, 2).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_eq!(rep.details["angle1_stable"], 1.0);
        assert_eq!(rep.details["angle0_stable"], 0.0);
        assert!(verify_coexisting_case(-2.0, -0.5, 1e-6, 2).is_err());
    }

    #[test]
    fn report_json_fields() {
        let rep = AnalyticReport::new("x", 1e-9, 1e-6, true, BTreeMap::new());
        let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
        assert_eq!(v["case"], "x");
        assert_eq!(v["pass"], true);
        assert!(v["max_error"].is_number());
    }
}
