//! Pendulum librations paired with circles of the harmonic oscillator.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{encode_polar, to_polar};
use super::{linspace, orbit_period, Aux, Experiment, PairedDataset, TestCase, START_ANGLE};
use crate::dynsys::DynamicalSystem;
use crate::error::{Error, Result};
use crate::odeint::{flow_to, integrate, IntegratorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumSpec {
    pub energy_range: (f64, f64),
    pub n_orbits: usize,
    pub samples_per_orbit: usize,
    pub test_energy_range: (f64, f64),
    pub n_test: usize,
    pub test_periods: f64,
    pub test_samples_per_period: usize,
}

impl Default for PendulumSpec {
    fn default() -> Self {
        Self {
            energy_range: (-0.95, 0.9),
            n_orbits: 40,
            samples_per_orbit: 40,
            test_energy_range: (-0.8, 0.8),
            n_test: 10,
            test_periods: 3.0,
            test_samples_per_period: 50,
        }
    }
}

/// Maximum angle of the libration with energy `e`.
pub fn amplitude(e: f64) -> f64 {
    (-e).acos()
}

fn check_energy(e: f64) -> Result<()> {
    if e > -1.0 && e < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("pendulum energy {e} is outside (-1, 1)")))
    }
}

/// Period of the libration with energy `e`.
pub fn period(sys: &DynamicalSystem, e: f64, cfg: &IntegratorConfig) -> Result<f64> {
    check_energy(e)?;
    orbit_period(sys, &[amplitude(e), 0.0], cfg)
}

pub(super) fn pair(sys: &DynamicalSystem, spec: &PendulumSpec, cfg: &IntegratorConfig) -> Result<PairedDataset> {
    let (lo, hi) = spec.energy_range;
    check_energy(lo)?;
    check_energy(hi)?;
    let n = spec.samples_per_orbit;
    if n == 0 || spec.n_orbits == 0 {
        return Err(Error::invalid("pendulum pairing needs orbits and samples"));
    }
    let rows = spec.n_orbits * n;
    let mut x = DMatrix::zeros(rows, 3);
    let mut y = DMatrix::zeros(rows, 3);
    let mut periods = DVector::zeros(rows);
    let mut row = 0;
    for e in linspace(lo, hi, spec.n_orbits) {
        let a = amplitude(e);
        let tp = period(sys, e, cfg)?;
        let tr = integrate(sys, &[a, 0.0], 0.0, tp, cfg, tp / n as f64)?;
        for k in 0..n {
            let s = &tr.states[k];
            let (r, theta) = to_polar([s[0], s[1]]);
            let lin = encode_polar(a, START_ANGLE + TAU * k as f64 / n as f64);
            let enc = encode_polar(r, theta);
            for j in 0..3 {
                x[(row, j)] = enc[j];
                y[(row, j)] = lin[j];
            }
            periods[row] = tp;
            row += 1;
        }
    }
    let stats = BTreeMap::from([("orbits".to_string(), spec.n_orbits as f64)]);
    Ok(PairedDataset {
        experiment: Experiment::Pendulum,
        x_samples: x,
        y_samples: y,
        period_targets: Some(periods),
        aux: Aux::default(),
        stats,
    })
}

pub(super) fn test_cases(
    sys: &DynamicalSystem,
    spec: &PendulumSpec,
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<Vec<TestCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57);
    let (lo, hi) = spec.test_energy_range;
    (0..spec.n_test)
        .map(|_| {
            let e = rng.random_range(lo..hi);
            let tp = period(sys, e, cfg)?;
            let t0 = rng.random_range(0.0..tp);
            let x0 = flow_to(sys, &[amplitude(e), 0.0], 0.0, t0, cfg)?;
            Ok(TestCase { x0, horizon: spec.test_periods * tp, sample_dt: tp / spec.test_samples_per_period as f64 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::system;
    use std::f64::consts::PI;

    fn agm(mut a: f64, mut b: f64) -> f64 {
        for _ in 0..64 {
            if (a - b).abs() <= 1e-15 * a {
                break;
            }
            (a, b) = (0.5 * (a + b), (a * b).sqrt());
        }
        a
    }

    /// `4 K(k)` with `K(k) = pi / (2 agm(1, sqrt(1 - k^2)))`.
    fn elliptic_period(e: f64) -> f64 {
        let k = ((1.0 + e) / 2.0).sqrt();
        2.0 * PI / agm(1.0, (1.0 - k * k).sqrt())
    }

    fn tight() -> IntegratorConfig {
        IntegratorConfig::with_tol(1e-12, 1e-14)
    }

    #[test]
    fn amplitude_examples() {
        assert!((amplitude(-(1.0f64).cos()) - 1.0).abs() < 1e-15);
        assert!(amplitude(-1.0 + 1e-12) < 1e-5);
    }

    #[test]
    fn period_matches_elliptic_integral() {
        let sys = system("pendulum").unwrap();
        for e in [-0.9, -0.5, 0.0, 0.5, 0.9] {
            let t = period(&sys, e, &tight()).unwrap();
            assert!((t - elliptic_period(e)).abs() < 1e-8, "E={e}: {t} vs {}", elliptic_period(e));
        }
        let t = period(&sys, -1.0 + 1e-8, &tight()).unwrap();
        assert!((t - TAU).abs() < 1e-6);
        assert!(period(&sys, 1.0, &tight()).is_err());
    }

    #[test]
    fn pairing_layout() {
        let sys = system("pendulum").unwrap();
        let spec = PendulumSpec {
            energy_range: (-(1.0f64).cos(), 0.5),
            n_orbits: 2,
            samples_per_orbit: 8,
            ..Default::default()
        };
        let d = pair(&sys, &spec, &tight()).unwrap();
        d.validate().unwrap();
        assert_eq!(d.rows(), 16);
        // First orbit has unit radius and starts on the positive first axis.
        assert!((d.y_samples[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((d.x_samples[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((d.y_samples[(0, 1)] - 1.0).abs() < 1e-15 && d.y_samples[(0, 2)].abs() < 1e-15);
        // Quarter period: both sides sit on the negative second axis.
        assert!((d.x_samples[(2, 2)] + 1.0).abs() < 1e-9 && d.x_samples[(2, 1)].abs() < 1e-9);
        assert!((d.y_samples[(2, 2)] + 1.0).abs() < 1e-15);
        let p = d.period_targets.as_ref().unwrap();
        assert!((p[0] - elliptic_period(-(1.0f64).cos())).abs() < 1e-8);
        assert!(p.iter().take(8).all(|v| *v == p[0]));
    }

    #[test]
    fn rejects_rotations() {
        let sys = system("pendulum").unwrap();
        let spec = PendulumSpec { energy_range: (-0.5, 1.2), ..Default::default() };
        assert!(pair(&sys, &spec, &tight()).is_err());
    }
}
