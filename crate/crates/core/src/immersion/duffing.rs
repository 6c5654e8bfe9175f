//! Conservative Duffing oscillator: three orbit families, each paired with the
//! extended harmonic oscillator and told apart by a carried label.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{encode_polar, to_polar_about};
use super::{linspace, orbit_period, Aux, Experiment, PairedDataset, TestCase};
use crate::dynsys::{duffing_energy, DynamicalSystem};
use crate::error::{Error, Result};
use crate::odeint::{flow_to, integrate, IntegratorConfig};

/// Orbits with `|E|` below this are too close to the separatrix to pair.
pub const SEPARATRIX_GAP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DuffingSpec {
    /// Energies of the orbits inside each well.
    pub intrawell_range: (f64, f64),
    /// Energies of the orbits around both wells.
    pub outer_range: (f64, f64),
    /// Orbits per region (left well, right well, outer).
    pub n_orbits: usize,
    pub samples_per_orbit: usize,
    pub test_intrawell_range: (f64, f64),
    pub test_outer_range: (f64, f64),
    /// Test orbits per region.
    pub n_test: usize,
    pub test_periods: f64,
    pub test_samples_per_period: usize,
}

impl Default for DuffingSpec {
    fn default() -> Self {
        Self {
            intrawell_range: (-0.24, -0.01),
            outer_range: (0.01, 1.0),
            n_orbits: 20,
            samples_per_orbit: 40,
            test_intrawell_range: (-0.2, -0.03),
            test_outer_range: (0.03, 0.8),
            n_test: 4,
            test_periods: 3.0,
            test_samples_per_period: 50,
        }
    }
}

/// Region of a state: `1` right well, `-1` left well, `0` outside the separatrix.
pub fn duffing_label(x: [f64; 2]) -> f64 {
    if duffing_energy(x[0], x[1]) < 0.0 {
        x[0].signum()
    } else {
        0.0
    }
}

/// Largest `x1` reached at energy `e` (`x2 = 0`, `x1 > 0`).
pub fn duffing_turning_point(e: f64) -> Result<f64> {
    if !(e >= -0.25) {
        return Err(Error::invalid(format!("no Duffing orbit with energy {e}")));
    }
    Ok((1.0 + (1.0 + 4.0 * e).sqrt()).sqrt())
}

/// Polar center of the family with the given label.
pub(super) fn center(label: f64) -> [f64; 2] {
    [label.round(), 0.0]
}

/// `(r, sin, cos, label)` about the family center.
pub(super) fn encode(x: &[f64]) -> Result<[f64; 4]> {
    if x.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: x.len() });
    }
    let label = duffing_label([x[0], x[1]]);
    let (r, t) = to_polar_about([x[0], x[1]], center(label));
    let [a, b, c] = encode_polar(r, t);
    Ok([a, b, c, label])
}

/// Linear radius of the orbit with energy `e`: `sqrt(E + 1/4)`, the
/// harmonic amplitude about a well bottom. Intrawell orbits fill `[0, 1/2)`,
/// outer orbits start at `1/2`, and orbits near the separatrix are spread
/// further apart than by their turning points.
pub fn duffing_linear_radius(e: f64) -> f64 {
    (e + 0.25).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Orbit {
    start: [f64; 2],
    radius: f64,
    angle: f64,
    label: f64,
}

fn orbit(e: f64, label: f64) -> Result<Orbit> {
    let xp = duffing_turning_point(e)?;
    let start = if label < 0.0 { [-xp, 0.0] } else { [xp, 0.0] };
    let radius = duffing_linear_radius(e);
    let angle = if label < 0.0 { 3.0 * FRAC_PI_2 } else { FRAC_PI_2 };
    Ok(Orbit { start, radius, angle, label })
}

fn check_ranges(intrawell: (f64, f64), outer: (f64, f64)) -> Result<()> {
    let ok = intrawell.0 > -0.25
        && intrawell.1 <= -SEPARATRIX_GAP
        && intrawell.0 <= intrawell.1
        && outer.0 >= SEPARATRIX_GAP
        && outer.0 <= outer.1;
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "Duffing energy ranges {intrawell:?} / {outer:?} must avoid the separatrix and lie above -1/4"
        )))
    }
}

fn families(intrawell: (f64, f64), outer: (f64, f64), n: usize) -> Vec<(f64, f64)> {
    let mut v = Vec::with_capacity(3 * n);
    for label in [-1.0, 1.0] {
        v.extend(linspace(intrawell.0, intrawell.1, n).into_iter().map(|e| (e, label)));
    }
    v.extend(linspace(outer.0, outer.1, n).into_iter().map(|e| (e, 0.0)));
    v
}

pub(super) fn pair(sys: &DynamicalSystem, spec: &DuffingSpec, cfg: &IntegratorConfig) -> Result<PairedDataset> {
    check_ranges(spec.intrawell_range, spec.outer_range)?;
    let n = spec.samples_per_orbit;
    if n == 0 || spec.n_orbits == 0 {
        return Err(Error::invalid("Duffing pairing needs orbits and samples"));
    }
    let fams = families(spec.intrawell_range, spec.outer_range, spec.n_orbits);
    let rows = fams.len() * n;
    let mut x = DMatrix::zeros(rows, 4);
    let mut y = DMatrix::zeros(rows, 4);
    let mut periods = DVector::zeros(rows);
    let mut row = 0;
    for (e, label) in fams {
        let o = orbit(e, label)?;
        let tp = orbit_period(sys, &o.start, cfg)?;
        let tr = integrate(sys, &o.start, 0.0, tp, cfg, tp / n as f64)?;
        for k in 0..n {
            let enc = encode(&tr.states[k])?;
            if enc[3] != o.label {
                return Err(Error::invalid(format!("orbit with energy {e} left its region")));
            }
            let lin = encode_polar(o.radius, o.angle + TAU * k as f64 / n as f64);
            for j in 0..3 {
                x[(row, j)] = enc[j];
                y[(row, j)] = lin[j];
            }
            x[(row, 3)] = o.label;
            y[(row, 3)] = o.label;
            periods[row] = tp;
            row += 1;
        }
    }
    let stats = BTreeMap::from([("orbits_per_region".to_string(), spec.n_orbits as f64)]);
    Ok(PairedDataset {
        experiment: Experiment::DuffingCons,
        x_samples: x,
        y_samples: y,
        period_targets: Some(periods),
        aux: Aux::default(),
        stats,
    })
}

pub(super) fn test_cases(
    sys: &DynamicalSystem,
    spec: &DuffingSpec,
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<Vec<TestCase>> {
    check_ranges(spec.test_intrawell_range, spec.test_outer_range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd0ff);
    let mut cases = Vec::with_capacity(3 * spec.n_test);
    for label in [-1.0, 1.0, 0.0] {
        let (lo, hi) = if label == 0.0 { spec.test_outer_range } else { spec.test_intrawell_range };
        for _ in 0..spec.n_test {
            let e = rng.random_range(lo..hi);
            let o = orbit(e, label)?;
            let tp = orbit_period(sys, &o.start, cfg)?;
            let t0 = rng.random_range(0.0..tp);
            cases.push(TestCase {
                x0: flow_to(sys, &o.start, 0.0, t0, cfg)?,
                horizon: spec.test_periods * tp,
                sample_dt: tp / spec.test_samples_per_period as f64,
            });
        }
    }
    Ok(cases)
}
