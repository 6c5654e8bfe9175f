//! Forced damped Duffing oscillator: deviations from the two coexisting
//! attractors paired with a damped linear oscillator, the basin carried as a label.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Aux, Experiment, PairedDataset, TestCase};
use crate::analysis::{floquet, inflowing_region, Rect};
use crate::dynsys::{DynamicalSystem, LinearSystemSpec};
use crate::error::{Error, Result};
use crate::odeint::{flow_to, integrate_at, IntegratorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForcedSpec {
    pub rect: Rect,
    pub spacing: f64,
    pub max_rounds: usize,
    /// Extension points (outside the rectangle) used as extra initial
    /// states, taken in the order the region grew: nearest rounds first.
    pub max_extension_ics: usize,
    /// Samples per forcing period after the initial state. Each trajectory
    /// gets its own random phase offset so the samples cover all phases.
    pub samples_per_period: usize,
    /// Forcing periods integrated before comparing with the attractors.
    pub label_periods: f64,
    pub low_guess: [f64; 2],
    pub high_guess: [f64; 2],
    /// Damping of the linear oscillator; the system's `c` when absent.
    pub c_l: Option<f64>,
    pub omega_l: f64,
    pub n_test: usize,
    pub test_samples_per_period: usize,
}

impl Default for ForcedSpec {
    fn default() -> Self {
        Self {
            rect: Rect::new((-0.8, 1.2), (-1.0, 0.6)),
            spacing: 0.1,
            max_rounds: 60,
            max_extension_ics: 60,
            samples_per_period: 10,
            label_periods: 40.0,
            low_guess: [-0.15, 0.0],
            high_guess: [1.0, 0.4],
            c_l: None,
            omega_l: 1.3,
            n_test: 20,
            test_samples_per_period: 24,
        }
    }
}

/// The two periodic attractors at forcing phase zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedAttractors {
    /// Label 0.
    pub low: [f64; 2],
    /// Label 1.
    pub high: [f64; 2],
    pub forcing_period: f64,
    pub label_periods: f64,
    pub c_l: f64,
    pub omega_l: f64,
}

impl ForcedAttractors {
    pub fn compute(sys: &DynamicalSystem, spec: &ForcedSpec, cfg: &IntegratorConfig) -> Result<Self> {
        let omega = sys.param("Omega").ok_or_else(|| Error::invalid("system has no forcing frequency"))?;
        let c = sys.param("c").unwrap_or(0.0);
        let tf = TAU / omega;
        let refine = |g: [f64; 2]| -> Result<[f64; 2]> {
            let r = floquet(sys, &[g[0], g[1], 0.0], tf, cfg)?;
            Ok([r.point[0], r.point[1]])
        };
        let low = refine(spec.low_guess)?;
        let high = refine(spec.high_guess)?;
        if (low[0] - high[0]).hypot(low[1] - high[1]) < 1e-3 {
            return Err(Error::NewtonFailure("both attractor guesses converged to the same orbit".into()));
        }
        let (low, high) = if low[0].hypot(low[1]) <= high[0].hypot(high[1]) { (low, high) } else { (high, low) };
        Ok(Self {
            low,
            high,
            forcing_period: tf,
            label_periods: spec.label_periods,
            c_l: spec.c_l.unwrap_or(c),
            omega_l: spec.omega_l,
        })
    }

    pub fn attractor(&self, label: f64) -> [f64; 2] {
        if label > 0.5 {
            self.high
        } else {
            self.low
        }
    }

    /// Basin label of a state `(x1, x2, phase)`: integrates at least `periods`
    /// forcing periods up to a phase multiple of `2 pi` and picks the nearer attractor.
    pub fn classify(&self, sys: &DynamicalSystem, x: &[f64], periods: f64, cfg: &IntegratorConfig) -> Result<f64> {
        if x.len() != 3 {
            return Err(Error::DimensionMismatch { expected: 3, got: x.len() });
        }
        let omega = TAU / self.forcing_period;
        let to_zero = (TAU - x[2].rem_euclid(TAU)) / omega;
        let t = periods.ceil() * self.forcing_period + to_zero;
        let end = flow_to(sys, x, 0.0, t, cfg)?;
        let dl = (end[0] - self.low[0]).hypot(end[1] - self.low[1]);
        let dh = (end[0] - self.high[0]).hypot(end[1] - self.high[1]);
        Ok(if dh < dl { 1.0 } else { 0.0 })
    }
}

pub(super) fn pair(
    sys: &DynamicalSystem,
    spec: &ForcedSpec,
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<PairedDataset> {
    if spec.samples_per_period == 0 {
        return Err(Error::invalid("forced Duffing pairing needs samples"));
    }
    let att = ForcedAttractors::compute(sys, spec, cfg)?;
    let omega = TAU / att.forcing_period;
    let region = inflowing_region(sys, spec.rect, spec.spacing, spec.max_rounds, cfg)?;
    if !region.closed {
        warn!("training region is not closed; trajectories may leave the sampled set");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = region.grid_points.clone();
    let n_ext = region.extension_points.len();
    let n_used = spec.max_extension_ics.min(n_ext);
    starts.extend_from_slice(&region.extension_points[..n_used]);
    info!("forced Duffing: {} grid and {} extension initial states", region.grid_points.len(), n_used);

    let linear = LinearSystemSpec::damped_extended(att.c_l, att.omega_l, omega);
    let n = spec.samples_per_period;
    let dt = att.forcing_period / n as f64;
    let rows = starts.len() * (n + 1);
    let mut x = DMatrix::zeros(rows, 4);
    let mut y = DMatrix::zeros(rows, 4);
    let mut high = 0usize;
    let mut row = 0;
    for s in &starts {
        let x0 = [s[0], s[1], 0.0];
        let label = att.classify(sys, &x0, spec.label_periods, cfg)?;
        high += label as usize;
        let a = att.attractor(label);
        let y0 = [s[0] - a[0], s[1] - a[1], 0.0, label];
        let offset: f64 = rng.random_range(0.0..1.0);
        let times: Vec<f64> = std::iter::once(0.0).chain((0..n).map(|k| (k as f64 + offset).max(1e-9) * dt)).collect();
        let tr = integrate_at(sys, &x0, 0.0, &times, cfg)?;
        for (k, st) in tr.states.iter().enumerate() {
            let lin = linear.flow(&y0, tr.times[k])?;
            for j in 0..3 {
                x[(row, j)] = st[j];
            }
            x[(row, 3)] = label;
            for j in 0..4 {
                y[(row, j)] = lin[j];
            }
            row += 1;
        }
    }
    let x = x.rows(0, row).into_owned();
    let y = y.rows(0, row).into_owned();
    let stats = BTreeMap::from([
        ("initial_states".to_string(), starts.len() as f64),
        ("high_basin".to_string(), high as f64),
        ("grid_points".to_string(), region.grid_points.len() as f64),
        ("extension_points".to_string(), n_ext as f64),
        ("region_closed".to_string(), if region.closed { 1.0 } else { 0.0 }),
    ]);
    Ok(PairedDataset {
        experiment: Experiment::DuffingFd,
        x_samples: x,
        y_samples: y,
        period_targets: None,
        aux: Aux { vdp: None, forced: Some(att) },
        stats,
    })
}

pub(super) fn test_cases(sys: &DynamicalSystem, spec: &ForcedSpec, seed: u64) -> Result<Vec<TestCase>> {
    let omega = sys.param("Omega").ok_or_else(|| Error::invalid("system has no forcing frequency"))?;
    let tf = TAU / omega;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57);
    Ok((0..spec.n_test)
        .map(|_| TestCase {
            x0: vec![
                rng.random_range(spec.rect.x.0..spec.rect.x.1),
                rng.random_range(spec.rect.y.0..spec.rect.y.1),
                0.0,
            ],
            horizon: tf,
            sample_dt: tf / spec.test_samples_per_period as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::system;

    fn cfg() -> IntegratorConfig {
        IntegratorConfig::with_tol(1e-10, 1e-12)
    }

    #[test]
    fn attractors_and_labels() {
        let sys = system("duffing_fd").unwrap();
        let att = ForcedAttractors::compute(&sys, &ForcedSpec::default(), &cfg()).unwrap();
        assert!((att.low[0] + 0.1483).abs() < 1e-3 && (att.low[1] - 0.0075).abs() < 1e-3, "{:?}", att.low);
        assert!((att.high[0] - 0.9911).abs() < 1e-3 && (att.high[1] - 0.4076).abs() < 1e-3, "{:?}", att.high);
        assert_eq!(att.c_l, 0.02);
        assert_eq!(att.classify(&sys, &[att.low[0], att.low[1], 0.0], 2.0, &cfg()).unwrap(), 0.0);
        assert_eq!(att.classify(&sys, &[att.high[0], att.high[1], 0.0], 2.0, &cfg()).unwrap(), 1.0);
        // Phase not at zero: advance the high orbit a third of a period first.
        let x = flow_to(&sys, &[att.high[0], att.high[1], 0.0], 0.0, att.forcing_period / 3.0, &cfg()).unwrap();
        assert_eq!(att.classify(&sys, &x, 2.0, &cfg()).unwrap(), 1.0);
    }

    #[test]
    fn zero_deviation_stays_zero() {
        let lin = LinearSystemSpec::damped_extended(0.02, 1.3, 1.3);
        for t in [0.0, 1.0, 4.8] {
            let y = lin.flow(&[0.0, 0.0, 0.0, 1.0], t).unwrap();
            assert_eq!(&y[..2], &[0.0, 0.0]);
            assert!((y[2] - 1.3 * t).abs() < 1e-12);
            assert_eq!(y[3], 1.0);
        }
    }
}
