//! Van der Pol oscillator paired with the linear limit cycle.
//!
//! A state is assigned the linear coordinates `(rho, psi)` through its
//! asymptotic phase and amplitude: the trajectory is followed until its
//! crossings of `x2 = 0, x1 > 0` have converged onto the cycle. The crossing
//! time fixes `psi`, the rescaled residual deviation fixes `rho - 1`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::wrap_angle;
use super::{Aux, Experiment, PairedDataset, TestCase};
use crate::analysis::floquet;
use crate::dynsys::DynamicalSystem;
use crate::error::{Error, Result};
use crate::odeint::{find_crossing, find_crossings_until, integrate, Direction, IntegratorConfig, Section};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VdpSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Training trajectories start on a regular grid with this spacing;
    /// `None` draws `n_trajectories` random starts instead.
    pub grid_spacing: Option<f64>,
    pub n_trajectories: usize,
    pub samples_per_trajectory: usize,
    pub sample_dt: f64,
    /// Initial states with a smaller linear radius are skipped.
    pub min_radius: f64,
    /// Linear decay rate; the Floquet value when absent.
    pub decay_rate: Option<f64>,
    /// Linear angular velocity; `2 pi / T` when absent.
    pub omega: Option<f64>,
    /// Crossing deviation below which a trajectory counts as converged.
    pub converge_tol: f64,
    pub n_test: usize,
    pub test_horizon: f64,
    pub test_dt: f64,
}

impl Default for VdpSpec {
    fn default() -> Self {
        Self {
            x_range: (-2.0, 2.0),
            y_range: (-2.5, 2.5),
            grid_spacing: Some(0.25),
            n_trajectories: 60,
            samples_per_trajectory: 15,
            sample_dt: 0.3,
            min_radius: 0.2,
            decay_rate: None,
            omega: None,
            converge_tol: 1e-5,
            n_test: 20,
            test_horizon: 20.0,
            test_dt: 0.1,
        }
    }
}

/// The converged limit cycle and the constants of the linear pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VdpCycle {
    pub period: f64,
    /// Cycle point on `x2 = 0` with `x1 > 0`.
    pub section_x1: f64,
    /// Decay rate from the nontrivial Floquet multiplier.
    pub floquet_rate: f64,
    /// `D` of the linear limit cycle.
    pub decay_rate: f64,
    /// `Omega` of the linear limit cycle.
    pub omega: f64,
}

fn section() -> Section {
    Section::new(1, 0.0, Direction::Down)
}

impl VdpCycle {
    pub fn compute(sys: &DynamicalSystem, spec: &VdpSpec, cfg: &IntegratorConfig) -> Result<Self> {
        let fl = floquet(sys, &[2.0, 0.0], 6.66, cfg)?;
        let hit = find_crossing(sys, &fl.point, 0.0, 2.0 * fl.period, 0.0, &section(), cfg)?;
        let floquet_rate = fl.decay_rate();
        Ok(Self {
            period: fl.period,
            section_x1: hit.x[0],
            floquet_rate,
            decay_rate: spec.decay_rate.unwrap_or(floquet_rate),
            omega: spec.omega.unwrap_or(std::f64::consts::TAU / fl.period),
        })
    }

    /// Linear coordinates `(rho, psi)` of a state.
    pub fn linear_coords(
        &self,
        sys: &DynamicalSystem,
        x: &[f64],
        tol: f64,
        cfg: &IntegratorConfig,
    ) -> Result<(f64, f64)> {
        check_state(x)?;
        let x1s = self.section_x1;
        let hits = find_crossings_until(sys, x, 0.0, 200.0 * self.period, 0.0, &section(), cfg, |c| {
            (c.x[0] - x1s).abs() < tol
        })?;
        let last = hits.last().ok_or(Error::NoEvent { t_end: 200.0 * self.period })?;
        let d = last.x[0] - x1s;
        if d.abs() >= tol {
            return Err(Error::NoEvent { t_end: 200.0 * self.period });
        }
        let s = (self.floquet_rate * last.t).exp() * d;
        let rho = 1.0 + s.signum() * s.abs().powf(self.decay_rate / self.floquet_rate) / x1s;
        let psi = wrap_angle(FRAC_PI_2 - self.omega * last.t);
        Ok((rho, psi))
    }

    /// `(rho, psi)` after time `t` on the linear limit cycle.
    pub fn advance(&self, rho: f64, psi: f64, t: f64) -> (f64, f64) {
        (1.0 + (rho - 1.0) * (-self.decay_rate * t).exp(), psi + self.omega * t)
    }
}

pub(super) fn check_state(x: &[f64]) -> Result<[f64; 2]> {
    if x.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: x.len() });
    }
    if x[0].hypot(x[1]) < 1e-9 {
        return Err(Error::invalid("the origin is an unstable equilibrium and has no linear image"));
    }
    Ok([x[0], x[1]])
}

/// Draws initial states in the box whose linear radius is at least `min_radius`.
fn draw_states(
    sys: &DynamicalSystem,
    spec: &VdpSpec,
    cyc: &VdpCycle,
    rng: &mut ChaCha8Rng,
    count: usize,
    cfg: &IntegratorConfig,
) -> Result<Vec<([f64; 2], (f64, f64))>> {
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 50 * count.max(1) {
            return Err(Error::invalid("too few admissible Van der Pol initial states in the box"));
        }
        let x = [rng.random_range(spec.x_range.0..spec.x_range.1), rng.random_range(spec.y_range.0..spec.y_range.1)];
        match cyc.linear_coords(sys, &x, spec.converge_tol, cfg) {
            Ok((rho, psi)) if rho >= spec.min_radius => out.push((x, (rho, psi))),
            Ok(_) => {}
            Err(e) => warn!("skipping initial state {x:?}: {e}"),
        }
    }
    Ok(out)
}

/// Grid points of the box whose linear radius is at least `min_radius`.
fn grid_states(
    sys: &DynamicalSystem,
    spec: &VdpSpec,
    cyc: &VdpCycle,
    spacing: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<([f64; 2], (f64, f64))>> {
    if !(spacing > 0.0) {
        return Err(Error::invalid("grid spacing must be positive"));
    }
    let steps = |(lo, hi): (f64, f64)| ((hi - lo) / spacing + 1e-9).floor() as usize;
    let mut out = Vec::new();
    for i in 0..=steps(spec.x_range) {
        for j in 0..=steps(spec.y_range) {
            let x = [spec.x_range.0 + i as f64 * spacing, spec.y_range.0 + j as f64 * spacing];
            if x[0].hypot(x[1]) < 1e-9 {
                continue;
            }
            match cyc.linear_coords(sys, &x, spec.converge_tol, cfg) {
                Ok((rho, psi)) if rho >= spec.min_radius => out.push((x, (rho, psi))),
                Ok(_) => {}
                Err(e) => warn!("skipping grid state {x:?}: {e}"),
            }
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("no admissible Van der Pol grid states in the box"));
    }
    Ok(out)
}

pub(super) fn pair(sys: &DynamicalSystem, spec: &VdpSpec, seed: u64, cfg: &IntegratorConfig) -> Result<PairedDataset> {
    if spec.samples_per_trajectory == 0
        || (spec.grid_spacing.is_none() && spec.n_trajectories == 0)
        || !(spec.sample_dt > 0.0)
    {
        return Err(Error::invalid("Van der Pol pairing needs trajectories, samples and a positive step"));
    }
    let cyc = VdpCycle::compute(sys, spec, cfg)?;
    let starts = match spec.grid_spacing {
        Some(h) => grid_states(sys, spec, &cyc, h, cfg)?,
        None => draw_states(sys, spec, &cyc, &mut ChaCha8Rng::seed_from_u64(seed), spec.n_trajectories, cfg)?,
    };
    let n = spec.samples_per_trajectory;
    let rows = starts.len() * n;
    let mut x = DMatrix::zeros(rows, 2);
    let mut y = DMatrix::zeros(rows, 2);
    let horizon = (n - 1) as f64 * spec.sample_dt;
    let mut row = 0;
    for (x0, (rho0, psi0)) in &starts {
        let tr = integrate(sys, x0, 0.0, horizon, cfg, spec.sample_dt)?;
        for k in 0..n {
            let (rho, psi) = cyc.advance(*rho0, *psi0, tr.times[k]);
            x[(row, 0)] = tr.states[k][0];
            x[(row, 1)] = tr.states[k][1];
            y[(row, 0)] = rho * psi.sin();
            y[(row, 1)] = rho * psi.cos();
            row += 1;
        }
    }
    let stats = BTreeMap::from([
        ("period".to_string(), cyc.period),
        ("floquet_rate".to_string(), cyc.floquet_rate),
        ("trajectories".to_string(), starts.len() as f64),
    ]);
    Ok(PairedDataset {
        experiment: Experiment::Vdp,
        x_samples: x,
        y_samples: y,
        period_targets: None,
        aux: Aux { vdp: Some(cyc), forced: None },
        stats,
    })
}

pub(super) fn test_cases(
    sys: &DynamicalSystem,
    spec: &VdpSpec,
    cyc: &VdpCycle,
    seed: u64,
    cfg: &IntegratorConfig,
) -> Result<Vec<TestCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57);
    Ok(draw_states(sys, spec, cyc, &mut rng, spec.n_test, cfg)?
        .into_iter()
        .map(|(x0, _)| TestCase { x0: x0.to_vec(), horizon: spec.test_horizon, sample_dt: spec.test_dt })
        .collect())
}
