//! Learned immersions for the four oscillator experiments: paired datasets,
//! training of the transformation networks, and reconstruction through the
//! linear prototype.
//!
//! Every experiment encodes its states as rows of real features. The nonlinear
//! side `X` is the input of `phi`, the linear side `Y` the input of `phi_inv`.
//! Trailing "carried" columns (region labels, the forcing phase) appear on
//! both sides unchanged and are never predicted.

mod duffing;
pub mod encoding;
mod forced;
mod pendulum;
mod vdp;

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::info;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use duffing::{duffing_label, duffing_linear_radius, duffing_turning_point, DuffingSpec};
pub use forced::{ForcedAttractors, ForcedSpec};
pub use pendulum::{amplitude as pendulum_amplitude, period as pendulum_period, PendulumSpec};
pub use vdp::{VdpCycle, VdpSpec};

use crate::analysis::{self, relative_error, EigenField};
use crate::dynsys::{make_system, DynamicalSystem, LinearSystemSpec, SystemConfig};
use crate::error::{Error, Result};
use crate::lmopt::{train_with_restart, LmConfig, LmReport};
use crate::mlp::MlpParams;
use crate::odeint::{find_crossings, integrate, Direction, IntegratorConfig, Section, Trajectory};
use encoding::{decode_polar, encode_polar, from_polar, from_polar_about, to_polar_about, ScaledNet, Scaler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Pendulum,
    DuffingCons,
    Vdp,
    DuffingFd,
}

impl Experiment {
    pub const ALL: [Experiment; 4] =
        [Experiment::Pendulum, Experiment::DuffingCons, Experiment::Vdp, Experiment::DuffingFd];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Pendulum => "pendulum",
            Experiment::DuffingCons => "duffing_cons",
            Experiment::Vdp => "vdp",
            Experiment::DuffingFd => "duffing_fd",
        }
    }

    /// Catalogue name of the nonlinear system.
    pub fn system_name(self) -> &'static str {
        self.name()
    }

    pub fn encoding(self) -> Encoding {
        match self {
            Experiment::Pendulum | Experiment::DuffingCons => Encoding::PolarSinCos,
            Experiment::Vdp => Encoding::PolarLCDeviation,
            Experiment::DuffingFd => Encoding::DampedDeviation,
        }
    }

    /// Number of trailing feature columns copied between the two sides.
    pub fn carried(self) -> usize {
        match self {
            Experiment::Pendulum | Experiment::Vdp => 0,
            Experiment::DuffingCons => 1,
            Experiment::DuffingFd => 2,
        }
    }

    pub fn has_period_net(self) -> bool {
        matches!(self, Experiment::Pendulum | Experiment::DuffingCons)
    }

    pub fn x_columns(self) -> &'static [&'static str] {
        match self {
            Experiment::Pendulum => &["r", "sin_theta", "cos_theta"],
            Experiment::DuffingCons => &["r", "sin_theta", "cos_theta", "label"],
            Experiment::Vdp => &["x1", "x2"],
            Experiment::DuffingFd => &["x1", "x2", "phase", "label"],
        }
    }

    pub fn y_columns(self) -> &'static [&'static str] {
        match self {
            Experiment::Pendulum => &["r", "sin_theta", "cos_theta"],
            Experiment::DuffingCons => &["r", "sin_theta", "cos_theta", "label"],
            Experiment::Vdp => &["y1_sin_y2", "y1_cos_y2"],
            Experiment::DuffingFd => &["y1", "y2", "phase", "label"],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown experiment '{s}'")))
    }
}

/// Feature layout of an experiment.
///
/// * `PolarSinCos`: `(r, sin theta, cos theta)` on both sides, plus a region
///   label for the conservative Duffing oscillator.
/// * `PolarLCDeviation`: Cartesian nonlinear state; the linear limit-cycle
///   state `(y1, y2)` enters as `(y1 sin y2, y1 cos y2)`.
/// * `DampedDeviation`: Cartesian states with the forcing phase and basin
///   label carried; the linear state is the deviation from the attractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Encoding {
    PolarSinCos,
    PolarLCDeviation,
    DampedDeviation,
}

/// Constants computed while pairing that reconstruction needs again.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aux {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vdp: Option<VdpCycle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced: Option<ForcedAttractors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSpec {
    Pendulum(PendulumSpec),
    DuffingCons(DuffingSpec),
    Vdp(VdpSpec),
    DuffingFd(ForcedSpec),
}

impl DataSpec {
    pub fn experiment(&self) -> Experiment {
        match self {
            DataSpec::Pendulum(_) => Experiment::Pendulum,
            DataSpec::DuffingCons(_) => Experiment::DuffingCons,
            DataSpec::Vdp(_) => Experiment::Vdp,
            DataSpec::DuffingFd(_) => Experiment::DuffingFd,
        }
    }
}

fn default_integrator() -> IntegratorConfig {
    IntegratorConfig::with_tol(1e-10, 1e-12)
}

/// Everything needed to regenerate a dataset and retrain a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub system_params: BTreeMap<String, f64>,
    #[serde(default)]
    pub lm: LmConfig,
    /// Standardized training MSE above which one restart with a fresh seed is made.
    #[serde(default)]
    pub restart_threshold: Option<f64>,
    #[serde(default = "default_integrator")]
    pub integrator: IntegratorConfig,
}

impl ExperimentConfig {
    pub fn default_for(experiment: Experiment) -> Self {
        let (data, max_iters, threshold) = match experiment {
            Experiment::Pendulum => (DataSpec::Pendulum(PendulumSpec::default()), 150, 1e-5),
            Experiment::DuffingCons => (DataSpec::DuffingCons(DuffingSpec::default()), 150, 1e-5),
            Experiment::Vdp => (DataSpec::Vdp(VdpSpec::default()), 250, 1e-4),
            Experiment::DuffingFd => (DataSpec::DuffingFd(ForcedSpec::default()), 300, 1e-4),
        };
        Self {
            data,
            seed: 1,
            system_params: BTreeMap::new(),
            lm: LmConfig { max_iters, ..LmConfig::default() },
            restart_threshold: Some(threshold),
            integrator: default_integrator(),
        }
    }

    pub fn experiment(&self) -> Experiment {
        self.data.experiment()
    }

    pub fn system(&self) -> Result<DynamicalSystem> {
        make_system(self.experiment().system_name(), &self.system_params)
    }

    pub fn system_config(&self) -> SystemConfig {
        SystemConfig { system: self.experiment().system_name().to_string(), params: self.system_params.clone() }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Paired samples `X` (nonlinear side) and `Y` (linear side), one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub experiment: Experiment,
    pub x_samples: DMatrix<f64>,
    pub y_samples: DMatrix<f64>,
    /// Orbit period for every row (pendulum and conservative Duffing).
    pub period_targets: Option<DVector<f64>>,
    pub aux: Aux,
    /// Summary numbers recorded in the manifest.
    pub stats: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    experiment: Experiment,
    rows: usize,
    x_columns: Vec<String>,
    y_columns: Vec<String>,
    has_period: bool,
    aux: Aux,
    stats: BTreeMap<String, f64>,
    config: Option<ExperimentConfig>,
}

impl PairedDataset {
    pub fn rows(&self) -> usize {
        self.x_samples.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x_samples.nrows();
        if self.y_samples.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.y_samples.nrows() });
        }
        if let Some(p) = &self.period_targets {
            if p.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: p.len() });
            }
        }
        let exp = self.experiment;
        if self.x_samples.ncols() != exp.x_columns().len() {
            return Err(Error::DimensionMismatch { expected: exp.x_columns().len(), got: self.x_samples.ncols() });
        }
        if self.y_samples.ncols() != exp.y_columns().len() {
            return Err(Error::DimensionMismatch { expected: exp.y_columns().len(), got: self.y_samples.ncols() });
        }
        let finite = self.x_samples.iter().chain(self.y_samples.iter()).all(|v| v.is_finite())
            && self.period_targets.as_ref().is_none_or(|p| p.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::invalid("dataset contains non-finite entries"));
        }
        Ok(())
    }

    /// Writes `x.csv`, `y.csv`, `period.csv` (if any) and `manifest.json`.
    pub fn write_dir(&self, dir: &Path, config: Option<&ExperimentConfig>) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_matrix(&dir.join("x.csv"), self.experiment.x_columns(), &self.x_samples)?;
        write_matrix(&dir.join("y.csv"), self.experiment.y_columns(), &self.y_samples)?;
        if let Some(p) = &self.period_targets {
            write_matrix(&dir.join("period.csv"), &["period"], &DMatrix::from_column_slice(p.len(), 1, p.as_slice()))?;
        }
        let manifest = Manifest {
            experiment: self.experiment,
            rows: self.rows(),
            x_columns: self.experiment.x_columns().iter().map(|s| s.to_string()).collect(),
            y_columns: self.experiment.y_columns().iter().map(|s| s.to_string()).collect(),
            has_period: self.period_targets.is_some(),
            aux: self.aux.clone(),
            stats: self.stats.clone(),
            config: config.cloned(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let x_samples = read_matrix(&dir.join("x.csv"))?;
        let y_samples = read_matrix(&dir.join("y.csv"))?;
        let period_targets = if manifest.has_period {
            let m = read_matrix(&dir.join("period.csv"))?;
            Some(DVector::from_column_slice(m.as_slice()))
        } else {
            None
        };
        let data = PairedDataset {
            experiment: manifest.experiment,
            x_samples,
            y_samples,
            period_targets,
            aux: manifest.aux,
            stats: manifest.stats,
        };
        data.validate()?;
        Ok(data)
    }

    /// Config stored alongside the dataset, if it was written with one.
    pub fn read_config(dir: &Path) -> Result<Option<ExperimentConfig>> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        Ok(manifest.config)
    }
}

pub fn write_matrix(path: &Path, header: &[&str], m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))??;
    let ncols = header.split(',').count();
    let mut data = Vec::new();
    let mut rows = 0;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{}: {v}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != ncols {
            return Err(Error::Parse(format!("{}: row {} has {} fields", path.display(), rows + 1, vals.len())));
        }
        data.extend(vals);
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, ncols, &data))
}

/// Builds the paired dataset of an experiment.
pub fn generate(cfg: &ExperimentConfig) -> Result<PairedDataset> {
    let sys = cfg.system()?;
    let data = match &cfg.data {
        DataSpec::Pendulum(spec) => pendulum::pair(&sys, spec, &cfg.integrator)?,
        DataSpec::DuffingCons(spec) => duffing::pair(&sys, spec, &cfg.integrator)?,
        DataSpec::Vdp(spec) => vdp::pair(&sys, spec, cfg.seed, &cfg.integrator)?,
        DataSpec::DuffingFd(spec) => forced::pair(&sys, spec, cfg.seed, &cfg.integrator)?,
    };
    data.validate()?;
    info!("{}: {} paired samples", cfg.experiment(), data.rows());
    Ok(data)
}

/// Period of the closed orbit through `start`, which must lie on `x2 = 0`.
pub(crate) fn orbit_period(sys: &DynamicalSystem, start: &[f64], cfg: &IntegratorConfig) -> Result<f64> {
    let sec = Section::new(1, 0.0, Direction::Either);
    let hits = find_crossings(sys, start, 0.0, 1e4, 0.0, &sec, 2, cfg)?;
    if hits.len() < 2 {
        return Err(Error::NoEvent { t_end: 1e4 });
    }
    Ok(hits[1].t)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Training outcome of the networks of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub phi: NetReport,
    pub phi_inv: NetReport,
    pub period: Option<NetReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetReport {
    pub lm: LmReport,
    /// Root-mean-square training residual in encoded (unstandardized) units.
    pub rmse: f64,
}

impl TrainReport {
    pub fn nets(&self) -> Vec<(&'static str, &NetReport)> {
        let mut v = vec![("phi", &self.phi), ("phi_inv", &self.phi_inv)];
        if let Some(p) = &self.period {
            v.push(("period", p));
        }
        v
    }
}

fn fit_net(
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<(ScaledNet, NetReport)> {
    let input = Scaler::fit(inputs);
    let output = Scaler::fit(targets);
    let xs = input.apply_rows(inputs);
    let ys = output.apply_rows(targets);
    let (nin, nout) = (inputs.ncols(), targets.ncols());
    let (net, lm) =
        train_with_restart(|s| MlpParams::new(nin, nout, s), seed, &xs, &ys, &cfg.lm, cfg.restart_threshold)?;
    let scaled = ScaledNet { net, input, output };
    let mut sq = 0.0;
    for i in 0..inputs.nrows() {
        let x: Vec<f64> = inputs.row(i).iter().copied().collect();
        let out = scaled.eval(&x)?;
        for (k, v) in out.iter().enumerate() {
            sq += (v - targets[(i, k)]).powi(2);
        }
    }
    let rmse = (sq / (inputs.nrows() * nout).max(1) as f64).sqrt();
    Ok((scaled, NetReport { lm, rmse }))
}

fn leading_columns(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    m.columns(0, n).into_owned()
}

/// Trains `phi`, `phi_inv` and (where used) the period network.
pub fn train(cfg: &ExperimentConfig, data: &PairedDataset) -> Result<(ImmersionModel, TrainReport)> {
    let exp = cfg.experiment();
    if data.experiment != exp {
        return Err(Error::invalid(format!("dataset is for {}, config for {exp}", data.experiment)));
    }
    data.validate()?;
    let c = exp.carried();
    let ny = data.y_samples.ncols() - c;
    let nx = data.x_samples.ncols() - c;
    info!("{exp}: training phi");
    let (phi, phi_rep) = fit_net(&data.x_samples, &leading_columns(&data.y_samples, ny), cfg.seed, cfg)?;
    info!("{exp}: training phi_inv");
    let (phi_inv, inv_rep) =
        fit_net(&data.y_samples, &leading_columns(&data.x_samples, nx), cfg.seed.wrapping_add(1), cfg)?;
    let (period_net, period_rep) = if exp.has_period_net() {
        let p = data.period_targets.as_ref().ok_or_else(|| Error::invalid("dataset lacks period targets"))?;
        info!("{exp}: training period map");
        let targets = DMatrix::from_column_slice(p.len(), 1, p.as_slice());
        let (net, rep) = fit_net(&data.y_samples, &targets, cfg.seed.wrapping_add(2), cfg)?;
        (Some(net), Some(rep))
    } else {
        (None, None)
    };
    let model = ImmersionModel {
        experiment: exp,
        encoding: exp.encoding(),
        linear: linear_spec(exp, &cfg.system()?, &data.aux)?,
        system: cfg.system_config(),
        phi,
        phi_inv,
        period_net,
        aux: data.aux.clone(),
        integrator: cfg.integrator,
    };
    model.validate()?;
    Ok((model, TrainReport { phi: phi_rep, phi_inv: inv_rep, period: period_rep }))
}

fn linear_spec(exp: Experiment, sys: &DynamicalSystem, aux: &Aux) -> Result<LinearSystemSpec> {
    Ok(match exp {
        Experiment::Pendulum => LinearSystemSpec::harmonic(1.0),
        Experiment::DuffingCons => LinearSystemSpec::extended_harmonic(1.0),
        Experiment::Vdp => {
            let cyc = aux.vdp.as_ref().ok_or_else(|| Error::invalid("missing limit-cycle data"))?;
            LinearSystemSpec::linear_limit_cycle(cyc.decay_rate, cyc.omega)
        }
        Experiment::DuffingFd => {
            let f = aux.forced.as_ref().ok_or_else(|| Error::invalid("missing attractor data"))?;
            let omega = sys.param("Omega").unwrap_or(1.3);
            LinearSystemSpec::damped_extended(f.c_l, f.omega_l, omega)
        }
    })
}

/// Options of a reconstruction run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructOptions {
    /// Skip the period rescaling of the linear angle.
    pub ablate_period: bool,
    /// Frequency of the linear oscillator (pendulum and conservative Duffing).
    pub omega: f64,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self { ablate_period: false, omega: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Linear prototype state, as in [`ImmersionModel::linear_state`].
    pub linear: Trajectory,
    /// Reconstructed `(x1, x2)`.
    pub state: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    experiment: Experiment,
    encoding: Encoding,
    linear: LinearSystemSpec,
    system: SystemConfig,
    aux: Aux,
    integrator: IntegratorConfig,
    has_period_net: bool,
}

/// A trained immersion: `phi`, its restricted inverse and the period map.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmersionModel {
    pub experiment: Experiment,
    pub encoding: Encoding,
    pub linear: LinearSystemSpec,
    pub system: SystemConfig,
    pub phi: ScaledNet,
    pub phi_inv: ScaledNet,
    pub period_net: Option<ScaledNet>,
    pub aux: Aux,
    pub integrator: IntegratorConfig,
}

impl ImmersionModel {
    pub fn validate(&self) -> Result<()> {
        let exp = self.experiment;
        let (nx, ny, c) = (exp.x_columns().len(), exp.y_columns().len(), exp.carried());
        let check = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} has shape {got:?}, expected {want:?}")))
            }
        };
        check("phi", (self.phi.in_dim(), self.phi.out_dim()), (nx, ny - c))?;
        check("phi_inv", (self.phi_inv.in_dim(), self.phi_inv.out_dim()), (ny, nx - c))?;
        match (&self.period_net, exp.has_period_net()) {
            (Some(p), true) => check("period net", (p.in_dim(), p.out_dim()), (ny, 1)),
            (None, false) => Ok(()),
            (None, true) => Err(Error::MissingPeriodNet),
            (Some(_), false) => Err(Error::invalid(format!("{exp} does not use a period network"))),
        }
    }

    /// Writes `phi.json`, `phi_inv.json`, `period.json` (if any) and `meta.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("phi.json"), self.phi.to_json()? + "\n")?;
        fs::write(dir.join("phi_inv.json"), self.phi_inv.to_json()? + "\n")?;
        if let Some(p) = &self.period_net {
            fs::write(dir.join("period.json"), p.to_json()? + "\n")?;
        }
        let meta = Meta {
            experiment: self.experiment,
            encoding: self.encoding,
            linear: self.linear.clone(),
            system: self.system.clone(),
            aux: self.aux.clone(),
            integrator: self.integrator,
            has_period_net: self.period_net.is_some(),
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        let read = |name: &str| -> Result<ScaledNet> { ScaledNet::from_json(&fs::read_to_string(dir.join(name))?) };
        let period_path = dir.join("period.json");
        let period_net = if period_path.exists() { Some(read("period.json")?) } else { None };
        let model = ImmersionModel {
            experiment: meta.experiment,
            encoding: meta.encoding,
            linear: meta.linear,
            system: meta.system,
            phi: read("phi.json")?,
            phi_inv: read("phi_inv.json")?,
            period_net,
            aux: meta.aux,
            integrator: meta.integrator,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn nonlinear_system(&self) -> Result<DynamicalSystem> {
        self.system.build()
    }

    /// Feature row `X` of a nonlinear state.
    pub fn encode_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        let sys = self.nonlinear_system()?;
        if x.len() != sys.dim() {
            return Err(Error::DimensionMismatch { expected: sys.dim(), got: x.len() });
        }
        Ok(match self.experiment {
            Experiment::Pendulum => {
                let (r, t) = to_polar_about([x[0], x[1]], [0.0, 0.0]);
                encode_polar(r, t).to_vec()
            }
            Experiment::DuffingCons => duffing::encode(x)?.to_vec(),
            Experiment::Vdp => vdp::check_state(x)?.to_vec(),
            Experiment::DuffingFd => {
                let f = self.forced()?;
                let label = f.classify(&sys, x, f.label_periods, &self.integrator)?;
                vec![x[0], x[1], x[2], label]
            }
        })
    }

    fn forced(&self) -> Result<&ForcedAttractors> {
        self.aux.forced.as_ref().ok_or_else(|| Error::invalid("model lacks attractor data"))
    }

    /// Linear-side feature row `Y = (phi(X), carried)`.
    pub fn lift(&self, x: &[f64]) -> Result<Vec<f64>> {
        let enc = self.encode_state(x)?;
        self.lift_encoded(&enc)
    }

    fn lift_encoded(&self, enc: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.phi.eval(enc)?;
        let c = self.experiment.carried();
        y.extend_from_slice(&enc[enc.len() - c..]);
        Ok(y)
    }

    /// `(x1, x2)` from a linear-side feature row.
    pub fn project(&self, y: &[f64]) -> Result<[f64; 2]> {
        let out = self.phi_inv.eval(y)?;
        Ok(match self.experiment {
            Experiment::Pendulum => {
                let (r, t) = decode_polar(&out);
                from_polar(r, t)
            }
            Experiment::DuffingCons => {
                let (r, t) = decode_polar(&out);
                from_polar_about(r, t, duffing::center(y[3]))
            }
            Experiment::Vdp | Experiment::DuffingFd => [out[0], out[1]],
        })
    }

    /// Learned period of the orbit through a linear-side feature row.
    pub fn period_at(&self, y: &[f64]) -> Result<f64> {
        let net = self.period_net.as_ref().ok_or(Error::MissingPeriodNet)?;
        Ok(net.eval(y)?[0])
    }

    /// State of the linear prototype for a nonlinear state: Cartesian
    /// oscillator coordinates (plus label) for the conservative systems,
    /// `(rho, psi)` for the limit cycle, the full feature row otherwise.
    pub fn linear_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.lift(x)?;
        Ok(match self.experiment {
            Experiment::Pendulum => {
                let (r, t) = decode_polar(&y);
                from_polar(r, t).to_vec()
            }
            Experiment::DuffingCons => {
                let (r, t) = decode_polar(&y);
                let p = from_polar(r, t);
                vec![p[0], p[1], y[3]]
            }
            Experiment::Vdp => {
                let (rho, psi) = encoding::to_polar([y[0], y[1]]);
                vec![rho, psi]
            }
            Experiment::DuffingFd => y,
        })
    }

    /// Lifts `x0`, advances the linear system over `times` and maps back.
    pub fn reconstruct(&self, x0: &[f64], times: &[f64], opts: &ReconstructOptions) -> Result<Reconstruction> {
        let y0 = self.lift(x0)?;
        self.reconstruct_from_linear(&y0, times, opts)
    }

    /// Reconstruction from a linear-side feature row.
    pub fn reconstruct_from_linear(
        &self,
        y0: &[f64],
        times: &[f64],
        opts: &ReconstructOptions,
    ) -> Result<Reconstruction> {
        let t0 = *times.first().ok_or_else(|| Error::invalid("empty time grid"))?;
        let mut lin = Vec::with_capacity(times.len());
        let mut states = Vec::with_capacity(times.len());
        match self.experiment {
            Experiment::Pendulum | Experiment::DuffingCons => {
                let (r, theta0) = decode_polar(y0);
                let rate = if opts.ablate_period {
                    opts.omega
                } else {
                    let tp = self.period_at(y0)?;
                    if !(tp > 0.0) {
                        return Err(Error::invalid(format!("learned period {tp} is not positive")));
                    }
                    opts.omega * (TAU / (opts.omega * tp))
                };
                for &t in times {
                    let theta = theta0 + rate * (t - t0);
                    let mut y = encode_polar(r, theta).to_vec();
                    y.extend_from_slice(&y0[3..]);
                    states.push(self.project(&y)?.to_vec());
                    let mut cart = from_polar(r, theta).to_vec();
                    cart.extend_from_slice(&y0[3..]);
                    lin.push(cart);
                }
            }
            Experiment::Vdp => {
                let (rho0, psi0) = encoding::to_polar([y0[0], y0[1]]);
                for &t in times {
                    let raw = self.linear.flow(&[rho0, psi0], t - t0)?;
                    let cart = from_polar(raw[0], raw[1]);
                    states.push(self.project(&cart)?.to_vec());
                    lin.push(raw);
                }
            }
            Experiment::DuffingFd => {
                for &t in times {
                    let y = self.linear.flow(y0, t - t0)?;
                    states.push(self.project(&y)?.to_vec());
                    lin.push(y);
                }
            }
        }
        Ok(Reconstruction {
            linear: Trajectory::new(self.linear.label(), times.to_vec(), lin)?,
            state: Trajectory::new(self.experiment.name(), times.to_vec(), states)?,
        })
    }

    /// Koopman eigenfunction magnitudes and phases over a planar grid.
    pub fn eigenfield(&self, grid: &[[f64; 2]]) -> Result<EigenField> {
        analysis::koopman_eigenfield(&self.linear, grid, |p| self.linear_state(p))
    }
}

/// One held-out initial state and its horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub sample_dt: f64,
}

impl TestCase {
    pub fn times(&self) -> Vec<f64> {
        let n = (self.horizon / self.sample_dt * (1.0 + 1e-12)).floor() as usize;
        (0..=n).map(|i| (i as f64 * self.sample_dt).min(self.horizon)).collect()
    }
}

/// Held-out initial states of an experiment (deterministic in the seed).
pub fn test_cases(cfg: &ExperimentConfig, aux: &Aux) -> Result<Vec<TestCase>> {
    let sys = cfg.system()?;
    match &cfg.data {
        DataSpec::Pendulum(spec) => pendulum::test_cases(&sys, spec, cfg.seed, &cfg.integrator),
        DataSpec::DuffingCons(spec) => duffing::test_cases(&sys, spec, cfg.seed, &cfg.integrator),
        DataSpec::Vdp(spec) => {
            let cyc = aux.vdp.as_ref().ok_or_else(|| Error::invalid("missing limit-cycle data"))?;
            vdp::test_cases(&sys, spec, cyc, cfg.seed, &cfg.integrator)
        }
        DataSpec::DuffingFd(spec) => forced::test_cases(&sys, spec, cfg.seed),
    }
}

/// True `(x1, x2)` trajectory on the given grid.
pub fn truth(sys: &DynamicalSystem, case: &TestCase, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let tr = integrate(sys, &case.x0, 0.0, case.horizon, cfg, case.sample_dt)?;
    let states = tr.states.iter().map(|s| vec![s[0], s[1]]).collect();
    Trajectory::new(sys.name(), tr.times, states)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub x0: Vec<f64>,
    pub max_error: f64,
    pub errors: Vec<f64>,
    #[serde(skip)]
    pub truth: Option<Trajectory>,
    #[serde(skip)]
    pub recon: Option<Reconstruction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: Experiment,
    pub cases: Vec<CaseResult>,
    pub max_error: f64,
    pub p90_error: f64,
}

/// Value below which `q` of the entries fall (nearest-rank).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Reconstructs every test case and compares against integration.
pub fn evaluate(model: &ImmersionModel, cases: &[TestCase], opts: &ReconstructOptions) -> Result<EvalReport> {
    let sys = model.nonlinear_system()?;
    let mut results = Vec::with_capacity(cases.len());
    for case in cases {
        let tr = truth(&sys, case, &model.integrator)?;
        let rec = model.reconstruct(&case.x0, &tr.times, opts)?;
        let errors = relative_error(&tr, &rec.state)?;
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        results.push(CaseResult { x0: case.x0.clone(), max_error, errors, truth: Some(tr), recon: Some(rec) });
    }
    let maxes: Vec<f64> = results.iter().map(|c| c.max_error).collect();
    Ok(EvalReport {
        experiment: model.experiment,
        max_error: maxes.iter().copied().fold(0.0, f64::max),
        p90_error: percentile(&maxes, 0.9),
        cases: results,
    })
}

/// Starting angle of paired orbits: the positive first axis.
pub(crate) const START_ANGLE: f64 = FRAC_PI_2;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
            assert!(crate::dynsys::SYSTEM_NAMES.contains(&e.system_name()));
        }
        assert!("nope".parse::<Experiment>().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        for e in Experiment::ALL {
            let cfg = ExperimentConfig::default_for(e);
            let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.experiment(), e);
        }
        let minimal = ExperimentConfig::from_json(r#"{"data": {"pendulum": {}}}"#).unwrap();
        assert_eq!(minimal.experiment(), Experiment::Pendulum);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.9), 18.0);
        assert_eq!(percentile(&v, 1.0), 20.0);
        assert_eq!(percentile(&[3.0], 0.5), 3.0);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -2.5, 1e-17, 3.0, 0.3333333333333333, 7.0]);
        let path = dir.path().join("m.csv");
        write_matrix(&path, &["a", "b", "c"], &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
    }

    #[test]
    fn test_case_grid() {
        let c = TestCase { x0: vec![0.0, 0.0], horizon: 1.0, sample_dt: 0.25 };
        assert_eq!(c.times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
