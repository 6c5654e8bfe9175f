//! Catalogue of the nonlinear oscillators and their linear reference systems.
//!
//! Every system is a plain immutable value: a name, a parameter record and a
//! typed [`SystemKind`] that evaluates the right-hand side, the analytic
//! Jacobian and, where one exists, the energy. Phase-like coordinates (the
//! forcing phase of the forced Duffing oscillator, the angle of the linear
//! limit cycle) are kept unwrapped.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Anything the integrator can advance: `dx/dt = f(t, x)`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]);

    /// Analytic Jacobian `df/dx`, when available.
    fn jacobian(&self, _t: f64, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn name(&self) -> &str {
        "anonymous"
    }
}

/// Named catalogue systems. Parameter names follow the config keys.
pub const SYSTEM_NAMES: &[&str] = &[
    "pendulum",
    "linear_osc",
    "duffing_cons",
    "ext_linear_osc",
    "vdp",
    "linear_limit_cycle",
    "duffing_fd",
    "damped_ext_linear",
    "harmonic_w",
    "app_lc",
    "app_coexist",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SystemKind {
    Pendulum,
    LinearOsc,
    DuffingCons,
    ExtLinearOsc,
    VanDerPol { mu: f64 },
    LinearLimitCycle { d: f64, omega: f64 },
    DuffingFd { c: f64, k: f64, k3: f64, f: f64, omega: f64 },
    DampedExtLinear { c_l: f64, omega_l: f64, omega: f64 },
    HarmonicW { omega: f64 },
    AppLimitCycle,
    AppCoexist { lambda1: f64, lambda2: f64 },
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicalSystem {
    name: String,
    params: BTreeMap<String, f64>,
    kind: SystemKind,
}

/// `{"system": "vdp", "params": {}}` as found in experiment configs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub system: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl SystemConfig {
    pub fn build(&self) -> Result<DynamicalSystem> {
        make_system(&self.system, &self.params)
    }
}

fn defaults(name: &str) -> Option<&'static [(&'static str, Option<f64>)]> {
    // `None` marks a parameter without a default.
    let table: &'static [(&'static str, Option<f64>)] = match name {
        "pendulum" | "linear_osc" | "duffing_cons" | "ext_linear_osc" | "app_lc" => &[],
        "vdp" => &[("mu", Some(1.0))],
        "linear_limit_cycle" => &[("D", Some(1.06)), ("Omega", Some(0.943))],
        "duffing_fd" => {
            &[("c", Some(0.02)), ("k", Some(1.0)), ("k3", Some(1.0)), ("f", Some(0.1)), ("Omega", Some(1.3))]
        }
        "damped_ext_linear" => &[("c_l", Some(0.02)), ("omega_l", Some(1.3)), ("Omega", Some(1.3))],
        "harmonic_w" => &[("omega", None)],
        "app_coexist" => &[("lambda1", Some(-0.5)), ("lambda2", Some(-2.0))],
        _ => return None,
    };
    Some(table)
}

/// Builds a catalogue system by name, filling documented defaults.
pub fn make_system(name: &str, params: &BTreeMap<String, f64>) -> Result<DynamicalSystem> {
    let table = defaults(name).ok_or_else(|| Error::UnknownSystem(name.to_string()))?;
    let mut resolved = BTreeMap::new();
    for (key, default) in table {
        let value = match (params.get(*key), default) {
            (Some(v), _) => *v,
            (None, Some(d)) => *d,
            (None, None) => return Err(Error::MissingParameter { system: name.to_string(), param: key.to_string() }),
        };
        if !value.is_finite() {
            return Err(Error::invalid(format!("parameter '{key}' of '{name}' is not finite")));
        }
        resolved.insert(key.to_string(), value);
    }
    if let Some(extra) = params.keys().find(|k| !table.iter().any(|(t, _)| t == k)) {
        return Err(Error::invalid(format!("system '{name}' has no parameter '{extra}'")));
    }
    let p = |k: &str| resolved[k];
    let kind = match name {
        "pendulum" => SystemKind::Pendulum,
        "linear_osc" => SystemKind::LinearOsc,
        "duffing_cons" => SystemKind::DuffingCons,
        "ext_linear_osc" => SystemKind::ExtLinearOsc,
        "vdp" => SystemKind::VanDerPol { mu: p("mu") },
        "linear_limit_cycle" => SystemKind::LinearLimitCycle { d: p("D"), omega: p("Omega") },
        "duffing_fd" => SystemKind::DuffingFd { c: p("c"), k: p("k"), k3: p("k3"), f: p("f"), omega: p("Omega") },
        "damped_ext_linear" => SystemKind::DampedExtLinear { c_l: p("c_l"), omega_l: p("omega_l"), omega: p("Omega") },
        "harmonic_w" => SystemKind::HarmonicW { omega: p("omega") },
        "app_lc" => SystemKind::AppLimitCycle,
        "app_coexist" => {
            let (l1, l2) = (p("lambda1"), p("lambda2"));
            if !(l2 < l1 && l1 < 0.0) {
                return Err(Error::invalid(format!(
                    "app_coexist requires lambda2 < lambda1 < 0, got lambda1={l1}, lambda2={l2}"
                )));
            }
            SystemKind::AppCoexist { lambda1: l1, lambda2: l2 }
        }
        _ => unreachable!("defaults() accepted '{name}'"),
    };
    Ok(DynamicalSystem { name: name.to_string(), params: resolved, kind })
}

/// Shorthand for a catalogue system with default parameters.
pub fn system(name: &str) -> Result<DynamicalSystem> {
    make_system(name, &BTreeMap::new())
}

impl DynamicalSystem {
    /// Linear system `dy/dt = A y` for an arbitrary square matrix.
    pub fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::invalid("matrix system requires a non-empty square matrix"));
        }
        Ok(DynamicalSystem { name: "matrix".to_string(), params: BTreeMap::new(), kind: SystemKind::Matrix(a) })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    pub fn kind(&self) -> &SystemKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SystemKind::ExtLinearOsc | SystemKind::DuffingFd { .. } => 3,
            SystemKind::DampedExtLinear { .. } => 4,
            SystemKind::Matrix(a) => a.nrows(),
            _ => 2,
        }
    }

    /// True when the right-hand side does not depend on time.
    pub fn is_autonomous(&self) -> bool {
        // The forced Duffing oscillator carries its forcing phase as a state.
        true
    }

    pub fn has_energy(&self) -> bool {
        matches!(
            self.kind,
            SystemKind::Pendulum | SystemKind::LinearOsc | SystemKind::DuffingCons | SystemKind::HarmonicW { .. }
        )
    }

    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        match self.kind {
            SystemKind::Pendulum => Ok(pendulum_energy(x[0], x[1])),
            SystemKind::DuffingCons => Ok(duffing_energy(x[0], x[1])),
            SystemKind::LinearOsc => Ok(0.5 * (x[0] * x[0] + x[1] * x[1])),
            SystemKind::HarmonicW { omega } => Ok(0.5 * (x[1] * x[1] + omega * omega * x[0] * x[0])),
            _ => Err(Error::NoFirstIntegral(self.name.clone())),
        }
    }

    /// Allocating right-hand side evaluation with a dimension check.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let mut dx = vec![0.0; self.dim()];
        self.rhs(t, x, &mut dx);
        Ok(dx)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got });
        }
        Ok(())
    }
}

pub fn pendulum_energy(x1: f64, x2: f64) -> f64 {
    0.5 * x2 * x2 - x1.cos()
}

pub fn duffing_energy(x1: f64, x2: f64) -> f64 {
    0.5 * x2 * x2 - 0.5 * x1 * x1 + 0.25 * x1.powi(4)
}

impl VectorField for DynamicalSystem {
    fn dim(&self) -> usize {
        DynamicalSystem::dim(self)
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
        match &self.kind {
            SystemKind::Pendulum => {
                dx[0] = x[1];
                dx[1] = -x[0].sin();
            }
            SystemKind::LinearOsc => {
                dx[0] = x[1];
                dx[1] = -x[0];
            }
            SystemKind::DuffingCons => {
                dx[0] = x[1];
                dx[1] = x[0] - x[0].powi(3);
            }
            SystemKind::ExtLinearOsc => {
                dx[0] = x[1];
                dx[1] = -x[0];
                dx[2] = 0.0;
            }
            SystemKind::VanDerPol { mu } => {
                dx[0] = x[1];
                dx[1] = -mu * (x[0] * x[0] - 1.0) * x[1] - x[0];
            }
            SystemKind::LinearLimitCycle { d, omega } => {
                dx[0] = -d * (x[0] - 1.0);
                dx[1] = *omega;
            }
            SystemKind::DuffingFd { c, k, k3, f, omega } => {
                dx[0] = x[1];
                dx[1] = -c * x[1] - k * x[0] - k3 * x[0].powi(3) + f * x[2].cos();
                dx[2] = *omega;
            }
            SystemKind::DampedExtLinear { c_l, omega_l, omega } => {
                dx[0] = x[1];
                dx[1] = -c_l * x[1] - omega_l * omega_l * x[0];
                dx[2] = *omega;
                dx[3] = 0.0;
            }
            SystemKind::HarmonicW { omega } => {
                dx[0] = x[1];
                dx[1] = -omega * omega * x[0];
            }
            SystemKind::AppLimitCycle => {
                let r = x[0].hypot(x[1]);
                dx[0] = x[0] / r + (x[1] - x[0]);
                dx[1] = x[1] / r - (x[0] + x[1]);
            }
            SystemKind::AppCoexist { lambda1, lambda2 } => {
                let (s, c) = x[1].sin_cos();
                dx[0] = x[0] * (lambda1 * s * s + lambda2 * c * c);
                dx[1] = (lambda1 - lambda2) * s * c;
            }
            SystemKind::Matrix(a) => {
                for (i, out) in dx.iter_mut().enumerate() {
                    *out = (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum();
                }
            }
        }
    }

    fn jacobian(&self, _t: f64, x: &[f64]) -> Option<DMatrix<f64>> {
        let n = DynamicalSystem::dim(self);
        let mut j = DMatrix::zeros(n, n);
        match &self.kind {
            SystemKind::Pendulum => {
                j[(0, 1)] = 1.0;
                j[(1, 0)] = -x[0].cos();
            }
            SystemKind::LinearOsc | SystemKind::ExtLinearOsc => {
                j[(0, 1)] = 1.0;
                j[(1, 0)] = -1.0;
            }
            SystemKind::DuffingCons => {
                j[(0, 1)] = 1.0;
                j[(1, 0)] = 1.0 - 3.0 * x[0] * x[0];
            }
            SystemKind::VanDerPol { mu } => {
                j[(0, 1)] = 1.0;
                j[(1, 0)] = -2.0 * mu * x[0] * x[1] - 1.0;
                j[(1, 1)] = -mu * (x[0] * x[0] - 1.0);
            }
            SystemKind::LinearLimitCycle { d, .. } => {
                j[(0, 0)] = -d;
            }
            SystemKind::DuffingFd { c, k, k3, f, .. } => {
                j[(0, 1)] = 1.0;
                j[(1, 0)] = -k - 3.0 * k3 * x[0] * x[0];
                j[(1, 1)] = -c;
                j[(1, 2)] = -f * x[2].sin();
            }
            SystemKind::DampedExtLinear { c_l, omega_l, .. } => {
                j[(0, 1)] = 1.0;
                j[(1, 0)] = -omega_l * omega_l;
                j[(1, 1)] = -c_l;
            }
            SystemKind::HarmonicW { omega } => {
                j[(0, 1)] = 1.0;
                j[(1, 0)] = -omega * omega;
            }
            SystemKind::AppLimitCycle => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let r3 = r2 * r2.sqrt();
                j[(0, 0)] = x[1] * x[1] / r3 - 1.0;
                j[(0, 1)] = -x[0] * x[1] / r3 + 1.0;
                j[(1, 0)] = -x[0] * x[1] / r3 - 1.0;
                j[(1, 1)] = x[0] * x[0] / r3 - 1.0;
            }
            SystemKind::AppCoexist { lambda1, lambda2 } => {
                let (s, c) = x[1].sin_cos();
                j[(0, 0)] = lambda1 * s * s + lambda2 * c * c;
                j[(0, 1)] = 2.0 * x[0] * (lambda1 - lambda2) * s * c;
                j[(1, 1)] = (lambda1 - lambda2) * (2.0 * x[1]).cos();
            }
            SystemKind::Matrix(a) => return Some(a.clone()),
        }
        Some(j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearKind {
    Matrix,
    Harmonic,
    ExtendedHarmonic,
    LinearLimitCycle,
    DampedExtended,
}

/// Conjugate linear system of an immersion.
///
/// The prototypes `LinearLimitCycle` and `DampedExtended` are affine (they
/// contain a constant drift); [`LinearSystemSpec::generator`] lifts them to a
/// homogeneous matrix by appending a constant coordinate fixed at one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSystemSpec {
    pub kind: LinearKind,
    pub matrix: Option<DMatrix<f64>>,
    pub params: BTreeMap<String, f64>,
}

impl LinearSystemSpec {
    pub fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::invalid("linear system matrix must be square"));
        }
        Ok(Self { kind: LinearKind::Matrix, matrix: Some(a), params: BTreeMap::new() })
    }

    /// `dy1/dt = y2, dy2/dt = -omega^2 y1`.
    pub fn harmonic(omega: f64) -> Self {
        Self::named(LinearKind::Harmonic, &[("omega", omega)])
    }

    /// Harmonic oscillator plus a neutral coordinate `dy3/dt = 0`.
    pub fn extended_harmonic(omega: f64) -> Self {
        Self::named(LinearKind::ExtendedHarmonic, &[("omega", omega)])
    }

    /// `dy1/dt = -D (y1 - 1), dy2/dt = Omega`.
    pub fn linear_limit_cycle(d: f64, omega: f64) -> Self {
        Self::named(LinearKind::LinearLimitCycle, &[("D", d), ("Omega", omega)])
    }

    /// Damped oscillator with a phase `dy3/dt = Omega` and a label `dy4/dt = 0`.
    pub fn damped_extended(c_l: f64, omega_l: f64, omega: f64) -> Self {
        Self::named(LinearKind::DampedExtended, &[("c_l", c_l), ("omega_l", omega_l), ("Omega", omega)])
    }

    fn named(kind: LinearKind, params: &[(&str, f64)]) -> Self {
        Self { kind, matrix: None, params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }

    fn p(&self, key: &str) -> Result<f64> {
        self.params
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingParameter { system: format!("{:?}", self.kind), param: key.to_string() })
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LinearKind::Matrix => match &self.matrix {
                Some(a) if a.nrows() == a.ncols() && a.nrows() > 0 => Ok(()),
                _ => Err(Error::invalid("kind=Matrix requires a square matrix")),
            },
            LinearKind::Harmonic | LinearKind::ExtendedHarmonic => self.p("omega").map(|_| ()),
            LinearKind::LinearLimitCycle => self.p("D").and(self.p("Omega")).map(|_| ()),
            LinearKind::DampedExtended => self.p("c_l").and(self.p("omega_l")).and(self.p("Omega")).map(|_| ()),
        }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            LinearKind::Matrix => self.matrix.as_ref().map_or(0, |a| a.nrows()),
            LinearKind::Harmonic | LinearKind::LinearLimitCycle => 2,
            LinearKind::ExtendedHarmonic => 3,
            LinearKind::DampedExtended => 4,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.kind, LinearKind::LinearLimitCycle | LinearKind::DampedExtended)
    }

    /// Expands the prototype to a catalogue system.
    pub fn to_system(&self) -> Result<DynamicalSystem> {
        self.validate()?;
        let mut params = BTreeMap::new();
        let name = match self.kind {
            LinearKind::Matrix => return DynamicalSystem::from_matrix(self.matrix.clone().unwrap_or_default()),
            LinearKind::Harmonic => {
                params.insert("omega".to_string(), self.p("omega")?);
                "harmonic_w"
            }
            LinearKind::ExtendedHarmonic => return DynamicalSystem::from_matrix(self.generator()?),
            LinearKind::LinearLimitCycle => {
                params.insert("D".to_string(), self.p("D")?);
                params.insert("Omega".to_string(), self.p("Omega")?);
                "linear_limit_cycle"
            }
            LinearKind::DampedExtended => {
                for key in ["c_l", "omega_l", "Omega"] {
                    params.insert(key.to_string(), self.p(key)?);
                }
                "damped_ext_linear"
            }
        };
        make_system(name, &params)
    }

    /// Homogeneous generator. Affine prototypes gain a trailing constant
    /// coordinate, so the returned matrix is one larger than [`Self::dim`].
    pub fn generator(&self) -> Result<DMatrix<f64>> {
        self.validate()?;
        Ok(match self.kind {
            LinearKind::Matrix => self.matrix.clone().unwrap_or_default(),
            LinearKind::Harmonic => {
                let w = self.p("omega")?;
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w * w, 0.0])
            }
            LinearKind::ExtendedHarmonic => {
                let w = self.p("omega")?;
                DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -w * w, 0.0, 0.0, 0.0, 0.0, 0.0])
            }
            LinearKind::LinearLimitCycle => {
                let (d, om) = (self.p("D")?, self.p("Omega")?);
                DMatrix::from_row_slice(3, 3, &[-d, 0.0, d, 0.0, 0.0, om, 0.0, 0.0, 0.0])
            }
            LinearKind::DampedExtended => {
                let (c, w, om) = (self.p("c_l")?, self.p("omega_l")?, self.p("Omega")?);
                let mut a = DMatrix::zeros(5, 5);
                a[(0, 1)] = 1.0;
                a[(1, 0)] = -w * w;
                a[(1, 1)] = -c;
                a[(2, 4)] = om;
                a
            }
        })
    }

    /// Right-hand side of the (possibly affine) linear system.
    pub fn rhs(&self, y: &[f64]) -> Result<Vec<f64>> {
        let sys = self.to_system()?;
        sys.eval(0.0, y)
    }

    /// Exact flow `y(t)` from `y0` through the matrix exponential.
    pub fn flow(&self, y0: &[f64], t: f64) -> Result<Vec<f64>> {
        let n = self.dim();
        if y0.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: y0.len() });
        }
        let g = self.generator()?;
        let m = g.nrows();
        let mut z = nalgebra::DVector::zeros(m);
        for (i, v) in y0.iter().enumerate() {
            z[i] = *v;
        }
        if m > n {
            z[n] = 1.0;
        }
        let e = (g * t).exp();
        let out = e * z;
        Ok(out.iter().take(n).copied().collect())
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            LinearKind::Matrix => "Matrix",
            LinearKind::Harmonic => "Harmonic",
            LinearKind::ExtendedHarmonic => "ExtendedHarmonic",
            LinearKind::LinearLimitCycle => "LinearLimitCycle",
            LinearKind::DampedExtended => "DampedExtended",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn pendulum_origin_is_fixed() {
        let s = system("pendulum").unwrap();
        assert_eq!(s.eval(0.0, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn duffing_fd_defaults() {
        let s = system("duffing_fd").unwrap();
        assert_eq!(s.params(), &params(&[("c", 0.02), ("k", 1.0), ("k3", 1.0), ("f", 0.1), ("Omega", 1.3)]));
    }

    #[test]
    fn duffing_cons_fixed_points() {
        let s = system("duffing_cons").unwrap();
        for x1 in [-1.0, 0.0, 1.0] {
            assert_eq!(s.eval(0.0, &[x1, 0.0]).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn energies() {
        let p = system("pendulum").unwrap();
        assert_abs_diff_eq!(p.energy(&[0.0, 0.0]).unwrap(), -1.0);
        let d = system("duffing_cons").unwrap();
        assert_abs_diff_eq!(d.energy(&[1.0, 0.0]).unwrap(), -0.25);
        assert_abs_diff_eq!(d.energy(&[0.0, 0.0]).unwrap(), 0.0);
        let v = system("vdp").unwrap();
        assert!(matches!(v.energy(&[1.0, 0.0]), Err(Error::NoFirstIntegral(_))));
    }

    #[test]
    fn unknown_and_missing() {
        assert!(matches!(system("lorenz"), Err(Error::UnknownSystem(_))));
        match system("harmonic_w") {
            Err(Error::MissingParameter { param, .. }) => assert_eq!(param, "omega"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(make_system("vdp", &params(&[("nu", 1.0)])).is_err());
        assert!(make_system("app_coexist", &params(&[("lambda1", -3.0)])).is_err());
    }

    #[test]
    fn autonomous_rhs_ignores_time() {
        for name in SYSTEM_NAMES {
            let s = if *name == "harmonic_w" {
                make_system(name, &params(&[("omega", 2.0)])).unwrap()
            } else {
                system(name).unwrap()
            };
            let x: Vec<f64> = (0..s.dim()).map(|i| 0.3 + 0.17 * i as f64).collect();
            let mut a = vec![0.0; s.dim()];
            let mut b = vec![0.0; s.dim()];
            s.rhs(0.0, &x, &mut a);
            s.rhs(17.5, &x, &mut b);
            assert_eq!(a, b, "{name}");
            assert_eq!(a.len(), s.dim());
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        for name in SYSTEM_NAMES {
            let s = if *name == "harmonic_w" {
                make_system(name, &params(&[("omega", 2.0)])).unwrap()
            } else {
                system(name).unwrap()
            };
            let n = s.dim();
            let x: Vec<f64> = (0..n).map(|i| 0.4 + 0.23 * i as f64).collect();
            let j = VectorField::jacobian(&s, 0.0, &x).unwrap();
            let h = 1e-6;
            for col in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[col] += h;
                xm[col] -= h;
                let fp = s.eval(0.0, &xp).unwrap();
                let fm = s.eval(0.0, &xm).unwrap();
                for row in 0..n {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    assert!((fd - j[(row, col)]).abs() < 1e-7, "{name} ({row},{col})");
                }
            }
        }
    }

    #[test]
    fn linear_limit_cycle_prototype() {
        let spec = LinearSystemSpec::linear_limit_cycle(1.06, 0.943);
        let dy = spec.rhs(&[0.3, 2.0]).unwrap();
        assert_eq!(dy, vec![-1.06 * (0.3 - 1.0), 0.943]);
        let y = spec.flow(&[0.3, 2.0], 1.5).unwrap();
        assert_abs_diff_eq!(y[0], 1.0 + (0.3 - 1.0) * (-1.06f64 * 1.5).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], 2.0 + 0.943 * 1.5, epsilon = 1e-12);
    }

    #[test]
    fn duffing_fd_phase_rate_is_omega() {
        let s = system("duffing_fd").unwrap();
        let dx = s.eval(0.0, &[0.7, -0.2, 3.1]).unwrap();
        assert_eq!(dx[2], 1.3);
    }

    #[test]
    fn prototypes_agree_with_hand_coded_evaluators() {
        let y = [0.4, -0.7, 0.9, 1.0];
        let h = LinearSystemSpec::harmonic(2.0).rhs(&y[..2]).unwrap();
        assert_eq!(h, vec![-0.7, -4.0 * 0.4]);
        let e = LinearSystemSpec::extended_harmonic(1.0).rhs(&y[..3]).unwrap();
        assert_eq!(e, vec![-0.7, -0.4, 0.0]);
        let d = LinearSystemSpec::damped_extended(0.02, 1.3, 1.3).rhs(&y).unwrap();
        assert_abs_diff_eq!(d[1], -0.02 * -0.7 - 1.69 * 0.4, epsilon = 1e-15);
        assert_eq!((d[0], d[2], d[3]), (-0.7, 1.3, 0.0));
        let m = LinearSystemSpec::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        assert_eq!(m.rhs(&[1.0, 0.0]).unwrap(), vec![0.0, -1.0]);
        assert!(LinearSystemSpec::from_matrix(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn harmonic_flow_rotates() {
        let spec = LinearSystemSpec::harmonic(1.0);
        let y = spec.flow(&[1.0, 0.0], std::f64::consts::FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(y[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn config_json_selects_system() {
        let cfg: SystemConfig = serde_json::from_str(r#"{"system":"vdp","params":{}}"#).unwrap();
        assert_eq!(cfg.build().unwrap().param("mu"), Some(1.0));
    }
}
