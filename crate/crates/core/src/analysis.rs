//! Period detection, Floquet analysis, inflowing-region construction, error
//! metrics and Koopman eigenfunction fields.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use log::warn;
use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynsys::{DynamicalSystem, LinearSystemSpec, SystemKind, VectorField};
use crate::error::{Error, Result};
use crate::odeint::{find_crossings, flow_to, integrate, integrate_variational, IntegratorConfig, Section, Trajectory};

pub type Complex64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimate {
    pub period: f64,
    /// Standard deviation of the individual gaps.
    pub std_dev: f64,
    pub gaps: usize,
}

impl PeriodEstimate {
    pub fn angular_frequency(&self) -> f64 {
        2.0 * PI / self.period
    }

    fn from_times(times: &[f64]) -> Result<Self> {
        if times.len() < 3 {
            return Err(Error::invalid(format!("period detection needs at least 3 crossings, found {}", times.len())));
        }
        let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let n = gaps.len() as f64;
        let period = gaps.iter().sum::<f64>() / n;
        let var = gaps.iter().map(|g| (g - period).powi(2)).sum::<f64>() / n;
        Ok(Self { period, std_dev: var.sqrt(), gaps: gaps.len() })
    }
}

/// Mean spacing of same-direction crossings of `section` after `t_skip`.
pub fn detect_period<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    section: &Section,
    t_skip: f64,
    n_crossings: usize,
    t_max: f64,
    cfg: &IntegratorConfig,
) -> Result<PeriodEstimate> {
    let hits = find_crossings(f, x0, 0.0, t_max, t_skip, section, n_crossings, cfg)?;
    let times: Vec<f64> = hits.iter().map(|c| c.t).collect();
    PeriodEstimate::from_times(&times)
}

/// Period from linearly interpolated zero up-crossings of a sampled signal
/// (decaying oscillations included).
pub fn zero_upcrossing_period(times: &[f64], signal: &[f64]) -> Result<PeriodEstimate> {
    if times.len() != signal.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), got: signal.len() });
    }
    let mut ups = Vec::new();
    for i in 1..signal.len() {
        let (a, b) = (signal[i - 1], signal[i]);
        if a < 0.0 && b >= 0.0 {
            ups.push(times[i - 1] + (times[i] - times[i - 1]) * (-a) / (b - a));
        }
    }
    PeriodEstimate::from_times(&ups)
}

/// Dominant frequency of the decaying deviation between a trajectory from
/// `point + offset` and one from `point`, measured on `component`.
pub fn decay_frequency<F: VectorField + ?Sized>(
    f: &F,
    point: &[f64],
    offset: &[f64],
    horizon: f64,
    component: usize,
    cfg: &IntegratorConfig,
) -> Result<PeriodEstimate> {
    let dt = 0.01;
    let base = integrate(f, point, 0.0, horizon, cfg, dt)?;
    let moved: Vec<f64> = point.iter().zip(offset).map(|(a, b)| a + b).collect();
    let pert = integrate(f, &moved, 0.0, horizon, cfg, dt)?;
    let diff: Vec<f64> = pert.states.iter().zip(&base.states).map(|(a, b)| a[component] - b[component]).collect();
    zero_upcrossing_period(&base.times, &diff)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloquetResult {
    pub period: f64,
    /// Refined point on the cycle.
    pub point: Vec<f64>,
    /// Sorted by decreasing modulus.
    #[serde(with = "complex_list")]
    pub multipliers: Vec<Complex64>,
    pub monodromy: DMatrix<f64>,
}

impl FloquetResult {
    /// Multipliers with the one closest to 1 (flow or phase direction) removed.
    pub fn nontrivial(&self) -> Vec<Complex64> {
        let trivial = self
            .multipliers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
            .map(|(i, _)| i);
        self.multipliers.iter().enumerate().filter(|(i, _)| Some(*i) != trivial).map(|(_, m)| *m).collect()
    }

    pub fn trivial_multiplier(&self) -> Option<Complex64> {
        self.multipliers.iter().min_by(|a, b| (*a - 1.0).norm().total_cmp(&(*b - 1.0).norm())).copied()
    }

    /// `-ln|mu| / T` for the dominant nontrivial multiplier.
    pub fn decay_rate(&self) -> f64 {
        let mu = self.nontrivial().iter().map(|m| m.norm()).fold(0.0, f64::max);
        -mu.ln() / self.period
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

mod complex_list {
    use super::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

/// Index and period of the forcing phase for forced systems.
fn forcing(sys: &DynamicalSystem) -> Option<(usize, f64)> {
    match sys.kind() {
        SystemKind::DuffingFd { omega, .. } => Some((2, 2.0 * PI / omega)),
        _ => None,
    }
}

const NEWTON_ITERS: usize = 30;

/// Refines `point` onto the periodic orbit and computes the monodromy matrix.
///
/// Autonomous systems solve `phi_T(x) = x` together with the phase condition
/// `f(x_guess) . (x - x_guess) = 0` for `(x, T)`. Forced systems use the
/// stroboscopic map at the fixed forcing period, with the phase coordinate
/// held at its initial value.
pub fn floquet(sys: &DynamicalSystem, point: &[f64], period: f64, cfg: &IntegratorConfig) -> Result<FloquetResult> {
    if point.len() != sys.dim() {
        return Err(Error::DimensionMismatch { expected: sys.dim(), got: point.len() });
    }
    if !(period > 0.0) {
        return Err(Error::invalid("period must be positive"));
    }
    let (x, t) = match forcing(sys) {
        Some((phase, tf)) => (refine_stroboscopic(sys, point, phase, tf, cfg)?, tf),
        None => refine_autonomous(sys, point, period, cfg)?,
    };
    let (_, m) = integrate_variational(sys, &x, 0.0, t, cfg)?;
    let mut multipliers: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    multipliers.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    Ok(FloquetResult { period: t, point: x, multipliers, monodromy: m })
}

fn refine_autonomous(
    sys: &DynamicalSystem,
    guess: &[f64],
    period: f64,
    cfg: &IntegratorConfig,
) -> Result<(Vec<f64>, f64)> {
    let n = sys.dim();
    let f0 = sys.eval(0.0, guess)?;
    let mut x = guess.to_vec();
    let mut t = period;
    for _ in 0..NEWTON_ITERS {
        let (tr, m) = integrate_variational(sys, &x, 0.0, t, cfg)?;
        let end = tr.last().expect("nonempty").to_vec();
        let fend = sys.eval(0.0, &end)?;
        let mut jac = DMatrix::zeros(n + 1, n + 1);
        let mut res = DVector::zeros(n + 1);
        for i in 0..n {
            for j in 0..n {
                jac[(i, j)] = m[(i, j)] - if i == j { 1.0 } else { 0.0 };
            }
            jac[(i, n)] = fend[i];
            jac[(n, i)] = f0[i];
            res[i] = end[i] - x[i];
        }
        res[n] = (0..n).map(|i| f0[i] * (x[i] - guess[i])).sum();
        let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if res.amax() < 1e-11 * scale {
            return Ok((x, t));
        }
        let delta =
            jac.lu().solve(&(-res)).ok_or_else(|| Error::NewtonFailure("singular periodic-orbit Jacobian".into()))?;
        for i in 0..n {
            x[i] += delta[i];
        }
        t += delta[n];
        if !(t > 0.0) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NewtonFailure("iterate left the admissible region".into()));
        }
    }
    Err(Error::NewtonFailure(format!("no convergence in {NEWTON_ITERS} iterations")))
}

fn refine_stroboscopic(
    sys: &DynamicalSystem,
    guess: &[f64],
    phase: usize,
    tf: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    let n = sys.dim();
    let free: Vec<usize> = (0..n).filter(|&i| i != phase).collect();
    let mut x = guess.to_vec();
    for _ in 0..NEWTON_ITERS {
        let (tr, m) = integrate_variational(sys, &x, 0.0, tf, cfg)?;
        let end = tr.last().expect("nonempty").to_vec();
        let k = free.len();
        let mut jac = DMatrix::zeros(k, k);
        let mut res = DVector::zeros(k);
        for (a, &i) in free.iter().enumerate() {
            res[a] = end[i] - x[i];
            for (b, &j) in free.iter().enumerate() {
                jac[(a, b)] = m[(i, j)] - if i == j { 1.0 } else { 0.0 };
            }
        }
        if res.amax() < 1e-11 {
            return Ok(x);
        }
        let delta =
            jac.lu().solve(&(-res)).ok_or_else(|| Error::NewtonFailure("singular stroboscopic Jacobian".into()))?;
        for (a, &i) in free.iter().enumerate() {
            x[i] += delta[a];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NewtonFailure("non-finite iterate".into()));
        }
    }
    Err(Error::NewtonFailure(format!("no convergence in {NEWTON_ITERS} iterations")))
}

/// Integral of the Jacobian trace along the orbit; `exp` of it equals
/// `det` of the monodromy matrix.
pub fn trace_integral<F: VectorField + ?Sized>(f: &F, x0: &[f64], t: f64, cfg: &IntegratorConfig) -> Result<f64> {
    struct WithTrace<'a, F: ?Sized>(&'a F);
    impl<F: VectorField + ?Sized> VectorField for WithTrace<'_, F> {
        fn dim(&self) -> usize {
            self.0.dim() + 1
        }
        fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) {
            let n = self.0.dim();
            self.0.rhs(t, &x[..n], &mut dx[..n]);
            dx[n] = self.0.jacobian(t, &x[..n]).map_or(f64::NAN, |j| j.trace());
        }
    }
    if f.jacobian(0.0, x0).is_none() {
        return Err(Error::NoJacobian(f.name().to_string()));
    }
    let mut z = x0.to_vec();
    z.push(0.0);
    let end = flow_to(&WithTrace(f), &z, 0.0, t, cfg)?;
    Ok(end[x0.len()])
}

/// Axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Rect {
    pub fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        Self { x, y }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p[0] >= self.x.0 && p[0] <= self.x.1 && p[1] >= self.y.0 && p[1] <= self.y.1
    }

    /// Lattice points with the given spacing, including both edges.
    pub fn grid(&self, spacing: f64) -> Vec<[f64; 2]> {
        let nx = ((self.x.1 - self.x.0) / spacing + 1e-9).floor() as usize;
        let ny = ((self.y.1 - self.y.0) / spacing + 1e-9).floor() as usize;
        let mut out = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                out.push([
                    (self.x.0 + i as f64 * spacing).min(self.x.1),
                    (self.y.0 + j as f64 * spacing).min(self.y.1),
                ]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub grid_points: Vec<[f64; 2]>,
    pub extension_points: Vec<[f64; 2]>,
    pub rect: Rect,
    pub spacing: f64,
    /// False if growth stopped at the round limit before closing.
    pub closed: bool,
}

impl RegionSet {
    pub fn all_points(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.grid_points.iter().chain(&self.extension_points)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "kind,x1,x2")?;
        for p in &self.grid_points {
            writeln!(w, "grid,{:?},{:?}", p[0], p[1])?;
        }
        for p in &self.extension_points {
            writeln!(w, "extension,{:?},{:?}", p[0], p[1])?;
        }
        Ok(())
    }

    /// Reads the point lists back; `rect` and `spacing` are not part of the CSV.
    pub fn read_csv<R: BufRead>(r: R, rect: Rect, spacing: f64) -> Result<Self> {
        let mut set = RegionSet { grid_points: Vec::new(), extension_points: Vec::new(), rect, spacing, closed: true };
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::Parse(format!("line {}: expected 3 columns", i + 1)));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)));
            let p = [num(cols[1])?, num(cols[2])?];
            match cols[0] {
                "grid" => set.grid_points.push(p),
                "extension" => set.extension_points.push(p),
                other => return Err(Error::Parse(format!("line {}: unknown kind '{other}'", i + 1))),
            }
        }
        Ok(set)
    }
}

/// Threshold distance for adding extension points.
pub const REGION_THRESHOLD: f64 = 0.1;

fn near_any(p: &[f64], pts: &[[f64; 2]], tol: f64) -> bool {
    pts.iter().any(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) <= tol * tol)
}

/// Samples (x1, x2) of one forcing period launched from each point at phase zero.
fn period_samples(sys: &DynamicalSystem, start: &[f64; 2], tf: f64, cfg: &IntegratorConfig) -> Result<Vec<[f64; 2]>> {
    let tr = integrate(sys, &[start[0], start[1], 0.0], 0.0, tf, cfg, tf / 100.0)?;
    Ok(tr.states.iter().map(|s| [s[0], s[1]]).collect())
}

/// New extension candidates produced by launching from `starts`.
fn grow_once(
    sys: &DynamicalSystem,
    rect: &Rect,
    starts: &[[f64; 2]],
    known: &mut Vec<[f64; 2]>,
    tf: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<[f64; 2]>> {
    let mut added = Vec::new();
    for s in starts {
        for p in period_samples(sys, s, tf, cfg)? {
            if !rect.contains(&p) && !near_any(&p, known, REGION_THRESHOLD) {
                known.push(p);
                added.push(p);
            }
        }
    }
    Ok(added)
}

/// Grid over `rect` plus the exit samples needed to close it under the
/// one-period flow map (forced systems only).
pub fn inflowing_region(
    sys: &DynamicalSystem,
    rect: Rect,
    spacing: f64,
    max_rounds: usize,
    cfg: &IntegratorConfig,
) -> Result<RegionSet> {
    let (_, tf) = forcing(sys).ok_or_else(|| Error::invalid(format!("'{}' has no forcing period", sys.name())))?;
    if !(spacing > 0.0) {
        return Err(Error::invalid("spacing must be positive"));
    }
    let grid = rect.grid(spacing);
    let mut known = grid.clone();
    let mut extension = Vec::new();
    let mut frontier = grid.clone();
    let mut closed = false;
    for _ in 0..max_rounds {
        let added = grow_once(sys, &rect, &frontier, &mut known, tf, cfg)?;
        if added.is_empty() {
            closed = true;
            break;
        }
        extension.extend_from_slice(&added);
        frontier = added;
    }
    if !closed {
        warn!("inflowing region not closed after {max_rounds} rounds; returning partial set");
    }
    Ok(RegionSet { grid_points: grid, extension_points: extension, rect, spacing, closed })
}

/// Largest distance from a one-period sample outside the rectangle to the
/// point set; closure means this is at most the threshold.
pub fn region_closure_gap(sys: &DynamicalSystem, region: &RegionSet, cfg: &IntegratorConfig) -> Result<f64> {
    let (_, tf) = forcing(sys).ok_or_else(|| Error::invalid(format!("'{}' has no forcing period", sys.name())))?;
    let pts: Vec<[f64; 2]> = region.all_points().copied().collect();
    let mut worst: f64 = 0.0;
    for s in &pts {
        for p in period_samples(sys, s, tf, cfg)? {
            if region.rect.contains(&p) {
                continue;
            }
            let d = pts
                .iter()
                .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

/// `e(t) = |recon(t) - truth(t)| / max_s |truth(s)|`.
pub fn relative_error(truth: &Trajectory, recon: &Trajectory) -> Result<Vec<f64>> {
    if truth.len() != recon.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: recon.len() });
    }
    if truth.dim() != recon.dim() {
        return Err(Error::DimensionMismatch { expected: truth.dim(), got: recon.dim() });
    }
    for (a, b) in truth.times.iter().zip(&recon.times) {
        if (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
            return Err(Error::invalid(format!("time grids differ ({a} vs {b})")));
        }
    }
    let amp = truth.states.iter().map(|s| norm(s)).fold(0.0, f64::max);
    if amp == 0.0 {
        return Err(Error::invalid("reference trajectory is identically zero"));
    }
    Ok(truth
        .states
        .iter()
        .zip(&recon.states)
        .map(|(a, b)| {
            let d: Vec<f64> = a.iter().zip(b).map(|(u, v)| u - v).collect();
            norm(&d) / amp
        })
        .collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Symmetric Hausdorff distance between two point clouds.
pub fn hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let directed = |p: &[Vec<f64>], q: &[Vec<f64>]| {
        p.iter()
            .map(|x| {
                q.iter()
                    .map(|y| norm(&x.iter().zip(y).map(|(u, v)| u - v).collect::<Vec<_>>()))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

fn segment_distance(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(u, v)| v - u).collect();
    let len2: f64 = d.iter().map(|v| v * v).sum();
    let s = if len2 > 0.0 {
        (x.iter().zip(a).zip(&d).map(|((xi, ai), di)| (xi - ai) * di).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    norm(&x.iter().zip(a).zip(&d).map(|((xi, ai), di)| xi - ai - s * di).collect::<Vec<_>>())
}

/// Symmetric Hausdorff distance between two sampled curves: every vertex of
/// one is measured against the polyline through the other. Unlike
/// [`hausdorff`] it does not grow with the sample spacing along the curve.
pub fn curve_hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let directed = |p: &[Vec<f64>], q: &[Vec<f64>]| {
        p.iter()
            .map(|x| match q.len() {
                0 => f64::INFINITY,
                1 => segment_distance(x, &q[0], &q[0]),
                _ => q.windows(2).map(|w| segment_distance(x, &w[0], &w[1])).fold(f64::INFINITY, f64::min),
            })
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Diagonalization `A = V diag(values) V^-1` with unit-norm columns whose
/// first nonzero entry is real and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    pub values: Vec<Complex64>,
    pub vectors: DMatrix<Complex64>,
    pub inverse: DMatrix<Complex64>,
}

/// Eigendecomposition of a linear prototype's generator; fails with
/// [`Error::Defective`] when the generator has no eigenvector basis.
pub fn eigendecompose(spec: &LinearSystemSpec) -> Result<Eigen> {
    let a = spec.generator()?;
    eigendecompose_matrix(&a).map_err(|e| match e {
        Error::Defective(_) => Error::Defective(spec.label().to_string()),
        other => other,
    })
}

pub fn eigendecompose_matrix(a: &DMatrix<f64>) -> Result<Eigen> {
    let n = a.nrows();
    let mut values: Vec<Complex64> = a.complex_eigenvalues().iter().copied().collect();
    // Decreasing imaginary part, then decreasing real part: +i before -i.
    values.sort_by(|x, y| y.im.total_cmp(&x.im).then(y.re.total_cmp(&x.re)));
    let scale = a.amax().max(1.0);
    let tol = 1e-8 * scale;
    let ac: DMatrix<Complex64> = a.map(|v| Complex64::new(v, 0.0));
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    let mut col = 0;
    let mut i = 0;
    while i < n {
        let lambda = values[i];
        let mult = values[i..].iter().take_while(|v| (**v - lambda).norm() < 1e-6 * scale).count();
        let shifted = &ac - DMatrix::<Complex64>::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        // Singular values are sorted descending; the null space is at the tail.
        let null: Vec<usize> = (0..n).filter(|&k| svd.singular_values[k] < tol).collect();
        if null.len() < mult {
            return Err(Error::Defective(format!("matrix with eigenvalue {lambda}")));
        }
        for &k in null.iter().rev().take(mult) {
            let v: DVector<Complex64> = v_t.row(k).transpose().map(|c| c.conj());
            vectors.set_column(col, &normalize_vector(v));
            col += 1;
        }
        i += mult;
    }
    let inverse =
        vectors.clone().try_inverse().ok_or_else(|| Error::Defective("eigenvector matrix is singular".into()))?;
    Ok(Eigen { values, vectors, inverse })
}

fn normalize_vector(v: DVector<Complex64>) -> DVector<Complex64> {
    let v = &v / Complex64::new(v.norm(), 0.0);
    match v.iter().find(|c| c.norm() > 1e-12) {
        Some(first) => {
            let phase = *first / Complex64::new(first.norm(), 0.0);
            v.map(|c| c / phase)
        }
        None => v,
    }
}

/// Magnitude and phase of each eigenfunction `z = V^-1 y(x)` over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenField {
    pub points: Vec<[f64; 2]>,
    pub values: Vec<Complex64>,
    /// `z[k][i]`: eigenfunction `i` at grid point `k`.
    pub z: Vec<Vec<Complex64>>,
}

impl EigenField {
    pub fn magnitude(&self, k: usize, i: usize) -> f64 {
        self.z[k][i].norm()
    }

    pub fn phase(&self, k: usize, i: usize) -> f64 {
        self.z[k][i].arg()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let m = self.values.len();
        let mut header = String::from("x1,x2");
        for i in 1..=m {
            header.push_str(&format!(",mag{i},phase{i}"));
        }
        writeln!(w, "{header}")?;
        for (p, z) in self.points.iter().zip(&self.z) {
            let mut line = format!("{:?},{:?}", p[0], p[1]);
            for c in z {
                line.push_str(&format!(",{:?},{:?}", c.norm(), c.arg()));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Uniform `nx x ny` grid over a rectangle.
pub fn state_grid(rect: &Rect, nx: usize, ny: usize) -> Vec<[f64; 2]> {
    let step = |lo: f64, hi: f64, n: usize, i: usize| {
        if n <= 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push([step(rect.x.0, rect.x.1, nx, i), step(rect.y.0, rect.y.1, ny, j)]);
        }
    }
    out
}

/// Evaluates `z = V^-1 phi(x)` on each grid point; `phi` returns the linear
/// state in the prototype's Cartesian coordinates.
pub fn koopman_eigenfield<P>(spec: &LinearSystemSpec, grid: &[[f64; 2]], phi: P) -> Result<EigenField>
where
    P: Fn(&[f64; 2]) -> Result<Vec<f64>>,
{
    let eig = eigendecompose(spec)?;
    let n = eig.values.len();
    let mut z = Vec::with_capacity(grid.len());
    for p in grid {
        let y = phi(p)?;
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: y.len() });
        }
        let yc = DVector::from_iterator(n, y.iter().map(|v| Complex64::new(*v, 0.0)));
        z.push((&eig.inverse * yc).iter().copied().collect());
    }
    Ok(EigenField { points: grid.to_vec(), values: eig.values, z })
}
