//! Dormand–Prince 5(4) integration with dense output, variational equations
//! and section-crossing events.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynsys::VectorField;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Initial step; non-positive selects one automatically.
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-9, abs_tol: 1e-11, h_init: 0.0, h_max: 1.0, max_steps: 2_000_000 }
    }
}

impl IntegratorConfig {
    pub fn with_tol(rel_tol: f64, abs_tol: f64) -> Self {
        Self { rel_tol, abs_tol, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::invalid("integrator tolerances must be strictly positive"));
        }
        if self.max_steps < 1 {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        if !(self.h_max > 0.0) {
            return Err(Error::invalid("h_max must be positive"));
        }
        Ok(())
    }
}

/// Uniformly sampled solution of a system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub system_name: String,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(system_name: impl Into<String>, times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::invalid(format!("trajectory has {} times but {} states", times.len(), states.len())));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("trajectory times must be strictly increasing"));
        }
        if let Some(first) = states.first() {
            let n = first.len();
            if let Some(bad) = states.iter().find(|s| s.len() != n) {
                return Err(Error::DimensionMismatch { expected: n, got: bad.len() });
            }
        }
        Ok(Self { system_name: system_name.into(), times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }

    /// Writes `t,x1,...,xN` with round-trip precision.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> =
            std::iter::once("t".to_string()).chain((1..=self.dim()).map(|i| format!("x{i}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let row: Vec<String> =
                std::iter::once(format!("{t:?}")).chain(s.iter().map(|v| format!("{v:?}"))).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, system_name: &str) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty trajectory csv".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"t") {
            return Err(Error::Parse(format!("unexpected trajectory header '{header}'")));
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{v}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != cols.len() {
                return Err(Error::Parse(format!("row has {} fields, header {}", vals.len(), cols.len())));
            }
            times.push(vals[0]);
            states.push(vals[1..].to_vec());
        }
        Trajectory::new(system_name, times, states)
    }
}

/// Section `x[index] = value`, crossed in the given direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub index: usize,
    pub value: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Component increasing through the value.
    Up,
    /// Component decreasing through the value.
    Down,
    Either,
}

impl Section {
    pub fn new(index: usize, value: f64, direction: Direction) -> Self {
        Self { index, value, direction }
    }

    fn crossed(&self, g0: f64, g1: f64) -> bool {
        match self.direction {
            Direction::Up => g0 < 0.0 && g1 >= 0.0,
            Direction::Down => g0 > 0.0 && g1 <= 0.0,
            Direction::Either => (g0 < 0.0 && g1 >= 0.0) || (g0 > 0.0 && g1 <= 0.0),
        }
    }
}

// Dormand–Prince 5(4) tableau.
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
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension (Hairer, contd5).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step together with its interpolant.
#[derive(Debug, Clone)]
pub struct Step {
    pub t0: f64,
    pub t1: f64,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    rcont: [Vec<f64>; 5],
}

impl Step {
    /// Dense output at `t` in `[t0, t1]`.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let h = self.t1 - self.t0;
        let th = if h == 0.0 { 0.0 } else { (t - self.t0) / h };
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
        }
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.x0.len()];
        self.interpolate(t, &mut out);
        out
    }
}

struct Work {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y1: Vec<f64>,
    err: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        Self { k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n], y1: vec![0.0; n], err: vec![0.0; n] }
    }
}

/// Computes the six new stages of a step from `(t, y)` with `k[0]` already
/// holding `f(t, y)`. Leaves the fifth-order solution in `w.y1`, `k[6]` at
/// `f(t + h, y1)` and the embedded error estimate in `w.err`.
fn dp_stages<F: VectorField + ?Sized>(f: &F, t: f64, y: &[f64], h: f64, w: &mut Work) {
    let n = y.len();
    let Work { k, tmp, y1, err } = w;
    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k[0][i];
    }
    f.rhs(t + C2 * h, tmp, &mut k[1]);
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
    }
    f.rhs(t + C3 * h, tmp, &mut k[2]);
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
    }
    f.rhs(t + C4 * h, tmp, &mut k[3]);
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
    }
    f.rhs(t + C5 * h, tmp, &mut k[4]);
    for i in 0..n {
        tmp[i] = y[i] + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
    }
    f.rhs(t + h, tmp, &mut k[5]);
    for i in 0..n {
        y1[i] = y[i] + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
    }
    f.rhs(t + h, y1, &mut k[6]);
    for i in 0..n {
        err[i] = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
    }
}

fn make_step(t: f64, y: &[f64], h: f64, w: &Work) -> Step {
    let n = y.len();
    let k = &w.k;
    let mut rcont: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    for i in 0..n {
        let ydiff = w.y1[i] - y[i];
        let bspl = h * k[0][i] - ydiff;
        rcont[0][i] = y[i];
        rcont[1][i] = ydiff;
        rcont[2][i] = bspl;
        rcont[3][i] = ydiff - h * k[6][i] - bspl;
        rcont[4][i] = h * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
    }
    Step { t0: t, t1: t + h, x0: y.to_vec(), x1: w.y1.clone(), rcont }
}

fn initial_step<F: VectorField + ?Sized>(
    f: &F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    cfg: &IntegratorConfig,
    span: f64,
) -> f64 {
    if cfg.h_init > 0.0 {
        return cfg.h_init.min(span).min(cfg.h_max);
    }
    let sc = |v: f64| cfg.abs_tol + cfg.rel_tol * v.abs();
    let n = y0.len() as f64;
    let d0 = (y0.iter().map(|v| (v / sc(*v)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().zip(y0).map(|(d, v)| (d / sc(*v)).powi(2)).sum::<f64>() / n).sqrt();
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span).min(cfg.h_max);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, d)| y + h0 * d).collect();
    let mut f1 = vec![0.0; y0.len()];
    f.rhs(t0 + h0, &y1, &mut f1);
    let d2 = (f1.iter().zip(f0).zip(y0).map(|((a, b), v)| ((a - b) / sc(*v)).powi(2)).sum::<f64>() / n).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    (100.0 * h0).min(h1).min(span).min(cfg.h_max)
}

/// What a step observer wants the driver to do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Adaptive integration from `t0` towards `t1`, handing each accepted step
/// to `observer`. Returns the time and state where integration ended.
pub fn drive<F, O>(
    f: &F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    mut observer: O,
) -> Result<(f64, Vec<f64>)>
where
    F: VectorField + ?Sized,
    O: FnMut(&Step) -> Control,
{
    cfg.validate()?;
    if x0.len() != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: x0.len() });
    }
    if !(t1 > t0) {
        return Err(Error::invalid(format!("integration requires t1 > t0 (t0={t0}, t1={t1})")));
    }
    let n = x0.len();
    let mut w = Work::new(n);
    let mut t = t0;
    let mut y = x0.to_vec();
    f.rhs(t, &y, &mut w.k[0]);
    let mut h = initial_step(f, t0, &y, &w.k[0].clone(), cfg, t1 - t0);
    let mut steps = 0usize;
    let mut last_rejected = false;
    loop {
        if steps >= cfg.max_steps {
            return Err(Error::IntegrationFailure { t, reason: "maximum step count exceeded".into() });
        }
        let remaining = t1 - t;
        let final_step = h >= remaining * (1.0 - 1e-12);
        if final_step {
            h = remaining;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::IntegrationFailure { t, reason: "step size underflow".into() });
        }
        dp_stages(f, t, &y, h, &mut w);
        steps += 1;
        let mut sum = 0.0;
        for i in 0..n {
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(w.y1[i].abs());
            sum += (w.err[i] / sc).powi(2);
        }
        let err = (sum / n as f64).sqrt();
        if !err.is_finite() {
            h *= 0.1;
            last_rejected = true;
            continue;
        }
        if err <= 1.0 {
            let step = make_step(t, &y, h, &w);
            t = if final_step { t1 } else { t + h };
            y.copy_from_slice(&w.y1);
            let (first, rest) = w.k.split_at_mut(1);
            first[0].copy_from_slice(&rest[5]);
            let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, 10.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            last_rejected = false;
            h = (h * fac).min(cfg.h_max);
            if observer(&step) == Control::Stop || final_step {
                return Ok((step.t1, y));
            }
        } else {
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h *= fac;
            last_rejected = true;
        }
    }
}

fn sample_count(t0: f64, t1: f64, dt: f64) -> usize {
    ((t1 - t0) / dt * (1.0 + 1e-12)).floor() as usize + 1
}

/// Integrates and resamples on `t0, t0 + dt, ...` up to `t1` via dense output.
pub fn integrate<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    sample_dt: f64,
) -> Result<Trajectory> {
    if !(sample_dt > 0.0) {
        return Err(Error::invalid("sample_dt must be positive"));
    }
    let count = sample_count(t0, t1, sample_dt);
    let mut times = Vec::with_capacity(count);
    let mut states = Vec::with_capacity(count);
    times.push(t0);
    states.push(x0.to_vec());
    let mut next = 1usize;
    drive(f, x0, t0, t1, cfg, |step| {
        while next < count {
            let ts = (t0 + next as f64 * sample_dt).min(t1);
            if ts > step.t1 {
                break;
            }
            times.push(ts);
            states.push(step.at(ts));
            next += 1;
        }
        Control::Continue
    })?;
    Trajectory::new(f.name(), times, states)
}

/// Integrates from `t0` and samples at the given increasing `times`, all `>= t0`.
pub fn integrate_at<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    t0: f64,
    times: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.first().is_some_and(|&t| !(t >= t0)) {
        return Err(Error::invalid("sample times must be increasing and not before t0"));
    }
    let mut states = Vec::with_capacity(times.len());
    let mut next = 0usize;
    if times.first() == Some(&t0) {
        states.push(x0.to_vec());
        next = 1;
    }
    if let Some(&t1) = times.last().filter(|&&t| t > t0) {
        drive(f, x0, t0, t1, cfg, |step| {
            while next < times.len() && times[next] <= step.t1 {
                states.push(step.at(times[next]));
                next += 1;
            }
            Control::Continue
        })?;
    }
    Trajectory::new(f.name(), times.to_vec(), states)
}

/// State at `t1` only.
pub fn flow_to<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>> {
    if t1 == t0 {
        return Ok(x0.to_vec());
    }
    drive(f, x0, t0, t1, cfg, |_| Control::Continue).map(|(_, y)| y)
}

/// Classical fixed-step Dormand–Prince (fifth-order solution propagated).
pub fn integrate_fixed<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    n_steps: usize,
) -> Result<Vec<f64>> {
    if n_steps == 0 || !(t1 > t0) {
        return Err(Error::invalid("fixed-step integration needs n_steps > 0 and t1 > t0"));
    }
    let h = (t1 - t0) / n_steps as f64;
    let mut w = Work::new(x0.len());
    let mut y = x0.to_vec();
    let mut t = t0;
    for _ in 0..n_steps {
        f.rhs(t, &y, &mut w.k[0]);
        dp_stages(f, t, &y, h, &mut w);
        y.copy_from_slice(&w.y1);
        t += h;
    }
    Ok(y)
}

/// State augmented with the fundamental matrix, stored column-major.
struct Variational<'a, F: VectorField + ?Sized> {
    inner: &'a F,
}

impl<F: VectorField + ?Sized> VectorField for Variational<'_, F> {
    fn dim(&self) -> usize {
        let n = self.inner.dim();
        n + n * n
    }

    fn name(&self) -> &str {
        self.inner.name()
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        let n = self.inner.dim();
        self.inner.rhs(t, &x[..n], &mut dx[..n]);
        let j = self.inner.jacobian(t, &x[..n]).expect("variational integration requires an analytic Jacobian");
        for col in 0..n {
            let m = &x[n + col * n..n + (col + 1) * n];
            for row in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += j[(row, k)] * m[k];
                }
                dx[n + col * n + row] = acc;
            }
        }
    }
}

/// Integrates the state together with `dM/dt = J(x) M`, `M(t0) = I`.
///
/// The returned trajectory holds the state part only, sampled at the step
/// points of the augmented integration.
pub fn integrate_variational<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<(Trajectory, DMatrix<f64>)> {
    let n = f.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    if f.jacobian(t0, x0).is_none() {
        return Err(Error::NoJacobian(f.name().to_string()));
    }
    if t1 == t0 {
        let traj = Trajectory::new(f.name(), vec![t0], vec![x0.to_vec()])?;
        return Ok((traj, DMatrix::identity(n, n)));
    }
    let mut z0 = x0.to_vec();
    let id = DMatrix::<f64>::identity(n, n);
    z0.extend(id.iter());
    let aug = Variational { inner: f };
    let mut times = vec![t0];
    let mut states = vec![x0.to_vec()];
    let (_, z) = drive(&aug, &z0, t0, t1, cfg, |step| {
        times.push(step.t1);
        states.push(step.x1[..n].to_vec());
        Control::Continue
    })?;
    let m = DMatrix::from_column_slice(n, n, &z[n..]);
    Ok((Trajectory::new(f.name(), times, states)?, m))
}

/// A located section crossing.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub t: f64,
    pub x: Vec<f64>,
}

fn locate(step: &Step, section: &Section) -> Crossing {
    let g = |t: f64| step.at(t)[section.index] - section.value;
    let (mut a, mut b) = (step.t0, step.t1);
    let (mut ga, mut gb) = (step.x0[section.index] - section.value, step.x1[section.index] - section.value);
    // Illinois false position on the interpolant.
    let mut side = 0i8;
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
        let c = (a * gb - b * ga) / (gb - ga);
        let c = if c.is_finite() && c > a && c < b { c } else { 0.5 * (a + b) };
        let gc = g(c);
        if gc == 0.0 {
            a = c;
            b = c;
            break;
        }
        if (gc > 0.0) == (gb > 0.0) {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        }
        if gc.abs() < 1e-14 {
            a = c;
            b = c;
            break;
        }
    }
    let t = if ga.abs() < gb.abs() { a } else { b };
    Crossing { t, x: step.at(t) }
}

/// All crossings of `section` in `(t_skip, t1]` for the trajectory from `x0`.
pub fn find_crossings<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    t_skip: f64,
    section: &Section,
    max_count: usize,
    cfg: &IntegratorConfig,
) -> Result<Vec<Crossing>> {
    if max_count == 0 {
        return Ok(Vec::new());
    }
    let mut count = 0;
    find_crossings_until(f, x0, t0, t1, t_skip, section, cfg, |_| {
        count += 1;
        count >= max_count
    })
}

/// Like [`find_crossings`], but stops as soon as `stop` returns true for a
/// located crossing (that crossing is included).
#[allow(clippy::too_many_arguments)]
pub fn find_crossings_until<F, S>(
    f: &F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    t_skip: f64,
    section: &Section,
    cfg: &IntegratorConfig,
    mut stop: S,
) -> Result<Vec<Crossing>>
where
    F: VectorField + ?Sized,
    S: FnMut(&Crossing) -> bool,
{
    if section.index >= f.dim() {
        return Err(Error::invalid(format!("section index {} out of range", section.index)));
    }
    let mut found = Vec::new();
    drive(f, x0, t0, t1, cfg, |step| {
        let g0 = step.x0[section.index] - section.value;
        let g1 = step.x1[section.index] - section.value;
        if step.t1 > t_skip && section.crossed(g0, g1) {
            let c = locate(step, section);
            if c.t > t_skip {
                let done = stop(&c);
                found.push(c);
                if done {
                    return Control::Stop;
                }
            }
        }
        Control::Continue
    })?;
    Ok(found)
}

/// First crossing of `section` after `t_skip`.
pub fn find_crossing<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    t0: f64,
    t_max: f64,
    t_skip: f64,
    section: &Section,
    cfg: &IntegratorConfig,
) -> Result<Crossing> {
    find_crossings(f, x0, t0, t_max, t_skip, section, 1, cfg)?.into_iter().next().ok_or(Error::NoEvent { t_end: t_max })
}
