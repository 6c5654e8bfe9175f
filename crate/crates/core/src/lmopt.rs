//! Full-batch Levenberg–Marquardt with Marquardt (diagonal) damping.

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::MlpParams;

/// A differentiable model with a flat parameter vector.
pub trait Fit: Clone {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn n_params(&self) -> usize;
    fn flatten(&self) -> Vec<f64>;
    fn unflatten(&mut self, p: &[f64]) -> Result<()>;
    fn eval_into(&self, x: &[f64], out: &mut [f64]);
    /// `jac` is row-major, `out_dim x n_params`.
    fn eval_with_jacobian(&self, x: &[f64], out: &mut [f64], jac: &mut [f64]);
}

impl Fit for MlpParams {
    fn in_dim(&self) -> usize {
        self.in_dim
    }
    fn out_dim(&self) -> usize {
        self.out_dim
    }
    fn n_params(&self) -> usize {
        MlpParams::n_params(self)
    }
    fn flatten(&self) -> Vec<f64> {
        MlpParams::flatten(self)
    }
    fn unflatten(&mut self, p: &[f64]) -> Result<()> {
        MlpParams::unflatten(self, p)
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.forward_into(x, out)
    }
    fn eval_with_jacobian(&self, x: &[f64], out: &mut [f64], jac: &mut [f64]) {
        MlpParams::eval_with_jacobian(self, x, out, jac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub mu_init: f64,
    pub mu_factor: f64,
    pub mu_max: f64,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iters: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { mu_init: 1e-3, mu_factor: 10.0, mu_max: 1e10, grad_tol: 1e-8, step_tol: 1e-10, max_iters: 500 }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_init > 0.0) || !self.mu_init.is_finite() {
            return Err(Error::invalid("mu_init must be positive"));
        }
        if !(self.mu_factor > 1.0) || !self.mu_factor.is_finite() {
            return Err(Error::invalid("mu_factor must exceed 1"));
        }
        if !(self.mu_max >= self.mu_init) {
            return Err(Error::invalid("mu_max must be at least mu_init"));
        }
        Ok(())
    }

    fn mu_min(&self) -> f64 {
        self.mu_init * self.mu_factor.powi(-60)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradSmall,
    StepSmall,
    MuMax,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iter: usize,
    pub loss: f64,
    pub mu: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub iterations: usize,
    /// Mean squared residual: the initial value followed by one entry per accepted step.
    pub loss_history: Vec<f64>,
    pub terminal_reason: Termination,
    /// Every trial step, accepted or not.
    pub log: Vec<LogEntry>,
    pub restarted: bool,
}

impl LmReport {
    pub fn initial_loss(&self) -> f64 {
        self.loss_history[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history holds the initial loss")
    }

    pub fn final_rmse(&self) -> f64 {
        self.final_loss().sqrt()
    }

    pub fn write_log_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iter,loss,mu,accepted")?;
        for e in &self.log {
            writeln!(f, "{},{:?},{:?},{}", e.iter, e.loss, e.mu, e.accepted)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Solves `(JtJ + mu * D) delta = -Jtr` with `D = diag(JtJ)`, zero diagonal
/// entries replaced by one (so the damping term becomes `mu`).
/// Returns `None` if the Cholesky factorization fails.
pub fn solve_damped_normal(jtj: &DMatrix<f64>, jtr: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    solve_scaled(jtj, jtr, mu, &jtj.diagonal())
}

/// Same as [`solve_damped_normal`] with an explicit damping diagonal `d`.
fn solve_scaled(jtj: &DMatrix<f64>, jtr: &DVector<f64>, mu: f64, d: &DVector<f64>) -> Option<DVector<f64>> {
    let mut a = jtj.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += if d[i] == 0.0 { mu } else { mu * d[i] };
    }
    let chol = a.cholesky()?;
    let delta = -chol.solve(jtr);
    delta.iter().all(|v| v.is_finite()).then_some(delta)
}

struct Problem<'a> {
    inputs: Vec<Vec<f64>>,
    targets: &'a DMatrix<f64>,
    out_dim: usize,
    n_params: usize,
}

impl Problem<'_> {
    fn rows(&self) -> usize {
        self.inputs.len() * self.out_dim
    }

    fn loss<M: Fit>(&self, model: &M, r: &mut [f64]) -> f64 {
        let m = self.out_dim;
        let mut out = vec![0.0; m];
        for (i, x) in self.inputs.iter().enumerate() {
            model.eval_into(x, &mut out);
            for k in 0..m {
                r[i * m + k] = out[k] - self.targets[(i, k)];
            }
        }
        mean_square(r)
    }

    fn loss_and_jacobian<M: Fit>(&self, model: &M, r: &mut [f64], jac: &mut [f64]) -> f64 {
        let (m, p) = (self.out_dim, self.n_params);
        let mut out = vec![0.0; m];
        for (i, x) in self.inputs.iter().enumerate() {
            model.eval_with_jacobian(x, &mut out, &mut jac[i * m * p..(i + 1) * m * p]);
            for k in 0..m {
                r[i * m + k] = out[k] - self.targets[(i, k)];
            }
        }
        mean_square(r)
    }

    /// Returns (JtJ, Jtr).
    fn normal_equations(&self, r: &[f64], jac: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let (rows, p) = (self.rows(), self.n_params);
        let mut jtj = vec![0.0; p * p];
        // SAFETY: slices are sized rows*p and p*p; strides describe Jᵀ (p x rows) and J (rows x p).
        unsafe {
            matrixmultiply::dgemm(
                p,
                rows,
                p,
                1.0,
                jac.as_ptr(),
                1,
                p as isize,
                jac.as_ptr(),
                p as isize,
                1,
                0.0,
                jtj.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        let mut jtr = DVector::zeros(p);
        for (row, ri) in jac.chunks_exact(p).zip(r) {
            for (g, j) in jtr.iter_mut().zip(row) {
                *g += j * ri;
            }
        }
        (DMatrix::from_row_slice(p, p, &jtj), jtr)
    }
}

fn mean_square(r: &[f64]) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

/// Minimizes the mean squared residual `model(x_i) - y_i` over all samples
/// (rows of `inputs` / `targets`).
pub fn train<M: Fit>(net: &M, inputs: &DMatrix<f64>, targets: &DMatrix<f64>, cfg: &LmConfig) -> Result<(M, LmReport)> {
    cfg.validate()?;
    if inputs.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch { expected: inputs.nrows(), got: targets.nrows() });
    }
    if inputs.ncols() != net.in_dim() {
        return Err(Error::DimensionMismatch { expected: net.in_dim(), got: inputs.ncols() });
    }
    if targets.ncols() != net.out_dim() {
        return Err(Error::DimensionMismatch { expected: net.out_dim(), got: targets.ncols() });
    }
    let prob = Problem {
        inputs: (0..inputs.nrows()).map(|i| inputs.row(i).iter().copied().collect()).collect(),
        targets,
        out_dim: net.out_dim(),
        n_params: net.n_params(),
    };
    let p = prob.n_params;
    let mut model = net.clone();
    let mut trial = net.clone();
    let mut params = model.flatten();
    let mut r = vec![0.0; prob.rows()];
    let mut r_trial = vec![0.0; prob.rows()];
    let mut jac = vec![0.0; prob.rows() * p];

    let mut loss = prob.loss_and_jacobian(&model, &mut r, &mut jac);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let mut report = LmReport {
        iterations: 0,
        loss_history: vec![loss],
        terminal_reason: Termination::MaxIters,
        log: vec![LogEntry { iter: 0, loss, mu: cfg.mu_init, accepted: true }],
        restarted: false,
    };
    let mut mu = cfg.mu_init;
    // Damping diagonal: running maximum of diag(JtJ), so directions that
    // flatten out (saturated units) keep the damping they started with.
    let mut scale = DVector::<f64>::zeros(p);

    'outer: for it in 1..=cfg.max_iters {
        let (jtj, jtr) = prob.normal_equations(&r, &jac);
        scale.zip_apply(&jtj.diagonal(), |s, d| *s = s.max(d));
        if jtr.amax() < cfg.grad_tol {
            report.terminal_reason = Termination::GradSmall;
            break;
        }
        report.iterations = it;
        loop {
            if let Some(delta) = solve_scaled(&jtj, &jtr, mu, &scale) {
                let cand: Vec<f64> = params.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
                trial.unflatten(&cand)?;
                let trial_loss = prob.loss(&trial, &mut r_trial);
                if !trial_loss.is_finite() {
                    return Err(Error::NonFiniteLoss);
                }
                if trial_loss < loss {
                    let step = delta.norm();
                    let size = DVector::from_column_slice(&params).norm();
                    params = cand;
                    std::mem::swap(&mut model, &mut trial);
                    loss = prob.loss_and_jacobian(&model, &mut r, &mut jac);
                    mu = (mu / cfg.mu_factor).max(cfg.mu_min());
                    report.loss_history.push(loss);
                    report.log.push(LogEntry { iter: it, loss, mu, accepted: true });
                    debug!("lm iter {it}: loss {loss:.3e} mu {mu:.1e}");
                    if step < cfg.step_tol * (size + cfg.step_tol) {
                        report.terminal_reason = Termination::StepSmall;
                        break 'outer;
                    }
                    break;
                }
                report.log.push(LogEntry { iter: it, loss: trial_loss, mu, accepted: false });
            }
            if mu * cfg.mu_factor > cfg.mu_max {
                report.terminal_reason = Termination::MuMax;
                break 'outer;
            }
            mu *= cfg.mu_factor;
        }
    }
    info!("lm finished after {} iterations: loss {:.3e} ({:?})", report.iterations, loss, report.terminal_reason);
    Ok((model, report))
}

/// Trains from `init(seed)`; if the final loss exceeds `threshold`, trains
/// once more from a fresh seed and keeps the better result.
pub fn train_with_restart<M: Fit>(
    init: impl Fn(u64) -> M,
    seed: u64,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    cfg: &LmConfig,
    threshold: Option<f64>,
) -> Result<(M, LmReport)> {
    let (model, report) = train(&init(seed), inputs, targets, cfg)?;
    match threshold {
        Some(t) if report.final_loss() > t => {
            info!("loss {:.3e} above {t:.3e}, restarting", report.final_loss());
            let (m2, mut r2) = train(&init(restart_seed(seed)), inputs, targets, cfg)?;
            r2.restarted = true;
            if r2.final_loss() < report.final_loss() {
                Ok((m2, r2))
            } else {
                let mut report = report;
                report.restarted = true;
                Ok((model, report))
            }
        }
        _ => Ok((model, report)),
    }
}

pub fn restart_seed(seed: u64) -> u64 {
    seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407)
}
