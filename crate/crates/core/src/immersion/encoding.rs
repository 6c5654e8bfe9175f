//! Coordinate conventions shared by the experiments.
//!
//! Polar angles are measured from the positive second axis towards the
//! positive first axis, `x1 = r sin(theta)`, `x2 = r cos(theta)`, so that
//! oscillators with `dx1/dt = x2` advance in positive angle.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{MlpFile, MlpParams};

/// Maps an angle to `[0, 2 pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// `(r, theta)` with `theta = atan2(x1, x2)` in `[0, 2 pi)`; the origin maps to `(0, 0)`.
pub fn to_polar(x: [f64; 2]) -> (f64, f64) {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return (0.0, 0.0);
    }
    (r, wrap_angle(x[0].atan2(x[1])))
}

pub fn from_polar(r: f64, theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [r * s, r * c]
}

pub fn to_polar_about(x: [f64; 2], center: [f64; 2]) -> (f64, f64) {
    to_polar([x[0] - center[0], x[1] - center[1]])
}

pub fn from_polar_about(r: f64, theta: f64, center: [f64; 2]) -> [f64; 2] {
    let p = from_polar(r, theta);
    [p[0] + center[0], p[1] + center[1]]
}

/// `(r, sin theta, cos theta)`.
pub fn encode_polar(r: f64, theta: f64) -> [f64; 3] {
    let (s, c) = theta.sin_cos();
    [r, s, c]
}

/// Inverse of [`encode_polar`]; the angle pair is renormalized first.
pub fn decode_polar(enc: &[f64]) -> (f64, f64) {
    (enc[0], wrap_angle(enc[1].atan2(enc[2])))
}

/// Per-column affine standardization `(v - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn identity(n: usize) -> Self {
        Self { shift: vec![0.0; n], scale: vec![1.0; n] }
    }

    /// Column means and standard deviations; constant columns keep unit scale.
    pub fn fit(data: &DMatrix<f64>) -> Self {
        let n = data.nrows().max(1) as f64;
        let mut shift = Vec::with_capacity(data.ncols());
        let mut scale = Vec::with_capacity(data.ncols());
        for col in data.column_iter() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            shift.push(mean);
            scale.push(if sd > 1e-12 { sd } else { 1.0 });
        }
        Self { shift, scale }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.shift).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn invert(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.shift).zip(&self.scale).map(|((x, m), s)| x * s + m).collect()
    }

    pub fn apply_rows(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| (data[(i, j)] - self.shift[j]) / self.scale[j])
    }
}

/// A network together with the standardization of its inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledNet {
    pub net: MlpParams,
    pub input: Scaler,
    pub output: Scaler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScaledNetFile {
    #[serde(flatten)]
    net: MlpFile,
    input: Scaler,
    output: Scaler,
}

impl ScaledNet {
    pub fn in_dim(&self) -> usize {
        self.net.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.net.out_dim
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.net.forward(&self.input.apply(x))?;
        Ok(self.output.invert(&z))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ScaledNetFile { net: self.net.to_file(), input: self.input.clone(), output: self.output.clone() };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ScaledNetFile = serde_json::from_str(s)?;
        let net = MlpParams::from_file(&file.net)?;
        if file.input.dim() != net.in_dim || file.output.dim() != net.out_dim {
            return Err(Error::Parse("scaler dimensions do not match the network".into()));
        }
        Ok(Self { net, input: file.input, output: file.output })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn polar_convention() {
        let (r, t) = to_polar([1.0, 0.0]);
        assert_eq!(r, 1.0);
        assert!((t - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(to_polar([0.0, 0.0]), (0.0, 0.0));
        assert!((to_polar([0.0, -2.0]).1 - PI).abs() < 1e-15);
        assert!((to_polar([-1.0, 0.0]).1 - 1.5 * PI).abs() < 1e-15);
        assert_eq!(to_polar([0.0, 1.0]).1, 0.0);
    }

    #[test]
    fn polar_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let (r, t) = to_polar(x);
            assert!((0.0..TAU).contains(&t));
            let back = from_polar(r, t);
            worst = worst.max((back[0] - x[0]).abs()).max((back[1] - x[1]).abs());
            let (r2, t2) = decode_polar(&encode_polar(r, t));
            assert!((r2 - r).abs() < 1e-15);
            assert!((t2 - t).abs() < 1e-12 || (t2 - t).abs() > TAU - 1e-12);
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn wrap_edges() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_angle(-0.5) - (TAU - 0.5)).abs() < 1e-15);
        assert!((wrap_angle(TAU + 0.25) - 0.25).abs() < 1e-12);
        assert!(wrap_angle(-1e-18) < TAU);
    }

    #[test]
    fn scaler_round_trip() {
        let data = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let s = Scaler::fit(&data);
        assert_eq!(s.shift, vec![2.0, 5.0]);
        assert_eq!(s.scale[1], 1.0);
        let v = [2.5, 7.0];
        let back = s.invert(&s.apply(&v));
        assert!((back[0] - v[0]).abs() < 1e-15 && (back[1] - v[1]).abs() < 1e-15);
    }

    #[test]
    fn scaled_net_json_round_trip() {
        let sn = ScaledNet {
            net: MlpParams::new(2, 1, 4),
            input: Scaler { shift: vec![0.1, -0.2], scale: vec![2.0, 0.5] },
            output: Scaler { shift: vec![3.0], scale: vec![1.5] },
        };
        let back = ScaledNet::from_json(&sn.to_json().unwrap()).unwrap();
        assert_eq!(back, sn);
        assert_eq!(back.eval(&[0.3, 0.4]).unwrap(), sn.eval(&[0.3, 0.4]).unwrap());
    }
}
