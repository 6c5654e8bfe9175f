//! Fixed-topology feedforward network with tansig hidden units and a linear
//! output layer, plus exact parameter Jacobians for least-squares training.
//!
//! Parameters flatten layer by layer; within a layer the weight matrix comes
//! first (row-major, `out x in`), followed by the bias vector.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden layer widths used throughout.
pub const HIDDEN: [usize; 3] = [20, 20, 20];

/// `2 / (1 + exp(-2x)) - 1`, i.e. the hyperbolic tangent.
#[inline]
pub fn tansig(x: f64) -> f64 {
    2.0 / (1.0 + (-2.0 * x).exp()) - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

/// On-disk form: shape metadata plus the flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpFile {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl MlpParams {
    /// Glorot-uniform weights and zero biases for `in -> 20 -> 20 -> 20 -> out`.
    pub fn new(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        Self::with_hidden(in_dim, out_dim, &HIDDEN, seed)
    }

    pub fn with_hidden(in_dim: usize, out_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths: Vec<usize> = std::iter::once(in_dim).chain(hidden.iter().copied()).chain([out_dim]).collect();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-a..=a));
                Layer { weights, biases: DVector::zeros(fan_out) }
            })
            .collect();
        Self { in_dim, out_dim, seed, layers }
    }

    /// Same shape, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.unflatten(&vec![0.0; self.n_params()]).expect("matching length");
        z
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.biases.len()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            for r in 0..l.weights.nrows() {
                out.extend(l.weights.row(r).iter());
            }
            out.extend(l.biases.iter());
        }
        out
    }

    pub fn unflatten(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch { expected: self.n_params(), got: p.len() });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let (rows, cols) = l.weights.shape();
            for r in 0..rows {
                for c in 0..cols {
                    l.weights[(r, c)] = p[k];
                    k += 1;
                }
            }
            for b in l.biases.iter_mut() {
                *b = p[k];
                k += 1;
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::DimensionMismatch { expected: self.in_dim, got: x.len() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked forward pass; `x` and `out` must have the network's sizes.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        let mut a: Vec<f64> = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; l.biases.len()];
            affine(l, &a, &mut z);
            if li < last {
                z.iter_mut().for_each(|v| *v = tansig(*v));
            }
            a = z;
        }
        out.copy_from_slice(&a);
    }

    /// `out_dim x n_params` Jacobian of the outputs w.r.t. the flattened parameters.
    pub fn param_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let p = self.n_params();
        let mut rows = vec![0.0; self.out_dim * p];
        let mut out = vec![0.0; self.out_dim];
        self.eval_with_jacobian(x, &mut out, &mut rows);
        Ok(DMatrix::from_row_slice(self.out_dim, p, &rows))
    }

    /// Forward pass plus the row-major parameter Jacobian in `jac`
    /// (`out_dim * n_params` entries).
    pub fn eval_with_jacobian(&self, x: &[f64], out: &mut [f64], jac: &mut [f64]) {
        let n_layers = self.layers.len();
        // Activations a[0] = x, a[l+1] = layer l output.
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for (li, l) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; l.biases.len()];
            affine(l, &acts[li], &mut z);
            if li + 1 < n_layers {
                z.iter_mut().for_each(|v| *v = tansig(*v));
            }
            acts.push(z);
        }
        out.copy_from_slice(&acts[n_layers]);

        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.weights.len() + l.biases.len();
                Some(o)
            })
            .collect();
        let p = self.n_params();
        jac.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..self.out_dim {
            let row = &mut jac[k * p..(k + 1) * p];
            let mut delta = vec![0.0; self.out_dim];
            delta[k] = 1.0;
            for li in (0..n_layers).rev() {
                let l = &self.layers[li];
                let input = &acts[li];
                let (rows, cols) = l.weights.shape();
                let off = offsets[li];
                for r in 0..rows {
                    let d = delta[r];
                    if d != 0.0 {
                        let w_row = &mut row[off + r * cols..off + (r + 1) * cols];
                        for (c, w) in w_row.iter_mut().enumerate() {
                            *w = d * input[c];
                        }
                    }
                    row[off + rows * cols + r] = d;
                }
                if li > 0 {
                    let mut next = vec![0.0; cols];
                    for r in 0..rows {
                        let d = delta[r];
                        if d != 0.0 {
                            for (c, n) in next.iter_mut().enumerate() {
                                *n += l.weights[(r, c)] * d;
                            }
                        }
                    }
                    for (n, a) in next.iter_mut().zip(input) {
                        *n *= 1.0 - a * a;
                    }
                    delta = next;
                }
            }
        }
    }

    pub fn to_file(&self) -> MlpFile {
        MlpFile {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            hidden: self.hidden(),
            seed: self.seed,
            params: self.flatten(),
        }
    }

    pub fn from_file(f: &MlpFile) -> Result<Self> {
        let mut net = Self::with_hidden(f.in_dim, f.out_dim, &f.hidden, f.seed);
        net.unflatten(&f.params)?;
        if !net.is_finite() {
            return Err(Error::Parse("model file contains non-finite parameters".into()));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(s)?)
    }
}

fn affine(l: &Layer, input: &[f64], out: &mut [f64]) {
    let (rows, cols) = l.weights.shape();
    for r in 0..rows {
        let mut acc = l.biases[r];
        for c in 0..cols {
            acc += l.weights[(r, c)] * input[c];
        }
        out[r] = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert_eq, proptest};

    /// Straight-line evaluator written independently of `forward_into`.
    fn naive_forward(net: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut v = DVector::from_column_slice(x);
        for (i, l) in net.layers.iter().enumerate() {
            v = &l.weights * v + &l.biases;
            if i + 1 < net.layers.len() {
                v = v.map(f64::tanh);
            }
        }
        v.iter().copied().collect()
    }

    #[test]
    fn tansig_values() {
        assert_eq!(tansig(0.0), 0.0);
        assert!((tansig(1.0) - 0.761_594_155_955_764_9).abs() < 1e-15);
        for i in -2000..=2000 {
            let x = i as f64 * 0.01;
            assert!((tansig(x) - x.tanh()).abs() < 1e-12);
            assert!((tansig(-x) + tansig(x)).abs() < 1e-15);
            assert!(tansig(x).abs() <= 1.0);
        }
    }

    #[test]
    fn shapes() {
        let net = MlpParams::new(3, 2, 0);
        let widths: Vec<(usize, usize)> = net.layers.iter().map(|l| l.weights.shape()).collect();
        assert_eq!(widths, vec![(20, 3), (20, 20), (20, 20), (2, 20)]);
        assert_eq!(net.n_params(), 3 * 20 + 20 + 2 * (400 + 20) + 40 + 2);
        assert_eq!(net.hidden(), vec![20, 20, 20]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpParams::new(4, 3, 1).zeros_like();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn unit_path_net_maps_zero_to_zero() {
        let mut net = MlpParams::new(1, 1, 0).zeros_like();
        for l in &mut net.layers {
            l.weights[(0, 0)] = 1.0;
        }
        assert_eq!(net.forward(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let net = MlpParams::new(2, 1, 0);
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(net.param_jacobian(&[1.0, 2.0, 3.0]).is_err());
    }

    fn randomize_biases(net: &mut MlpParams, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut net.layers {
            l.biases.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
    }

    #[test]
    fn forward_matches_naive_evaluator() {
        for seed in 0..5 {
            let mut net = MlpParams::new(3, 2, seed);
            randomize_biases(&mut net, seed + 100);
            let x = [0.3, -1.2, 0.7];
            let a = net.forward(&x).unwrap();
            let b = naive_forward(&net, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut net = MlpParams::new(3, 2, 11);
        randomize_biases(&mut net, 12);
        let x = [0.4, -0.9, 1.3];
        let j = net.param_jacobian(&x).unwrap();
        let p0 = net.flatten();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..p0.len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut pp = p0.clone();
            pp[i] += h;
            plus.unflatten(&pp).unwrap();
            pp[i] -= 2.0 * h;
            minus.unflatten(&pp).unwrap();
            let fp = plus.forward(&x).unwrap();
            let fm = minus.forward(&x).unwrap();
            for k in 0..2 {
                let fd = (fp[k] - fm[k]) / (2.0 * h);
                let scale = j[(k, i)].abs().max(1e-3);
                worst = worst.max((fd - j[(k, i)]).abs() / scale);
            }
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn zero_input_zero_bias_columns() {
        // All activations vanish, so every weight column is zero and the
        // output-bias block is the identity.
        let net = MlpParams::new(2, 2, 3);
        let j = net.param_jacobian(&[0.0, 0.0]).unwrap();
        let mut off = 0;
        for l in &net.layers {
            for c in off..off + l.weights.len() {
                assert_eq!(j[(0, c)], 0.0);
                assert_eq!(j[(1, c)], 0.0);
            }
            off += l.weights.len() + l.biases.len();
        }
        let p = net.n_params();
        assert_eq!(j[(0, p - 2)], 1.0);
        assert_eq!(j[(0, p - 1)], 0.0);
        assert_eq!(j[(1, p - 2)], 0.0);
        assert_eq!(j[(1, p - 1)], 1.0);
    }

    #[test]
    fn taylor_check() {
        let mut net = MlpParams::new(2, 3, 5);
        randomize_biases(&mut net, 6);
        let x = [0.2, 0.8];
        let j = net.param_jacobian(&x).unwrap();
        let p0 = net.flatten();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dir: Vec<f64> = (0..p0.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f0 = net.forward(&x).unwrap();
        let residual = |eps: f64| {
            let mut moved = net.clone();
            let p: Vec<f64> = p0.iter().zip(&dir).map(|(a, d)| a + eps * d).collect();
            moved.unflatten(&p).unwrap();
            let f = moved.forward(&x).unwrap();
            let lin = &j * DVector::from_column_slice(&dir) * eps;
            (0..3).map(|k| (f[k] - f0[k] - lin[k]).abs()).fold(0.0, f64::max)
        };
        let r1 = residual(1e-3);
        let r2 = residual(5e-4);
        // Second-order remainder: halving the step quarters it.
        assert!((r1 / r2 - 4.0).abs() < 0.5, "{r1} {r2}");
    }

    #[test]
    fn lipschitz_bound_on_samples() {
        let mut net = MlpParams::new(2, 2, 21);
        randomize_biases(&mut net, 22);
        let bound: f64 = net.layers.iter().map(|l| l.weights.clone().svd(false, false).singular_values.max()).product();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let a = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let b = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let fa = net.forward(&a).unwrap();
            let fb = net.forward(&b).unwrap();
            let num = ((fa[0] - fb[0]).powi(2) + (fa[1] - fb[1]).powi(2)).sqrt();
            let den = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            assert!(num <= bound * den * (1.0 + 1e-12));
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut net = MlpParams::new(3, 3, 77);
        randomize_biases(&mut net, 78);
        let back = MlpParams::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        let bits_a: Vec<u64> = net.flatten().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = back.flatten().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    proptest! {
        #[test]
        fn flatten_round_trip(seed in 0u64..1000, vals in proptest::collection::vec(-10.0f64..10.0, 1..50)) {
            let mut net = MlpParams::new(2, 3, seed);
            let mut p = net.flatten();
            for (i, v) in vals.iter().enumerate() {
                let k = (i * 37) % p.len();
                p[k] = *v;
            }
            net.unflatten(&p).unwrap();
            prop_assert_eq!(net.flatten(), p);
        }
    }
}
