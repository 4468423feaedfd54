use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn slope(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Orthogonal-init gain.
    pub fn init_gain(self) -> f64 {
        match self {
            Activation::Tanh => 1.0,
            Activation::Relu => std::f64::consts::SQRT_2,
        }
    }
}

/// Fully connected network with a shared hidden activation and a linear output.
///
/// Parameters live in one flat vector; layer `l` stores its weight matrix
/// row-major (`out × in`) followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Layer outputs from a forward pass, input first.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds at least the input")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("layer sizes {sizes:?} need at least two positive entries")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Orthogonal weights scaled by the activation gain (the last layer by
    /// `out_scale`), zero biases.
    pub fn init(sizes: &[usize], activation: Activation, out_scale: f64, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        let layers = sizes.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let gain = if l + 1 == layers { out_scale } else { activation.init_gain() };
            let w = orthogonal(n_out, n_in, rng) * gain;
            for r in 0..n_out {
                for c in 0..n_in {
                    net.params[off + r * n_in + c] = w[(r, c)];
                }
            }
            off += n_out * (n_in + 1);
        }
        Ok(net)
    }

    /// Rebuild from a flat parameter vector.
    pub fn from_flat(sizes: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        check_dim("flat parameters", net.params.len(), params.len())?;
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("sizes validated")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dim("flat parameters", self.params.len(), p.len())?;
        self.params.copy_from_slice(p);
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.clone()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let here = off;
            off += w[1] * (w[0] + 1);
            (here, w[0], w[1])
        })
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.acts.pop().expect("non-empty"))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        check_dim("network input", self.input_dim(), x.len())?;
        let last = self.n_layers() - 1;
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            let h = &acts[l];
            let w = &self.params[off..off + n_out * n_in];
            let b = &self.params[off + n_out * n_in..off + n_out * (n_in + 1)];
            let mut y = Vec::with_capacity(n_out);
            for r in 0..n_out {
                let row = &w[r * n_in..(r + 1) * n_in];
                let z = b[r] + row.iter().zip(h).map(|(a, c)| a * c).sum::<f64>();
                y.push(if l == last { z } else { self.activation.apply(z) });
            }
            acts.push(y);
        }
        Ok(Trace { acts })
    }

    /// Accumulate `∂⟨output, cotangent⟩/∂params` into `grad`; returns the input gradient.
    pub fn backward(&self, trace: &Trace, cotangent: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        check_dim("output cotangent", self.output_dim(), cotangent.len())?;
        check_dim("gradient buffer", self.params.len(), grad.len())?;
        let layers: Vec<_> = self.layers().collect();
        let last = layers.len() - 1;
        let mut delta = cotangent.to_vec();
        for (l, &(off, n_in, n_out)) in layers.iter().enumerate().rev() {
            if l != last {
                for (d, y) in delta.iter_mut().zip(&trace.acts[l + 1]) {
                    *d *= self.activation.slope(*y);
                }
            }
            let h = &trace.acts[l];
            let mut back = vec![0.0; n_in];
            for r in 0..n_out {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                let row = off + r * n_in;
                for c in 0..n_in {
                    grad[row + c] += d * h[c];
                    back[c] += d * self.params[row + c];
                }
                grad[off + n_out * n_in + r] += d;
            }
            delta = back;
        }
        Ok(delta)
    }

    /// Parameter gradient of `⟨net(x), cotangent⟩`.
    pub fn grad(&self, x: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(x)?;
        let mut g = vec![0.0; self.params.len()];
        self.backward(&trace, cotangent, &mut g)?;
        Ok(g)
    }

    /// Forward-mode product: output and its directional derivative along `dparams`.
    pub fn jvp(&self, x: &[f64], dparams: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("network input", self.input_dim(), x.len())?;
        check_dim("parameter tangent", self.params.len(), dparams.len())?;
        let last = self.n_layers() - 1;
        let mut h = x.to_vec();
        let mut dh = vec![0.0; x.len()];
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            let mut y = Vec::with_capacity(n_out);
            let mut dy = Vec::with_capacity(n_out);
            for r in 0..n_out {
                let row = off + r * n_in;
                let bias = off + n_out * n_in + r;
                let mut z = self.params[bias];
                let mut dz = dparams[bias];
                for c in 0..n_in {
                    z += self.params[row + c] * h[c];
                    dz += dparams[row + c] * h[c] + self.params[row + c] * dh[c];
                }
                if l == last {
                    y.push(z);
                    dy.push(dz);
                } else {
                    let a = self.activation.apply(z);
                    dy.push(self.activation.slope(a) * dz);
                    y.push(a);
                }
            }
            h = y;
            dh = dy;
        }
        Ok((h, dh))
    }
}

/// `rows × cols` matrix with orthonormal rows or columns, whichever is shorter.
fn orthogonal(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    let (tall_r, tall_c) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::from_fn(tall_r, tall_c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    // fix column signs so the draw is uniform over orthogonal matrices
    let r = qr.r();
    for j in 0..tall_c {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if rows >= cols {
        q
    } else {
        q.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// Straight-line evaluator written against the documented layout.
    fn reference_eval(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let p = net.params();
        let s = net.sizes();
        let mut h = x.to_vec();
        let mut off = 0;
        for l in 0..s.len() - 1 {
            let w = DMatrix::from_row_slice(s[l + 1], s[l], &p[off..off + s[l] * s[l + 1]]);
            off += s[l] * s[l + 1];
            let b = nalgebra::DVector::from_column_slice(&p[off..off + s[l + 1]]);
            off += s[l + 1];
            let z = w * nalgebra::DVector::from_column_slice(&h) + b;
            h = if l + 2 == s.len() {
                z.as_slice().to_vec()
            } else {
                z.iter().map(|v| v.tanh()).collect()
            };
        }
        h
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 8, 2], Activation::Tanh).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let net = Mlp::from_flat(&[2, 2], Activation::Relu, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[-3.0, 4.5]).unwrap(), vec![-3.0, 4.5]);
    }

    #[test]
    fn matches_reference_evaluator() {
        let mut r = stream(1, "mlp", 0);
        let mut net = Mlp::init(&[2, 32, 32, 1], Activation::Tanh, 1.0, &mut r).unwrap();
        let noise: Vec<f64> = (0..net.num_params()).map(|_| r.sample::<f64, _>(StandardNormal) * 0.1).collect();
        let p: Vec<f64> = net.params().iter().zip(&noise).map(|(a, b)| a + b).collect();
        net.set_params(&p).unwrap();
        for x in [[0.3, -0.7], [2.0, 1.0], [0.0, 0.0]] {
            let a = net.forward(&x).unwrap();
            let b = reference_eval(&net, &x);
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_input() {
        let net = Mlp::zeros(&[3, 2], Activation::Tanh).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn gradient_by_hand() {
        let net = Mlp::from_flat(&[1, 1], Activation::Tanh, vec![0.7, -0.2]).unwrap();
        assert_eq!(net.grad(&[2.5], &[1.0]).unwrap(), vec![2.5, 1.0]);
        assert_eq!(net.grad(&[2.5], &[0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn jvp_matches_gradient_contraction() {
        let mut r = stream(2, "mlp", 0);
        let net = Mlp::init(&[4, 16, 16, 3], Activation::Tanh, 0.5, &mut r).unwrap();
        let x = [0.1, -0.4, 0.9, 0.2];
        let v: Vec<f64> = (0..net.num_params()).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let (_, dy) = net.jvp(&x, &v).unwrap();
        for k in 0..3 {
            let mut cot = [0.0; 3];
            cot[k] = 1.0;
            let g = net.grad(&x, &cot).unwrap();
            let dot: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
            assert!((dot - dy[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn init_is_orthogonal() {
        let mut r = stream(3, "mlp", 0);
        let q = orthogonal(5, 3, &mut r);
        let qtq = q.transpose() * &q;
        assert!((qtq - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        let q = orthogonal(3, 5, &mut r);
        assert!((&q * q.transpose() - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }
}
