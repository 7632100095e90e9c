//! Small dense networks with hand-written backpropagation.
//!
//! Batches are matrices with one sample per column.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward called without a cached forward pass in {0}")]
    State(&'static str),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
struct DenseCache {
    input: DMatrix<f64>,
    pre: DMatrix<f64>,
    out: DMatrix<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub activation: Activation,
    #[serde(skip)]
    cache: Option<DenseCache>,
}

impl PartialEq for DenseLayer {
    fn eq(&self, other: &Self) -> bool {
        self.w == other.w && self.b == other.b && self.activation == other.activation
    }
}

/// Gradients of one dense layer.
#[derive(Clone, Debug)]
pub struct DenseGrad {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Gradient with respect to the pre-activation (for skip junctions).
    pub pre: DMatrix<f64>,
    pub input: DMatrix<f64>,
}

impl DenseLayer {
    /// Glorot-uniform weights in ±√(6/(fan_in+fan_out)), zero bias.
    pub fn glorot<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = DMatrix::from_fn(outputs, inputs, |_, _| rng.random_range(-a..a));
        DenseLayer { w, b: DVector::zeros(outputs), activation, cache: None }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer { w: DMatrix::zeros(outputs, inputs), b: DVector::zeros(outputs), activation, cache: None }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    fn pre_activation(&self, x: &DMatrix<f64>, extra: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>, NnError> {
        if x.nrows() != self.inputs() {
            return Err(NnError::Shape(format!("dense layer takes {} inputs, got {}", self.inputs(), x.nrows())));
        }
        let mut z = &self.w * x;
        for mut col in z.column_iter_mut() {
            col += &self.b;
        }
        if let Some(e) = extra {
            if e.shape() != z.shape() {
                return Err(NnError::Shape(format!("skip input {:?} vs pre-activation {:?}", e.shape(), z.shape())));
            }
            z += e;
        }
        Ok(z)
    }

    /// `h(W x + b)` for a single sample.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>, NnError> {
        let z = self.pre_activation(&DMatrix::from_column_slice(x.len(), 1, x.as_slice()), None)?;
        Ok(DVector::from_iterator(z.nrows(), z.iter().map(|&v| self.activation.apply(v))))
    }

    /// Batch forward pass without caching.
    pub fn forward_batch(&self, x: &DMatrix<f64>, extra: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>, NnError> {
        let z = self.pre_activation(x, extra)?;
        Ok(z.map(|v| self.activation.apply(v)))
    }

    /// Batch forward pass; `extra` is added to the pre-activation.
    pub fn forward_cached(&mut self, x: &DMatrix<f64>, extra: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>, NnError> {
        let pre = self.pre_activation(x, extra)?;
        let out = pre.map(|v| self.activation.apply(v));
        self.cache = Some(DenseCache { input: x.clone(), pre, out: out.clone() });
        Ok(out)
    }

    pub fn backward(&self, grad_out: &DMatrix<f64>) -> Result<DenseGrad, NnError> {
        let c = self.cache.as_ref().ok_or(NnError::State("dense layer"))?;
        if grad_out.shape() != c.out.shape() {
            return Err(NnError::Shape(format!("upstream {:?} vs output {:?}", grad_out.shape(), c.out.shape())));
        }
        let pre = DMatrix::from_fn(c.pre.nrows(), c.pre.ncols(), |i, j| {
            grad_out[(i, j)] * self.activation.derivative(c.pre[(i, j)], c.out[(i, j)])
        });
        let w = &pre * c.input.transpose();
        let b = pre.column_sum();
        let input = self.w.transpose() * &pre;
        Ok(DenseGrad { w, b, pre, input })
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Max over non-overlapping windows of each column; ties go to the first index.
pub fn maxpool_forward(x: &DMatrix<f64>, window: usize) -> Result<(DMatrix<f64>, Vec<usize>), NnError> {
    if window == 0 || !x.nrows().is_multiple_of(window) {
        return Err(NnError::Shape(format!("length {} not divisible by window {window}", x.nrows())));
    }
    let rows = x.nrows() / window;
    let mut out = DMatrix::zeros(rows, x.ncols());
    let mut idx = Vec::with_capacity(rows * x.ncols());
    for j in 0..x.ncols() {
        for r in 0..rows {
            let mut best = r * window;
            for i in r * window + 1..(r + 1) * window {
                if x[(i, j)] > x[(best, j)] {
                    best = i;
                }
            }
            out[(r, j)] = x[(best, j)];
            idx.push(best);
        }
    }
    Ok((out, idx))
}

/// Routes each pooled gradient to its recorded argmax row.
pub fn maxpool_backward(grad: &DMatrix<f64>, indices: &[usize], input_rows: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(input_rows, grad.ncols());
    let rows = grad.nrows();
    for j in 0..grad.ncols() {
        for r in 0..rows {
            out[(indices[j * rows + r], j)] += grad[(r, j)];
        }
    }
    out
}

/// Nearest-neighbour upsampling: each row repeated `factor` times.
pub fn upsample_forward(x: &DMatrix<f64>, factor: usize) -> DMatrix<f64> {
    let f = factor.max(1);
    DMatrix::from_fn(x.nrows() * f, x.ncols(), |i, j| x[(i / f, j)])
}

pub fn upsample_backward(grad: &DMatrix<f64>, factor: usize) -> DMatrix<f64> {
    let f = factor.max(1);
    let mut out = DMatrix::zeros(grad.nrows() / f, grad.ncols());
    for j in 0..grad.ncols() {
        for i in 0..grad.nrows() {
            out[(i / f, j)] += grad[(i, j)];
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layer {
    Dense(DenseLayer),
    MaxPool {
        window: usize,
        #[serde(skip)]
        cache: Option<(Vec<usize>, usize)>,
    },
    Upsample {
        factor: usize,
    },
}

impl Layer {
    pub fn maxpool(window: usize) -> Self {
        Layer::MaxPool { window, cache: None }
    }
}

/// A chain of layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, NnError> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Dense(d) => d.forward_batch(&h, None)?,
                Layer::MaxPool { window, .. } => maxpool_forward(&h, *window)?.0,
                Layer::Upsample { factor } => upsample_forward(&h, *factor),
            };
        }
        Ok(h)
    }

    pub fn forward_cached(&mut self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, NnError> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = match layer {
                Layer::Dense(d) => d.forward_cached(&h, None)?,
                Layer::MaxPool { window, cache } => {
                    let (out, idx) = maxpool_forward(&h, *window)?;
                    *cache = Some((idx, h.nrows()));
                    out
                }
                Layer::Upsample { factor } => upsample_forward(&h, *factor),
            };
        }
        Ok(h)
    }

    /// Parameter gradients in [`Sequential::params_mut`] order, and the
    /// gradient with respect to the input.
    pub fn backward(&self, grad_out: &DMatrix<f64>) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>), NnError> {
        let mut g = grad_out.clone();
        let mut grads = Vec::new();
        for layer in self.layers.iter().rev() {
            g = match layer {
                Layer::Dense(d) => {
                    let dg = d.backward(&g)?;
                    grads.push(DMatrix::from_column_slice(dg.b.len(), 1, dg.b.as_slice()));
                    grads.push(dg.w);
                    dg.input
                }
                Layer::MaxPool { cache, .. } => {
                    let (idx, rows) = cache.as_ref().ok_or(NnError::State("maxpool"))?;
                    maxpool_backward(&g, idx, *rows)
                }
                Layer::Upsample { factor } => upsample_backward(&g, *factor),
            };
        }
        grads.reverse();
        Ok((grads, g))
    }

    /// Weights and biases of every dense layer, in layer order (W then b).
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            if let Layer::Dense(d) = layer {
                out.push(d.w.as_mut_slice());
                out.push(d.b.as_mut_slice());
            }
        }
        out
    }

    pub fn clear_cache(&mut self) {
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => d.clear_cache(),
                Layer::MaxPool { cache, .. } => *cache = None,
                Layer::Upsample { .. } => {}
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl Adam {
    /// One bias-corrected ADAM update. Nothing is modified if a gradient is
    /// non-finite or the shapes disagree.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<(), NnError> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(NnError::Shape("parameter and gradient lists differ".into()));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(NnError::Divergence("non-finite gradient".into()));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(NnError::Shape("optimizer state does not match parameters".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub eta_max: f64,
    pub eta_min: f64,
    pub epochs: usize,
}

/// Cosine annealing from `eta_max` at epoch 0 to `eta_min` at epoch `T`,
/// held at `eta_min` afterwards.
pub fn cosine_lr(s: &LrSchedule, epoch: usize) -> f64 {
    let t = s.epochs.max(1);
    if epoch >= t {
        return s.eta_min;
    }
    s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1.0 + (std::f64::consts::PI * epoch as f64 / t as f64).cos())
}

/// Writes `value` as pretty JSON through a temporary file and rename.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), NnError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| NnError::Format(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text + "\n")?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, NnError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| NnError::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn dense_examples() {
        let mut id = DenseLayer::zeros(2, 2, Activation::Identity);
        id.w.fill_with_identity();
        let x = DVector::from_vec(vec![-1.0, 2.0]);
        assert_eq!(id.forward(&x).unwrap(), x);
        id.activation = Activation::Relu;
        assert_eq!(id.forward(&x).unwrap().as_slice(), &[0.0, 2.0]);
        id.activation = Activation::Tanh;
        let big = DVector::from_vec(vec![40.0, -40.0]);
        let y = id.forward(&big).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-6 && (y[1] + 1.0).abs() < 1e-6);
        assert!(matches!(id.forward(&DVector::zeros(3)), Err(NnError::Shape(_))));
    }

    #[test]
    fn pooling_and_upsampling_examples() {
        let (p, idx) = maxpool_forward(&col(&[0.9, 0.1, 0.3, 0.4]), 2).unwrap();
        assert_eq!(p.as_slice(), &[0.9, 0.4]);
        assert_eq!(idx, vec![0, 3]);
        let (p, idx) = maxpool_forward(&col(&[0.5; 4]), 2).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        assert_eq!(idx, vec![0, 2]);
        let x = col(&[0.3, -1.0, 2.0]);
        assert_eq!(maxpool_forward(&x, 1).unwrap().0, x);
        assert!(matches!(maxpool_forward(&x, 2), Err(NnError::Shape(_))));
        assert_eq!(upsample_forward(&col(&[1.0, 2.0]), 2).as_slice(), &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(upsample_forward(&x, 1), x);
        assert_eq!(upsample_backward(&col(&[1.0, 2.0, 3.0, 4.0]), 2).as_slice(), &[3.0, 7.0]);
        assert_eq!(maxpool_backward(&col(&[5.0, 6.0]), &[0, 3], 4).as_slice(), &[5.0, 0.0, 0.0, 6.0]);
    }

    #[test]
    fn identity_layer_bias_gradient_is_the_residual() {
        let mut layer = DenseLayer::zeros(3, 3, Activation::Identity);
        layer.w.fill_with_identity();
        let x = col(&[0.2, -0.4, 1.0]);
        let target = col(&[0.0, 0.5, 0.5]);
        let out = layer.forward_cached(&x, None).unwrap();
        // L = ½‖x̂ − t‖²
        let g = layer.backward(&(&out - &target)).unwrap();
        assert_eq!(g.b, DVector::from_column_slice((&out - &target).as_slice()));
    }

    #[test]
    fn backward_needs_a_forward_pass() {
        let layer = DenseLayer::zeros(2, 2, Activation::Relu);
        assert!(matches!(layer.backward(&col(&[1.0, 1.0])), Err(NnError::State(_))));
        let net = Sequential { layers: vec![Layer::maxpool(2)] };
        assert!(matches!(net.backward(&col(&[1.0])), Err(NnError::State(_))));
    }

    #[test]
    fn dead_relu_network_has_zero_deep_gradients() {
        let mut net = Sequential {
            layers: vec![
                Layer::Dense(DenseLayer::zeros(4, 3, Activation::Relu)),
                Layer::Dense(DenseLayer::zeros(3, 2, Activation::Relu)),
            ],
        };
        net.forward_cached(&col(&[1.0, -2.0, 0.5, 3.0])).unwrap();
        let (grads, _) = net.backward(&col(&[1.0, -1.0])).unwrap();
        for g in &grads {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    fn loss(net: &Sequential, x: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
        let y = net.forward(x).unwrap();
        0.5 * (&y - t).norm_squared()
    }

    #[test]
    fn small_network_gradients_match_finite_differences() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let acts = [Activation::Tanh, Activation::Sigmoid, Activation::Identity];
            let mut net = Sequential {
                layers: vec![
                    Layer::Dense(DenseLayer::glorot(8, 8, acts[seed as usize % 3], &mut rng)),
                    Layer::maxpool(2),
                    Layer::Dense(DenseLayer::glorot(4, 4, Activation::Tanh, &mut rng)),
                    Layer::Upsample { factor: 2 },
                    Layer::Dense(DenseLayer::glorot(8, 2, Activation::Sigmoid, &mut rng)),
                ],
            };
            for p in net.params_mut() {
                for v in p.iter_mut() {
                    *v += rng.random_range(-0.1..0.1);
                }
            }
            let x = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
            let t = DMatrix::from_fn(2, 3, |_, _| rng.random_range(0.0..1.0));
            let y = net.forward_cached(&x).unwrap();
            let (grads, gx) = net.backward(&(&y - &t)).unwrap();
            let h = 1e-5;
            let n_params = net.params_mut().len();
            for k in 0..n_params {
                for i in 0..grads[k].len() {
                    let mut plus = net.clone();
                    plus.params_mut()[k][i] += h;
                    let mut minus = net.clone();
                    minus.params_mut()[k][i] -= h;
                    let fd = (loss(&plus, &x, &t) - loss(&minus, &x, &t)) / (2.0 * h);
                    let an = grads[k].as_slice()[i];
                    assert!((fd - an).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-6), "seed {seed} param {k}[{i}]: {an} vs {fd}");
                }
            }
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (loss(&net, &xp, &t) - loss(&net, &xm, &t)) / (2.0 * h);
                assert!((fd - gx[i]).abs() <= 1e-4 * gx[i].abs().max(fd.abs()).max(1e-6));
            }
        }
    }

    #[test]
    fn adam_examples() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -7.0, 1e-3];
        let mut adam = Adam::default();
        adam.step(&mut [p.as_mut_slice()], &[g.as_slice()], 0.01).unwrap();
        let first: Vec<f64> = vec![1.0 - p[0], -2.0 - p[1], 0.5 - p[2]];
        for (d, gi) in first.iter().zip(&g) {
            // bias-corrected first step: lr · g / (|g| + ε)
            assert!((d - 0.01 * gi / (gi.abs() + 1e-8)).abs() < 1e-12);
        }
        let before = p.clone();
        adam.step(&mut [p.as_mut_slice()], &[g.as_slice()], 0.01).unwrap();
        for i in 0..3 {
            assert!((before[i] - p[i]).abs() <= first[i].abs() + 1e-9);
        }
        assert_eq!(adam.t, 2);

        let mut q = vec![1.0, 2.0];
        let mut fresh = Adam::default();
        fresh.step(&mut [q.as_mut_slice()], &[&[0.0, 0.0]], 0.1).unwrap();
        assert_eq!(q, vec![1.0, 2.0]);
        assert_eq!(fresh.t, 1);

        let err = fresh.step(&mut [q.as_mut_slice()], &[&[f64::NAN, 0.0]], 0.1);
        assert!(matches!(err, Err(NnError::Divergence(_))));
        assert_eq!(q, vec![1.0, 2.0]);
        assert_eq!(fresh.t, 1);
    }

    /// Scalar ADAM written out independently.
    fn reference_adam(g: &[f64], lr: f64) -> Vec<f64> {
        let (mut m, mut v, mut x) = (0.0, 0.0, 0.0);
        let mut xs = Vec::new();
        for (t, gi) in g.iter().enumerate() {
            m = 0.9 * m + 0.1 * gi;
            v = 0.999 * v + 0.001 * gi * gi;
            let t = (t + 1) as i32;
            x -= lr * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            xs.push(x);
        }
        xs
    }

    #[test]
    fn adam_matches_the_scalar_reference() {
        let g = [0.5, -0.2, 0.1, 3.0, 0.0, -1.0];
        let expected = reference_adam(&g, 0.05);
        let mut p = vec![0.0];
        let mut adam = Adam::default();
        for (gi, e) in g.iter().zip(&expected) {
            adam.step(&mut [p.as_mut_slice()], &[&[*gi]], 0.05).unwrap();
            assert!((p[0] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_schedule_examples() {
        let s = LrSchedule { eta_max: 0.01, eta_min: 1e-4, epochs: 250 };
        assert_eq!(cosine_lr(&s, 0), 0.01);
        assert_eq!(cosine_lr(&s, 250), 1e-4);
        assert_eq!(cosine_lr(&s, 400), 1e-4);
        assert!((cosine_lr(&s, 125) - (0.01 + 1e-4) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Sequential {
            layers: vec![
                Layer::Dense(DenseLayer::glorot(5, 4, Activation::Relu, &mut rng)),
                Layer::maxpool(2),
                Layer::Upsample { factor: 2 },
                Layer::Dense(DenseLayer::glorot(4, 1, Activation::Sigmoid, &mut rng)),
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        write_json(&a, &net).unwrap();
        let back: Sequential = read_json(&a).unwrap();
        assert_eq!(back, net);
        write_json(&b, &back).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn forward_is_deterministic(seed in any::<u64>(), xs in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Sequential {
                layers: vec![
                    Layer::Dense(DenseLayer::glorot(6, 4, Activation::Tanh, &mut rng)),
                    Layer::maxpool(2),
                    Layer::Dense(DenseLayer::glorot(2, 3, Activation::Sigmoid, &mut rng)),
                ],
            };
            let x = col(&xs);
            let a = net.forward(&x).unwrap();
            let b = net.forward(&x).unwrap();
            prop_assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
            prop_assert!(a.iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }
}
