//! Adversarial autoencoder on entanglement-spectrum feature vectors.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::ModelId;
use crate::neuralnet::{
    cosine_lr, maxpool_backward, maxpool_forward, upsample_backward, upsample_forward, Activation, Adam, DenseLayer,
    Layer, LrSchedule, NnError, Sequential,
};
use crate::spectra::{FeatureVector, SectorSequence};

/// Discriminator outputs are clamped to `[P_CLAMP, 1 - P_CLAMP]` before the log loss.
pub const P_CLAMP: f64 = 1e-7;
pub const DETECTOR_FORMAT: &str = "esgan-detector";
pub const DETECTOR_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Divergence { epoch: usize, batch: usize, message: String },
    #[error("detector is not trained")]
    Untrained,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Euclidean distance between a sample and its reconstruction.
pub fn rec_loss(x: &[f64], x_hat: &[f64]) -> f64 {
    x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Binary cross-entropy of a clamped discriminator output.
pub fn adv_loss(y: f64, y_hat: f64) -> f64 {
    let p = y_hat.clamp(P_CLAMP, 1.0 - P_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// d adv_loss / d ŷ, zero where the clamp is active.
fn adv_loss_grad(y: f64, y_hat: f64) -> f64 {
    if !(P_CLAMP..=1.0 - P_CLAMP).contains(&y_hat) {
        return 0.0;
    }
    -y / y_hat + (1.0 - y) / (1.0 - y_hat)
}

/// Interval of control values with open or closed ends.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Window {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Window { lo, hi, lo_closed: true, hi_closed: true }
    }

    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lo_closed { v >= self.lo } else { v > self.lo };
        let below = if self.hi_closed { v <= self.hi } else { v < self.hi };
        above && below
    }

    pub fn overlaps(&self, other: &Window) -> bool {
        let (lo, lo_closed) = match self.lo.total_cmp(&other.lo) {
            std::cmp::Ordering::Greater => (self.lo, self.lo_closed),
            std::cmp::Ordering::Less => (other.lo, other.lo_closed),
            std::cmp::Ordering::Equal => (self.lo, self.lo_closed && other.lo_closed),
        };
        let (hi, hi_closed) = match self.hi.total_cmp(&other.hi) {
            std::cmp::Ordering::Less => (self.hi, self.hi_closed),
            std::cmp::Ordering::Greater => (other.hi, other.hi_closed),
            std::cmp::Ordering::Equal => (self.hi, self.hi_closed && other.hi_closed),
        };
        lo < hi || (lo == hi && lo_closed && hi_closed)
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{},{}{}",
            if self.lo_closed { '[' } else { '(' },
            self.lo,
            self.hi,
            if self.hi_closed { ']' } else { ')' }
        )
    }
}

impl FromStr for Window {
    type Err = GanError;

    /// Parses `[a,b]`, `(a,b]`, `[a,b)` or `(a,b)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GanError::Config(format!("cannot parse window {s:?}; expected e.g. [-0.65,0] or (2.5,3]"));
        let s = s.trim();
        let lo_closed = match s.chars().next() {
            Some('[') => true,
            Some('(') => false,
            _ => return Err(bad()),
        };
        let hi_closed = match s.chars().last() {
            Some(']') => true,
            Some(')') => false,
            _ => return Err(bad()),
        };
        let inner = &s[1..s.len() - 1];
        let (a, b) = inner.split_once(',').ok_or_else(bad)?;
        let lo: f64 = a.trim().parse().map_err(|_| bad())?;
        let hi: f64 = b.trim().parse().map_err(|_| bad())?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) || (lo == hi && !(lo_closed && hi_closed)) {
            return Err(GanError::Config(format!("window {s} is empty")));
        }
        Ok(Window { lo, hi, lo_closed, hi_closed })
    }
}

/// Default (training, validation) windows of each model.
pub fn default_windows(model: ModelId) -> (Window, Window) {
    match model {
        ModelId::Xxz => (Window::closed(-0.65, 0.0), Window { lo: -0.8, hi: -0.65, lo_closed: true, hi_closed: false }),
        ModelId::Bh => (Window::closed(0.0, 2.5), Window { lo: 2.5, hi: 3.0, lo_closed: false, hi_closed: true }),
        ModelId::Bh2s => (Window::closed(-0.1, 0.0), Window { lo: -0.15, hi: -0.1, lo_closed: true, hi_closed: false }),
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub train: f64,
    pub val: f64,
}

impl Thresholds {
    pub fn for_model(model: ModelId) -> Self {
        match model {
            ModelId::Xxz => Thresholds { train: 5e-5, val: 1e-4 },
            ModelId::Bh => Thresholds { train: 5e-3, val: 2e-2 },
            ModelId::Bh2s => Thresholds { train: 5e-3, val: 5e-2 },
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_adv: f64,
    pub epsilon_rec: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub epochs_max: usize,
    pub batch_size: usize,
    /// `η_min = eta_min_ratio · η_max` for both optimizers.
    pub eta_min_ratio: f64,
    pub thresholds: Thresholds,
    pub seed: u64,
    /// `false` trains the plain autoencoder on `ε·L_rec` with no discriminator step.
    pub adversarial: bool,
}

impl TrainConfig {
    pub fn for_model(model: ModelId) -> Self {
        TrainConfig {
            lambda_adv: 0.1,
            epsilon_rec: 10.0,
            lr_g: 0.01,
            lr_d: 1e-4,
            epochs_max: 250,
            batch_size: 32,
            eta_min_ratio: 0.01,
            thresholds: Thresholds::for_model(model),
            seed: 0,
            adversarial: true,
        }
    }

    pub fn validate(&self) -> Result<(), GanError> {
        let positive = [
            ("lambda_adv", self.lambda_adv),
            ("epsilon_rec", self.epsilon_rec),
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("threshold.train", self.thresholds.train),
            ("threshold.val", self.thresholds.val),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GanError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.epochs_max == 0 {
            return Err(GanError::Config("epochs_max must be positive".into()));
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(GanError::Config(format!("batch_size must be even and at least 2, got {}", self.batch_size)));
        }
        if !(0.0..=1.0).contains(&self.eta_min_ratio) {
            return Err(GanError::Config("eta_min_ratio must lie in [0, 1]".into()));
        }
        Ok(())
    }
}


#[derive(Clone, Debug)]
struct PoolCache {
    first: Vec<usize>,
    second: Vec<usize>,
}

/// Encoder `N→64 relu, pool 2, 32→32 relu, pool 2, 16→8 relu` and mirror
/// decoder `8→16 tanh, upsample 2, 32→32 tanh (+ skip), upsample 2, 64→N sigmoid`.
/// The skip adds the first pooled encoder activation to the pre-activation
/// of the 32-wide decoder layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Generator {
    pub enc1: DenseLayer,
    pub enc2: DenseLayer,
    pub enc3: DenseLayer,
    pub dec1: DenseLayer,
    pub dec2: DenseLayer,
    pub dec3: DenseLayer,
    #[serde(skip)]
    pools: Option<PoolCache>,
}

impl PartialEq for Generator {
    fn eq(&self, o: &Self) -> bool {
        self.enc1 == o.enc1
            && self.enc2 == o.enc2
            && self.enc3 == o.enc3
            && self.dec1 == o.dec1
            && self.dec2 == o.dec2
            && self.dec3 == o.dec3
    }
}

impl Generator {
    pub fn new(n_feat: usize, rng: &mut ChaCha8Rng) -> Self {
        Generator {
            enc1: DenseLayer::glorot(n_feat, 64, Activation::Relu, rng),
            enc2: DenseLayer::glorot(32, 32, Activation::Relu, rng),
            enc3: DenseLayer::glorot(16, 8, Activation::Relu, rng),
            dec1: DenseLayer::glorot(8, 16, Activation::Tanh, rng),
            dec2: DenseLayer::glorot(32, 32, Activation::Tanh, rng),
            dec3: DenseLayer::glorot(64, n_feat, Activation::Sigmoid, rng),
            pools: None,
        }
    }

    pub fn n_feat(&self) -> usize {
        self.enc1.inputs()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, GanError> {
        let h1 = self.enc1.forward_batch(x, None)?;
        let (p1, _) = maxpool_forward(&h1, 2)?;
        let h2 = self.enc2.forward_batch(&p1, None)?;
        let (p2, _) = maxpool_forward(&h2, 2)?;
        let z = self.enc3.forward_batch(&p2, None)?;
        let d1 = self.dec1.forward_batch(&z, None)?;
        let d2 = self.dec2.forward_batch(&upsample_forward(&d1, 2), Some(&p1))?;
        Ok(self.dec3.forward_batch(&upsample_forward(&d2, 2), None)?)
    }

    fn forward_cached(&mut self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, GanError> {
        let h1 = self.enc1.forward_cached(x, None)?;
        let (p1, i1) = maxpool_forward(&h1, 2)?;
        let h2 = self.enc2.forward_cached(&p1, None)?;
        let (p2, i2) = maxpool_forward(&h2, 2)?;
        let z = self.enc3.forward_cached(&p2, None)?;
        let d1 = self.dec1.forward_cached(&z, None)?;
        let d2 = self.dec2.forward_cached(&upsample_forward(&d1, 2), Some(&p1))?;
        let out = self.dec3.forward_cached(&upsample_forward(&d2, 2), None)?;
        self.pools = Some(PoolCache { first: i1, second: i2 });
        Ok(out)
    }

    /// Parameter gradients in [`Generator::params_mut`] order.
    fn backward(&self, grad_out: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>, GanError> {
        let pools = self.pools.as_ref().ok_or(NnError::State("generator"))?;
        let g6 = self.dec3.backward(grad_out)?;
        let g5 = self.dec2.backward(&upsample_backward(&g6.input, 2))?;
        let g4 = self.dec1.backward(&upsample_backward(&g5.input, 2))?;
        let g3 = self.enc3.backward(&g4.input)?;
        let g2 = self.enc2.backward(&maxpool_backward(&g3.input, &pools.second, 32))?;
        // the skip junction feeds the first pooled activation forward
        let at_pool1 = &g2.input + &g5.pre;
        let g1 = self.enc1.backward(&maxpool_backward(&at_pool1, &pools.first, 64))?;
        let mut out = Vec::with_capacity(12);
        for g in [g1, g2, g3, g4, g5, g6] {
            out.push(g.w);
            out.push(DMatrix::from_column_slice(g.b.len(), 1, g.b.as_slice()));
        }
        Ok(out)
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(12);
        for layer in [&mut self.enc1, &mut self.enc2, &mut self.enc3, &mut self.dec1, &mut self.dec2, &mut self.dec3] {
            out.push(layer.w.as_mut_slice());
            out.push(layer.b.as_mut_slice());
        }
        out
    }

    /// Relu masks and pooling winners of a batch; central finite differences
    /// are only meaningful while this stays fixed.
    pub fn branch_signature(&self, x: &DMatrix<f64>) -> Result<Vec<usize>, GanError> {
        let h1 = self.enc1.forward_batch(x, None)?;
        let (p1, i1) = maxpool_forward(&h1, 2)?;
        let h2 = self.enc2.forward_batch(&p1, None)?;
        let (p2, i2) = maxpool_forward(&h2, 2)?;
        let z = self.enc3.forward_batch(&p2, None)?;
        let mut sig: Vec<usize> = i1;
        sig.extend(i2);
        sig.extend([&h1, &h2, &z].iter().flat_map(|m| m.iter().map(|&v| (v > 0.0) as usize)));
        Ok(sig)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub net: Sequential,
}

impl Discriminator {
    pub fn new(n_feat: usize, rng: &mut ChaCha8Rng) -> Self {
        Discriminator {
            net: Sequential {
                layers: vec![
                    Layer::Dense(DenseLayer::glorot(n_feat, 64, Activation::Relu, rng)),
                    Layer::Dense(DenseLayer::glorot(64, 32, Activation::Relu, rng)),
                    Layer::Dense(DenseLayer::glorot(32, 1, Activation::Sigmoid, rng)),
                ],
            },
        }
    }

    /// Probability that each column is a real sample, before clamping.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, GanError> {
        Ok(self.net.forward(x)?.iter().copied().collect())
    }

    pub fn branch_signature(&self, x: &DMatrix<f64>) -> Result<Vec<usize>, GanError> {
        let mut h = x.clone();
        let mut sig = Vec::new();
        for layer in &self.net.layers {
            if let Layer::Dense(d) = layer {
                h = d.forward_batch(&h, None)?;
                if d.activation == Activation::Relu {
                    sig.extend(h.iter().map(|&v| (v > 0.0) as usize));
                }
            }
        }
        Ok(sig)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanModel {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub adam_g: Adam,
    pub adam_d: Adam,
    pub seed: u64,
    pub trained: bool,
}

/// Loss value with gradients for both networks.
#[derive(Clone, Debug)]
pub struct LossGrads {
    pub loss: f64,
    pub generator: Vec<DMatrix<f64>>,
    pub discriminator: Vec<DMatrix<f64>>,
}

fn columns(xs: &[&[f64]]) -> DMatrix<f64> {
    let n = xs.first().map_or(0, |x| x.len());
    DMatrix::from_fn(n, xs.len(), |i, j| xs[j][i])
}

fn slices_of(grads: &[DMatrix<f64>]) -> Vec<&[f64]> {
    grads.iter().map(|g| g.as_slice()).collect()
}

impl GanModel {
    pub fn new(n_feat: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = Generator::new(n_feat, &mut rng);
        let discriminator = Discriminator::new(n_feat, &mut rng);
        GanModel { generator, discriminator, adam_g: Adam::default(), adam_d: Adam::default(), seed, trained: false }
    }

    pub fn n_feat(&self) -> usize {
        self.generator.n_feat()
    }

    fn check(&self, x: &[f64]) -> Result<(), GanError> {
        if x.len() != self.n_feat() {
            return Err(GanError::Shape(format!("model takes {} features, got {}", self.n_feat(), x.len())));
        }
        Ok(())
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>, GanError> {
        self.check(x)?;
        Ok(self.generator.forward(&DMatrix::from_column_slice(x.len(), 1, x))?.as_slice().to_vec())
    }

    pub fn rec_loss_of(&self, x: &[f64]) -> Result<f64, GanError> {
        Ok(rec_loss(x, &self.reconstruct(x)?))
    }

    /// Generator objective `mean_i [λ·adv_loss(1, D(x̂_i)) + ε·rec_loss(x_i, x̂_i)]`.
    pub fn total_loss(&self, x: &DMatrix<f64>, lambda: f64, epsilon: f64) -> Result<f64, GanError> {
        let x_hat = self.generator.forward(x)?;
        let y = self.discriminator.forward(&x_hat)?;
        let n = x.ncols() as f64;
        let mut loss = 0.0;
        for j in 0..x.ncols() {
            let rec = rec_loss(x.column(j).as_slice(), x_hat.column(j).as_slice());
            loss += lambda * adv_loss(1.0, y[j]) + epsilon * rec;
        }
        Ok(loss / n)
    }

    /// [`GanModel::total_loss`] with analytic gradients for the generator and
    /// discriminator parameters.
    pub fn total_loss_grads(&mut self, x: &DMatrix<f64>, lambda: f64, epsilon: f64) -> Result<LossGrads, GanError> {
        let n = x.ncols() as f64;
        let x_hat = self.generator.forward_cached(x)?;
        let mut grad_x_hat = DMatrix::zeros(x_hat.nrows(), x_hat.ncols());
        let mut loss = 0.0;
        let mut discriminator = Vec::new();
        if lambda != 0.0 {
            let y = self.discriminator.net.forward_cached(&x_hat)?;
            let grad_y = DMatrix::from_fn(1, x.ncols(), |_, j| lambda * adv_loss_grad(1.0, y[j]) / n);
            loss += (0..x.ncols()).map(|j| lambda * adv_loss(1.0, y[j])).sum::<f64>();
            let (gd, gin) = self.discriminator.net.backward(&grad_y)?;
            discriminator = gd;
            grad_x_hat += gin;
        }
        for j in 0..x.ncols() {
            let diff = x_hat.column(j) - x.column(j);
            let norm = diff.norm();
            loss += epsilon * norm;
            if norm > 0.0 {
                let mut col = grad_x_hat.column_mut(j);
                col.axpy(epsilon / (n * norm), &diff, 1.0);
            }
        }
        let generator = self.generator.backward(&grad_x_hat)?;
        Ok(LossGrads { loss: loss / n, generator, discriminator })
    }

    /// Mean binary cross-entropy with targets 1 on `real` and 0 on `fake`.
    pub fn discriminator_loss(&self, real: &DMatrix<f64>, fake: &DMatrix<f64>) -> Result<f64, GanError> {
        let yr = self.discriminator.forward(real)?;
        let yf = self.discriminator.forward(fake)?;
        let total: f64 = yr.iter().map(|&y| adv_loss(1.0, y)).chain(yf.iter().map(|&y| adv_loss(0.0, y))).sum();
        Ok(total / (yr.len() + yf.len()) as f64)
    }

    fn discriminator_grads(&mut self, real: &DMatrix<f64>, fake: &DMatrix<f64>) -> Result<(f64, Vec<DMatrix<f64>>), GanError> {
        let mut both = DMatrix::zeros(real.nrows(), real.ncols() + fake.ncols());
        both.columns_mut(0, real.ncols()).copy_from(real);
        both.columns_mut(real.ncols(), fake.ncols()).copy_from(fake);
        let n = both.ncols() as f64;
        let y = self.discriminator.net.forward_cached(&both)?;
        let target = |j: usize| if j < real.ncols() { 1.0 } else { 0.0 };
        let loss = (0..both.ncols()).map(|j| adv_loss(target(j), y[j])).sum::<f64>() / n;
        let grad = DMatrix::from_fn(1, both.ncols(), |_, j| adv_loss_grad(target(j), y[j]) / n);
        let (g, _) = self.discriminator.net.backward(&grad)?;
        Ok((loss, g))
    }

    /// One discriminator update on `real` against their reconstructions.
    pub fn discriminator_step(&mut self, real: &DMatrix<f64>, lr: f64) -> Result<f64, GanError> {
        let fake = self.generator.forward(real)?;
        let (loss, grads) = self.discriminator_grads(real, &fake)?;
        if !loss.is_finite() {
            return Err(NnError::Divergence(format!("discriminator loss {loss}")).into());
        }
        self.adam_d.step(&mut self.discriminator.net.params_mut(), &slices_of(&grads), lr)?;
        Ok(loss)
    }

    /// One generator update; the discriminator is not modified.
    pub fn generator_step(&mut self, x: &DMatrix<f64>, lambda: f64, epsilon: f64, lr: f64) -> Result<f64, GanError> {
        let lg = self.total_loss_grads(x, lambda, epsilon)?;
        if !lg.loss.is_finite() {
            return Err(NnError::Divergence(format!("generator loss {}", lg.loss)).into());
        }
        self.adam_g.step(&mut self.generator.params_mut(), &slices_of(&lg.generator), lr)?;
        Ok(lg.loss)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedDetector {
    pub format: String,
    pub version: u32,
    pub model: GanModel,
    pub model_id: ModelId,
    pub len: usize,
    pub mean_train_loss: f64,
    pub sequence: SectorSequence,
    pub train_window: Window,
    pub val_window: Window,
    pub config: TrainConfig,
    pub converged: bool,
    pub epochs_run: usize,
}

fn mean_rec(model: &GanModel, data: &[&FeatureVector]) -> Result<f64, GanError> {
    let mut total = 0.0;
    for x in data {
        total += model.rec_loss_of(&x.values)?;
    }
    Ok(total / data.len() as f64)
}

/// Trains a detector on the samples inside `train_window`, monitoring the
/// samples inside `val_window`. Stops early once both mean reconstruction
/// losses are under their thresholds.
pub fn train(
    data: &[FeatureVector],
    sequence: &SectorSequence,
    train_window: Window,
    val_window: Window,
    cfg: &TrainConfig,
) -> Result<(TrainedDetector, Vec<EpochLog>), GanError> {
    cfg.validate()?;
    if train_window.overlaps(&val_window) {
        return Err(GanError::Config(format!("training window {train_window} overlaps validation window {val_window}")));
    }
    let n_feat = sequence.len();
    if let Some(bad) = data.iter().find(|x| x.values.len() != n_feat) {
        return Err(GanError::Shape(format!("sample at {} has {} features, expected {n_feat}", bad.control_value, bad.values.len())));
    }
    let train_set: Vec<&FeatureVector> = data.iter().filter(|x| train_window.contains(x.control_value)).collect();
    let val_set: Vec<&FeatureVector> = data.iter().filter(|x| val_window.contains(x.control_value)).collect();
    if train_set.is_empty() {
        return Err(GanError::Config(format!("no samples in training window {train_window}")));
    }
    if val_set.is_empty() {
        return Err(GanError::Config(format!("no samples in validation window {val_window}")));
    }
    let first = train_set[0];
    let mut model = GanModel::new(n_feat, cfg.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let sched_g = LrSchedule { eta_max: cfg.lr_g, eta_min: cfg.eta_min_ratio * cfg.lr_g, epochs: cfg.epochs_max };
    let sched_d = LrSchedule { eta_max: cfg.lr_d, eta_min: cfg.eta_min_ratio * cfg.lr_d, epochs: cfg.epochs_max };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut converged = false;
    let mut train_loss = f64::NAN;
    for epoch in 0..cfg.epochs_max {
        let lr_g = cosine_lr(&sched_g, epoch);
        let lr_d = cosine_lr(&sched_d, epoch);
        order.shuffle(&mut shuffle_rng);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |e: GanError| match e {
                GanError::Nn(NnError::Divergence(message)) => GanError::Divergence { epoch, batch, message },
                other => other,
            };
            let half = chunk.len() / 2;
            let (d_part, g_part) = chunk.split_at(half);
            if cfg.adversarial && !d_part.is_empty() {
                let real = columns(&d_part.iter().map(|&i| train_set[i].values.as_slice()).collect::<Vec<_>>());
                model.discriminator_step(&real, lr_d).map_err(diverged)?;
            }
            let x = columns(&g_part.iter().map(|&i| train_set[i].values.as_slice()).collect::<Vec<_>>());
            let lambda = if cfg.adversarial { cfg.lambda_adv } else { 0.0 };
            model.generator_step(&x, lambda, cfg.epsilon_rec, lr_g).map_err(diverged)?;
        }
        train_loss = mean_rec(&model, &train_set)?;
        let val_loss = mean_rec(&model, &val_set)?;
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(GanError::Divergence { epoch, batch: 0, message: format!("mean losses {train_loss}, {val_loss}") });
        }
        log.push(EpochLog { epoch, train_loss, val_loss, lr_g, lr_d });
        if train_loss <= cfg.thresholds.train && val_loss <= cfg.thresholds.val {
            converged = true;
            break;
        }
    }
    model.trained = true;
    let detector = TrainedDetector {
        format: DETECTOR_FORMAT.into(),
        version: DETECTOR_VERSION,
        model,
        model_id: first.model,
        len: first.len,
        mean_train_loss: train_loss,
        sequence: sequence.clone(),
        train_window,
        val_window,
        config: *cfg,
        converged,
        epochs_run: log.len(),
    };
    Ok((detector, log))
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub control_value: f64,
    pub score: f64,
    pub score_percent: f64,
    pub kl: Option<f64>,
}

impl TrainedDetector {
    pub fn n_feat(&self) -> usize {
        self.sequence.len()
    }

    /// Reconstruction loss minus the mean training loss.
    pub fn anomaly_score(&self, x: &FeatureVector) -> Result<f64, GanError> {
        if !self.model.trained {
            return Err(GanError::Untrained);
        }
        Ok(self.model.rec_loss_of(&x.values)? - self.mean_train_loss)
    }

    /// Scores for every sample, sorted by control value.
    pub fn scan(&self, data: &[FeatureVector]) -> Result<Vec<ScoreRow>, GanError> {
        let mut rows = data
            .par_iter()
            .map(|x| {
                let score = self.anomaly_score(x)?;
                let norm = x.norm();
                let score_percent = if norm > 0.0 { 100.0 * score / norm } else { 0.0 };
                Ok(ScoreRow { control_value: x.control_value, score, score_percent, kl: None })
            })
            .collect::<Result<Vec<_>, GanError>>()?;
        rows.sort_by(|a, b| a.control_value.total_cmp(&b.control_value));
        Ok(rows)
    }

    /// [`TrainedDetector::scan`] on data from another system size; the
    /// feature vectors must have been built with the same `N_feat`.
    pub fn cross_size_scan(&self, data: &[FeatureVector]) -> Result<Vec<ScoreRow>, GanError> {
        if let Some(bad) = data.iter().find(|x| x.values.len() != self.n_feat()) {
            return Err(GanError::Shape(format!(
                "detector uses N_feat = {}, data at L = {} has {}",
                self.n_feat(),
                bad.len,
                bad.values.len()
            )));
        }
        self.scan(data)
    }
}
