//! Sparse autoencoder `n → 10 → 10 → 10 → n` with logistic units everywhere.
//!
//! The code is the second hidden layer. Training is full-batch gradient
//! descent with momentum on
//!
//! ```text
//! (1/N) Σ_n ½‖x̂_n − x_n‖²  +  β_s Σ_{j ∈ h1,h2} KL(ρ ‖ ρ̂_j)  +  (λ_w/2) Σ W²
//! ```
//!
//! where `ρ̂_j` is the batch-mean activation of hidden unit `j`. The KL term
//! couples samples through `ρ̂`, so gradients are computed for the whole
//! batch at once.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::EncodedMatrix;
use crate::error::{Error, Result};

pub const HIDDEN: usize = 10;
pub const CODE_DIM: usize = HIDDEN;
/// Layers penalized by the sparsity term (the two encoder layers).
const SPARSE_LAYERS: [usize; 2] = [0, 1];

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fully connected layer; `w` is `n_out × n_in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, w: vec![0.0; n_in * n_out], b: vec![0.0; n_out] }
    }

    /// `out[n] = σ(W x[n] + b)` for a batch laid out sample-major.
    fn forward(&self, input: &[f64], batch: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(batch * self.n_out, 0.0);
        for n in 0..batch {
            let x = &input[n * self.n_in..(n + 1) * self.n_in];
            let o = &mut out[n * self.n_out..(n + 1) * self.n_out];
            for (j, oj) in o.iter_mut().enumerate() {
                let row = &self.w[j * self.n_in..(j + 1) * self.n_in];
                let mut z = self.b[j];
                for (w, xi) in row.iter().zip(x) {
                    z += w * xi;
                }
                *oj = sigmoid(z);
            }
        }
    }
}

/// Hyper-parameters for [`SparseAutoencoder::train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub sparsity_target: f64,
    pub sparsity_weight: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            epochs: 500,
            sparsity_target: 0.05,
            sparsity_weight: 0.1,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.sparsity_target > 0.0 && self.sparsity_target < 1.0) {
            return Err(Error::Config(format!("sparsity target {} outside (0, 1)", self.sparsity_target)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AutoencoderFile", into = "AutoencoderFile")]
pub struct SparseAutoencoder {
    layers: Vec<Layer>,
}

/// Gradient with the same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl SparseAutoencoder {
    /// Glorot-uniform weights, zero biases; deterministic per seed.
    pub fn init(n_in: usize, seed: u64) -> Result<Self> {
        if n_in == 0 {
            return Err(Error::Config("autoencoder needs at least one input".into()));
        }
        let dims = Self::dims_for(n_in);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let mut l = Layer::zeros(w[0], w[1]);
                let r = (6.0 / (w[0] + w[1]) as f64).sqrt();
                for v in &mut l.w {
                    *v = rng.random_range(-r..r);
                }
                l
            })
            .collect();
        Ok(Self { layers })
    }

    /// Network with every weight and bias zero.
    pub fn zeros(n_in: usize) -> Self {
        let dims = Self::dims_for(n_in);
        Self { layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() }
    }

    fn dims_for(n_in: usize) -> [usize; 5] {
        [n_in, HIDDEN, HIDDEN, HIDDEN, n_in]
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.len() != 4 {
            return Err(Error::dim(format!("expected 4 layers, got {}", layers.len())));
        }
        let dims = Self::dims_for(layers[0].n_in);
        for (l, w) in layers.iter().zip(dims.windows(2)) {
            if l.n_in != w[0] || l.n_out != w[1] || l.w.len() != w[0] * w[1] || l.b.len() != w[1] {
                return Err(Error::dim(format!("layer shape {}x{} does not fit {:?}", l.n_out, l.n_in, dims)));
            }
            if l.w.iter().chain(&l.b).any(|v| !v.is_finite()) {
                return Err(Error::Config("autoencoder has non-finite parameters".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn layer_dims(&self) -> [usize; 5] {
        Self::dims_for(self.n_in())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_in() {
            return Err(Error::dim(format!("input has {} values, autoencoder expects {}", x.len(), self.n_in())));
        }
        Ok(())
    }

    /// Activations of every layer for a flat sample-major batch.
    fn forward_all(&self, flat: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(5);
        acts.push(flat.to_vec());
        for l in &self.layers {
            let mut out = Vec::new();
            l.forward(acts.last().unwrap(), batch, &mut out);
            acts.push(out);
        }
        acts
    }

    /// Second hidden-layer activations.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h1 = Vec::new();
        let mut h2 = Vec::new();
        self.layers[0].forward(x, 1, &mut h1);
        self.layers[1].forward(&h1, 1, &mut h2);
        Ok(h2)
    }

    /// Full forward pass.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_all(x, 1).pop().unwrap())
    }

    fn flatten(&self, batch: &[Vec<f64>]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::Config("empty training batch".into()));
        }
        let mut flat = Vec::with_capacity(batch.len() * self.n_in());
        for x in batch {
            self.check_input(x)?;
            flat.extend_from_slice(x);
        }
        Ok(flat)
    }

    /// Objective value and its exact gradient for a full batch.
    pub fn loss_and_gradient(&self, batch: &[Vec<f64>], cfg: &TrainConfig) -> Result<(f64, Gradients)> {
        let flat = self.flatten(batch)?;
        self.loss_and_gradient_flat(&flat, batch.len(), cfg)
    }

    fn loss_and_gradient_flat(&self, flat: &[f64], n: usize, cfg: &TrainConfig) -> Result<(f64, Gradients)> {
        let acts = self.forward_all(flat, n);
        let inv_n = 1.0 / n as f64;
        let out = &acts[4];
        let n_in = self.n_in();

        let mut recon = 0.0;
        let mut delta: Vec<f64> = vec![0.0; n * n_in];
        for i in 0..n * n_in {
            let e = out[i] - flat[i];
            recon += 0.5 * e * e;
            delta[i] = e * inv_n * out[i] * (1.0 - out[i]);
        }
        let mut loss = recon * inv_n;

        let rho = cfg.sparsity_target;
        let mut sparse_grad: [Vec<f64>; 2] = [vec![0.0; HIDDEN], vec![0.0; HIDDEN]];
        if cfg.sparsity_weight != 0.0 {
            for (slot, &li) in SPARSE_LAYERS.iter().enumerate() {
                let a = &acts[li + 1];
                for j in 0..HIDDEN {
                    let mut mean = 0.0;
                    for s in 0..n {
                        mean += a[s * HIDDEN + j];
                    }
                    mean *= inv_n;
                    loss += cfg.sparsity_weight * (rho * (rho / mean).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - mean)).ln());
                    sparse_grad[slot][j] = cfg.sparsity_weight * inv_n * (-rho / mean + (1.0 - rho) / (1.0 - mean));
                }
            }
        }
        if cfg.weight_decay != 0.0 {
            let sq: f64 = self.layers.iter().flat_map(|l| l.w.iter()).map(|w| w * w).sum();
            loss += 0.5 * cfg.weight_decay * sq;
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0 });
        }

        let mut grads: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
        for li in (0..4).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let g = &mut grads[li];
            for s in 0..n {
                let d = &delta[s * layer.n_out..(s + 1) * layer.n_out];
                let x = &input[s * layer.n_in..(s + 1) * layer.n_in];
                for (j, &dj) in d.iter().enumerate() {
                    g.b[j] += dj;
                    let row = &mut g.w[j * layer.n_in..(j + 1) * layer.n_in];
                    for (gw, xi) in row.iter_mut().zip(x) {
                        *gw += dj * xi;
                    }
                }
            }
            if cfg.weight_decay != 0.0 {
                for (gw, w) in g.w.iter_mut().zip(&layer.w) {
                    *gw += cfg.weight_decay * w;
                }
            }
            if li == 0 {
                break;
            }
            // Propagate to the previous (hidden) layer.
            let prev = &acts[li];
            let mut next = vec![0.0; n * layer.n_in];
            let sparse = SPARSE_LAYERS.iter().position(|&p| p == li - 1).map(|slot| &sparse_grad[slot]);
            for s in 0..n {
                let d = &delta[s * layer.n_out..(s + 1) * layer.n_out];
                let nd = &mut next[s * layer.n_in..(s + 1) * layer.n_in];
                for (j, &dj) in d.iter().enumerate() {
                    let row = &layer.w[j * layer.n_in..(j + 1) * layer.n_in];
                    for (v, w) in nd.iter_mut().zip(row) {
                        *v += w * dj;
                    }
                }
                let a = &prev[s * layer.n_in..(s + 1) * layer.n_in];
                for k in 0..layer.n_in {
                    let extra = sparse.map_or(0.0, |sg| sg[k]);
                    nd[k] = (nd[k] + extra) * a[k] * (1.0 - a[k]);
                }
            }
            delta = next;
        }
        Ok((loss, Gradients { layers: grads }))
    }

    /// Full-batch gradient descent with momentum. Returns the loss at the
    /// start of every epoch.
    pub fn train(&mut self, data: &[Vec<f64>], cfg: &TrainConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        let flat = self.flatten(data)?;
        let n = data.len();
        let mut velocity: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let (loss, grads) = self
                .loss_and_gradient_flat(&flat, n, cfg)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch },
                    other => other,
                })?;
            history.push(loss);
            for ((layer, vel), g) in self.layers.iter_mut().zip(&mut velocity).zip(&grads.layers) {
                for ((p, v), gv) in layer.w.iter_mut().zip(&mut vel.w).zip(&g.w) {
                    *v = cfg.momentum * *v - cfg.lr * gv;
                    *p += *v;
                }
                for ((p, v), gv) in layer.b.iter_mut().zip(&mut vel.b).zip(&g.b) {
                    *v = cfg.momentum * *v - cfg.lr * gv;
                    *p += *v;
                }
            }
        }
        Ok(history)
    }

    /// Mean over the batch of the per-entry squared reconstruction error.
    pub fn reconstruction_mse(&self, data: &[Vec<f64>]) -> Result<f64> {
        let flat = self.flatten(data)?;
        let out = self.forward_all(&flat, data.len()).pop().unwrap();
        Ok(out.iter().zip(&flat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / flat.len() as f64)
    }
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: EncodedMatrix,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AutoencoderFile {
    layer_dims: Vec<usize>,
    layers: Vec<LayerFile>,
}

impl From<SparseAutoencoder> for AutoencoderFile {
    fn from(ae: SparseAutoencoder) -> Self {
        Self {
            layer_dims: ae.layer_dims().to_vec(),
            layers: ae
                .layers
                .into_iter()
                .map(|l| LayerFile {
                    weights: EncodedMatrix::from_matrix(&nalgebra::DMatrix::from_row_slice(l.n_out, l.n_in, &l.w)),
                    biases: l.b,
                })
                .collect(),
        }
    }
}

impl TryFrom<AutoencoderFile> for SparseAutoencoder {
    type Error = Error;

    fn try_from(f: AutoencoderFile) -> Result<Self> {
        let layers = f
            .layers
            .into_iter()
            .map(|l| {
                let m = l.weights.to_matrix()?;
                let mut w = Vec::with_capacity(m.len());
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        w.push(m[(r, c)]);
                    }
                }
                Ok(Layer { n_in: m.ncols(), n_out: m.nrows(), w, b: l.biases })
            })
            .collect::<Result<Vec<_>>>()?;
        let ae = Self::from_layers(layers)?;
        if ae.layer_dims().as_slice() != f.layer_dims.as_slice() {
            return Err(Error::Format(format!("layer_dims {:?} disagree with weights", f.layer_dims)));
        }
        Ok(ae)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_batch(n_in: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..n_in).map(|_| rng.random::<f64>()).collect()).collect()
    }

    #[test]
    fn init_is_deterministic() {
        let a = SparseAutoencoder::init(55, 3).unwrap();
        assert_eq!(a, SparseAutoencoder::init(55, 3).unwrap());
        assert_ne!(a, SparseAutoencoder::init(55, 4).unwrap());
        assert_eq!(a.layers()[0].n_out, 10);
        assert_eq!(a.layers()[0].n_in, 55);
        assert_eq!(a.layers()[0].w.len(), 10 * 55);
        assert_eq!(a.layer_dims(), [55, 10, 10, 10, 55]);
        let r = (6.0f64 / 65.0).sqrt();
        assert!(a.layers()[0].w.iter().all(|w| w.abs() <= r));
        assert!(a.layers().iter().all(|l| l.b.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn zero_network_codes_are_half() {
        let ae = SparseAutoencoder::zeros(7);
        assert_eq!(ae.encode(&[1.0, -3.0, 2.0, 0.0, 5.0, 1.0, 9.0]).unwrap(), vec![0.5; 10]);
        assert!(matches!(ae.encode(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn encode_matches_direct_matmul() {
        let ae = SparseAutoencoder::init(3, 9).unwrap();
        let x = [0.2, -0.7, 1.3];
        let l0 = &ae.layers()[0];
        let l1 = &ae.layers()[1];
        let h1: Vec<f64> = (0..10)
            .map(|j| sigmoid(l0.b[j] + (0..3).map(|i| l0.w[j * 3 + i] * x[i]).sum::<f64>()))
            .collect();
        let h2: Vec<f64> = (0..10)
            .map(|j| sigmoid(l1.b[j] + (0..10).map(|i| l1.w[j * 10 + i] * h1[i]).sum::<f64>()))
            .collect();
        let code = ae.encode(&x).unwrap();
        for (a, b) in code.iter().zip(&h2) {
            assert!((a - b).abs() < 1e-15);
            assert!(*a > 0.0 && *a < 1.0);
        }
    }

    /// Random encoder, zero output layer: the output is 0.5 everywhere, so
    /// an all-0.5 input is reconstructed perfectly.
    fn perfect_on_half(n_in: usize, seed: u64) -> SparseAutoencoder {
        let mut ae = SparseAutoencoder::init(n_in, seed).unwrap();
        let last = &mut ae.layers_mut()[3];
        last.w.iter_mut().for_each(|w| *w = 0.0);
        ae
    }

    #[test]
    fn decay_gradient_is_exact() {
        let ae = perfect_on_half(4, 1);
        let cfg = TrainConfig { sparsity_weight: 0.0, weight_decay: 0.3, ..Default::default() };
        let (_, g) = ae.loss_and_gradient(&[vec![0.5; 4]], &cfg).unwrap();
        for (gl, l) in g.layers.iter().zip(ae.layers()) {
            for (gw, w) in gl.w.iter().zip(&l.w) {
                assert_eq!(*gw, 0.3 * w);
            }
            assert!(gl.b.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss() {
        let ae = perfect_on_half(5, 2);
        let cfg = TrainConfig { sparsity_weight: 0.0, weight_decay: 0.0, ..Default::default() };
        let (loss, g) = ae.loss_and_gradient(&[vec![0.5; 5]], &cfg).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.layers.iter().all(|l| l.w.iter().chain(&l.b).all(|&v| v == 0.0)));
    }

    fn params_mut(ae: &mut SparseAutoencoder) -> Vec<&mut f64> {
        ae.layers_mut().iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut())).collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ae = SparseAutoencoder::init(5, 11).unwrap();
        let batch = toy_batch(5, 7, 12);
        let cfg = TrainConfig { sparsity_weight: 0.3, weight_decay: 0.01, sparsity_target: 0.2, ..Default::default() };
        let (_, g) = ae.loss_and_gradient(&batch, &cfg).unwrap();
        let analytic: Vec<f64> = g.layers.iter().flat_map(|l| l.w.iter().chain(&l.b).copied()).collect();
        let h = 1e-5;
        let n_params = analytic.len();
        for i in 0..n_params {
            let mut plus = ae.clone();
            *params_mut(&mut plus)[i] += h;
            let mut minus = ae.clone();
            *params_mut(&mut minus)[i] -= h;
            let lp = plus.loss_and_gradient(&batch, &cfg).unwrap().0;
            let lm = minus.loss_and_gradient(&batch, &cfg).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!(rel < 1e-5, "param {i}: fd {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut ae = SparseAutoencoder::init(5, 1).unwrap();
        let before = ae.clone();
        ae.train(&toy_batch(5, 4, 1), &TrainConfig { lr: 0.0, epochs: 5, ..Default::default() }).unwrap();
        assert_eq!(ae, before);
    }

    #[test]
    fn loss_is_batch_order_invariant() {
        let ae = SparseAutoencoder::init(6, 5).unwrap();
        let batch = toy_batch(6, 9, 3);
        let mut rev = batch.clone();
        rev.reverse();
        let cfg = TrainConfig::default();
        let a = ae.loss_and_gradient(&batch, &cfg).unwrap().0;
        let b = ae.loss_and_gradient(&rev, &cfg).unwrap().0;
        assert!((a - b).abs() < 1e-12 * a.abs());
    }

    #[test]
    fn training_is_deterministic_and_converges_on_one_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let v: Vec<f64> = (0..55).map(|_| rng.random::<f64>()).collect();
        let data = vec![v.clone(); 50];
        let cfg = TrainConfig::default();
        let mut a = SparseAutoencoder::init(55, 0).unwrap();
        let hist = a.train(&data, &cfg).unwrap();
        let mut b = SparseAutoencoder::init(55, 0).unwrap();
        b.train(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(hist.len(), 500);
        assert!(hist[499] <= hist[0]);
        let proxy = v.iter().map(|x| (x - 0.5).powi(2)).sum::<f64>() / v.len() as f64;
        let mse = a.reconstruction_mse(&data).unwrap();
        assert!(mse < 0.01 * proxy, "mse {mse} proxy {proxy}");
    }

    #[test]
    fn json_round_trip() {
        let ae = SparseAutoencoder::init(8, 4).unwrap();
        let text = serde_json::to_string(&ae).unwrap();
        let back: SparseAutoencoder = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ae);
    }
}
