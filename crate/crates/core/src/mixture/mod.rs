//! Gaussian mixture shape prior with per-component dominant subspaces.
//!
//! Each component models a shape as `μ + Ψβ + ε`: a `d`-dimensional
//! Gaussian `β ~ N(0, Λ)` inside the span of the orthonormal basis `Ψ`, plus
//! isotropic noise of variance `σ²` in the orthogonal complement. The
//! covariance is therefore `ΨΛΨᵀ + σ²(I − ΨΨᵀ)` and never has to be formed
//! explicitly, which keeps densities and projections cheap at `3M` in the
//! thousands.

mod fit;
mod kmeans;

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::EncodedMatrix;
use crate::error::{Error, Result};
use crate::shape::{ShapeDataset, ShapeVector};

pub use fit::{fit_mixture, fit_mixture_from_labels, variance_floor, DimPolicy, FitOptions, MixtureFit};
pub use kmeans::kmeans_plus_plus;

const ORTHO_TOL: f64 = 1e-8;

/// One mixture component `{π, μ, Ψ, Λ, σ²}`; `d` is `Ψ.ncols()`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pi: f64,
    mu: DVector<f64>,
    psi: DMatrix<f64>,
    lambda: DVector<f64>,
    sigma2: f64,
}

impl MixtureComponent {
    pub fn new(pi: f64, mu: DVector<f64>, psi: DMatrix<f64>, lambda: DVector<f64>, sigma2: f64) -> Result<Self> {
        let dim = mu.len();
        let d = psi.ncols();
        if psi.nrows() != dim {
            return Err(Error::dim(format!("basis has {} rows, mean has {dim}", psi.nrows())));
        }
        if lambda.len() != d {
            return Err(Error::dim(format!("{} eigenvalues for a {d}-dimensional basis", lambda.len())));
        }
        if d == 0 || d >= dim {
            return Err(Error::Config(format!("intrinsic dimension {d} must lie in [1, {})", dim)));
        }
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(Error::Config(format!("component proportion {pi} outside (0, 1]")));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Config(format!("noise variance {sigma2} must be positive")));
        }
        for j in 0..d {
            let next = if j + 1 < d { lambda[j + 1] } else { sigma2 };
            if !(lambda[j].is_finite() && lambda[j] >= next) {
                return Err(Error::Config(format!(
                    "eigenvalues must be descending and >= sigma2: {:?} / {sigma2}",
                    lambda.as_slice()
                )));
            }
        }
        if mu.iter().chain(psi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("component has non-finite parameters".into()));
        }
        let gram = psi.transpose() * &psi;
        let err = (gram - DMatrix::<f64>::identity(d, d)).amax();
        if err > ORTHO_TOL {
            return Err(Error::Config(format!("basis is not orthonormal (max deviation {err:.2e})")));
        }
        Ok(Self { pi, mu, psi, lambda, sigma2 })
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Intrinsic dimension `d`.
    pub fn d(&self) -> usize {
        self.psi.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean_shape(&self) -> ShapeVector {
        ShapeVector::from_dvector(self.mu.clone())
    }

    pub(crate) fn with_pi(mut self, pi: f64) -> Self {
        self.pi = pi;
        self
    }

    fn check_dim(&self, s: &ShapeVector) -> Result<()> {
        if s.dim() != self.ambient_dim() {
            return Err(Error::dim(format!("shape has {} coords, component expects {}", s.dim(), self.ambient_dim())));
        }
        Ok(())
    }

    /// Returns `(β, ρ²)` for a centered vector.
    fn split(&self, centered: &DVector<f64>) -> (DVector<f64>, f64) {
        let beta = self.psi.tr_mul(centered);
        let rho2 = (centered.norm_squared() - beta.norm_squared()).max(0.0);
        (beta, rho2)
    }

    fn log_density_centered(&self, centered: &DVector<f64>) -> f64 {
        let (beta, rho2) = self.split(centered);
        let dim = self.ambient_dim() as f64;
        let d = self.d() as f64;
        let mut q = rho2 / self.sigma2 + (dim - d) * self.sigma2.ln() + dim * (2.0 * PI).ln();
        for (b, l) in beta.iter().zip(self.lambda.iter()) {
            q += b * b / l + l.ln();
        }
        -0.5 * q
    }

    /// Log-density of `s` under this component (not weighted by `π`).
    pub fn log_density(&self, s: &ShapeVector) -> Result<f64> {
        self.check_dim(s)?;
        Ok(self.log_density_centered(&(s.to_dvector() - &self.mu)))
    }

    /// Same as [`log_density`](Self::log_density) for a raw vector of any
    /// ambient dimension.
    pub fn log_density_vec(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.ambient_dim() {
            return Err(Error::dim(format!("vector has {} coords, component expects {}", x.len(), self.ambient_dim())));
        }
        Ok(self.log_density_centered(&(x - &self.mu)))
    }

    /// In-subspace coordinates `β = Ψᵀ(s − μ)`.
    pub fn project(&self, s: &ShapeVector) -> Result<DVector<f64>> {
        self.check_dim(s)?;
        Ok(self.psi.tr_mul(&(s.to_dvector() - &self.mu)))
    }

    /// `μ + Ψβ`, with each `β_j` optionally limited to `±c₀√λ_j`.
    pub fn reconstruct(&self, beta: &DVector<f64>, clamp: Clamp) -> Result<ShapeVector> {
        if beta.len() != self.d() {
            return Err(Error::dim(format!("{} coefficients for a {}-dimensional subspace", beta.len(), self.d())));
        }
        let mut b = beta.clone();
        if let Clamp::SdMultiple(c0) = clamp {
            for (bj, l) in b.iter_mut().zip(self.lambda.iter()) {
                let lim = c0 * l.sqrt();
                *bj = bj.clamp(-lim, lim);
            }
        }
        Ok(ShapeVector::from_dvector(&self.mu + &self.psi * b))
    }

    /// Closest point of the component subspace, optionally clamped.
    pub fn regularize(&self, s: &ShapeVector, clamp: Clamp) -> Result<ShapeVector> {
        let beta = self.project(s)?;
        self.reconstruct(&beta, clamp)
    }

    /// Draw one shape from this component.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ShapeVector {
        let beta = DVector::from_iterator(
            self.d(),
            self.lambda.iter().map(|l| l.sqrt() * rng.sample::<f64, _>(StandardNormal)),
        );
        let sd = self.sigma2.sqrt();
        let raw = DVector::from_iterator(self.ambient_dim(), (0..self.ambient_dim()).map(|_| sd * rng.sample::<f64, _>(StandardNormal)));
        let noise = &raw - &self.psi * self.psi.tr_mul(&raw);
        ShapeVector::from_dvector(&self.mu + &self.psi * beta + noise)
    }
}

/// Coefficient limiting used when mapping back from the subspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clamp {
    Off,
    /// Limit `|β_j|` to `c₀·√λ_j`.
    SdMultiple(f64),
}

impl Default for Clamp {
    fn default() -> Self {
        Clamp::SdMultiple(3.0)
    }
}

/// Coefficients of a shape with respect to one component subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCoefficients {
    pub component: usize,
    pub beta: DVector<f64>,
}

/// Posterior component probabilities for one shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsibilityVector(pub Vec<f64>);

impl ResponsibilityVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Most probable component; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &r) in self.0.iter().enumerate() {
            if r > self.0[best] {
                best = k;
            }
        }
        best
    }
}

/// `log Σ exp(x_k)` computed stably. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalize log-weights into probabilities using log-sum-exp.
pub fn softmax_log(logw: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logw);
    let mut r: Vec<f64> = logw.iter().map(|l| (l - lse).exp()).collect();
    let s: f64 = r.iter().sum();
    for v in &mut r {
        *v /= s;
    }
    r
}

/// K-component mixture sharing one ambient dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMixture {
    components: Vec<MixtureComponent>,
}

impl ShapeMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let dim = components[0].ambient_dim();
        if dim % 3 != 0 {
            return Err(Error::dim(format!("ambient dimension {dim} is not a multiple of 3")));
        }
        if components.iter().any(|c| c.ambient_dim() != dim) {
            return Err(Error::dim("components disagree on ambient dimension"));
        }
        let total: f64 = components.iter().map(|c| c.pi).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("component proportions sum to {total}")));
        }
        Ok(Self { components })
    }

    /// Build a mixture after rescaling the proportions to sum to one.
    pub fn normalized(components: Vec<MixtureComponent>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.pi).sum();
        let comps = components.into_iter().map(|c| {
            let pi = c.pi / total;
            c.with_pi(pi)
        });
        Self::new(comps.collect())
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &MixtureComponent {
        &self.components[k]
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.components[0].ambient_dim()
    }

    /// Landmark count `M`.
    pub fn m(&self) -> usize {
        self.ambient_dim() / 3
    }

    /// `Σ_k π_k μ_k`.
    pub fn mean_shape(&self) -> ShapeVector {
        let mut acc = DVector::zeros(self.ambient_dim());
        for c in &self.components {
            acc += &c.mu * c.pi;
        }
        ShapeVector::from_dvector(acc)
    }

    /// `log π_k + log p(s | k)` for every component.
    pub fn weighted_log_densities(&self, s: &ShapeVector) -> Result<Vec<f64>> {
        self.components.iter().map(|c| Ok(c.pi.ln() + c.log_density(s)?)).collect()
    }

    pub fn responsibilities(&self, s: &ShapeVector) -> Result<ResponsibilityVector> {
        Ok(ResponsibilityVector(softmax_log(&self.weighted_log_densities(s)?)))
    }

    /// `log Σ_k π_k p(s | k)`.
    pub fn log_density(&self, s: &ShapeVector) -> Result<f64> {
        Ok(log_sum_exp(&self.weighted_log_densities(s)?))
    }

    pub fn project(&self, k: usize, s: &ShapeVector) -> Result<ShapeCoefficients> {
        Ok(ShapeCoefficients { component: k, beta: self.component(k).project(s)? })
    }

    pub fn reconstruct(&self, coeffs: &ShapeCoefficients, clamp: Clamp) -> Result<ShapeVector> {
        self.components
            .get(coeffs.component)
            .ok_or_else(|| Error::dim(format!("no component {}", coeffs.component)))?
            .reconstruct(&coeffs.beta, clamp)
    }

    /// Draw a component from `π`, then a shape from that component.
    pub fn sample_shape<R: Rng + ?Sized>(&self, rng: &mut R) -> ShapeVector {
        self.sample_with_component(rng).1
    }

    pub fn sample_with_component<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, ShapeVector) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.k() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.pi;
            if u < acc {
                k = i;
                break;
            }
        }
        (k, self.components[k].sample(rng))
    }

    /// `Σ_n log Σ_k π_k p(s_n | k)`.
    pub fn dataset_log_likelihood(&self, dataset: &ShapeDataset) -> Result<f64> {
        let mut total = 0.0;
        for s in dataset.shapes() {
            total += self.log_density(s)?;
        }
        Ok(total)
    }

    pub fn to_json(&self) -> String {
        let file = MixtureFile {
            m: self.m(),
            ambient_dim: self.ambient_dim(),
            components: self
                .components
                .iter()
                .map(|c| ComponentFile {
                    pi: c.pi,
                    mu: EncodedMatrix::from_vector(&c.mu),
                    psi: EncodedMatrix::from_matrix(&c.psi),
                    lambda: c.lambda.as_slice().to_vec(),
                    sigma2: c.sigma2,
                    d: c.d(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("mixture serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MixtureFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("bad mixture document: {e}")))?;
        let comps = file
            .components
            .iter()
            .map(|c| {
                let psi = c.psi.to_matrix()?;
                if psi.ncols() != c.d {
                    return Err(Error::Format(format!("d = {} but basis has {} columns", c.d, psi.ncols())));
                }
                MixtureComponent::new(c.pi, c.mu.to_vector()?, psi, DVector::from_vec(c.lambda.clone()), c.sigma2)
            })
            .collect::<Result<Vec<_>>>()?;
        let mix = Self::new(comps)?;
        if mix.ambient_dim() != file.ambient_dim || mix.m() != file.m {
            return Err(Error::Format("mixture header disagrees with component sizes".into()));
        }
        Ok(mix)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct MixtureFile {
    m: usize,
    ambient_dim: usize,
    components: Vec<ComponentFile>,
}

#[derive(Serialize, Deserialize)]
struct ComponentFile {
    pi: f64,
    mu: EncodedMatrix,
    psi: EncodedMatrix,
    lambda: Vec<f64>,
    sigma2: f64,
    d: usize,
}

#[cfg(test)]
mod tests;
