//! Intensity-derivative profiles along surface normals and the per-landmark
//! appearance models built from them.
//!
//! A profile line samples `L + 1` points straddling the landmark along its
//! normal and keeps the `L = 2ℓ + 1` first differences, normalized to unit
//! L1 norm. A thick profile concatenates the lines through a few sub-voxel
//! tangent offsets. Each (level, landmark) pair gets its own feature map
//! (an autoencoder code or the raw scaled profile) and a Gaussian in that
//! feature space.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{SparseAutoencoder, TrainConfig};
use crate::codec::EncodedMatrix;
use crate::error::{Error, Result};
use crate::mesh::Connectivity;
use crate::shape::ShapeVector;
use crate::volume::{build_pyramid, IntensityVolume, Point3};

/// Geometry of a thick profile, in voxels of the level being sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileSpec {
    pub ell: usize,
    pub offsets: Vec<[f64; 2]>,
    pub step: f64,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        Self {
            ell: 5,
            offsets: vec![[0.0, 0.0], [0.5, 0.0], [-0.5, 0.0], [0.0, 0.5], [0.0, -0.5]],
            step: 1.0,
        }
    }
}

impl ProfileSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ell < 1 {
            return Err(Error::Config("profile half-length must be >= 1".into()));
        }
        if !self.offsets.contains(&[0.0, 0.0]) {
            return Err(Error::Config("profile offsets must include (0, 0)".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("profile step {} must be positive", self.step)));
        }
        Ok(())
    }

    /// Derivative samples per line.
    pub fn line_len(&self) -> usize {
        2 * self.ell + 1
    }

    /// Total feature length.
    pub fn feature_len(&self) -> usize {
        self.line_len() * self.offsets.len()
    }
}

fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn normalize(v: Point3) -> Option<Point3> {
    let n = dot(v, v).sqrt();
    (n > 0.0 && n.is_finite()).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

/// Unit normal per landmark.
///
/// With connectivity, the area-weighted mean of incident triangle normals.
/// Without, the least-variance direction of the landmark and its 8 nearest
/// neighbours, oriented away from the landmark centroid.
pub fn estimate_normals(shape: &ShapeVector, connectivity: Option<&Connectivity>) -> Result<Vec<Point3>> {
    let m = shape.m();
    if m < 4 {
        return Err(Error::dim(format!("normals need at least 4 landmarks, got {m}")));
    }
    match connectivity {
        Some(conn) => {
            if conn.n_vertices() != m {
                return Err(Error::dim(format!(
                    "connectivity has {} vertices, shape has {m} landmarks",
                    conn.n_vertices()
                )));
            }
            let mut acc = vec![[0.0; 3]; m];
            for t in conn.triangles() {
                let [a, b, c] = t.map(|i| shape.point(i));
                // Cross product length is twice the area.
                let n = cross(sub(b, a), sub(c, a));
                for &i in t {
                    for k in 0..3 {
                        acc[i][k] += n[k];
                    }
                }
            }
            acc.into_iter()
                .enumerate()
                .map(|(i, v)| normalize(v).ok_or(Error::DegenerateNeighborhood { landmark: i }))
                .collect()
        }
        None => pca_normals(shape),
    }
}

const PCA_NEIGHBOURS: usize = 8;

fn pca_normals(shape: &ShapeVector) -> Result<Vec<Point3>> {
    let pts: Vec<Point3> = shape.points().collect();
    let centroid = shape.centroid();
    (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let p = pts[i];
            let mut near: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| {
                    let d = sub(*q, p);
                    (dot(d, d), j)
                })
                .collect();
            let k = PCA_NEIGHBOURS.min(near.len());
            near.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut hood = vec![p];
            hood.extend(near[..k].iter().map(|&(_, j)| pts[j]));

            let mut mean = [0.0; 3];
            for q in &hood {
                for a in 0..3 {
                    mean[a] += q[a] / hood.len() as f64;
                }
            }
            let mut cov = nalgebra::Matrix3::<f64>::zeros();
            for q in &hood {
                let d = nalgebra::Vector3::from(sub(*q, mean));
                cov += d * d.transpose();
            }
            let eig = cov.symmetric_eigen();
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let top = eig.eigenvalues[order[0]];
            if !(top > 0.0) || eig.eigenvalues[order[1]] <= 1e-12 * top {
                return Err(Error::DegenerateNeighborhood { landmark: i });
            }
            let v = eig.eigenvectors.column(order[2]);
            let mut n = normalize([v[0], v[1], v[2]]).ok_or(Error::DegenerateNeighborhood { landmark: i })?;
            if dot(n, sub(p, centroid)) < 0.0 {
                n = [-n[0], -n[1], -n[2]];
            }
            Ok(n)
        })
        .collect()
}

/// Orthonormal `(t₁, t₂)` perpendicular to `n`, built from the coordinate
/// axis least aligned with `n`.
pub fn tangent_frame(n: Point3) -> (Point3, Point3) {
    let mut axis = 0;
    for a in 1..3 {
        if n[a].abs() < n[axis].abs() {
            axis = a;
        }
    }
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let c = dot(e, n);
    let t1 = normalize([e[0] - c * n[0], e[1] - c * n[1], e[2] - c * n[2]]).expect("axis is not parallel to n");
    let t2 = cross(n, t1);
    (t1, t2)
}

/// Thick profile at `p` along unit normal `n`.
pub fn extract_profile(vol: &IntensityVolume, p: Point3, n: Point3, spec: &ProfileSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.feature_len());
    let h = vol.voxel_size();
    let (t1, t2) = tangent_frame(n);
    let len = spec.line_len();
    let start = -(spec.ell as f64) - 0.5;
    let mut samples = vec![0.0; len + 1];
    for &[a, b] in &spec.offsets {
        let q = [0, 1, 2].map(|k| p[k] + a * h * t1[k] + b * h * t2[k]);
        for (j, s) in samples.iter_mut().enumerate() {
            let t = (start + j as f64) * spec.step * h;
            *s = vol.sample([q[0] + t * n[0], q[1] + t * n[1], q[2] + t * n[2]]);
        }
        let base = out.len();
        out.extend(samples.windows(2).map(|w| w[1] - w[0]));
        let line = &mut out[base..];
        let total: f64 = line.iter().map(|g| g.abs()).sum();
        if total < 1e-12 {
            line.iter_mut().for_each(|g| *g = 0.0);
        } else {
            line.iter_mut().for_each(|g| *g /= total);
        }
    }
    out
}

/// Affine map of feature entries onto `[0, 1]` using the training range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub min: f64,
    pub max: f64,
}

impl FeatureScale {
    pub fn fit(samples: &[Vec<f64>]) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in samples.iter().flatten() {
            min = min.min(*v);
            max = max.max(*v);
        }
        Self { min, max }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let range = self.max - self.min;
        if range > 1e-12 {
            x.iter().map(|v| (v - self.min) / range).collect()
        } else {
            x.iter().map(|v| v - self.min + 0.5).collect()
        }
    }
}

/// How scaled profiles are mapped into the space where the Gaussian lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    #[default]
    Autoencoder,
    /// Scaled profile used directly.
    Raw,
}

/// Appearance model of one landmark at one level.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "StatsFile", into = "StatsFile")]
pub struct LandmarkProfileStats {
    scale: FeatureScale,
    ae: Option<SparseAutoencoder>,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for LandmarkProfileStats {
    fn eq(&self, other: &Self) -> bool {
        self.scale == other.scale && self.ae == other.ae && self.mu == other.mu && self.sigma == other.sigma
    }
}

impl LandmarkProfileStats {
    pub fn new(scale: FeatureScale, ae: Option<SparseAutoencoder>, mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let dim = mu.len();
        if sigma.nrows() != dim || sigma.ncols() != dim {
            return Err(Error::dim(format!("covariance is {}x{}, mean has {dim}", sigma.nrows(), sigma.ncols())));
        }
        let expected = match &ae {
            Some(_) => crate::autoencoder::CODE_DIM,
            None => dim,
        };
        if expected != dim {
            return Err(Error::dim(format!("code dimension {expected} does not match mean of length {dim}")));
        }
        if (&sigma - sigma.transpose()).amax() > 1e-12 * sigma.amax().max(1.0) {
            return Err(Error::Config("feature covariance is not symmetric".into()));
        }
        let chol = Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::Config("feature covariance is not positive definite".into()))?;
        Ok(Self { scale, ae, mu, sigma, chol })
    }

    pub fn scale(&self) -> FeatureScale {
        self.scale
    }

    pub fn autoencoder(&self) -> Option<&SparseAutoencoder> {
        self.ae.as_ref()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Scaled profile mapped into feature space.
    pub fn feature_vector(&self, profile: &[f64]) -> Result<DVector<f64>> {
        let x = self.scale.apply(profile);
        let z = match &self.ae {
            Some(ae) => ae.encode(&x)?,
            None => x,
        };
        if z.len() != self.mu.len() {
            return Err(Error::dim(format!("feature has {} values, model expects {}", z.len(), self.mu.len())));
        }
        Ok(DVector::from_vec(z))
    }

    /// Squared Mahalanobis distance of a feature-space vector.
    pub fn mahalanobis(&self, z: &DVector<f64>) -> f64 {
        let d = z - &self.mu;
        let y = self.chol.l().solve_lower_triangular(&d).expect("Cholesky factor is non-singular");
        y.norm_squared()
    }

    pub fn cost(&self, profile: &[f64]) -> Result<f64> {
        Ok(self.mahalanobis(&self.feature_vector(profile)?))
    }
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    scale: FeatureScale,
    ae: Option<SparseAutoencoder>,
    mu_f: EncodedMatrix,
    sigma_f: EncodedMatrix,
}

impl From<LandmarkProfileStats> for StatsFile {
    fn from(s: LandmarkProfileStats) -> Self {
        Self {
            scale: s.scale,
            mu_f: EncodedMatrix::from_vector(&s.mu),
            sigma_f: EncodedMatrix::from_matrix(&s.sigma),
            ae: s.ae,
        }
    }
}

impl TryFrom<StatsFile> for LandmarkProfileStats {
    type Error = Error;

    fn try_from(f: StatsFile) -> Result<Self> {
        Self::new(f.scale, f.ae, f.mu_f.to_vector()?, f.sigma_f.to_matrix()?)
    }
}

/// Settings for [`train_profile_models`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileTrainOptions {
    pub spec: ProfileSpec,
    pub n_levels: usize,
    pub ae: TrainConfig,
    pub ridge: f64,
    pub mode: FeatureMode,
}

impl Default for ProfileTrainOptions {
    fn default() -> Self {
        Self { spec: ProfileSpec::default(), n_levels: 2, ae: TrainConfig::default(), ridge: 1e-3, mode: FeatureMode::Autoencoder }
    }
}

/// Per level, per landmark appearance models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileModel {
    spec: ProfileSpec,
    n_levels: usize,
    m: usize,
    /// Level-major: entry `level * m + landmark`.
    entries: Vec<LandmarkProfileStats>,
}

impl ProfileModel {
    pub fn new(spec: ProfileSpec, n_levels: usize, m: usize, entries: Vec<LandmarkProfileStats>) -> Result<Self> {
        spec.validate()?;
        if n_levels == 0 || m == 0 || entries.len() != n_levels * m {
            return Err(Error::dim(format!("{} profile entries for {n_levels} levels x {m} landmarks", entries.len())));
        }
        Ok(Self { spec, n_levels, m, entries })
    }

    pub fn spec(&self) -> &ProfileSpec {
        &self.spec
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mode(&self) -> FeatureMode {
        if self.entries[0].ae.is_some() {
            FeatureMode::Autoencoder
        } else {
            FeatureMode::Raw
        }
    }

    pub fn stats(&self, level: usize, landmark: usize) -> &LandmarkProfileStats {
        &self.entries[level * self.m + landmark]
    }

    /// Mahalanobis cost of a profile against the model of `(level, landmark)`.
    pub fn profile_cost(&self, level: usize, landmark: usize, profile: &[f64]) -> Result<f64> {
        if level >= self.n_levels || landmark >= self.m {
            return Err(Error::dim(format!(
                "no profile model for level {level}, landmark {landmark} ({} x {})",
                self.n_levels, self.m
            )));
        }
        if profile.len() != self.spec.feature_len() {
            return Err(Error::dim(format!(
                "profile has {} values, profile layout needs {}",
                profile.len(),
                self.spec.feature_len()
            )));
        }
        self.stats(level, landmark).cost(profile)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("profile model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("profile model: {e}")))?;
        Self::new(raw.spec, raw.n_levels, raw.m, raw.entries)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Profiles gathered from training pairs, one list per `(level, landmark)`.
///
/// Pairs are added one at a time so the volumes never need to be held in
/// memory together.
#[derive(Debug, Clone)]
pub struct ProfileSamples {
    spec: ProfileSpec,
    n_levels: usize,
    m: usize,
    samples: Vec<Vec<Vec<f64>>>,
    pairs: usize,
}

impl ProfileSamples {
    pub fn new(spec: ProfileSpec, n_levels: usize, m: usize) -> Result<Self> {
        spec.validate()?;
        if n_levels == 0 {
            return Err(Error::Config("profile models need at least one level".into()));
        }
        Ok(Self { spec, n_levels, m, samples: vec![Vec::new(); n_levels * m], pairs: 0 })
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs
    }

    /// Sample every level of `volume` at the landmarks of `shape`.
    pub fn add(&mut self, volume: &IntensityVolume, shape: &ShapeVector, connectivity: Option<&Connectivity>) -> Result<()> {
        if shape.m() != self.m {
            return Err(Error::dim(format!("shape has {} landmarks, expected {}", shape.m(), self.m)));
        }
        let pyramid = build_pyramid(volume, self.n_levels)?;
        let normals = estimate_normals(shape, connectivity)?;
        for (level, vol) in pyramid.levels().iter().enumerate() {
            let profiles: Vec<Vec<f64>> = (0..self.m)
                .into_par_iter()
                .map(|i| extract_profile(vol, shape.point(i), normals[i], &self.spec))
                .collect();
            for (i, p) in profiles.into_iter().enumerate() {
                self.samples[level * self.m + i].push(p);
            }
        }
        self.pairs += 1;
        Ok(())
    }

    /// Fit one appearance model per `(level, landmark)`.
    pub fn fit(&self, opts: &ProfileTrainOptions) -> Result<ProfileModel> {
        if opts.spec != self.spec || opts.n_levels != self.n_levels {
            return Err(Error::Config("training options disagree with the collected samples".into()));
        }
        if self.pairs < 2 {
            return Err(Error::Config(format!("profile training needs >= 2 pairs, got {}", self.pairs)));
        }
        if !(opts.ridge > 0.0) {
            return Err(Error::Config(format!("ridge {} must be positive", opts.ridge)));
        }
        opts.ae.validate()?;
        let entries = (0..self.n_levels * self.m)
            .into_par_iter()
            .map(|idx| {
                let (level, landmark) = (idx / self.m, idx % self.m);
                fit_landmark(&self.samples[idx], opts, landmark_seed(opts.ae.seed, idx as u64))
                    .map_err(|e| Error::ProfileTraining { level, landmark, source: Box::new(e) })
            })
            .collect::<Result<Vec<_>>>()?;
        ProfileModel::new(self.spec.clone(), self.n_levels, self.m, entries)
    }
}

fn landmark_seed(seed: u64, idx: u64) -> u64 {
    // splitmix64 step so neighbouring landmarks get unrelated streams.
    let mut z = seed.wrapping_add(idx.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fit_landmark(profiles: &[Vec<f64>], opts: &ProfileTrainOptions, seed: u64) -> Result<LandmarkProfileStats> {
    let scale = FeatureScale::fit(profiles);
    let scaled: Vec<Vec<f64>> = profiles.iter().map(|p| scale.apply(p)).collect();
    let (ae, feats) = match opts.mode {
        FeatureMode::Raw => (None, scaled),
        FeatureMode::Autoencoder => {
            let mut ae = SparseAutoencoder::init(opts.spec.feature_len(), seed)?;
            let cfg = TrainConfig { seed, ..opts.ae.clone() };
            ae.train(&scaled, &cfg)?;
            let codes = scaled.iter().map(|x| ae.encode(x)).collect::<Result<Vec<_>>>()?;
            (Some(ae), codes)
        }
    };
    let (mu, sigma) = gaussian_with_ridge(&feats, opts.ridge);
    LandmarkProfileStats::new(scale, ae, mu, sigma)
}

/// Sample mean and covariance plus `ε·(trace/10)·I`, or `ε·I` when the
/// sample covariance is zero. The divisor is the code width whatever the
/// feature mode, so raw profiles get the same absolute ridge rule.
pub fn gaussian_with_ridge(feats: &[Vec<f64>], eps: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = feats.len();
    let dim = feats[0].len();
    // Shift by the first sample so identical samples give an exact mean.
    let x = DMatrix::from_fn(n, dim, |r, c| feats[r][c] - feats[0][c]);
    let shift = DVector::from_fn(dim, |c, _| x.column(c).sum() / n as f64);
    let mu = DVector::from_fn(dim, |c, _| feats[0][c] + shift[c]);
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= shift.transpose();
    }
    let mut sigma = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    sigma = (&sigma + sigma.transpose()) * 0.5;
    let trace = sigma.trace();
    let ridge = if trace > 0.0 { eps * trace / crate::autoencoder::CODE_DIM as f64 } else { eps };
    for i in 0..dim {
        sigma[(i, i)] += ridge;
    }
    (mu, sigma)
}
