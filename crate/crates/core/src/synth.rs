//! Synthetic star-shaped populations with planted mixture structure.
//!
//! Each surface is a radial function over the sphere grid,
//!
//! ```text
//! r(d) = base + Σ_{bumps of component c} a·exp(−∠(d, anchor)² / 2w²) + Σ_j β_j f_j(d)
//! ```
//!
//! where component `c` owns `c + 2` bumps at fixed anchors and `f_j` are
//! low-order polynomial harmonics with coefficients `β_j ~ N(0, s_j²)`,
//! `s_j` decreasing. Volumes are rendered lazily, one case at a time.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Connectivity, SphereGrid};
use crate::shape::ShapeVector;
use crate::volume::{read_volume, write_volume, IntensityVolume, Point3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub k: usize,
    /// Bump count per component; empty means component `c` gets `c + 2`.
    pub bumps: Vec<usize>,
    pub grid: usize,
    pub n_cases: usize,
    pub n_train: usize,
    pub latent_dim: usize,
    /// Standard deviation of the first latent coefficient, in world units.
    pub latent_amplitude: f64,
    /// Ratio between successive latent standard deviations.
    pub latent_decay: f64,
    pub base_radius: f64,
    /// Independent radial noise per landmark, standard deviation in world units.
    pub radial_jitter: f64,
    pub bump_amplitude: f64,
    /// Angular bump width in radians.
    pub bump_width: f64,
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub inside: f64,
    pub outside: f64,
    pub edge_width: f64,
    pub noise: f64,
    pub bias: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k: 3,
            bumps: Vec::new(),
            grid: 34,
            n_cases: 100,
            n_train: 80,
            latent_dim: 4,
            latent_amplitude: 1.0,
            latent_decay: 0.8,
            base_radius: 18.0,
            radial_jitter: 0.1,
            bump_amplitude: 6.0,
            bump_width: 0.35,
            seed: 0,
            dims: [64; 3],
            spacing: [1.0; 3],
            inside: 0.8,
            outside: 0.2,
            edge_width: 1.0,
            noise: 0.05,
            bias: 0.0,
        }
    }
}

/// Smooth functions of the unit direction used for latent variation.
const HARMONICS: usize = 8;

fn harmonic(j: usize, d: Point3) -> f64 {
    let [x, y, z] = d;
    match j {
        0 => z,
        1 => x,
        2 => y,
        3 => 0.5 * (3.0 * z * z - 1.0),
        4 => x * z,
        5 => y * z,
        6 => x * y,
        _ => 0.5 * (x * x - y * y),
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("synth needs k >= 1".into()));
        }
        if self.grid < 8 {
            return Err(Error::Config(format!("sphere grid needs g >= 8, got {}", self.grid)));
        }
        if !self.bumps.is_empty() && self.bumps.len() != self.k {
            return Err(Error::Config(format!("{} bump counts given for k = {}", self.bumps.len(), self.k)));
        }
        if self.latent_dim > HARMONICS {
            return Err(Error::Config(format!("latent_dim is at most {HARMONICS}")));
        }
        if self.n_train > self.n_cases || self.n_cases == 0 {
            return Err(Error::Config(format!("{} training cases out of {}", self.n_train, self.n_cases)));
        }
        if !(self.noise >= 0.0) || !(self.edge_width >= 0.0) || !(self.radial_jitter >= 0.0) || !(self.bump_width > 0.0) {
            return Err(Error::Config("noise, jitter and edge width must be >= 0, bump width > 0".into()));
        }
        if self.dims.iter().any(|&d| d < 2) || self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("volume dims must be >= 2 with positive spacing".into()));
        }
        Ok(())
    }

    pub fn bump_count(&self, component: usize) -> usize {
        self.bumps.get(component).copied().unwrap_or(component + 2)
    }

    /// World position of the volume centre.
    pub fn center(&self) -> Point3 {
        [0, 1, 2].map(|a| (self.dims[a] - 1) as f64 * self.spacing[a] / 2.0)
    }

    fn latent_sd(&self, j: usize) -> f64 {
        self.latent_amplitude * self.latent_decay.powi(j as i32)
    }
}

/// Roughly uniform unit directions.
fn fibonacci_directions(n: usize) -> Vec<Point3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [rho * phi.cos(), rho * phi.sin(), z]
        })
        .collect()
}

/// Radius per grid vertex, with bilinear lookup in `(θ, φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    grid: SphereGrid,
    center: Point3,
    radii: Vec<f64>,
}

impl RadialField {
    pub fn new(grid: SphereGrid, center: Point3, radii: Vec<f64>) -> Result<Self> {
        if radii.len() != grid.n_vertices() {
            return Err(Error::dim(format!("{} radii for {} grid vertices", radii.len(), grid.n_vertices())));
        }
        if let Some((i, r)) = radii.iter().enumerate().find(|(_, r)| !(**r > 0.0)) {
            return Err(Error::Config(format!("surface is not star-shaped: radius {r} at grid vertex {i}")));
        }
        Ok(Self { grid, center, radii })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn center(&self) -> Point3 {
        self.center
    }

    fn ring_value(&self, ring: usize, meridian: usize) -> f64 {
        let g = self.grid.g();
        if ring == 0 {
            self.radii[self.grid.north()]
        } else if ring == g - 1 {
            self.radii[self.grid.south()]
        } else {
            self.radii[self.grid.vertex(ring, meridian % g)]
        }
    }

    /// Radius in direction `d` (need not be normalized).
    pub fn radius_at(&self, d: Point3) -> f64 {
        let g = self.grid.g();
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let theta = (d[2] / len).clamp(-1.0, 1.0).acos();
        let phi = d[1].atan2(d[0]).rem_euclid(2.0 * std::f64::consts::PI);
        let u = theta / std::f64::consts::PI * (g - 1) as f64;
        let i = (u.floor() as usize).min(g - 2);
        let t = u - i as f64;
        let v = phi / (2.0 * std::f64::consts::PI) * g as f64;
        let j = (v.floor() as usize).min(g - 1);
        let s = v - j as f64;
        let lo = (1.0 - s) * self.ring_value(i, j) + s * self.ring_value(i, j + 1);
        let hi = (1.0 - s) * self.ring_value(i + 1, j) + s * self.ring_value(i + 1, j + 1);
        (1.0 - t) * lo + t * hi
    }

    /// Signed distance proxy `r(dir) − ‖p − c‖`, positive inside.
    pub fn depth(&self, p: Point3) -> f64 {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if dist == 0.0 {
            return self.radii[self.grid.north()].min(self.radii[self.grid.south()]);
        }
        self.radius_at(d) - dist
    }

    pub fn contains(&self, p: Point3) -> bool {
        self.depth(p) > 0.0
    }

    /// Landmarks at the grid directions scaled by their radii.
    pub fn shape(&self) -> ShapeVector {
        let pts: Vec<Point3> = self
            .grid
            .directions()
            .iter()
            .zip(&self.radii)
            .map(|(d, r)| [0, 1, 2].map(|k| self.center[k] + r * d[k]))
            .collect();
        ShapeVector::from_points(&pts).expect("grid has landmarks")
    }
}

/// Render `(image, label)` for a radial field.
pub fn render_volume(field: &RadialField, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<(IntensityVolume, IntensityVolume)> {
    let [nx, ny, nz] = cfg.dims;
    let origin = [0.0; 3];
    let c = field.center();
    let half = cfg.dims.iter().zip(&cfg.spacing).map(|(&d, &s)| d as f64 * s).fold(0.0, f64::max) / 2.0;
    let bias_dir = [1.0 / 3f64.sqrt(); 3];
    // Depth is the expensive part; compute it per z-slab in parallel.
    let slab = nx * ny;
    let mut depth = vec![0.0; slab * nz];
    depth.par_chunks_mut(slab).enumerate().for_each(|(z, out)| {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x as f64 * cfg.spacing[0], y as f64 * cfg.spacing[1], z as f64 * cfg.spacing[2]];
                out[x + nx * y] = field.depth(p);
            }
        }
    });
    let label: Vec<f64> = depth.iter().map(|&d| if d > 0.0 { 1.0 } else { 0.0 }).collect();
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("noise sd is finite");
    let mut image = Vec::with_capacity(depth.len());
    for (idx, &d) in depth.iter().enumerate() {
        let s = if cfg.edge_width > 0.0 {
            1.0 / (1.0 + (-d / cfg.edge_width).exp())
        } else if d > 0.0 {
            1.0
        } else {
            0.0
        };
        let mut v = cfg.inside * s + cfg.outside * (1.0 - s);
        if cfg.noise > 0.0 {
            v += noise.sample(rng);
        }
        if cfg.bias != 0.0 {
            let (x, y, z) = (idx % nx, (idx / nx) % ny, idx / slab);
            let p = [x as f64 * cfg.spacing[0] - c[0], y as f64 * cfg.spacing[1] - c[1], z as f64 * cfg.spacing[2] - c[2]];
            v += cfg.bias * (p[0] * bias_dir[0] + p[1] * bias_dir[1] + p[2] * bias_dir[2]) / half;
        }
        image.push(v);
    }
    Ok((
        IntensityVolume::new(cfg.dims, cfg.spacing, origin, image)?,
        IntensityVolume::new(cfg.dims, cfg.spacing, origin, label)?,
    ))
}

/// Planted parameters of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseParams {
    pub index: usize,
    pub component: usize,
    pub beta: Vec<f64>,
    /// Per-landmark radial offsets; empty when jitter is off.
    pub jitter: Vec<f64>,
}

/// A fully rendered case.
#[derive(Debug, Clone)]
pub struct SynthCase {
    pub index: usize,
    pub component: usize,
    pub shape: ShapeVector,
    pub image: IntensityVolume,
    pub label: IntensityVolume,
    pub connectivity: Connectivity,
}

/// Generated population; volumes are rendered on demand.
#[derive(Debug, Clone)]
pub struct Population {
    cfg: SynthConfig,
    grid: SphereGrid,
    directions: Vec<Point3>,
    anchors: Vec<Vec<Point3>>,
    cases: Vec<CaseParams>,
}

/// Draw case parameters for `cfg`.
pub fn generate_population(cfg: &SynthConfig) -> Result<Population> {
    cfg.validate()?;
    let grid = SphereGrid::new(cfg.grid)?;
    let total: usize = (0..cfg.k).map(|c| cfg.bump_count(c)).sum();
    let all = fibonacci_directions(total.max(1));
    let mut next = 0;
    let anchors: Vec<Vec<Point3>> = (0..cfg.k)
        .map(|c| {
            let n = cfg.bump_count(c);
            let a = all[next..next + n].to_vec();
            next += n;
            a
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let cases: Vec<CaseParams> = (0..cfg.n_cases)
        .map(|index| {
            let component = rng.random_range(0..cfg.k);
            let beta = (0..cfg.latent_dim).map(|j| cfg.latent_sd(j) * std.sample(&mut rng)).collect();
            let jitter = if cfg.radial_jitter > 0.0 {
                (0..grid.n_vertices()).map(|_| cfg.radial_jitter * std.sample(&mut rng)).collect()
            } else {
                Vec::new()
            };
            CaseParams { index, component, beta, jitter }
        })
        .collect();
    let pop = Population { cfg: cfg.clone(), directions: grid.directions(), grid, anchors, cases };
    for c in 0..pop.cases.len() {
        pop.field(c)?;
    }
    Ok(pop)
}

impl Population {
    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn grid(&self) -> SphereGrid {
        self.grid
    }

    pub fn connectivity(&self) -> Connectivity {
        self.grid.connectivity()
    }

    pub fn m(&self) -> usize {
        self.grid.n_vertices()
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn params(&self, case: usize) -> &CaseParams {
        &self.cases[case]
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.cfg.n_train
    }

    pub fn test_indices(&self) -> std::ops::Range<usize> {
        self.cfg.n_train..self.cases.len()
    }

    pub fn components(&self, range: std::ops::Range<usize>) -> Vec<usize> {
        self.cases[range].iter().map(|c| c.component).collect()
    }

    fn radii_for(&self, component: usize, beta: &[f64], jitter: &[f64]) -> Vec<f64> {
        let w2 = 2.0 * self.cfg.bump_width * self.cfg.bump_width;
        self.directions
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let mut r = self.cfg.base_radius;
                for a in &self.anchors[component] {
                    let cos = (d[0] * a[0] + d[1] * a[1] + d[2] * a[2]).clamp(-1.0, 1.0);
                    let ang = cos.acos();
                    r += self.cfg.bump_amplitude * (-ang * ang / w2).exp();
                }
                for (j, b) in beta.iter().enumerate() {
                    r += b * harmonic(j, d);
                }
                r + jitter.get(i).copied().unwrap_or(0.0)
            })
            .collect()
    }

    pub fn field(&self, case: usize) -> Result<RadialField> {
        let p = &self.cases[case];
        RadialField::new(self.grid, self.cfg.center(), self.radii_for(p.component, &p.beta, &p.jitter))
    }

    /// Component template with all latent coefficients zero.
    pub fn template(&self, component: usize) -> Result<RadialField> {
        RadialField::new(self.grid, self.cfg.center(), self.radii_for(component, &[], &[]))
    }

    pub fn shape(&self, case: usize) -> Result<ShapeVector> {
        Ok(self.field(case)?.shape())
    }

    pub fn shapes(&self, range: std::ops::Range<usize>) -> Result<Vec<ShapeVector>> {
        range.map(|c| self.shape(c)).collect()
    }

    /// Render one case. Image noise comes from a stream keyed by the case
    /// index, so cases can be rendered in any order.
    pub fn render(&self, case: usize) -> Result<SynthCase> {
        let field = self.field(case)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(case as u64 + 1);
        let (image, label) = render_volume(&field, &self.cfg, &mut rng)?;
        Ok(SynthCase {
            index: case,
            component: self.cases[case].component,
            shape: field.shape(),
            image,
            label,
            connectivity: self.connectivity(),
        })
    }

    /// Largest template radius per component.
    pub fn template_max_radii(&self) -> Result<Vec<f64>> {
        (0..self.cfg.k).map(|c| Ok(self.template(c)?.radii().iter().cloned().fold(0.0, f64::max))).collect()
    }

    /// Write every case plus `manifest.json` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = dir.as_ref();
        let mut entries = Vec::with_capacity(self.len());
        for case in 0..self.len() {
            let sc = self.render(case)?;
            let rel = PathBuf::from("cases").join(format!("case_{case:03}"));
            let abs = dir.join(&rel);
            fs::create_dir_all(&abs).map_err(|e| Error::io(&abs, e))?;
            write_volume(&sc.image, abs.join("image.json"))?;
            write_volume(&sc.label, abs.join("label.json"))?;
            sc.shape.write_csv(abs.join("shape.csv"))?;
            entries.push(ManifestCase {
                index: case,
                component: sc.component,
                split: if self.train_indices().contains(&case) { Split::Train } else { Split::Test },
                image: rel.join("image.json"),
                label: rel.join("label.json"),
                shape: rel.join("shape.csv"),
            });
        }
        let manifest = Manifest { seed: self.cfg.seed, config: self.cfg.clone(), m: self.m(), cases: entries };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCase {
    pub index: usize,
    pub component: usize,
    pub split: Split,
    pub image: PathBuf,
    pub label: PathBuf,
    pub shape: PathBuf,
}

/// Index of a dataset written by [`Population::write`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub m: usize,
    pub cases: Vec<ManifestCase>,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestCase> {
        self.cases.iter().filter(move |c| c.split == split)
    }

    pub fn connectivity(&self) -> Result<Connectivity> {
        Ok(SphereGrid::new(self.config.grid)?.connectivity())
    }
}

impl ManifestCase {
    pub fn load_image(&self, root: &Path) -> Result<IntensityVolume> {
        read_volume(root.join(&self.image))
    }

    pub fn load_label(&self, root: &Path) -> Result<IntensityVolume> {
        read_volume(root.join(&self.label))
    }

    pub fn load_shape(&self, root: &Path) -> Result<ShapeVector> {
        ShapeVector::read_csv(root.join(&self.shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{adjusted_rand_index, voxelize};
    use crate::mixture::{fit_mixture, FitOptions};
    use crate::shape::ShapeDataset;

    fn sphere_cfg(r: f64) -> SynthConfig {
        SynthConfig { k: 1, latent_amplitude: 0.0, radial_jitter: 0.0, bump_amplitude: 0.0, base_radius: r, noise: 0.0, n_cases: 2, n_train: 1, ..Default::default() }
    }

    #[test]
    fn zero_variance_gives_template() {
        let cfg = SynthConfig { k: 1, latent_amplitude: 0.0, radial_jitter: 0.0, n_cases: 5, n_train: 4, grid: 12, ..Default::default() };
        let pop = generate_population(&cfg).unwrap();
        let t = pop.template(0).unwrap().shape();
        for c in 0..5 {
            assert_eq!(pop.shape(c).unwrap(), t);
        }
    }

    #[test]
    fn landmark_count_and_bump_maxima() {
        let pop = generate_population(&SynthConfig::default()).unwrap();
        assert_eq!(pop.m(), 34 * 32 + 2);
        let conn = pop.connectivity();
        let mut neighbours = vec![Vec::new(); pop.m()];
        for t in conn.triangles() {
            for k in 0..3 {
                neighbours[t[k]].push(t[(k + 1) % 3]);
            }
        }
        let maxima = pop.template_max_radii().unwrap();
        for c in 0..3 {
            let field = pop.template(c).unwrap();
            let r = field.radii();
            // Bumps show up as isolated local maxima well above the base radius.
            let peaks = (0..pop.m()).filter(|&i| r[i] > 18.0 + 3.0 && neighbours[i].iter().all(|&j| r[i] > r[j])).count();
            assert_eq!(peaks, c + 2, "component {c}");
            assert!(maxima[c] > 18.0 + 0.8 * 6.0 && maxima[c] < 18.0 + 6.0 + 0.1);
        }
    }

    #[test]
    fn sphere_label_volume_matches_analytic() {
        let cfg = sphere_cfg(20.0);
        let pop = generate_population(&cfg).unwrap();
        let case = pop.render(0).unwrap();
        let count: f64 = case.label.data().iter().sum();
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 20f64.powi(3);
        assert!((count - analytic).abs() / analytic < 0.02, "{count} vs {analytic}");
        let c = cfg.center();
        let idx = [0, 1, 2].map(|a| (c[a] / cfg.spacing[a]).round() as usize);
        assert_eq!(case.label.get(idx[0], idx[1], idx[2]), 1.0);
    }

    #[test]
    fn step_limit_gives_two_intensities() {
        let cfg = SynthConfig { edge_width: 0.0, noise: 0.0, n_cases: 1, n_train: 1, ..Default::default() };
        let pop = generate_population(&cfg).unwrap();
        let case = pop.render(0).unwrap();
        assert!(case.image.data().iter().all(|&v| v == 0.8 || v == 0.2));
    }

    #[test]
    fn noiseless_intensities_stay_in_range() {
        let cfg = SynthConfig { noise: 0.0, n_cases: 1, n_train: 1, ..Default::default() };
        let case = generate_population(&cfg).unwrap().render(0).unwrap();
        assert!(case.image.data().iter().all(|&v| (0.2..=0.8).contains(&v)));
    }

    #[test]
    fn rendering_is_deterministic_and_order_free() {
        let cfg = SynthConfig { grid: 12, dims: [24; 3], base_radius: 7.0, bump_amplitude: 2.0, latent_amplitude: 0.5, n_cases: 3, n_train: 2, ..Default::default() };
        let a = generate_population(&cfg).unwrap();
        let b = generate_population(&cfg).unwrap();
        let late = b.render(2).unwrap();
        assert_eq!(a.render(2).unwrap().image, late.image);
        assert_eq!(a.params(1), b.params(1));
        let other = generate_population(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(other.render(2).unwrap().image, late.image);
    }

    #[test]
    fn non_star_shaped_is_rejected() {
        let cfg = SynthConfig { base_radius: -1.0, ..Default::default() };
        assert!(matches!(generate_population(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn voxelized_mesh_agrees_with_radial_labels() {
        let pop = generate_population(&SynthConfig::default()).unwrap();
        for case in [0, 7] {
            let sc = pop.render(case).unwrap();
            let vox = voxelize(&sc.shape, &sc.connectivity, sc.label.dims(), sc.label.spacing(), sc.label.origin()).unwrap();
            let agree = vox.data().iter().zip(sc.label.data()).filter(|(a, b)| a == b).count();
            let frac = agree as f64 / vox.len() as f64;
            assert!(frac >= 0.995, "case {case}: {frac}");
        }
    }

    #[test]
    fn mixture_recovers_planted_components() {
        let pop = generate_population(&SynthConfig::default()).unwrap();
        let data = ShapeDataset::new(pop.shapes(pop.train_indices()).unwrap()).unwrap();
        let fit = fit_mixture(&data, &FitOptions { k: 3, ..Default::default() }).unwrap();
        let ari = adjusted_rand_index(&fit.labels, &pop.components(pop.train_indices()));
        assert!(ari >= 0.9, "ARI {ari}");
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { grid: 8, dims: [16; 3], base_radius: 4.0, bump_amplitude: 1.0, latent_amplitude: 0.3, n_cases: 5, n_train: 4, ..Default::default() };
        let pop = generate_population(&cfg).unwrap();
        let manifest = pop.write(dir.path()).unwrap();
        let back = Manifest::load(dir.path()).unwrap();
        assert_eq!(manifest, back);
        assert_eq!(back.split(Split::Train).count(), 4);
        assert_eq!(back.split(Split::Test).count(), 1);
        let c = &back.cases[3];
        let shape = c.load_shape(dir.path()).unwrap();
        assert_eq!(shape, pop.shape(3).unwrap());
        let label = c.load_label(dir.path()).unwrap();
        assert_eq!(label, pop.render(3).unwrap().label);
    }
}
