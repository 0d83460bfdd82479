//! Coarse-to-fine segmentation by alternating appearance search and
//! shape-prior regularization.
//!
//! Each iteration moves every landmark to the best-scoring candidate along
//! its normal, computes component responsibilities for the moved shape and
//! maps it back onto the mixture subspaces. All coordinates are world
//! coordinates, so the same mixture serves every pyramid level; only the
//! sampling step (one voxel of the current level) changes.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Connectivity;
use crate::mixture::{Clamp, ResponsibilityVector, ShapeMixture};
use crate::profile::{estimate_normals, extract_profile, ProfileModel};
use crate::shape::ShapeVector;
use crate::volume::{IntensityVolume, Point3, VolumePyramid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MStepMode {
    /// Responsibility-weighted blend of the per-component projections.
    #[default]
    Soft,
    /// Projection onto the most probable component only.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Mixture mean `Σ_k π_k μ_k`.
    #[default]
    GlobalMean,
    ComponentMean(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    /// Candidates per side, in voxels of the current level.
    pub search: usize,
    pub iters_per_level: usize,
    pub n_levels: usize,
    pub clamp: Clamp,
    pub mstep: MStepMode,
    pub init: InitMode,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            search: 4,
            iters_per_level: 10,
            n_levels: 2,
            clamp: Clamp::default(),
            mstep: MStepMode::Soft,
            init: InitMode::GlobalMean,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters_per_level == 0 {
            return Err(Error::Config("iters_per_level must be >= 1".into()));
        }
        if self.n_levels == 0 {
            return Err(Error::Config("n_levels must be >= 1".into()));
        }
        if let Clamp::SdMultiple(c) = self.clamp {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clamp multiple {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Shape moved by one round of profile search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub shape: ShapeVector,
    /// Mean of the winning candidate costs.
    pub mean_cost: f64,
}

/// Candidate offsets `0, −1, 1, −2, 2, …` so that a strict `<` keeps the
/// smallest `|j|`, then the smallest `j`.
fn candidate_order(search: usize) -> Vec<i64> {
    let mut out = vec![0];
    for j in 1..=search as i64 {
        out.push(-j);
        out.push(j);
    }
    out
}

/// Move each landmark to the lowest-cost position along its normal.
pub fn local_search(
    shape: &ShapeVector,
    vol: &IntensityVolume,
    model: &ProfileModel,
    level: usize,
    connectivity: Option<&Connectivity>,
    search: usize,
) -> Result<SearchOutcome> {
    if shape.m() != model.m() {
        return Err(Error::dim(format!("shape has {} landmarks, profile model {}", shape.m(), model.m())));
    }
    if level >= model.n_levels() {
        return Err(Error::dim(format!("level {level} outside the {}-level profile model", model.n_levels())));
    }
    let normals = estimate_normals(shape, connectivity)?;
    let h = vol.voxel_size();
    let order = candidate_order(search);
    let moved = (0..shape.m())
        .into_par_iter()
        .map(|i| {
            let p = shape.point(i);
            let n = normals[i];
            let mut best = (f64::INFINITY, p);
            for &j in &order {
                let t = j as f64 * h;
                let q = [p[0] + t * n[0], p[1] + t * n[1], p[2] + t * n[2]];
                let c = model.profile_cost(level, i, &extract_profile(vol, q, n, model.spec()))?;
                if c < best.0 {
                    best = (c, q);
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<(f64, Point3)>>>()?;
    let mut out = shape.clone();
    let mut total = 0.0;
    for (i, (c, q)) in moved.into_iter().enumerate() {
        out.set_point(i, q);
        total += c;
    }
    Ok(SearchOutcome { shape: out, mean_cost: total / shape.m() as f64 })
}

/// Map a shape back onto the mixture subspaces.
pub fn regularize(mix: &ShapeMixture, s: &ShapeVector, r: &ResponsibilityVector, mode: MStepMode, clamp: Clamp) -> Result<ShapeVector> {
    if r.0.len() != mix.k() {
        return Err(Error::dim(format!("{} responsibilities for {} components", r.0.len(), mix.k())));
    }
    match mode {
        MStepMode::Hard => mix.component(r.argmax()).regularize(s, clamp),
        MStepMode::Soft => {
            let mut acc = vec![0.0; s.dim()];
            for (k, &w) in r.0.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let proj = mix.component(k).regularize(s, clamp)?;
                for (a, v) in acc.iter_mut().zip(proj.coords()) {
                    *a += w * v;
                }
            }
            ShapeVector::new(acc)
        }
    }
}

/// `log p(S′ | k*)` before and after an unclamped projection onto `k*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorCheck {
    pub component: usize,
    pub before: f64,
    pub after: f64,
}

impl PriorCheck {
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.after >= self.before - rel_tol * self.before.abs().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub level: usize,
    pub iteration: usize,
    pub responsibilities: Vec<f64>,
    pub mean_cost: f64,
    pub mean_displacement: f64,
    /// `Σ_k r_k log p(S | k)` for the regularized shape.
    pub expected_log_prior: f64,
    pub prior_check: PriorCheck,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub shape: ShapeVector,
    pub trace: Vec<IterationTrace>,
    pub config: SegmentationConfig,
}

fn initial_shape(mix: &ShapeMixture, init: InitMode) -> Result<ShapeVector> {
    match init {
        InitMode::GlobalMean => Ok(mix.mean_shape()),
        InitMode::ComponentMean(k) if k < mix.k() => Ok(mix.component(k).mean_shape()),
        InitMode::ComponentMean(k) => Err(Error::Config(format!("initial component {k} but mixture has {}", mix.k()))),
    }
}

/// Run the full coarse-to-fine loop.
pub fn segment(
    pyramid: &VolumePyramid,
    mix: &ShapeMixture,
    model: &ProfileModel,
    connectivity: Option<&Connectivity>,
    cfg: &SegmentationConfig,
) -> Result<SegmentationResult> {
    cfg.validate()?;
    if model.n_levels() != pyramid.n_levels() {
        return Err(Error::LevelMismatch { model: model.n_levels(), pyramid: pyramid.n_levels() });
    }
    if cfg.n_levels != pyramid.n_levels() {
        return Err(Error::LevelMismatch { model: cfg.n_levels, pyramid: pyramid.n_levels() });
    }
    if mix.m() != model.m() {
        return Err(Error::dim(format!("mixture has {} landmarks, profile model {}", mix.m(), model.m())));
    }
    let mut s = initial_shape(mix, cfg.init)?;
    let mut trace = Vec::with_capacity(cfg.n_levels * cfg.iters_per_level);
    for level in (0..cfg.n_levels).rev() {
        let vol = pyramid.level(level);
        for iteration in 0..cfg.iters_per_level {
            let found = local_search(&s, vol, model, level, connectivity, cfg.search)?;
            let r = mix.responsibilities(&found.shape)?;
            let next = regularize(mix, &found.shape, &r, cfg.mstep, cfg.clamp)?;

            let k_star = r.argmax();
            let comp = mix.component(k_star);
            let prior_check = PriorCheck {
                component: k_star,
                before: comp.log_density(&found.shape)?,
                after: comp.log_density(&comp.regularize(&found.shape, Clamp::Off)?)?,
            };
            let mut expected_log_prior = 0.0;
            for (k, &w) in r.0.iter().enumerate() {
                if w > 0.0 {
                    expected_log_prior += w * mix.component(k).log_density(&next)?;
                }
            }
            let mean_displacement = (0..s.m())
                .map(|i| {
                    let (a, b) = (s.point(i), next.point(i));
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
                })
                .sum::<f64>()
                / s.m() as f64;
            trace.push(IterationTrace {
                level,
                iteration,
                responsibilities: r.0,
                mean_cost: found.mean_cost,
                mean_displacement,
                expected_log_prior,
                prior_check,
            });
            s = next;
        }
    }
    Ok(SegmentationResult { shape: s, trace, config: cfg.clone() })
}

#[derive(Serialize, Deserialize)]
struct ResultFile {
    config: SegmentationConfig,
    landmarks: Vec<Point3>,
    trace: Vec<IterationTrace>,
}

impl SegmentationResult {
    pub fn to_json(&self) -> String {
        let file = ResultFile { config: self.config.clone(), landmarks: self.shape.points().collect(), trace: self.trace.clone() };
        serde_json::to_string_pretty(&file).expect("result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ResultFile = serde_json::from_str(text).map_err(|e| Error::Format(format!("segmentation result: {e}")))?;
        Ok(Self { shape: ShapeVector::from_points(&f.landmarks)?, trace: f.trace, config: f.config })
    }

    /// Write `segmentation.json` and `landmarks.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("segmentation.json");
        fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))?;
        self.shape.write_csv(dir.join("landmarks.csv"))
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join("segmentation.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests;
