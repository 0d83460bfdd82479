//! End-to-end training, segmentation and the ablation benchmark.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{adjusted_rand_index, median, EvalReport, DEFAULT_OUTLIER_THRESHOLD};
use crate::mixture::{fit_mixture, FitOptions, MixtureFit, ShapeMixture};
use crate::profile::{FeatureMode, ProfileModel, ProfileSamples, ProfileSpec, ProfileTrainOptions};
use crate::segment::{segment, SegmentationConfig, SegmentationResult};
use crate::shape::{ShapeDataset, ShapeVector};
use crate::synth::{generate_population, Population, SynthCase, SynthConfig};
use crate::volume::build_pyramid;

/// Every knob of a run. The top-level `seed` overrides the seeds of the
/// nested sections once [`resolved`](Self::resolved) is called.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub mixture: FitOptions,
    pub profile: ProfileSpec,
    pub autoencoder: TrainConfig,
    pub ridge: f64,
    pub features: FeatureMode,
    pub segmentation: SegmentationConfig,
    pub outlier_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            mixture: FitOptions::default(),
            profile: ProfileSpec::default(),
            autoencoder: TrainConfig::default(),
            ridge: 1e-3,
            features: FeatureMode::Autoencoder,
            segmentation: SegmentationConfig::default(),
            outlier_threshold: DEFAULT_OUTLIER_THRESHOLD,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// Copy the top-level seed into every section.
    pub fn resolved(mut self) -> Self {
        self.synth.seed = self.seed;
        self.mixture.seed = self.seed;
        self.autoencoder.seed = self.seed;
        self
    }

    pub fn profile_options(&self) -> ProfileTrainOptions {
        ProfileTrainOptions {
            spec: self.profile.clone(),
            n_levels: self.segmentation.n_levels,
            ae: self.autoencoder.clone(),
            ridge: self.ridge,
            mode: self.features,
        }
    }
}

/// Fit the shape mixture on a set of training shapes.
pub fn fit_shape_prior(shapes: Vec<ShapeVector>, opts: &FitOptions) -> Result<MixtureFit> {
    fit_mixture(&ShapeDataset::new(shapes)?, opts)
}

/// Render each training case once and gather its profiles.
pub fn collect_profiles(pop: &Population, cases: std::ops::Range<usize>, spec: &ProfileSpec, n_levels: usize) -> Result<ProfileSamples> {
    let conn = pop.connectivity();
    let mut samples = ProfileSamples::new(spec.clone(), n_levels, pop.m())?;
    for c in cases {
        let case = pop.render(c)?;
        samples.add(&case.image, &case.shape, Some(&conn))?;
    }
    Ok(samples)
}

/// Segment one rendered case and score it against its ground truth.
pub fn segment_case(
    case: &SynthCase,
    mix: &ShapeMixture,
    model: &ProfileModel,
    cfg: &SegmentationConfig,
    outlier_threshold: f64,
) -> Result<(SegmentationResult, EvalReport)> {
    let pyramid = build_pyramid(&case.image, cfg.n_levels)?;
    let result = segment(&pyramid, mix, model, Some(&case.connectivity), cfg)?;
    let report = EvalReport::evaluate(&result.shape, &case.shape, Some((&case.label, &case.connectivity)), outlier_threshold)?;
    Ok((result, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case: usize,
    pub component: usize,
    pub dice: f64,
    pub mean_error: f64,
    pub max_error: f64,
    pub prior_checks: usize,
    pub prior_violations: usize,
    /// Smallest `after − before` over the trace.
    pub worst_prior_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub autoencoder: bool,
    pub mixture: bool,
    pub median_dice: f64,
    pub mean_dice: f64,
    /// Mean over cases and landmarks, world units.
    pub mean_error: f64,
    pub cases: Vec<CaseScore>,
}

/// Median Dice in the 2×2 ablation layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceTable {
    pub ae_gmm: f64,
    pub ae_single: f64,
    pub raw_gmm: f64,
    pub raw_single: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSummary {
    pub k: usize,
    pub dims: Vec<usize>,
    pub log_likelihood: Vec<f64>,
    pub ari: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: PipelineConfig,
    pub median_dice: DiceTable,
    pub cells: Vec<BenchCell>,
    pub mixture: MixtureSummary,
    pub voxel_size: f64,
    /// Wall-clock seconds per stage; the only non-reproducible field.
    pub timing: Vec<(String, f64)>,
}

impl BenchReport {
    pub fn cell(&self, autoencoder: bool, mixture: bool) -> &BenchCell {
        self.cells
            .iter()
            .find(|c| c.autoencoder == autoencoder && c.mixture == mixture)
            .expect("all four cells are present")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

fn score_cell(
    pop: &Population,
    mix: &ShapeMixture,
    model: &ProfileModel,
    cfg: &PipelineConfig,
    autoencoder: bool,
    mixture: bool,
) -> Result<BenchCell> {
    let cases = pop
        .test_indices()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|c| {
            let case = pop.render(c)?;
            let (result, report) = segment_case(&case, mix, model, &cfg.segmentation, cfg.outlier_threshold)?;
            let checks = result.trace.iter().map(|t| t.prior_check);
            Ok(CaseScore {
                case: c,
                component: case.component,
                dice: report.summary.dice.expect("labels were supplied"),
                mean_error: report.summary.mean_distance,
                max_error: report.summary.max_distance,
                prior_checks: result.trace.len(),
                prior_violations: checks.clone().filter(|p| !p.holds(1e-9)).count(),
                worst_prior_gap: checks.map(|p| p.after - p.before).fold(f64::INFINITY, f64::min),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dice: Vec<f64> = cases.iter().map(|c| c.dice).collect();
    Ok(BenchCell {
        autoencoder,
        mixture,
        median_dice: median(&dice),
        mean_dice: dice.iter().sum::<f64>() / dice.len() as f64,
        mean_error: cases.iter().map(|c| c.mean_error).sum::<f64>() / cases.len() as f64,
        cases,
    })
}

/// Everything the benchmark trains, kept so callers can reuse it.
pub struct BenchModels {
    pub config: PipelineConfig,
    pub population: Population,
    pub full: MixtureFit,
    pub single: MixtureFit,
    pub autoencoder: ProfileModel,
    pub raw: ProfileModel,
    pub timing: Vec<(String, f64)>,
}

struct Stopwatch {
    clock: Instant,
    laps: Vec<(String, f64)>,
}

impl Stopwatch {
    fn new(laps: Vec<(String, f64)>) -> Self {
        Self { clock: Instant::now(), laps }
    }

    fn lap(&mut self, name: &str) {
        self.laps.push((name.to_string(), self.clock.elapsed().as_secs_f64()));
        self.clock = Instant::now();
    }
}

/// Fit both shape priors and both profile models on the first `n_train`
/// cases.
pub fn train_bench(cfg: &PipelineConfig, mut progress: impl FnMut(&str)) -> Result<BenchModels> {
    let cfg = cfg.clone().resolved();
    let mut watch = Stopwatch::new(Vec::new());
    let pop = generate_population(&cfg.synth)?;
    if pop.test_indices().is_empty() {
        return Err(Error::Config("bench needs at least one test case".into()));
    }
    let train = pop.shapes(pop.train_indices())?;
    progress("fitting shape mixtures");
    let full = fit_shape_prior(train.clone(), &cfg.mixture)?;
    let single = fit_shape_prior(train, &FitOptions { k: 1, ..cfg.mixture.clone() })?;
    watch.lap("shape_mixture");

    progress("collecting training profiles");
    let opts = cfg.profile_options();
    let samples = collect_profiles(&pop, pop.train_indices(), &opts.spec, opts.n_levels)?;
    watch.lap("profile_sampling");
    progress("training autoencoders");
    let autoencoder = samples.fit(&ProfileTrainOptions { mode: FeatureMode::Autoencoder, ..opts.clone() })?;
    watch.lap("autoencoders");
    let raw = samples.fit(&ProfileTrainOptions { mode: FeatureMode::Raw, ..opts })?;
    watch.lap("raw_profiles");
    Ok(BenchModels { config: cfg, population: pop, full, single, autoencoder, raw, timing: watch.laps })
}

/// Segment the held-out cases under the four ablation settings:
/// autoencoder or raw features, `k` components or one.
pub fn score_bench(models: &BenchModels, mut progress: impl FnMut(&str)) -> Result<BenchReport> {
    let cfg = &models.config;
    let pop = &models.population;
    let mut watch = Stopwatch::new(models.timing.clone());
    let mut cells = Vec::new();
    for (ae, gmm) in [(true, true), (true, false), (false, true), (false, false)] {
        progress(&format!("segmenting test cases (autoencoder: {ae}, mixture: {gmm})"));
        let model = if ae { &models.autoencoder } else { &models.raw };
        let mix = if gmm { &models.full.mixture } else { &models.single.mixture };
        cells.push(score_cell(pop, mix, model, cfg, ae, gmm)?);
        watch.lap(&format!("segment_ae{}_gmm{}", ae as u8, gmm as u8));
    }
    let full = &models.full;
    let mixture = MixtureSummary {
        k: full.mixture.k(),
        dims: full.mixture.components().iter().map(|c| c.d()).collect(),
        ari: adjusted_rand_index(&full.labels, &pop.components(pop.train_indices())),
        log_likelihood: full.log_likelihood.clone(),
    };
    let table = DiceTable {
        ae_gmm: cells[0].median_dice,
        ae_single: cells[1].median_dice,
        raw_gmm: cells[2].median_dice,
        raw_single: cells[3].median_dice,
    };
    let voxel_size = cfg.synth.spacing.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(BenchReport { config: cfg.clone(), median_dice: table, cells, mixture, voxel_size, timing: watch.laps })
}

/// [`train_bench`] followed by [`score_bench`].
pub fn run_bench(cfg: &PipelineConfig, mut progress: impl FnMut(&str)) -> Result<BenchReport> {
    let models = train_bench(cfg, &mut progress)?;
    score_bench(&models, progress)
}
