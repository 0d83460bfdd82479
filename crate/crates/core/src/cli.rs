//! Command-line front end. [`run`] returns the process exit code: 0 on
//! success, 2 for usage errors, 1 for failures inside the library.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::eval::{adjusted_rand_index, write_report, EvalReport};
use crate::mixture::ShapeMixture;
use crate::pipeline::{fit_shape_prior, run_bench, PipelineConfig};
use crate::profile::{FeatureMode, ProfileModel, ProfileSamples};
use crate::segment::{segment, InitMode, MStepMode, SegmentationResult};
use crate::shape::ShapeVector;
use crate::synth::{generate_population, Manifest, Split};
use crate::volume::{build_pyramid, read_volume};

#[derive(Debug, Parser)]
#[command(name = "shapegem", version, about = "Landmark segmentation with mixture shape priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Overrides,
}

#[derive(Debug, Args)]
struct Overrides {
    /// JSON run configuration; flags below override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of mixture components (and of synthetic shape classes)
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Pyramid levels
    #[arg(long, global = true)]
    levels: Option<usize>,
    /// Profile half-length in voxels
    #[arg(long, global = true)]
    ell: Option<usize>,
    /// Search candidates per side
    #[arg(long, global = true)]
    search: Option<usize>,
    /// Iterations per pyramid level
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true)]
    mstep: Option<MStepArg>,
    /// `global` or `component:K`
    #[arg(long, global = true, value_parser = parse_init)]
    init: Option<InitMode>,
    /// Score raw scaled profiles instead of autoencoder codes
    #[arg(long, global = true)]
    no_ae: bool,
    /// Use a single-component shape prior
    #[arg(long, global = true)]
    no_gmm: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MStepArg {
    Soft,
    Hard,
}

fn parse_init(s: &str) -> std::result::Result<InitMode, String> {
    if s == "global" {
        return Ok(InitMode::GlobalMean);
    }
    s.strip_prefix("component:")
        .and_then(|k| k.parse().ok())
        .map(InitMode::ComponentMean)
        .ok_or_else(|| format!("expected `global` or `component:K`, got {s:?}"))
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic population with images, labels and landmarks
    Synth,
    /// Fit the shape mixture on the training split of a dataset
    TrainShape {
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit per-landmark profile models on the training split of a dataset
    TrainProfiles {
        #[arg(long)]
        data: PathBuf,
    },
    /// Segment one volume
    Segment {
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        /// Volume file to segment
        #[arg(long, required_unless_present = "case")]
        image: Option<PathBuf>,
        /// Dataset directory; supplies mesh connectivity and, with --case, the image
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, requires = "data")]
        case: Option<usize>,
    },
    /// Score predicted landmarks against ground truth
    Eval {
        /// Landmark CSV or a segmentation output directory
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth landmark CSV; no Dice without --data
        #[arg(long, required_unless_present = "case")]
        truth: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Dataset case supplying truth, label volume and connectivity
        #[arg(long, requires = "data")]
        case: Option<usize>,
    },
    /// Train on the synthetic split and score the four ablation settings
    Bench,
}

/// Parse `argv` (including the program name) and run the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            1
        }
    }
}

fn one_line(e: &Error) -> String {
    e.to_string().replace('\n', " ")
}

fn configure_threads() {
    if let Some(n) = std::env::var("SHAPEGEM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails harmlessly if the pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn resolve_config(flags: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = match &flags.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(k) = flags.k {
        cfg.synth.k = k;
        cfg.mixture.k = k;
    }
    if flags.no_gmm {
        cfg.mixture.k = 1;
    }
    if let Some(levels) = flags.levels {
        cfg.segmentation.n_levels = levels;
    }
    if let Some(ell) = flags.ell {
        cfg.profile.ell = ell;
    }
    if let Some(search) = flags.search {
        cfg.segmentation.search = search;
    }
    if let Some(iters) = flags.iters {
        cfg.segmentation.iters_per_level = iters;
    }
    if let Some(mstep) = flags.mstep {
        cfg.segmentation.mstep = match mstep {
            MStepArg::Soft => MStepMode::Soft,
            MStepArg::Hard => MStepMode::Hard,
        };
    }
    if let Some(init) = flags.init {
        cfg.segmentation.init = init;
    }
    if flags.no_ae {
        cfg.features = FeatureMode::Raw;
    }
    Ok(cfg.resolved())
}

/// Write `doc` with the resolved configuration and seed under `provenance`.
fn write_with_provenance(path: &Path, doc: &str, cfg: &PipelineConfig) -> Result<()> {
    let mut value: Value = serde_json::from_str(doc).map_err(|e| Error::json(path, e))?;
    if let Value::Object(map) = &mut value {
        map.insert("provenance".into(), json!({ "seed": cfg.seed, "config": cfg }));
    }
    let text = serde_json::to_string_pretty(&value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.flags)?;
    let out = cli.flags.out.as_path();
    match cli.command {
        Command::Synth => synth(&cfg, out),
        Command::TrainShape { data } => train_shape(&cfg, &data, out),
        Command::TrainProfiles { data } => train_profiles(&cfg, &data, out),
        Command::Segment { mixture, profiles, image, data, case } => {
            segment_one(&cfg, cli.flags.levels.is_some(), &mixture, &profiles, image, data, case, out)
        }
        Command::Eval { pred, truth, data, case } => evaluate(&cfg, &pred, truth, data, case, out),
        Command::Bench => bench(&cfg, out),
    }
}

fn synth(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let pop = generate_population(&cfg.synth)?;
    pop.write(out)?;
    let path = out.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    write_with_provenance(&path, &text, cfg)?;
    println!("wrote {} cases to {}", pop.len(), out.display());
    Ok(())
}

fn train_split(data: &Path) -> Result<(Manifest, Vec<ShapeVector>)> {
    let manifest = Manifest::load(data)?;
    let shapes = manifest.split(Split::Train).map(|c| c.load_shape(data)).collect::<Result<Vec<_>>>()?;
    Ok((manifest, shapes))
}

fn train_shape(cfg: &PipelineConfig, data: &Path, out: &Path) -> Result<()> {
    let (manifest, shapes) = train_split(data)?;
    let fit = fit_shape_prior(shapes, &cfg.mixture)?;
    create_dir(out)?;
    write_with_provenance(&out.join("mixture.json"), &fit.mixture.to_json(), cfg)?;
    let truth: Vec<usize> = manifest.split(Split::Train).map(|c| c.component).collect();
    let summary = json!({
        "log_likelihood": fit.log_likelihood,
        "converged": fit.converged,
        "restart": fit.restart,
        "var_floor": fit.var_floor,
        "labels": fit.labels,
        "dims": fit.mixture.components().iter().map(|c| c.d()).collect::<Vec<_>>(),
        "ari": adjusted_rand_index(&fit.labels, &truth),
    });
    write_with_provenance(&out.join("fit.json"), &summary.to_string(), cfg)?;
    println!("fitted {} components, ARI {:.3}", fit.mixture.k(), adjusted_rand_index(&fit.labels, &truth));
    Ok(())
}

fn train_profiles(cfg: &PipelineConfig, data: &Path, out: &Path) -> Result<()> {
    let manifest = Manifest::load(data)?;
    let conn = manifest.connectivity()?;
    let opts = cfg.profile_options();
    let mut samples = ProfileSamples::new(opts.spec.clone(), opts.n_levels, manifest.m)?;
    for case in manifest.split(Split::Train) {
        samples.add(&case.load_image(data)?, &case.load_shape(data)?, Some(&conn))?;
    }
    let model = samples.fit(&opts)?;
    create_dir(out)?;
    write_with_provenance(&out.join("profiles.json"), &model.to_json(), cfg)?;
    println!("fitted {} x {} profile models", model.n_levels(), model.m());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn segment_one(
    cfg: &PipelineConfig,
    levels_given: bool,
    mixture: &Path,
    profiles: &Path,
    image: Option<PathBuf>,
    data: Option<PathBuf>,
    case: Option<usize>,
    out: &Path,
) -> Result<()> {
    let mix = ShapeMixture::load(mixture)?;
    let model = ProfileModel::load(profiles)?;
    let manifest = data.as_deref().map(Manifest::load).transpose()?;
    let vol = match (image, case, &manifest, &data) {
        (Some(path), _, _, _) => read_volume(path)?,
        (None, Some(i), Some(m), Some(root)) => find_case(m, i)?.load_image(root)?,
        _ => return Err(Error::Config("segment needs --image or --data with --case".into())),
    };
    let conn = manifest.as_ref().map(Manifest::connectivity).transpose()?;
    let mut seg_cfg = cfg.segmentation.clone();
    if !levels_given {
        seg_cfg.n_levels = model.n_levels();
    }
    let pyramid = build_pyramid(&vol, seg_cfg.n_levels)?;
    let result = segment(&pyramid, &mix, &model, conn.as_ref(), &seg_cfg)?;
    result.write(out)?;
    write_with_provenance(&out.join("segmentation.json"), &result.to_json(), cfg)?;
    println!("segmented {} landmarks in {} iterations", result.shape.m(), result.trace.len());
    Ok(())
}

fn find_case(manifest: &Manifest, index: usize) -> Result<&crate::synth::ManifestCase> {
    manifest
        .cases
        .iter()
        .find(|c| c.index == index)
        .ok_or_else(|| Error::Config(format!("dataset has no case {index}")))
}

fn evaluate(
    cfg: &PipelineConfig,
    pred: &Path,
    truth: Option<PathBuf>,
    data: Option<PathBuf>,
    case: Option<usize>,
    out: &Path,
) -> Result<()> {
    let pred = if pred.is_dir() {
        SegmentationResult::read(pred)?.shape
    } else {
        ShapeVector::read_csv(pred)?
    };
    let report = match (truth, case, data) {
        (Some(path), _, _) => EvalReport::evaluate(&pred, &ShapeVector::read_csv(path)?, None, cfg.outlier_threshold)?,
        (None, Some(i), Some(root)) => {
            let manifest = Manifest::load(&root)?;
            let entry = find_case(&manifest, i)?;
            let label = entry.load_label(&root)?;
            let conn = manifest.connectivity()?;
            EvalReport::evaluate(&pred, &entry.load_shape(&root)?, Some((&label, &conn)), cfg.outlier_threshold)?
        }
        _ => return Err(Error::Config("eval needs --truth or --data with --case".into())),
    };
    write_report(&report, out)?;
    let path = out.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    write_with_provenance(&path, &text, cfg)?;
    let s = &report.summary;
    match s.dice {
        Some(d) => println!("mean error {:.3}, Dice {:.4}", s.mean_distance, d),
        None => println!("mean error {:.3}", s.mean_distance),
    }
    Ok(())
}

fn bench(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let report = run_bench(cfg, |msg| eprintln!("{msg}"))?;
    create_dir(out)?;
    report.save(out.join("bench.json"))?;
    let t = &report.median_dice;
    println!("median Dice       K components   K = 1");
    println!("autoencoder       {:.4}         {:.4}", t.ae_gmm, t.ae_single);
    println!("raw profiles      {:.4}         {:.4}", t.raw_gmm, t.raw_single);
    Ok(())
}
