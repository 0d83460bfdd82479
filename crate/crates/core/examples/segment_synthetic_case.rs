//! Train on a reduced synthetic population, segment one held-out case and
//! print the per-iteration trace.

use shapegem::eval::point_error;
use shapegem::pipeline::{collect_profiles, fit_shape_prior, PipelineConfig};
use shapegem::profile::FeatureMode;
use shapegem::segment::{segment, MStepMode, SegmentationConfig};
use shapegem::synth::{generate_population, SynthConfig};
use shapegem::volume::build_pyramid;

fn main() -> shapegem::Result<()> {
    let cfg = PipelineConfig {
        synth: SynthConfig { grid: 20, n_cases: 40, n_train: 36, ..Default::default() },
        features: FeatureMode::Raw,
        segmentation: SegmentationConfig { mstep: MStepMode::Hard, ..Default::default() },
        ..Default::default()
    }
    .resolved();
    let pop = generate_population(&cfg.synth)?;
    let mix = fit_shape_prior(pop.shapes(pop.train_indices())?, &cfg.mixture)?.mixture;
    let opts = cfg.profile_options();
    let model = collect_profiles(&pop, pop.train_indices(), &opts.spec, opts.n_levels)?.fit(&opts)?;

    let case = pop.render(pop.test_indices().start)?;
    let pyramid = build_pyramid(&case.image, cfg.segmentation.n_levels)?;
    let result = segment(&pyramid, &mix, &model, Some(&case.connectivity), &cfg.segmentation)?;
    for t in &result.trace {
        println!(
            "level {} iter {:>2}: cost {:8.2}, moved {:.3}, responsibilities {:.3?}",
            t.level, t.iteration, t.mean_cost, t.mean_displacement, t.responsibilities
        );
    }
    let errs = point_error(&result.shape, &case.shape)?;
    println!("planted component {}, mean landmark error {:.3}", case.component, errs.iter().sum::<f64>() / errs.len() as f64);
    Ok(())
}
