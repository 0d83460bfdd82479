//! Extract thick intensity profiles from a rendered synthetic case, fit
//! per-landmark profile models and score candidates along one normal.

use shapegem::pipeline::{collect_profiles, PipelineConfig};
use shapegem::profile::{estimate_normals, extract_profile, FeatureMode, ProfileSpec, ProfileTrainOptions};
use shapegem::synth::{generate_population, SynthConfig};

fn main() -> shapegem::Result<()> {
    let cfg = PipelineConfig {
        synth: SynthConfig { grid: 16, n_cases: 30, n_train: 25, ..Default::default() },
        ..Default::default()
    };
    let pop = generate_population(&cfg.synth)?;
    let spec = ProfileSpec::default();
    println!("{} lines x {} samples = {} values per profile", spec.offsets.len(), spec.line_len(), spec.feature_len());

    let samples = collect_profiles(&pop, pop.train_indices(), &spec, 1)?;
    let opts = ProfileTrainOptions { n_levels: 1, mode: FeatureMode::Raw, ..cfg.profile_options() };
    let model = samples.fit(&opts)?;

    let case = pop.render(pop.test_indices().start)?;
    let normals = estimate_normals(&case.shape, Some(&case.connectivity))?;
    let i = 40;
    let (p, n) = (case.shape.point(i), normals[i]);
    println!("landmark {i}: cost by offset along the normal");
    for j in -4i32..=4 {
        let q = [p[0] + j as f64 * n[0], p[1] + j as f64 * n[1], p[2] + j as f64 * n[2]];
        let cost = model.profile_cost(0, i, &extract_profile(&case.image, q, n, &spec))?;
        println!("  {j:>2}: {cost:10.2}");
    }
    Ok(())
}
