use super::*;
use crate::mixture::{fit_mixture, FitOptions, MixtureComponent};
use crate::profile::{FeatureMode, ProfileSamples, ProfileTrainOptions};
use crate::shape::ShapeDataset;
use crate::synth::{generate_population, Population, SynthConfig};
use crate::volume::build_pyramid;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn small_cfg() -> SynthConfig {
    SynthConfig {
        k: 2,
        grid: 12,
        dims: [32; 3],
        base_radius: 9.0,
        bump_amplitude: 3.0,
        latent_amplitude: 0.5,
        radial_jitter: 0.05,
        n_cases: 14,
        n_train: 12,
        ..Default::default()
    }
}

struct Fixture {
    pop: Population,
    mix: ShapeMixture,
    model: ProfileModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let pop = generate_population(&small_cfg()).unwrap();
        let data = ShapeDataset::new(pop.shapes(pop.train_indices()).unwrap()).unwrap();
        let mix = fit_mixture(&data, &FitOptions { k: 2, ..Default::default() }).unwrap().mixture;
        let opts = ProfileTrainOptions { n_levels: 2, mode: FeatureMode::Raw, ..Default::default() };
        let conn = pop.connectivity();
        let mut samples = ProfileSamples::new(opts.spec.clone(), 2, pop.m()).unwrap();
        for c in pop.train_indices() {
            let case = pop.render(c).unwrap();
            samples.add(&case.image, &case.shape, Some(&conn)).unwrap();
        }
        Fixture { model: samples.fit(&opts).unwrap(), pop, mix }
    })
}

#[test]
fn candidates_alternate_outward() {
    assert_eq!(candidate_order(0), vec![0]);
    assert_eq!(candidate_order(2), vec![0, -1, 1, -2, 2]);
}

#[test]
fn empty_search_keeps_shape() {
    let f = fixture();
    let case = f.pop.render(12).unwrap();
    let start = f.mix.mean_shape();
    let out = local_search(&start, &case.image, &f.model, 0, Some(&case.connectivity), 0).unwrap();
    assert_eq!(out.shape, start);
}

#[test]
fn flat_costs_keep_shape() {
    let f = fixture();
    let vol = IntensityVolume::filled([32; 3], [1.0; 3], [0.0; 3], 0.5).unwrap();
    let start = f.mix.mean_shape();
    let out = local_search(&start, &vol, &f.model, 0, Some(&f.pop.connectivity()), 3).unwrap();
    assert_eq!(out.shape, start);
}

#[test]
fn search_moves_at_most_s_voxels() {
    let f = fixture();
    let case = f.pop.render(13).unwrap();
    let pyr = build_pyramid(&case.image, 2).unwrap();
    let start = f.mix.mean_shape();
    for level in 0..2 {
        let out = local_search(&start, pyr.level(level), &f.model, level, Some(&case.connectivity), 3).unwrap();
        let limit = 3.0 * pyr.level(level).voxel_size() + 1e-9;
        assert!(start.points().zip(out.shape.points()).all(|(a, b)| {
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt() <= limit
        }));
    }
}

#[test]
fn displaced_landmarks_return() {
    let f = fixture();
    let case = f.pop.render(12).unwrap();
    let normals = estimate_normals(&case.shape, Some(&case.connectivity)).unwrap();
    let mut moved = case.shape.clone();
    for (i, n) in normals.iter().enumerate() {
        let p = moved.point(i);
        moved.set_point(i, [p[0] + 3.0 * n[0], p[1] + 3.0 * n[1], p[2] + 3.0 * n[2]]);
    }
    let out = local_search(&moved, &case.image, &f.model, 0, Some(&case.connectivity), 4).unwrap();
    let errs = crate::eval::point_error(&out.shape, &case.shape).unwrap();
    let ok = errs.iter().filter(|&&e| e <= 1.0).count();
    assert!(ok as f64 >= 0.95 * errs.len() as f64, "{ok} of {}", errs.len());
}

fn random_component(rng: &mut ChaCha8Rng, dim: usize, d: usize, pi: f64) -> MixtureComponent {
    let a = DMatrix::from_fn(dim, d, |_, _| rng.random::<f64>() - 0.5);
    let psi = a.qr().q();
    let mu = DVector::from_fn(dim, |_, _| rng.random::<f64>() * 4.0);
    let mut lambda: Vec<f64> = (0..d).map(|_| rng.random_range(1.0..3.0)).collect();
    lambda.sort_by(|a, b| b.total_cmp(a));
    MixtureComponent::new(pi, mu, psi, DVector::from_vec(lambda), 0.1).unwrap()
}

fn random_mixture(seed: u64, k: usize) -> ShapeMixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ShapeMixture::normalized((0..k).map(|_| random_component(&mut rng, 12, 3, 1.0)).collect()).unwrap()
}

fn random_shape(rng: &mut ChaCha8Rng) -> ShapeVector {
    ShapeVector::new((0..12).map(|_| rng.random::<f64>() * 6.0 - 1.0).collect()).unwrap()
}

#[test]
fn single_component_regularize_is_orthogonal_projection() {
    let mix = random_mixture(1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = mix.component(0);
    for _ in 0..20 {
        let s = random_shape(&mut rng);
        let r = ResponsibilityVector(vec![1.0]);
        let out = regularize(&mix, &s, &r, MStepMode::Soft, Clamp::Off).unwrap();
        let resid = s.to_dvector() - out.to_dvector();
        assert!((c.psi().transpose() * &resid).amax() < 1e-10);
        let inside = out.to_dvector() - c.mu();
        assert!((&inside - c.psi() * c.psi().transpose() * &inside).amax() < 1e-10);
    }
}

#[test]
fn component_mean_is_a_fixed_point() {
    let mix = random_mixture(3, 3);
    for k in 0..3 {
        let mut r = vec![0.0; 3];
        r[k] = 1.0;
        let mu = mix.component(k).mean_shape();
        for mode in [MStepMode::Soft, MStepMode::Hard] {
            let out = regularize(&mix, &mu, &ResponsibilityVector(r.clone()), mode, Clamp::default()).unwrap();
            assert!(out.distance(&mu) < 1e-12);
        }
    }
}

#[test]
fn soft_mode_blends_projections() {
    let mix = random_mixture(4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_shape(&mut rng);
    let r = ResponsibilityVector(vec![0.25, 0.75]);
    let out = regularize(&mix, &s, &r, MStepMode::Soft, Clamp::Off).unwrap();
    let a = mix.component(0).regularize(&s, Clamp::Off).unwrap().to_dvector();
    let b = mix.component(1).regularize(&s, Clamp::Off).unwrap().to_dvector();
    assert!((out.to_dvector() - (a * 0.25 + b * 0.75)).amax() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hard_mode_never_lowers_the_chosen_prior(seed in 0u64..10_000, r0 in 0.0f64..1.0) {
        let mix = random_mixture(seed % 17, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_shape(&mut rng);
        let r = ResponsibilityVector(vec![r0, 1.0 - r0]);
        let out = regularize(&mix, &s, &r, MStepMode::Hard, Clamp::Off).unwrap();
        let c = mix.component(r.argmax());
        let before = c.log_density(&s).unwrap();
        let after = c.log_density(&out).unwrap();
        prop_assert!(after >= before - 1e-9 * before.abs().max(1.0));
        // The output lies in the chosen subspace.
        let inside = out.to_dvector() - c.mu();
        prop_assert!((&inside - c.psi() * c.psi().transpose() * &inside).amax() < 1e-10);
    }
}

#[test]
fn zero_search_loop_projects_the_start() {
    let f = fixture();
    let case = f.pop.render(12).unwrap();
    let pyr = build_pyramid(&case.image, 2).unwrap();
    let data = ShapeDataset::new(f.pop.shapes(f.pop.train_indices()).unwrap()).unwrap();
    let single = fit_mixture(&data, &FitOptions { k: 1, ..Default::default() }).unwrap().mixture;
    let cfg = SegmentationConfig { search: 0, clamp: Clamp::Off, iters_per_level: 3, ..Default::default() };
    let out = segment(&pyr, &single, &f.model, Some(&case.connectivity), &cfg).unwrap();
    let start = single.mean_shape();
    let expected = single.component(0).regularize(&start, Clamp::Off).unwrap();
    assert!(out.shape.distance(&expected) < 1e-9);
    assert_eq!(out.trace.len(), 6);
}

#[test]
fn segmentation_trace_and_accuracy() {
    let f = fixture();
    let case = f.pop.render(13).unwrap();
    let pyr = build_pyramid(&case.image, 2).unwrap();
    let cfg = SegmentationConfig { mstep: MStepMode::Hard, ..Default::default() };
    let out = segment(&pyr, &f.mix, &f.model, Some(&case.connectivity), &cfg).unwrap();
    assert_eq!(out.trace.len(), 20);
    for t in &out.trace {
        let sum: f64 = t.responsibilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12 && t.responsibilities.iter().all(|&r| (0.0..=1.0).contains(&r)));
        assert!(t.prior_check.holds(1e-9), "{:?}", t.prior_check);
    }
    assert_eq!(out.trace[0].level, 1);
    assert_eq!(out.trace[19].level, 0);
    let errs = crate::eval::point_error(&out.shape, &case.shape).unwrap();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean < 1.5, "mean error {mean}");
    // Same inputs, same answer.
    let again = segment(&pyr, &f.mix, &f.model, Some(&case.connectivity), &cfg).unwrap();
    assert_eq!(out, again);
}

#[test]
fn level_mismatch_is_reported() {
    let f = fixture();
    let case = f.pop.render(12).unwrap();
    let pyr = build_pyramid(&case.image, 3).unwrap();
    let cfg = SegmentationConfig { n_levels: 3, ..Default::default() };
    assert!(matches!(
        segment(&pyr, &f.mix, &f.model, Some(&case.connectivity), &cfg),
        Err(Error::LevelMismatch { model: 2, pyramid: 3 })
    ));
}

#[test]
fn bad_initial_component_is_rejected() {
    let f = fixture();
    let case = f.pop.render(12).unwrap();
    let pyr = build_pyramid(&case.image, 2).unwrap();
    let cfg = SegmentationConfig { init: InitMode::ComponentMean(5), ..Default::default() };
    assert!(matches!(segment(&pyr, &f.mix, &f.model, None, &cfg), Err(Error::Config(_))));
}

#[test]
fn result_files_round_trip() {
    let f = fixture();
    let case = f.pop.render(12).unwrap();
    let pyr = build_pyramid(&case.image, 2).unwrap();
    let cfg = SegmentationConfig { iters_per_level: 2, init: InitMode::ComponentMean(1), ..Default::default() };
    let out = segment(&pyr, &f.mix, &f.model, Some(&case.connectivity), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    assert_eq!(SegmentationResult::read(dir.path()).unwrap(), out);
    let csv = std::fs::read_to_string(dir.path().join("landmarks.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + f.pop.m());
}
