//! Score perturbed landmarks against a synthetic ground truth: per-landmark
//! distances, outliers and Dice after voxelizing the landmark mesh.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapegem::eval::{EvalReport, DEFAULT_OUTLIER_THRESHOLD};
use shapegem::synth::{generate_population, SynthConfig};

fn main() -> shapegem::Result<()> {
    let pop = generate_population(&SynthConfig { n_cases: 2, n_train: 1, ..Default::default() })?;
    let case = pop.render(1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for sigma in [0.0, 0.5, 1.0, 2.0] {
        let mut pred = case.shape.clone();
        for i in 0..pred.m() {
            let p = pred.point(i);
            let jitter = |rng: &mut ChaCha8Rng| sigma * (rng.random::<f64>() - 0.5) * 2.0;
            pred.set_point(i, [p[0] + jitter(&mut rng), p[1] + jitter(&mut rng), p[2] + jitter(&mut rng)]);
        }
        let report = EvalReport::evaluate(&pred, &case.shape, Some((&case.label, &case.connectivity)), DEFAULT_OUTLIER_THRESHOLD)?;
        let s = &report.summary;
        println!(
            "jitter {sigma:.1}: mean {:.3}, median {:.3}, max {:.3}, Dice {:.4}",
            s.mean_distance,
            s.median_distance,
            s.max_distance,
            s.dice.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
