//! Fit a three-component subspace mixture to synthetic training shapes and
//! compare the recovered labels with the planted classes.

use shapegem::eval::adjusted_rand_index;
use shapegem::mixture::{fit_mixture, FitOptions};
use shapegem::shape::ShapeDataset;
use shapegem::synth::{generate_population, SynthConfig};

fn main() -> shapegem::Result<()> {
    let pop = generate_population(&SynthConfig::default())?;
    let data = ShapeDataset::new(pop.shapes(pop.train_indices())?)?;
    let fit = fit_mixture(&data, &FitOptions::default())?;
    println!("{} shapes in R^{}", data.len(), data.ambient_dim());
    for (k, c) in fit.mixture.components().iter().enumerate() {
        println!("component {k}: pi {:.3}, d {}, lambda {:.2?}, sigma^2 {:.2e}", c.pi(), c.d(), c.lambda().as_slice(), c.sigma2());
    }
    println!("log-likelihood per iteration: {:.3?}", fit.log_likelihood);
    println!("ARI against planted classes: {:.3}", adjusted_rand_index(&fit.labels, &pop.components(pop.train_indices())));

    // Held-out shapes are assigned by their responsibilities.
    for case in pop.test_indices().take(5) {
        let r = fit.mixture.responsibilities(&pop.shape(case)?)?;
        println!("test case {case}: planted {}, responsibilities {:.3?}", pop.params(case).component, r.as_slice());
    }
    Ok(())
}
