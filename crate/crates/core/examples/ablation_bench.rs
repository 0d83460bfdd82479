//! Train on the default synthetic population and print the 2×2 ablation table.
//!
//! Pass a path to also write the full report as JSON.

use shapegem::pipeline::{run_bench, PipelineConfig};

fn main() -> shapegem::Result<()> {
    let report = run_bench(&PipelineConfig::default(), |msg| eprintln!("{msg}"))?;
    let t = &report.median_dice;
    println!("median Dice       K components   K = 1");
    println!("autoencoder       {:.4}         {:.4}", t.ae_gmm, t.ae_single);
    println!("raw profiles      {:.4}         {:.4}", t.raw_gmm, t.raw_single);
    println!("mixture ARI {:.3}, dims {:?}", report.mixture.ari, report.mixture.dims);
    for c in &report.cells {
        println!("ae={} gmm={} mean landmark error {:.3}", c.autoencoder, c.mixture, c.mean_error);
    }
    for (stage, secs) in &report.timing {
        println!("{stage:<20} {secs:.1}s");
    }
    if let Some(path) = std::env::args().nth(1) {
        report.save(path)?;
    }
    Ok(())
}
