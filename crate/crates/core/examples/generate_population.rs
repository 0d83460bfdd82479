//! Generate a small synthetic population and write it to disk with its
//! manifest. Pass an output directory, default `synth_out`.

use shapegem::synth::{generate_population, Split, SynthConfig};

fn main() -> shapegem::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synth_out".into());
    let cfg = SynthConfig { dims: [48; 3], base_radius: 14.0, bump_amplitude: 4.5, n_cases: 10, n_train: 8, ..Default::default() };
    let pop = generate_population(&cfg)?;
    println!("{} landmarks per shape, {} components", pop.m(), cfg.k);
    for (k, r) in pop.template_max_radii()?.iter().enumerate() {
        println!("component {k}: {} bumps, template max radius {r:.2}", cfg.bump_count(k));
    }
    let manifest = pop.write(&out)?;
    println!(
        "wrote {} training and {} test cases to {out}",
        manifest.split(Split::Train).count(),
        manifest.split(Split::Test).count()
    );
    Ok(())
}
