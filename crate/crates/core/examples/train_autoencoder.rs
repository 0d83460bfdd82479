//! Train one sparse autoencoder on noisy step-edge profiles and inspect the
//! loss curve, reconstruction and codes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapegem::autoencoder::{SparseAutoencoder, TrainConfig};

fn main() -> shapegem::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let edge = rng.random_range(8.0..12.0);
            (0..20).map(|i| if (i as f64) < edge { 0.2 } else { 0.8 } + 0.02 * (rng.random::<f64>() - 0.5)).collect()
        })
        .collect();
    let cfg = TrainConfig { sparsity_weight: 0.0, lr: 1.0, epochs: 2000, ..Default::default() };
    let mut ae = SparseAutoencoder::init(20, 0)?;
    let loss = ae.train(&data, &cfg)?;
    for epoch in [0, 9, 99, 999, 1999] {
        println!("epoch {:>4}: loss {:.5}", epoch + 1, loss[epoch]);
    }
    println!("layer sizes {:?}", ae.layer_dims());
    println!("reconstruction MSE {:.5}", ae.reconstruction_mse(&data)?);
    let code = ae.encode(&data[0])?;
    println!("code of the first profile {code:.3?}");
    Ok(())
}
