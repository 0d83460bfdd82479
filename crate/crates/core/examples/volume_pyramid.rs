//! Build a three-level pyramid from a ball phantom and show that world
//! coordinates stay fixed while the voxel size doubles per level.

use shapegem::volume::{build_pyramid, IntensityVolume};

fn main() -> shapegem::Result<()> {
    let centre = [31.5, 31.5, 31.5];
    let ball = IntensityVolume::from_fn([64; 3], [1.0; 3], [0.0; 3], |x, y, z| {
        let d = ((x as f64 - centre[0]).powi(2) + (y as f64 - centre[1]).powi(2) + (z as f64 - centre[2]).powi(2)).sqrt();
        if d < 20.0 { 0.8 } else { 0.2 }
    })?;
    let pyramid = build_pyramid(&ball, 3)?;
    let probe = [31.5, 31.5, 52.0];
    for (l, vol) in pyramid.levels().iter().enumerate() {
        println!(
            "level {l}: dims {:?}, voxel {:.1}, value at centre {:.3}, at {probe:?} {:.3}",
            vol.dims(),
            vol.voxel_size(),
            vol.sample(centre),
            vol.sample(probe)
        );
    }
    Ok(())
}
