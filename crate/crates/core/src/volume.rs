//! Scalar volumes on a regular grid.
//!
//! Voxel `(x, y, z)` lives at world position `origin + (x·sx, y·sy, z·sz)`.
//! Storage is x-fastest. Sampling clamps to the grid so that callers probing
//! near the image boundary always get a value back.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// A 3-D scalar image with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: Point3,
    data: Vec<f64>,
}

impl IntensityVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: Point3, data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::Config(format!("volume dims must all be >= 2, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("volume spacing must be positive, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Config("volume origin must be finite".into()));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::dim(format!("volume data has {} values, dims need {n}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("volume contains non-finite values".into()));
        }
        Ok(Self { dims, spacing, origin, data })
    }

    /// Volume filled with a single value.
    pub fn filled(dims: [usize; 3], spacing: [f64; 3], origin: Point3, value: f64) -> Result<Self> {
        Self::new(dims, spacing, origin, vec![value; dims[0] * dims[1] * dims[2]])
    }

    /// Build a volume by evaluating `f` at every voxel index.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: Point3,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, origin, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Smallest spacing component; the length of one voxel step used by the
    /// profile and search code.
    pub fn voxel_size(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    /// World position of a voxel center.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Point3 {
        [
            self.origin[0] + x as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + z as f64 * self.spacing[2],
        ]
    }

    /// Trilinear interpolation at a world point, clamped to the grid.
    pub fn sample(&self, p: Point3) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.dims[a];
            let u = ((p[a] - self.origin[a]) / self.spacing[a]).clamp(0.0, (n - 1) as f64);
            // NaN coordinates land on voxel 0.
            let u = if u.is_nan() { 0.0 } else { u };
            let i = (u.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let [x, y, z] = base;
        let [fx, fy, fz] = frac;
        let sx = 1;
        let sy = self.dims[0];
        let sz = self.dims[0] * self.dims[1];
        let i000 = self.index(x, y, z);
        let d = &self.data;
        let c00 = d[i000] * (1.0 - fx) + d[i000 + sx] * fx;
        let c10 = d[i000 + sy] * (1.0 - fx) + d[i000 + sy + sx] * fx;
        let c01 = d[i000 + sz] * (1.0 - fx) + d[i000 + sz + sx] * fx;
        let c11 = d[i000 + sz + sy] * (1.0 - fx) + d[i000 + sz + sy + sx] * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }

    /// Apply `f` to every value, keeping the geometry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.origin, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Gaussian pyramid; level 0 is the finest.
#[derive(Debug, Clone)]
pub struct VolumePyramid {
    levels: Vec<IntensityVolume>,
}

impl VolumePyramid {
    pub fn levels(&self) -> &[IntensityVolume] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &IntensityVolume {
        &self.levels[l]
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

const SMOOTH_RADIUS: isize = 2;

fn smoothing_kernel() -> [f64; 5] {
    let mut k = [0.0; 5];
    for (i, w) in k.iter_mut().enumerate() {
        let t = i as f64 - SMOOTH_RADIUS as f64;
        *w = (-0.5 * t * t).exp();
    }
    k
}

/// Separable Gaussian smoothing (sigma 1 voxel, radius 2) along one axis,
/// renormalizing the kernel over in-bounds taps.
fn smooth_axis(dims: [usize; 3], data: &[f64], axis: usize) -> Vec<f64> {
    let kernel = smoothing_kernel();
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let n = dims[axis] as isize;
    let mut out = vec![0.0; data.len()];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let idx = x + dims[0] * (y + dims[1] * z);
                let pos = [x, y, z][axis] as isize;
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for k in -SMOOTH_RADIUS..=SMOOTH_RADIUS {
                    let q = pos + k;
                    if q < 0 || q >= n {
                        continue;
                    }
                    let w = kernel[(k + SMOOTH_RADIUS) as usize];
                    let j = (idx as isize + k * stride as isize) as usize;
                    acc += w * data[j];
                    wsum += w;
                }
                out[idx] = acc / wsum;
            }
        }
    }
    out
}

fn downsample(vol: &IntensityVolume) -> Result<IntensityVolume> {
    let dims = vol.dims;
    let mut data = vol.data.clone();
    for axis in 0..3 {
        data = smooth_axis(dims, &data, axis);
    }
    let nd = [dims[0].div_ceil(2), dims[1].div_ceil(2), dims[2].div_ceil(2)];
    let spacing = [vol.spacing[0] * 2.0, vol.spacing[1] * 2.0, vol.spacing[2] * 2.0];
    IntensityVolume::from_fn(nd, spacing, vol.origin, |x, y, z| {
        data[2 * x + dims[0] * (2 * y + dims[1] * 2 * z)]
    })
}

/// Build an `n_levels` Gaussian pyramid. Level 0 is the input itself; each
/// coarser level keeps the origin and doubles the spacing.
pub fn build_pyramid(volume: &IntensityVolume, n_levels: usize) -> Result<VolumePyramid> {
    if n_levels == 0 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    let mut dims = volume.dims;
    for level in 1..n_levels {
        dims = [dims[0].div_ceil(2), dims[1].div_ceil(2), dims[2].div_ceil(2)];
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::TooManyLevels { level, dims });
        }
    }
    let mut levels = Vec::with_capacity(n_levels);
    levels.push(volume.clone());
    for _ in 1..n_levels {
        let next = downsample(levels.last().unwrap())?;
        levels.push(next);
    }
    Ok(VolumePyramid { levels })
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: String,
    raw: String,
}

const DTYPE: &str = "f32le";

fn raw_path_for(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

/// Write `<name>.json` plus `<name>.raw` (little-endian f32, x-fastest).
///
/// `path` names the JSON header; the payload goes next to it.
pub fn write_volume(volume: &IntensityVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw_path = raw_path_for(path);
    let raw_name = raw_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Format(format!("bad volume path {}", path.display())))?
        .to_string();
    let mut bytes = Vec::with_capacity(volume.len() * 4);
    for &v in &volume.data {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Format(format!("value {v} is not representable as f32")));
        }
        bytes.extend_from_slice(&f.to_le_bytes());
    }
    let header = VolumeHeader {
        dims: volume.dims,
        spacing: volume.spacing,
        origin: volume.origin,
        dtype: DTYPE.into(),
        raw: raw_name,
    };
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::json(path, e))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

/// Read a volume written by [`write_volume`].
pub fn read_volume(path: impl AsRef<Path>) -> Result<IntensityVolume> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: VolumeHeader = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: bad header: {e}", path.display())))?;
    if header.dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
    }
    let raw_path = path.parent().unwrap_or_else(|| Path::new(".")).join(&header.raw);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let n = header.dims.iter().product::<usize>();
    if bytes.len() != n * 4 {
        return Err(Error::Format(format!(
            "{}: payload has {} bytes, expected {}",
            raw_path.display(),
            bytes.len(),
            n * 4
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format(format!("{}: non-finite payload value", raw_path.display())));
    }
    IntensityVolume::new(header.dims, header.spacing, header.origin, data)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
