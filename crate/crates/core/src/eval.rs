//! Segmentation quality metrics and report files.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Connectivity;
use crate::shape::ShapeVector;
use crate::volume::{IntensityVolume, Point3};

/// Euclidean distance between corresponding landmarks.
pub fn point_error(a: &ShapeVector, b: &ShapeVector) -> Result<Vec<f64>> {
    if a.m() != b.m() {
        return Err(Error::dim(format!("{} vs {} landmarks", a.m(), b.m())));
    }
    Ok(a.points()
        .zip(b.points())
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .collect())
}

/// `2|A∩B| / (|A|+|B|)` over voxels with value > 0.5; 1.0 when both are empty.
pub fn dice(pred: &IntensityVolume, truth: &IntensityVolume) -> Result<f64> {
    if pred.dims() != truth.dims() {
        return Err(Error::dim(format!("label dims {:?} vs {:?}", pred.dims(), truth.dims())));
    }
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let (p, t) = (p > 0.5, t > 0.5);
        a += p as usize;
        b += t as usize;
        both += (p && t) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len();
    let choose2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

struct Tri2 {
    // (y, z) corners in voxel units and x per corner.
    yz: [[f64; 2]; 3],
    x: [f64; 3],
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

enum Hit {
    Miss,
    At(f64),
    Degenerate,
}

fn ray_hit(t: &Tri2, p: [f64; 2]) -> Hit {
    let area = edge(t.yz[0], t.yz[1], t.yz[2]);
    let scale = {
        let dy = (t.yz[1][0] - t.yz[0][0]).abs() + (t.yz[2][0] - t.yz[0][0]).abs();
        let dz = (t.yz[1][1] - t.yz[0][1]).abs() + (t.yz[2][1] - t.yz[0][1]).abs();
        (dy + dz).powi(2).max(f64::MIN_POSITIVE)
    };
    let w = [edge(t.yz[1], t.yz[2], p), edge(t.yz[2], t.yz[0], p), edge(t.yz[0], t.yz[1], p)];
    let tol = 1e-10 * scale;
    let pos = w.iter().all(|&v| v >= -tol);
    let neg = w.iter().all(|&v| v <= tol);
    if !(pos || neg) {
        return Hit::Miss;
    }
    if area.abs() <= tol || w.iter().any(|v| v.abs() <= tol) {
        return Hit::Degenerate;
    }
    let x = (w[0] * t.x[0] + w[1] * t.x[1] + w[2] * t.x[2]) / area;
    Hit::At(x)
}

/// Parity scan conversion of a closed triangle mesh onto a voxel grid.
///
/// Each `(y, z)` row of voxel centers is intersected with the mesh along
/// `+x`; centers preceded by an odd number of crossings are inside. Rays
/// that graze an edge or vertex are nudged by 1e-6 voxel and retried.
pub fn voxelize(
    shape: &ShapeVector,
    connectivity: &Connectivity,
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: Point3,
) -> Result<IntensityVolume> {
    if connectivity.n_vertices() != shape.m() {
        return Err(Error::dim(format!(
            "connectivity has {} vertices, shape has {} landmarks",
            connectivity.n_vertices(),
            shape.m()
        )));
    }
    let to_voxel = |p: Point3| [0, 1, 2].map(|a| (p[a] - origin[a]) / spacing[a]);
    let tris: Vec<Tri2> = connectivity
        .triangles()
        .iter()
        .map(|t| {
            let v = t.map(|i| to_voxel(shape.point(i)));
            Tri2 { yz: v.map(|q| [q[1], q[2]]), x: v.map(|q| q[0]) }
        })
        .collect();

    // Bucket triangles by the z rows their bounding box spans.
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); dims[2]];
    for (ti, t) in tris.iter().enumerate() {
        let zmin = t.yz.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
        let zmax = t.yz.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        if zmax < -1.0 || zmin > dims[2] as f64 {
            continue;
        }
        let lo = (zmin - 1e-3).floor().max(0.0) as usize;
        let hi = ((zmax + 1e-3).ceil().max(0.0) as usize).min(dims[2] - 1);
        for b in buckets.iter_mut().take(hi + 1).skip(lo) {
            b.push(ti);
        }
    }

    let mut data = vec![0.0; dims[0] * dims[1] * dims[2]];
    let mut crossings: Vec<f64> = Vec::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            let mut attempt = 0;
            loop {
                let jitter = 1e-6 * attempt as f64;
                let p = [y as f64 + jitter, z as f64 + 0.754_877_666 * jitter];
                crossings.clear();
                let mut degenerate = false;
                for &ti in &buckets[z] {
                    let t = &tris[ti];
                    let ymin = t.yz.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
                    let ymax = t.yz.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
                    if p[0] < ymin - 1e-9 || p[0] > ymax + 1e-9 {
                        continue;
                    }
                    match ray_hit(t, p) {
                        Hit::Miss => {}
                        Hit::At(x) => crossings.push(x),
                        Hit::Degenerate => {
                            degenerate = true;
                            break;
                        }
                    }
                }
                if degenerate && attempt < 16 {
                    attempt += 1;
                    continue;
                }
                break;
            }
            if crossings.len() % 2 == 1 {
                return Err(Error::NonWatertight { y, z, crossings: crossings.len() });
            }
            if crossings.is_empty() {
                continue;
            }
            crossings.sort_by(|a, b| a.total_cmp(b));
            let mut k = 0;
            for x in 0..dims[0] {
                let xc = x as f64;
                while k < crossings.len() && crossings[k] < xc {
                    k += 1;
                }
                if k % 2 == 1 {
                    data[x + dims[0] * (y + dims[1] * z)] = 1.0;
                }
            }
        }
    }
    IntensityVolume::new(dims, spacing, origin, data)
}

/// Per-landmark distances plus summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip)]
    pub distances: Vec<f64>,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_landmarks: usize,
    pub mean_distance: f64,
    pub median_distance: f64,
    pub max_distance: f64,
    pub dice: Option<f64>,
    pub outlier_threshold: f64,
    pub outlier_count: usize,
}

pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 10.0;

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl EvalReport {
    pub fn new(distances: Vec<f64>, dice: Option<f64>, outlier_threshold: f64) -> Self {
        let n = distances.len();
        let mean = distances.iter().sum::<f64>() / n as f64;
        let max = distances.iter().copied().fold(0.0, f64::max);
        let outliers = distances.iter().filter(|&&d| d > outlier_threshold).count();
        let summary = EvalSummary {
            n_landmarks: n,
            mean_distance: mean,
            median_distance: median(&distances),
            max_distance: max,
            dice,
            outlier_threshold,
            outlier_count: outliers,
        };
        Self { distances, summary }
    }

    /// Compare a predicted shape with ground truth; Dice is included when a
    /// truth label volume and mesh connectivity are given.
    pub fn evaluate(
        pred: &ShapeVector,
        truth: &ShapeVector,
        labels: Option<(&IntensityVolume, &Connectivity)>,
        outlier_threshold: f64,
    ) -> Result<Self> {
        let distances = point_error(pred, truth)?;
        let dice = match labels {
            Some((label, conn)) => {
                let vox = voxelize(pred, conn, label.dims(), label.spacing(), label.origin())?;
                Some(dice(&vox, label)?)
            }
            None => None,
        };
        Ok(Self::new(distances, dice, outlier_threshold))
    }
}

/// Write `report.json` and `distances.csv` into `dir`.
pub fn write_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json(&json_path, e))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    let csv_path = dir.join("distances.csv");
    let mut csv = String::from("landmark,distance\n");
    for (i, d) in report.distances.iter().enumerate() {
        csv.push_str(&format!("{i},{d}\n"));
    }
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))
}

/// Read back a report written by [`write_report`].
pub fn read_report(dir: impl AsRef<Path>) -> Result<EvalReport> {
    let dir = dir.as_ref();
    let json_path = dir.join("report.json");
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let mut report: EvalReport = serde_json::from_str(&text).map_err(|e| Error::json(&json_path, e))?;
    let csv_path = dir.join("distances.csv");
    let csv = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    report.distances = csv
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad row {l:?}", csv_path.display())))
        })
        .collect::<Result<_>>()?;
    Ok(report)
}
