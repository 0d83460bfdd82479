//! Landmark configurations flattened into shape-space vectors.

use std::fs;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::volume::Point3;

/// `M` landmarks stored as `3M` coordinates, landmark `i` at `3i..3i+3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeVector {
    coords: Vec<f64>,
}

impl ShapeVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.len() % 3 != 0 {
            return Err(Error::dim(format!("shape length {} is not a positive multiple of 3", coords.len())));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::dim("shape has non-finite coordinates"));
        }
        Ok(Self { coords })
    }

    pub fn from_points(points: &[Point3]) -> Result<Self> {
        Self::new(points.iter().flat_map(|p| p.iter().copied()).collect())
    }

    pub(crate) fn from_dvector(v: DVector<f64>) -> Self {
        Self { coords: v.as_slice().to_vec() }
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coords)
    }

    /// Landmark count `M`.
    pub fn m(&self) -> usize {
        self.coords.len() / 3
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> Point3 {
        [self.coords[3 * i], self.coords[3 * i + 1], self.coords[3 * i + 2]]
    }

    pub fn set_point(&mut self, i: usize, p: Point3) {
        self.coords[3 * i..3 * i + 3].copy_from_slice(&p);
    }

    pub fn points(&self) -> impl Iterator<Item = Point3> + '_ {
        self.coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn centroid(&self) -> Point3 {
        let mut c = [0.0; 3];
        for p in self.points() {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        let m = self.m() as f64;
        c.map(|v| v / m)
    }

    /// Uniform scaling of every coordinate.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { coords: self.coords.iter().map(|c| c * factor).collect() }
    }

    pub fn translated(&self, t: Point3) -> Self {
        let mut coords = self.coords.clone();
        for c in coords.chunks_exact_mut(3) {
            for a in 0..3 {
                c[a] += t[a];
            }
        }
        Self { coords }
    }

    pub fn distance(&self, other: &ShapeVector) -> f64 {
        self.coords.iter().zip(&other.coords).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    /// Write `index,x,y,z` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("index,x,y,z\n");
        for (i, p) in self.points().enumerate() {
            out.push_str(&format!("{i},{},{},{}\n", p[0], p[1], p[2]));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut coords = Vec::new();
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Format(format!("{}:{}: expected 4 fields", path.display(), line_no + 1)));
            }
            let idx: usize = fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("{}:{}: bad index", path.display(), line_no + 1)))?;
            if idx != coords.len() / 3 {
                return Err(Error::Format(format!("{}:{}: landmarks out of order", path.display(), line_no + 1)));
            }
            for f in &fields[1..] {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("{}:{}: bad coordinate", path.display(), line_no + 1)))?;
                coords.push(v);
            }
        }
        Self::new(coords).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Training shapes sharing one landmark count and coordinate frame.
#[derive(Debug, Clone)]
pub struct ShapeDataset {
    shapes: Vec<ShapeVector>,
}

impl ShapeDataset {
    pub fn new(shapes: Vec<ShapeVector>) -> Result<Self> {
        if shapes.len() < 2 {
            return Err(Error::Config(format!("dataset needs at least 2 shapes, got {}", shapes.len())));
        }
        let m = shapes[0].m();
        if let Some((i, s)) = shapes.iter().enumerate().find(|(_, s)| s.m() != m) {
            return Err(Error::dim(format!("shape {i} has {} landmarks, expected {m}", s.m())));
        }
        Ok(Self { shapes })
    }

    pub fn shapes(&self) -> &[ShapeVector] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn m(&self) -> usize {
        self.shapes[0].m()
    }

    pub fn ambient_dim(&self) -> usize {
        3 * self.m()
    }

    pub fn mean(&self) -> ShapeVector {
        let d = self.ambient_dim();
        let mut acc = vec![0.0; d];
        for s in &self.shapes {
            for (a, c) in acc.iter_mut().zip(s.coords()) {
                *a += c;
            }
        }
        let n = self.len() as f64;
        ShapeVector { coords: acc.into_iter().map(|v| v / n).collect() }
    }
}
