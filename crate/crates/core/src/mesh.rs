//! Triangle connectivity over landmark indices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Triangles as landmark index triples, counter-clockwise seen from outside.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connectivity {
    triangles: Vec<[usize; 3]>,
    n_vertices: usize,
}

impl Connectivity {
    pub fn new(triangles: Vec<[usize; 3]>, n_vertices: usize) -> Result<Self> {
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n_vertices)) {
            return Err(Error::dim(format!("triangle {t:?} references a vertex >= {n_vertices}")));
        }
        Ok(Self { triangles, n_vertices })
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }
}

/// Latitude-longitude sphere grid with `g` rings (poles included) and `g`
/// meridians. The two pole rings collapse to single vertices, giving
/// `g·(g−2) + 2` vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SphereGrid {
    g: usize,
}

impl SphereGrid {
    pub fn new(g: usize) -> Result<Self> {
        if g < 4 {
            return Err(Error::Config(format!("sphere grid needs g >= 4, got {g}")));
        }
        Ok(Self { g })
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn n_vertices(&self) -> usize {
        self.g * (self.g - 2) + 2
    }

    /// Polar angle of ring `i` in `0..g`.
    pub fn theta(&self, ring: usize) -> f64 {
        std::f64::consts::PI * ring as f64 / (self.g - 1) as f64
    }

    /// Azimuth of meridian `j` in `0..g`.
    pub fn phi(&self, meridian: usize) -> f64 {
        2.0 * std::f64::consts::PI * meridian as f64 / self.g as f64
    }

    pub fn north(&self) -> usize {
        0
    }

    pub fn south(&self) -> usize {
        self.n_vertices() - 1
    }

    /// Vertex index of interior ring `ring` (1..g−1) and meridian `j`.
    pub fn vertex(&self, ring: usize, meridian: usize) -> usize {
        debug_assert!(ring >= 1 && ring <= self.g - 2);
        1 + (ring - 1) * self.g + meridian % self.g
    }

    /// `(θ, φ)` for every vertex, in vertex order.
    pub fn angles(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.n_vertices());
        out.push((0.0, 0.0));
        for ring in 1..self.g - 1 {
            for j in 0..self.g {
                out.push((self.theta(ring), self.phi(j)));
            }
        }
        out.push((std::f64::consts::PI, 0.0));
        out
    }

    /// Unit direction for every vertex.
    pub fn directions(&self) -> Vec<[f64; 3]> {
        self.angles().into_iter().map(|(t, p)| direction(t, p)).collect()
    }

    /// Outward-facing triangulation of the grid.
    pub fn connectivity(&self) -> Connectivity {
        let g = self.g;
        let mut tris = Vec::with_capacity(2 * g * (g - 2));
        for j in 0..g {
            tris.push([self.north(), self.vertex(1, j), self.vertex(1, j + 1)]);
        }
        for ring in 1..g - 2 {
            for j in 0..g {
                let a = self.vertex(ring, j);
                let b = self.vertex(ring, j + 1);
                let c = self.vertex(ring + 1, j);
                let d = self.vertex(ring + 1, j + 1);
                tris.push([a, c, d]);
                tris.push([a, d, b]);
            }
        }
        for j in 0..g {
            tris.push([self.south(), self.vertex(g - 2, j + 1), self.vertex(g - 2, j)]);
        }
        Connectivity::new(tris, self.n_vertices()).expect("grid indices are in range")
    }
}

/// Unit vector for polar angle `theta` and azimuth `phi`.
pub fn direction(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}
