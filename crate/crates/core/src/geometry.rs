//! Uniform grids on the flat torus T^d = R^d / Z^d, d = 1 or 2.
//!
//! Points are stored as `Vec2`; in dimension one the second coordinate is
//! kept at zero.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGeometry {
    pub dim: usize,
    /// Nodes per axis.
    pub n: usize,
}

impl TorusGeometry {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidParameter(format!("dimension {dim} (expected 1 or 2)")));
        }
        if n < 16 {
            return Err(Error::InvalidParameter(format!("grid size {n} (expected >= 16)")));
        }
        Ok(Self { dim, n })
    }

    pub fn len(&self) -> usize {
        if self.dim == 1 {
            self.n
        } else {
            self.n * self.n
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Grid coordinates of a node (second is 0 in 1D).
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    /// Node index of (possibly out of range) integer coordinates, wrapped.
    pub fn index(&self, i: i64, j: i64) -> usize {
        let n = self.n as i64;
        let i = i.rem_euclid(n) as usize;
        if self.dim == 1 {
            i
        } else {
            i + self.n * j.rem_euclid(n) as usize
        }
    }

    pub fn node_point(&self, idx: usize) -> Vec2 {
        let (i, j) = self.coords(idx);
        let h = self.spacing();
        Vec2::new(i as f64 * h, j as f64 * h)
    }

    pub fn wrap(&self, x: Vec2) -> Vec2 {
        let w = Vec2::new(wrap_unit(x[0]), wrap_unit(x[1]));
        self.restrict(w)
    }

    /// Zero the inactive coordinate in dimension one.
    pub fn restrict(&self, mut x: Vec2) -> Vec2 {
        if self.dim == 1 {
            x[1] = 0.0;
        }
        x
    }

    /// Shortest representative of `b - a` modulo Z^d.
    pub fn displacement(&self, a: Vec2, b: Vec2) -> Vec2 {
        let d = b - a;
        self.restrict(Vec2::new(d[0] - d[0].round(), d[1] - d[1].round()))
    }

    pub fn distance(&self, a: Vec2, b: Vec2) -> f64 {
        self.displacement(a, b).norm()
    }

    pub fn nearest_node(&self, x: Vec2) -> usize {
        let n = self.n as f64;
        let i = (x[0] * n).round() as i64;
        let j = (x[1] * n).round() as i64;
        self.index(i, j)
    }

    /// Lower-left node of the cell containing `x` (unwrapped integer
    /// coordinates) and the fractional offsets inside the cell.
    pub fn cell_of(&self, x: Vec2) -> ((i64, i64), (f64, f64)) {
        let n = self.n as f64;
        let sx = x[0] * n;
        let sy = x[1] * n;
        let i = sx.floor();
        let j = if self.dim == 1 { 0.0 } else { sy.floor() };
        let fy = if self.dim == 1 { 0.0 } else { sy - j };
        ((i as i64, j as i64), (sx - i, fy))
    }

    /// Neighbour indices along the axes (east, west, north, south).
    pub fn axis_neighbours(&self, idx: usize) -> Vec<usize> {
        let (i, j) = self.coords(idx);
        let (i, j) = (i as i64, j as i64);
        let mut out = vec![self.index(i + 1, j), self.index(i - 1, j)];
        if self.dim == 2 {
            out.push(self.index(i, j + 1));
            out.push(self.index(i, j - 1));
        }
        out
    }
}

pub fn wrap_unit(v: f64) -> f64 {
    let r = v - v.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_and_displacement() {
        let g = TorusGeometry::new(2, 16).unwrap();
        let w = g.wrap(Vec2::new(-0.25, 3.5));
        assert!((w - Vec2::new(0.75, 0.5)).norm() < 1e-15);
        let d = g.displacement(Vec2::new(0.95, 0.0), Vec2::new(0.05, 0.0));
        assert!((d[0] - 0.1).abs() < 1e-12);
        assert_eq!(wrap_unit(-1e-20), 0.0);
    }

    #[test]
    fn index_round_trip() {
        let g = TorusGeometry::new(2, 16).unwrap();
        for idx in 0..g.len() {
            let (i, j) = g.coords(idx);
            assert_eq!(g.index(i as i64, j as i64), idx);
            assert_eq!(g.nearest_node(g.node_point(idx)), idx);
        }
        assert_eq!(g.index(-1, -1), 255);
    }
}
