//! Cubic convolution (Catmull-Rom) interpolation on uniform grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat2, TorusGeometry, Vec2};

/// Weights and their first two derivatives (in the fractional offset) for
/// nodes -1, 0, 1, 2.
fn weights(f: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let f2 = f * f;
    let f3 = f2 * f;
    (
        [
            0.5 * (-f3 + 2.0 * f2 - f),
            0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
            0.5 * (-3.0 * f3 + 4.0 * f2 + f),
            0.5 * (f3 - f2),
        ],
        [
            0.5 * (-3.0 * f2 + 4.0 * f - 1.0),
            0.5 * (9.0 * f2 - 10.0 * f),
            0.5 * (-9.0 * f2 + 8.0 * f + 1.0),
            0.5 * (3.0 * f2 - 2.0 * f),
        ],
        [-3.0 * f + 2.0, 9.0 * f - 5.0, -9.0 * f + 4.0, 3.0 * f - 1.0],
    )
}

/// Value, gradient and Hessian of the tensor cubic interpolant.
///
/// `fetch(i, j)` returns the node value at integer coordinates (the caller
/// handles wrapping or clamping), `base` is the lower-left node of the cell,
/// `frac` the offsets inside it and `h` the spacings.
pub fn cubic_eval(
    dim: usize,
    fetch: impl Fn(i64, i64) -> f64,
    base: (i64, i64),
    frac: (f64, f64),
    h: (f64, f64),
) -> (f64, Vec2, Mat2) {
    let (wx, dx, ddx) = weights(frac.0);
    if dim == 1 {
        let mut v = 0.0;
        let mut g = 0.0;
        let mut gg = 0.0;
        for k in 0..4 {
            let u = fetch(base.0 + k as i64 - 1, 0);
            v += wx[k] * u;
            g += dx[k] * u;
            gg += ddx[k] * u;
        }
        return (
            v,
            Vec2::new(g / h.0, 0.0),
            Mat2::new(gg / (h.0 * h.0), 0.0, 0.0, 0.0),
        );
    }
    let (wy, dy, ddy) = weights(frac.1);
    let mut v = 0.0;
    let mut gx = 0.0;
    let mut gy = 0.0;
    let mut hxx = 0.0;
    let mut hyy = 0.0;
    let mut hxy = 0.0;
    for b in 0..4 {
        for a in 0..4 {
            let u = fetch(base.0 + a as i64 - 1, base.1 + b as i64 - 1);
            v += wx[a] * wy[b] * u;
            gx += dx[a] * wy[b] * u;
            gy += wx[a] * dy[b] * u;
            hxx += ddx[a] * wy[b] * u;
            hyy += wx[a] * ddy[b] * u;
            hxy += dx[a] * dy[b] * u;
        }
    }
    (
        v,
        Vec2::new(gx / h.0, gy / h.1),
        Mat2::new(
            hxx / (h.0 * h.0),
            hxy / (h.0 * h.1),
            hxy / (h.0 * h.1),
            hyy / (h.1 * h.1),
        ),
    )
}

/// A periodic scalar table on a torus grid with cubic interpolation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicTable {
    pub geometry: TorusGeometry,
    pub values: Vec<f64>,
}

impl PeriodicTable {
    pub fn new(geometry: TorusGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::GeometryMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                geometry.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tabulated field"));
        }
        Ok(Self { geometry, values })
    }

    pub fn sample(geometry: TorusGeometry, f: impl Fn(Vec2) -> f64) -> Self {
        let values = (0..geometry.len()).map(|i| f(geometry.node_point(i))).collect();
        Self { geometry, values }
    }

    pub fn eval(&self, x: Vec2) -> (f64, Vec2, Mat2) {
        let g = &self.geometry;
        let (base, frac) = g.cell_of(x);
        let h = g.spacing();
        cubic_eval(g.dim, |i, j| self.values[g.index(i, j)], base, frac, (h, h))
    }

    pub fn value(&self, x: Vec2) -> f64 {
        self.eval(x).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn reproduces_nodes_and_smooth_functions() {
        let g = TorusGeometry::new(2, 64).unwrap();
        let f = |x: Vec2| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos();
        let t = PeriodicTable::sample(g, f);
        for idx in [0, 17, 300, 4095] {
            let p = g.node_point(idx);
            assert!((t.value(p) - f(p)).abs() < 1e-13);
        }
        let p = Vec2::new(0.313, 0.771);
        let (v, grad, _) = t.eval(p);
        assert!((v - f(p)).abs() < 1e-4);
        let gx = 2.0 * PI * (2.0 * PI * p[0]).cos() * (2.0 * PI * p[1]).cos();
        assert!((grad[0] - gx).abs() < 1e-2);
    }
}
