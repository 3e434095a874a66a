//! Discrete superdifferentials of semiconcave grid functions, singular and
//! critical sets, and the minimal-energy selection c + D⁺u ∋ q ↦ min ⟨Aq,q⟩.

use crate::error::{Error, Result};
use crate::geometry::{TorusGeometry, Vec2};
use crate::system::SystemSpec;
use crate::weakkam::ScalarField;

/// Interval (1D) or convex polygon (2D) of covectors.
///
/// In 1D the vertices are `[p⁺, p⁻]` (right then left one-sided slope); in
/// 2D they are the hull vertices in counter-clockwise order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexCovectorSet {
    pub vertices: Vec<Vec2>,
    pub base_point: Vec2,
    pub dim: usize,
}

impl ConvexCovectorSet {
    pub fn singleton(p: Vec2, base_point: Vec2, dim: usize) -> Self {
        Self { vertices: vec![p], base_point, dim }
    }

    pub fn is_singleton(&self) -> bool {
        self.vertices.len() == 1
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                d = d.max((a - b).norm());
            }
        }
        d
    }

    /// Euclidean distance from q to the set (0 inside).
    pub fn distance_to(&self, q: Vec2) -> f64 {
        match self.vertices.len() {
            1 => (q - self.vertices[0]).norm(),
            2 => segment_distance(q, self.vertices[0], self.vertices[1]),
            _ => {
                if polygon_contains(&self.vertices, q) {
                    0.0
                } else {
                    let n = self.vertices.len();
                    (0..n)
                        .map(|i| segment_distance(q, self.vertices[i], self.vertices[(i + 1) % n]))
                        .fold(f64::INFINITY, f64::min)
                }
            }
        }
    }

    /// Argmin of ⟨A q, q⟩ over q ∈ shift + set.
    pub fn min_energy_point(&self, a: &nalgebra::Matrix2<f64>, shift: Vec2) -> Vec2 {
        let pts: Vec<Vec2> = self.vertices.iter().map(|v| v + shift).collect();
        let energy = |q: &Vec2| q.dot(&(a * q));
        match pts.len() {
            1 => pts[0],
            2 => segment_min_energy(a, pts[0], pts[1]),
            n => {
                if polygon_contains(&pts, Vec2::zeros()) {
                    return Vec2::zeros();
                }
                let mut best = pts[0];
                for i in 0..n {
                    let q = segment_min_energy(a, pts[i], pts[(i + 1) % n]);
                    if energy(&q) < energy(&best) {
                        best = q;
                    }
                }
                best
            }
        }
    }

    /// Cross-product convexity test of the 2D vertex list.
    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return true;
        }
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            cross(b - a, c - b) >= -1e-12
        })
    }
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn segment_distance(q: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let l2 = d.norm_squared();
    if l2 == 0.0 {
        return (q - a).norm();
    }
    let s = ((q - a).dot(&d) / l2).clamp(0.0, 1.0);
    (q - (a + d * s)).norm()
}

fn segment_min_energy(m: &nalgebra::Matrix2<f64>, a: Vec2, b: Vec2) -> Vec2 {
    let d = b - a;
    let den = d.dot(&(m * d));
    if den <= 0.0 {
        return a;
    }
    let s = (-a.dot(&(m * d)) / den).clamp(0.0, 1.0);
    a + d * s
}

fn polygon_contains(poly: &[Vec2], q: Vec2) -> bool {
    let n = poly.len();
    (0..n).all(|i| cross(poly[(i + 1) % n] - poly[i], q - poly[i]) >= -1e-14)
}

/// Convex hull (counter-clockwise, no collinear vertices). Degenerate
/// inputs give one point or a segment.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut p: Vec<Vec2> = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup_by(|a, b| (*a - *b).norm() < 1e-15);
    if p.len() <= 2 {
        return p;
    }
    let mut lower: Vec<Vec2> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 1] - lower[lower.len() - 2], q - lower[lower.len() - 1]) <= 1e-15 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 1] - upper[upper.len() - 2], q - upper[upper.len() - 1]) <= 1e-15 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() == 1 {
        // all points collinear with coinciding ends
        return vec![p[0], p[p.len() - 1]];
    }
    lower
}

const RING: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub x: Vec2,
    pub node: usize,
    pub singular: bool,
}

#[derive(Debug, Clone)]
pub struct SingularComponent {
    pub cells: Vec<usize>,
    /// The component touches the boundary of the fundamental window.
    pub closure_flag: bool,
    pub contains_critical: bool,
}

/// Superdifferentials at every node of a grid function, with the
/// singular/critical classification at cohomology c.
#[derive(Debug, Clone)]
pub struct SuperdiffGrid {
    pub geometry: TorusGeometry,
    pub c: Vec2,
    pub sets: Vec<ConvexCovectorSet>,
    pub central: Vec<Vec2>,
    pub singular: Vec<bool>,
    pub critical: Vec<bool>,
    /// Robust estimate of the gradient Lipschitz constant on smooth parts.
    pub curvature: f64,
    pub sing_tol: f64,
    pub crit_tol: f64,
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let k = ((v.len() - 1) as f64 * q).round() as usize;
    v[k]
}

impl SuperdiffGrid {
    pub fn new(u: &ScalarField, spec: &SystemSpec) -> Result<Self> {
        let g = u.geometry;
        if g.dim != spec.dim {
            return Err(Error::GeometryMismatch("field and system dimension differ".into()));
        }
        if u.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("superdifferential stencil"));
        }
        let h = g.spacing();
        let at = |i: i64, j: i64| u.values[g.index(i, j)];

        // second differences along axes (and diagonals in 2D)
        let mut d2 = Vec::with_capacity(g.len() * 4);
        let mut pos_max: f64 = 0.0;
        for idx in 0..g.len() {
            let (i, j) = g.coords(idx);
            let (i, j) = (i as i64, j as i64);
            let mut dirs = vec![((1, 0), 1.0)];
            if g.dim == 2 {
                dirs.extend([((0, 1), 1.0), ((1, 1), 2.0), ((1, -1), 2.0)]);
            }
            for ((a, b), s) in dirs {
                let v = (at(i + a, j + b) - 2.0 * at(i, j) + at(i - a, j - b)) / (s * h * h);
                pos_max = pos_max.max(v);
                d2.push(v.abs());
            }
        }
        let curvature = pos_max.max(percentile(d2, 0.9));
        let sing_tol = (4.0 * h * curvature).max(1e-6 * (1.0 + u.lipschitz));
        let crit_tol = 0.5 * sing_tol;

        let mut sets = Vec::with_capacity(g.len());
        let mut central = Vec::with_capacity(g.len());
        for idx in 0..g.len() {
            let (i, j) = g.coords(idx);
            let (i, j) = (i as i64, j as i64);
            let base = g.node_point(idx);
            let cg = if g.dim == 1 {
                Vec2::new((at(i + 1, 0) - at(i - 1, 0)) / (2.0 * h), 0.0)
            } else {
                Vec2::new(
                    (at(i + 1, j) - at(i - 1, j)) / (2.0 * h),
                    (at(i, j + 1) - at(i, j - 1)) / (2.0 * h),
                )
            };
            central.push(cg);
            let set = if g.dim == 1 {
                let kink = -2.0 * curvature * h * h - 1e-12;
                let dd = |k: i64| at(k + 1, 0) - 2.0 * at(k, 0) + at(k - 1, 0);
                let right = if dd(i + 1) >= kink {
                    (-3.0 * at(i, 0) + 4.0 * at(i + 1, 0) - at(i + 2, 0)) / (2.0 * h)
                } else {
                    (at(i + 1, 0) - at(i, 0)) / h
                };
                let left = if dd(i - 1) >= kink {
                    (3.0 * at(i, 0) - 4.0 * at(i - 1, 0) + at(i - 2, 0)) / (2.0 * h)
                } else {
                    (at(i, 0) - at(i - 1, 0)) / h
                };
                if (left - right).abs() <= sing_tol {
                    ConvexCovectorSet::singleton(cg, base, 1)
                } else {
                    ConvexCovectorSet {
                        vertices: vec![Vec2::new(right, 0.0), Vec2::new(left, 0.0)],
                        base_point: base,
                        dim: 1,
                    }
                }
            } else {
                let u0 = at(i, j);
                let mut grads = [Vec2::zeros(); 8];
                for k in 0..8 {
                    let (a1, b1) = RING[k];
                    let (a2, b2) = RING[(k + 1) % 8];
                    let du1 = at(i + a1, j + b1) - u0;
                    let du2 = at(i + a2, j + b2) - u0;
                    let m = nalgebra::Matrix2::new(a1 as f64 * h, b1 as f64 * h, a2 as f64 * h, b2 as f64 * h);
                    grads[k] = m.try_inverse().expect("ring triangles are nondegenerate")
                        * Vec2::new(du1, du2);
                }
                let centers = cluster(&grads, sing_tol);
                let hull = convex_hull(&centers);
                let set = ConvexCovectorSet { vertices: hull, base_point: base, dim: 2 };
                if set.diameter() <= sing_tol {
                    ConvexCovectorSet::singleton(cg, base, 2)
                } else {
                    set
                }
            };
            sets.push(set);
        }
        let c = spec.c;
        let singular: Vec<bool> = sets.iter().map(|s| !s.is_singleton()).collect();
        let critical: Vec<bool> = sets.iter().map(|s| s.distance_to(-c) <= crit_tol).collect();
        Ok(Self { geometry: g, c, sets, central, singular, critical, curvature, sing_tol, crit_tol })
    }

    fn node_at(&self, x: Vec2) -> Option<usize> {
        let g = &self.geometry;
        let (base, frac) = g.cell_of(x);
        let near = |f: f64| f < 1e-9 || f > 1.0 - 1e-9;
        if near(frac.0) && (g.dim == 1 || near(frac.1)) {
            let i = base.0 + (frac.0 > 0.5) as i64;
            let j = base.1 + (frac.1 > 0.5) as i64;
            Some(g.index(i, j))
        } else {
            None
        }
    }

    /// Superdifferential at any point: the node set at grid nodes, the
    /// interpolated gradient inside smooth cells. Next to singular nodes
    /// each corner contributes the face of its set exposed towards x (the
    /// active branch, since u(x) ≈ u(b) + min over D⁺u(b) of ⟨q, x−b⟩); the
    /// result is set-valued only if these disagree beyond sing_tol.
    pub fn at(&self, x: Vec2) -> ConvexCovectorSet {
        let g = &self.geometry;
        let x = g.wrap(x);
        if let Some(idx) = self.node_at(x) {
            let mut s = self.sets[idx].clone();
            s.base_point = x;
            return s;
        }
        let h = g.spacing();
        let ((i, j), (fx, fy)) = g.cell_of(x);
        let corners: Vec<(usize, f64, Vec2)> = if g.dim == 1 {
            vec![
                (g.index(i, 0), 1.0 - fx, Vec2::new(fx * h, 0.0)),
                (g.index(i + 1, 0), fx, Vec2::new((fx - 1.0) * h, 0.0)),
            ]
        } else {
            vec![
                (g.index(i, j), (1.0 - fx) * (1.0 - fy), Vec2::new(fx * h, fy * h)),
                (g.index(i + 1, j), fx * (1.0 - fy), Vec2::new((fx - 1.0) * h, fy * h)),
                (g.index(i, j + 1), (1.0 - fx) * fy, Vec2::new(fx * h, (fy - 1.0) * h)),
                (g.index(i + 1, j + 1), fx * fy, Vec2::new((fx - 1.0) * h, (fy - 1.0) * h)),
            ]
        };
        if corners.iter().all(|&(k, _, _)| !self.singular[k]) {
            let p = corners.iter().fold(Vec2::zeros(), |acc, &(k, w, _)| acc + self.central[k] * w);
            return ConvexCovectorSet::singleton(p, x, g.dim);
        }
        // `dir` is x minus the corner
        let exposed: Vec<(Vec2, f64)> = corners
            .iter()
            .map(|&(k, w, dir)| {
                if !self.singular[k] {
                    return (self.central[k], w);
                }
                let vs = &self.sets[k].vertices;
                let lo = vs.iter().map(|q| q.dot(&dir)).fold(f64::INFINITY, f64::min);
                let slack = 1e-9 * (1.0 + lo.abs());
                let tied: Vec<Vec2> = vs.iter().copied().filter(|q| q.dot(&dir) <= lo + slack).collect();
                (tied.iter().sum::<Vec2>() / tied.len() as f64, w)
            })
            .collect();
        let pts: Vec<Vec2> = exposed.iter().map(|e| e.0).collect();
        let spread = pts
            .iter()
            .flat_map(|a| pts.iter().map(move |b| (a - b).norm()))
            .fold(0.0, f64::max);
        if spread <= self.sing_tol {
            let p = exposed.iter().fold(Vec2::zeros(), |acc, &(q, w)| acc + q * w);
            return ConvexCovectorSet::singleton(p, x, g.dim);
        }
        let vertices = if g.dim == 1 {
            let lo = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            vec![Vec2::new(lo, 0.0), Vec2::new(hi, 0.0)]
        } else {
            convex_hull(&pts)
        };
        ConvexCovectorSet { vertices, base_point: x, dim: g.dim }
    }

    /// No corner of the cell containing x is singular.
    pub fn smooth_at(&self, x: Vec2) -> bool {
        let g = &self.geometry;
        let ((i, j), _) = g.cell_of(g.wrap(x));
        let js: &[i64] = if g.dim == 2 { &[0, 1] } else { &[0] };
        js.iter().all(|&dj| (0..2).all(|di| !self.singular[g.index(i + di, j + dj)]))
    }

    /// argmin of ⟨A(x)q,q⟩ over q ∈ c + D⁺u(x); returns the full covector q.
    pub fn minimal_selection(&self, spec: &SystemSpec, x: Vec2) -> Vec2 {
        let set = self.at(x);
        spec.restrict(set.min_energy_point(&spec.mass(x), self.c))
    }

    pub fn singular_components(&self) -> Vec<SingularComponent> {
        let g = &self.geometry;
        let mut parent: Vec<usize> = (0..g.len()).collect();
        fn find(p: &mut [usize], mut a: usize) -> usize {
            while p[a] != a {
                p[a] = p[p[a]];
                a = p[a];
            }
            a
        }
        for idx in 0..g.len() {
            if !self.singular[idx] {
                continue;
            }
            for nb in g.axis_neighbours(idx) {
                if self.singular[nb] {
                    let (ra, rb) = (find(&mut parent, idx), find(&mut parent, nb));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for idx in 0..g.len() {
            if self.singular[idx] {
                let r = find(&mut parent, idx);
                groups.entry(r).or_default().push(idx);
            }
        }
        let n = g.n;
        groups
            .into_values()
            .map(|cells| {
                let closure_flag = cells.iter().any(|&k| {
                    let (i, j) = g.coords(k);
                    i == 0 || i == n - 1 || (g.dim == 2 && (j == 0 || j == n - 1))
                });
                let contains_critical = cells.iter().any(|&k| self.critical[k]);
                SingularComponent { cells, closure_flag, contains_critical }
            })
            .collect()
    }

    /// Critical points: groups of critical nodes, each reduced to one point
    /// (the singular node holding 0, or the zero of the interpolated
    /// gradient of v_c along grid sections).
    pub fn critical_points(&self) -> Vec<CriticalPoint> {
        let g = &self.geometry;
        let mut seen = vec![false; g.len()];
        let mut out = Vec::new();
        for start in 0..g.len() {
            if !self.critical[start] || seen[start] {
                continue;
            }
            let mut group = vec![start];
            seen[start] = true;
            let mut k = 0;
            while k < group.len() {
                let (i, j) = g.coords(group[k]);
                let (i, j) = (i as i64, j as i64);
                let js: &[i64] = if g.dim == 1 { &[0] } else { &[-1, 0, 1] };
                for &b in js {
                    for a in -1..=1 {
                        let nb = g.index(i + a, j + b);
                        if self.critical[nb] && !seen[nb] {
                            seen[nb] = true;
                            group.push(nb);
                        }
                    }
                }
                k += 1;
            }
            let score = |k: usize| (self.central[k] + self.c).norm();
            let best = *group
                .iter()
                .min_by(|a, b| score(**a).total_cmp(&score(**b)))
                .expect("nonempty group");
            let singular = group.iter().any(|&k| self.singular[k]);
            let x = if self.singular[best] {
                g.node_point(best)
            } else {
                self.refine_smooth(best)
            };
            out.push(CriticalPoint { x, node: best, singular });
        }
        out
    }

    fn refine_smooth(&self, node: usize) -> Vec2 {
        let g = &self.geometry;
        let h = g.spacing();
        let (i, j) = g.coords(node);
        let (i, j) = (i as i64, j as i64);
        let mut x = g.node_point(node);
        for axis in 0..g.dim {
            let step = |s: i64| if axis == 0 { g.index(i + s, j) } else { g.index(i, j + s) };
            let f = |k: usize| self.central[k][axis] + self.c[axis];
            let f0 = f(step(0));
            for s in [1i64, -1] {
                let f1 = f(step(s));
                if f0 == 0.0 {
                    break;
                }
                if f0 * f1 <= 0.0 {
                    // bisection on the linear interpolant between the nodes
                    let (mut lo, mut hi) = (0.0, 1.0);
                    for _ in 0..50 {
                        let mid = 0.5 * (lo + hi);
                        if (f0 + (f1 - f0) * mid) * f0 > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    x[axis] += s as f64 * h * 0.5 * (lo + hi);
                    break;
                }
            }
        }
        g.wrap(x)
    }
}

/// Farthest-point seeded k-means (k ≤ 4) with merging of close centroids.
fn cluster(points: &[Vec2], tol: f64) -> Vec<Vec2> {
    let mean = points.iter().fold(Vec2::zeros(), |a, p| a + p) / points.len() as f64;
    let first = points
        .iter()
        .max_by(|a, b| (*a - mean).norm().total_cmp(&(*b - mean).norm()))
        .copied()
        .expect("points");
    let mut centers = vec![first];
    while centers.len() < 4 {
        let (far, d) = points
            .iter()
            .map(|p| (*p, centers.iter().map(|c| (p - c).norm()).fold(f64::INFINITY, f64::min)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("points");
        if d <= tol {
            break;
        }
        centers.push(far);
    }
    for _ in 0..5 {
        let mut sums = vec![Vec2::zeros(); centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for p in points {
            let k = (0..centers.len())
                .min_by(|a, b| (p - centers[*a]).norm().total_cmp(&(p - centers[*b]).norm()))
                .unwrap();
            sums[k] += p;
            counts[k] += 1;
        }
        for k in 0..centers.len() {
            if counts[k] > 0 {
                centers[k] = sums[k] / counts[k] as f64;
            }
        }
    }
    let mut merged: Vec<Vec2> = Vec::new();
    for c in centers {
        if let Some(m) = merged.iter_mut().find(|m| (**m - c).norm() < tol) {
            *m = 0.5 * (*m + c);
        } else {
            merged.push(c);
        }
    }
    merged
}

pub fn superdifferential(u: &ScalarField, spec: &SystemSpec, x: Vec2) -> Result<ConvexCovectorSet> {
    SystemSpec::check_point(x)?;
    Ok(SuperdiffGrid::new(u, spec)?.at(x))
}

pub fn singular_set(u: &ScalarField, spec: &SystemSpec) -> Result<Vec<SingularComponent>> {
    Ok(SuperdiffGrid::new(u, spec)?.singular_components())
}

pub fn critical_set(u: &ScalarField, spec: &SystemSpec) -> Result<Vec<CriticalPoint>> {
    Ok(SuperdiffGrid::new(u, spec)?.critical_points())
}

pub fn minimal_selection(u: &ScalarField, spec: &SystemSpec, x: Vec2) -> Result<Vec2> {
    SystemSpec::check_point(x)?;
    Ok(SuperdiffGrid::new(u, spec)?.minimal_selection(spec, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;

    #[test]
    fn interval_projection() {
        let s = ConvexCovectorSet {
            vertices: vec![Vec2::new(1.0, 0.0), Vec2::new(3.0, 0.0)],
            base_point: Vec2::zeros(),
            dim: 1,
        };
        let q = s.min_energy_point(&Matrix2::identity(), Vec2::zeros());
        assert_eq!(q, Vec2::new(1.0, 0.0));
        assert_eq!(s.distance_to(Vec2::new(2.0, 0.0)), 0.0);
    }

    #[test]
    fn hull_and_polygon_selection() {
        let pts = [
            Vec2::new(1.0, 1.0),
            Vec2::new(3.0, 1.0),
            Vec2::new(2.0, 1.0),
            Vec2::new(1.0, 3.0),
            Vec2::new(1.5, 1.5),
        ];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 3);
        let s = ConvexCovectorSet { vertices: h, base_point: Vec2::zeros(), dim: 2 };
        assert!(s.is_convex());
        let q = s.min_energy_point(&Matrix2::identity(), Vec2::zeros());
        assert!((q - Vec2::new(1.0, 1.0)).norm() < 1e-12);
        let q = s.min_energy_point(&Matrix2::identity(), Vec2::new(-2.0, -2.0));
        assert!(q.norm() < 1e-12);
        let seg = convex_hull(&[Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(2.0, 2.0)]);
        assert_eq!(seg.len(), 2);
    }

    #[test]
    fn anisotropic_selection_on_segment() {
        let s = ConvexCovectorSet {
            vertices: vec![Vec2::new(1.0, -1.0), Vec2::new(1.0, 1.0)],
            base_point: Vec2::zeros(),
            dim: 2,
        };
        let a = Matrix2::new(1.0, 0.5, 0.5, 1.0);
        let q = s.min_energy_point(&a, Vec2::zeros());
        // minimize (1, y)·A·(1, y) = 1 + y + y² → y = −½
        assert!((q - Vec2::new(1.0, -0.5)).norm() < 1e-12);
    }
}
