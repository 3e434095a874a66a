//! Fundamental solution A_t(x,y) by direct minimization of a discrete action.
//!
//! Curves are broken lines with K uniform segments and the action uses the
//! midpoint rule. Since ⟨c,v⟩ integrates to ⟨c, y−x⟩ along every curve, the
//! minimizer does not depend on c and
//! A^c_t(x,y) = A⁰_t(x,y) − ⟨c, y−x⟩ + αt.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Mat2, TorusGeometry, Vec2};
use crate::system::SystemSpec;

pub const MIN_TIME: f64 = 1e-6;
/// Lattice translates examined per axis by the torus quotient.
pub const TRANSLATE_WINDOW: i64 = 2;
/// Relative tolerance under which two distinct minimizers count as tied.
pub const AMBIGUITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct MinimizerCurve {
    pub knots: Vec<Vec2>,
    /// Discrete action of L^c along the knots.
    pub action: f64,
    pub end_velocity: Vec2,
    pub end_momentum: Vec2,
    /// Max-norm of the discrete Euler–Lagrange residual at interior knots.
    pub el_residual: f64,
    pub converged: bool,
    /// Another seed reached a distinct curve with the same action.
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ActionOptions {
    pub multistart: bool,
    pub tol_el: f64,
    pub max_iter: usize,
    /// Overrides the segment count K.
    pub segments: Option<usize>,
}

impl Default for ActionOptions {
    fn default() -> Self {
        Self { multistart: true, tol_el: 1e-10, max_iter: 100, segments: None }
    }
}

impl ActionOptions {
    pub fn single_seed() -> Self {
        Self { multistart: false, ..Self::default() }
    }
}

pub fn segment_count(t: f64) -> usize {
    ((t / 0.01).ceil() as usize).max(8)
}

/// Discrete action Σ Δ L^c(midpoint, velocity) of a knot sequence over [0,t].
pub fn discrete_action(spec: &SystemSpec, knots: &[Vec2], t: f64, alpha: f64) -> Result<f64> {
    if knots.len() < 2 {
        return Err(Error::InvalidParameter("a curve needs at least two knots".into()));
    }
    let dt = t / (knots.len() - 1) as f64;
    let mut s = 0.0;
    for w in knots.windows(2) {
        s += dt * spec.eval_lagrangian_c(0.5 * (w[0] + w[1]), (w[1] - w[0]) / dt, alpha)?;
    }
    Ok(s)
}

fn action0(spec: &SystemSpec, knots: &[Vec2], dt: f64) -> f64 {
    knots
        .windows(2)
        .map(|w| dt * spec.lagrangian0(0.5 * (w[0] + w[1]), (w[1] - w[0]) / dt))
        .sum()
}

struct Segment {
    /// ∂S/∂a and ∂S/∂b.
    da: Vec2,
    db: Vec2,
    /// Approximate second derivatives: aa = bb, ab.
    aa: Mat2,
    ab: Mat2,
}

fn segment(spec: &SystemSpec, a: Vec2, b: Vec2, dt: f64) -> Segment {
    let m = 0.5 * (a + b);
    let v = (b - a) / dt;
    let (_, dv, d2v) = spec.potential_derivs(m);
    let minv = spec.inv_mass(m);
    let lx = spec.restrict(spec.kinetic_grad(m, v) - dv);
    let lv = spec.restrict(minv * v);
    let hk = minv / dt;
    let hp = -d2v * (0.25 * dt);
    Segment {
        da: lx * (0.5 * dt) - lv,
        db: lx * (0.5 * dt) + lv,
        aa: hk + hp,
        ab: -hk + hp,
    }
}

/// Gradient with respect to interior knots plus block-tridiagonal Hessian.
fn gradient(spec: &SystemSpec, knots: &[Vec2], dt: f64) -> (Vec<Vec2>, Vec<Mat2>, Vec<Mat2>) {
    let k = knots.len() - 1;
    let m = k - 1;
    let mut g = vec![Vec2::zeros(); m];
    let mut diag = vec![Mat2::zeros(); m];
    let mut off = vec![Mat2::zeros(); m.saturating_sub(1)];
    for s in 0..k {
        let seg = segment(spec, knots[s], knots[s + 1], dt);
        // segment s joins knot s (interior index s-1) and knot s+1 (index s)
        if s >= 1 {
            g[s - 1] += seg.da;
            diag[s - 1] += seg.aa;
        }
        if s + 1 <= m {
            g[s] += seg.db;
            diag[s] += seg.aa;
        }
        if s >= 1 && s + 1 <= m {
            off[s - 1] = seg.ab;
        }
    }
    (g, diag, off)
}

/// Solves the symmetric block-tridiagonal system by block Thomas elimination.
fn block_solve(diag: &[Mat2], off: &[Mat2], rhs: &[Vec2]) -> Option<Vec<Vec2>> {
    let m = diag.len();
    let mut cp = vec![Mat2::zeros(); m];
    let mut dp = vec![Vec2::zeros(); m];
    for j in 0..m {
        let (mj, rj) = if j == 0 {
            (diag[0], rhs[0])
        } else {
            let l = off[j - 1].transpose();
            (diag[j] - l * cp[j - 1], rhs[j] - l * dp[j - 1])
        };
        let inv = mj.try_inverse()?;
        if j + 1 < m {
            cp[j] = inv * off[j];
        }
        dp[j] = inv * rj;
    }
    let mut x = vec![Vec2::zeros(); m];
    x[m - 1] = dp[m - 1];
    for j in (0..m - 1).rev() {
        x[j] = dp[j] - cp[j] * x[j + 1];
    }
    Some(x)
}

struct Descent {
    knots: Vec<Vec2>,
    action0: f64,
    residual: f64,
    converged: bool,
}

fn minimize(spec: &SystemSpec, mut knots: Vec<Vec2>, dt: f64, opts: &ActionOptions) -> Descent {
    let mut s = action0(spec, &knots, dt);
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut trial = knots.clone();
    for _ in 0..opts.max_iter {
        let (g, mut diag, off) = gradient(spec, &knots, dt);
        residual = g.iter().map(|v| v.amax()).fold(0.0, f64::max);
        if residual <= opts.tol_el {
            converged = true;
            break;
        }
        let rhs: Vec<Vec2> = g.iter().map(|v| -v).collect();
        let mut step = block_solve(&diag, &off, &rhs);
        let mut slope = step
            .as_ref()
            .map(|d| d.iter().zip(&g).map(|(a, b)| a.dot(b)).sum::<f64>())
            .unwrap_or(0.0);
        if step.is_none() || !(slope < 0.0) {
            // Levenberg shift towards a gradient step.
            let mu = 1.0 / dt;
            for d in diag.iter_mut() {
                *d += Mat2::identity() * mu;
            }
            step = block_solve(&diag, &off, &rhs);
            slope = step
                .as_ref()
                .map(|d| d.iter().zip(&g).map(|(a, b)| a.dot(b)).sum::<f64>())
                .unwrap_or(0.0);
            if step.is_none() || !(slope < 0.0) {
                break;
            }
        }
        let step = step.unwrap();
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-10 {
            for j in 0..step.len() {
                trial[j + 1] = knots[j + 1] + step[j] * lambda;
            }
            let st = action0(spec, &trial, dt);
            if st <= s + 1e-4 * lambda * slope || (st - s).abs() <= 1e-15 * s.abs().max(1.0) {
                s = st;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
        knots.copy_from_slice(&trial);
    }
    if !converged {
        let (g, _, _) = gradient(spec, &knots, dt);
        residual = g.iter().map(|v| v.amax()).fold(0.0, f64::max);
        converged = residual <= opts.tol_el;
    }
    Descent { knots, action0: s, residual, converged }
}

fn seed(x: Vec2, y: Vec2, k: usize, bump: Vec2) -> Vec<Vec2> {
    (0..=k)
        .map(|j| {
            let s = j as f64 / k as f64;
            x + (y - x) * s + bump * (std::f64::consts::PI * s).sin()
        })
        .collect()
}

fn detour_direction(spec: &SystemSpec, x: Vec2, y: Vec2) -> Vec2 {
    if spec.dim == 1 {
        return Vec2::new(0.5, 0.0);
    }
    let d = y - x;
    if d.norm() < 1e-12 {
        Vec2::new(0.5, 0.0)
    } else {
        Vec2::new(-d[1], d[0]) * (0.5 / d.norm())
    }
}

/// A⁰_t(x,y) with minimizer knots, using the straight line (and optionally
/// the two detours) as seeds.
fn solve0(
    spec: &SystemSpec,
    x: Vec2,
    y: Vec2,
    t: f64,
    opts: &ActionOptions,
) -> Result<(Descent, bool)> {
    if !(t >= MIN_TIME) {
        return Err(Error::StepTooSmall(t));
    }
    SystemSpec::check_point(x)?;
    SystemSpec::check_point(y)?;
    let x = spec.restrict(x);
    let y = spec.restrict(y);
    let k = opts.segments.unwrap_or_else(|| segment_count(t)).max(2);
    let dt = t / k as f64;
    let mut best = minimize(spec, seed(x, y, k, Vec2::zeros()), dt, opts);
    let mut ambiguous = false;
    if opts.multistart {
        let e = detour_direction(spec, x, y);
        for sign in [1.0, -1.0] {
            let cand = minimize(spec, seed(x, y, k, e * sign), dt, opts);
            let tie = (cand.action0 - best.action0).abs()
                <= AMBIGUITY_TOL * best.action0.abs().max(1.0);
            let distinct = cand
                .knots
                .iter()
                .zip(&best.knots)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max)
                > 1e-6;
            if tie && distinct && cand.converged && best.converged {
                ambiguous = true;
            }
            if cand.action0 < best.action0 - AMBIGUITY_TOL * best.action0.abs().max(1.0)
                || (!best.converged && cand.converged && cand.action0 <= best.action0 + 1e-12)
            {
                best = cand;
                ambiguous = false;
            }
        }
    }
    if !best.action0.is_finite() {
        return Err(Error::NonFinite("action"));
    }
    Ok((best, ambiguous))
}

fn finish(spec: &SystemSpec, d: Descent, ambiguous: bool, t: f64, alpha: f64) -> MinimizerCurve {
    let k = d.knots.len() - 1;
    let dt = t / k as f64;
    let x = d.knots[0];
    let y = d.knots[k];
    let last = segment(spec, d.knots[k - 1], y, dt);
    let p0 = spec.restrict(last.db);
    let end_velocity = spec.restrict(spec.mass(y) * p0);
    MinimizerCurve {
        action: d.action0 - spec.c.dot(&(y - x)) + alpha * t,
        end_velocity,
        end_momentum: p0 - spec.c,
        el_residual: d.residual,
        converged: d.converged,
        ambiguous,
        knots: d.knots,
    }
}

pub fn fundamental_solution_with(
    spec: &SystemSpec,
    x: Vec2,
    y: Vec2,
    t: f64,
    alpha: f64,
    opts: &ActionOptions,
) -> Result<(f64, MinimizerCurve)> {
    let (d, amb) = solve0(spec, x, y, t, opts)?;
    let curve = finish(spec, d, amb, t, alpha);
    Ok((curve.action, curve))
}

/// A^c_t(x,y) for lift points x, y, with the minimizing broken line.
pub fn fundamental_solution(
    spec: &SystemSpec,
    x: Vec2,
    y: Vec2,
    t: f64,
    alpha: f64,
) -> Result<(f64, MinimizerCurve)> {
    fundamental_solution_with(spec, x, y, t, alpha, &ActionOptions::default())
}

#[derive(Debug, Clone)]
pub struct TorusAction {
    pub value: f64,
    pub x_lift: Vec2,
    pub y_lift: Vec2,
    pub curve: MinimizerCurve,
}

/// Infimum of A^c_t over lattice translates of y (|k_i| ≤ 2).
pub fn torus_fundamental_solution(
    spec: &SystemSpec,
    xc: Vec2,
    yc: Vec2,
    t: f64,
    alpha: f64,
) -> Result<TorusAction> {
    let geom = TorusGeometry { dim: spec.dim, n: 16 };
    let x = geom.wrap(xc);
    let y = geom.wrap(yc);
    let w = TRANSLATE_WINDOW;
    let js: Vec<i64> = if spec.dim == 1 { vec![0] } else { (-w..=w).collect() };
    let mut best: Option<TorusAction> = None;
    for &j in &js {
        for i in -w..=w {
            let yl = y + Vec2::new(i as f64, j as f64);
            let (value, curve) = fundamental_solution(spec, x, yl, t, alpha)?;
            if best.as_ref().map_or(true, |b| value < b.value) {
                best = Some(TorusAction { value, x_lift: x, y_lift: yl, curve });
            }
        }
    }
    Ok(best.expect("at least one translate"))
}

/// t₀ = C₁/(κ₁(1) + C₂ + C₁) from the growth constants (k = 1).
pub fn t0_estimate(spec: &SystemSpec) -> f64 {
    let g = &spec.growth;
    g.c1 / (g.kappa1_1 + g.c2 + g.c1)
}

#[derive(Debug, Clone, Copy)]
pub struct EndMomentum {
    pub momentum: Vec2,
    pub ambiguous: bool,
}

/// D_y A^c_t(x,y), read off the minimizer as L^c_v at the end point.
pub fn dy_fundamental_solution(
    spec: &SystemSpec,
    x: Vec2,
    y: Vec2,
    t: f64,
    alpha: f64,
) -> Result<EndMomentum> {
    let (_, curve) = fundamental_solution(spec, x, y, t, alpha)?;
    Ok(EndMomentum { momentum: curve.end_momentum, ambiguous: curve.ambiguous })
}

/// Tabulated A⁰_t(x_node, x_node + d·h) for integer offsets d in a disc.
#[derive(Debug, Clone)]
pub struct ActionTable {
    pub geometry: TorusGeometry,
    pub t: f64,
    pub radius: usize,
    /// Offsets (a, b) inside the disc, in nodes.
    pub offsets: Vec<(i64, i64)>,
    /// Square position → compact offset index (`usize::MAX` outside).
    lookup: Vec<usize>,
    /// `values[node * K + k] = A⁰_t(x_node, x_node + d_k)`.
    pub values: Vec<f64>,
    /// `incoming[node * K + k] = A⁰_t(x_node − d_k, x_node)`.
    pub incoming: Vec<f64>,
    pub system_hash: u64,
    pub max_residual: f64,
}

impl ActionTable {
    pub fn len_offsets(&self) -> usize {
        self.offsets.len()
    }

    pub fn offset(&self, k: usize) -> (i64, i64) {
        self.offsets[k]
    }

    pub fn offset_index(&self, a: i64, b: i64) -> Option<usize> {
        let r = self.radius as i64;
        let w = 2 * r + 1;
        if a.abs() > r || b.abs() > r || (self.geometry.dim == 1 && b != 0) {
            return None;
        }
        let k = self.lookup[((a + r) + w * (b + r)) as usize];
        (k != usize::MAX).then_some(k)
    }

    pub fn get(&self, node: usize, k: usize) -> f64 {
        self.values[node * self.offsets.len() + k]
    }

    pub fn build(spec: &SystemSpec, geometry: TorusGeometry, t: f64, radius: usize) -> Result<Self> {
        if geometry.dim != spec.dim {
            return Err(Error::GeometryMismatch("table grid and system dimension differ".into()));
        }
        if !(t >= MIN_TIME) {
            return Err(Error::StepTooSmall(t));
        }
        let r = radius as i64;
        let w = 2 * r + 1;
        let bs: Vec<i64> = if geometry.dim == 1 { vec![0] } else { (-r..=r).collect() };
        let mut offsets = Vec::new();
        let mut lookup = vec![usize::MAX; (w * w) as usize];
        for &b in &bs {
            for a in -r..=r {
                if (a * a + b * b) as f64 <= (radius as f64 + 0.5).powi(2) {
                    lookup[((a + r) + w * (b + r)) as usize] = offsets.len();
                    offsets.push((a, b));
                }
            }
        }
        let h = geometry.spacing();
        let opts = ActionOptions::single_seed();
        let spec0 = spec.clone().with_c(Vec2::zeros());
        let rows: Vec<(Vec<f64>, f64)> = (0..geometry.len())
            .into_par_iter()
            .map(|node| {
                let x = geometry.node_point(node);
                let mut worst: f64 = 0.0;
                let row = offsets
                    .iter()
                    .map(|&(a, b)| {
                        let y = x + Vec2::new(a as f64 * h, b as f64 * h);
                        match solve0(&spec0, x, y, t, &opts) {
                            Ok((d, _)) => {
                                worst = worst.max(d.residual);
                                d.action0
                            }
                            Err(_) => {
                                worst = f64::INFINITY;
                                f64::INFINITY
                            }
                        }
                    })
                    .collect();
                (row, worst)
            })
            .collect();
        let kk = offsets.len();
        let mut values = Vec::with_capacity(geometry.len() * kk);
        let mut max_residual: f64 = 0.0;
        for (row, wr) in rows {
            values.extend_from_slice(&row);
            max_residual = max_residual.max(wr);
        }
        if !max_residual.is_finite() {
            return Err(Error::NonFinite("action table"));
        }
        let mut incoming = vec![0.0; values.len()];
        for node in 0..geometry.len() {
            let (i, j) = geometry.coords(node);
            for (k, &(a, b)) in offsets.iter().enumerate() {
                let src = geometry.index(i as i64 - a, j as i64 - b);
                incoming[node * kk + k] = values[src * kk + k];
            }
        }
        Ok(Self {
            geometry,
            t,
            radius,
            offsets,
            lookup,
            values,
            incoming,
            system_hash: spec.key_hash(),
            max_residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_action_is_quadratic() {
        let f = SystemSpec::free(1).unwrap();
        let (v, c) = fundamental_solution(&f, Vec2::zeros(), Vec2::new(0.3, 0.0), 0.5, 0.0).unwrap();
        assert!((v - 0.09).abs() < 1e-12);
        assert!(c.converged);
        assert_eq!(c.knots[0], Vec2::zeros());
        assert_eq!(*c.knots.last().unwrap(), Vec2::new(0.3, 0.0));
        let p = dy_fundamental_solution(&f, Vec2::zeros(), Vec2::new(0.2, 0.0), 0.5, 0.0).unwrap();
        assert!((p.momentum[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn pendulum_rest_point() {
        let p = SystemSpec::pendulum();
        for t in [0.05, 0.3, 1.7] {
            let (v, c) = fundamental_solution(&p, Vec2::zeros(), Vec2::zeros(), t, 0.0).unwrap();
            assert!(v.abs() < 1e-12, "{v}");
            assert!(c.end_momentum.norm() < 1e-10);
        }
        let (v, _) = fundamental_solution(&p, Vec2::zeros(), Vec2::new(0.1, 0.0), 0.1, 0.0).unwrap();
        assert!(v <= 0.25 && v > 0.0);
    }

    #[test]
    fn torus_picks_nearby_lift() {
        let p = SystemSpec::pendulum();
        let r = torus_fundamental_solution(&p, Vec2::new(0.9, 0.0), Vec2::new(0.1, 0.0), 0.1, 0.0)
            .unwrap();
        assert!((r.y_lift[0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn t0_values() {
        assert!((t0_estimate(&SystemSpec::pendulum()) - 0.25).abs() < 1e-12);
        assert!((t0_estimate(&SystemSpec::free(1).unwrap()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn small_time_rejected() {
        let p = SystemSpec::pendulum();
        assert!(matches!(
            fundamental_solution(&p, Vec2::zeros(), Vec2::zeros(), 1e-7, 0.0),
            Err(Error::StepTooSmall(_))
        ));
    }

    #[test]
    fn table_matches_direct_solve() {
        let p = SystemSpec::separable_pendulum();
        let g = TorusGeometry::new(2, 16).unwrap();
        let tab = ActionTable::build(&p, g, 0.05, 3).unwrap();
        let node = g.index(3, 5);
        let o = tab.offset_index(2, -1).unwrap();
        let x = g.node_point(node);
        let y = x + Vec2::new(2.0, -1.0) / 16.0;
        let (v, _) = fundamental_solution(&p, x, y, 0.05, 0.0).unwrap();
        assert!((tab.get(node, o) - v).abs() < 1e-12);
        assert!(tab.offset_index(3, 3).is_none());
        let back = g.index(1, 6);
        assert_eq!(tab.incoming[node * tab.len_offsets() + o], tab.get(back, o));
    }
}
