//! Discrete Aubry–Mather theory for twist generating functions: analytic and
//! distance-based h, minimal periodic configurations, rotation numbers, gap
//! sequences and the check that singularities of a geodesic-type weak KAM
//! solution approach the recurrent minimal set.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat2, TorusGeometry, Vec2};
use crate::interp::cubic_eval;
use crate::superdiff::SuperdiffGrid;
use crate::weakkam::ScalarField;
use crate::system::SystemSpec;
use crate::action::{fundamental_solution_with, t0_estimate, ActionOptions};
use crate::weakkam::{weak_kam_solution_opts, FixedPointOptions, WeakKamOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratingKind {
    Analytic,
    DistanceGrid,
}

#[derive(Debug, Clone)]
enum Repr {
    /// ½(y−x)² + (k/4π²)cos 2πx
    Standard { k: f64 },
    /// H(x, d) on x = i/n (periodic) and d = j/n − d_max (clamped).
    Table { n: usize, d_max: f64, values: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct GeneratingFunction {
    pub kind: GeneratingKind,
    pub params: Vec<f64>,
    repr: Repr,
}

/// Second derivatives (h11, h12, h22).
pub type Hessian = (f64, f64, f64);

impl GeneratingFunction {
    pub fn standard(k: f64) -> Self {
        Self { kind: GeneratingKind::Analytic, params: vec![k], repr: Repr::Standard { k } }
    }

    pub fn quadratic() -> Self {
        Self::standard(0.0)
    }

    /// H(x, d) table on an n × (2·d_max·n + 1) grid.
    pub fn from_table(n: usize, d_max: f64, values: Vec<f64>) -> Result<Self> {
        let cols = table_cols(n, d_max);
        if values.len() != n * cols {
            return Err(Error::GeometryMismatch(format!("{} table values, expected {}", values.len(), n * cols)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("generating function table"));
        }
        Ok(Self { kind: GeneratingKind::DistanceGrid, params: vec![n as f64, d_max], repr: Repr::Table { n, d_max, values } })
    }

    /// Table data (n, d_max, values) for the distance kind.
    pub fn table(&self) -> Option<(usize, f64, &[f64])> {
        match &self.repr {
            Repr::Table { n, d_max, values } => Some((*n, *d_max, values)),
            Repr::Standard { .. } => None,
        }
    }

    /// Value, gradient (∂₁h, ∂₂h) and second derivatives.
    pub fn eval(&self, x: f64, y: f64) -> (f64, (f64, f64), Hessian) {
        match &self.repr {
            Repr::Standard { k } => {
                let tp = 2.0 * std::f64::consts::PI;
                let d = y - x;
                let v = 0.5 * d * d + k / (tp * tp) * (tp * x).cos();
                let d1 = -d - k / tp * (tp * x).sin();
                let h11 = 1.0 - k * (tp * x).cos();
                (v, (d1, d), (h11, -1.0, 1.0))
            }
            Repr::Table { n, d_max, values } => {
                let cols = table_cols(*n, *d_max);
                let h = 1.0 / *n as f64;
                let d = y - x;
                // keep the stencil inside the table; linear growth beyond
                let lim = d_max - 2.0 * h;
                let dc = d.clamp(-lim, lim);
                let xs = x.rem_euclid(1.0) / h;
                let ds = (dc + d_max) / h;
                let (bi, bj) = (xs.floor(), ds.floor());
                let fetch = |i: i64, j: i64| {
                    let i = i.rem_euclid(*n as i64) as usize;
                    let j = j.clamp(0, cols as i64 - 1) as usize;
                    values[i * cols + j]
                };
                let (v, g, hs) = cubic_eval(2, fetch, (bi as i64, bj as i64), (xs - bi, ds - bj), (h, h));
                let extra = d - dc;
                let (hx, hd) = (g[0], g[1] + if extra != 0.0 { extra.signum() } else { 0.0 });
                let (hxx, hxd, hdd) = (hs[(0, 0)], hs[(0, 1)], hs[(1, 1)]);
                (
                    v + extra.abs(),
                    (hx - hd, hd),
                    (hxx - 2.0 * hxd + hdd, hxd - hdd, hdd),
                )
            }
        }
    }

    pub fn h(&self, x: f64, y: f64) -> f64 {
        self.eval(x, y).0
    }

    /// (h1) on samples: max |h(x+1,y+1) − h(x,y)|.
    pub fn periodicity_defect(&self, samples: &[(f64, f64)]) -> f64 {
        samples.iter().map(|&(x, y)| (self.h(x + 1.0, y + 1.0) - self.h(x, y)).abs()).fold(0.0, f64::max)
    }

    /// (h2) on rays: h(x, x+d) increases in |d| beyond `radius`.
    pub fn coercive_on(&self, xs: &[f64], radius: f64, reach: f64) -> bool {
        xs.iter().all(|&x| {
            [1.0, -1.0].iter().all(|&s| {
                let mut prev = self.h(x, x + s * radius);
                let steps = 32;
                (1..=steps).all(|k| {
                    let v = self.h(x, x + s * (radius + reach * k as f64 / steps as f64));
                    let ok = v > prev;
                    prev = v;
                    ok
                })
            })
        })
    }

    /// (h3) on a sample: h(x₁,y₁)+h(x₂,y₂) < h(x₁,y₂)+h(x₂,y₁) for x₁<x₂, y₁<y₂.
    pub fn twist_holds(&self, x1: f64, x2: f64, y1: f64, y2: f64) -> bool {
        self.h(x1, y1) + self.h(x2, y2) < self.h(x1, y2) + self.h(x2, y1)
    }
}

fn table_cols(n: usize, d_max: f64) -> usize {
    2 * (d_max * n as f64).round() as usize + 1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Configuration {
    /// Index of the first stored point.
    pub first: i64,
    pub x: Vec<f64>,
    pub rotation: f64,
    pub action: f64,
    pub residual: f64,
    pub p: i64,
    pub q: i64,
    /// Descent stalled before reaching the residual tolerance.
    pub stagnated: bool,
}

impl Configuration {
    pub fn get(&self, i: i64) -> f64 {
        self.x[(i - self.first) as usize]
    }

    pub fn indices(&self) -> std::ops::Range<i64> {
        self.first..self.first + self.x.len() as i64
    }

    /// max |x_i − x_0 − iρ| over the window (minimal configurations keep it below 1).
    pub fn rotation_defect(&self) -> f64 {
        let x0 = self.get(0);
        self.indices().map(|i| (self.get(i) - x0 - i as f64 * self.rotation).abs()).fold(0.0, f64::max)
    }

    /// The translates x_{i+k} + l are totally ordered relative to x_i (checked
    /// over one period of k).
    pub fn is_cyclically_ordered(&self) -> bool {
        let q = self.q.max(1);
        let idx: Vec<i64> = (0..q).collect();
        let span = self.p.abs() + 2;
        (0..q).all(|k| {
            (-span..=span).all(|l| {
                let mut sign = 0i8;
                idx.iter().all(|&i| {
                    let d = self.get(i + k) + l as f64 - self.get(i);
                    let s = if d.abs() < 1e-9 { 0 } else if d > 0.0 { 1 } else { -1 };
                    if sign == 0 && s != 0 {
                        sign = s;
                    }
                    s == 0 || s == sign
                })
            })
        })
    }
}

pub fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

/// Continued-fraction convergents p/q of ω with q ≤ q_max.
pub fn convergents(omega: f64, q_max: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1i64, 1i64, 0i64);
    let mut r = omega;
    for _ in 0..64 {
        let a = r.floor();
        let (p2, q2) = (a as i64 * p1 + p0, a as i64 * q1 + q0);
        if q2 > q_max {
            break;
        }
        out.push((p2, q2));
        let frac = r - a;
        if frac.abs() < 1e-12 {
            break;
        }
        r = 1.0 / frac;
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
    }
    out
}

/// First convergent of ω with denominator at least `q_min` (the last one if
/// ω is rational with a smaller denominator).
pub fn convergent_at_least(omega: f64, q_min: i64) -> (i64, i64) {
    let cs = convergents(omega, 1_000_000);
    cs.iter().copied().find(|c| c.1 >= q_min).unwrap_or(*cs.last().expect("at least one convergent"))
}

const CONF_TOL: f64 = 1e-12;

/// Residual accepted for a converged configuration: analytic h is solved to
/// rounding, tables only to their interpolation smoothness.
pub fn conf_tolerance(h: &GeneratingFunction) -> f64 {
    match h.kind {
        GeneratingKind::Analytic => 1e-8,
        GeneratingKind::DistanceGrid => 1e-4,
    }
}

/// Residual of the discrete Euler–Lagrange equation at every free site.
fn el_residual(h: &GeneratingFunction, x: &[f64], p: f64, periodic: bool) -> f64 {
    let q = x.len();
    let at = |i: i64| -> f64 {
        let qi = q as i64;
        x[i.rem_euclid(qi) as usize] + p * i.div_euclid(qi) as f64
    };
    let range: Vec<usize> = if periodic { (0..q).collect() } else { (1..q - 1).collect() };
    range
        .into_iter()
        .map(|i| {
            let i = i as i64;
            (h.eval(at(i - 1), at(i)).1 .1 + h.eval(at(i), at(i + 1)).1 .0).abs()
        })
        .fold(0.0, f64::max)
}

fn newton_site(h: &GeneratingFunction, prev: f64, mut z: f64, next: f64) -> f64 {
    for _ in 0..4 {
        let (_, (_, d2), (_, _, h22)) = h.eval(prev, z);
        let (_, (d1, _), (h11, _, _)) = h.eval(z, next);
        let g = d2 + d1;
        if g.abs() < CONF_TOL {
            break;
        }
        let curv = h22 + h11;
        let step = if curv > 1e-8 { g / curv } else { g.signum() * 0.05 * (next - prev).abs().max(1e-3) };
        z -= step.clamp(-0.1, 0.1);
    }
    z
}

/// Global 1D minimization of h(prev,z) + h(z,next) by sampling the span of
/// the neighbours, then golden section; never increases the local sum.
fn minimize_site(h: &GeneratingFunction, prev: f64, z0: f64, next: f64) -> f64 {
    let phi = |z: f64| h.h(prev, z) + h.h(z, next);
    let (lo, hi) = (prev.min(next) - 0.05, prev.max(next) + 0.05);
    let samples = 64;
    let step = (hi - lo) / samples as f64;
    let (mut best, mut fb) = (z0, phi(z0));
    for k in 0..=samples {
        let z = lo + k as f64 * step;
        let f = phi(z);
        if f < fb {
            best = z;
            fb = f;
        }
    }
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (best - step, best + step);
    let mut c = b - gr * (b - a);
    let mut d = a + gr * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = phi(d);
        }
    }
    let z = 0.5 * (a + b);
    if phi(z) <= fb { z } else { best }
}

/// Gauss–Seidel sweeps minimizing the action one site at a time; in segment
/// mode the ends stay fixed, periodic mode closes x_q = x_0 + p. Stops when the
/// residual is negligible or the sites stop moving.
fn gauss_seidel(h: &GeneratingFunction, x: &mut [f64], p: f64, periodic: bool, max_sweeps: usize) -> bool {
    let q = x.len();
    let sites: Vec<usize> = if periodic { (0..q).collect() } else { (1..q - 1).collect() };
    for _ in 0..max_sweeps {
        let mut moved: f64 = 0.0;
        for &i in &sites {
            let prev = if i == 0 { x[q - 1] - p } else { x[i - 1] };
            let next = if i + 1 == q { x[0] + p } else { x[i + 1] };
            let z = match h.kind {
                GeneratingKind::Analytic => newton_site(h, prev, x[i], next),
                GeneratingKind::DistanceGrid => minimize_site(h, prev, x[i], next),
            };
            moved = moved.max((z - x[i]).abs());
            x[i] = z;
        }
        if el_residual(h, x, p, periodic) < CONF_TOL {
            return true;
        }
        if moved < 1e-13 {
            return false;
        }
    }
    false
}

/// Newton on the full cyclic system; skipped when the Hessian is singular
/// (translation-invariant h).
fn polish(h: &GeneratingFunction, x: &mut [f64], p: f64) {
    let q = x.len();
    if q < 2 {
        return;
    }
    for _ in 0..3 {
        let mut jac = DMatrix::<f64>::zeros(q, q);
        let mut rhs = DVector::<f64>::zeros(q);
        for i in 0..q {
            let prev = if i == 0 { x[q - 1] - p } else { x[i - 1] };
            let next = if i + 1 == q { x[0] + p } else { x[i + 1] };
            let (_, (_, d2), (_, h12a, h22)) = h.eval(prev, x[i]);
            let (_, (d1, _), (h11, h12b, _)) = h.eval(x[i], next);
            rhs[i] = -(d2 + d1);
            jac[(i, i)] += h22 + h11;
            jac[(i, (i + q - 1) % q)] += h12a;
            jac[(i, (i + 1) % q)] += h12b;
        }
        let Some(dx) = jac.lu().solve(&rhs) else { return };
        if !dx.iter().all(|v| v.is_finite()) || dx.amax() > 1e-2 {
            return;
        }
        let before = el_residual(h, x, p, true);
        let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, b)| a + b).collect();
        if el_residual(h, &trial, p, true) < before {
            x.copy_from_slice(&trial);
        } else {
            return;
        }
    }
}

fn action_of(h: &GeneratingFunction, x: &[f64], p: f64) -> f64 {
    let q = x.len();
    (0..q).map(|i| h.h(x[i], if i + 1 == q { x[0] + p } else { x[i + 1] })).sum()
}

/// A translate x_{i+k} + l that crosses x by more than `tol`, if any.
fn crossing_translate(x: &[f64], p: i64, tol: f64) -> Option<(usize, i64)> {
    let q = x.len();
    let at = |i: usize| x[i % q] + (p * (i / q) as i64) as f64;
    let span = p.abs() + 2;
    for k in 0..q {
        for l in -span..=span {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..q {
                let d = at(i + k) + l as f64 - x[i];
                lo = lo.min(d);
                hi = hi.max(d);
            }
            if lo < -tol && hi > tol {
                return Some((k, l));
            }
        }
    }
    None
}

/// Minimizer of Σ_{i<q} h(x_i, x_{i+1}) with x_q = x_0 + p, best of 8
/// starting offsets, extended periodically to the window [−m, m], m = 8q.
pub fn minimal_periodic_config(h: &GeneratingFunction, p: i64, q: i64) -> Result<Configuration> {
    if q < 1 {
        return Err(Error::InvalidParameter(format!("period q = {q}")));
    }
    let g = gcd(p, q).max(1);
    let (p, q) = (p / g, q / g);
    let pf = p as f64;
    let runs: Vec<(Vec<f64>, f64, bool)> = (0..8)
        .into_par_iter()
        .map(|j| {
            let o = j as f64 / (8.0 * q as f64);
            let mut x: Vec<f64> = (0..q).map(|i| o + i as f64 * pf / q as f64).collect();
            let ok = gauss_seidel(h, &mut x, pf, true, 20_000);
            polish(h, &mut x, pf);
            let a = action_of(h, &x, pf);
            (x, a, ok)
        })
        .collect();
    let (mut best, mut action, mut ok) = runs
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("eight runs");
    // a configuration crossing one of its translates is not minimal; the
    // elementwise min or max with that translate has no larger action
    for _ in 0..32 {
        let Some((k, l)) = crossing_translate(&best, p, 1e-9) else { break };
        let qi = q as usize;
        let tr: Vec<f64> = (0..qi).map(|i| best[(i + k) % qi] + pf * ((i + k) / qi) as f64 + l as f64).collect();
        let mut improved = false;
        for pick in [f64::min, f64::max] {
            let mut z: Vec<f64> = best.iter().zip(&tr).map(|(a, b)| pick(*a, *b)).collect();
            let conv = gauss_seidel(h, &mut z, pf, true, 20_000);
            polish(h, &mut z, pf);
            let a = action_of(h, &z, pf);
            if a < action - 1e-12 {
                (best, action, ok) = (z, a, conv);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    let residual = el_residual(h, &best, pf, true);
    let m = 8 * q;
    let x: Vec<f64> = (-m..=m)
        .map(|i| best[i.rem_euclid(q) as usize] + pf * i.div_euclid(q) as f64)
        .collect();
    Ok(Configuration {
        first: -m,
        x,
        rotation: pf / q as f64,
        action,
        residual,
        p,
        q,
        stagnated: !ok && residual > conf_tolerance(h),
    })
}

/// p/q when the window is (p,q)-periodic up to rounding, otherwise the
/// least-squares slope of x_i against i.
pub fn rotation_number(config: &Configuration) -> Result<f64> {
    let n = config.x.len();
    if n < 16 {
        return Err(Error::InvalidParameter(format!("window of {n} points, need 16")));
    }
    let q = config.q;
    if q >= 1 && (q as usize) < n {
        let periodic = config
            .indices()
            .take(n - q as usize)
            .all(|i| (config.get(i + q) - config.get(i) - config.p as f64).abs() <= 1e-9 * (1.0 + config.get(i).abs()));
        if periodic {
            return Ok(config.p as f64 / q as f64);
        }
    }
    let is: Vec<f64> = config.indices().map(|i| i as f64).collect();
    let mi = is.iter().sum::<f64>() / n as f64;
    let mx = config.x.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, x) in is.iter().zip(&config.x) {
        sxy += (i - mi) * (x - mx);
        sxx += (i - mi) * (i - mi);
    }
    Ok(sxy / sxx)
}

/// The minimal segment of q steps from a to a + p (interior sites free),
/// started both from the straight line and from the minimal periodic orbit
/// translated to pass through a; the lower action wins.
pub fn minimal_segment(h: &GeneratingFunction, a: f64, p: i64, q: i64) -> Result<(Vec<f64>, f64)> {
    let orbit = minimal_periodic_config(h, p, q)?;
    minimal_segment_near(h, a, &orbit)
}

fn minimal_segment_near(h: &GeneratingFunction, a: f64, orbit: &Configuration) -> Result<(Vec<f64>, f64)> {
    let (p, q) = (orbit.p, orbit.q);
    if q < 2 {
        return Err(Error::InvalidParameter("segment needs q >= 2".into()));
    }
    let linear: Vec<f64> = (0..=q).map(|i| a + i as f64 * p as f64 / q as f64).collect();
    // orbit point just below a, shifted onto a
    let (j, l) = (0..q)
        .map(|j| (j, (a - orbit.get(j)).floor()))
        .min_by(|u, v| (a - orbit.get(u.0) - u.1).total_cmp(&(a - orbit.get(v.0) - v.1)))
        .expect("q >= 1");
    let shift = a - orbit.get(j) - l;
    let seeded: Vec<f64> = (0..=q).map(|i| orbit.get(j + i) + l + if i == 0 || i == q { shift } else { 0.0 }).collect();
    let action = |s: &[f64]| (0..q as usize).map(|i| h.h(s[i], s[i + 1])).sum::<f64>();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mut x in [linear, seeded] {
        gauss_seidel(h, &mut x, 0.0, false, 20_000);
        let act = action(&x);
        if best.as_ref().map_or(true, |b| act < b.1) {
            best = Some((x, act));
        }
    }
    let (x, _) = best.expect("two candidates");
    let res = el_residual(h, &x, 0.0, false);
    Ok((x, res))
}

/// Endpoint pairs (x_i, y_i) obtained by advancing both ends of an interval
/// along minimal configurations of the convergent p/q (q ≥ 50) of ω. Each
/// endpoint sequence is the minimal segment from the endpoint to its
/// translate by p, which is the stable way of solving the configuration
/// recursion forward.
pub fn gap_sequence(
    h: &GeneratingFunction,
    omega: f64,
    interval: (f64, f64),
    iterations: usize,
) -> Result<Vec<(f64, f64)>> {
    let (x0, y0) = interval;
    if !(y0 > x0) {
        return Err(Error::InvalidParameter("interval must have y0 > x0".into()));
    }
    let (p, q) = convergent_at_least(omega, 50);
    let orbit = minimal_periodic_config(h, p, q)?;
    let (xs, _) = minimal_segment_near(h, x0, &orbit)?;
    let (ys, _) = minimal_segment_near(h, y0, &orbit)?;
    let at = |s: &[f64], i: usize| -> f64 {
        let qu = q as usize;
        s[i % qu] + p as f64 * (i / qu) as f64
    };
    let mut out = Vec::with_capacity(iterations);
    for i in 0..iterations {
        let (a, b) = (at(&xs, i), at(&ys, i));
        if b - a < 1e-12 {
            break;
        }
        out.push((a, b));
    }
    Ok(out)
}

/// Total pairwise overlap length of the intervals taken mod 1.
pub fn gap_overlap(gaps: &[(f64, f64)]) -> f64 {
    let mut segs: Vec<(f64, f64)> = Vec::new();
    for &(a, b) in gaps {
        let w = (b - a).min(1.0);
        let s = a.rem_euclid(1.0);
        if s + w <= 1.0 {
            segs.push((s, s + w));
        } else {
            segs.push((s, 1.0));
            segs.push((0.0, s + w - 1.0));
        }
    }
    segs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut overlap = 0.0;
    let mut reach = f64::NEG_INFINITY;
    for (s, e) in segs {
        if s < reach {
            overlap += reach.min(e) - s;
        }
        reach = reach.max(e);
    }
    overlap
}

#[derive(Debug, Clone, Copy)]
pub struct DistanceOptions {
    pub resolution: usize,
    /// Range of y − x stored in the table.
    pub d_max: f64,
    /// Largest horizontal stencil step.
    pub max_step: usize,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self { resolution: 256, d_max: 2.0, max_step: 5 }
    }
}

/// h(x,y) = distance from (0,x) to (1,y) in the strip [0,1]×ℝ for the metric
/// with cometric A (length element √⟨A⁻¹v,v⟩), by dynamic programming over
/// columns with coprime stencil moves plus vertical moves along columns.
pub fn distance_generating_function(
    metric: &(dyn Fn(Vec2) -> Mat2 + Sync),
    opts: DistanceOptions,
) -> Result<GeneratingFunction> {
    let n = opts.resolution;
    if n < 16 || opts.max_step == 0 || !(opts.d_max > 0.0) {
        return Err(Error::InvalidParameter("distance table needs resolution >= 16".into()));
    }
    let h = 1.0 / n as f64;
    let geom = TorusGeometry::new(2, n)?;
    for i in 0..geom.len() {
        let a = metric(geom.node_point(i));
        if !(a[(0, 0)] > 0.0 && a.determinant() > 0.0) {
            return Err(Error::InvalidParameter("metric not positive definite".into()));
        }
    }
    let mut moves: Vec<(usize, i64)> = Vec::new();
    for da in 1..=opts.max_step as i64 {
        for db in -2 * da..=2 * da {
            if gcd(da, db) == 1 {
                moves.push((da as usize, db));
            }
        }
    }
    let inv_metric = |p: Vec2| -> Mat2 {
        metric(p).try_inverse().unwrap_or_else(Mat2::identity)
    };
    let seg_len = |p0: Vec2, d: Vec2| -> f64 {
        let w = |p: Vec2| (d.transpose() * inv_metric(p) * d)[(0, 0)].max(0.0).sqrt();
        (w(p0) + 4.0 * w(p0 + 0.5 * d) + w(p0 + d)) / 6.0
    };
    // weights[(a mod n, b mod n)][move], vertical move last
    let nm = moves.len() + 1;
    let weights: Vec<f64> = (0..n * n)
        .into_par_iter()
        .flat_map_iter(|k| {
            let (a, b) = (k % n, k / n);
            let p0 = Vec2::new(a as f64 * h, b as f64 * h);
            let mut w: Vec<f64> = moves
                .iter()
                .map(|&(da, db)| seg_len(p0, Vec2::new(da as f64 * h, db as f64 * h)))
                .collect();
            w.push(seg_len(p0, Vec2::new(0.0, h)));
            w
        })
        .collect();
    let dn = (opts.d_max * n as f64).round() as i64;
    let margin = (n / 4) as i64;
    let rows = (2 * (dn + margin) + 1) as usize;
    let cols = table_cols(n, opts.d_max);
    let table: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|b0| {
            let lo = b0 as i64 - dn - margin;
            let wt = |a: usize, b: i64, m: usize| weights[((a % n) + (b.rem_euclid(n as i64) as usize) * n) * nm + m];
            let mut dist = vec![f64::INFINITY; (n + 1) * rows];
            dist[(b0 as i64 - lo) as usize] = 0.0;
            for a in 0..=n {
                let col = &mut dist[a * rows..(a + 1) * rows];
                for r in 1..rows {
                    let c = col[r - 1] + wt(a, lo + r as i64 - 1, nm - 1);
                    if c < col[r] {
                        col[r] = c;
                    }
                }
                for r in (0..rows - 1).rev() {
                    let c = col[r + 1] + wt(a, lo + r as i64, nm - 1);
                    if c < col[r] {
                        col[r] = c;
                    }
                }
                if a == n {
                    break;
                }
                for r in 0..rows {
                    let base = dist[a * rows + r];
                    if !base.is_finite() {
                        continue;
                    }
                    let b = lo + r as i64;
                    for (m, &(da, db)) in moves.iter().enumerate() {
                        if a + da > n {
                            continue;
                        }
                        let rr = r as i64 + db;
                        if rr < 0 || rr >= rows as i64 {
                            continue;
                        }
                        let c = base + wt(a, b, m);
                        let slot = &mut dist[(a + da) * rows + rr as usize];
                        if c < *slot {
                            *slot = c;
                        }
                    }
                }
            }
            let last = &dist[n * rows..];
            (0..cols).map(|j| last[(margin as usize) + j]).collect()
        })
        .collect();
    let values: Vec<f64> = table.into_iter().flatten().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvariantViolation("distance graph disconnected".into()));
    }
    GeneratingFunction::from_table(n, opts.d_max, values)
}

#[derive(Debug, Clone, Copy)]
pub struct SingNearAubryOptions {
    pub grid: usize,
    pub distance: DistanceOptions,
    /// Largest denominator of the proxy rotation.
    pub q_max: i64,
    /// Displacement per propagator step at the speed bound, in cells; the
    /// integer stencil resolves directions to about one over this.
    pub cells_per_step: f64,
    /// Rotation the cohomology class was chosen for; `None` uses the slope
    /// measured on a calibrated curve of the computed u_c.
    pub rotation: Option<f64>,
}

impl Default for SingNearAubryOptions {
    fn default() -> Self {
        Self {
            grid: 128,
            distance: DistanceOptions { resolution: 128, ..Default::default() },
            q_max: 233,
            cells_per_step: 4.0,
            rotation: None,
        }
    }
}

/// Long minimal configuration of rotation p/q, seen on the torus.
#[derive(Debug, Clone)]
pub struct MinimalSetProxy {
    pub rotation: (i64, i64),
    /// Crossings x_i mod 1 of the section {first coordinate = 0}.
    pub section: Vec<f64>,
    /// Samples of the geodesic arcs joining consecutive crossings.
    pub samples: Vec<Vec2>,
    /// Largest distance on the section from a shifted crossing to the crossings.
    pub invariance: f64,
}

impl MinimalSetProxy {
    pub fn distance_to(&self, g: &TorusGeometry, points: &[Vec2]) -> Option<f64> {
        if points.is_empty() {
            return None;
        }
        Some(
            points
                .par_iter()
                .map(|s| self.samples.iter().map(|z| g.distance(*s, *z)).fold(f64::INFINITY, f64::min))
                .reduce(|| f64::INFINITY, f64::min),
        )
    }
}

/// Minimal configuration of rotation p/q for the distance generating
/// function of a geodesic system, with its arcs traced as unit-time action
/// minimizers and sampled every `spacing`.
pub fn minimal_set_proxy(
    spec: &SystemSpec,
    h: &GeneratingFunction,
    p: i64,
    q: i64,
    spacing: f64,
) -> Result<MinimalSetProxy> {
    let conf = minimal_periodic_config(h, p, q)?;
    let section: Vec<f64> = (0..q).map(|i| conf.get(i).rem_euclid(1.0)).collect();
    let circ = |a: f64, b: f64| {
        let d = (a - b).rem_euclid(1.0);
        d.min(1.0 - d)
    };
    let invariance = (0..q)
        .map(|i| {
            let z = conf.get(i + 1).rem_euclid(1.0);
            section.iter().map(|&y| circ(y, z)).fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let flat = spec.clone().with_c(Vec2::zeros());
    let geom = TorusGeometry { dim: 2, n: 16 };
    let arcs: Vec<Vec<Vec2>> = (0..q)
        .into_par_iter()
        .map(|i| {
            let x0 = Vec2::new(0.0, conf.get(i));
            let x1 = Vec2::new(1.0, conf.get(i + 1));
            let (_, curve) = fundamental_solution_with(&flat, x0, x1, 1.0, 0.0, &ActionOptions::single_seed())?;
            Ok(densify(&curve.knots, spacing))
        })
        .collect::<Result<_>>()?;
    let samples = arcs.into_iter().flatten().map(|z| geom.wrap(z)).collect();
    Ok(MinimalSetProxy { rotation: (p, q), section, samples, invariance })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingNearAubryReport {
    pub c: [f64; 2],
    pub singular_nodes: usize,
    /// Rotation p/q of the proxy the check is decided on.
    pub rotation: (i64, i64),
    /// Section crossings of that proxy.
    pub proxy: Vec<f64>,
    pub proxy_invariance: f64,
    pub distance: Option<f64>,
    /// Asymptotic slope of a backward calibrated curve of the computed u_c.
    pub slope: f64,
    /// The proxy of the measured slope, when it differs from `rotation`.
    pub calibrated_rotation: (i64, i64),
    pub calibrated_distance: Option<f64>,
    pub epsilon: f64,
    pub passed: bool,
    pub note: String,
}

/// Min distance from Sing(u_c) to the recurrent minimal-set proxy for a
/// geodesic-type system (V ≡ 0) at cohomology c.
pub fn sing_near_aubry_check(
    spec: &SystemSpec,
    c: Vec2,
    epsilon: f64,
    opts: SingNearAubryOptions,
) -> Result<SingNearAubryReport> {
    if spec.dim != 2 {
        return Err(Error::InvalidParameter("the section check needs a 2D system".into()));
    }
    if !(c[0] > 0.0) {
        return Err(Error::InvalidParameter("c must have positive first component".into()));
    }
    let spec_c = spec.clone().with_c(c);
    let g = spec_c.geometry(opts.grid)?;
    // the refined propagator is not stable on strongly varying metrics at
    // this grid, so the monotone one is used with steps of several cells
    let tau = (0.5 * t0_estimate(&spec_c)).max(opts.cells_per_step * g.spacing() / spec_c.speed_bound(c));
    let wk = WeakKamOptions {
        tau: Some(tau),
        refine: false,
        max_radius: Some((1.5 * opts.cells_per_step).ceil() as usize + 2),
        fixed: FixedPointOptions { tol_fix: 1e-6, ..Default::default() },
    };
    let sol = weak_kam_solution_opts(&spec_c, g, wk)?;
    let sd = SuperdiffGrid::new(&sol.field, &spec_c)?;
    let sing: Vec<Vec2> = (0..g.len()).filter(|&i| sd.singular[i]).map(|i| g.node_point(i)).collect();
    let slope = calibrated_slope(&spec_c, &sol.field, &sing, g)?;

    let dgf = distance_generating_function(&|x| spec_c.mass(x), opts.distance)?;
    // a resonant lock shows up as a slope close to a small-q rational
    let last = |w: f64| *convergents(w, opts.q_max).last().expect("at least one convergent");
    let measured = last(slope);
    let target = opts.rotation.map_or(measured, last);
    let spacing = 0.25 * g.spacing();
    let proxy = minimal_set_proxy(&spec_c, &dgf, target.0, target.1, spacing)?;
    let distance = proxy.distance_to(&g, &sing);
    let calibrated_distance = if measured == target {
        distance
    } else {
        minimal_set_proxy(&spec_c, &dgf, measured.0, measured.1, spacing)?.distance_to(&g, &sing)
    };
    let (passed, note) = match distance {
        None => (true, "no singularities".to_string()),
        Some(d) => (
            d <= epsilon,
            format!(
                "{} singular nodes, {} proxy crossings, calibrated slope {slope:.6}",
                sing.len(),
                target.1
            ),
        ),
    };
    Ok(SingNearAubryReport {
        c: [c[0], c[1]],
        singular_nodes: sing.len(),
        rotation: target,
        proxy: proxy.section,
        proxy_invariance: proxy.invariance,
        distance,
        slope,
        calibrated_rotation: measured,
        calibrated_distance,
        epsilon,
        passed,
        note,
    })
}

fn densify(knots: &[Vec2], spacing: f64) -> Vec<Vec2> {
    let mut out = vec![knots[0]];
    for w in knots.windows(2) {
        let m = ((w[1] - w[0]).norm() / spacing).ceil().max(1.0) as usize;
        out.extend((1..=m).map(|j| w[0] + (w[1] - w[0]) * (j as f64 / m as f64)));
    }
    out
}

/// Rotation slope of u_c read off a backward calibrated curve
/// ẋ = −A(x)(c + Du(x)), started at the node farthest from Sing(u_c);
/// the slope is taken over the second half of the run.
fn calibrated_slope(spec: &SystemSpec, u: &ScalarField, sing: &[Vec2], g: TorusGeometry) -> Result<f64> {
    let start = (0..g.len())
        .map(|i| g.node_point(i))
        .max_by(|a, b| {
            let d = |z: &Vec2| sing.iter().map(|s| g.distance(*z, *s)).fold(f64::INFINITY, f64::min);
            d(a).total_cmp(&d(b))
        })
        .ok_or_else(|| Error::InvalidParameter("empty grid".into()))?;
    let field = |y: Vec2| -> Vec2 {
        let (_, du, _) = u.eval(y);
        -(spec.mass(y) * (spec.c + du))
    };
    let dt = 0.01;
    let steps = 40_000;
    let mut y = start;
    let mut mid = y;
    for k in 0..steps {
        let k1 = field(y);
        let k2 = field(y + k1 * (0.5 * dt));
        let k3 = field(y + k2 * (0.5 * dt));
        let k4 = field(y + k3 * dt);
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if k + 1 == steps / 2 {
            mid = y;
        }
    }
    let d = y - mid;
    if !(d[0].abs() > 1.0) {
        return Err(Error::InvalidParameter("calibrated curve does not wind horizontally".into()));
    }
    Ok(d[1] / d[0])
}

/// Cohomology direction whose minimal geodesics rotate with slope ω, for a
/// distance generating function h: c = W·(W − ωW′, W′) with W the mean
/// minimal action per step, differentiated between the first two
/// convergents with denominator at least `q_min`.
pub fn cohomology_for_rotation(h: &GeneratingFunction, omega: f64, q_min: i64) -> Result<Vec2> {
    let cs = convergents(omega, 1_000_000);
    let k = cs
        .iter()
        .position(|c| c.1 >= q_min)
        .filter(|&k| k + 1 < cs.len())
        .ok_or_else(|| Error::InvalidParameter("rotation has no two convergents past q_min".into()))?;
    let mean = |(p, q): (i64, i64)| -> Result<(f64, f64)> {
        let conf = minimal_periodic_config(h, p, q)?;
        Ok((p as f64 / q as f64, conf.action / q as f64))
    };
    let (a, b) = (mean(cs[k])?, mean(cs[k + 1])?);
    let dw = (b.1 - a.1) / (b.0 - a.0);
    let w = h_mean_at(a, b, omega);
    Ok(Vec2::new(w - omega * dw, dw) * w)
}

fn h_mean_at(a: (f64, f64), b: (f64, f64), omega: f64) -> f64 {
    a.1 + (b.1 - a.1) * (omega - a.0) / (b.0 - a.0)
}
