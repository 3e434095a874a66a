//! Lax–Oleinik semigroups on grids, Mather's α-function and periodic weak
//! KAM solutions.

use rayon::prelude::*;

use crate::action::{t0_estimate, ActionTable};
use crate::error::{Error, Result};
use crate::geometry::{Mat2, TorusGeometry, Vec2};
use crate::interp::cubic_eval;
use crate::system::SystemSpec;

/// A periodic function sampled on a torus grid, interpolated by cubic
/// convolution.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub geometry: TorusGeometry,
    pub values: Vec<f64>,
    pub label: String,
    /// Largest slope between adjacent nodes.
    pub lipschitz: f64,
}

impl ScalarField {
    pub fn new(geometry: TorusGeometry, values: Vec<f64>, label: &str) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::GeometryMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                geometry.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scalar field"));
        }
        let h = geometry.spacing();
        // Euclidean bound: per node, the larger one-sided slope on each axis
        let mut lip: f64 = 0.0;
        for idx in 0..geometry.len() {
            let (i, j) = geometry.coords(idx);
            let (i, j) = (i as i64, j as i64);
            let slope = |a: usize, b: usize| (values[a] - values[b]).abs() / h;
            let sx = slope(geometry.index(i + 1, j), idx).max(slope(idx, geometry.index(i - 1, j)));
            let sy = if geometry.dim == 2 {
                slope(geometry.index(i, j + 1), idx).max(slope(idx, geometry.index(i, j - 1)))
            } else {
                0.0
            };
            lip = lip.max(sx.hypot(sy));
        }
        Ok(Self { geometry, values, label: label.to_string(), lipschitz: lip })
    }

    pub fn from_fn(geometry: TorusGeometry, label: &str, f: impl Fn(Vec2) -> f64) -> Result<Self> {
        let values = (0..geometry.len()).map(|i| f(geometry.node_point(i))).collect();
        Self::new(geometry, values, label)
    }

    pub fn constant(geometry: TorusGeometry, value: f64, label: &str) -> Self {
        Self::new(geometry, vec![value; geometry.len()], label).expect("finite constant")
    }

    /// Value, gradient and Hessian of the interpolant at any real point.
    pub fn eval(&self, x: Vec2) -> (f64, Vec2, Mat2) {
        let g = &self.geometry;
        let (base, frac) = g.cell_of(x);
        let h = g.spacing();
        cubic_eval(g.dim, |i, j| self.values[g.index(i, j)], base, frac, (h, h))
    }

    pub fn value(&self, x: Vec2) -> f64 {
        self.eval(x).0
    }

    /// v_c(x) = ⟨c,x⟩ + u(x) at a lift point.
    pub fn lifted(&self, c: Vec2, x: Vec2) -> f64 {
        c.dot(&x) + self.value(x)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_distance(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LaxOleinikOptions {
    /// Speed bound used to size the displacement window; defaults to the
    /// energy bound of the system at its attached c.
    pub max_speed: Option<f64>,
    /// Window radius cap in nodes; larger windows are replaced by substeps.
    pub max_radius: Option<usize>,
    /// Quadratic refinement of the node infimum.
    pub refine: bool,
}

impl Default for LaxOleinikOptions {
    fn default() -> Self {
        Self { max_speed: None, max_radius: None, refine: true }
    }
}

/// T⁻_t and T⁺_t on a fixed grid and time, built once from an action table
/// at c = 0 and reusable for every cohomology class c.
#[derive(Debug, Clone)]
pub struct LaxOleinik {
    pub table: ActionTable,
    pub t: f64,
    pub substeps: usize,
    pub refine: bool,
}

/// Sum of window-boundary hits over the last sweep; nonzero values mean the
/// speed bound was too small.
#[derive(Debug, Clone, Copy, Default)]
pub struct SweepStats {
    pub boundary_hits: usize,
}

impl LaxOleinik {
    pub fn new(
        spec: &SystemSpec,
        geometry: TorusGeometry,
        t: f64,
        opts: LaxOleinikOptions,
    ) -> Result<Self> {
        if geometry.dim != spec.dim {
            return Err(Error::GeometryMismatch("grid and system dimension differ".into()));
        }
        if !(t > 0.0) {
            return Err(Error::StepTooSmall(t));
        }
        let speed = opts.max_speed.unwrap_or_else(|| spec.speed_bound(spec.c)) * 1.5;
        let cap = opts.max_radius.unwrap_or(if spec.dim == 1 { 400 } else { 8 });
        let h = geometry.spacing();
        let mut m = 1;
        let radius = loop {
            let r = (speed * t / m as f64 / h).ceil() as usize + 2;
            if r <= cap || m >= 10_000 {
                break r.min(cap.max(3));
            }
            m += 1;
        };
        let table = ActionTable::build(spec, geometry, t / m as f64, radius)?;
        Ok(Self { table, t, substeps: m, refine: opts.refine })
    }

    pub fn geometry(&self) -> TorusGeometry {
        self.table.geometry
    }

    fn sweep(&self, u: &[f64], c: Vec2, alpha: f64, plus: bool, out: &mut [f64]) -> usize {
        let tab = &self.table;
        let g = tab.geometry;
        let n = g.n as i64;
        let h = g.spacing();
        let r = tab.radius as i64;
        let kk = tab.len_offsets();
        let dim = g.dim;
        // u on a halo-padded grid so that shifted reads need no wrapping
        let pw = n + 2 * r;
        let rows = if dim == 1 { 1 } else { pw };
        let mut up = vec![0.0; (pw * rows) as usize];
        for jj in 0..rows {
            for ii in 0..pw {
                let j = if dim == 1 { 0 } else { jj - r };
                up[(ii + pw * jj) as usize] = u[g.index(ii - r, j)];
            }
        }
        let stride = if dim == 1 { 0 } else { pw };
        let lin: Vec<i64> = tab.offsets.iter().map(|&(a, b)| a + stride * b).collect();
        let shift: Vec<f64> = tab
            .offsets
            .iter()
            .map(|&(a, b)| (c[0] * a as f64 + c[1] * b as f64) * h)
            .collect();
        let adt = alpha * tab.t;
        let sigma = if plus { -1.0 } else { 1.0 };
        out.par_iter_mut()
            .enumerate()
            .map(|(x, slot)| {
                let (xi, xj) = g.coords(x);
                let base = (xi as i64 + r) + stride * (xj as i64 + r);
                let row = x * kk;
                let cost = |k: usize| -> f64 {
                    if plus {
                        tab.values[row + k] - up[(base + lin[k]) as usize] - shift[k]
                    } else {
                        up[(base - lin[k]) as usize] + tab.incoming[row + k] - shift[k]
                    }
                };
                let mut best = f64::INFINITY;
                let mut best_k = 0;
                for k in 0..kk {
                    let v = cost(k);
                    if v < best {
                        best = v;
                        best_k = k;
                    }
                }
                let (a, b) = tab.offsets[best_k];
                let at = |da: i64, db: i64| -> f64 {
                    tab.offset_index(a + da, b + db).map_or(f64::INFINITY, cost)
                };
                let mut hit = 0;
                let mut value = best;
                let fxm = at(-1, 0);
                let fxp = at(1, 0);
                if dim == 1 {
                    if fxm.is_finite() && fxp.is_finite() {
                        let d2 = fxm - 2.0 * best + fxp;
                        if self.refine && d2 > 0.0 {
                            let s = 0.5 * (fxm - fxp) / d2;
                            if s.abs() <= 1.0 {
                                value = best - (fxp - fxm).powi(2) / (8.0 * d2);
                            }
                        }
                    } else {
                        hit = 1;
                    }
                } else {
                    let fym = at(0, -1);
                    let fyp = at(0, 1);
                    let fpp = at(1, 1);
                    let fpm = at(1, -1);
                    let fmp = at(-1, 1);
                    let fmm = at(-1, -1);
                    let all = [fxm, fxp, fym, fyp, fpp, fpm, fmp, fmm];
                    if all.iter().all(|v| v.is_finite()) {
                        if self.refine {
                            let gx = 0.5 * (fxp - fxm);
                            let gy = 0.5 * (fyp - fym);
                            let hxx = fxp - 2.0 * best + fxm;
                            let hyy = fyp - 2.0 * best + fym;
                            let hxy = 0.25 * (fpp - fpm - fmp + fmm);
                            let det = hxx * hyy - hxy * hxy;
                            if hxx > 0.0 && det > 0.0 {
                                let sx = -(hyy * gx - hxy * gy) / det;
                                let sy = -(-hxy * gx + hxx * gy) / det;
                                if sx.abs() <= 1.0 && sy.abs() <= 1.0 {
                                    let drop = 0.5 * (gx * sx + gy * sy);
                                    if drop <= 0.0 {
                                        value = best + drop;
                                    }
                                }
                            }
                        }
                    } else {
                        hit = 1;
                    }
                }
                *slot = sigma * (value + adt);
                hit
            })
            .sum()
    }

    fn apply(&self, u: &[f64], c: Vec2, alpha: f64, plus: bool) -> (Vec<f64>, SweepStats) {
        let mut cur = u.to_vec();
        let mut next = vec![0.0; u.len()];
        let mut hits = 0;
        for _ in 0..self.substeps {
            hits += self.sweep(&cur, c, alpha, plus, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        (cur, SweepStats { boundary_hits: hits })
    }

    /// T⁻_t u(x) = inf_y u(y) + A^c_t(y,x) with A^c including +αt.
    pub fn minus(&self, u: &[f64], c: Vec2, alpha: f64) -> (Vec<f64>, SweepStats) {
        self.apply(u, c, alpha, false)
    }

    /// T⁺_t u(x) = sup_y u(y) − A^c_t(x,y).
    pub fn plus(&self, u: &[f64], c: Vec2, alpha: f64) -> (Vec<f64>, SweepStats) {
        self.apply(u, c, alpha, true)
    }
}

fn check_field(spec: &SystemSpec, u: &ScalarField) -> Result<()> {
    if u.geometry.dim != spec.dim {
        return Err(Error::GeometryMismatch("field and system dimension differ".into()));
    }
    Ok(())
}

/// One-shot T⁻_t u; builds the action table for this call.
pub fn lax_oleinik_minus(spec: &SystemSpec, u: &ScalarField, t: f64, alpha: f64) -> Result<ScalarField> {
    check_field(spec, u)?;
    let lo = LaxOleinik::new(spec, u.geometry, t, LaxOleinikOptions::default())?;
    let (v, _) = lo.minus(&u.values, spec.c, alpha);
    ScalarField::new(u.geometry, v, "T-u")
}

/// One-shot T⁺_t u; builds the action table for this call.
pub fn lax_oleinik_plus(spec: &SystemSpec, u: &ScalarField, t: f64, alpha: f64) -> Result<ScalarField> {
    check_field(spec, u)?;
    let lo = LaxOleinik::new(spec, u.geometry, t, LaxOleinikOptions::default())?;
    let (v, _) = lo.plus(&u.values, spec.c, alpha);
    ScalarField::new(u.geometry, v, "T+u")
}

#[derive(Debug, Clone, Copy)]
pub struct AlphaOptions {
    /// Target accuracy of the returned value.
    pub tol: f64,
    pub max_steps: usize,
    pub min_steps: usize,
}

impl Default for AlphaOptions {
    fn default() -> Self {
        Self { tol: 1e-4, max_steps: 40_000, min_steps: 16 }
    }
}

#[derive(Debug, Clone)]
pub struct AlphaEstimate {
    pub value: f64,
    /// Bracket from the last step: −max(Tu−u)/τ ≤ α ≤ −min(Tu−u)/τ.
    pub lower: f64,
    pub upper: f64,
    pub steps: usize,
    pub converged: bool,
    /// Last two extrapolated Cesàro means.
    pub last_two: (f64, f64),
}

/// α(c) = −lim T⁻_t 0 / t, with the time step and table of `lo`.
///
/// The Cesàro means ᾱ_k = −(T⁻_{kτ}0)(x₀)/(kτ) are Richardson-extrapolated
/// (2ᾱ_{2k} − ᾱ_k). Every step also yields the bracket
/// min(Tu−u) ≤ −ατ ≤ max(Tu−u), which stops the iteration once it is tight.
pub fn compute_alpha_with(lo: &LaxOleinik, c: Vec2, opts: AlphaOptions) -> AlphaEstimate {
    let g = lo.geometry();
    let tau = lo.t;
    let mut u = vec![0.0; g.len()];
    let mut cumulative = 0.0;
    let mut means = vec![0.0];
    let mut extrap: Vec<f64> = Vec::new();
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    let mut stable = 0;
    for k in 1..=opts.max_steps {
        let (w, _) = lo.minus(&u, c, 0.0);
        let mut dmin = f64::INFINITY;
        let mut dmax = f64::NEG_INFINITY;
        for (a, b) in w.iter().zip(&u) {
            dmin = dmin.min(a - b);
            dmax = dmax.max(a - b);
        }
        lower = lower.max(-dmax / tau);
        upper = upper.min(-dmin / tau);
        let anchor = w[0];
        cumulative += anchor;
        u = w.iter().map(|v| v - anchor).collect();
        let mean = -cumulative / (k as f64 * tau);
        means.push(mean);
        let r = if k % 2 == 0 { 2.0 * mean - means[k / 2] } else { mean };
        extrap.push(r);
        let n = extrap.len();
        if k % 2 == 0 && n >= 3 && (extrap[n - 1] - extrap[n - 3]).abs() < opts.tol * 0.1 {
            stable += 1;
        } else if k % 2 == 0 {
            stable = 0;
        }
        let last_two = (if n >= 3 { extrap[n - 3] } else { r }, r);
        if k >= opts.min_steps && upper - lower <= opts.tol {
            return AlphaEstimate {
                value: 0.5 * (upper + lower),
                lower,
                upper,
                steps: k,
                converged: true,
                last_two,
            };
        }
        // a stable extrapolation only counts once the bracket is not far off
        if k >= opts.min_steps.max(64) && stable >= 32 && upper - lower <= 100.0 * opts.tol {
            return AlphaEstimate {
                value: r.clamp(lower, upper),
                lower,
                upper,
                steps: k,
                converged: true,
                last_two,
            };
        }
    }
    let n = extrap.len();
    AlphaEstimate {
        value: extrap[n - 1].clamp(lower, upper),
        lower,
        upper,
        steps: opts.max_steps,
        converged: false,
        last_two: (extrap[n.saturating_sub(3)], extrap[n - 1]),
    }
}

/// Default iteration step τ = t₀/2.
pub fn default_tau(spec: &SystemSpec) -> f64 {
    0.5 * t0_estimate(spec)
}

/// α(c) for the system with its attached c on the given grid.
pub fn compute_alpha(spec: &SystemSpec, geometry: TorusGeometry) -> Result<AlphaEstimate> {
    let lo = LaxOleinik::new(spec, geometry, default_tau(spec), LaxOleinikOptions::default())?;
    let est = compute_alpha_with(&lo, spec.c, AlphaOptions::default());
    if !est.converged {
        return Err(Error::NonConvergence {
            what: "alpha",
            residual: (est.last_two.1 - est.last_two.0).abs(),
        });
    }
    Ok(est)
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions {
    pub tol_fix: f64,
    pub max_steps: usize,
    /// Plain steps before switching to averaged (Krasnoselskii–Mann) steps,
    /// which converge where T⁻ only transports (invariant tori).
    pub plain_steps: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { tol_fix: 1e-8, max_steps: 20_000, plain_steps: 200 }
    }
}

#[derive(Debug, Clone)]
pub struct WeakKamSolution {
    pub field: ScalarField,
    pub c: Vec2,
    /// α refined from the fixed point: −mid(T⁻u − u)/τ.
    pub alpha: f64,
    pub tau: f64,
    pub steps: usize,
    pub converged: bool,
    /// sup|u_{k+1} − u_k| after anchoring, per step.
    pub residuals: Vec<f64>,
    /// sup|T⁻_τ u + ατ − u| for the returned field and α.
    pub fixed_point_residual: f64,
}

/// Iterates u ← T⁻_τ u + ατ from u ≡ 0, anchoring max u = 0 each step;
/// after `plain_steps` the update is averaged with the previous iterate.
pub fn weak_kam_solution_with(
    lo: &LaxOleinik,
    c: Vec2,
    alpha: f64,
    opts: FixedPointOptions,
) -> Result<WeakKamSolution> {
    let g = lo.geometry();
    let tau = lo.t;
    let mut u = vec![0.0; g.len()];
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut steps = 0;
    for k in 1..=opts.max_steps {
        let (mut w, _) = lo.minus(&u, c, alpha);
        if k > opts.plain_steps {
            for (a, b) in w.iter_mut().zip(&u) {
                *a = 0.5 * (*a + b);
            }
        }
        let top = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in w.iter_mut() {
            *v -= top;
        }
        let r = w.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        residuals.push(r);
        u = w;
        steps = k;
        if r < opts.tol_fix {
            converged = true;
            break;
        }
    }
    let (w, _) = lo.minus(&u, c, 0.0);
    let mut dmin = f64::INFINITY;
    let mut dmax = f64::NEG_INFINITY;
    for (a, b) in w.iter().zip(&u) {
        dmin = dmin.min(a - b);
        dmax = dmax.max(a - b);
    }
    let refined = -0.5 * (dmin + dmax) / tau;
    let fixed_point_residual = 0.5 * (dmax - dmin);
    let field = ScalarField::new(g, u, "u_c")?;
    Ok(WeakKamSolution {
        field,
        c,
        alpha: refined,
        tau,
        steps,
        converged,
        residuals,
        fixed_point_residual,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct WeakKamOptions {
    /// Propagator step; `None` means [`default_tau`].
    pub tau: Option<f64>,
    pub refine: bool,
    /// Overrides the 2D displacement window cap of the propagator.
    pub max_radius: Option<usize>,
    pub fixed: FixedPointOptions,
}

impl Default for WeakKamOptions {
    fn default() -> Self {
        Self { tau: None, refine: true, max_radius: None, fixed: FixedPointOptions::default() }
    }
}

/// Weak KAM solution for the system's attached c.
///
/// The anchoring max u = 0 cancels the additive ατ, so α is not needed
/// beforehand; the returned α is read off the fixed point.
pub fn weak_kam_solution(spec: &SystemSpec, geometry: TorusGeometry) -> Result<WeakKamSolution> {
    weak_kam_solution_opts(spec, geometry, WeakKamOptions::default())
}

pub fn weak_kam_solution_opts(
    spec: &SystemSpec,
    geometry: TorusGeometry,
    opts: WeakKamOptions,
) -> Result<WeakKamSolution> {
    let tau = opts.tau.unwrap_or_else(|| default_tau(spec));
    let lo = LaxOleinik::new(spec, geometry, tau, LaxOleinikOptions { refine: opts.refine, max_radius: opts.max_radius, ..Default::default() })?;
    let sol = weak_kam_solution_with(&lo, spec.c, spec.alpha.unwrap_or(0.0), opts.fixed)?;
    if !sol.converged {
        return Err(Error::NonConvergence {
            what: "weak KAM fixed point",
            residual: sol.residuals.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn u0(x: f64) -> f64 {
        let x = x - x.floor();
        let y = if x <= 0.5 { x } else { 1.0 - x };
        (2.0 / PI) * (1.0 - (PI * y).cos())
    }

    #[test]
    fn free_zero_is_fixed() {
        let f = SystemSpec::free(1).unwrap();
        let g = TorusGeometry::new(1, 64).unwrap();
        let z = ScalarField::constant(g, 0.0, "0");
        let m = lax_oleinik_minus(&f, &z, 0.1, 0.0).unwrap();
        let p = lax_oleinik_plus(&f, &z, 0.1, 0.0).unwrap();
        assert!(m.values.iter().all(|v| v.abs() < 1e-14));
        assert!(p.values.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn pendulum_alpha_and_solution() {
        let p = SystemSpec::pendulum();
        let g = TorusGeometry::new(1, 256).unwrap();
        let a = compute_alpha(&p, g).unwrap();
        assert!(a.value.abs() < 1e-3, "{a:?}");
        let sol = weak_kam_solution(&p.clone().with_alpha(a.value), g).unwrap();
        let top = u0(0.5);
        let err = (0..g.len())
            .map(|i| (sol.field.values[i] - (u0(g.node_point(i)[0]) - top)).abs())
            .fold(0.0, f64::max);
        assert!(err < 2e-2, "{err}");
    }

    #[test]
    fn free_alpha() {
        let f = SystemSpec::free(1).unwrap().with_c(Vec2::new(1.0, 0.0));
        let g = TorusGeometry::new(1, 128).unwrap();
        let a = compute_alpha(&f, g).unwrap();
        assert!((a.value - 0.5).abs() < 1e-3, "{a:?}");
    }
}
