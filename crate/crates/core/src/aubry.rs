//! Peierls barrier by dynamic programming over short-time action tables,
//! the projected Aubry set as its zero diagonal, calibration residuals of
//! backward characteristics, and distances from singular trajectories to the
//! Aubry set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::t0_estimate;
use crate::error::{Error, Result};
use crate::geometry::{TorusGeometry, Vec2};
use crate::semiflow::{omega_limit, Method, OmegaKind, OmegaOptions, Semiflow};
use crate::system::SystemSpec;
use crate::weakkam::{LaxOleinik, LaxOleinikOptions, ScalarField};

/// Stand-in for +∞ in the indicator started DP.
const UNREACHED: f64 = 1e12;

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    /// Nodes per axis of the coarse barrier grid.
    pub grid: usize,
    /// Spacing Δ of the sampled times t_k = k·Δ.
    pub delta: f64,
    pub t_max: f64,
    pub tol_aubry: f64,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self { grid: 64, delta: 1.0, t_max: 50.0, tol_aubry: 1e-3 }
    }
}

/// A_{t_k}(x,·) + α t_k for one source x and every sampled time.
#[derive(Debug, Clone)]
pub struct BarrierTable {
    pub geometry: TorusGeometry,
    pub source: usize,
    pub times: Vec<f64>,
    /// values[k][node]
    pub values: Vec<Vec<f64>>,
    /// Running minimum over the sampled times, per node.
    pub liminf_estimate: Vec<f64>,
}

impl BarrierTable {
    /// The running minimum after the first `k` times at one node; nonincreasing in k.
    pub fn running_min(&self, node: usize, k: usize) -> f64 {
        self.values[..k.min(self.values.len())]
            .iter()
            .map(|v| v[node])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Barrier engine: one short-time min-plus propagator (no sub-node
/// refinement, so that the unreached sentinel stays inert) on a coarse grid.
#[derive(Debug, Clone)]
pub struct Barrier {
    pub lo: LaxOleinik,
    pub c: Vec2,
    pub alpha: f64,
    pub opts: BarrierOptions,
    steps_per_delta: usize,
}

impl Barrier {
    pub fn new(spec: &SystemSpec, alpha: f64, opts: BarrierOptions) -> Result<Self> {
        if opts.t_max < 10.0 || !(opts.delta > 0.0) || !(opts.tol_aubry > 0.0) {
            return Err(Error::InvalidParameter("barrier needs t_max >= 10 and positive delta, tol".into()));
        }
        let geometry = spec.geometry(opts.grid)?;
        let steps = (opts.delta / (0.5 * t0_estimate(spec))).ceil().max(1.0) as usize;
        let tau = opts.delta / steps as f64;
        let lo = LaxOleinik::new(spec, geometry, tau, LaxOleinikOptions { refine: false, ..Default::default() })?;
        Ok(Self { lo, c: spec.c, alpha, opts, steps_per_delta: steps })
    }

    pub fn geometry(&self) -> TorusGeometry {
        self.lo.geometry()
    }

    pub fn row(&self, source: usize) -> BarrierTable {
        let g = self.geometry();
        let mut w = vec![UNREACHED; g.len()];
        w[source] = 0.0;
        let count = (self.opts.t_max / self.opts.delta).floor() as usize;
        let mut times = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count);
        let mut liminf = vec![f64::INFINITY; g.len()];
        for k in 1..=count {
            for _ in 0..self.steps_per_delta {
                w = self.lo.minus(&w, self.c, self.alpha).0;
            }
            let t = k as f64 * self.opts.delta;
            if t >= 1.0 - 1e-12 {
                for (m, v) in liminf.iter_mut().zip(&w) {
                    *m = m.min(*v);
                }
                times.push(t);
                values.push(w.clone());
            }
        }
        BarrierTable { geometry: g, source, times, values, liminf_estimate: liminf }
    }

    /// h(x,y) with both points snapped to the nearest barrier-grid node.
    pub fn value(&self, x: Vec2, y: Vec2) -> f64 {
        let g = self.geometry();
        self.row(g.nearest_node(x)).liminf_estimate[g.nearest_node(y)]
    }

    /// h(x,x) at every node.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.geometry().len()).into_par_iter().map(|i| self.row(i).liminf_estimate[i]).collect()
    }
}

pub fn peierls_barrier(spec: &SystemSpec, x: Vec2, y: Vec2, alpha: f64, t_max: f64) -> Result<f64> {
    let b = Barrier::new(spec, alpha, BarrierOptions { t_max, ..Default::default() })?;
    Ok(b.value(x, y))
}

/// Grid points with h(x,x) ≤ tol_aubry, with the whole diagonal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AubrySet {
    pub points: Vec<[f64; 2]>,
    pub diagonal: Vec<([f64; 2], f64)>,
}

impl AubrySet {
    pub fn vectors(&self) -> Vec<Vec2> {
        self.points.iter().map(|p| Vec2::new(p[0], p[1])).collect()
    }
}

pub fn aubry_set(spec: &SystemSpec, alpha: f64, opts: BarrierOptions) -> Result<AubrySet> {
    let b = Barrier::new(spec, alpha, opts)?;
    let g = b.geometry();
    let diag = b.diagonal();
    let diagonal: Vec<([f64; 2], f64)> = diag
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let p = g.node_point(i);
            ([p[0], p[1]], d)
        })
        .collect();
    let points = diagonal.iter().filter(|d| d.1 <= opts.tol_aubry).map(|d| d.0).collect();
    Ok(AubrySet { points, diagonal })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub residual: f64,
    /// Backward time actually integrated.
    pub survived: f64,
    /// The curve entered a cell with a singular corner before the horizon.
    pub truncated: bool,
    pub endpoint: [f64; 2],
}

/// Integrates ẋ = −A(x)(c + Du(x)) backward from x with RK4 through smooth
/// cells and measures max over sub-arcs of |u(γ(b)) − u(γ(a)) − ∫_a^b L^c|.
pub fn calibration_residual(
    spec: &SystemSpec,
    u: &ScalarField,
    smooth: &dyn Fn(Vec2) -> bool,
    x: Vec2,
    alpha: f64,
    horizon: f64,
) -> Result<CalibrationReport> {
    SystemSpec::check_point(x)?;
    if !smooth(x) {
        return Err(Error::InvalidParameter("calibration start is not in a smooth cell".into()));
    }
    let c = spec.c;
    let field = |y: Vec2| -> Vec2 {
        let (_, du, _) = u.eval(y);
        spec.restrict(spec.mass(y) * (c + du))
    };
    let lag = |y: Vec2, v: Vec2| spec.eval_lagrangian_c(y, v, alpha);
    let dt = 0.01_f64.min(0.25 * t0_estimate(spec));
    let steps = (horizon / dt).ceil() as usize;
    let dt = horizon / steps as f64;
    // walk backward; D(s) = u(γ(s)) − ∫_{s}^{0} L^c accumulated from the start,
    // so the residual is the spread of u(γ) + ∫ L along the arc
    let mut y = spec.restrict(x);
    let mut integral = 0.0;
    let mut dmin = u.value(y);
    let mut dmax = dmin;
    let mut survived = 0.0;
    let mut truncated = false;
    for _ in 0..steps {
        let k1 = field(y);
        let k2 = field(y - k1 * (0.5 * dt));
        let k3 = field(y - k2 * (0.5 * dt));
        let k4 = field(y - k3 * dt);
        let next = y - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if !smooth(next) {
            truncated = true;
            break;
        }
        // Simpson on the segment, velocities are the forward ones
        let mid = y - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 12.0);
        let seg = (lag(y, k1)? + 4.0 * lag(mid, field(mid))? + lag(next, field(next))?) * dt / 6.0;
        integral += seg;
        y = next;
        survived += dt;
        let d = u.value(y) + integral;
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    Ok(CalibrationReport { residual: dmax - dmin, survived, truncated, endpoint: [y[0], y[1]] })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingToAubryEntry {
    pub start: [f64; 2],
    pub kind: OmegaKind,
    pub support: Vec<[f64; 2]>,
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingToAubryReport {
    pub entries: Vec<SingToAubryEntry>,
    pub min: f64,
    pub median: f64,
}

/// Flows each start for `horizon`, then measures the torus distance from the
/// ω-limit support to the Aubry points.
pub fn sing_to_aubry_distance(
    flow: &Semiflow,
    aubry: &[Vec2],
    starts: &[Vec2],
    horizon: f64,
    tau: f64,
    method: Method,
) -> Result<SingToAubryReport> {
    if aubry.is_empty() {
        return Err(Error::InvalidParameter("empty Aubry set".into()));
    }
    let g = flow.geometry();
    let entries: Vec<SingToAubryEntry> = starts
        .par_iter()
        .map(|&s| {
            let tr = flow.integrate(s, horizon, tau, method)?;
            let om = omega_limit(&tr, OmegaOptions::new(g.spacing()))?;
            let distance = om
                .support
                .iter()
                .flat_map(|p| aubry.iter().map(move |a| g.distance(Vec2::new(p[0], p[1]), *a)))
                .fold(f64::INFINITY, f64::min);
            Ok(SingToAubryEntry { start: [s[0], s[1]], kind: om.kind, support: om.support, distance })
        })
        .collect::<Result<_>>()?;
    let mut d: Vec<f64> = entries.iter().map(|e| e.distance).collect();
    d.sort_by(f64::total_cmp);
    let min = d.first().copied().unwrap_or(f64::NAN);
    let median = if d.is_empty() { f64::NAN } else { d[d.len() / 2] };
    Ok(SingToAubryReport { entries, min, median })
}
