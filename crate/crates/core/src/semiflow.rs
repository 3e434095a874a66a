//! Generalized characteristics ẋ ∈ A(x)(c + D⁺u(x)) of a weak KAM solution,
//! by the intrinsic step x ↦ argmax_y u(y) − A^c_τ(x,y) and by Euler steps of
//! the minimal selection.

use serde::{Deserialize, Serialize};

use crate::action::{fundamental_solution_with, t0_estimate, ActionOptions, AMBIGUITY_TOL};
use crate::error::{Error, Result};
use crate::geometry::{TorusGeometry, Vec2};
use crate::superdiff::SuperdiffGrid;
use crate::system::SystemSpec;
use crate::weakkam::ScalarField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Intrinsic,
    SelectionOde,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intrinsic" => Ok(Method::Intrinsic),
            "selection-ode" => Ok(Method::SelectionOde),
            other => Err(Error::InvalidParameter(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dim: usize,
    pub step: f64,
    pub method: Method,
    /// Points on the lift.
    pub points: Vec<Vec2>,
    pub torus_points: Vec<Vec2>,
    /// Minimal-selection covector c + p at each point (an element of D⁺v_c).
    pub selected_p: Vec<Vec2>,
    /// v_c = ⟨c,x⟩ + u(x) on the lift.
    pub v_values: Vec<f64>,
    pub ambiguous_steps: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct IntrinsicStep {
    pub point: Vec2,
    pub ambiguous: bool,
}

/// Default step τ = min(t₀/2, 0.01).
pub fn default_step(spec: &SystemSpec) -> f64 {
    (0.5 * t0_estimate(spec)).min(0.01)
}

/// The semiflow of one weak KAM solution.
#[derive(Debug, Clone)]
pub struct Semiflow<'a> {
    pub spec: &'a SystemSpec,
    pub u: &'a ScalarField,
    pub superdiff: SuperdiffGrid,
    pub alpha: f64,
    /// Speed estimate λ₀ used for the intrinsic scan ball.
    pub lambda0: f64,
    /// Tolerance on decreases of v along trajectories.
    pub tol_monotone: f64,
}

impl<'a> Semiflow<'a> {
    pub fn new(spec: &'a SystemSpec, u: &'a ScalarField, alpha: f64) -> Result<Self> {
        let superdiff = SuperdiffGrid::new(u, spec)?;
        let lambda0 = spec.growth.a_max * (u.lipschitz + spec.c.norm()) + 1e-3;
        Ok(Self { spec, u, superdiff, alpha, lambda0, tol_monotone: 1e-6 })
    }

    pub fn geometry(&self) -> TorusGeometry {
        self.u.geometry
    }

    pub fn v(&self, x: Vec2) -> f64 {
        self.u.lifted(self.spec.c, x)
    }

    pub fn velocity(&self, x: Vec2) -> Vec2 {
        let q = self.superdiff.minimal_selection(self.spec, x);
        self.spec.restrict(self.spec.mass(x) * q)
    }

    /// Cubic interpolation in smooth cells; (bi)linear in cells with a
    /// singular corner, where the cubic would overshoot the kink.
    fn value_limited(&self, y: Vec2) -> f64 {
        let g = self.geometry();
        let ((i, j), (fx, fy)) = g.cell_of(y);
        let corners = if g.dim == 1 {
            vec![(g.index(i, 0), 1.0 - fx), (g.index(i + 1, 0), fx)]
        } else {
            vec![
                (g.index(i, j), (1.0 - fx) * (1.0 - fy)),
                (g.index(i + 1, j), fx * (1.0 - fy)),
                (g.index(i, j + 1), (1.0 - fx) * fy),
                (g.index(i + 1, j + 1), fx * fy),
            ]
        };
        if corners.iter().any(|&(k, _)| self.superdiff.singular[k]) {
            corners.iter().map(|&(k, w)| self.u.values[k] * w).sum()
        } else {
            self.u.value(y)
        }
    }

    fn objective(&self, x: Vec2, y: Vec2, tau: f64, node_value: Option<f64>) -> Result<f64> {
        let uy = node_value.unwrap_or_else(|| self.value_limited(y));
        let (a, _) =
            fundamental_solution_with(self.spec, x, y, tau, self.alpha, &ActionOptions::single_seed())?;
        Ok(uy - a)
    }

    /// argmax_y u(y) − A^c_τ(x,y): node scan in a ball, then local refinement.
    pub fn step_intrinsic(&self, x: Vec2, tau: f64) -> Result<IntrinsicStep> {
        let x = self.spec.restrict(x);
        let g = self.geometry();
        let h = g.spacing();
        let mut lambda0 = self.lambda0;
        for attempt in 0..2 {
            let rho = (lambda0 * tau * 1.5).max(3.0 * h);
            let reach = (rho / h).ceil() as i64 + 1;
            let ci = (x[0] / h).round() as i64;
            let cj = (x[1] / h).round() as i64;
            let js: Vec<i64> = if g.dim == 1 { vec![0] } else { (-reach..=reach).collect() };
            let mut cands: Vec<(f64, Vec2)> = Vec::new();
            for &dj in &js {
                for di in -reach..=reach {
                    let y = Vec2::new((ci + di) as f64 * h, (cj + dj) as f64 * h);
                    let y = self.spec.restrict(y);
                    if (y - x).norm() > rho {
                        continue;
                    }
                    let uy = self.u.values[g.index(ci + di, cj + dj)];
                    cands.push((self.objective(x, y, tau, Some(uy))?, y));
                }
            }
            let (best_f, best_y) = cands
                .iter()
                .copied()
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .ok_or_else(|| Error::InvalidParameter("empty scan ball".into()))?;
            if (best_y - x).norm() > rho - 1.5 * h {
                if attempt == 0 {
                    lambda0 *= 2.0;
                    continue;
                }
                return Err(Error::InvariantViolation(format!(
                    "intrinsic maximizer on the scan-ball boundary at {:?}",
                    (x[0], x[1])
                )));
            }
            let ambiguous = cands.iter().any(|(f, y)| {
                (y - best_y).norm() > 1.5 * h && (best_f - f).abs() <= AMBIGUITY_TOL * best_f.abs().max(1.0)
            });
            let point = self.refine(x, best_y, tau)?;
            return Ok(IntrinsicStep { point, ambiguous });
        }
        unreachable!("loop returns within two attempts")
    }

    fn refine(&self, x: Vec2, y0: Vec2, tau: f64) -> Result<Vec2> {
        let h = self.geometry().spacing();
        let f = |y: Vec2| self.objective(x, y, tau, None);
        if self.spec.dim == 1 {
            let gr = 0.5 * (5f64.sqrt() - 1.0);
            let (mut a, mut b) = (y0[0] - h, y0[0] + h);
            let mut c = b - gr * (b - a);
            let mut d = a + gr * (b - a);
            let mut fc = f(Vec2::new(c, 0.0))?;
            let mut fd = f(Vec2::new(d, 0.0))?;
            for _ in 0..40 {
                if fc > fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - gr * (b - a);
                    fc = f(Vec2::new(c, 0.0))?;
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + gr * (b - a);
                    fd = f(Vec2::new(d, 0.0))?;
                }
            }
            return Ok(Vec2::new(0.5 * (a + b), 0.0));
        }
        // compass search over 8 directions with halving steps
        let dirs = [
            Vec2::new(1.0, 0.0),
            Vec2::new(-1.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(0.0, -1.0),
            Vec2::new(1.0, 1.0) / 2f64.sqrt(),
            Vec2::new(-1.0, 1.0) / 2f64.sqrt(),
            Vec2::new(1.0, -1.0) / 2f64.sqrt(),
            Vec2::new(-1.0, -1.0) / 2f64.sqrt(),
        ];
        let mut y = y0;
        let mut fy = f(y)?;
        let mut step = 0.5 * h;
        while step > 1e-9 {
            let mut moved = false;
            for d in &dirs {
                let cand = y + d * step;
                let fc = f(cand)?;
                if fc > fy {
                    y = cand;
                    fy = fc;
                    moved = true;
                    break;
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        Ok(y)
    }

    /// Euler sub-steps (τ/8) of ẋ = A(x)q(x), q the minimal selection. A
    /// sub-step that would cross a kink (velocity reversing) stops at the
    /// crossing, located by bisection.
    pub fn step_selection_ode(&self, x: Vec2, tau: f64) -> Vec2 {
        let mut x = self.spec.restrict(x);
        let ds = tau / 8.0;
        for _ in 0..8 {
            let v = self.velocity(x);
            if v.norm() == 0.0 {
                break;
            }
            let next = x + v * ds;
            if self.velocity(next).dot(&v) >= 0.0 {
                x = next;
                continue;
            }
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if self.velocity(x + v * (ds * mid)).dot(&v) >= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            x += v * (ds * lo);
        }
        x
    }

    pub fn step(&self, x: Vec2, tau: f64, method: Method) -> Result<(Vec2, bool)> {
        match method {
            Method::Intrinsic => {
                let s = self.step_intrinsic(x, tau)?;
                Ok((s.point, s.ambiguous))
            }
            Method::SelectionOde => Ok((self.step_selection_ode(x, tau), false)),
        }
    }

    fn check_step(&self, tau: f64) -> Result<()> {
        if !(tau > 0.0) {
            return Err(Error::StepTooSmall(tau));
        }
        let t0 = t0_estimate(self.spec);
        if tau > t0 * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!("step {tau} exceeds t0 = {t0}")));
        }
        Ok(())
    }

    /// Endpoint of the flow for time T without recording the path.
    pub fn flow_point(&self, x0: Vec2, horizon: f64, tau: f64, method: Method) -> Result<Vec2> {
        self.check_step(tau)?;
        let steps = (horizon / tau).round() as usize;
        let mut x = self.spec.restrict(x0);
        for _ in 0..steps {
            x = self.step(x, tau, method)?.0;
        }
        Ok(x)
    }

    /// Iterates the step map, recording points, selections and v_c; aborts
    /// when v decreases beyond tolerance or a step exceeds the speed bound.
    pub fn integrate(&self, x0: Vec2, horizon: f64, tau: f64, method: Method) -> Result<Trajectory> {
        self.check_step(tau)?;
        SystemSpec::check_point(x0)?;
        let g = self.geometry();
        let steps = (horizon / tau).round() as usize;
        let bound = tau * self.spec.growth.a_max * (self.u.lipschitz + self.spec.c.norm()) * 1.05
            + 1e-9;
        let mut x = self.spec.restrict(x0);
        let mut tr = Trajectory {
            dim: g.dim,
            step: tau,
            method,
            points: Vec::with_capacity(steps + 1),
            torus_points: Vec::with_capacity(steps + 1),
            selected_p: Vec::with_capacity(steps + 1),
            v_values: Vec::with_capacity(steps + 1),
            ambiguous_steps: 0,
        };
        let record = |tr: &mut Trajectory, x: Vec2| {
            tr.points.push(x);
            tr.torus_points.push(g.wrap(x));
            tr.selected_p.push(self.superdiff.minimal_selection(self.spec, x));
            tr.v_values.push(self.v(x));
        };
        record(&mut tr, x);
        for i in 0..steps {
            let (y, amb) = self.step(x, tau, method)?;
            if amb {
                tr.ambiguous_steps += 1;
            }
            if (y - x).norm() > bound {
                return Err(Error::InvariantViolation(format!(
                    "step {i}: displacement {:.3e} exceeds bound {bound:.3e}",
                    (y - x).norm()
                )));
            }
            x = y;
            record(&mut tr, x);
            let n = tr.v_values.len();
            let dv = tr.v_values[n - 1] - tr.v_values[n - 2];
            if dv < -self.tol_monotone * (1.0 + tr.v_values[n - 2].abs()) {
                return Err(Error::InvariantViolation(format!(
                    "v decreased by {:.3e} at step {i} near {:?}",
                    -dv,
                    (x[0], x[1])
                )));
            }
        }
        Ok(tr)
    }
}

pub fn step_intrinsic(
    spec: &SystemSpec,
    u: &ScalarField,
    x: Vec2,
    tau: f64,
    alpha: f64,
) -> Result<IntrinsicStep> {
    let flow = Semiflow::new(spec, u, alpha)?;
    flow.check_step(tau)?;
    flow.step_intrinsic(x, tau)
}

pub fn step_selection_ode(spec: &SystemSpec, u: &ScalarField, x: Vec2, tau: f64) -> Result<Vec2> {
    Ok(Semiflow::new(spec, u, spec.alpha.unwrap_or(0.0))?.step_selection_ode(x, tau))
}

pub fn integrate(
    spec: &SystemSpec,
    u: &ScalarField,
    x0: Vec2,
    horizon: f64,
    tau: f64,
    method: Method,
) -> Result<Trajectory> {
    Semiflow::new(spec, u, spec.alpha.unwrap_or(0.0))?.integrate(x0, horizon, tau, method)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaKind {
    Stationary,
    Closed,
    RecurrentUnboundedReturn,
    Undecided,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmegaReport {
    pub kind: OmegaKind,
    /// Cluster centres of the post-burn-in samples (torus points).
    pub support: Vec<[f64; 2]>,
    pub period_estimate: Option<f64>,
    /// Largest observed gap (in steps) between returns to the reference ball.
    pub sigma_gap: usize,
    pub returns: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct OmegaOptions {
    pub burn_in: f64,
    /// Grid spacing of the underlying solution.
    pub cell: f64,
    /// Cluster radius in cells.
    pub cluster_cells: f64,
}

impl OmegaOptions {
    pub fn new(cell: f64) -> Self {
        Self { burn_in: 0.5, cell, cluster_cells: 3.0 }
    }
}

/// Classifies the asymptotic behaviour of a trajectory from its
/// post-burn-in samples.
pub fn omega_limit(tr: &Trajectory, opts: OmegaOptions) -> Result<OmegaReport> {
    let n = tr.torus_points.len();
    if !(opts.burn_in >= 0.0 && opts.burn_in < 1.0) || (n as f64) < 10.0 / (1.0 - opts.burn_in) {
        return Err(Error::InvalidParameter("trajectory too short for the burn-in".into()));
    }
    let geom = TorusGeometry { dim: tr.dim, n: 16 };
    let post = &tr.torus_points[(opts.burn_in * n as f64) as usize..];
    let tol = opts.cluster_cells * opts.cell;
    let z0 = post[0];
    let mean = post.iter().fold(Vec2::zeros(), |a, p| a + geom.displacement(z0, *p)) / post.len() as f64;
    let center = geom.wrap(z0 + mean);
    let spread = post.iter().map(|p| geom.distance(center, *p)).fold(0.0, f64::max);

    let mut support: Vec<Vec2> = Vec::new();
    for p in post {
        if !support.iter().any(|s| geom.distance(*s, *p) <= tol) {
            support.push(*p);
        }
    }
    let as_arr = |v: &[Vec2]| v.iter().map(|p| [p[0], p[1]]).collect::<Vec<_>>();

    if spread <= 2.0 * opts.cell {
        return Ok(OmegaReport {
            kind: OmegaKind::Stationary,
            support: as_arr(&[center]),
            period_estimate: None,
            sigma_gap: 0,
            returns: 0,
        });
    }

    // returns to the ball around z0: (index of closest approach, distance)
    let mut visits: Vec<(usize, f64)> = vec![(0, 0.0)];
    let mut inside = true;
    let mut current: Option<(usize, f64)> = None;
    for (i, p) in post.iter().enumerate().skip(1) {
        let d = geom.distance(z0, *p);
        if inside {
            if d > 2.0 * tol {
                inside = false;
                if let Some(v) = current.take() {
                    visits.push(v);
                }
            } else if let Some(v) = current.as_mut() {
                if d < v.1 {
                    *v = (i, d);
                }
            }
        } else if d <= tol {
            inside = true;
            current = Some((i, d));
        }
    }
    if let Some(v) = current {
        visits.push(v);
    }
    let gaps: Vec<usize> = visits.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let sigma_gap = gaps.iter().copied().max().unwrap_or(0);
    let returns = visits.len() - 1;

    if gaps.len() >= 5 {
        let last = &gaps[gaps.len() - 5..];
        let lo = *last.iter().min().unwrap();
        let hi = *last.iter().max().unwrap();
        let period = (last.iter().sum::<usize>() as f64 / 5.0).round() as usize;
        if hi - lo <= 1 && period >= 2 && period < post.len() {
            let closure = (0..post.len() - period)
                .map(|i| geom.distance(post[i], post[i + period]))
                .fold(0.0, f64::max);
            if closure <= tol {
                return Ok(OmegaReport {
                    kind: OmegaKind::Closed,
                    support: as_arr(&support),
                    period_estimate: Some(period as f64 * tr.step),
                    sigma_gap,
                    returns,
                });
            }
        }
    }

    // record-closeness returns with growing gaps
    let mut records: Vec<(usize, f64)> = Vec::new();
    for &(i, d) in visits.iter().skip(1) {
        if records.last().map_or(true, |r| d < r.1) {
            records.push((i, d));
        }
    }
    let rgaps: Vec<usize> = records.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let kind = if records.len() >= 3
        && rgaps.windows(2).all(|w| w[1] >= w[0])
        && rgaps.last() > rgaps.first()
    {
        OmegaKind::RecurrentUnboundedReturn
    } else {
        OmegaKind::Undecided
    };
    Ok(OmegaReport { kind, support: as_arr(&support), period_estimate: None, sigma_gap, returns })
}
