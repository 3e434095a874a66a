//! Grid Conley analysis of the semiflow: the (ε,T)-chain graph on a lift
//! window, its recurrent cells, the preattractor check on superlevel sets and
//! the critical-value histogram.

use std::io::Write;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::semiflow::{Method, Semiflow};
use crate::superdiff::SuperdiffGrid;
use crate::system::SystemSpec;
use crate::weakkam::ScalarField;

/// A box of `periods` fundamental domains per axis on the lift, split into
/// square cells. The origin is shifted by half a cell so that grid nodes at
/// multiples of the cell size sit at cell centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub dim: usize,
    pub origin: [f64; 2],
    pub cell: f64,
    pub cells_per_period: usize,
    pub periods: usize,
}

impl AnalysisWindow {
    pub fn new(dim: usize, cells_per_period: usize, periods: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) || cells_per_period < 4 || periods == 0 {
            return Err(Error::InvalidParameter(format!(
                "window dim={dim} cells={cells_per_period} periods={periods}"
            )));
        }
        let cell = 1.0 / cells_per_period as f64;
        let o = -0.5 * cell;
        Ok(Self { dim, origin: [o, if dim == 2 { o } else { 0.0 }], cell, cells_per_period, periods })
    }

    pub fn per_axis(&self) -> usize {
        self.cells_per_period * self.periods
    }

    pub fn len(&self) -> usize {
        self.per_axis().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.per_axis(), k / self.per_axis())
    }

    pub fn center(&self, k: usize) -> Vec2 {
        let (a, b) = self.coords(k);
        let y = if self.dim == 2 { self.origin[1] + (b as f64 + 0.5) * self.cell } else { 0.0 };
        Vec2::new(self.origin[0] + (a as f64 + 0.5) * self.cell, y)
    }

    pub fn diameter(&self) -> f64 {
        self.cell * (self.dim as f64).sqrt()
    }

    /// Euclidean distance from a lift point to the closed cell k.
    pub fn distance_to_cell(&self, z: Vec2, k: usize) -> f64 {
        let c = self.center(k);
        let half = 0.5 * self.cell;
        let dx = ((z[0] - c[0]).abs() - half).max(0.0);
        let dy = if self.dim == 2 { ((z[1] - c[1]).abs() - half).max(0.0) } else { 0.0 };
        dx.hypot(dy)
    }

    pub fn contains(&self, z: Vec2) -> bool {
        let hi = self.per_axis() as f64 * self.cell;
        let inside = |v: f64, o: f64| v >= o && v < o + hi;
        inside(z[0], self.origin[0]) && (self.dim == 1 || inside(z[1], self.origin[1]))
    }

    /// Cells whose closure lies within `eps` of z.
    pub fn cells_near(&self, z: Vec2, eps: f64) -> Vec<(usize, f64)> {
        let n = self.per_axis() as i64;
        let reach = (eps / self.cell).ceil() as i64 + 1;
        let a0 = ((z[0] - self.origin[0]) / self.cell).floor() as i64;
        let b0 = if self.dim == 2 { ((z[1] - self.origin[1]) / self.cell).floor() as i64 } else { 0 };
        let bs = if self.dim == 2 { b0 - reach..=b0 + reach } else { 0..=0 };
        let mut out = Vec::new();
        for b in bs {
            for a in a0 - reach..=a0 + reach {
                if a < 0 || b < 0 || a >= n || b >= n {
                    continue;
                }
                let k = (a + b * n) as usize;
                let d = self.distance_to_cell(z, k);
                if d < eps {
                    out.push((k, d));
                }
            }
        }
        out
    }

    /// The cell containing a lift point, if inside the window.
    pub fn locate(&self, z: Vec2) -> Option<usize> {
        if !self.contains(z) {
            return None;
        }
        let a = ((z[0] - self.origin[0]) / self.cell).floor() as usize;
        let b = if self.dim == 2 { ((z[1] - self.origin[1]) / self.cell).floor() as usize } else { 0 };
        Some(a.min(self.per_axis() - 1) + b.min(self.per_axis() - 1) * self.per_axis())
    }
}

#[derive(Debug, Clone)]
pub struct ChainGraph {
    pub window: AnalysisWindow,
    pub epsilon: f64,
    pub horizon: f64,
    /// Outgoing edges per cell: (target, witnessed point-to-cell distance).
    pub edges: Vec<Vec<(usize, f64)>>,
    /// Cells with a sample whose image left the window.
    pub outflow: Vec<bool>,
    /// Smallest increase of v_c over the flow time among a cell's samples.
    pub min_v_increase: Vec<f64>,
}

impl ChainGraph {
    /// Index of the virtual outflow node in exported edge lists.
    pub fn outflow_node(&self) -> usize {
        self.window.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum::<usize>() + self.outflow.iter().filter(|&&o| o).count()
    }

    /// Plain "i j dist" lines; the outflow node has the index `len()`.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, es) in self.edges.iter().enumerate() {
            for &(j, d) in es {
                writeln!(w, "{i} {j} {d:.12e}")?;
            }
            if self.outflow[i] {
                writeln!(w, "{i} {} 0", self.outflow_node())?;
            }
        }
        Ok(())
    }
}

/// Sample fractions per axis inside a cell: corners and centre.
const SAMPLE_FRACTIONS: [f64; 3] = [0.0, 0.5, 1.0];

/// (ε,T)-chain graph: each cell sample is flowed for time T and linked to every
/// cell within ε of its image. Flows are computed once per fundamental cell and
/// translated to the periodic copies.
pub fn build_chain_graph(
    flow: &Semiflow,
    window: AnalysisWindow,
    epsilon: f64,
    horizon: f64,
    tau: f64,
    method: Method,
) -> Result<ChainGraph> {
    if window.dim != flow.spec.dim {
        return Err(Error::GeometryMismatch("window and system dimensions differ".into()));
    }
    if horizon < tau {
        return Err(Error::InvalidParameter(format!("flow time {horizon} below step {tau}")));
    }
    if epsilon < 2.0 * window.diameter() * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "epsilon {epsilon} below two cell diameters ({})",
            2.0 * window.diameter()
        )));
    }
    let np = window.cells_per_period;
    let fundamental = np.pow(window.dim as u32);
    let ys: &[f64] = if window.dim == 2 { &SAMPLE_FRACTIONS } else { &[0.0] };
    // displacement and v-increase of each sample of each fundamental cell
    let flows: Vec<Vec<(Vec2, Vec2, f64)>> = (0..fundamental)
        .into_par_iter()
        .map(|k| {
            let (a, b) = (k % np, k / np);
            let corner = Vec2::new(
                window.origin[0] + a as f64 * window.cell,
                window.origin[1] + b as f64 * window.cell,
            );
            let mut out = Vec::new();
            for &fy in ys {
                for &fx in &SAMPLE_FRACTIONS {
                    let s = corner + Vec2::new(fx, fy) * window.cell;
                    let z = flow.flow_point(s, horizon, tau, method).map_err(|e| {
                        Error::InvariantViolation(format!("cell {k}: {e}"))
                    })?;
                    out.push((s, z - s, flow.v(z) - flow.v(s)));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let n = window.per_axis();
    let cells: Vec<(Vec<(usize, f64)>, bool, f64)> = (0..window.len())
        .into_par_iter()
        .map(|k| {
            let (a, b) = window.coords(k);
            let shift = Vec2::new((a / np) as f64, if window.dim == 2 { (b / np) as f64 } else { 0.0 });
            let fk = (a % np) + if window.dim == 2 { (b % np) * np } else { 0 };
            let mut targets: Vec<(usize, f64)> = Vec::new();
            let mut out = false;
            let mut dv_min = f64::INFINITY;
            for &(s, disp, dv) in &flows[fk] {
                let z = s + shift + disp;
                dv_min = dv_min.min(dv);
                if !window.contains(z) {
                    out = true;
                }
                for (j, d) in window.cells_near(z, epsilon) {
                    match targets.iter_mut().find(|t| t.0 == j) {
                        Some(t) => t.1 = t.1.min(d),
                        None => targets.push((j, d)),
                    }
                }
            }
            targets.sort_by_key(|t| t.0);
            (targets, out, dv_min)
        })
        .collect();
    debug_assert_eq!(cells.len(), n.pow(window.dim as u32));
    let mut edges = Vec::with_capacity(cells.len());
    let mut outflow = Vec::with_capacity(cells.len());
    let mut min_v_increase = Vec::with_capacity(cells.len());
    for (t, o, dv) in cells {
        edges.push(t);
        outflow.push(o);
        min_v_increase.push(dv);
    }
    Ok(ChainGraph { window, epsilon, horizon, edges, outflow, min_v_increase })
}

/// Cells on a cycle of the graph: members of a nontrivial strongly connected
/// component or carrying a self-loop. The outflow node has no out-edges, so
/// no cycle passes through it.
pub fn chain_recurrent_set(graph: &ChainGraph) -> Vec<usize> {
    let mut g: DiGraph<(), ()> = DiGraph::with_capacity(graph.edges.len(), graph.edge_count());
    let nodes: Vec<NodeIndex> = (0..graph.edges.len()).map(|_| g.add_node(())).collect();
    for (i, es) in graph.edges.iter().enumerate() {
        for &(j, _) in es {
            g.add_edge(nodes[i], nodes[j], ());
        }
    }
    let mut out: Vec<usize> = Vec::new();
    for comp in tarjan_scc(&g) {
        if comp.len() > 1 {
            out.extend(comp.iter().map(|n| n.index()));
        } else {
            let i = comp[0].index();
            if graph.edges[i].iter().any(|e| e.0 == i) {
                out.push(i);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Recurrent cells whose own flow raises v_c by more than ε·Lip(v_c); these
/// should not exist.
pub fn monotone_exclusion_violations(graph: &ChainGraph, lip_v: f64) -> Vec<usize> {
    chain_recurrent_set(graph)
        .into_iter()
        .filter(|&k| graph.min_v_increase[k] > graph.epsilon * lip_v)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum PreattractorVerdict {
    Pass { worst_margin: f64, samples: usize },
    Fail { worst_margin: f64, at: [f64; 2] },
    /// A sample on the level set is a rest point: r is a critical value.
    BoundaryFixedPoint { at: [f64; 2], worst_margin: f64 },
}

impl PreattractorVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, PreattractorVerdict::Pass { .. })
    }
}

/// v_c relative to its minimum over the grid, so that the lowest critical
/// value is 0.
fn v_min_anchored(u: &ScalarField, c: Vec2, x: Vec2) -> f64 {
    u.value(x) - u.min() + c.dot(&x)
}

/// Checks that Φ_t keeps U_r = {v_c ≥ r} (within half a cell of level
/// resolution) inside itself, flowing the grid nodes of U_r that border its
/// complement.
pub fn preattractor_check(
    flow: &Semiflow,
    r: f64,
    times: &[f64],
    tau: f64,
    method: Method,
) -> Result<PreattractorVerdict> {
    let u = flow.u;
    let c = flow.spec.c;
    let g = u.geometry;
    let h = g.spacing();
    let delta = 0.5 * h * (u.lipschitz + c.norm());
    let level = |x: Vec2| v_min_anchored(u, c, x);
    let inside = |x: Vec2| level(x) >= r - delta;
    let mut samples = Vec::new();
    for idx in 0..g.len() {
        let x = g.node_point(idx);
        if !inside(x) {
            continue;
        }
        let border = g.axis_neighbours(idx).into_iter().any(|k| {
            let d = g.displacement(x, g.node_point(k));
            !inside(x + d)
        });
        if border || g.axis_neighbours(idx).is_empty() {
            samples.push(x);
        }
    }
    let mut worst = f64::INFINITY;
    let mut worst_at = Vec2::zeros();
    let mut fixed: Option<Vec2> = None;
    for &x in &samples {
        let mut t_prev = 0.0;
        let mut z = x;
        let mut sorted = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        for &t in &sorted {
            z = flow.flow_point(z, t - t_prev, tau, method)?;
            t_prev = t;
            let m = level(z) - (r - delta);
            if m < worst {
                worst = m;
                worst_at = x;
            }
        }
        if fixed.is_none() && (z - x).norm() <= h && flow.velocity(x).norm() <= flow.superdiff.crit_tol {
            fixed = Some(x);
        }
    }
    if let Some(x) = fixed {
        return Ok(PreattractorVerdict::BoundaryFixedPoint { at: [x[0], x[1]], worst_margin: worst });
    }
    if worst < -flow.tol_monotone {
        return Ok(PreattractorVerdict::Fail { worst_margin: worst, at: [worst_at[0], worst_at[1]] });
    }
    Ok(PreattractorVerdict::Pass { worst_margin: worst, samples: samples.len() })
}

/// Values of v_c (min-anchored) at the critical points, merged at the grid
/// resolution of v, with multiplicities.
pub fn critical_values_histogram(u: &ScalarField, spec: &SystemSpec) -> Result<Vec<(f64, usize)>> {
    let sd = SuperdiffGrid::new(u, spec)?;
    Ok(histogram_from(&sd, u, spec.c))
}

pub fn histogram_from(sd: &SuperdiffGrid, u: &ScalarField, c: Vec2) -> Vec<(f64, usize)> {
    let h = u.geometry.spacing();
    let res = (h * (u.lipschitz + c.norm())).max(1e-6);
    let mut vals: Vec<f64> = sd.critical_points().iter().map(|p| v_min_anchored(u, c, p.x)).collect();
    vals.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, usize, f64)> = Vec::new();
    for v in vals {
        match out.last_mut() {
            Some(last) if v - last.2 <= res => {
                last.0 += v;
                last.1 += 1;
                last.2 = v;
            }
            _ => out.push((v, 1, v)),
        }
    }
    out.into_iter().map(|(s, m, _)| (s / m as f64, m)).collect()
}

/// Hausdorff distance, in cells, between two cell sets of one window (lift
/// distance between centres). Infinite if exactly one set is empty.
pub fn cell_hausdorff(window: &AnalysisWindow, a: &[usize], b: &[usize]) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return f64::INFINITY,
        _ => {}
    }
    let one_sided = |p: &[usize], q: &[usize]| {
        p.iter()
            .map(|&i| {
                q.iter()
                    .map(|&j| (window.center(i) - window.center(j)).amax())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    one_sided(a, b).max(one_sided(b, a)) / window.cell
}

/// Window cells containing a periodic copy of one of the given torus points.
pub fn cells_of_points(window: &AnalysisWindow, points: &[Vec2]) -> Vec<usize> {
    let per = window.periods as i64;
    let bs = if window.dim == 2 { -1..=per } else { 0..=0 };
    let mut out = Vec::new();
    for p in points {
        for b in bs.clone() {
            for a in -1..=per {
                if let Some(k) = window.locate(p + Vec2::new(a as f64, b as f64)) {
                    out.push(k);
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}
