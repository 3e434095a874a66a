use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use weakkam_core::aubry::{aubry_set, BarrierOptions};
use weakkam_core::conley::{
    build_chain_graph, cell_hausdorff, cells_of_points, chain_recurrent_set, histogram_from, AnalysisWindow,
};
use weakkam_core::io::{self, SolutionSidecar};
use weakkam_core::semiflow::{default_step, omega_limit, Method, OmegaOptions, Semiflow};
use weakkam_core::suite::{self, CriterionOutcome, SuiteOptions};
use weakkam_core::superdiff::SuperdiffGrid;
use weakkam_core::twist::{distance_generating_function, minimal_periodic_config, DistanceOptions, GeneratingFunction};
use weakkam_core::weakkam::{weak_kam_solution_opts, FixedPointOptions, ScalarField, WeakKamOptions};
use weakkam_core::{SystemSpec, Vec2};

use crate::cache::Cache;
use crate::config::{sha256_hex, ConfigError, RunConfig};

/// A prerequisite is neither cached nor allowed to be computed.
#[derive(Debug)]
pub struct MissingPrerequisite(pub String);

impl fmt::Display for MissingPrerequisite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing prerequisite: {} (run without --no-compute, or run `solve` first)", self.0)
    }
}

impl std::error::Error for MissingPrerequisite {}

/// Some enabled acceptance checks failed.
#[derive(Debug)]
pub struct ChecksFailed(pub usize);

impl fmt::Display for ChecksFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} check(s) failed", self.0)
    }
}

impl std::error::Error for ChecksFailed {}

pub struct RunContext {
    pub cfg: RunConfig,
    pub spec: SystemSpec,
    pub cache: Cache,
    pub no_compute: bool,
}

/// Output directory plus the manifest of everything a command wrote to it.
/// Manifests are per command so that commands can share a directory.
struct Output {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    solution_key: Option<String>,
    /// File name to sha256 of its contents.
    files: &'a BTreeMap<String, String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), files: BTreeMap::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> weakkam_core::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn finish(mut self, command: &str, cx: &RunContext, solution: bool) -> Result<()> {
        self.write(&format!("{command}.config.toml"), cx.cfg.to_toml().as_bytes())?;
        let manifest = Manifest {
            command,
            config_hash: cx.cfg.content_hash(),
            solution_key: solution.then(|| cx.cfg.solution_key()),
            files: &self.files,
        };
        let mut buf = serde_json::to_vec_pretty(&manifest)?;
        buf.push(b'\n');
        fs::write(self.dir.join(format!("{command}.manifest.json")), buf)?;
        Ok(())
    }
}

struct Solution {
    field: ScalarField,
    sidecar: SolutionSidecar,
    grid_bytes: Vec<u8>,
    json_bytes: Vec<u8>,
}

/// Weak KAM solution for the configured system, from the cache or computed
/// and cached.
fn solution(cx: &RunContext) -> Result<Solution> {
    let key = cx.cfg.solution_key();
    if let (Some(grid_bytes), Some(json_bytes)) = (cx.cache.get(&key, "u.grid")?, cx.cache.get(&key, "u.json")?) {
        let (field, _) = io::read_field(grid_bytes.as_slice())?;
        let sidecar: SolutionSidecar = io::read_json(json_bytes.as_slice())?;
        eprintln!("cache hit {key}");
        return Ok(Solution { field, sidecar, grid_bytes, json_bytes });
    }
    if cx.no_compute {
        return Err(MissingPrerequisite(format!("weak KAM solution {key} not in cache {}", cx.cache.root().display())).into());
    }
    let spec = &cx.spec;
    let g = spec.geometry(cx.cfg.grid.n)?;
    let opts = WeakKamOptions {
        refine: !cx.cfg.run.monotone,
        fixed: FixedPointOptions { tol_fix: cx.cfg.tolerances.tol_fix, ..Default::default() },
        ..Default::default()
    };
    let sol = weak_kam_solution_opts(spec, g, opts)?;
    let sidecar = SolutionSidecar {
        system: spec.key(),
        c: [spec.c[0], spec.c[1]],
        alpha: sol.alpha,
        grid: g.n,
        dim: g.dim,
        tau: sol.tau,
        steps: sol.steps,
        fixed_point_residual: sol.fixed_point_residual,
        tol_fix: cx.cfg.tolerances.tol_fix,
        config_hash: key.clone(),
    };
    let mut grid_bytes = Vec::new();
    io::write_field(&mut grid_bytes, &sol.field, spec.key_hash())?;
    let mut json_bytes = Vec::new();
    io::write_json(&mut json_bytes, &sidecar)?;
    cx.cache.put(&key, &[("u.grid", &grid_bytes), ("u.json", &json_bytes)])?;
    Ok(Solution { field: sol.field, sidecar, grid_bytes, json_bytes })
}

fn flow_step(cx: &RunContext) -> f64 {
    cx.cfg.run.tau.unwrap_or_else(|| default_step(&cx.spec))
}

/// Parses a point given as one or two coordinates.
fn point(dim: usize, coords: &[f64]) -> Result<Vec2> {
    anyhow::ensure!(coords.len() == dim, "expected {dim} coordinate(s), got {}", coords.len());
    Ok(Vec2::new(coords[0], coords.get(1).copied().unwrap_or(0.0)))
}

pub fn solve(cx: &RunContext) -> Result<()> {
    let sol = solution(cx)?;
    let mut out = Output::new(&cx.cfg.run.output)?;
    out.write("alpha.txt", format!("{:.12e}\n", sol.sidecar.alpha).as_bytes())?;
    out.write("u.grid", &sol.grid_bytes)?;
    out.write("u.json", &sol.json_bytes)?;
    println!(
        "alpha = {:.9} (fixed-point residual {:.2e}, {} steps)",
        sol.sidecar.alpha, sol.sidecar.fixed_point_residual, sol.sidecar.steps
    );
    out.finish("solve", cx, true)
}

pub fn flow(cx: &RunContext, x0: &[f64], method: Method) -> Result<()> {
    let sol = solution(cx)?;
    let x0 = if x0.is_empty() { Vec2::new(0.25, if cx.spec.dim == 2 { 0.25 } else { 0.0 }) } else { point(cx.spec.dim, x0)? };
    let sf = Semiflow::new(&cx.spec, &sol.field, sol.sidecar.alpha)?;
    let tr = sf.integrate(x0, cx.cfg.run.horizon, flow_step(cx), method)?;
    let omega = omega_limit(&tr, OmegaOptions::new(sol.field.geometry.spacing()))?;
    let mut out = Output::new(&cx.cfg.run.output)?;
    out.write_with("trajectory.jsonl", |w| io::write_trajectory_jsonl(w, &tr))?;
    out.write_with("omega.json", |w| io::write_json(w, &omega))?;
    println!("omega-limit {:?}, {} support cluster(s)", omega.kind, omega.support.len());
    out.finish("flow", cx, true)
}

pub fn sing(cx: &RunContext) -> Result<()> {
    let sol = solution(cx)?;
    let sd = SuperdiffGrid::new(&sol.field, &cx.spec)?;
    let mut out = Output::new(&cx.cfg.run.output)?;
    out.write_with("cells.csv", |w| io::write_cells_csv(w, &sd))?;
    let comps = sd.singular_components();
    println!(
        "{} singular node(s) in {} component(s)",
        sd.singular.iter().filter(|s| **s).count(),
        comps.len()
    );
    out.finish("sing", cx, true)
}

pub fn crit(cx: &RunContext) -> Result<()> {
    let sol = solution(cx)?;
    let sd = SuperdiffGrid::new(&sol.field, &cx.spec)?;
    let pts: Vec<Vec2> = sd.critical_points().iter().map(|c| c.x).collect();
    let hist = histogram_from(&sd, &sol.field, cx.spec.c);
    let mut out = Output::new(&cx.cfg.run.output)?;
    out.write_with("crit.csv", |w| io::write_points_csv(w, cx.spec.dim, &pts))?;
    out.write_with("histogram.csv", |w| io::write_histogram_csv(w, &hist))?;
    println!("{} critical point(s), {} critical level(s)", pts.len(), hist.len());
    out.finish("crit", cx, true)
}

pub struct ConleyArgs {
    pub window_cells: Option<usize>,
    pub periods: usize,
    pub chain_time: f64,
    pub method: Method,
}

#[derive(Serialize)]
struct ConleySummary {
    window: AnalysisWindow,
    epsilon: f64,
    chain_time: f64,
    edges: usize,
    recurrent_cells: usize,
    critical_cells: usize,
    /// In cells; absent when exactly one of the two sets is empty.
    hausdorff_cells: Option<f64>,
}

pub fn conley(cx: &RunContext, args: &ConleyArgs) -> Result<()> {
    let sol = solution(cx)?;
    let sf = Semiflow::new(&cx.spec, &sol.field, sol.sidecar.alpha)?;
    let n = cx.cfg.grid.n;
    let win = AnalysisWindow::new(cx.spec.dim, args.window_cells.unwrap_or(n / 4), args.periods)?;
    let eps = 2.0 * win.diameter();
    let graph = build_chain_graph(&sf, win, eps, args.chain_time, flow_step(cx), args.method)?;
    let rec = chain_recurrent_set(&graph);
    let crit_pts: Vec<Vec2> = sf.superdiff.critical_points().iter().map(|c| c.x).collect();
    let crit = cells_of_points(&win, &crit_pts);
    let hausdorff = match (rec.is_empty(), crit.is_empty()) {
        (true, true) => Some(0.0),
        (false, false) => Some(cell_hausdorff(&win, &rec, &crit)),
        _ => None,
    };
    let centres: Vec<Vec2> = rec.iter().map(|&k| win.center(k)).collect();
    let summary = ConleySummary {
        window: win,
        epsilon: eps,
        chain_time: args.chain_time,
        edges: graph.edge_count(),
        recurrent_cells: rec.len(),
        critical_cells: crit.len(),
        hausdorff_cells: hausdorff,
    };
    let mut out = Output::new(&cx.cfg.run.output)?;
    out.write_with("recurrent.csv", |w| io::write_points_csv(w, cx.spec.dim, &centres))?;
    out.write_with("graph.txt", |w| graph.write_edge_list(w))?;
    out.write_with("summary.json", |w| io::write_json(w, &summary))?;
    println!("{} chain-recurrent cell(s), {} critical cell(s)", rec.len(), crit.len());
    out.finish("conley", cx, true)
}

pub struct AubryArgs {
    pub barrier_grid: Option<usize>,
    pub delta: f64,
    pub t_max: f64,
}

pub fn aubry(cx: &RunContext, args: &AubryArgs) -> Result<()> {
    let sol = solution(cx)?;
    let opts = BarrierOptions {
        grid: args.barrier_grid.unwrap_or(if cx.spec.dim == 1 { 64 } else { 24 }),
        delta: args.delta,
        t_max: args.t_max,
        tol_aubry: cx.cfg.tolerances.tol_aubry,
    };
    let set = aubry_set(&cx.spec, sol.sidecar.alpha, opts)?;
    let mut out = Output::new(&cx.cfg.run.output)?;
    out.write_with("diagonal.csv", |w| io::write_diagonal_csv(w, cx.spec.dim, &set))?;
    out.write_with("aubry.csv", |w| io::write_points_csv(w, cx.spec.dim, &set.vectors()))?;
    println!("{} Aubry node(s) of {}", set.points.len(), set.diagonal.len());
    out.finish("aubry", cx, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TwistMap {
    /// Standard map with parameter `--k`.
    Standard,
    Quadratic,
    /// Distance in the strip for the configured 2D system's metric.
    System,
}

pub struct TwistArgs {
    pub map: TwistMap,
    pub k: f64,
    pub p: i64,
    pub q: i64,
    pub resolution: usize,
}

#[derive(Serialize)]
struct TwistSummary {
    p: i64,
    q: i64,
    rotation: f64,
    action: f64,
    residual: f64,
    stagnated: bool,
    cyclically_ordered: bool,
}

pub fn twist(cx: &RunContext, args: &TwistArgs) -> Result<()> {
    let h = match args.map {
        TwistMap::Standard => GeneratingFunction::standard(args.k),
        TwistMap::Quadratic => GeneratingFunction::quadratic(),
        TwistMap::System => {
            anyhow::ensure!(cx.spec.dim == 2, "the system map needs a 2D system");
            let spec = &cx.spec;
            let opts = DistanceOptions { resolution: args.resolution, ..Default::default() };
            distance_generating_function(&|x| spec.mass(x), opts)?
        }
    };
    let conf = minimal_periodic_config(&h, args.p, args.q)?;
    let summary = TwistSummary {
        p: conf.p,
        q: conf.q,
        rotation: conf.rotation,
        action: conf.action,
        residual: conf.residual,
        stagnated: conf.stagnated,
        cyclically_ordered: conf.is_cyclically_ordered(),
    };
    let mut out = Output::new(&cx.cfg.run.output)?;
    out.write_with("config.csv", |w| io::write_config_csv(w, &conf))?;
    out.write_with("twist.json", |w| io::write_json(w, &summary))?;
    if h.table().is_some() {
        out.write_with("table.grid", |w| io::write_generating_table(w, &h, cx.spec.key_hash()))?;
    }
    println!("({}, {}) configuration: action {:.9}, residual {:.2e}", conf.p, conf.q, conf.action, conf.residual);
    out.finish("twist", cx, false)
}

#[derive(Serialize)]
struct Report<'a> {
    suite: &'a str,
    seed: u64,
    passed: bool,
    criteria: &'a [CriterionOutcome],
}

pub fn report(cx: &RunContext, only: &[u8]) -> Result<()> {
    let ids: Vec<u8> = if only.is_empty() { suite::CRITERIA.to_vec() } else { only.to_vec() };
    for id in &ids {
        if !suite::CRITERIA.contains(id) {
            return Err(ConfigError(format!("no acceptance criterion {id}")).into());
        }
    }
    let opts = SuiteOptions { seed: cx.cfg.run.seed };
    let mut outcomes = Vec::new();
    let mut summary = String::new();
    for id in ids {
        let o = suite::run_criterion(id, &opts);
        println!("{}", o.line());
        summary.push_str(&o.line());
        summary.push('\n');
        outcomes.push(o);
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    summary.push_str(&format!("{} of {} passed\n", outcomes.len() - failed, outcomes.len()));
    let report = Report { suite: "paper", seed: opts.seed, passed: failed == 0, criteria: &outcomes };
    let mut out = Output::new(&cx.cfg.run.output)?;
    out.write_with("report.json", |w| io::write_json(w, &report))?;
    out.write("summary.txt", summary.as_bytes())?;
    out.finish("report", cx, false)?;
    if failed > 0 {
        return Err(ChecksFailed(failed).into());
    }
    Ok(())
}
