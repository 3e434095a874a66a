//! Mechanical Hamiltonians H(x,p) = ½⟨A(x)p,p⟩ + V(x) on T^d and their
//! Lagrangians L^c(x,v) = ½⟨A⁻¹(x)v,v⟩ − V(x) − ⟨c,v⟩ + α.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat2, TorusGeometry, Vec2};
use crate::interp::PeriodicTable;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone)]
pub enum Potential {
    Zero,
    /// Σ a_i (cos 2πx_i − 1).
    Cosine { amplitude: [f64; 2] },
    Tabulated(PeriodicTable),
}

/// The matrix field A(x). Conformal variants use A = f(x)⁻² I, so that the
/// Lagrangian is ½ f² |v|² and geodesics follow the metric f²|dx|².
#[derive(Debug, Clone)]
pub enum Kinetic {
    Identity,
    ConformalBump { strength: f64, radius: f64, center: Vec2 },
    ConformalTabulated(PeriodicTable),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GrowthConstants {
    /// Uniform lower eigenvalue bound of A⁻¹.
    pub lambda: f64,
    /// Largest eigenvalue of A over the sampled grid.
    pub a_max: f64,
    /// max of L⁰ over |v| ≤ 1.
    pub kappa1_1: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// θ*(1) for θ(r) = ½λr².
    pub theta_star_k: f64,
    /// min over x of V (after normalization, so ≤ 0).
    pub v_min: f64,
}

#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub name: String,
    pub params: Vec<f64>,
    pub dim: usize,
    pub kinetic: Kinetic,
    pub potential: Potential,
    /// Subtracted from the raw potential so that max V = 0.
    pub v_shift: f64,
    pub c: Vec2,
    pub alpha: Option<f64>,
    pub growth: GrowthConstants,
}

fn bump_profile(x: Vec2, radius: f64, center: Vec2) -> (f64, Vec2) {
    let d = Vec2::new(
        x[0] - center[0] - (x[0] - center[0]).round(),
        x[1] - center[1] - (x[1] - center[1]).round(),
    );
    let r = d.norm();
    if r >= radius {
        return (0.0, Vec2::zeros());
    }
    let u = PI * r / (2.0 * radius);
    let b = u.cos().powi(2);
    if r < 1e-14 {
        return (b, Vec2::zeros());
    }
    let db = -(PI / (2.0 * radius)) * (PI * r / radius).sin();
    (b, d * (db / r))
}

impl SystemSpec {
    /// Build a system from its components; normalizes V and computes the
    /// growth constants.
    pub fn new(
        name: &str,
        params: Vec<f64>,
        dim: usize,
        kinetic: Kinetic,
        potential: Potential,
    ) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidParameter(format!("dimension {dim}")));
        }
        let mut spec = Self {
            name: name.to_string(),
            params,
            dim,
            kinetic,
            potential,
            v_shift: 0.0,
            c: Vec2::zeros(),
            alpha: None,
            growth: GrowthConstants {
                lambda: 1.0,
                a_max: 1.0,
                kappa1_1: 0.0,
                c0: 0.0,
                c1: 1.0,
                c2: 0.5,
                theta_star_k: 0.5,
                v_min: 0.0,
            },
        };
        let samples = spec.sample_grid();
        let mut vmax = f64::NEG_INFINITY;
        for idx in 0..samples.len() {
            vmax = vmax.max(spec.raw_potential(samples.node_point(idx)).0);
        }
        if let Potential::Cosine { amplitude } = &spec.potential {
            vmax = amplitude.iter().take(dim).map(|a| (-2.0 * a).max(0.0)).sum();
        }
        spec.v_shift = vmax;
        spec.growth = spec.compute_growth(&samples)?;
        Ok(spec)
    }

    fn sample_grid(&self) -> TorusGeometry {
        let n = if self.dim == 1 { 1024 } else { 128 };
        TorusGeometry::new(self.dim, n).expect("valid sampling grid")
    }

    fn compute_growth(&self, samples: &TorusGeometry) -> Result<GrowthConstants> {
        let mut lambda = f64::INFINITY;
        let mut a_max: f64 = 0.0;
        let mut kappa: f64 = f64::NEG_INFINITY;
        let mut v_min = f64::INFINITY;
        for idx in 0..samples.len() {
            let x = samples.node_point(idx);
            let (lo, hi) = self.inv_mass_eigen(x);
            if !(lo > 1e-12) || !hi.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "A is not positive definite at {:?}",
                    (x[0], x[1])
                )));
            }
            let v = self.potential(x);
            lambda = lambda.min(lo);
            a_max = a_max.max(1.0 / lo);
            kappa = kappa.max(0.5 * hi - v);
            v_min = v_min.min(v);
        }
        let c0 = 0.0;
        let c1 = 1.0;
        let theta_star_k = 1.0 / (2.0 * lambda);
        Ok(GrowthConstants {
            lambda,
            a_max,
            kappa1_1: kappa,
            c0,
            c1,
            c2: theta_star_k + c0,
            theta_star_k,
            v_min,
        })
    }

    // ---- registry -------------------------------------------------------

    pub fn free(dim: usize) -> Result<Self> {
        Self::new("free", vec![dim as f64], dim, Kinetic::Identity, Potential::Zero)
    }

    /// A = 1, V = cos 2πx − 1.
    pub fn pendulum() -> Self {
        Self::new(
            "pendulum",
            vec![],
            1,
            Kinetic::Identity,
            Potential::Cosine { amplitude: [1.0, 0.0] },
        )
        .expect("pendulum is well formed")
    }

    /// A = I, V = cos 2πx₁ + cos 2πx₂ − 2.
    pub fn separable_pendulum() -> Self {
        Self::new(
            "separable-pendulum",
            vec![],
            2,
            Kinetic::Identity,
            Potential::Cosine { amplitude: [1.0, 1.0] },
        )
        .expect("separable pendulum is well formed")
    }

    /// ½p² + ε(cos 2πx − 1) in dimension `dim` (cosine in every axis).
    pub fn nearly_integrable(eps: f64, dim: usize) -> Result<Self> {
        if !(eps >= 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon {eps}")));
        }
        let amplitude = if dim == 1 { [eps, 0.0] } else { [eps, eps] };
        Self::new(
            "nearly-integrable",
            vec![eps, dim as f64],
            dim,
            Kinetic::Identity,
            Potential::Cosine { amplitude },
        )
    }

    /// Geodesic flow of the conformal metric (1 + s·b(x))²|dx|² on T², where
    /// b is a C¹ cosine-squared bump of the given radius centred at (½,½).
    pub fn bump(strength: f64, radius: f64) -> Result<Self> {
        if !(strength > -1.0) || !(radius > 0.0 && radius < 0.5) {
            return Err(Error::InvalidParameter(format!("bump ({strength}, {radius})")));
        }
        Self::new(
            "bump",
            vec![strength, radius],
            2,
            Kinetic::ConformalBump { strength, radius, center: Vec2::new(0.5, 0.5) },
            Potential::Zero,
        )
    }

    /// The bump metric sampled on an n×n grid and interpolated bicubically.
    pub fn tabulated_bump(strength: f64, radius: f64, n: usize) -> Result<Self> {
        let exact = Self::bump(strength, radius)?;
        let geom = TorusGeometry::new(2, n)?;
        let table = PeriodicTable::sample(geom, |x| exact.conformal_factor(x).0);
        Self::new(
            "tabulated-bump",
            vec![strength, radius, n as f64],
            2,
            Kinetic::ConformalTabulated(table),
            Potential::Zero,
        )
    }

    pub fn from_registry(name: &str, params: &[f64]) -> Result<Self> {
        let p = |i: usize, default: f64| params.get(i).copied().unwrap_or(default);
        match name {
            "free" => Self::free(p(0, 1.0) as usize),
            "pendulum" => Ok(Self::pendulum()),
            "separable-pendulum" => Ok(Self::separable_pendulum()),
            "nearly-integrable" => Self::nearly_integrable(p(0, 1e-3), p(1, 1.0) as usize),
            "bump" => Self::bump(p(0, 9.0), p(1, 0.25)),
            "tabulated-bump" => Self::tabulated_bump(p(0, 9.0), p(1, 0.25), p(2, 128.0) as usize),
            other => Err(Error::UnknownSystem(other.to_string())),
        }
    }

    /// Stable textual key identifying the system (without c and α).
    pub fn key(&self) -> String {
        let params: Vec<String> = self.params.iter().map(|p| format!("{p:e}")).collect();
        format!("{}[{}]", self.name, params.join(","))
    }

    /// FNV-1a hash of `key()`, used in binary table headers.
    pub fn key_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.key().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    pub fn with_c(mut self, c: Vec2) -> Self {
        self.c = self.restrict(c);
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn geometry(&self, n: usize) -> Result<TorusGeometry> {
        TorusGeometry::new(self.dim, n)
    }

    pub fn restrict(&self, mut v: Vec2) -> Vec2 {
        if self.dim == 1 {
            v[1] = 0.0;
        }
        v
    }

    // ---- fields -----------------------------------------------------------

    fn raw_potential(&self, x: Vec2) -> (f64, Vec2, Mat2) {
        match &self.potential {
            Potential::Zero => (0.0, Vec2::zeros(), Mat2::zeros()),
            Potential::Cosine { amplitude } => {
                let mut v = 0.0;
                let mut g = Vec2::zeros();
                let mut h = Mat2::zeros();
                for i in 0..self.dim {
                    let a = amplitude[i];
                    let (s, c) = (TWO_PI * x[i]).sin_cos();
                    v += a * (c - 1.0);
                    g[i] = -a * TWO_PI * s;
                    h[(i, i)] = -a * TWO_PI * TWO_PI * c;
                }
                (v, g, h)
            }
            Potential::Tabulated(t) => t.eval(x),
        }
    }

    /// V(x), ∇V(x), ∇²V(x) of the normalized potential.
    pub fn potential_derivs(&self, x: Vec2) -> (f64, Vec2, Mat2) {
        let (v, g, h) = self.raw_potential(x);
        (v - self.v_shift, g, h)
    }

    pub fn potential(&self, x: Vec2) -> f64 {
        self.raw_potential(x).0 - self.v_shift
    }

    /// Conformal factor f and its gradient (f ≡ 1 for identity kinetics).
    pub fn conformal_factor(&self, x: Vec2) -> (f64, Vec2) {
        match &self.kinetic {
            Kinetic::Identity => (1.0, Vec2::zeros()),
            Kinetic::ConformalBump { strength, radius, center } => {
                let (b, db) = bump_profile(x, *radius, *center);
                (1.0 + strength * b, db * *strength)
            }
            Kinetic::ConformalTabulated(t) => {
                let (f, g, _) = t.eval(x);
                (f, g)
            }
        }
    }

    /// A⁻¹(x). The inactive axis carries an identity entry in 1D.
    pub fn inv_mass(&self, x: Vec2) -> Mat2 {
        let (f, _) = self.conformal_factor(x);
        let mut m = Mat2::identity() * (f * f);
        if self.dim == 1 {
            m[(1, 1)] = 1.0;
        }
        m
    }

    /// A(x).
    pub fn mass(&self, x: Vec2) -> Mat2 {
        let (f, _) = self.conformal_factor(x);
        let mut m = Mat2::identity() / (f * f);
        if self.dim == 1 {
            m[(1, 1)] = 1.0;
        }
        m
    }

    fn inv_mass_eigen(&self, x: Vec2) -> (f64, f64) {
        let m = self.inv_mass(x);
        if self.dim == 1 {
            return (m[(0, 0)], m[(0, 0)]);
        }
        let tr = m.trace();
        let det = m.determinant();
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        (0.5 * tr - disc, 0.5 * tr + disc)
    }

    /// ∇ₓ of ½⟨A⁻¹(x)v, v⟩.
    pub fn kinetic_grad(&self, x: Vec2, v: Vec2) -> Vec2 {
        match &self.kinetic {
            Kinetic::Identity => Vec2::zeros(),
            _ => {
                let (f, df) = self.conformal_factor(x);
                let mut vv = v;
                if self.dim == 1 {
                    vv[1] = 0.0;
                }
                self.restrict(df * (f * vv.norm_squared()))
            }
        }
    }

    /// L⁰(x,v) = ½⟨A⁻¹v,v⟩ − V with c = 0, α = 0.
    pub fn lagrangian0(&self, x: Vec2, v: Vec2) -> f64 {
        let v = self.restrict(v);
        0.5 * v.dot(&(self.inv_mass(x) * v)) - self.potential(x)
    }

    pub fn check_point(x: Vec2) -> Result<()> {
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("point"))
        }
    }

    /// ½⟨A(x)p,p⟩ + V(x), or H(x, c+p) − α when `shifted`.
    pub fn eval_hamiltonian(&self, x: Vec2, p: Vec2, shifted: bool) -> Result<f64> {
        Self::check_point(x)?;
        Self::check_point(p)?;
        let mut q = self.restrict(p);
        let mut shift = 0.0;
        if shifted {
            shift = self.alpha.ok_or_else(|| {
                Error::InvalidParameter("shifted Hamiltonian needs an attached alpha".into())
            })?;
            q += self.c;
        }
        Ok(0.5 * q.dot(&(self.mass(x) * q)) + self.potential(x) - shift)
    }

    /// L^c(x,v) = ½⟨A⁻¹v,v⟩ − V − ⟨c,v⟩ + α.
    pub fn eval_lagrangian_c(&self, x: Vec2, v: Vec2, alpha: f64) -> Result<f64> {
        Self::check_point(x)?;
        Self::check_point(v)?;
        if !alpha.is_finite() {
            return Err(Error::NonFinite("alpha"));
        }
        let v = self.restrict(v);
        Ok(self.lagrangian0(x, v) - self.c.dot(&v) + alpha)
    }

    /// κ₁(r) = max of L⁰ over |v| ≤ r, by grid maximization.
    pub fn kappa1(&self, r: f64) -> f64 {
        let samples = self.sample_grid();
        (0..samples.len())
            .map(|idx| {
                let x = samples.node_point(idx);
                0.5 * r * r * self.inv_mass_eigen(x).1 - self.potential(x)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Upper bound for speeds of minimizers relevant to the Lax–Oleinik
    /// iteration at cohomology `c`: |v| ≤ sqrt(a_max · 2(½a_max|c|² − min V)).
    pub fn speed_bound(&self, c: Vec2) -> f64 {
        let g = &self.growth;
        let energy = 0.5 * g.a_max * c.norm_squared() - g.v_min;
        (g.a_max * 2.0 * energy.max(0.0)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamiltonian_examples() {
        let p = SystemSpec::pendulum();
        assert_eq!(p.eval_hamiltonian(Vec2::zeros(), Vec2::zeros(), false).unwrap(), 0.0);
        let h = p.eval_hamiltonian(Vec2::new(0.25, 0.0), Vec2::new(1.0, 0.0), false).unwrap();
        assert!((h + 0.5).abs() < 1e-12);
        let f = SystemSpec::free(2).unwrap().with_c(Vec2::new(0.3, -0.4));
        let h = f.eval_hamiltonian(Vec2::new(0.7, 0.1), f.c, false).unwrap();
        assert!((h - 0.125).abs() < 1e-15);
        assert!(p.eval_hamiltonian(Vec2::new(f64::NAN, 0.0), Vec2::zeros(), false).is_err());
        assert!(p.eval_hamiltonian(Vec2::zeros(), Vec2::zeros(), true).is_err());
    }

    #[test]
    fn lagrangian_examples() {
        let p = SystemSpec::pendulum();
        let f = SystemSpec::free(1).unwrap();
        assert_eq!(f.eval_lagrangian_c(Vec2::new(0.3, 0.0), Vec2::new(1.0, 0.0), 0.0).unwrap(), 0.5);
        assert_eq!(p.eval_lagrangian_c(Vec2::zeros(), Vec2::zeros(), 0.0).unwrap(), 0.0);
        let l = p.eval_lagrangian_c(Vec2::new(0.5, 0.0), Vec2::zeros(), 0.0).unwrap();
        assert!((l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn growth_constants() {
        let p = SystemSpec::pendulum();
        assert!((p.growth.kappa1_1 - 2.5).abs() < 1e-12);
        assert!((p.growth.c2 - 0.5).abs() < 1e-12);
        assert!((p.kappa1(1.0) - 2.5).abs() < 1e-12);
        let s = SystemSpec::separable_pendulum();
        assert!((s.growth.kappa1_1 - 4.5).abs() < 1e-12);
        let b = SystemSpec::bump(9.0, 0.25).unwrap();
        assert!((b.growth.kappa1_1 - 50.0).abs() < 1e-9);
        assert!((b.growth.lambda - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_of_negative_amplitude() {
        let s = SystemSpec::new(
            "x",
            vec![],
            1,
            Kinetic::Identity,
            Potential::Cosine { amplitude: [-1.0, 0.0] },
        )
        .unwrap();
        assert!(s.potential(Vec2::new(0.5, 0.0)).abs() < 1e-12);
        assert!((s.potential(Vec2::zeros()) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn tabulated_bump_matches_closed_form() {
        let a = SystemSpec::bump(9.0, 0.25).unwrap();
        let b = SystemSpec::tabulated_bump(9.0, 0.25, 256).unwrap();
        for x in [Vec2::new(0.5, 0.5), Vec2::new(0.6, 0.45), Vec2::new(0.1, 0.9)] {
            assert!((a.conformal_factor(x).0 - b.conformal_factor(x).0).abs() < 2e-2);
        }
    }
}
