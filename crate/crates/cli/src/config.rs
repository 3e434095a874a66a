//! Run configuration: a TOML file with sections, overridden by flags.
//!
//! ```toml
//! [system]
//! name = "pendulum"
//! params = []
//! c = [0.0]
//!
//! [grid]
//! n = 512
//!
//! [tolerances]
//! tol_alpha = 1e-4
//! tol_fix = 1e-8
//! cluster_tol = 3.0   # grid cells
//! tol_aubry = 1e-3
//!
//! [run]
//! monotone = false
//! horizon = 10.0
//! output = "out"
//! seed = 20240601
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use weakkam_core::action::t0_estimate;
use weakkam_core::{SystemSpec, Vec2};

/// Invalid configuration; maps to exit code 4.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bad configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default)]
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub tol_alpha: f64,
    pub tol_fix: f64,
    /// In grid cells.
    pub cluster_tol: f64,
    pub tol_aubry: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { tol_alpha: 1e-4, tol_fix: 1e-8, cluster_tol: 3.0, tol_aubry: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Semiflow step; defaults per system when absent. The propagator step
    /// of the solver is chosen from the system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Solve with the monotone (unrefined) propagator; needed where the
    /// refined one oscillates, e.g. the bump metric.
    #[serde(default)]
    pub monotone: bool,
    pub horizon: f64,
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { tau: None, monotone: false, horizon: 10.0, output: PathBuf::from("out"), cache: None, seed: 20240601 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub grid: GridSection,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemSection { name: "pendulum".into(), params: Vec::new(), c: vec![0.0] },
            grid: GridSection { n: 512 },
            tolerances: Tolerances::default(),
            run: RunSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The system with c attached; also checks the config invariants.
    pub fn spec(&self) -> Result<SystemSpec, ConfigError> {
        let spec = SystemSpec::from_registry(&self.system.name, &self.system.params)
            .map_err(|e| ConfigError(e.to_string()))?;
        let c = &self.system.c;
        if c.len() > spec.dim {
            return Err(ConfigError(format!("c has {} components for a {}-dimensional system", c.len(), spec.dim)));
        }
        let cv = Vec2::new(c.first().copied().unwrap_or(0.0), c.get(1).copied().unwrap_or(0.0));
        if !(cv[0].is_finite() && cv[1].is_finite()) {
            return Err(ConfigError("c must be finite".into()));
        }
        let t = &self.tolerances;
        if ![t.tol_alpha, t.tol_fix, t.cluster_tol, t.tol_aubry].iter().all(|v| *v > 0.0) {
            return Err(ConfigError("tolerances must be strictly positive".into()));
        }
        if self.grid.n < 16 {
            return Err(ConfigError(format!("grid size {} (expected >= 16)", self.grid.n)));
        }
        if !(self.run.horizon > 0.0) {
            return Err(ConfigError("horizon must be positive".into()));
        }
        let spec = spec.with_c(cv);
        if let Some(tau) = self.run.tau {
            let t0 = t0_estimate(&spec);
            if !(tau > 0.0 && tau <= t0) {
                return Err(ConfigError(format!("tau {tau} outside (0, t0 = {t0}]")));
            }
        }
        Ok(spec)
    }

    /// sha256 of the canonical TOML of the whole config.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    /// Key of a cached weak KAM solution: only the fields it depends on.
    pub fn solution_key(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            system: &'a SystemSection,
            n: usize,
            tol_fix: f64,
            monotone: bool,
        }
        let key = Key {
            system: &self.system,
            n: self.grid.n,
            tol_fix: self.tolerances.tol_fix,
            monotone: self.run.monotone,
        };
        sha256_hex(toml::to_string(&key).expect("key serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.system.c = vec![1.0, -0.5];
        cfg.run.tau = Some(0.01);
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_nonpositive_tolerance_and_large_tau() {
        let mut cfg = RunConfig::default();
        cfg.tolerances.tol_fix = 0.0;
        assert!(cfg.spec().is_err());
        let mut cfg = RunConfig::default();
        cfg.run.tau = Some(1.0);
        assert!(cfg.spec().is_err());
    }

    #[test]
    fn solution_key_ignores_output_dir() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.run.output = PathBuf::from("elsewhere");
        assert_eq!(a.solution_key(), b.solution_key());
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
