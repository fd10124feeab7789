//! Scenario files: environment, grids, Monte Carlo budget and tolerances.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bpve_core::environment::{EnvironmentSpec, ImmigrationAtom, OffspringFamily};
use bpve_core::limit::{inversion_map, LimitSpec};

use crate::LabError;

/// Scenarios shipped with the binary, addressable by name.
pub const BUILTIN: [(&str, &str); 4] = [
    ("bernoulli-nu0", include_str!("../configs/bernoulli-nu0.toml")),
    ("lf-nu2", include_str!("../configs/lf-nu2.toml")),
    ("lf-nu2-imm-k2", include_str!("../configs/lf-nu2-imm-k2.toml")),
    ("lf-nu2-imm-k3", include_str!("../configs/lf-nu2-imm-k3.toml")),
];

pub const MIN_REPLICATES: u64 = 1_000;
pub const MIN_ORDER: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub environment: EnvironmentSection,
    #[serde(default)]
    pub limit: LimitSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Bernoulli,
    LinearFractional,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub family: Family,
    pub alpha: f64,
    #[serde(default)]
    pub nu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_index: Option<u64>,
    /// Atoms `"k:c"`: `k` immigrants with probability `c / n`.
    #[serde(default)]
    pub immigration: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LimitSection {
    /// Start of the entrance-law and rejection checks.
    pub eps: f64,
    /// `(eps, m)` of the conditional mean check `E[X_{A(nm)} | X_{A(n eps)} > 0]`.
    pub mean_window: [f64; 2],
}

impl Default for LimitSection {
    fn default() -> Self {
        Self {
            eps: 0.25,
            mean_window: [0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub times: Vec<f64>,
    /// Exact checks run at each of these `n`.
    pub n_values: Vec<u64>,
    /// `n` of the Monte Carlo checks.
    pub n_mc: u64,
    /// Horizon of the environment diagnostics.
    pub diag_horizon: u64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            times: vec![0.5, 1.0, 2.0],
            n_values: vec![100, 1_000, 10_000],
            n_mc: 2_000,
            diag_horizon: 100_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub replicates: u64,
    /// Replicates of the continuous-time simulator checks.
    pub z_replicates: u64,
    pub seed: u64,
    pub workers: usize,
    /// Series truncation order `N`.
    pub truncation: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            replicates: 100_000,
            z_replicates: 1_000_000,
            seed: 20_240_611,
            workers: 1,
            truncation: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub identity: f64,
    pub exact: f64,
    pub series: f64,
    pub rate_fd: f64,
    pub yaglom_tv: f64,
    pub survival_rel: f64,
    pub mean_rel: f64,
    pub fdd_tv: f64,
    pub z_tv: f64,
    pub w_tv: f64,
    pub theorem2_tv: f64,
    pub reverse_tv: f64,
    pub acceptance_abs: f64,
    pub small_time: f64,
    pub scaling_ratio: f64,
    pub toeplitz: f64,
    pub shape_sup: f64,
    pub variance_sum: f64,
    pub event_rate_se: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identity: 1e-12,
            exact: 1e-8,
            series: 1e-10,
            rate_fd: 1e-6,
            yaglom_tv: 0.02,
            survival_rel: 0.10,
            mean_rel: 0.05,
            fdd_tv: 0.03,
            z_tv: 0.01,
            w_tv: 0.02,
            theorem2_tv: 0.02,
            reverse_tv: 0.03,
            acceptance_abs: 0.01,
            small_time: 1e-4,
            scaling_ratio: 0.01,
            toeplitz: 0.05,
            shape_sup: 0.05,
            variance_sum: 2.0,
            event_rate_se: 3.0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, LabError> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A builtin name or a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self, LabError> {
        if let Some((_, text)) = BUILTIN.iter().find(|(n, _)| *n == name_or_path) {
            return Self::from_toml(text);
        }
        let text = std::fs::read_to_string(name_or_path)
            .map_err(|e| LabError::Config(format!("{name_or_path}: {e}")))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |msg: String| Err(LabError::Config(msg));
        let env = &self.environment;
        if !(env.alpha > 0.0) || !env.alpha.is_finite() {
            return bad(format!("environment.alpha must be positive, got {}", env.alpha));
        }
        if env.family == Family::Bernoulli && env.nu != 0.0 {
            return bad("Bernoulli offspring has nu = 0".into());
        }
        if self.mc.replicates < MIN_REPLICATES {
            return bad(format!(
                "mc.replicates must be at least {MIN_REPLICATES}, got {}",
                self.mc.replicates
            ));
        }
        if self.mc.truncation < MIN_ORDER {
            return bad(format!(
                "mc.truncation must be at least {MIN_ORDER}, got {}",
                self.mc.truncation
            ));
        }
        if self.mc.workers == 0 {
            return bad("mc.workers must be at least 1".into());
        }
        let times = &self.grid.times;
        if times.is_empty() || times.len() > 3 {
            return bad("grid.times must hold one to three points".into());
        }
        if times.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return bad("grid.times must be positive".into());
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("grid.times must be strictly increasing".into());
        }
        if self.grid.n_values.is_empty() || self.grid.n_values.windows(2).any(|w| w[0] >= w[1]) {
            return bad("grid.n_values must be nonempty and strictly increasing".into());
        }
        let eps = self.limit.eps;
        if !(eps > 0.0 && eps < 1.0) {
            return bad(format!("limit.eps must lie in (0, 1), got {eps}"));
        }
        let [e, m] = self.limit.mean_window;
        if !(e > 0.0 && e <= m) {
            return bad("limit.mean_window must satisfy 0 < eps <= m".into());
        }
        self.environment_spec()?;
        Ok(())
    }

    /// Whether the grid supports the `t -> 1/t` reversal checks.
    pub fn inversion_closed(&self) -> bool {
        inversion_map(&self.grid.times).is_ok()
    }

    pub fn immigration_atoms(&self) -> Result<Vec<ImmigrationAtom>, LabError> {
        self.environment
            .immigration
            .iter()
            .map(|s| {
                let parse = || -> Option<ImmigrationAtom> {
                    let (k, c) = s.split_once(':')?;
                    Some(ImmigrationAtom {
                        value: k.trim().parse().ok()?,
                        weight: c.trim().parse().ok()?,
                    })
                };
                parse().ok_or_else(|| {
                    LabError::Config(format!("immigration atom {s:?} is not of the form k:c"))
                })
            })
            .collect()
    }

    pub fn environment_spec(&self) -> Result<EnvironmentSpec, LabError> {
        let env = &self.environment;
        let family = match env.family {
            Family::Bernoulli => OffspringFamily::Bernoulli,
            Family::LinearFractional => OffspringFamily::LinearFractional,
        };
        let mut spec = EnvironmentSpec::new(family, env.alpha, env.nu)?;
        if let Some(start) = env.start_index {
            spec = spec.with_start_index(start)?;
        }
        Ok(spec.with_immigration(self.immigration_atoms()?)?)
    }

    pub fn limit_spec(&self) -> Result<LimitSpec, LabError> {
        Ok(LimitSpec::from_environment(
            &self.environment_spec()?,
            self.mc.truncation,
        )?)
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
