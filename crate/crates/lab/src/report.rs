//! Check records, the JSON report and the per-check pmf tables.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::LabError;

#[derive(Debug, Clone, Copy, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// The Monte Carlo radius exceeds the tolerance, so the check cannot resolve it.
    Misconfigured,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CheckRecord {
    pub name: String,
    pub kind: CheckKind,
    pub value: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overflow: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_mass: Option<f64>,
    pub runtime_ms: f64,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl CheckRecord {
    /// Passes when `value <= tolerance`.
    pub fn exact(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        let status = if value <= tolerance { Status::Pass } else { Status::Fail };
        Self {
            name: name.into(),
            kind: CheckKind::Exact,
            value,
            tolerance,
            radius: None,
            status,
            samples: None,
            overflow: None,
            tail_mass: None,
            runtime_ms: 0.0,
            detail: String::new(),
        }
    }

    /// Passes when `value <= tolerance`, provided the radius fits inside the tolerance.
    pub fn monte_carlo(
        name: impl Into<String>,
        value: f64,
        tolerance: f64,
        radius: f64,
        samples: u64,
    ) -> Self {
        let status = if radius > tolerance {
            Status::Misconfigured
        } else if value <= tolerance {
            Status::Pass
        } else {
            Status::Fail
        };
        Self {
            kind: CheckKind::MonteCarlo,
            radius: Some(radius),
            samples: Some(samples),
            status,
            ..Self::exact(name, value, tolerance)
        }
    }

    pub fn with_overflow(mut self, overflow: u64) -> Self {
        self.overflow = Some(overflow);
        self
    }

    pub fn with_tail(mut self, tail: f64) -> Self {
        self.tail_mass = Some(tail);
        self
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// Runs `f` and stamps the elapsed time on every record it returns.
pub fn timed<F>(f: F) -> Result<Vec<CheckRecord>, LabError>
where
    F: FnOnce() -> Result<Vec<CheckRecord>, LabError>,
{
    let start = Instant::now();
    let mut out = f()?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    for r in &mut out {
        r.runtime_ms = ms;
    }
    Ok(out)
}

/// One row of a pmf table; `state` is a number or `>cap`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmfRow {
    pub state: String,
    pub exact: Option<f64>,
    pub limit: Option<f64>,
    pub mc: Option<f64>,
    pub mc_ci_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmfTable {
    pub name: String,
    pub rows: Vec<PmfRow>,
}

impl PmfTable {
    /// Columns given as capped pmfs of equal length, the last cell being `>cap`.
    pub fn from_columns(
        name: impl Into<String>,
        exact: Option<&[f64]>,
        limit: Option<&[f64]>,
        mc: Option<(&[f64], f64)>,
    ) -> Self {
        let len = [exact.map(<[f64]>::len), limit.map(<[f64]>::len), mc.map(|m| m.0.len())]
            .into_iter()
            .flatten()
            .max()
            .unwrap_or(0);
        let rows = (0..len)
            .map(|i| PmfRow {
                state: if i + 1 == len { format!(">{}", len - 2) } else { i.to_string() },
                exact: exact.and_then(|v| v.get(i).copied()),
                limit: limit.and_then(|v| v.get(i).copied()),
                mc: mc.and_then(|(v, _)| v.get(i).copied()),
                mc_ci_radius: mc.map(|(_, r)| r),
            })
            .collect();
        Self {
            name: name.into(),
            rows,
        }
    }

    pub fn write_csv(&self, dir: &Path) -> Result<(), LabError> {
        let mut w = csv::Writer::from_path(dir.join(format!("pmf_{}.csv", self.name)))?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Metadata {
    pub scenario: String,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub truncation: usize,
    pub replicates: u64,
}

impl Metadata {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            scenario: cfg.name.clone(),
            seed: cfg.mc.seed,
            config_hash: cfg.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            truncation: cfg.mc.truncation,
            replicates: cfg.mc.replicates,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct VerificationReport {
    pub experiment: String,
    pub metadata: Metadata,
    pub checks: Vec<CheckRecord>,
    #[serde(skip)]
    pub tables: Vec<PmfTable>,
}

impl VerificationReport {
    pub fn new(experiment: impl Into<String>, cfg: &ScenarioConfig) -> Self {
        Self {
            experiment: experiment.into(),
            metadata: Metadata::new(cfg),
            checks: Vec::new(),
            tables: Vec::new(),
        }
    }

    pub fn extend(&mut self, other: VerificationReport) {
        self.checks.extend(other.checks);
        self.tables.extend(other.tables);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckRecord::passed)
    }

    pub fn any_misconfigured(&self) -> bool {
        self.checks.iter().any(|c| c.status == Status::Misconfigured)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `report.json` plus one `pmf_<name>.csv` per table.
    pub fn write(&self, dir: &Path) -> Result<(), LabError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        for t in &self.tables {
            t.write_csv(dir)?;
        }
        Ok(())
    }

    pub fn summary_lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                let radius = c.radius.map_or(String::new(), |r| format!("{r:.3e}"));
                let status = match c.status {
                    Status::Pass => "pass",
                    Status::Fail => "FAIL",
                    Status::Misconfigured => "MISCONFIGURED",
                };
                format!("{},{:.6e},{:.3e},{},{}", c.name, c.value, c.tolerance, radius, status)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_above_tolerance_is_misconfigured() {
        let r = CheckRecord::monte_carlo("x", 0.001, 0.01, 0.02, 100);
        assert_eq!(r.status, Status::Misconfigured);
        assert_eq!(CheckRecord::monte_carlo("x", 0.001, 0.01, 0.005, 100).status, Status::Pass);
        assert_eq!(CheckRecord::monte_carlo("x", 0.011, 0.01, 0.005, 100).status, Status::Fail);
    }

    #[test]
    fn table_labels_last_cell() {
        let t = PmfTable::from_columns("t", Some(&[0.5, 0.25, 0.25]), None, None);
        assert_eq!(t.rows[2].state, ">1");
        assert_eq!(t.rows[0].limit, None);
    }

    #[test]
    fn csv_has_fixed_columns() {
        let dir = tempfile::tempdir().unwrap();
        let t = PmfTable::from_columns("t", Some(&[0.5, 0.5]), Some(&[1.0, 0.0]), Some((&[0.4, 0.6], 0.1)));
        t.write_csv(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("pmf_t.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), "state,exact,limit,mc,mc_ci_radius");
        assert_eq!(text.lines().count(), 3);
    }
}
