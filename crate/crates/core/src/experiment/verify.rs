use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::runner::SeedSummary;
use crate::error::{Error, Result};
use crate::gd_engine::{dual_update_check, monotone_risk_violations, primal_dual_residual, read_trajectory_csv};
use crate::relu_model::Sign;
use crate::spectral_data::Dataset;
use crate::theory_monitor::{verify_implicit_bias_multi, verify_implicit_bias_single, verify_implicit_bias_two};

const PRIMAL_DUAL_TOL: f64 = 1e-8;
const BIAS_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub skipped: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_owned(), passed, skipped: false, detail }
    }

    fn skip(name: &str, detail: &str) -> Self {
        Self { name: name.to_owned(), passed: true, skipped: true, detail: detail.to_owned() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Re-check a saved run from its trajectory CSV, dataset and summary.
///
/// Unreadable or malformed inputs are `Err` ([`Error::Schema`]); failed checks
/// are reported in the returned [`VerifyReport`].
pub fn verify_artifacts(trajectory: &Path, dataset: &Path, summary: &Path) -> Result<VerifyReport> {
    let ds = Dataset::from_json(&read(dataset)?).map_err(|e| Error::Schema(format!("dataset: {e}")))?;
    let summary: SeedSummary =
        serde_json::from_str(&read(summary)?).map_err(|e| Error::Schema(format!("summary: {e}")))?;
    let signs = &summary.run.signs;
    let traj = read_trajectory_csv(read(trajectory)?.as_bytes(), &ds, signs, summary.run.eta)?;

    let mut checks = Vec::new();
    if traj.stride == 1 {
        let v = dual_update_check(&traj, &ds)?;
        let detail = match v.first() {
            Some(f) => {
                format!("{} violations, first at t = {} (neuron {}, example {})", v.len(), f.t, f.neuron, f.example)
            }
            None => "all dual updates consistent".into(),
        };
        checks.push(CheckOutcome::new("dual_update_check", v.is_empty(), detail));
    } else {
        checks.push(CheckOutcome::skip("dual_update_check", "trajectory is not logged at every iterate"));
    }

    let r = primal_dual_residual(&traj, &ds);
    checks.push(CheckOutcome::new("primal_dual", r <= PRIMAL_DUAL_TOL, format!("residual {r:.3e}")));

    match summary.run.t0 {
        Some(t0) => {
            let v = monotone_risk_violations(&traj, t0, 1e-12);
            checks.push(CheckOutcome::new(
                "monotone_risk",
                v.is_empty(),
                format!("{} increases after t0 = {t0}", v.len()),
            ));
        }
        None => checks.push(CheckOutcome::skip("monotone_risk", "no activation freeze recorded")),
    }

    let bias = if signs.as_slice() == [Sign::Plus] {
        Some(verify_implicit_bias_single(&traj, &ds, BIAS_TOL)?)
    } else if signs.as_slice() == [Sign::Plus, Sign::Minus] {
        Some(verify_implicit_bias_two(&traj, &ds, BIAS_TOL)?)
    } else if let Some(a) = &summary.assignment {
        Some(verify_implicit_bias_multi(&traj, &ds, a, BIAS_TOL)?)
    } else {
        None
    };
    match bias {
        Some(b) => checks.push(CheckOutcome::new(
            "implicit_bias",
            b.passed,
            format!("projection distance {:.3e}, fit residual {:.3e}", b.projection_distance, b.fit_residual),
        )),
        None => checks.push(CheckOutcome::skip("implicit_bias", "no neuron assignment in the summary")),
    }

    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { checks, passed })
}
