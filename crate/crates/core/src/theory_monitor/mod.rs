//! Diagnostics evaluated on concrete runs: Gram concentration, the invariant
//! condition sets, the implicit-bias identities and distance bounds.

mod bounds;
mod conditions;
mod implicit_bias;
#[cfg(test)]
mod tests;

pub use bounds::{bound_report_single, bound_report_two, distance_bounds, BoundContext, BoundReport};
pub use conditions::{
    check_conditions_multi, check_conditions_single, check_conditions_two, freezing_violations, ConditionLedger,
    ConditionValue, LedgerRow,
};
pub use implicit_bias::{
    first_iterate_single, first_iterate_two, verify_implicit_bias_multi, verify_implicit_bias_single,
    verify_implicit_bias_two, ImplicitBiasReport, NeuronBias, OFF_TOL,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::spectral_data::{Constants, Dataset};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramDeviation {
    /// `‖XXᵀ/‖λ‖₁ − I‖ₒₚ`.
    pub deviation: f64,
    /// `C·max(√(n/d₂), n/d∞)`.
    pub envelope: f64,
    pub ratio: f64,
    pub n: usize,
    pub d2: f64,
    pub dinf: f64,
}

pub fn gram_deviation(ds: &Dataset, constants: &Constants) -> Result<GramDeviation> {
    let n = ds.n();
    let l1 = ds.l1();
    let dev = ds.gram().matrix() / l1 - DMatrix::identity(n, n);
    let eig = symmetric_eigenvalues(&dev)?;
    let deviation = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let (d2, dinf) = (ds.spectrum().d2(), ds.spectrum().dinf());
    let nf = n as f64;
    let envelope = constants.c * (nf / d2).sqrt().max(nf / dinf);
    Ok(GramDeviation { deviation, envelope, ratio: deviation / envelope, n, d2, dinf })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenBounds {
    pub mu_n: f64,
    pub mu_1: f64,
    /// `max(μ₁/‖λ‖₁, ‖λ‖₁/μ_n)`.
    pub c_g_hat: f64,
}

pub fn eigen_bounds(ds: &Dataset) -> Result<EigenBounds> {
    let eig = symmetric_eigenvalues(ds.gram().matrix())?;
    let (mu_n, mu_1) = (eig[0], eig[eig.len() - 1]);
    if !(mu_n > 0.0) {
        return Err(Error::RankDeficient(format!("smallest Gram eigenvalue is {mu_n:e}")));
    }
    let l1 = ds.l1();
    Ok(EigenBounds { mu_n, mu_1, c_g_hat: (mu_1 / l1).max(l1 / mu_n) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through `(log d, log error)`.
pub fn slope_estimate(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 4 {
        return Err(Error::InvalidArgument(format!("need at least 4 points, got {}", points.len())));
    }
    if let Some((d, e)) = points.iter().find(|(d, e)| !(*d > 0.0) || !(*e > 0.0) || !d.is_finite() || !e.is_finite()) {
        return Err(Error::InvalidArgument(format!("point ({d}, {e}) is not strictly positive")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all d values are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(SlopeFit { slope, intercept, r2 })
}
