//! Minimum-ℓ₂-norm interpolators and their KKT certificates.
//!
//! The single-neuron program is
//! `min ½‖w‖²` s.t. `wᵀx_i = y_i` (positives), `wᵀx_j ≤ 0` (negatives);
//! the two-neuron program is solved partition by partition through its
//! restricted convex reformulation. Both are solved exactly by enumeration,
//! with a projected-gradient solver available as an independent oracle.

mod dense;
mod gram_qp;
mod projected_gradient;
mod single;
mod two;

pub use dense::{eq_ineq_qp, QpSolution};
pub use projected_gradient::{min_norm_single_pg, PgOptions};
pub use single::min_norm_single;
pub use two::{brute_force_partition_objectives, min_norm_two};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::relu_model::Sign;
use crate::spectral_data::Dataset;
use gram_qp::Row;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinNormOptions {
    pub tol_feas: f64,
    pub tol_mult: f64,
    /// Relative tolerance for declaring two objectives tied.
    pub tol_obj: f64,
    pub cap_single: usize,
    pub cap_two: usize,
    /// Fall back to the active-set solver when the enumeration cap is exceeded.
    pub fallback: bool,
}

impl Default for MinNormOptions {
    fn default() -> Self {
        Self { tol_feas: 1e-9, tol_mult: 1e-9, tol_obj: 1e-10, cap_single: 16, cap_two: 14, fallback: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Part {
    S1,
    S2,
    S3,
    S4,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Certificate {
    /// Support `S = positives ∪ T`; labels on `T ⊆ negatives` are zeroed.
    Subset { support: Vec<usize>, zeroed: Vec<usize> },
    /// Part of every example in the restricted two-neuron program.
    Partition { pattern: Vec<Part> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Enumeration,
    ProjectedGradient,
}

/// Multipliers indexed by example.
///
/// Single neuron: `w★ = −Σ_{i∈P} λ_i x_i − Σ_{j∈N} μ_j x_j`, with `λ` stored in
/// `equality` (zero on negatives) and `μ ≥ 0` in `inequality` (zero on positives).
/// Two neurons: `δ` in `equality` and `μ` in `inequality`, one of each per example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub equality: Vec<f64>,
    pub inequality: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub feasibility: f64,
    pub multiplier_sign: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn residual(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.multiplier_sign).max(self.complementarity)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinNormSolution {
    pub weights: Vec<DVector<f64>>,
    pub objective: f64,
    pub certificate: Certificate,
    /// Other certificates reaching the same objective.
    pub alternatives: Vec<Certificate>,
    pub multipliers: Multipliers,
    pub kkt: KktReport,
    pub kkt_residual: f64,
    pub solver: Solver,
}

impl MinNormSolution {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "objective": self.objective,
            "weights": self.weights.iter().map(|w| w.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "subset_or_partition": self.certificate,
            "alternatives": self.alternatives,
            "multipliers": self.multipliers,
            "kkt": self.kkt,
            "kkt_residual": self.kkt_residual,
            "solver": self.solver,
        })
    }
}

/// `X_Sᵀ(X_S X_Sᵀ)⁻¹ y_S`.
pub fn linear_mni(x_s: &DMatrix<f64>, y_s: &DVector<f64>) -> Result<DVector<f64>> {
    if x_s.nrows() != y_s.len() {
        return Err(Error::DimensionMismatch { expected: x_s.nrows(), found: y_s.len() });
    }
    if x_s.nrows() == 0 {
        return Ok(DVector::zeros(x_s.ncols()));
    }
    let k = x_s * x_s.transpose();
    let c = crate::linalg::spd_solve(&k, y_s, 1e-13)
        .ok_or_else(|| Error::RankDeficient("rows of X_S are linearly dependent".into()))?;
    Ok(x_s.tr_mul(&c))
}

/// `(Xᵀ(XXᵀ)⁻¹y_⊕, Xᵀ(XXᵀ)⁻¹y_⊖)` with `y_⊕ = max(y, 0)`, `y_⊖ = −min(y, 0)`.
pub fn feasibility_witness(ds: &Dataset) -> (DVector<f64>, DVector<f64>) {
    let y_plus = ds.y().map(|v| v.max(0.0));
    let y_minus = ds.y().map(|v| -v.min(0.0));
    let wp = ds.x().tr_mul(&ds.gram().solve(&y_plus));
    let wm = ds.x().tr_mul(&ds.gram().solve(&y_minus));
    (wp, wm)
}

/// `½(‖w̃_⊕‖² + ‖w̃_⊖‖²)`, an upper bound on the min-norm objective of any
/// network containing neurons of the needed signs.
pub fn feasible_upper_bound_multi(ds: &Dataset, signs: &[Sign]) -> Result<f64> {
    let has = |s: Sign| signs.contains(&s);
    if (ds.n_pos() > 0 && !has(Sign::Plus)) || (ds.n_neg() > 0 && !has(Sign::Minus)) {
        return Err(Error::InvalidArgument("every label sign present needs a neuron of that sign".into()));
    }
    let y_plus = ds.y().map(|v| v.max(0.0));
    let y_minus = ds.y().map(|v| -v.min(0.0));
    let g = ds.gram();
    Ok(0.5 * (y_plus.dot(&g.solve(&y_plus)) + y_minus.dot(&g.solve(&y_minus))))
}

/// Relative objective comparison.
pub(crate) fn tied(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// KKT check carried out directly in weight space.
///
/// `weights` holds one block (single neuron) or two (`w_⊕`, `w_⊖`);
/// constraint rows are `p·x_i` on the first block and `q·x_i` on the second.
pub(crate) fn kkt_recheck(
    x: &DMatrix<f64>,
    weights: &[DVector<f64>],
    eq: &[Row],
    b: &[f64],
    ineq: &[Row],
    eq_mult: &[f64],
    ineq_mult: &[f64],
) -> KktReport {
    let n = x.nrows();
    let two = weights.len() == 2;
    let mut coef_p = DVector::zeros(n);
    let mut coef_q = DVector::zeros(n);
    for (r, c) in eq.iter().zip(eq_mult).chain(ineq.iter().zip(ineq_mult)) {
        coef_p[r.example] += c * r.p;
        coef_q[r.example] += c * r.q;
    }
    let mut stationarity = (&weights[0] + x.tr_mul(&coef_p)).norm_squared();
    if two {
        stationarity += (&weights[1] + x.tr_mul(&coef_q)).norm_squared();
    }
    let beta_p = x * &weights[0];
    let beta_q = if two { x * &weights[1] } else { DVector::zeros(n) };
    let value = |r: &Row| r.p * beta_p[r.example] + r.q * beta_q[r.example];
    let eq_res = eq.iter().zip(b).map(|(r, bv)| (value(r) - bv).abs()).fold(0.0, f64::max);
    let ineq_res = ineq.iter().map(|r| value(r).max(0.0)).fold(0.0, f64::max);
    let sign = ineq_mult.iter().map(|m| (-m).max(0.0)).fold(0.0, f64::max);
    let comp = ineq.iter().zip(ineq_mult).map(|(r, m)| (m * value(r)).abs()).fold(0.0, f64::max);
    KktReport {
        stationarity: stationarity.sqrt(),
        feasibility: eq_res.max(ineq_res),
        multiplier_sign: sign,
        complementarity: comp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_data::Spectrum;

    #[test]
    fn mni_examples() {
        let x = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let w = linear_mni(&x, &DVector::from_element(1, 5.0)).unwrap();
        assert!((w[0] - 0.6).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15);
        let x = DMatrix::identity(2, 4);
        let y = DVector::from_row_slice(&[0.5, -2.0]);
        assert_eq!(linear_mni(&x, &y).unwrap(), x.tr_mul(&y));
        assert_eq!(linear_mni(&x, &DVector::zeros(2)).unwrap(), DVector::zeros(4));
        let dup = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(linear_mni(&dup, &DVector::from_row_slice(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn upper_bound_examples() {
        let ds =
            Dataset::new(DMatrix::identity(3, 5), DVector::from_row_slice(&[1.0, 0.5, 2.0]), Spectrum::isotropic(5))
                .unwrap();
        let b = feasible_upper_bound_multi(&ds, &[Sign::Plus]).unwrap();
        assert!((b - 0.5 * (1.0 + 0.25 + 4.0)).abs() < 1e-14);
        assert!(feasible_upper_bound_multi(&ds, &[Sign::Minus]).is_err());
    }
}
