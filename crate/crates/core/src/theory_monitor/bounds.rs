use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::min_norm::MinNormSolution;
use crate::spectral_data::{Constants, Dataset};

/// Absolute slack on the upper bound, absorbing solver error when both sides are ~0.
const UPPER_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundContext {
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub d: usize,
    pub l1: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Distances to the min-norm solution with their theoretical bounds, one
/// entry per neuron.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub distance: Vec<f64>,
    pub lower_bound: Vec<f64>,
    pub upper_bound: Vec<f64>,
    pub constants_used: Constants,
    pub within: bool,
    /// `false` when some lower bound exceeds its upper bound.
    pub bounds_ordered: bool,
    pub context: BoundContext,
}

/// `(√(count·y_min²/(C·C_g‖λ‖₁)), √(16·count·y_max²/(C_g‖λ‖₁)))`.
pub fn distance_bounds(count: usize, ds: &Dataset, c: &Constants) -> (f64, f64) {
    let scale = c.c_g * ds.l1();
    let k = count as f64;
    let lower = (k * ds.y_min().powi(2) / (c.c * scale)).sqrt();
    let upper = (16.0 * k * ds.y_max().powi(2) / scale).sqrt();
    (lower, upper)
}

fn context(ds: &Dataset) -> BoundContext {
    BoundContext {
        n: ds.n(),
        n_pos: ds.n_pos(),
        n_neg: ds.n_neg(),
        d: ds.d(),
        l1: ds.l1(),
        y_min: ds.y_min(),
        y_max: ds.y_max(),
    }
}

fn report(distance: Vec<f64>, bounds: Vec<(f64, f64)>, ds: &Dataset, c: &Constants) -> BoundReport {
    let within = distance.iter().zip(&bounds).all(|(d, (lo, hi))| *d >= *lo && *d <= *hi + UPPER_SLACK);
    BoundReport {
        bounds_ordered: bounds.iter().all(|(lo, hi)| lo <= hi),
        lower_bound: bounds.iter().map(|b| b.0).collect(),
        upper_bound: bounds.iter().map(|b| b.1).collect(),
        distance,
        constants_used: *c,
        within,
        context: context(ds),
    }
}

pub fn bound_report_single(
    w_inf: &DVector<f64>,
    ds: &Dataset,
    constants: &Constants,
    min_norm: &MinNormSolution,
) -> Result<BoundReport> {
    if min_norm.weights.len() != 1 {
        return Err(Error::InvalidArgument("expected a single-neuron min-norm solution".into()));
    }
    let distance = (w_inf - &min_norm.weights[0]).norm();
    Ok(report(vec![distance], vec![distance_bounds(ds.n_neg(), ds, constants)], ds, constants))
}

/// The positive neuron's bounds use `n₋`, the negative neuron's use `n₊`.
pub fn bound_report_two(
    pair_inf: (&DVector<f64>, &DVector<f64>),
    ds: &Dataset,
    constants: &Constants,
    min_norm_pair: &MinNormSolution,
) -> Result<BoundReport> {
    if min_norm_pair.weights.len() != 2 {
        return Err(Error::InvalidArgument("expected a two-neuron min-norm solution".into()));
    }
    let distance =
        vec![(pair_inf.0 - &min_norm_pair.weights[0]).norm(), (pair_inf.1 - &min_norm_pair.weights[1]).norm()];
    let bounds = vec![distance_bounds(ds.n_neg(), ds, constants), distance_bounds(ds.n_pos(), ds, constants)];
    Ok(report(distance, bounds, ds, constants))
}
