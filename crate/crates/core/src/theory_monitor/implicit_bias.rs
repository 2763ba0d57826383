use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gd_engine::{step, StopReason, Trajectory};
use crate::linalg::select_rows;
use crate::min_norm::linear_mni;
use crate::relu_model::Sign;
use crate::spectral_data::Dataset;

/// Slack on "preactivation ≤ 0" for examples a neuron should not fit.
pub const OFF_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronBias {
    pub sign: Sign,
    /// Examples the neuron is expected to interpolate.
    pub fitted: Vec<usize>,
    /// `‖w^(∞) − p‖` with `p` the projection of `w^(1)` onto the fit constraints.
    pub projection_distance: f64,
    /// `‖X_S w^(∞) − target‖ / ‖target‖` (absolute when the target is zero).
    pub fit_residual: f64,
    /// Largest preactivation on the remaining examples; `None` if there are none.
    pub max_off_preactivation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImplicitBiasReport {
    pub neurons: Vec<NeuronBias>,
    pub projection_distance: f64,
    pub fit_residual: f64,
    pub max_off_preactivation: Option<f64>,
    /// Condition number of `XXᵀ`.
    pub condition_number: f64,
    pub converged: bool,
    pub tol: f64,
    pub passed: bool,
}

/// `w^(1) = ηXᵀ(y − ε + (1/η)(XXᵀ)⁻¹ε)` with `ε = Xw⁰`.
pub fn first_iterate_single(traj: &Trajectory, ds: &Dataset) -> DVector<f64> {
    let eps = ds.x() * &traj.initial.weights[0];
    let inner = (ds.y() - &eps) + ds.gram().solve(&eps) / traj.eta;
    ds.x().tr_mul(&inner) * traj.eta
}

/// `(w_⊕^(1), w_⊖^(1))` in closed form, with `ε_⊕ = Xw_⊕⁰` and `ε_⊖ = Xw_⊖⁰`.
pub fn first_iterate_two(traj: &Trajectory, ds: &Dataset) -> (DVector<f64>, DVector<f64>) {
    let eta = traj.eta;
    let ep = ds.x() * &traj.initial.weights[0];
    let em = ds.x() * &traj.initial.weights[1];
    let y = ds.y();
    let wp = ds.x().tr_mul(&(y - &ep + &em + ds.gram().solve(&ep) / eta)) * eta;
    let wm = ds.x().tr_mul(&(-y + &ep - &em + ds.gram().solve(&em) / eta)) * eta;
    (wp, wm)
}

fn neuron_report(
    ds: &Dataset,
    sign: Sign,
    w_inf: &DVector<f64>,
    w1: &DVector<f64>,
    fitted: Vec<usize>,
    target: DVector<f64>,
) -> Result<NeuronBias> {
    let p = if fitted.is_empty() {
        w1.clone()
    } else {
        let xs = select_rows(ds.x(), &fitted);
        w1 + linear_mni(&xs, &(&target - &xs * w1))?
    };
    let beta = ds.x() * w_inf;
    let fit_abs: f64 = fitted.iter().zip(target.iter()).map(|(&i, t)| (beta[i] - t).powi(2)).sum::<f64>().sqrt();
    let scale = target.norm();
    let off: Vec<f64> = (0..ds.n()).filter(|i| !fitted.contains(i)).map(|i| beta[i]).collect();
    Ok(NeuronBias {
        sign,
        fitted,
        projection_distance: (w_inf - p).norm(),
        fit_residual: if scale > 0.0 { fit_abs / scale } else { fit_abs },
        max_off_preactivation: off.into_iter().reduce(f64::max),
    })
}

fn assemble(ds: &Dataset, traj: &Trajectory, neurons: Vec<NeuronBias>, tol: f64) -> ImplicitBiasReport {
    let projection_distance = neurons.iter().map(|n| n.projection_distance).fold(0.0, f64::max);
    let fit_residual = neurons.iter().map(|n| n.fit_residual).fold(0.0, f64::max);
    let max_off_preactivation = neurons.iter().filter_map(|n| n.max_off_preactivation).reduce(f64::max);
    let passed =
        projection_distance <= tol && fit_residual <= tol && max_off_preactivation.is_none_or(|v| v <= OFF_TOL);
    ImplicitBiasReport {
        neurons,
        projection_distance,
        fit_residual,
        max_off_preactivation,
        condition_number: ds.gram().condition(),
        converged: traj.stop_reason == StopReason::GradTol,
        tol,
        passed,
    }
}

fn labels_on(ds: &Dataset, idx: &[usize], sign: f64) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| sign * ds.y()[i]))
}

/// The single neuron should end at the projection of `w^(1)` onto
/// `{w : X₊w = y₊}` and be inactive on the negatives.
pub fn verify_implicit_bias_single(traj: &Trajectory, ds: &Dataset, tol: f64) -> Result<ImplicitBiasReport> {
    if traj.signs != [Sign::Plus] {
        return Err(Error::InvalidArgument("expected a single positive neuron".into()));
    }
    let w1 = first_iterate_single(traj, ds);
    let pos = ds.pos_idx();
    let target = labels_on(ds, &pos, 1.0);
    let neuron = neuron_report(ds, Sign::Plus, &traj.final_state.weights[0], &w1, pos, target)?;
    Ok(assemble(ds, traj, vec![neuron], tol))
}

/// `w_⊕` should fit the positives and `w_⊖` the negated negatives, each
/// from its own first iterate.
pub fn verify_implicit_bias_two(traj: &Trajectory, ds: &Dataset, tol: f64) -> Result<ImplicitBiasReport> {
    if traj.signs != [Sign::Plus, Sign::Minus] {
        return Err(Error::InvalidArgument("expected neurons with signs (+, -)".into()));
    }
    let (w1p, w1m) = first_iterate_two(traj, ds);
    let (pos, neg) = (ds.pos_idx(), ds.neg_idx());
    let tp = labels_on(ds, &pos, 1.0);
    let tm = labels_on(ds, &neg, -1.0);
    let fin = &traj.final_state.weights;
    let plus = neuron_report(ds, Sign::Plus, &fin[0], &w1p, pos, tp)?;
    let minus = neuron_report(ds, Sign::Minus, &fin[1], &w1m, neg, tm)?;
    Ok(assemble(ds, traj, vec![plus, minus], tol))
}

/// Neuron `k` should fit `s_k y` on `S_k = {i : assignment[i] = k}` and be
/// inactive elsewhere. `w_k^(1)` is one exact gradient step from the initial state.
pub fn verify_implicit_bias_multi(
    traj: &Trajectory,
    ds: &Dataset,
    assignment: &[usize],
    tol: f64,
) -> Result<ImplicitBiasReport> {
    if assignment.len() != ds.n() {
        return Err(Error::DimensionMismatch { expected: ds.n(), found: assignment.len() });
    }
    let m = traj.m();
    if assignment.iter().any(|&k| k >= m) {
        return Err(Error::InvalidArgument("assignment refers to a missing neuron".into()));
    }
    let first = step(&traj.initial, ds, traj.eta)?;
    let neurons = (0..m)
        .map(|k| {
            let sk: Vec<usize> = (0..ds.n()).filter(|&i| assignment[i] == k).collect();
            let target = labels_on(ds, &sk, traj.signs[k].value());
            neuron_report(ds, traj.signs[k], &traj.final_state.weights[k], &first.weights[k], sk, target)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(ds, traj, neurons, tol))
}
