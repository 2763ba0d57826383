use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::apply_update;
use crate::error::{Error, Result};
use crate::relu_model::{output_from_preactivations, ActivationMask, ModelState, Sign};
use crate::spectral_data::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub risk_tol: Option<f64>,
    /// Log every `stride`-th iterate (the first and last are always logged).
    pub stride: usize,
}

impl StopRule {
    /// `max_iters = ⌈30/(η μ_n)⌉`, `grad_tol = 1e-10·‖y‖`, stride 1.
    pub fn default_for(ds: &Dataset, eta: f64) -> Self {
        let contraction = eta * ds.gram().mu_min();
        let max_iters = (30.0 / contraction).ceil().clamp(1.0, 1e8) as usize;
        Self { max_iters, grad_tol: 1e-10 * ds.y().norm(), risk_tol: None, stride: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTol,
    RiskTol,
    MaxIters,
    Diverged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    pub beta: Vec<DVector<f64>>,
    pub alpha: Vec<DVector<f64>>,
    pub mask: ActivationMask,
    pub risk: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub eta: f64,
    pub stride: usize,
    pub signs: Vec<Sign>,
    pub snapshots: Vec<Snapshot>,
    pub initial: ModelState,
    pub final_state: ModelState,
    pub stop_reason: StopReason,
    /// Largest `‖β_k − XXᵀα_k‖/(1 + ‖β_k‖)` over logged snapshots.
    pub max_consistency_residual: f64,
}

impl Trajectory {
    pub fn m(&self) -> usize {
        self.signs.len()
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }

    pub fn final_risk(&self) -> f64 {
        self.last().risk
    }

    pub fn iters(&self) -> usize {
        self.last().t
    }

    pub fn snapshot_at(&self, t: usize) -> Option<&Snapshot> {
        self.snapshots.binary_search_by_key(&t, |s| s.t).ok().map(|i| &self.snapshots[i])
    }

    fn require_stride_one(&self, what: &str) -> Result<()> {
        let contiguous = self.snapshots.windows(2).all(|w| w[1].t == w[0].t + 1);
        if self.stride != 1 || !contiguous {
            return Err(Error::Trajectory(format!("{what} requires every iterate to be logged")));
        }
        Ok(())
    }
}

fn consistency(ds: &Dataset, beta: &[DVector<f64>], alpha: &[DVector<f64>]) -> f64 {
    beta.iter().zip(alpha).map(|(b, a)| (b - ds.gram().matrix() * a).norm() / (1.0 + b.norm())).fold(0.0, f64::max)
}

/// Recompute the primal/dual consistency residual over every snapshot.
pub fn primal_dual_residual(traj: &Trajectory, ds: &Dataset) -> f64 {
    traj.snapshots.iter().map(|s| consistency(ds, &s.beta, &s.alpha)).fold(0.0, f64::max)
}

/// Gradient descent from `state` until a stop condition is met.
///
/// Divergence is not an error: the trajectory ends at the last finite iterate
/// with [`StopReason::Diverged`].
pub fn run(state: &ModelState, ds: &Dataset, eta: f64, stop: &StopRule) -> Result<Trajectory> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
    }
    if stop.stride == 0 {
        return Err(Error::InvalidArgument("logging stride must be at least 1".into()));
    }
    let (beta0, alpha0) = super::primal_dual(state, ds)?;
    let x = ds.x();
    let y = ds.y();
    let k_mat = ds.gram().matrix();
    let signs = state.signs.clone();

    let mut w = state.weights.clone();
    let mut beta = beta0;
    let mut alpha = alpha0;
    let mut t = 0usize;
    let mut snapshots = Vec::new();
    let mut max_res = 0.0_f64;

    let stop_reason = loop {
        let r = output_from_preactivations(&beta, &signs) - y;
        let risk = 0.5 * r.norm_squared();
        if !risk.is_finite() || beta.iter().chain(&alpha).any(|v| v.iter().any(|e| !e.is_finite())) {
            break StopReason::Diverged;
        }
        // v_k = s_k D(β_k)(h − y); the gradient is Xᵀ v_k and its norm is √(v_kᵀ K v_k).
        let v: Vec<DVector<f64>> = beta
            .iter()
            .zip(&signs)
            .map(|(b, s)| DVector::from_fn(b.len(), |i, _| if b[i] > 0.0 { s.value() * r[i] } else { 0.0 }))
            .collect();
        let grad_norm = v.iter().map(|vk| vk.dot(&(k_mat * vk))).sum::<f64>().max(0.0).sqrt();

        let reason = if grad_norm <= stop.grad_tol {
            Some(StopReason::GradTol)
        } else if stop.risk_tol.is_some_and(|rt| risk <= rt) {
            Some(StopReason::RiskTol)
        } else if t >= stop.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        if t % stop.stride == 0 || reason.is_some() {
            max_res = max_res.max(consistency(ds, &beta, &alpha));
            snapshots.push(Snapshot {
                t,
                mask: ActivationMask::from_preactivations(&beta),
                beta: beta.clone(),
                alpha: alpha.clone(),
                risk,
            });
        }
        if let Some(reason) = reason {
            break reason;
        }

        let mut next_w = w.clone();
        let mut next_alpha = alpha.clone();
        for k in 0..w.len() {
            apply_update(&mut next_w[k], x, &v[k], eta);
            for i in 0..v[k].len() {
                if beta[k][i] > 0.0 {
                    next_alpha[k][i] -= eta * v[k][i];
                }
            }
        }
        let next_beta: Vec<DVector<f64>> = next_w.iter().map(|wk| x * wk).collect();
        if next_w.iter().chain(&next_beta).any(|v| v.iter().any(|e| !e.is_finite())) {
            break StopReason::Diverged;
        }
        w = next_w;
        alpha = next_alpha;
        beta = next_beta;
        t += 1;
    };

    if snapshots.is_empty() {
        return Err(Error::NonFinite(0));
    }
    if stop_reason == StopReason::Diverged && snapshots.last().map(|s| s.t) != Some(t) {
        // The last finite iterate may have been skipped by the stride.
        let r = output_from_preactivations(&beta, &signs) - y;
        let risk = 0.5 * r.norm_squared();
        if risk.is_finite() {
            snapshots.push(Snapshot {
                t,
                mask: ActivationMask::from_preactivations(&beta),
                beta: beta.clone(),
                alpha: alpha.clone(),
                risk,
            });
        }
    }
    let last_t = snapshots.last().map_or(0, |s| s.t);
    Ok(Trajectory {
        eta,
        stride: stop.stride,
        signs: signs.clone(),
        snapshots,
        initial: state.clone(),
        final_state: ModelState { weights: w, signs, iter: state.iter + last_t },
        stop_reason,
        max_consistency_residual: max_res,
    })
}

/// Smallest logged `t₀` after which every mask equals the mask at `t₀`;
/// `None` if the final two masks differ.
pub fn detect_activation_freeze(traj: &Trajectory) -> Result<Option<usize>> {
    traj.require_stride_one("freeze detection")?;
    let snaps = &traj.snapshots;
    let last = snaps.len() - 1;
    if last > 0 && snaps[last].mask != snaps[last - 1].mask {
        return Ok(None);
    }
    let mut i = last;
    while i > 0 && snaps[i - 1].mask == snaps[last].mask {
        i -= 1;
    }
    Ok(Some(snaps[i].t))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualViolation {
    pub t: usize,
    pub neuron: usize,
    pub example: usize,
    pub expected: f64,
    pub observed: f64,
}

/// Check `α_k^{t+1} − α_k^t = −η s_k D(β_k^t)(h^t − y)` entrywise.
///
/// Inactive coordinates must be carried over exactly; active ones may differ
/// by `1e-8` relative to the size of the quantities involved.
pub fn dual_update_check(traj: &Trajectory, ds: &Dataset) -> Result<Vec<DualViolation>> {
    traj.require_stride_one("dual update check")?;
    let y = ds.y();
    let mut out = Vec::new();
    for pair in traj.snapshots.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        let r = output_from_preactivations(&cur.beta, &traj.signs) - y;
        for (k, s) in traj.signs.iter().enumerate() {
            for i in 0..y.len() {
                let (a0, a1) = (cur.alpha[k][i], next.alpha[k][i]);
                let ok = if cur.beta[k][i] > 0.0 {
                    let expected = a0 - traj.eta * s.value() * r[i];
                    let scale = a0.abs().max(a1.abs()).max((traj.eta * r[i]).abs()).max(f64::MIN_POSITIVE);
                    (a1 - expected).abs() <= 1e-8 * scale
                } else {
                    a1 == a0
                };
                if !ok {
                    let delta = if cur.beta[k][i] > 0.0 { -traj.eta * s.value() * r[i] } else { 0.0 };
                    out.push(DualViolation { t: cur.t, neuron: k, example: i, expected: delta, observed: a1 - a0 });
                }
            }
        }
    }
    Ok(out)
}

/// Logged times `t ≥ t₀` at which the risk rose by more than `slack`.
pub fn monotone_risk_violations(traj: &Trajectory, t0: usize, slack: f64) -> Vec<usize> {
    traj.snapshots.windows(2).filter(|w| w[0].t >= t0 && w[1].risk > w[0].risk + slack).map(|w| w[1].t).collect()
}
