//! Full-batch gradient descent with primal/dual bookkeeping.
//!
//! For each neuron the primal variable is `β_k = X w_k` and the dual variable
//! is `α_k = (XXᵀ)⁻¹ X w_k`. The dual is solved once from the initial weights
//! and afterwards advanced with its own exact recursion, so coordinates whose
//! neuron is inactive are carried over bit-for-bit.

mod init;
mod io;
mod run;

pub use init::{
    disjoint_offsets, eps_multi, eps_single, eps_two, init_multi_disjoint, init_random, init_single, init_two,
    random_assignment, InitSpec,
};
pub use io::{read_trajectory_csv, write_trajectory_csv, RunSummary};
pub use run::{
    detect_activation_freeze, dual_update_check, monotone_risk_violations, primal_dual_residual, run, DualViolation,
    Snapshot, StopReason, StopRule, Trajectory,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relu_model::{gradient, ModelState};
use crate::spectral_data::{Constants, Dataset};

/// Largest Gram condition number accepted by [`primal_dual`].
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSize {
    pub eta: f64,
    pub eta_lo: f64,
    pub eta_hi: f64,
    /// `[1/(C·C_g‖λ‖₁), 1/(C_g‖λ‖₁)]`.
    pub window: (f64, f64),
    pub eta_in_window: bool,
}

/// `eta_hi = 1/μ₁(XXᵀ)`, `eta_lo = eta_hi/C`, `eta = eta_hi/2`.
pub fn recommend_step_size(ds: &Dataset, constants: &Constants) -> Result<StepSize> {
    let mu1 = ds.gram().mu_max();
    if !(mu1 > 0.0) {
        return Err(Error::InvalidArgument("Gram matrix has zero spectral norm".into()));
    }
    let eta_hi = 1.0 / mu1;
    let eta = eta_hi / 2.0;
    let scale = constants.c_g * ds.l1();
    let window = (1.0 / (constants.c * scale), 1.0 / scale);
    Ok(StepSize {
        eta,
        eta_lo: eta_hi / constants.c,
        eta_hi,
        window,
        eta_in_window: eta >= window.0 && eta <= window.1,
    })
}

/// `(β_k, α_k)` for every neuron, with `α_k` solved from the Gram system.
pub fn primal_dual(state: &ModelState, ds: &Dataset) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let cond = ds.gram().condition();
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    let betas = state.preactivations(ds.x())?;
    let alphas = betas.iter().map(|b| ds.gram().solve(b)).collect();
    Ok((betas, alphas))
}

pub(crate) fn apply_update(w: &mut DVector<f64>, x: &DMatrix<f64>, v: &DVector<f64>, eta: f64) {
    let g = x.tr_mul(v);
    w.zip_apply(&g, |wi, gi| *wi -= eta * gi);
}

/// One gradient step on every neuron.
pub fn step(state: &ModelState, ds: &Dataset, eta: f64) -> Result<ModelState> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
    }
    let grads = gradient(state, ds)?;
    let mut next = state.clone();
    for (w, g) in next.weights.iter_mut().zip(&grads) {
        w.zip_apply(g, |wi, gi| *wi -= eta * gi);
    }
    if next.weights.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(state.iter + 1));
    }
    next.iter += 1;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relu_model::Sign;
    use crate::spectral_data::{sample_dataset, LabelSpec, Spectrum, ZDist};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn hand_step() {
        let ds = Dataset::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), v(&[1.0]), Spectrum::isotropic(2)).unwrap();
        let s = ModelState::new(vec![v(&[0.5, 0.0])], vec![Sign::Plus], 0).unwrap();
        let next = step(&s, &ds, 0.5).unwrap();
        assert_eq!(next.weights[0].as_slice(), &[0.75, 0.0]);
        assert_eq!(next.iter, 1);
        assert!(step(&s, &ds, 0.0).is_err());
    }

    #[test]
    fn fixed_point_and_inactive_rows() {
        let ds = Dataset::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), v(&[1.0]), Spectrum::isotropic(2)).unwrap();
        let s = ModelState::new(vec![v(&[1.0, 3.0])], vec![Sign::Plus], 0).unwrap();
        assert_eq!(step(&s, &ds, 0.3).unwrap().weights, s.weights);

        let base = ModelState::new(vec![v(&[0.5, 0.2])], vec![Sign::Plus], 0).unwrap();
        let extended = Dataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.5]),
            v(&[1.0, -0.7]),
            Spectrum::isotropic(2),
        )
        .unwrap();
        assert!(extended.x().row(1).dot(&base.weights[0].transpose()) < 0.0);
        assert_eq!(step(&base, &ds, 0.4).unwrap(), step(&base, &extended, 0.4).unwrap());
    }

    #[test]
    fn step_size_examples() {
        let ds = Dataset::new(DMatrix::identity(2, 3), v(&[1.0, -1.0]), Spectrum::isotropic(3)).unwrap();
        let s = recommend_step_size(&ds, &Constants::default()).unwrap();
        assert!((s.eta_hi - 1.0).abs() < 1e-12);
        assert!((s.eta - 0.5).abs() < 1e-12);
        let doubled = Dataset::new(DMatrix::identity(2, 3) * 2.0, v(&[1.0, -1.0]), Spectrum::isotropic(3)).unwrap();
        let t = recommend_step_size(&doubled, &Constants::default()).unwrap();
        assert!((t.eta_hi - 0.25).abs() < 1e-12);
    }

    #[test]
    fn step_size_tracks_dimension() {
        let spec = Spectrum::isotropic(2000);
        for seed in 0..20 {
            let ds = sample_dataset(&spec, 10, &LabelSpec::uniform_mixed(), ZDist::Gaussian, seed).unwrap();
            let c = Constants::for_dataset(&ds);
            let s = recommend_step_size(&ds, &c).unwrap();
            let ratio = s.eta_hi * 2000.0;
            assert!(ratio > 0.7 && ratio < 1.3, "seed {seed}: eta_hi·d = {ratio}");
            assert!(s.eta_in_window);
        }
    }

    #[test]
    fn primal_dual_of_orthonormal_rows() {
        let ds = Dataset::new(DMatrix::identity(2, 3), v(&[1.0, -1.0]), Spectrum::isotropic(3)).unwrap();
        let s = ModelState::new(vec![v(&[0.3, -0.2, 5.0])], vec![Sign::Plus], 0).unwrap();
        let (b, a) = primal_dual(&s, &ds).unwrap();
        assert_eq!(b[0], a[0]);
        assert_eq!(b[0].as_slice(), &[0.3, -0.2]);
    }
}
