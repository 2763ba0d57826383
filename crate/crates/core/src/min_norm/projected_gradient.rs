use nalgebra::{DMatrix, DVector};

use super::single::single_kkt;
use super::{Certificate, MinNormSolution, Multipliers, Solver};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::spectral_data::Dataset;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgOptions {
    pub max_iters: usize,
    /// Stop once a projected-gradient step would move the iterate by less than this.
    pub tol: f64,
}

impl Default for PgOptions {
    fn default() -> Self {
        Self { max_iters: 500_000, tol: 1e-13 }
    }
}

/// Single-neuron min-norm program solved by accelerated projected gradient
/// on its dual, with adaptive restart.
///
/// The dual variable is `c ∈ ℝⁿ` with `w = −Xᵀc`; entries on negatives are
/// constrained to `c_j ≥ 0`.
pub fn min_norm_single_pg(ds: &Dataset, opts: &PgOptions) -> Result<MinNormSolution> {
    let x = ds.x();
    let y = ds.y();
    let n = ds.n();
    let h: DMatrix<f64> = x * x.transpose();
    let lip = symmetric_eigenvalues(&h)?.last().copied().unwrap_or(0.0);
    if lip <= 0.0 {
        return Err(Error::RankDeficient("zero feature matrix".into()));
    }
    let b = DVector::from_fn(n, |i, _| y[i].max(0.0));
    let is_neg: Vec<bool> = y.iter().map(|v| *v < 0.0).collect();
    let project = |c: &mut DVector<f64>| {
        for (v, &neg) in c.iter_mut().zip(&is_neg) {
            if neg && *v < 0.0 {
                *v = 0.0;
            }
        }
    };
    let dual = |c: &DVector<f64>| 0.5 * c.dot(&(&h * c)) + b.dot(c);

    let step = |from: &DVector<f64>| {
        let mut next = from - (&h * from + &b) / lip;
        project(&mut next);
        next
    };

    let mut c = DVector::zeros(n);
    let mut z = c.clone();
    let mut t = 1.0_f64;
    let mut f_prev = dual(&c);
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let next = step(&z);
        let f_next = dual(&next);
        if f_next > f_prev {
            if t == 1.0 {
                // no descent even without momentum: rounding floor reached
                converged = true;
                break;
            }
            z = c.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + (&next - &c) * ((t - 1.0) / t_next);
        c = next;
        t = t_next;
        f_prev = f_next;
        // fixed-point residual of the projected gradient map
        if (step(&c) - &c).amax() <= opts.tol * c.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoCertificate("projected gradient did not converge".into()));
    }

    let w = -x.tr_mul(&c);
    let beta = x * &w;
    let mut mult = Multipliers { equality: vec![0.0; n], inequality: vec![0.0; n] };
    let mut zeroed = Vec::new();
    for i in 0..n {
        if is_neg[i] {
            mult.inequality[i] = c[i];
            if beta[i].abs() <= 1e-7 * y.amax().max(1.0) {
                zeroed.push(i);
            }
        } else {
            mult.equality[i] = c[i];
        }
    }
    let mut support: Vec<usize> = ds.pos_idx().into_iter().chain(zeroed.iter().copied()).collect();
    support.sort_unstable();
    let kkt = single_kkt(ds, &w, &mult);
    Ok(MinNormSolution {
        objective: 0.5 * w.norm_squared(),
        weights: vec![w],
        certificate: Certificate::Subset { support, zeroed },
        alternatives: Vec::new(),
        multipliers: mult,
        kkt_residual: kkt.residual(),
        kkt,
        solver: Solver::ProjectedGradient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_data::Spectrum;

    #[test]
    fn hand_example() {
        let ds = Dataset::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]),
            DVector::from_row_slice(&[1.0, -1.0]),
            Spectrum::isotropic(2),
        )
        .unwrap();
        let sol = min_norm_single_pg(&ds, &PgOptions::default()).unwrap();
        assert!((sol.weights[0][0] - 1.0).abs() < 1e-9 && (sol.weights[0][1] + 1.0).abs() < 1e-9);
        assert!((sol.multipliers.inequality[1] - 1.0).abs() < 1e-9);
        assert_eq!(sol.solver, Solver::ProjectedGradient);
    }
}
