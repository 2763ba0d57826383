use nalgebra::{DMatrix, DVector};

use super::gram_qp::next_combination;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub w: DVector<f64>,
    /// `w = −A_eqᵀλ − G_Aᵀμ`.
    pub eq_multipliers: DVector<f64>,
    /// Zero on inactive rows.
    pub ineq_multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub objective: f64,
}

/// Min-norm solution of `[A; G_A] w = [b; 0]` through a QR factorisation of the
/// stacked transpose. Returns `None` on rank loss.
fn equality_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let r_rows = m.nrows();
    if r_rows == 0 {
        return Some((DVector::zeros(m.ncols()), DVector::zeros(0)));
    }
    if r_rows > m.ncols() {
        return None;
    }
    let qr = m.transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let diag_max = r.diagonal().amax();
    if r.diagonal().iter().any(|v| v.abs() <= 1e-12 * diag_max) {
        return None;
    }
    // Mw = RᵀQᵀw = rhs with w = Qu
    let u = r.transpose().solve_lower_triangular(rhs)?;
    let w = &q * &u;
    let nu = -r.solve_upper_triangular(&u)?;
    Some((w, nu))
}

/// `min ½‖w‖²` s.t. `A_eq w = b_eq`, `G w ≤ 0`, by enumerating active
/// inequality sets in order of size. The first certified set is optimal.
pub fn eq_ineq_qp(a_eq: &DMatrix<f64>, b_eq: &DVector<f64>, g: &DMatrix<f64>, tol: f64) -> Result<QpSolution> {
    if a_eq.nrows() != b_eq.len() {
        return Err(Error::DimensionMismatch { expected: a_eq.nrows(), found: b_eq.len() });
    }
    if g.nrows() > 0 && g.ncols() != a_eq.ncols() {
        return Err(Error::DimensionMismatch { expected: a_eq.ncols(), found: g.ncols() });
    }
    let dim = a_eq.ncols();
    let n_eq = a_eq.nrows();
    let m = g.nrows();
    if equality_solve(a_eq, b_eq).is_none() {
        return Err(Error::Infeasible("equality rows are linearly dependent".into()));
    }
    let scale = b_eq.amax().max(1.0);
    for size in 0..=m.min(dim.saturating_sub(n_eq)) {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            let stacked =
                DMatrix::from_fn(
                    n_eq + size,
                    dim,
                    |r, c| {
                        if r < n_eq {
                            a_eq[(r, c)]
                        } else {
                            g[(subset[r - n_eq], c)]
                        }
                    },
                );
            let rhs = DVector::from_fn(n_eq + size, |r, _| if r < n_eq { b_eq[r] } else { 0.0 });
            if let Some((w, nu)) = equality_solve(&stacked, &rhs) {
                let gw = g * &w;
                let mu = nu.rows(n_eq, size);
                if gw.iter().all(|v| *v <= tol * scale) && mu.iter().all(|v| *v >= -tol) {
                    let mut ineq = DVector::zeros(m);
                    for (a, &j) in subset.iter().enumerate() {
                        ineq[j] = mu[a];
                    }
                    return Ok(QpSolution {
                        objective: 0.5 * w.norm_squared(),
                        eq_multipliers: nu.rows(0, n_eq).into_owned(),
                        ineq_multipliers: ineq,
                        active: subset,
                        w,
                    });
                }
            }
            if !next_combination(&mut subset, m) {
                break;
            }
        }
    }
    Err(Error::NoCertificate("every active set was rejected".into()))
}
