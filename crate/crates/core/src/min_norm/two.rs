use nalgebra::DVector;
use rayon::prelude::*;

use super::gram_qp::{GramQp, Row, Strategy};
use super::{kkt_recheck, tied, Certificate, MinNormOptions, MinNormSolution, Multipliers, Part, Solver};
use crate::error::{Error, Result};
use crate::relu_model::relu;
use crate::spectral_data::Dataset;

/// Exhaustive inner search is used up to this many inequality rows.
const EXHAUSTIVE_MAX: usize = 6;

#[derive(Clone, Debug)]
struct Candidate {
    pattern: Vec<Part>,
    objective: f64,
    w_plus: DVector<f64>,
    w_minus: DVector<f64>,
    delta: Vec<f64>,
    mu: Vec<f64>,
}

/// Pattern for bitmask `mask`: bit `i` set moves example `i` into S2 (positive)
/// or S4 (negative).
fn pattern(ds: &Dataset, mask: u64) -> Vec<Part> {
    (0..ds.n())
        .map(|i| match (ds.y()[i] > 0.0, mask >> i & 1 == 1) {
            (true, false) => Part::S1,
            (true, true) => Part::S2,
            (false, false) => Part::S3,
            (false, true) => Part::S4,
        })
        .collect()
}

/// Equality and inequality rows of the restricted program, one of each per example.
fn rows(pattern: &[Part]) -> (Vec<Row>, Vec<Row>) {
    pattern
        .iter()
        .enumerate()
        .map(|(i, part)| {
            let ((p, q), (pi, qi)) = match part {
                Part::S1 => ((1.0, 0.0), (0.0, 1.0)),
                Part::S2 => ((1.0, -1.0), (0.0, -1.0)),
                Part::S3 => ((0.0, -1.0), (1.0, 0.0)),
                Part::S4 => ((1.0, -1.0), (-1.0, 0.0)),
            };
            (Row { example: i, p, q }, Row { example: i, p: pi, q: qi })
        })
        .unzip()
}

fn solve_pattern(ds: &Dataset, pattern: Vec<Part>, opts: &MinNormOptions) -> Option<Candidate> {
    let n = ds.n();
    let (eq, ineq) = rows(&pattern);
    let qp = GramQp::new(ds.gram().matrix(), &eq, ds.y(), &ineq, opts.tol_feas, opts.tol_mult);
    let strategy = if n <= EXHAUSTIVE_MAX { Strategy::Exhaustive } else { Strategy::ActiveSet };
    let point = qp.solve(strategy)?;
    let c = &point.coeffs;
    let mut a_plus = DVector::zeros(n);
    let mut a_minus = DVector::zeros(n);
    for i in 0..n {
        a_plus[i] = -(c[i] * eq[i].p + c[n + i] * ineq[i].p);
        a_minus[i] = -(c[i] * eq[i].q + c[n + i] * ineq[i].q);
    }
    let w_plus = ds.x().tr_mul(&a_plus);
    let w_minus = ds.x().tr_mul(&a_minus);
    if original_residual(ds, &w_plus, &w_minus) > 1e-8 {
        return None;
    }
    Some(Candidate {
        pattern,
        objective: point.objective,
        w_plus,
        w_minus,
        delta: c.rows(0, n).iter().copied().collect(),
        mu: c.rows(n, n).iter().copied().collect(),
    })
}

/// `max_i |σ(w_⊕ᵀx_i) − σ(w_⊖ᵀx_i) − y_i| / (1 + |y_i|)`.
pub(crate) fn original_residual(ds: &Dataset, w_plus: &DVector<f64>, w_minus: &DVector<f64>) -> f64 {
    let bp = ds.x() * w_plus;
    let bm = ds.x() * w_minus;
    (0..ds.n()).map(|i| (relu(bp[i]) - relu(bm[i]) - ds.y()[i]).abs() / (1.0 + ds.y()[i].abs())).fold(0.0, f64::max)
}

fn candidates(ds: &Dataset, opts: &MinNormOptions) -> Result<Vec<Candidate>> {
    let n = ds.n();
    if n > opts.cap_two {
        return Err(Error::CapExceeded { size: n, cap: opts.cap_two });
    }
    Ok((0u64..(1u64 << n)).into_par_iter().filter_map(|mask| solve_pattern(ds, pattern(ds, mask), opts)).collect())
}

/// Min-norm two-neuron (`+`, `−`) interpolator by partition enumeration.
pub fn min_norm_two(ds: &Dataset, opts: &MinNormOptions) -> Result<MinNormSolution> {
    let cands = candidates(ds, opts)?;
    let best_obj = cands
        .iter()
        .map(|c| c.objective)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::NoCertificate("no partition is feasible for the original constraints".into()))?;
    let mut tied_cands: Vec<&Candidate> = cands.iter().filter(|c| tied(c.objective, best_obj, opts.tol_obj)).collect();
    tied_cands.sort_by(|a, b| a.pattern.cmp(&b.pattern));
    let best = tied_cands[0];
    let alternatives = tied_cands[1..].iter().map(|c| Certificate::Partition { pattern: c.pattern.clone() }).collect();

    let (eq, ineq) = rows(&best.pattern);
    let weights = vec![best.w_plus.clone(), best.w_minus.clone()];
    let kkt = kkt_recheck(ds.x(), &weights, &eq, ds.y().as_slice(), &ineq, &best.delta, &best.mu);
    Ok(MinNormSolution {
        objective: 0.5 * (best.w_plus.norm_squared() + best.w_minus.norm_squared()),
        weights,
        certificate: Certificate::Partition { pattern: best.pattern.clone() },
        alternatives,
        multipliers: Multipliers { equality: best.delta.clone(), inequality: best.mu.clone() },
        kkt_residual: kkt.residual(),
        kkt,
        solver: Solver::Enumeration,
    })
}

/// Certified objective of every partition, `None` where the restricted program
/// has no certified point feasible for the original constraints.
pub fn brute_force_partition_objectives(ds: &Dataset, opts: &MinNormOptions) -> Result<Vec<(Vec<Part>, Option<f64>)>> {
    let n = ds.n();
    if n > opts.cap_two {
        return Err(Error::CapExceeded { size: n, cap: opts.cap_two });
    }
    Ok((0u64..(1u64 << n))
        .map(|mask| {
            let p = pattern(ds, mask);
            let obj = solve_pattern(ds, p.clone(), opts).map(|c| c.objective);
            (p, obj)
        })
        .collect())
}
