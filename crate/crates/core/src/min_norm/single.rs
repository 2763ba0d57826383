use nalgebra::DVector;

use super::gram_qp::{GramQp, Row, Strategy};
use super::{kkt_recheck, linear_mni, tied, Certificate, MinNormOptions, MinNormSolution, Multipliers, Solver};
use crate::error::{Error, Result};
use crate::linalg::{principal, select_rows, spd_solve};
use crate::spectral_data::Dataset;

struct Candidate {
    objective: f64,
    support: Vec<usize>,
    zeroed: Vec<usize>,
    coeffs: DVector<f64>,
}

impl Candidate {
    fn certificate(&self) -> Certificate {
        Certificate::Subset { support: self.support.clone(), zeroed: self.zeroed.clone() }
    }
}

/// Min-norm single ReLU interpolator by enumerating the zeroed negatives.
pub fn min_norm_single(ds: &Dataset, opts: &MinNormOptions) -> Result<MinNormSolution> {
    let neg = ds.neg_idx();
    if neg.len() > opts.cap_single {
        if opts.fallback {
            return active_set_single(ds, opts);
        }
        return Err(Error::CapExceeded { size: neg.len(), cap: opts.cap_single });
    }
    let k = ds.gram().matrix();
    let y = ds.y();
    let scale = y.amax().max(1.0);
    let pos = ds.pos_idx();

    let mut best: Option<Candidate> = None;
    let mut ties: Vec<Certificate> = Vec::new();
    for mask in 0u64..(1u64 << neg.len()) {
        let zeroed: Vec<usize> = neg.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &j)| j).collect();
        let mut support: Vec<usize> = pos.iter().chain(&zeroed).copied().collect();
        support.sort_unstable();
        let rhs = DVector::from_fn(support.len(), |a, _| if y[support[a]] > 0.0 { y[support[a]] } else { 0.0 });
        let Some(c) = spd_solve(&principal(k, &support), &rhs, 1e-13) else {
            continue;
        };
        // μ_j = −c_j on zeroed negatives
        if support.iter().zip(c.iter()).any(|(&i, &ci)| y[i] < 0.0 && -ci < -opts.tol_mult) {
            continue;
        }
        let feasible = neg.iter().filter(|j| !zeroed.contains(j)).all(|&j| {
            let v: f64 = support.iter().zip(c.iter()).map(|(&i, &ci)| k[(j, i)] * ci).sum();
            v <= opts.tol_feas * scale
        });
        if !feasible {
            continue;
        }
        let objective = 0.5 * c.dot(&(principal(k, &support) * &c));
        let cand = Candidate { objective, support, zeroed, coeffs: c };
        match &best {
            Some(b) if tied(b.objective, objective, opts.tol_obj) => {
                if cand.certificate() < b.certificate() {
                    ties.push(b.certificate());
                    best = Some(cand);
                } else {
                    ties.push(cand.certificate());
                }
            }
            Some(b) if b.objective <= objective => {}
            _ => {
                ties.clear();
                best = Some(cand);
            }
        }
    }
    let best = best.ok_or_else(|| Error::NoCertificate("no subset passed the KKT checks".into()))?;
    ties.sort();

    let rhs = DVector::from_fn(best.support.len(), |a, _| y[best.support[a]].max(0.0));
    let w = linear_mni(&select_rows(ds.x(), &best.support), &rhs)?;
    let mut eq = vec![0.0; ds.n()];
    let mut ineq = vec![0.0; ds.n()];
    for (&i, &ci) in best.support.iter().zip(best.coeffs.iter()) {
        if y[i] > 0.0 {
            eq[i] = -ci;
        } else {
            ineq[i] = -ci;
        }
    }
    finish(
        ds,
        w,
        best.objective,
        best.certificate(),
        ties,
        Multipliers { equality: eq, inequality: ineq },
        Solver::Enumeration,
    )
}

/// Same program through the active-set dual solver; used past the enumeration cap.
fn active_set_single(ds: &Dataset, opts: &MinNormOptions) -> Result<MinNormSolution> {
    let y = ds.y();
    let eq: Vec<Row> = ds.pos_idx().into_iter().map(Row::plus).collect();
    let ineq: Vec<Row> = ds.neg_idx().into_iter().map(Row::plus).collect();
    let b = DVector::from_iterator(eq.len(), eq.iter().map(|r| y[r.example]));
    let qp = GramQp::new(ds.gram().matrix(), &eq, &b, &ineq, opts.tol_feas, opts.tol_mult);
    let point = qp
        .solve(Strategy::ActiveSet)
        .ok_or_else(|| Error::NoCertificate("active-set solver did not certify a point".into()))?;
    let n = ds.n();
    let mut mult = Multipliers { equality: vec![0.0; n], inequality: vec![0.0; n] };
    let mut coef = DVector::zeros(n);
    for (a, r) in eq.iter().chain(&ineq).enumerate() {
        coef[r.example] = point.coeffs[a];
        if a < eq.len() {
            mult.equality[r.example] = point.coeffs[a];
        } else {
            mult.inequality[r.example] = point.coeffs[a];
        }
    }
    let w = -ds.x().tr_mul(&coef);
    let beta = ds.x() * &w;
    let tight = opts.tol_feas * y.amax().max(1.0);
    let zeroed: Vec<usize> = ds.neg_idx().into_iter().filter(|&j| beta[j].abs() <= tight).collect();
    let mut support: Vec<usize> = ds.pos_idx().into_iter().chain(zeroed.iter().copied()).collect();
    support.sort_unstable();
    finish(ds, w, point.objective, Certificate::Subset { support, zeroed }, Vec::new(), mult, Solver::Enumeration)
}

fn finish(
    ds: &Dataset,
    w: DVector<f64>,
    objective: f64,
    certificate: Certificate,
    alternatives: Vec<Certificate>,
    multipliers: Multipliers,
    solver: Solver,
) -> Result<MinNormSolution> {
    let kkt = single_kkt(ds, &w, &multipliers);
    Ok(MinNormSolution {
        weights: vec![w],
        objective,
        certificate,
        alternatives,
        multipliers,
        kkt_residual: kkt.residual(),
        kkt,
        solver,
    })
}

pub(crate) fn single_kkt(ds: &Dataset, w: &DVector<f64>, mult: &Multipliers) -> super::KktReport {
    let pos = ds.pos_idx();
    let neg = ds.neg_idx();
    let eq: Vec<Row> = pos.iter().copied().map(Row::plus).collect();
    let ineq: Vec<Row> = neg.iter().copied().map(Row::plus).collect();
    let b: Vec<f64> = pos.iter().map(|&i| ds.y()[i]).collect();
    let em: Vec<f64> = pos.iter().map(|&i| mult.equality[i]).collect();
    let im: Vec<f64> = neg.iter().map(|&j| mult.inequality[j]).collect();
    kkt_recheck(ds.x(), std::slice::from_ref(w), &eq, &b, &ineq, &em, &im)
}
