//! Minimum-norm QP with equality and homogeneous inequality rows, solved in
//! Gram coordinates.
//!
//! Every constraint row has the form `p·x_i` acting on the first block and
//! `q·x_i` on the second, so the Gram matrix of the rows is
//! `H_ab = (p_a p_b + q_a q_b) K_{i_a i_b}` with `K = XXᵀ`. Writing the
//! optimum as `z = −Rᵀc`, the coefficients `c` are exactly the Lagrange
//! multipliers and solve `min ½cᵀHc + bᵀc_eq` subject to `c_ineq ≥ 0`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{principal, spd_solve};

const PIVOT_RTOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Row {
    pub example: usize,
    pub p: f64,
    pub q: f64,
}

impl Row {
    pub fn plus(example: usize) -> Self {
        Self { example, p: 1.0, q: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Strategy {
    Exhaustive,
    ActiveSet,
}

#[derive(Clone, Debug)]
pub(crate) struct GramQp {
    h: DMatrix<f64>,
    b: DVector<f64>,
    n_eq: usize,
    tol_feas: f64,
    tol_mult: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct QpPoint {
    /// Multipliers for all rows, equalities first.
    pub coeffs: DVector<f64>,
    pub objective: f64,
}

impl GramQp {
    pub fn new(k: &DMatrix<f64>, eq: &[Row], b: &DVector<f64>, ineq: &[Row], tol_feas: f64, tol_mult: f64) -> Self {
        let rows: Vec<Row> = eq.iter().chain(ineq).copied().collect();
        let h = DMatrix::from_fn(rows.len(), rows.len(), |a, c| {
            let (ra, rc) = (rows[a], rows[c]);
            (ra.p * rc.p + ra.q * rc.q) * k[(ra.example, rc.example)]
        });
        Self { h, b: b.clone(), n_eq: eq.len(), tol_feas, tol_mult }
    }

    fn n_ineq(&self) -> usize {
        self.h.nrows() - self.n_eq
    }

    /// Multipliers with the given inequality rows active and the rest zero.
    fn solve_on(&self, active: &[usize]) -> Option<DVector<f64>> {
        let idx: Vec<usize> = (0..self.n_eq).chain(active.iter().map(|j| self.n_eq + j)).collect();
        let rhs = DVector::from_fn(idx.len(), |a, _| if a < self.n_eq { -self.b[a] } else { 0.0 });
        let sub = spd_solve(&principal(&self.h, &idx), &rhs, PIVOT_RTOL)?;
        let mut c = DVector::zeros(self.h.nrows());
        for (a, &i) in idx.iter().enumerate() {
            c[i] = sub[a];
        }
        Some(c)
    }

    fn feas_scale(&self) -> f64 {
        self.b.amax().max(1.0)
    }

    /// Primal feasibility of the inequality rows and multiplier signs.
    fn certified(&self, c: &DVector<f64>) -> bool {
        let rz = -(&self.h * c);
        let tol = self.tol_feas * self.feas_scale();
        let eq_ok = (0..self.n_eq).all(|a| (rz[a] - self.b[a]).abs() <= tol);
        let ineq_ok = (self.n_eq..self.h.nrows()).all(|j| rz[j] <= tol && c[j] >= -self.tol_mult);
        eq_ok && ineq_ok
    }

    fn point(&self, c: DVector<f64>) -> QpPoint {
        let objective = 0.5 * c.dot(&(&self.h * &c));
        QpPoint { coeffs: c, objective }
    }

    /// First certified active set, scanning subsets by size and then
    /// lexicographically.
    pub fn exhaustive(&self) -> Option<QpPoint> {
        let m = self.n_ineq();
        for size in 0..=m {
            let mut subset: Vec<usize> = (0..size).collect();
            loop {
                if let Some(c) = self.solve_on(&subset) {
                    if self.certified(&c) {
                        return Some(self.point(c));
                    }
                }
                if !next_combination(&mut subset, m) {
                    break;
                }
            }
        }
        None
    }

    /// Lawson–Hanson style primal active-set method on the bound-constrained dual.
    pub fn active_set(&self) -> Option<QpPoint> {
        let r = self.h.nrows();
        let m = self.n_ineq();
        let mut passive: Vec<usize> = Vec::new();
        let mut c = self.solve_on(&passive)?;
        let tol = self.tol_feas * self.feas_scale();
        for _ in 0..(10 * (m + 1)) {
            let grad = &self.h * &c + DVector::from_fn(r, |a, _| if a < self.n_eq { self.b[a] } else { 0.0 });
            let candidate = (0..m)
                .filter(|j| !passive.contains(j))
                .map(|j| (j, grad[self.n_eq + j]))
                .filter(|(_, g)| *g < -tol)
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let Some((enter, _)) = candidate else {
                return self.certified(&c).then(|| self.point(c));
            };
            passive.push(enter);
            passive.sort_unstable();
            loop {
                let s = self.solve_on(&passive)?;
                let blocking: Vec<usize> = passive.iter().copied().filter(|&j| s[self.n_eq + j] <= 0.0).collect();
                if blocking.is_empty() {
                    c = s;
                    break;
                }
                let (step, first) = blocking
                    .iter()
                    .map(|&j| {
                        let (cj, sj) = (c[self.n_eq + j], s[self.n_eq + j]);
                        (if cj - sj > 0.0 { cj / (cj - sj) } else { 0.0 }, j)
                    })
                    .fold((1.0_f64, blocking[0]), |a, b| if b.0 < a.0 { b } else { a });
                c += (&s - &c) * step;
                let floor = 1e-14 * c.amax().max(f64::MIN_POSITIVE);
                let before = passive.len();
                passive.retain(|&j| c[self.n_eq + j] > floor);
                if passive.len() == before {
                    passive.retain(|&j| j != first);
                }
                for j in 0..m {
                    if !passive.contains(&j) {
                        c[self.n_eq + j] = 0.0;
                    }
                }
            }
        }
        None
    }

    pub fn solve(&self, strategy: Strategy) -> Option<QpPoint> {
        match strategy {
            Strategy::Exhaustive => self.exhaustive(),
            Strategy::ActiveSet => {
                self.active_set().or_else(|| if self.n_ineq() <= 16 { self.exhaustive() } else { None })
            }
        }
    }
}

/// Advance `subset` to the next `k`-combination of `0..n` in lexicographic order.
pub(crate) fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations_enumerate_all() {
        let mut s = vec![0, 1];
        let mut seen = vec![s.clone()];
        while next_combination(&mut s, 4) {
            seen.push(s.clone());
        }
        assert_eq!(seen.len(), 6);
        assert_eq!(seen.last().unwrap(), &vec![2, 3]);
    }

    #[test]
    fn hand_instance_both_strategies() {
        // x1 = [1,0] with y = 1, x2 = [1,1] constrained to w·x2 <= 0.
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]);
        let qp = GramQp::new(&k, &[Row::plus(0)], &DVector::from_element(1, 1.0), &[Row::plus(1)], 1e-9, 1e-9);
        for strat in [Strategy::Exhaustive, Strategy::ActiveSet] {
            let p = qp.solve(strat).unwrap();
            assert!((p.coeffs[0] + 2.0).abs() < 1e-12);
            assert!((p.coeffs[1] - 1.0).abs() < 1e-12);
            assert!((p.objective - 1.0).abs() < 1e-12);
        }
    }
}
