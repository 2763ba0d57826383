use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gd_engine::{Snapshot, Trajectory};
use crate::linalg::min_or;
use crate::relu_model::{relu, Sign};
use crate::spectral_data::{Constants, Dataset};

/// Value of one condition at one iterate. A nonnegative margin means the
/// condition holds, except for strict positivity where the margin must be > 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionValue {
    pub holds: bool,
    pub margin: f64,
}

impl ConditionValue {
    fn strict(margin: f64) -> Self {
        Self { holds: margin > 0.0, margin }
    }

    fn weak(margin: f64) -> Self {
        Self { holds: margin >= 0.0, margin }
    }

    fn and(self, other: Self) -> Self {
        Self { holds: self.holds && other.holds, margin: self.margin.min(other.margin) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub t: usize,
    pub values: Vec<ConditionValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionLedger {
    /// Condition labels, `"a"`, `"b"`, ...
    pub conditions: Vec<String>,
    pub rows: Vec<LedgerRow>,
}

impl ConditionLedger {
    fn new(count: usize) -> Self {
        let conditions = (0..count).map(|i| char::from(b'a' + i as u8).to_string()).collect();
        Self { conditions, rows: Vec::new() }
    }

    pub fn index_of(&self, condition: &str) -> Option<usize> {
        self.conditions.iter().position(|c| c == condition)
    }

    pub fn all_hold_at(&self, t: usize) -> Option<bool> {
        self.rows.iter().find(|r| r.t == t).map(|r| r.values.iter().all(|v| v.holds))
    }

    /// Whether every condition holds on every logged iterate with `t ≥ from`.
    pub fn all_hold_from(&self, from: usize) -> bool {
        self.rows.iter().filter(|r| r.t >= from).all(|r| r.values.iter().all(|v| v.holds))
    }

    /// Iterates with `t ≥ from` at which `condition` fails.
    pub fn violations(&self, condition: &str, from: usize) -> Vec<usize> {
        let Some(c) = self.index_of(condition) else {
            return Vec::new();
        };
        self.rows.iter().filter(|r| r.t >= from && !r.values[c].holds).map(|r| r.t).collect()
    }

    /// First iterate at or after `from` where some condition fails.
    pub fn first_violation(&self, from: usize) -> Option<(usize, String)> {
        self.rows
            .iter()
            .filter(|r| r.t >= from)
            .find_map(|r| r.values.iter().position(|v| !v.holds).map(|c| (r.t, self.conditions[c].clone())))
    }

    /// `t,condition,holds,margin`, one row per (iterate, condition).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "condition", "holds", "margin"])?;
        for row in &self.rows {
            let t = row.t.to_string();
            for (name, v) in self.conditions.iter().zip(&row.values) {
                wtr.write_record([t.as_str(), name, if v.holds { "1" } else { "0" }, &v.margin.to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Shared thresholds of the three condition sets.
struct Thresholds {
    alpha_lo: f64,
    alpha_hi: f64,
    alpha_norm: f64,
    c_y: f64,
}

impl Thresholds {
    fn new(ds: &Dataset, c: &Constants) -> Self {
        let l1 = ds.l1();
        Self {
            alpha_lo: -3.0 * ds.y_max() / (c.c_g * l1),
            alpha_hi: -ds.y_min() / (c.c_alpha * l1),
            alpha_norm: c.c_alpha * (ds.n() as f64).sqrt() * ds.y_max() / l1,
            c_y: c.c_y,
        }
    }

    fn sandwich(&self, alpha: &DVector<f64>, idx: &[usize]) -> ConditionValue {
        ConditionValue::weak(min_or(
            idx.iter().map(|&j| (alpha[j] - self.alpha_lo).min(self.alpha_hi - alpha[j])),
            f64::INFINITY,
        ))
    }

    fn alpha_norm(&self, alpha: &DVector<f64>) -> ConditionValue {
        ConditionValue::weak(self.alpha_norm - alpha.norm())
    }

    /// `‖β_S − target_S‖ ≤ C_y‖y_S‖`.
    fn residual(&self, beta: &DVector<f64>, y: &DVector<f64>, sign: f64, idx: &[usize]) -> ConditionValue {
        let res: f64 = idx.iter().map(|&i| (beta[i] - sign * y[i]).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = idx.iter().map(|&i| y[i] * y[i]).sum::<f64>().sqrt();
        ConditionValue::weak(self.c_y * scale - res)
    }
}

fn positive_on(beta: &DVector<f64>, idx: &[usize]) -> ConditionValue {
    ConditionValue::strict(min_or(idx.iter().map(|&i| beta[i]), f64::INFINITY))
}

fn nonpositive_on(beta: &DVector<f64>, idx: &[usize]) -> ConditionValue {
    ConditionValue::weak(min_or(idx.iter().map(|&j| -beta[j]), f64::INFINITY))
}

fn require_signs(traj: &Trajectory, expected: &[Sign], what: &str) -> Result<()> {
    if traj.signs != expected {
        return Err(Error::InvalidArgument(format!("{what} expects signs {expected:?}, got {:?}", traj.signs)));
    }
    Ok(())
}

fn ledger_over<F>(traj: &Trajectory, count: usize, eval: F) -> ConditionLedger
where
    F: Fn(&Snapshot) -> Vec<ConditionValue>,
{
    let mut ledger = ConditionLedger::new(count);
    ledger.rows = traj.snapshots.iter().map(|s| LedgerRow { t: s.t, values: eval(s) }).collect();
    ledger
}

/// Six conditions (a)–(f) for a single positive neuron.
pub fn check_conditions_single(traj: &Trajectory, ds: &Dataset, constants: &Constants) -> Result<ConditionLedger> {
    require_signs(traj, &[Sign::Plus], "single-neuron ledger")?;
    let th = Thresholds::new(ds, constants);
    let (pos, neg) = (ds.pos_idx(), ds.neg_idx());
    Ok(ledger_over(traj, 6, |s| {
        let (beta, alpha) = (&s.beta[0], &s.alpha[0]);
        let f_gap = (0..ds.n())
            .map(|i| {
                let target = if ds.y()[i] > 0.0 { beta[i] } else { 0.0 };
                (relu(beta[i]) - target).abs()
            })
            .fold(0.0, f64::max);
        vec![
            positive_on(beta, &pos),
            th.sandwich(alpha, &neg),
            th.residual(beta, ds.y(), 1.0, &pos),
            th.alpha_norm(alpha),
            nonpositive_on(beta, &neg),
            ConditionValue { holds: f_gap == 0.0, margin: -f_gap },
        ]
    }))
}

/// Eight conditions (a)–(h) for the pair (`+`, `−`).
pub fn check_conditions_two(traj: &Trajectory, ds: &Dataset, constants: &Constants) -> Result<ConditionLedger> {
    require_signs(traj, &[Sign::Plus, Sign::Minus], "two-neuron ledger")?;
    let th = Thresholds::new(ds, constants);
    let (pos, neg) = (ds.pos_idx(), ds.neg_idx());
    Ok(ledger_over(traj, 8, |s| {
        let (bp, bm) = (&s.beta[0], &s.beta[1]);
        let (ap, am) = (&s.alpha[0], &s.alpha[1]);
        vec![
            positive_on(bp, &pos),
            positive_on(bm, &neg),
            th.sandwich(ap, &neg),
            th.sandwich(am, &pos),
            th.residual(bp, ds.y(), 1.0, &pos).and(th.residual(bm, ds.y(), -1.0, &neg)),
            th.alpha_norm(ap).and(th.alpha_norm(am)),
            nonpositive_on(bp, &neg),
            nonpositive_on(bm, &pos),
        ]
    }))
}

/// Five conditions (a)–(e) for `m` neurons trained on the disjoint sets
/// `S_k = {i : assignment[i] = k}`.
pub fn check_conditions_multi(
    traj: &Trajectory,
    ds: &Dataset,
    assignment: &[usize],
    constants: &Constants,
) -> Result<ConditionLedger> {
    let m = traj.m();
    if assignment.len() != ds.n() {
        return Err(Error::DimensionMismatch { expected: ds.n(), found: assignment.len() });
    }
    if let Some(&k) = assignment.iter().find(|&&k| k >= m) {
        return Err(Error::InvalidArgument(format!("assignment refers to neuron {k} of {m}")));
    }
    let th = Thresholds::new(ds, constants);
    let sets: Vec<Vec<usize>> = (0..m).map(|k| (0..ds.n()).filter(|&i| assignment[i] == k).collect()).collect();
    let off: Vec<Vec<usize>> = (0..m).map(|k| (0..ds.n()).filter(|&i| assignment[i] != k).collect()).collect();
    let signs = traj.signs.clone();
    Ok(ledger_over(traj, 5, |s| {
        let fold = |f: &dyn Fn(usize) -> ConditionValue| {
            (0..m).map(f).fold(ConditionValue { holds: true, margin: f64::INFINITY }, ConditionValue::and)
        };
        vec![
            fold(&|k| positive_on(&s.beta[k], &sets[k])),
            fold(&|k| th.sandwich(&s.alpha[k], &off[k])),
            fold(&|k| th.residual(&s.beta[k], ds.y(), signs[k].value(), &sets[k])),
            fold(&|k| th.alpha_norm(&s.alpha[k])),
            fold(&|k| nonpositive_on(&s.beta[k], &off[k])),
        ]
    }))
}

/// Iterates `t` at which every condition holds but some neuron's active set
/// at `t + 1` differs from the one at `t`.
pub fn freezing_violations(traj: &Trajectory, ledger: &ConditionLedger) -> Vec<usize> {
    traj.snapshots
        .windows(2)
        .filter(|w| w[1].t == w[0].t + 1 && ledger.all_hold_at(w[0].t) == Some(true) && w[0].mask != w[1].mask)
        .map(|w| w[0].t)
        .collect()
}
