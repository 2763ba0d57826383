use std::io::{Read, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::run::{Snapshot, StopReason, Trajectory};
use crate::error::{Error, Result};
use crate::relu_model::{ActivationMask, ModelState, Sign};
use crate::spectral_data::Dataset;

const HEADER: [&str; 7] = ["t", "neuron", "example", "beta", "alpha", "active", "risk"];

/// Per-run summary written next to the trajectory CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub t0: Option<usize>,
    pub final_risk: f64,
    pub iters: usize,
    pub eta: f64,
    pub stop_reason: StopReason,
    pub signs: Vec<Sign>,
}

impl RunSummary {
    pub fn new(traj: &Trajectory, t0: Option<usize>) -> Self {
        Self {
            t0,
            final_risk: traj.final_risk(),
            iters: traj.iters(),
            eta: traj.eta,
            stop_reason: traj.stop_reason,
            signs: traj.signs.clone(),
        }
    }
}

/// One row per (t, neuron, example), risk repeated on every row.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(HEADER)?;
    for s in &traj.snapshots {
        let risk = s.risk.to_string();
        let t = s.t.to_string();
        for k in 0..s.beta.len() {
            let neuron = k.to_string();
            for i in 0..s.beta[k].len() {
                wtr.write_record([
                    t.as_str(),
                    neuron.as_str(),
                    &i.to_string(),
                    &s.beta[k][i].to_string(),
                    &s.alpha[k][i].to_string(),
                    if s.mask.get(k, i) { "1" } else { "0" },
                    risk.as_str(),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

/// Rebuild a trajectory from its CSV form.
///
/// Weights are not stored, so the initial and final states are reconstructed
/// in the row span as `Xᵀα`.
pub fn read_trajectory_csv<R: Read>(r: R, ds: &Dataset, signs: &[Sign], eta: f64) -> Result<Trajectory> {
    let n = ds.n();
    let m = signs.len();
    if m == 0 {
        return Err(schema("no neurons declared"));
    }
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(|e| schema(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(schema(format!("unexpected header {:?}", header)));
    }
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut rows: Vec<(usize, usize, usize, f64, f64, bool, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| schema(e.to_string()))?;
        let field = |j: usize| rec.get(j).ok_or_else(|| schema("short record"));
        let int = |j: usize| -> Result<usize> {
            field(j)?.parse().map_err(|_| schema(format!("bad integer in column {}", HEADER[j])))
        };
        let real = |j: usize| -> Result<f64> {
            field(j)?.parse().map_err(|_| schema(format!("bad number in column {}", HEADER[j])))
        };
        let active = match field(5)? {
            "1" => true,
            "0" => false,
            other => return Err(schema(format!("bad active flag {other:?}"))),
        };
        rows.push((int(0)?, int(1)?, int(2)?, real(3)?, real(4)?, active, real(6)?));
    }
    if rows.is_empty() || rows.len() % (m * n) != 0 {
        return Err(schema(format!("{} rows is not a whole number of {}x{} snapshots", rows.len(), m, n)));
    }
    for block in rows.chunks(m * n) {
        let t = block[0].0;
        let mut beta = vec![DVector::zeros(n); m];
        let mut alpha = vec![DVector::zeros(n); m];
        let mut mask = vec![vec![false; n]; m];
        for (idx, &(tt, k, i, b, a, act, risk)) in block.iter().enumerate() {
            if tt != t || k != idx / n || i != idx % n || risk.to_bits() != block[0].6.to_bits() {
                return Err(schema(format!("snapshot at t = {t} is malformed")));
            }
            beta[k][i] = b;
            alpha[k][i] = a;
            mask[k][i] = act;
        }
        if snapshots.last().is_some_and(|s| s.t >= t) {
            return Err(schema("snapshots are not increasing in t"));
        }
        snapshots.push(Snapshot { t, beta, alpha, mask: ActivationMask::from_rows(mask), risk: block[0].6 });
    }
    let stride = if snapshots.windows(2).all(|w| w[1].t == w[0].t + 1) { 1 } else { 0 };
    let state_from = |s: &Snapshot| ModelState {
        weights: s.alpha.iter().map(|a| ds.x().tr_mul(a)).collect(),
        signs: signs.to_vec(),
        iter: s.t,
    };
    let initial = state_from(&snapshots[0]);
    let final_state = state_from(snapshots.last().expect("non-empty"));
    let mut traj = Trajectory {
        eta,
        stride,
        signs: signs.to_vec(),
        snapshots,
        initial,
        final_state,
        stop_reason: StopReason::MaxIters,
        max_consistency_residual: 0.0,
    };
    traj.max_consistency_residual = super::primal_dual_residual(&traj, ds);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gd_engine::{dual_update_check, init_single, run, StopRule};
    use crate::spectral_data::{sample_dataset, LabelSpec, Spectrum, ZDist};

    #[test]
    fn csv_roundtrip_is_exact() {
        let ds = sample_dataset(&Spectrum::isotropic(100), 6, &LabelSpec::uniform_mixed(), ZDist::Gaussian, 2).unwrap();
        let s = init_single(&ds, &DVector::repeat(6, 0.003)).unwrap();
        let eta = 0.5 / ds.gram().mu_max();
        let traj = run(&s, &ds, eta, &StopRule::default_for(&ds, eta)).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let back = read_trajectory_csv(buf.as_slice(), &ds, &traj.signs, eta).unwrap();
        assert_eq!(back.snapshots, traj.snapshots);
        assert!(dual_update_check(&back, &ds).unwrap().is_empty());
        let diff = (&back.final_state.weights[0] - &traj.final_state.weights[0]).norm();
        assert!(diff <= 1e-10 * traj.final_state.weights[0].norm());

        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() - 7];
        assert!(matches!(read_trajectory_csv(cut.as_bytes(), &ds, &traj.signs, eta), Err(Error::Schema(_))));
        let lines: Vec<&str> = text.lines().collect();
        let dropped = lines[..lines.len() - 1].join("\n");
        assert!(matches!(read_trajectory_csv(dropped.as_bytes(), &ds, &traj.signs, eta), Err(Error::Schema(_))));
    }
}
